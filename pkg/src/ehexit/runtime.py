"""Online exit selection with tabular Q-learning.

Two tables: one picks the exit from (stored energy, charging power), the other
decides at an exit whether to continue to the next one from (result entropy,
stored energy).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import substream
from .ehsim import DecisionContext, ExitSelector, GreedyStaticSelector, Scenario, SimReport, simulate
from .errors import ConfigError, InputError
from .traces import EventStream

STOP, CONTINUE = 0, 1


@dataclass(frozen=True)
class GridDim:
    name: str
    lo: float
    step: float
    bins: int

    def __post_init__(self):
        if self.step <= 0 or self.bins < 1:
            raise ConfigError(f"grid {self.name}: step and bin count must be positive")

    def index(self, v: float) -> int:
        """Floor binning, clamped to the edge bins."""
        if not math.isfinite(v):
            raise InputError(f"{self.name}: non-finite value {v}")
        i = math.floor((v - self.lo) / self.step + 1e-12)
        return min(max(i, 0), self.bins - 1)


class QTable:
    def __init__(self, dims, actions, alpha=0.1, gamma=0.9, values=None):
        self.dims = tuple(dims)
        self.actions = list(actions)
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        shape = tuple(d.bins for d in self.dims) + (len(self.actions),)
        self.values = np.zeros(shape) if values is None else np.array(values, dtype=float).reshape(shape)

    def state(self, *vals) -> tuple[int, ...]:
        return tuple(d.index(v) for d, v in zip(self.dims, vals))

    def best(self, s, mask=None) -> int:
        """Argmax over allowed actions; ties go to the lowest index."""
        row = self.values[s]
        if mask is None:
            return int(np.argmax(row))
        idx = np.flatnonzero(mask)
        if len(idx) == 0:
            raise InputError("no admissible action")
        return int(idx[np.argmax(row[idx])])

    def value(self, s, mask=None) -> float:
        row = self.values[s]
        if mask is not None:
            if not np.any(mask):
                return 0.0
            row = row[np.asarray(mask, dtype=bool)]
        return float(row.max())

    def update(self, s, a: int, r: float, next_value: float) -> float:
        """Q(s,a) += alpha * (r + gamma * next_value - Q(s,a)); returns the new entry."""
        q = self.values[s + (a,)]
        new = q + self.alpha * (r + self.gamma * next_value - q)
        if not math.isfinite(new):
            raise InputError("Q update produced a non-finite value")
        self.values[s + (a,)] = new
        return float(new)

    def to_dict(self) -> dict:
        return {"dims": [asdict(d) for d in self.dims], "actions": self.actions,
                "alpha": self.alpha, "gamma": self.gamma,
                "shape": list(self.values.shape), "values": self.values.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QTable":
        return cls([GridDim(**g) for g in d["dims"]], d["actions"], d["alpha"], d["gamma"], d["values"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "QTable":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def discretize(table: QTable, energy: float, efficiency: float) -> tuple[int, int]:
    if energy < 0 or efficiency < 0:
        raise InputError("energy and charging power must be nonnegative")
    return table.state(energy, efficiency)


def q_update(table: QTable, s, a: int, r: float, s_next=None, next_mask=None) -> float:
    """One tabular Q-learning step; ``s_next`` None means a terminal transition."""
    nv = 0.0 if s_next is None else table.value(s_next, next_mask)
    return table.update(s, a, r, nv)


def select_exit(table: QTable, s, affordable, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over affordable exits; one uniform draw is always consumed."""
    mask = np.asarray(affordable, dtype=bool)
    ok = np.flatnonzero(mask)
    if len(ok) == 0:
        raise InputError("no affordable exit")
    if rng.random() < epsilon:
        return int(ok[rng.integers(len(ok))])
    return table.best(s, mask)


def incremental_decision(table: QTable, entropy_bin: int, energy_bin: int, epsilon: float,
                         rng: np.random.Generator, has_next: bool = True, affordable: bool = True) -> int:
    if not (has_next and affordable):
        return STOP
    return select_exit(table, (entropy_bin, energy_bin), [True, True], epsilon, rng)


@dataclass(frozen=True)
class RuntimeConfig:
    energy_step: float | None = None      # default capacity / 20
    power_step: float | None = None       # default max trace power / 10
    entropy_bins: int = 8
    num_classes: int = 10
    epsilon: float = 0.2
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.01
    alpha: float = 0.1
    gamma: float = 0.9
    train_passes: int = 30
    beta: float = 0.0
    entropy_threshold: float | None = None  # default ln(num_classes) / 2

    @property
    def threshold(self) -> float:
        return math.log(self.num_classes) / 2 if self.entropy_threshold is None else self.entropy_threshold


def make_tables(scenario: Scenario, cfg: RuntimeConfig) -> tuple[QTable, QTable]:
    cap = scenario.store.capacity
    e_step = cfg.energy_step or cap / 20
    pmax = float(scenario.trace.power.max()) * scenario.store.efficiency
    p_step = cfg.power_step or (pmax / 10 if pmax > 0 else 1.0)
    e_dim = GridDim("energy_mj", 0.0, e_step, int(math.floor(cap / e_step + 1e-9)) + 1)
    p_dim = GridDim("power_mw", 0.0, p_step, int(math.floor(pmax / p_step + 1e-9)) + 1)
    h_max = math.log(cfg.num_classes)
    h_dim = GridDim("entropy_nats", 0.0, h_max / cfg.entropy_bins, cfg.entropy_bins)
    exits = QTable((e_dim, p_dim), list(range(len(scenario.profiles))), cfg.alpha, cfg.gamma)
    cont = QTable((h_dim, e_dim), ["stop", "continue"], cfg.alpha, cfg.gamma)
    return exits, cont


class QLearningSelector(ExitSelector):
    """Exit selection (and optionally incremental inference) by Q-learning.

    Every event is one step for table 1. A processed event earns the accuracy
    of its exit; a missed event earns 0 and has no action, so its step only
    discounts the bootstrap: a transition followed by m missed events is closed
    at the next decision with target r + gamma^(m+1) * max Q(s'). The end of a
    pass truncates rather than terminates the task, so the last open transition
    is dropped instead of being closed with no future value. Continue/stop decisions are
    one-step: reward is the accuracy of the final exit minus
    beta * extra energy / capacity.
    """

    def __init__(self, exits: QTable, cont: QTable | None, cfg: RuntimeConfig, rng: np.random.Generator,
                 learn: bool = True, epsilon: float | None = None):
        self.exits = exits
        self.cont = cont
        self.cfg = cfg
        self.rng = rng
        self.learn = learn
        self.epsilon = cfg.epsilon if epsilon is None else epsilon
        self.name = "q_learning+incremental" if cont is not None else "q_learning"
        self._pending = None  # (state, action, reward or None)
        self._skipped = 0     # missed events since the pending decision
        self._decisions = []  # (state2, action, energy spent after this decision)

    def _close(self, next_state=None, next_mask=None):
        if self._pending is None:
            return
        s, a, r = self._pending
        self._pending = None
        if r is None or not self.learn:
            return
        nv = 0.0
        if next_state is not None:
            nv = self.exits.gamma ** self._skipped * self.exits.value(next_state, next_mask)
        self.exits.update(s, a, r, nv)

    def select(self, ctx: DecisionContext):
        mask = ctx.affordable
        if not np.any(mask):
            return None  # reported back through on_missed, which decays epsilon
        s = discretize(self.exits, ctx.level, ctx.charging_power)
        self._close(s, mask)
        a = select_exit(self.exits, s, mask, self.epsilon, self.rng)
        self._decay()
        self._pending = (s, a, None)
        self._skipped = 0
        self._decisions = []
        return a

    def _decay(self):
        if self.learn:  # epsilon decays once per event, missed or not
            self.epsilon = max(self.cfg.epsilon_min, self.epsilon * self.cfg.epsilon_decay)

    def on_missed(self, ctx):
        self._skipped += 1
        self._decay()

    def continue_inference(self, ctx, current_exit, entropy):
        if self.cont is None:
            return False
        h_dim = self.cont.dims[0]
        hb = h_dim.bins - 1 if entropy is None else h_dim.index(entropy)
        eb = self.cont.dims[1].index(ctx.level)
        a = incremental_decision(self.cont, hb, eb, self.epsilon, self.rng)
        inc = float(ctx.costs[current_exit + 1] - ctx.costs[current_exit])
        self._decisions.append(((hb, eb), a, inc if a == CONTINUE else 0.0))
        return a == CONTINUE

    def on_outcome(self, ctx, first_exit, final_exit, accuracy):
        if self._pending is not None:
            s, a, _ = self._pending
            self._pending = (s, a, accuracy)
        if self.cont is not None and self.learn:
            extra = 0.0
            for s2, a2, e in reversed(self._decisions):
                extra += e
                r2 = accuracy - self.cfg.beta * extra / ctx.capacity
                q_update(self.cont, s2, a2, r2, None)
        self._decisions = []

    def finish(self):
        self._pending = None
        self._skipped = 0


@dataclass
class OnlineResult:
    report: SimReport
    tables: dict = field(default_factory=dict)
    curve: list = field(default_factory=list)


MODES = ("static_lut", "q_learning", "q_learning+incremental")


def run_online(scenario: Scenario, policy_mode: str, cfg: RuntimeConfig = RuntimeConfig(),
               seed: int = 0, mode: str = "expected", outcomes=None,
               tables: tuple[QTable, QTable] | None = None) -> OnlineResult:
    """Learn over ``cfg.train_passes`` passes, then report a frozen greedy pass.

    Training passes replay the scenario's trace with freshly drawn event
    streams (same count), so the evaluation pass on the scenario's own events
    is not memorized. The reported pass uses epsilon = 0 and no updates.
    """
    if policy_mode not in MODES:
        raise ConfigError(f"unknown runtime mode {policy_mode!r}")
    if policy_mode == "static_lut":
        return OnlineResult(simulate(scenario, GreedyStaticSelector(), mode, seed, outcomes))
    rng = substream(seed, "runtime")
    exits, cont = tables if tables is not None else make_tables(scenario, cfg)
    if policy_mode == "q_learning":
        cont = None
    sel = QLearningSelector(exits, cont, cfg, rng)
    curve = []
    n = len(scenario.events)
    for _ in range(cfg.train_passes):
        ev = EventStream.generate(n, rng, scenario.trace.start, scenario.trace.end)
        rep = simulate(replace(scenario, events=ev), sel, mode, int(rng.integers(2 ** 31)),
                       outcomes=outcomes if mode == "sample" else None)
        sel.finish()
        curve.append(rep.avg_accuracy_all)
    frozen = QLearningSelector(exits, cont, cfg, substream(seed, "runtime_eval"), learn=False, epsilon=0.0)
    report = simulate(scenario, frozen, mode, seed, outcomes)
    out = {"exit": exits.to_dict()}
    if cont is not None:
        out["continue"] = cont.to_dict()
    return OnlineResult(report, out, curve)
