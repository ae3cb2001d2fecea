"""Discrete-time intermittent-inference simulator.

Energy bookkeeping is in millijoules, power in milliwatts, time in seconds.
The store charges along the trace one sample segment at a time (clipped at
capacity); an inference pays its whole exit cost when it starts and keeps the
device busy for flops / compute_rate seconds. Events that arrive while the
device is busy, or when no exit is affordable, are missed and score zero.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _accel
from .config import substream
from .errors import InputError, NumericalError, SimulationFault
from .netcore import ExitProfile
from .traces import EventStream, PowerTrace

EPS = 1e-9
MISSED = -1


@dataclass(frozen=True)
class StoreParams:
    capacity: float = 10.0
    initial: float = 0.0
    efficiency: float = 1.0

    def __post_init__(self):
        if self.capacity <= 0 or not 0 <= self.initial <= self.capacity or not 0 < self.efficiency <= 1:
            raise InputError(f"invalid energy store parameters {self}")


@dataclass(frozen=True)
class Scenario:
    trace: PowerTrace
    events: EventStream
    profiles: tuple[ExitProfile, ...]
    store: StoreParams = StoreParams()
    compute_rate_mflops: float = 1.0
    power_window_s: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise InputError("scenario needs at least one exit profile")
        f = [p.flops for p in self.profiles]
        if any(b <= a for a, b in zip(f, f[1:])):
            raise InputError("exit FLOPs must be strictly increasing")
        if self.compute_rate_mflops <= 0:
            raise InputError("compute rate must be positive")
        self.events.check_within(self.trace)

    @property
    def costs(self) -> np.ndarray:
        return np.array([p.energy_cost for p in self.profiles])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([p.accuracy for p in self.profiles])

    def latency(self, exit_index: int) -> float:
        return self.profiles[exit_index].flops / (self.compute_rate_mflops * 1e6)

    def harvest(self, t0: float, t1: float) -> float:
        return harvest(self.trace, t0, t1, self.store.efficiency)

    @property
    def e_total(self) -> float:
        return self.harvest(self.trace.start, self.trace.end)


def harvest(trace: PowerTrace, t0: float, t1: float, efficiency: float = 1.0) -> float:
    """Exact integral of the piecewise-linear power over [t0, t1], times efficiency."""
    if t1 < t0:
        raise InputError(f"harvest interval reversed: {t0} > {t1}")
    return (trace.cumulative(t1) - trace.cumulative(t0)) * efficiency


# ------------------------------------------------------------- selectors

@dataclass
class DecisionContext:
    event_index: int
    time: float
    level: float
    capacity: float
    charging_power: float
    costs: np.ndarray
    accuracies: np.ndarray

    @property
    def affordable(self) -> np.ndarray:
        return self.costs <= self.level + EPS


class ExitSelector:
    """Interface for exit-selection policies.

    ``select`` returns an exit index (it must be affordable unless the selector
    ``stalls``) or None to skip the event. ``continue_inference`` is asked after
    each exit whether to extend to the next one. The ``on_*`` hooks let learning
    selectors observe outcomes; they do nothing by default.
    """

    name = "selector"
    stalls = False

    def select(self, ctx: DecisionContext) -> int | None:
        raise NotImplementedError

    def continue_inference(self, ctx: DecisionContext, current_exit: int, entropy: float | None) -> bool:
        return False

    def on_missed(self, ctx: DecisionContext) -> None:
        pass

    def on_outcome(self, ctx: DecisionContext, first_exit: int, final_exit: int, accuracy: float) -> None:
        pass


class GreedyStaticSelector(ExitSelector):
    """Most accurate exit whose cost fits in the current store level."""

    name = "static_lut"

    def __init__(self, profiles: Sequence[ExitProfile] | None = None):
        self.profiles = profiles

    def select(self, ctx):
        ok = np.flatnonzero(ctx.affordable)
        if len(ok) == 0:
            return None
        acc = ctx.accuracies[ok]
        return int(ok[np.flatnonzero(acc == acc.max())[0]])


def greedy_static_selector(profiles=None) -> GreedyStaticSelector:
    return GreedyStaticSelector(profiles)


class FixedExitSelector(ExitSelector):
    """Always the same exit; with ``stall`` it waits for energy instead of missing."""

    def __init__(self, exit_index: int = -1, stall: bool = True):
        self.exit_index = exit_index
        self.stalls = stall
        self.name = f"fixed_exit{'_stall' if stall else ''}"

    def select(self, ctx):
        i = self.exit_index % len(ctx.costs)
        if not self.stalls and not ctx.affordable[i]:
            return None
        return i


class ThresholdIncremental(ExitSelector):
    """Wrap a selector; continue to the next exit iff entropy > threshold."""

    def __init__(self, base: ExitSelector, threshold: float):
        self.base = base
        self.threshold = threshold
        self.name = f"{base.name}+threshold"

    def select(self, ctx):
        return self.base.select(ctx)

    def continue_inference(self, ctx, current_exit, entropy):
        return entropy is not None and entropy > self.threshold


# -------------------------------------------------------------- outcomes

class OutcomeModel:
    """Decides Acc_j for a processed event. Entropy is None when unknown."""

    def outcome(self, event_index: int, exit_index: int) -> tuple[float, bool | None]:
        raise NotImplementedError

    def entropy(self, event_index: int, exit_index: int) -> float | None:
        return None


class ExpectedOutcomes(OutcomeModel):
    def __init__(self, accuracies):
        self.acc = np.asarray(accuracies, dtype=float)

    def outcome(self, j, i):
        return float(self.acc[i]), None


class BernoulliOutcomes(OutcomeModel):
    def __init__(self, accuracies, rng: np.random.Generator):
        self.acc = np.asarray(accuracies, dtype=float)
        self.rng = rng

    def outcome(self, j, i):
        ok = bool(self.rng.random() < self.acc[i])
        return float(ok), ok


class SampleOutcomes(OutcomeModel):
    """Per-event test samples with precomputed class probabilities at every exit.

    probs: [num_exits, num_samples, num_classes]; event j uses sample assign[j].
    Correctness is the real prediction; entropy comes from the same output.
    """

    def __init__(self, probs: np.ndarray, labels: np.ndarray, assign: np.ndarray):
        from .netcore import entropy

        self.correct = probs.argmax(axis=2) == labels[None, :]
        self.ent = entropy(probs)
        self.assign = np.asarray(assign)

    def outcome(self, j, i):
        ok = bool(self.correct[i, self.assign[j]])
        return float(ok), ok

    def entropy(self, j, i):
        return float(self.ent[i, self.assign[j]])


# ---------------------------------------------------------------- report

@dataclass(frozen=True)
class EventRecord:
    index: int
    time: float
    exit: int
    first_exit: int
    accuracy: float
    correct: bool | None
    latency: float
    inference_latency: float
    energy: float
    level_before: float
    level_after: float
    reason: str


@dataclass(frozen=True)
class SimReport:
    records: tuple[EventRecord, ...]
    num_exits: int
    e_total: float
    e_harvested: float
    e_absorbed: float
    e_spent: float
    selector: str = ""
    mode: str = "expected"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_events(self) -> int:
        return len(self.records)

    @property
    def n_processed(self) -> int:
        return sum(r.exit != MISSED for r in self.records)

    @property
    def n_missed(self) -> int:
        return self.n_events - self.n_processed

    @property
    def n_correct(self) -> float:
        return math.fsum(r.accuracy for r in self.records)

    @property
    def avg_accuracy_all(self) -> float:
        return self.n_correct / self.n_events if self.records else 0.0

    @property
    def avg_accuracy_processed(self) -> float:
        return self.n_correct / self.n_processed if self.n_processed else 0.0

    def aggregates(self) -> dict:
        proc = [r for r in self.records if r.exit != MISSED]
        p, missed = exit_fraction(self)
        return {
            "n_events": self.n_events,
            "n_processed": self.n_processed,
            "n_missed": self.n_missed,
            "n_correct": self.n_correct,
            "avg_accuracy_all": self.avg_accuracy_all,
            "avg_accuracy_processed": self.avg_accuracy_processed,
            "iepmj": iepmj(self) if self.e_total > 0 else None,
            "iepmj_identity": iepmj_identity(self) if self.e_total > 0 else None,
            "e_total_mj": self.e_total,
            "e_harvested_mj": self.e_harvested,
            "e_absorbed_mj": self.e_absorbed,
            "e_spent_mj": self.e_spent,
            "mean_event_latency_s": float(np.mean([r.latency for r in proc])) if proc else None,
            "mean_inference_latency_s": float(np.mean([r.inference_latency for r in proc])) if proc else None,
            "exit_fractions": [float(v) for v in p],
            "missed_fraction": missed,
        }

    def to_dict(self) -> dict:
        return {"selector": self.selector, "mode": self.mode, "num_exits": self.num_exits,
                "aggregates": self.aggregates(), "meta": self.meta,
                "records": [asdict(r) for r in self.records]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def records_csv(self) -> str:
        cols = list(EventRecord.__dataclass_fields__)

        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, (bool, np.bool_)):
                return str(bool(v))
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            if isinstance(v, (float, np.floating)):
                return repr(float(v))
            return str(v)

        lines = [",".join(cols)]
        lines.extend(",".join(fmt(getattr(r, c)) for c in cols) for r in self.records)
        return "\n".join(lines) + "\n"


def iepmj(report: SimReport) -> float:
    """Correctly processed events per harvested millijoule."""
    if report.e_total <= 0:
        raise NumericalError("IEpmJ undefined: no energy harvested")
    return report.n_correct / report.e_total


def iepmj_identity(report: SimReport) -> float:
    """The same quantity written as (N / E_total) * mean accuracy over all N."""
    if report.e_total <= 0:
        raise NumericalError("IEpmJ undefined: no energy harvested")
    if not report.records:
        return 0.0
    return report.n_events / report.e_total * float(np.mean([r.accuracy for r in report.records]))


def exit_fraction(report: SimReport) -> tuple[np.ndarray, float]:
    """Share of events terminating at each exit, and the missed share."""
    n = report.n_events
    if n == 0:
        return np.zeros(report.num_exits), 0.0
    counts = np.zeros(report.num_exits)
    for r in report.records:
        if r.exit != MISSED:
            counts[r.exit] += 1
    return counts / n, report.n_missed / n


# ------------------------------------------------------------- simulator

class _Store:
    """Energy store driven along the trace, with conservation bookkeeping."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.trace = scenario.trace
        self.cap = scenario.store.capacity
        self.eff = scenario.store.efficiency
        self.initial = scenario.store.initial
        self.level = self.initial
        self.clock = self.trace.start
        self.harvested = 0.0
        self.absorbed = 0.0
        self.spent = 0.0
        self.marks: list[tuple[float, float]] = []

    def _segments(self, t: float, since: float | None = None):
        since = self.clock if since is None else since
        bp = self.trace.breakpoints(since, t)
        cum = np.array([self.trace.cumulative(x) for x in bp])
        return bp, np.maximum(np.diff(cum), 0.0) * self.eff

    def advance(self, t: float) -> None:
        if t <= self.clock:
            return
        _, inc = self._segments(t)
        levels, absorbed = _accel.charge_capped(self.level, self.cap, inc)
        self.harvested += float(inc.sum())
        self.absorbed += float(absorbed.sum())
        self.level = float(levels[-1]) if len(levels) else self.level
        self.clock = t

    def mark(self) -> None:
        """Remember (clock, level); spends only ever happen at marked instants."""
        self.marks.append((self.clock, self.level))

    def level_at(self, t: float) -> float:
        """Stored energy at time ``t`` without changing the store.

        Times behind the clock are answered from the latest mark at or before ``t``.
        """
        if t >= self.clock:
            t0, base = self.clock, self.level
        else:
            k = bisect.bisect_right([m[0] for m in self.marks], t) - 1
            if k < 0:
                raise SimulationFault(f"no store history at t={t}")
            t0, base = self.marks[k]
        if t <= t0:
            return base
        _, inc = self._segments(t, t0)
        return min(self.cap, base + float(inc.sum()))

    def time_to_reach(self, target: float) -> float | None:
        """Earliest time the level reaches ``target`` without spending, or None."""
        if self.level + EPS >= target:
            return self.clock
        if target > self.cap + EPS:
            return None
        bp, inc = self._segments(self.trace.end)
        levels, _ = _accel.charge_capped(self.level, self.cap, inc)
        k = int(np.searchsorted(levels, target - EPS, side="left"))
        if k >= len(levels):
            return None
        before = self.level if k == 0 else float(levels[k - 1])
        need = (target - before) / self.eff
        a, b = bp[k], bp[k + 1]
        pa, pb = self.trace.power_at(a), self.trace.power_at(b)
        slope = (pb - pa) / (b - a)
        disc = pa * pa + 2.0 * slope * need
        u = 2.0 * need / (pa + math.sqrt(max(disc, 0.0))) if pa + math.sqrt(max(disc, 0.0)) > 0 else b - a
        return float(min(a + u, b))

    def spend(self, cost: float) -> None:
        if cost > self.level + EPS:
            raise SimulationFault(f"spending {cost} mJ with only {self.level} mJ stored")
        self.level = max(self.level - cost, 0.0)
        self.spent += cost
        self.mark()

    def check(self) -> None:
        drift = self.initial + self.absorbed - self.spent - self.level
        if abs(drift) > EPS:
            raise SimulationFault(f"energy bookkeeping drift {drift} mJ")
        if self.spent > self.initial + self.harvested + EPS:
            raise SimulationFault("spent more energy than was harvested")
        if not -EPS <= self.level <= self.cap + EPS:
            raise SimulationFault(f"store level {self.level} outside [0, {self.cap}]")

    def charging_power(self, t: float) -> float:
        w = self.sc.power_window_s
        t0 = max(self.trace.start, t - w)
        if t <= t0:
            return self.trace.power_at(t) * self.eff
        return harvest(self.trace, t0, t, self.eff) / (t - t0)


def simulate(scenario: Scenario, selector: ExitSelector, mode: str = "expected",
             seed: int | None = None, outcomes: OutcomeModel | None = None,
             meta: dict | None = None) -> SimReport:
    """Run one pass of the event stream through the store and the selector.

    ``mode`` is ``expected`` (Acc_j = exit accuracy), ``bernoulli`` (a seeded
    draw decides correctness) or ``sample`` (``outcomes`` must be given).
    """
    costs = scenario.costs
    accs = scenario.accuracies
    m = len(costs)
    if outcomes is None:
        if mode == "expected":
            outcomes = ExpectedOutcomes(accs)
        elif mode == "bernoulli":
            outcomes = BernoulliOutcomes(accs, substream(seed, "outcomes"))
        else:
            raise InputError(f"mode {mode!r} needs an outcome model")
    store = _Store(scenario)
    busy_until = -math.inf
    records = []

    def ctx_for(j, t, level=None):
        level = store.level if level is None else level
        return DecisionContext(j, t, level, store.cap, store.charging_power(t), costs, accs)

    for j, t in enumerate(scenario.events.times):
        t = float(t)
        store.advance(t)
        store.check()
        if t < busy_until:
            level = store.level_at(t)
            selector.on_missed(ctx_for(j, t, level))
            records.append(EventRecord(j, t, MISSED, MISSED, 0.0, None, 0.0, 0.0, 0.0,
                                       level, level, "busy"))
            continue
        store.marks = []
        store.mark()
        level_before = store.level
        ctx = ctx_for(j, t)
        choice = selector.select(ctx)
        start = t
        if choice is not None and not 0 <= choice < m:
            raise SimulationFault(f"{selector.name} chose nonexistent exit {choice}")
        if choice is not None and not ctx.affordable[choice]:
            if not selector.stalls:
                raise SimulationFault(
                    f"{selector.name} chose exit {choice} costing {costs[choice]} mJ with {store.level} mJ stored")
            ready = store.time_to_reach(costs[choice])
            if ready is None:
                busy_until = math.inf
                selector.on_missed(ctx)
                records.append(EventRecord(j, t, MISSED, MISSED, 0.0, None, 0.0, 0.0, 0.0,
                                           level_before, store.level, "stalled_past_end"))
                continue
            store.advance(ready)
            start = max(ready, t)
        if choice is None:
            selector.on_missed(ctx)
            records.append(EventRecord(j, t, MISSED, MISSED, 0.0, None, 0.0, 0.0, 0.0,
                                       level_before, store.level, "unaffordable"))
            continue

        store.spend(costs[choice])
        energy = float(costs[choice])
        exit_i = choice
        done = start + scenario.latency(exit_i)
        while exit_i + 1 < m:
            store.advance(min(done, scenario.trace.end))
            inc = float(costs[exit_i + 1] - costs[exit_i])
            if inc > store.level + EPS:
                break
            dctx = ctx_for(j, min(done, scenario.trace.end))
            if not selector.continue_inference(dctx, exit_i, outcomes.entropy(j, exit_i)):
                break
            store.spend(inc)
            energy += inc
            done += scenario.latency(exit_i + 1) - scenario.latency(exit_i)
            exit_i += 1
        busy_until = done
        acc, correct = outcomes.outcome(j, exit_i)
        selector.on_outcome(ctx, choice, exit_i, acc)
        records.append(EventRecord(j, t, exit_i, choice, acc, correct, done - t, done - start, energy,
                                   level_before, store.level, "ok"))
        store.check()
    store.advance(scenario.trace.end)
    store.check()
    return SimReport(tuple(records), m, scenario.e_total, store.harvested, store.absorbed, store.spent,
                     selector.name, mode, dict(meta or {}))
