"""Two-agent DDPG search over per-layer preserve rates and bitwidths.

The pruning agent emits one action per layer (the preserve rate), the
quantization agent two (weight and activation bitwidths). Both see the same
observation, which includes the peer's choices for the previous layer. The
episode reward is the trace-aware average accuracy when the compressed model
meets its FLOPs/size target and a fixed punishment otherwise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import substream
from .compress import ALPHA_STEP, CompressionPolicy, PolicyEntry, apply_policy, snap_alpha
from .ehsim import GreedyStaticSelector, Scenario, SimReport, StoreParams, exit_fraction, simulate
from .errors import ConfigError, EhexitError, StateError, TrainingFault
from .netcore import ExitProfile, NetworkDescriptor, exit_flops, model_bytes, model_flops
from .toytrain import ToyDataset, calibrate, eval_accuracy, fit_exit_heads
from .traces import EventStream, PowerTrace

OBS_DIM = 12
FIRST_LAYER_SENTINEL = 1.0


# ------------------------------------------------------------------ MLP

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class MLP:
    """Fully connected net, tanh hidden layers, sigmoid or linear output."""

    def __init__(self, sizes, out="linear", rng=None, final_scale=3e-3):
        if out not in ("linear", "sigmoid"):
            raise ConfigError(f"unknown output activation {out!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.sizes = list(sizes)
        self.out = out
        self.W, self.b = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = final_scale if i == len(sizes) - 2 else 1.0 / math.sqrt(a)
            self.W.append(rng.uniform(-lim, lim, size=(a, b)))
            self.b.append(np.zeros(b))

    @property
    def params(self) -> list[np.ndarray]:
        return self.W + self.b

    def forward(self, x):
        """Returns (output, cache) for a batch x of shape [N, in]."""
        hs = [np.atleast_2d(x)]
        h = hs[0]
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            last = i == len(self.W) - 1
            if not last:
                h = np.tanh(z)
            else:
                h = _sigmoid(z) if self.out == "sigmoid" else z
            hs.append(h)
        return h, hs

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, hs, grad_out):
        """Gradients (dW list, db list, d input) given dL/d output."""
        g = np.asarray(grad_out, dtype=float)
        n = len(self.W)
        dW, db = [None] * n, [None] * n
        for i in range(n - 1, -1, -1):
            h_out = hs[i + 1]
            if i == n - 1:
                if self.out == "sigmoid":
                    g = g * h_out * (1.0 - h_out)
            else:
                g = g * (1.0 - h_out * h_out)
            dW[i] = hs[i].T @ g
            db[i] = g.sum(axis=0)
            g = g @ self.W[i].T
        return dW, db, g

    def to_dict(self) -> dict:
        return {"sizes": self.sizes, "out": self.out,
                "W": [w.tolist() for w in self.W], "b": [b.tolist() for b in self.b]}


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        """Descend along ``grads`` (in place on the parameter arrays)."""
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def critic_loss_grads(critic: MLP, obs, act, target):
    """Mean squared TD error and its gradients w.r.t. the critic parameters."""
    x = np.hstack([obs, act])
    q, hs = critic.forward(x)
    diff = q[:, 0] - target
    loss = float(np.mean(diff * diff))
    dW, db, _ = critic.backward(hs, (2.0 / len(diff)) * diff[:, None])
    return loss, dW + db


def actor_objective_grads(actor: MLP, critic: MLP, obs):
    """Mean Q(O, mu(O)) and its gradients w.r.t. the actor parameters (ascent direction)."""
    a, ha = actor.forward(obs)
    q, hc = critic.forward(np.hstack([obs, a]))
    n = len(obs)
    _, _, dx = critic.backward(hc, np.full((n, 1), 1.0 / n))
    da = dx[:, obs.shape[1]:]
    dW, db, _ = actor.backward(ha, da)
    return float(q.mean()), dW + db


# --------------------------------------------------------------- agents

class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.nxt = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def push(self, o, a, r, o2, done) -> None:
        i = self.pos
        self.obs[i], self.act[i], self.rew[i], self.nxt[i], self.done[i] = o, a, r, o2, done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self) -> int:
        return self.size

    def sample(self, n: int, rng: np.random.Generator):
        if self.size < n:
            raise StateError(f"buffer holds {self.size} < {n} transitions")
        idx = rng.integers(self.size, size=n)
        return self.obs[idx], self.act[idx], self.rew[idx], self.nxt[idx], self.done[idx]


@dataclass
class AgentConfig:
    hidden: tuple = (64, 64)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    buffer: int = 10000
    batch: int = 64
    sigma_start: float = 0.5
    sigma_end: float = 0.05
    warmup_episodes: int = 100
    eval_every: int = 5
    updates_per_step: int = 1
    baseline_rate: float = 0.5   # moving-average reward baseline; 0 disables


class Agent:
    """Actor mu(O) -> [0,1]^k and critic Q(O, a), each with its own Adam."""

    def __init__(self, act_dim: int, cfg: AgentConfig, rng: np.random.Generator):
        self.act_dim = act_dim
        self.actor = MLP([OBS_DIM, *cfg.hidden, act_dim], "sigmoid", rng)
        self.critic = MLP([OBS_DIM + act_dim, *cfg.hidden, 1], "linear", rng)
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.critic_opt = Adam(self.critic.params, cfg.critic_lr)
        self.buffer = ReplayBuffer(cfg.buffer, OBS_DIM, act_dim)

    def act(self, obs, sigma: float, rng: np.random.Generator) -> np.ndarray:
        a = self.actor(obs[None])[0]
        if sigma > 0:
            a = truncated_normal(a, sigma, rng)
        return np.clip(a, 0.0, 1.0)


def truncated_normal(mean, sigma: float, rng: np.random.Generator, lo=0.0, hi=1.0):
    """Gaussian noise around ``mean`` resampled until inside [lo, hi] (at most 100 tries, then clipped)."""
    mean = np.asarray(mean, dtype=float)
    out = rng.normal(mean, sigma)
    for _ in range(100):
        bad = (out < lo) | (out > hi)
        if not bad.any():
            break
        out[bad] = rng.normal(mean[bad], sigma)
    return np.clip(out, lo, hi)


def ddpg_update(agent: Agent, batch) -> dict:
    """One critic step on Q' = r + Q(O', mu(O')) (Q' = r at the last layer), then one actor step."""
    obs, act, rew, nxt, done = batch
    q_next = agent.critic(np.hstack([nxt, agent.actor(nxt)]))[:, 0]
    target = rew + np.where(done, 0.0, q_next)
    c_loss, c_grads = critic_loss_grads(agent.critic, obs, act, target)
    if not np.isfinite(c_loss) or not all(np.all(np.isfinite(g)) for g in c_grads):
        raise TrainingFault(f"non-finite critic loss {c_loss} (reward range {rew.min()}..{rew.max()})")
    agent.critic_opt.step(c_grads)
    q_mean, a_grads = actor_objective_grads(agent.actor, agent.critic, obs)
    if not np.isfinite(q_mean) or not all(np.all(np.isfinite(g)) for g in a_grads):
        raise TrainingFault(f"non-finite actor objective {q_mean}")
    agent.actor_opt.step([-g for g in a_grads])
    return {"critic_loss": c_loss, "actor_q": q_mean}


# ---------------------------------------------------------- action maps

def map_action_to_bitwidth(a: float, b_min: int, b_max: int) -> int:
    """Linear map of a in [0,1] onto [b_min, b_max], round half to even, clamped."""
    a = min(max(float(a), 0.0), 1.0)
    return int(min(max(np.rint(b_min + a * (b_max - b_min)), b_min), b_max))


def map_action_to_alpha(a: float, alpha_min: float = ALPHA_STEP) -> float:
    a = min(max(float(a), 0.0), 1.0)
    return snap_alpha(alpha_min + a * (1.0 - alpha_min))


def design_space_size(num_layers: int, bw_choices: int = 8, ba_choices: int = 8,
                      alpha_choices: int = 20) -> int:
    """Number of distinct per-layer (alpha, bw, ba) assignments, exact integer."""
    return (bw_choices * ba_choices * alpha_choices) ** num_layers


def design_space_log10(num_layers: int, bw_choices: int = 8, ba_choices: int = 8,
                       alpha_choices: int = 20) -> float:
    return num_layers * math.log10(bw_choices * ba_choices * alpha_choices)


# ---------------------------------------------------------- environment

@dataclass
class SearchTargets:
    flops: float
    bytes: float

    @classmethod
    def relative(cls, net: NetworkDescriptor, flops_frac: float, bytes_frac: float) -> "SearchTargets":
        return cls(flops_frac * model_flops(net), bytes_frac * model_bytes(net))


@dataclass
class RunningTotals:
    """Cost bookkeeping while an episode walks the layers."""
    flops_reduced: float = 0.0
    bytes_reduced: float = 0.0
    prev_alpha: float = FIRST_LAYER_SENTINEL
    prev_bw: float = FIRST_LAYER_SENTINEL
    prev_ba: float = FIRST_LAYER_SENTINEL


def unit_costs(net: NetworkDescriptor) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit share of F_model (FLOPs counted once per exit that runs it) and of S_model."""
    from .netcore import flops_of_layer, layer_bytes

    units = net.units()
    fl = np.zeros(len(units))
    by = np.zeros(len(units))
    weighted = {idx: u for u, (_, kind, idx) in enumerate(units) if kind == 0}
    for u, (_, kind, idx) in enumerate(units):
        layer = net.unit_layer(kind, idx)
        by[u] = layer_bytes(layer)
        if kind == 1:
            fl[u] = flops_of_layer(layer.spec)
    for li, layer in enumerate(net.layers):
        n_after = sum(1 for e in net.exits if e.after >= li)
        f = flops_of_layer(layer.spec) * n_after
        # unweighted layers are charged to the preceding weighted unit
        k = li
        while k not in weighted and k > 0:
            k -= 1
        fl[weighted.get(k, 0)] += f
    return fl, by


def build_observation(net: NetworkDescriptor, l: int, totals: RunningTotals,
                      costs: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Normalized 12-field state for unit ``l``.

    Fields: layer index / (L-1), previous alpha, previous bw / 32 and ba / 32
    (1.0 before the first layer), FLOPs already removed and FLOPs still ahead
    (from unit l onwards, heads included) over F_model, the same two for bytes
    over S_model, conv indicator, c_in and c_out over the widest layer, and
    this unit's bytes over S_model.
    """
    units = net.units()
    L = len(units)
    fl, by = unit_costs(net) if costs is None else costs
    F, S = fl.sum(), by.sum()
    name, kind, idx = units[l]
    layer = net.unit_layer(kind, idx)
    cmax = max(max(net.unit_layer(k, i).spec.c_in, net.unit_layer(k, i).spec.c_out) for _, k, i in units)
    o = np.array([
        l / max(L - 1, 1),
        totals.prev_alpha,
        totals.prev_bw,
        totals.prev_ba,
        totals.flops_reduced / F,
        fl[l:].sum() / F,
        totals.bytes_reduced / S,
        by[l:].sum() / S,
        1.0 if layer.spec.kind == "conv" else 0.0,
        layer.spec.c_in / cmax,
        layer.spec.c_out / cmax,
        by[l] / S,
    ])
    return np.clip(o, 0.0, 1.0)


@dataclass
class EnvConfig:
    b_min: int = 1
    b_max: int = 8
    lam1: float = 1.0
    lam2: float = 1.0
    ridge_lambda: float = 10.0
    mj_per_mflop: float = 22.0
    mode: str = "surrogate"  # or "descriptor"


class SearchEnv:
    """Compresses the base network under a policy and scores it on a scenario.

    ``descriptor`` mode runs the real pipeline (prune, quantize, calibrate,
    refit heads, re-quantize, evaluate on held-out data). ``surrogate`` mode
    costs the policy exactly but reads accuracies from a per-unit
    degradation table built once with the descriptor pipeline.
    """

    def __init__(self, net: NetworkDescriptor, train: ToyDataset, test: ToyDataset,
                 trace: PowerTrace, events: EventStream, store: StoreParams, targets: SearchTargets,
                 cfg: EnvConfig = EnvConfig(), compute_rate_mflops: float = 1.0, surrogate=None):
        if cfg.mode not in ("surrogate", "descriptor"):
            raise ConfigError(f"unknown evaluation mode {cfg.mode!r}")
        self.net, self.train, self.test = net, train, test
        self.trace, self.events, self.store = trace, events, store
        self.targets, self.cfg = targets, cfg
        self.compute_rate = compute_rate_mflops
        self.units = net.units()
        self.costs = unit_costs(net)
        self._cache = {}
        if cfg.mode == "surrogate":
            self.surrogate = surrogate if surrogate is not None else DegradationSurrogate.build(self)
        else:
            self.surrogate = surrogate

    @property
    def num_layers(self) -> int:
        return len(self.units)

    def prunable(self, l: int) -> bool:
        """Only the first backbone layer is fixed: its inputs are the raw image."""
        return l != 0

    def compress(self, policy: CompressionPolicy) -> NetworkDescriptor:
        """The full pipeline: compress, calibrate, refit heads, quantize heads."""
        net, _ = apply_policy(self.net, policy)
        net = calibrate(net, self.train)
        net, _ = fit_exit_heads(net, self.train, self.cfg.ridge_lambda)
        net, _ = apply_policy(net, policy)
        return net

    def accuracies(self, policy: CompressionPolicy) -> list[float]:
        key = ("acc", self.cfg.mode, policy)
        if key not in self._cache:
            if self.cfg.mode == "descriptor":
                acc = eval_accuracy(self.compress(policy), self.test)
            else:
                acc = self.surrogate.predict(policy)
            self._cache[key] = [float(a) for a in acc]
        return self._cache[key]

    def scenario(self, profiles) -> Scenario:
        return Scenario(self.trace, self.events, tuple(profiles), self.store, self.compute_rate)

    def evaluate(self, policy: CompressionPolicy) -> "Evaluation":
        shaped, _ = apply_policy(self.net, policy, shapes_only=True)
        F = float(model_flops(shaped))
        S = float(model_bytes(shaped))
        acc = self.accuracies(policy)
        profiles = [ExitProfile(f, 0.0, a, f / 1e6 * self.cfg.mj_per_mflop)
                    for f, a in zip(exit_flops(shaped), acc)]
        report = simulate(self.scenario(profiles), GreedyStaticSelector(), "expected")
        p, _ = exit_fraction(report)
        r_acc = float(np.dot(p, acc))
        f_ok = F <= self.targets.flops
        s_ok = S <= self.targets.bytes
        return Evaluation(policy, F, S, acc, p.tolist(), r_acc,
                          self.cfg.lam1 * r_acc if f_ok else -self.cfg.lam1,
                          self.cfg.lam2 * r_acc if s_ok else -self.cfg.lam2,
                          f_ok and s_ok, report)


@dataclass
class Evaluation:
    policy: CompressionPolicy
    flops: float
    bytes: float
    accuracies: list
    exit_fractions: list
    r_acc: float
    r_prune: float
    r_quant: float
    feasible: bool
    report: SimReport | None = None

    def summary(self) -> dict:
        return {"flops": self.flops, "bytes": self.bytes, "accuracies": self.accuracies,
                "exit_fractions": self.exit_fractions, "r_acc": self.r_acc,
                "r_prune": self.r_prune, "r_quant": self.r_quant, "feasible": self.feasible,
                "policy": self.policy.to_dict()["entries"]}


class DegradationSurrogate:
    """Additive per-unit accuracy loss table.

    For every unit and every preserve rate / weight bitwidth / activation
    bitwidth (varied one at a time, everything else uncompressed) the
    descriptor pipeline is run once and the drop of each exit's accuracy
    against the uncompressed baseline is stored. A policy's predicted
    accuracy is the baseline minus the summed drops, clipped to [chance, 1].
    """

    def __init__(self, base, alpha_drop, bw_drop, ba_drop, alphas, bits, num_classes):
        self.base = np.asarray(base, dtype=float)
        self.alpha_drop = np.asarray(alpha_drop, dtype=float)  # [unit, alpha, exit]
        self.bw_drop = np.asarray(bw_drop, dtype=float)        # [unit, bits, exit]
        self.ba_drop = np.asarray(ba_drop, dtype=float)
        self.alphas = [round(a, 2) for a in alphas]
        self.bits = list(bits)
        self.num_classes = num_classes

    @classmethod
    def build(cls, env: SearchEnv) -> "DegradationSurrogate":
        units = env.units
        identity = CompressionPolicy.identity(env.net)
        base = np.array(eval_accuracy(env.compress(identity), env.test))
        alphas = [round(ALPHA_STEP * i, 2) for i in range(1, 21)]
        bits = list(range(env.cfg.b_min, env.cfg.b_max + 1))
        m = len(base)
        ad = np.zeros((len(units), len(alphas), m))
        wd = np.zeros((len(units), len(bits), m))
        xd = np.zeros((len(units), len(bits), m))

        def drop(u, **kw):
            entries = list(identity.entries)
            entries[u] = PolicyEntry(entries[u].layer, **kw)
            return base - np.array(eval_accuracy(env.compress(CompressionPolicy(entries)), env.test))

        for u in range(len(units)):
            if env.prunable(u):
                for i, a in enumerate(alphas[:-1]):
                    ad[u, i] = drop(u, alpha=a)
            for i, b in enumerate(bits):
                wd[u, i] = drop(u, bw=b)
                xd[u, i] = drop(u, ba=b)
        return cls(base, ad, wd, xd, alphas, bits, env.net.num_classes)

    def predict(self, policy: CompressionPolicy) -> list[float]:
        loss = np.zeros_like(self.base)
        for u, e in enumerate(policy.entries):
            loss += self.alpha_drop[u, self.alphas.index(round(e.alpha, 2))]
            if e.bw in self.bits:
                loss += self.bw_drop[u, self.bits.index(e.bw)]
            if e.ba in self.bits:
                loss += self.ba_drop[u, self.bits.index(e.ba)]
        return np.clip(self.base - loss, 1.0 / self.num_classes, 1.0).tolist()

    def to_dict(self) -> dict:
        return {"base": self.base.tolist(), "alpha_drop": self.alpha_drop.tolist(),
                "bw_drop": self.bw_drop.tolist(), "ba_drop": self.ba_drop.tolist(),
                "alphas": self.alphas, "bits": self.bits, "num_classes": self.num_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSurrogate":
        return cls(d["base"], d["alpha_drop"], d["bw_drop"], d["ba_drop"], d["alphas"], d["bits"],
                   d["num_classes"])


# --------------------------------------------------------------- search

@dataclass
class EpisodeResult:
    episode: int
    explore: bool
    evaluation: Evaluation | None
    error: str | None = None

    def to_json(self) -> str:
        d = {"episode": self.episode, "explore": self.explore}
        if self.evaluation is not None:
            d.update(self.evaluation.summary())
        else:
            d.update({"feasible": False, "r_prune": None, "r_quant": None, "error": self.error})
        return json.dumps(d, sort_keys=True)


class AgentPair:
    def __init__(self, cfg: AgentConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.prune = Agent(1, cfg, rng)
        self.quant = Agent(2, cfg, rng)


def sigma_at(cfg: AgentConfig, episode: int, num_episodes: int) -> float:
    frac = episode / max(num_episodes - 1, 1)
    return cfg.sigma_start + frac * (cfg.sigma_end - cfg.sigma_start)


def episode(env: SearchEnv, agents: AgentPair, sigma: float = 0.0, push: bool = True,
            forced: list | None = None, baseline: tuple[float, float] = (0.0, 0.0)):
    """Walk all units once with both agents and evaluate the resulting policy.

    ``forced`` (list of (a_prune, a_w, a_a) per unit) replaces the actors'
    outputs. The episode reward, minus ``baseline``, is stored with every
    transition. Returns (Evaluation or None, error message, (r_prune, r_quant)).
    """
    cfg = env.cfg
    totals = RunningTotals()
    fl, by = env.costs
    obs, acts_p, acts_q, entries = [], [], [], []
    for l, (name, kind, idx) in enumerate(env.units):
        o = build_observation(env.net, l, totals, env.costs)
        if forced is not None:
            ap = np.array([forced[l][0]])
            aq = np.array(forced[l][1:3])
        else:
            ap = agents.prune.act(o, sigma, agents.rng)
            aq = agents.quant.act(o, sigma, agents.rng)
        alpha = map_action_to_alpha(ap[0]) if env.prunable(l) else 1.0
        bw = map_action_to_bitwidth(aq[0], cfg.b_min, cfg.b_max)
        ba = map_action_to_bitwidth(aq[1], cfg.b_min, cfg.b_max)
        entries.append(PolicyEntry(name, alpha, bw, ba))
        obs.append(o)
        acts_p.append(ap)
        acts_q.append(aq)
        # rough running totals: this unit's share scaled by its own choices
        totals.flops_reduced += fl[l] * (1.0 - alpha)
        totals.bytes_reduced += by[l] * (1.0 - alpha * bw / 32.0)
        totals.prev_alpha, totals.prev_bw, totals.prev_ba = alpha, bw / 32.0, ba / 32.0
    policy = CompressionPolicy(entries)
    try:
        ev = env.evaluate(policy)
        err = None
        r_p, r_q = ev.r_prune, ev.r_quant
    except EhexitError as exc:
        ev, err = None, f"{type(exc).__name__}: {exc}"
        r_p, r_q = -cfg.lam1, -cfg.lam2
    if push:
        L = len(obs)
        for l in range(L):
            nxt = obs[l + 1] if l + 1 < L else obs[l]
            done = l + 1 == L
            agents.prune.buffer.push(obs[l], acts_p[l], r_p - baseline[0], nxt, done)
            agents.quant.buffer.push(obs[l], acts_q[l], r_q - baseline[1], nxt, done)
    return ev, err, (r_p, r_q)


@dataclass
class SearchResult:
    best: Evaluation | None
    best_infeasible: Evaluation | None
    history: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.best is not None

    def history_jsonl(self) -> str:
        return "".join(h.to_json() + "\n" for h in self.history)


def _better(ev: Evaluation, cur: Evaluation | None) -> bool:
    return cur is None or ev.r_acc > cur.r_acc


def _infeasible_key(ev: Evaluation, env: SearchEnv) -> float:
    return max(ev.flops / env.targets.flops, ev.bytes / env.targets.bytes)


def search(env: SearchEnv, agents: AgentPair, num_episodes: int) -> SearchResult:
    """Explore for ``num_episodes`` episodes, interleaving noise-free rollouts.

    Every ``eval_every`` episodes a greedy (noise-free, not stored) rollout is
    also scored; the best feasible policy over all scored episodes wins.
    """
    if num_episodes < 1:
        raise ConfigError("num_episodes must be at least 1")
    cfg = agents.cfg
    result = SearchResult(None, None)

    def record(ev, err, ep, explore):
        result.history.append(EpisodeResult(ep, explore, ev, err))
        if ev is None:
            return
        if ev.feasible:
            if _better(ev, result.best):
                result.best = ev
        elif result.best_infeasible is None or _infeasible_key(ev, env) < _infeasible_key(result.best_infeasible, env):
            result.best_infeasible = ev

    base = None
    for ep in range(num_episodes):
        sigma = sigma_at(cfg, ep, num_episodes)
        forced = None
        if ep < cfg.warmup_episodes:
            forced = [tuple(agents.rng.uniform(size=3)) for _ in env.units]
        shift = base if (base is not None and cfg.baseline_rate > 0) else (0.0, 0.0)
        ev, err, rewards = episode(env, agents, sigma, forced=forced, baseline=shift)
        record(ev, err, ep, True)
        if base is None:
            base = rewards
        else:
            k = cfg.baseline_rate
            base = (base[0] + k * (rewards[0] - base[0]), base[1] + k * (rewards[1] - base[1]))
        if len(agents.prune.buffer) >= cfg.batch and ep >= cfg.warmup_episodes - 1:
            for _ in range(cfg.updates_per_step * env.num_layers):
                ddpg_update(agents.prune, agents.prune.buffer.sample(cfg.batch, agents.rng))
                ddpg_update(agents.quant, agents.quant.buffer.sample(cfg.batch, agents.rng))
        if ep >= cfg.warmup_episodes and (ep + 1) % cfg.eval_every == 0:
            ev, err, _ = episode(env, agents, 0.0, push=False)
            record(ev, err, ep, False)
    return result


def random_search_baseline(env: SearchEnv, num_samples: int, seed: int) -> SearchResult:
    """Uniform policies over the preserve-rate grid and bitwidth range, best feasible kept."""
    rng = substream(seed, "random_search")
    result = SearchResult(None, None)
    cfg = env.cfg
    alphas = [round(ALPHA_STEP * i, 2) for i in range(1, 21)]
    for s in range(num_samples):
        entries = []
        for l, (name, _, _) in enumerate(env.units):
            a = alphas[int(rng.integers(len(alphas)))] if env.prunable(l) else 1.0
            bw = int(rng.integers(cfg.b_min, cfg.b_max + 1))
            ba = int(rng.integers(cfg.b_min, cfg.b_max + 1))
            entries.append(PolicyEntry(name, a, bw, ba))
        try:
            ev, err = env.evaluate(CompressionPolicy(entries)), None
        except EhexitError as exc:
            ev, err = None, f"{type(exc).__name__}: {exc}"
        result.history.append(EpisodeResult(s, True, ev, err))
        if ev is not None:
            if ev.feasible and _better(ev, result.best):
                result.best = ev
            elif not ev.feasible and (result.best_infeasible is None or
                                      _infeasible_key(ev, env) < _infeasible_key(result.best_infeasible, env)):
                result.best_infeasible = ev
    return result
