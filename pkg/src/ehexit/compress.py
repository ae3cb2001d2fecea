"""Layer-wise channel pruning and linear quantization under a compression policy."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _accel
from .errors import ConfigError, InputError
from .netcore import FULL_PRECISION, ExitHead, Layer, NetworkDescriptor, exit_profiles

ALPHA_STEP = 0.05
ALPHA_MIN = 0.05
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# candidate scales are 2*max|w| * 2**(-j / SCALE_GRID_PER_OCTAVE)
SCALE_GRID_PER_OCTAVE = 256


def snap_alpha(a: float) -> float:
    """Nearest preserve rate on the 0.05 grid within [0.05, 1]."""
    i = int(np.clip(np.rint(float(a) / ALPHA_STEP), 1, round(1 / ALPHA_STEP)))
    return round(i * ALPHA_STEP, 2)


@dataclass(frozen=True)
class PolicyEntry:
    layer: str
    alpha: float = 1.0
    bw: int = FULL_PRECISION
    ba: int = FULL_PRECISION

    def __post_init__(self):
        if not ALPHA_MIN - 1e-12 <= self.alpha <= 1.0 + 1e-12:
            raise ConfigError(f"{self.layer}: alpha {self.alpha} outside [0.05, 1]")
        if abs(self.alpha / ALPHA_STEP - round(self.alpha / ALPHA_STEP)) > 1e-9:
            raise ConfigError(f"{self.layer}: alpha {self.alpha} is not on the 0.05 grid")
        for b in (self.bw, self.ba):
            if int(b) != b or not 1 <= b <= FULL_PRECISION:
                raise ConfigError(f"{self.layer}: bitwidth {b} outside [1, 32]")
        object.__setattr__(self, "alpha", round(float(self.alpha), 2))
        object.__setattr__(self, "bw", int(self.bw))
        object.__setattr__(self, "ba", int(self.ba))


@dataclass(frozen=True)
class CompressionPolicy:
    entries: tuple[PolicyEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @classmethod
    def identity(cls, net: NetworkDescriptor) -> "CompressionPolicy":
        return cls(tuple(PolicyEntry(name) for name, _, _ in net.units()))

    @classmethod
    def uniform(cls, net, alpha=1.0, bw=FULL_PRECISION, ba=FULL_PRECISION) -> "CompressionPolicy":
        return cls(tuple(PolicyEntry(name, alpha, bw, ba) for name, _, _ in net.units()))

    def check(self, net: NetworkDescriptor) -> None:
        names = [n for n, _, _ in net.units()]
        if [e.layer for e in self.entries] != names:
            raise ConfigError(f"policy layers {[e.layer for e in self.entries]} do not match network {names}")

    def to_dict(self) -> dict:
        return {"schema_version": 1,
                "entries": [{"layer": e.layer, "alpha": e.alpha, "bw": e.bw, "ba": e.ba}
                            for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionPolicy":
        if d.get("schema_version") != 1:
            raise ConfigError("unsupported policy schema")
        return cls(tuple(PolicyEntry(e["layer"], e["alpha"], e["bw"], e["ba"]) for e in d["entries"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CompressionPolicy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------- pruning

def channel_importance(weights: np.ndarray) -> np.ndarray:
    """Sum of absolute weights applied to each input channel (axis 1)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        raise InputError("empty weight tensor")
    axes = (0,) + tuple(range(2, w.ndim))
    return np.abs(w).sum(axis=axes)


def pruned_count(base_c: int, alpha: float) -> int:
    if not 0 < alpha <= 1:
        raise ConfigError(f"preserve rate {alpha} outside (0, 1]")
    # round-half-to-even, matching np.rint everywhere else
    return max(1, int(np.rint(alpha * base_c)))


def channels_to_keep(importance: np.ndarray, keep: int) -> np.ndarray:
    """Indices of the retained channels, ascending.

    The c - keep channels with the smallest importance are dropped; on ties the
    lower channel index is dropped first.
    """
    c = len(importance)
    order = np.lexsort((np.arange(c), importance))  # by importance, then index
    return np.sort(order[c - keep:])


def _find_unit(net: NetworkDescriptor, unit):
    units = net.units()
    if isinstance(unit, str):
        for name, kind, idx in units:
            if name == unit:
                return kind, idx
        raise ConfigError(f"no weighted layer named {unit!r}")
    name, kind, idx = units[unit]
    return kind, idx


def _select_inputs(layer: Layer, keep: np.ndarray) -> Layer:
    sp = layer.spec
    spec = replace(sp, c_in=len(keep))
    return replace(layer, spec=spec, weight=layer.weight[:, keep])


def prune_layer(net: NetworkDescriptor, unit, alpha: float) -> NetworkDescriptor:
    """Drop the least important input channels of one weighted layer.

    ``unit`` is a layer name or an index into ``net.units()``. The channel
    count after pruning is max(1, round(alpha * base_c_in)). For a backbone
    layer the matching output filters of the producing layer are removed too,
    along with the corresponding inputs of any exit head reading that tensor.
    """
    kind, idx = _find_unit(net, unit)
    if kind == 1:
        return _prune_head(net, idx, alpha)
    layer = net.layers[idx]
    c = layer.spec.c_in
    target = pruned_count(layer.base_c_in, alpha)
    if target >= c:
        return net
    keep = channels_to_keep(channel_importance(layer.weight), target)

    producer = idx - 1
    while producer >= 0 and not net.layers[producer].spec.weighted:
        producer -= 1
    if producer < 0:
        raise ConfigError(f"{layer.name}: cannot prune raw input channels ({c} -> {target})")

    layers = list(net.layers)
    layers[idx] = _select_inputs(layer, keep)
    p = layers[producer]
    layers[producer] = replace(p, spec=replace(p.spec, c_out=target), weight=p.weight[keep],
                               bias=None if p.bias is None else p.bias[keep])
    for li in range(producer + 1, idx):
        l = layers[li]
        layers[li] = replace(l, spec=replace(l.spec, c_in=target, c_out=target))

    pos = {int(old): new for new, old in enumerate(keep)}
    exits = []
    for e in net.exits:
        if producer <= e.after < idx:
            current = range(c) if e.in_index is None else e.in_index
            cols = [j for j, ch in enumerate(current) if ch in pos]
            if cols:
                new_index = tuple(pos[current[j]] for j in cols)
                head = _select_inputs(e.layer, np.array(cols, dtype=int))
            else:
                # every channel this head read is gone: read one survivor with zero weight
                new_index = (0,)
                w = np.zeros((e.layer.spec.c_out, 1) + e.layer.spec.input_spatial)
                head = replace(e.layer, spec=replace(e.layer.spec, c_in=1), weight=w)
            in_index = None if (e.in_index is None or new_index == tuple(range(target))) else new_index
            e = ExitHead(e.after, head, in_index)
        exits.append(e)
    return replace(net, layers=tuple(layers), exits=tuple(exits))


def _prune_head(net: NetworkDescriptor, ei: int, alpha: float) -> NetworkDescriptor:
    e = net.exits[ei]
    c = e.layer.spec.c_in
    target = pruned_count(e.layer.base_c_in, alpha)
    if target >= c:
        return net
    keep = channels_to_keep(channel_importance(e.layer.weight), target)
    current = tuple(range(c)) if e.in_index is None else e.in_index
    exits = list(net.exits)
    exits[ei] = ExitHead(e.after, _select_inputs(e.layer, keep), tuple(current[j] for j in keep))
    return replace(net, exits=tuple(exits))


# ---------------------------------------------------------- quantization

def weight_levels(k: int) -> tuple[int, int]:
    return -(2 ** (k - 1)), 2 ** (k - 1) - 1


def quant_error(w: np.ndarray, s: float, k: int) -> float:
    """||clamp(round(w/s)) * s - w||_2 for signed k-bit levels."""
    qmin, qmax = weight_levels(k)
    return float(np.sqrt(_accel.quant_sq_errors(w, np.array([s]), qmin, qmax)[0]))


def scale_grid(max_abs: float, k: int) -> np.ndarray:
    """Geometric candidate scales from 2*max|w| down to max|w| * 2**-(k+1).

    The grid for k bits is a prefix of the grid for k+1 bits, and more levels
    never hurt at a fixed scale, so the best grid error is non-increasing in k.
    """
    n = SCALE_GRID_PER_OCTAVE * (k + 2) + 1
    return 2.0 * max_abs * 2.0 ** (-np.arange(n) / SCALE_GRID_PER_OCTAVE)


def _golden_section(f, a: float, b: float, rtol: float):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rtol * 0.5 * (a + b):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


EXACT_SCALE_LIMIT = 1 << 21


def _exact_scale(w: np.ndarray, k: int) -> tuple[float, float]:
    """Global minimizer of the squared error over all scales.

    Between consecutive rounding thresholds s = |w_i| / (n + 1/2) every level is
    fixed, so the error is a quadratic in s with minimizer sum(w q) / sum(q^2).
    Sweeping the thresholds from large s to small keeps both sums up to date.
    """
    qmin, qmax = weight_levels(k)
    a = np.abs(w)
    reach = np.where(w > 0, qmax, np.where(w < 0, -qmin, 0))
    idx = np.repeat(np.arange(w.size), reach)
    n = np.arange(idx.size) - np.repeat(np.cumsum(reach) - reach, reach)
    b = a[idx] / (n + 0.5)
    order = np.argsort(-b, kind="stable")
    b, swq, sqq = b[order], np.cumsum(a[idx][order]), np.cumsum(2.0 * n[order] + 1.0)
    total = float(w @ w)
    lower = np.append(b[1:], 0.0)
    s = np.clip(swq / sqq, lower, b)
    e = total - 2.0 * s * swq + s * s * sqq
    s = np.append(s, b[0])  # q = 0 everywhere at and above the largest threshold
    e = np.append(e, total)
    near = np.flatnonzero(e <= e.min() + 1e-9 * max(total, 1e-300))
    cand = s[near]
    errs = _accel.quant_sq_errors(w, cand, qmin, qmax)
    best = np.flatnonzero(errs == errs.min())
    i = best[np.argmin(cand[best])]
    return float(cand[i]), float(errs[i])


def optimal_scale(w: np.ndarray, k: int, rtol: float = 1e-4, brackets: int = 8) -> tuple[float, float]:
    """Scale minimizing the L2 quantization error, and that error.

    Exact for tensors with at most EXACT_SCALE_LIMIT rounding thresholds.
    Larger tensors get a geometric sweep over (0, 2 max|w|] with golden-section
    refinement around the ``brackets`` best local minima, plus the
    range-covering scales and the best (k-1)-bit scale, so the error never
    grows with k. Among equal errors the smallest scale (finest step) wins.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    m = float(np.abs(w).max()) if w.size else 0.0
    if m == 0.0:
        return 1.0, 0.0
    qmin, qmax = weight_levels(k)
    if w.size * max(qmax, -qmin) <= EXACT_SCALE_LIMIT:
        s, e = _exact_scale(w, k)
        return s, math.sqrt(e)
    grid = scale_grid(m, k)
    errs = _accel.quant_sq_errors(w, grid, qmin, qmax)

    def f(s):
        return float(_accel.quant_sq_errors(w, np.array([s]), qmin, qmax)[0])

    best_s, best_e = math.inf, math.inf

    def offer(s, e):
        nonlocal best_s, best_e
        if e < best_e or (e == best_e and s < best_s):
            best_s, best_e = float(s), float(e)

    tied = np.flatnonzero(errs == errs.min())
    offer(grid[tied[-1]], errs[tied[-1]])  # grid is descending
    for j in range(2, k + 1):
        s = m / (2 ** (j - 1) - 1)
        offer(s, f(s))
    if k > 1:
        s = optimal_scale(w, k - 1, rtol, brackets)[0]
        offer(s, f(s))
    padded = np.concatenate(([np.inf], errs, [np.inf]))
    local = np.flatnonzero((errs <= padded[:-2]) & (errs <= padded[2:]))
    local = local[np.argsort(errs[local], kind="stable")][:brackets]
    for i in local:
        hi = float(grid[max(i - 1, 0)])
        lo = float(grid[min(i + 1, len(grid) - 1)])
        offer(*_golden_section(f, lo, hi, rtol))
    return best_s, math.sqrt(best_e)


def quantize_weights(w, k: int) -> tuple[np.ndarray, float]:
    """Linear signed k-bit quantization with an error-minimizing scale."""
    if not 1 <= k <= 32:
        raise ConfigError(f"bitwidth {k} outside [1, 32]")
    w = np.asarray(w, dtype=np.float64)
    s, _ = optimal_scale(w, k)
    if not np.any(w):
        return np.zeros_like(w), 1.0
    qmin, qmax = weight_levels(k)
    return np.clip(np.rint(w / s), qmin, qmax) * s, s


def quantize_activations(a, k: int, s: float) -> np.ndarray:
    """Unsigned k-bit quantization of post-ReLU activations with step ``s``."""
    a = np.asarray(a, dtype=np.float64)
    if k < 1:
        raise ConfigError("bitwidth must be >= 1")
    if np.any(a < 0):
        raise InputError("activations must be nonnegative")
    return np.clip(np.rint(a / s), 0, 2 ** k - 1) * s


def activation_scale(act_max: float, k: int) -> float:
    return act_max / (2 ** k - 1)


def _quantize_layer(layer: Layer, bw: int, ba: int, shapes_only: bool) -> Layer:
    layer = replace(layer, a_bits=ba)
    if layer.w_bits == bw:
        return layer
    if bw >= FULL_PRECISION or shapes_only:
        return replace(layer, w_bits=bw)
    w, _ = quantize_weights(layer.weight, bw)
    b = None if layer.bias is None else quantize_weights(layer.bias, bw)[0]
    return replace(layer, weight=w, bias=b, w_bits=bw)


def apply_policy(net: NetworkDescriptor, policy: CompressionPolicy, prune_heads: bool = True,
                 shapes_only: bool = False, accuracies=None, mj_per_mflop: float = 1.5):
    """Prune every layer, then quantize every layer, and recompute profiles.

    Preserve rates are relative to the uncompressed channel counts and layers
    already at the requested bitwidth are left alone, so applying the same
    policy twice is a no-op. With ``shapes_only`` the weights are not
    quantized (only the bitwidth bookkeeping changes), which is enough for
    cost accounting.

    Returns (compressed net, exit profiles).
    """
    policy.check(net)
    units = net.units()
    for (name, kind, idx), entry in zip(units, policy.entries):
        if kind == 1 and not prune_heads:
            continue
        net = prune_layer(net, name, entry.alpha)
    layers = list(net.layers)
    exits = list(net.exits)
    for (name, kind, idx), entry in zip(units, policy.entries):
        if kind == 0:
            layers[idx] = _quantize_layer(layers[idx], entry.bw, entry.ba, shapes_only)
        else:
            e = exits[idx]
            exits[idx] = ExitHead(e.after, _quantize_layer(e.layer, entry.bw, entry.ba, shapes_only),
                                  e.in_index)
    net = replace(net, layers=tuple(layers), exits=tuple(exits))
    return net, exit_profiles(net, accuracies=accuracies, mj_per_mflop=mj_per_mflop)
