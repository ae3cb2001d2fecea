"""Multi-exit network representation, forward pass and cost accounting.

Conventions:
  * one multiply-accumulate counts as one FLOP;
  * relu/maxpool layers carry no weights and cost zero FLOPs;
  * an fc layer reading a feature map of spatial size (H, W) stores its
    weights as [c_out, c_in, H, W] (the flatten is folded into the weight);
    a plain fc layer has input_spatial (1, 1) and kernel 1.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _accel
from .errors import ConfigError, InputError, StateError

SCHEMA_VERSION = 1
WEIGHTED = ("conv", "fc")
FULL_PRECISION = 32


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    c_in: int
    c_out: int
    kernel: int = 1
    stride: int = 1
    input_spatial: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.kind not in ("conv", "fc", "relu", "maxpool"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.c_in < 1 or self.c_out < 1 or self.kernel < 1 or self.stride < 1:
            raise ConfigError(f"invalid layer dimensions: {self}")
        if self.kind in ("relu", "maxpool") and self.c_in != self.c_out:
            raise ConfigError(f"{self.kind} must preserve channel count")
        object.__setattr__(self, "input_spatial", tuple(int(v) for v in self.input_spatial))

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED

    @property
    def output_spatial(self) -> tuple[int, int]:
        h, w = self.input_spatial
        if self.kind in ("conv", "maxpool"):
            k, s = self.kernel, self.stride
            return ((h - k) // s + 1, (w - k) // s + 1)
        if self.kind == "fc":
            return (1, 1)
        return (h, w)

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "conv":
            return (self.c_out, self.c_in, self.kernel, self.kernel)
        if self.kind == "fc":
            return (self.c_out, self.c_in) + self.input_spatial
        return ()


def flops_of_layer(layer: LayerSpec) -> int:
    if layer.kind == "conv":
        oh, ow = layer.output_spatial
        return oh * ow * layer.c_out * layer.c_in * layer.kernel * layer.kernel
    if layer.kind == "fc":
        h, w = layer.input_spatial
        return layer.c_in * h * w * layer.c_out
    return 0


def _frozen(a):
    if a is None:
        return None
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Layer:
    """A backbone layer or exit head with its (optional) parameters.

    ``base_c_in`` is the input channel count of the uncompressed network; the
    preserve rate of a compression policy is always taken relative to it.
    ``w_bits``/``a_bits`` record the quantization state (32 = float).
    ``act_max`` is the calibrated maximum of this layer's input activations.
    """

    name: str
    spec: LayerSpec
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    base_c_in: int = 0
    w_bits: int = FULL_PRECISION
    a_bits: int = FULL_PRECISION
    act_max: float | None = None
    act_signed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weight", _frozen(self.weight))
        object.__setattr__(self, "bias", _frozen(self.bias))
        if not self.base_c_in:
            object.__setattr__(self, "base_c_in", self.spec.c_in)
        if self.spec.weighted:
            if self.weight is None:
                raise ConfigError(f"layer {self.name} has no weights")
            if self.weight.shape != self.spec.weight_shape:
                raise ConfigError(
                    f"layer {self.name}: weight shape {self.weight.shape} != {self.spec.weight_shape}")
            if self.bias is not None and self.bias.shape != (self.spec.c_out,):
                raise ConfigError(f"layer {self.name}: bias shape {self.bias.shape}")

    @property
    def param_count(self) -> int:
        if not self.spec.weighted:
            return 0
        return int(self.weight.size) + (0 if self.bias is None else int(self.bias.size))


@dataclass(frozen=True)
class ExitHead:
    """Single fc classifier reading the activations after backbone layer ``after``.

    ``in_index`` selects the subset of incoming channels the head consumes
    (None means all of them); it is set when the head itself is pruned.
    """

    after: int
    layer: Layer
    in_index: tuple[int, ...] | None = None


@dataclass(frozen=True)
class NetworkDescriptor:
    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...]
    exits: tuple[ExitHead, ...]
    num_classes: int
    heads_trained: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "exits", tuple(self.exits))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.validate()

    @property
    def num_exits(self) -> int:
        return len(self.exits)

    def validate(self):
        if not self.exits:
            raise ConfigError("network has no exits")
        c, h, w = self.input_shape
        for layer in self.layers:
            sp = layer.spec
            if sp.c_in != c or sp.input_spatial != (h, w):
                raise ConfigError(
                    f"layer {layer.name}: expects input {sp.c_in}x{sp.input_spatial}, got {c}x{(h, w)}")
            c = sp.c_out
            h, w = sp.output_spatial
            if h < 1 or w < 1:
                raise ConfigError(f"layer {layer.name}: empty output")
        after = [e.after for e in self.exits]
        if any(b <= a for a, b in zip(after, after[1:])):
            raise ConfigError("exit attachment indices must be strictly increasing")
        if after[-1] != len(self.layers) - 1:
            raise ConfigError("the last exit must sit after the final backbone layer")
        for e in self.exits:
            c, sp = self.activation_shape(e.after)
            head = e.layer.spec
            n_in = c if e.in_index is None else len(e.in_index)
            if head.kind != "fc" or head.c_in != n_in or head.input_spatial != sp:
                raise ConfigError(f"exit head {e.layer.name} does not match its attachment point")
            if head.c_out != self.num_classes:
                raise ConfigError(f"exit head {e.layer.name} must emit num_classes logits")
            if e.in_index is not None and (min(e.in_index) < 0 or max(e.in_index) >= c):
                raise ConfigError(f"exit head {e.layer.name} selects a missing channel")

    def activation_shape(self, after: int) -> tuple[int, tuple[int, int]]:
        """(channels, spatial) of the activations produced by layer ``after`` (-1 = input)."""
        if after < 0:
            return self.input_shape[0], tuple(self.input_shape[1:])
        sp = self.layers[after].spec
        return sp.c_out, sp.output_spatial

    def units(self) -> list[tuple[str, int, int]]:
        """Weighted layers in execution order as (name, kind, index).

        kind is 0 for backbone layers (index into ``layers``) and 1 for exit
        heads (index into ``exits``). A head follows the backbone layer it is
        attached after. This ordering defines the layout of a compression policy.
        """
        out = []
        heads_at = {e.after: i for i, e in enumerate(self.exits)}
        for li, layer in enumerate(self.layers):
            if layer.spec.weighted:
                out.append((layer.name, 0, li))
            if li in heads_at:
                ei = heads_at[li]
                out.append((self.exits[ei].layer.name, 1, ei))
        return out

    def unit_layer(self, kind: int, idx: int) -> Layer:
        return self.layers[idx] if kind == 0 else self.exits[idx].layer

    def replace_layer(self, idx: int, layer: Layer) -> "NetworkDescriptor":
        layers = list(self.layers)
        layers[idx] = layer
        return replace(self, layers=tuple(layers))


# ------------------------------------------------------------------ costs

@dataclass(frozen=True)
class ExitProfile:
    flops: float
    weight_bytes: float
    accuracy: float
    energy_cost: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError(f"accuracy {self.accuracy} outside [0, 1]")


def layer_bytes(layer: Layer, bits: int | None = None) -> float:
    b = layer.w_bits if bits is None else bits
    return layer.param_count * b / 8.0


def exit_flops(net: NetworkDescriptor) -> list[int]:
    """Cumulative MACs from the input through each exit head."""
    out = []
    backbone = 0
    nxt = 0
    for e in net.exits:
        while nxt <= e.after:
            backbone += flops_of_layer(net.layers[nxt].spec)
            nxt += 1
        out.append(backbone + flops_of_layer(e.layer.spec))
    return out


def model_bytes(net: NetworkDescriptor) -> float:
    total = sum(layer_bytes(l) for l in net.layers)
    return total + sum(layer_bytes(e.layer) for e in net.exits)


def model_flops(net: NetworkDescriptor) -> int:
    """F_model: the sum of the per-exit cumulative FLOPs."""
    return int(sum(exit_flops(net)))


def exit_profiles(net, policy=None, accuracies=None, mj_per_mflop: float = 1.5):
    """Per-exit cost profile, optionally under a compression policy.

    The policy is applied analytically: channel counts follow from the preserve
    rates and byte counts from the weight bitwidths, so no weights are touched.
    """
    if policy is not None:
        from .compress import apply_policy

        net = apply_policy(net, policy, shapes_only=True)[0]
    flops = exit_flops(net)
    size = model_bytes(net)
    if accuracies is None:
        accuracies = [0.0] * len(flops)
    if len(accuracies) != len(flops):
        raise ConfigError("one accuracy per exit required")
    return [ExitProfile(float(f), size, float(a), f / 1e6 * mj_per_mflop)
            for f, a in zip(flops, accuracies)]


# ---------------------------------------------------------------- forward

def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs) -> float | np.ndarray:
    """Shannon entropy in nats along the last axis, with 0 ln 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise InputError("probabilities must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = terms.sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def quantize_input(layer: Layer, x: np.ndarray) -> np.ndarray:
    """Activation quantization applied to a layer's input."""
    if layer.a_bits >= FULL_PRECISION or layer.act_max is None or layer.act_max <= 0:
        return x
    k = layer.a_bits
    if layer.act_signed:
        s = layer.act_max / max(2 ** (k - 1) - 1, 1)
        return np.clip(np.rint(x / s), -(2 ** (k - 1)), 2 ** (k - 1) - 1) * s
    s = layer.act_max / (2 ** k - 1)
    return np.clip(np.rint(x / s), 0, 2 ** k - 1) * s


def apply_layer(layer: Layer, x: np.ndarray, quantized: bool = False) -> np.ndarray:
    sp = layer.spec
    if sp.kind == "relu":
        return np.maximum(x, 0.0)
    if sp.kind == "maxpool":
        return _accel.maxpool2d(x, sp.kernel, sp.stride)
    if quantized:
        x = quantize_input(layer, x)
    if sp.kind == "conv":
        return _accel.conv2d(x, layer.weight, sp.stride)
    y = np.tensordot(x, layer.weight, axes=([1, 2, 3], [1, 2, 3]))
    if layer.bias is not None:
        y = y + layer.bias
    return y[:, :, None, None]


def head_logits(head: ExitHead, act: np.ndarray, quantized: bool = False) -> np.ndarray:
    x = act if head.in_index is None else act[:, list(head.in_index)]
    return apply_layer(head.layer, x, quantized)[:, :, 0, 0]


@dataclass(frozen=True)
class ForwardCache:
    """Backbone activations after layer ``layer_index`` for resuming inference."""

    layer_index: int
    activation: np.ndarray
    quantized: bool


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != net.input_shape:
        raise InputError(f"input shape {x.shape} does not match network input {net.input_shape}")
    return x, single


def forward(net: NetworkDescriptor, x, upto_exit: int, quantized: bool = False,
            cache: ForwardCache | None = None):
    """Run the backbone up to exit ``upto_exit`` and return (probs, cache).

    Passing the cache returned by an earlier call resumes from the stored
    activations instead of starting from the input; ``x`` is then ignored.
    """
    if not 0 <= upto_exit < net.num_exits:
        raise InputError(f"exit {upto_exit} out of range")
    head = net.exits[upto_exit]
    if cache is not None:
        if cache.layer_index > head.after or cache.quantized != quantized:
            raise InputError("cache cannot be resumed towards this exit")
        act, start = cache.activation, cache.layer_index + 1
        single = False
    else:
        act, single = _as_batch(net, x)
        start = 0
    for li in range(start, head.after + 1):
        act = apply_layer(net.layers[li], act, quantized)
    probs = softmax(head_logits(head, act, quantized))
    new_cache = ForwardCache(head.after, act, quantized)
    return (probs[0] if single else probs), new_cache


def exit_features(net: NetworkDescriptor, x, quantized: bool = False) -> list[np.ndarray]:
    """Flattened head inputs for every exit, computed in one backbone pass."""
    act, _ = _as_batch(net, x)
    feats = []
    li = 0
    for head in net.exits:
        while li <= head.after:
            act = apply_layer(net.layers[li], act, quantized)
            li += 1
        a = act if head.in_index is None else act[:, list(head.in_index)]
        if quantized:
            a = quantize_input(head.layer, a)
        feats.append(a.reshape(a.shape[0], -1))
    return feats


def predict_all_exits(net: NetworkDescriptor, x, quantized: bool = False) -> np.ndarray:
    """Class probabilities at every exit, shape [num_exits, N, num_classes]."""
    if not net.heads_trained:
        raise StateError("exit heads are not trained")
    act, _ = _as_batch(net, x)
    out = []
    li = 0
    for head in net.exits:
        while li <= head.after:
            act = apply_layer(net.layers[li], act, quantized)
            li += 1
        out.append(softmax(head_logits(head, act, quantized)))
    return np.stack(out)


# --------------------------------------------------------- serialization

def _enc(a: np.ndarray | None):
    if a is None:
        return None
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "b64": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d):
    if d is None:
        return None
    if "b64" in d:
        a = np.frombuffer(base64.b64decode(d["b64"]), dtype="<f8")
    else:
        a = np.asarray(d["values"], dtype=np.float64)
    return a.reshape(d["shape"])


def _layer_to_dict(layer: Layer) -> dict:
    sp = layer.spec
    return {
        "name": layer.name,
        "kind": sp.kind,
        "c_in": sp.c_in,
        "c_out": sp.c_out,
        "kernel": sp.kernel,
        "stride": sp.stride,
        "input_spatial": list(sp.input_spatial),
        "base_c_in": layer.base_c_in,
        "w_bits": layer.w_bits,
        "a_bits": layer.a_bits,
        "act_max": layer.act_max,
        "act_signed": layer.act_signed,
        "weight": _enc(layer.weight),
        "bias": _enc(layer.bias),
    }


def _layer_from_dict(d: dict) -> Layer:
    spec = LayerSpec(d["kind"], d["c_in"], d["c_out"], d.get("kernel", 1), d.get("stride", 1),
                     tuple(d.get("input_spatial", (1, 1))))
    return Layer(d["name"], spec, _dec(d.get("weight")), _dec(d.get("bias")),
                 d.get("base_c_in", spec.c_in), d.get("w_bits", FULL_PRECISION),
                 d.get("a_bits", FULL_PRECISION), d.get("act_max"), d.get("act_signed", False))


def to_dict(net: NetworkDescriptor) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "heads_trained": net.heads_trained,
        "layers": [_layer_to_dict(l) for l in net.layers],
        "exits": [{"after": e.after,
                   "in_index": None if e.in_index is None else list(e.in_index),
                   "head": _layer_to_dict(e.layer)} for e in net.exits],
        "meta": net.meta,
    }


def from_dict(d: dict) -> NetworkDescriptor:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported descriptor schema {d.get('schema_version')!r}")
    exits = [ExitHead(e["after"], _layer_from_dict(e["head"]),
                      None if e.get("in_index") is None else tuple(e["in_index"]))
             for e in d["exits"]]
    return NetworkDescriptor(tuple(d["input_shape"]), tuple(_layer_from_dict(l) for l in d["layers"]),
                             tuple(exits), d["num_classes"], d.get("heads_trained", False),
                             d.get("meta", {}))


def save_descriptor(net: NetworkDescriptor, path) -> None:
    Path(path).write_text(json.dumps(to_dict(net), indent=1) + "\n", encoding="utf-8")


def load_descriptor(path) -> NetworkDescriptor:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a descriptor file ({exc})") from exc
    return from_dict(d)


# ------------------------------------------------------------ toy network

def build_toy_network(seed: int = 0, num_classes: int = 10, input_hw: int = 16) -> NetworkDescriptor:
    """Sequential conv backbone with three exits and seeded random weights.

    Backbone weights are Gaussian with variance 2/fan_in and never trained;
    exit heads start at zero until fitted.
    """
    rng = np.random.default_rng(seed)
    layers = []
    c, h = 1, input_hw

    def add(name, spec):
        nonlocal c, h
        weight = None
        if spec.weighted:
            fan_in = int(np.prod(spec.weight_shape[1:]))
            weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.weight_shape)
        layers.append(Layer(name, spec, weight))
        c = spec.c_out
        h = spec.output_spatial[0]

    add("conv1", LayerSpec("conv", c, 4, 3, 1, (h, h)))
    add("relu1", LayerSpec("relu", c, c, 1, 1, (h, h)))
    add("pool1", LayerSpec("maxpool", c, c, 2, 2, (h, h)))
    exit1_at = len(layers) - 1
    add("conv2", LayerSpec("conv", c, 16, 3, 1, (h, h)))
    add("relu2", LayerSpec("relu", c, c, 1, 1, (h, h)))
    exit2_at = len(layers) - 1
    add("conv3", LayerSpec("conv", c, 64, 3, 1, (h, h)))
    add("relu3", LayerSpec("relu", c, c, 1, 1, (h, h)))
    exit3_at = len(layers) - 1

    net_layers = tuple(layers)
    exits = []
    for i, at in enumerate((exit1_at, exit2_at, exit3_at), start=1):
        sp = net_layers[at].spec
        spec = LayerSpec("fc", sp.c_out, num_classes, 1, 1, sp.output_spatial)
        exits.append(ExitHead(at, Layer(f"exit{i}", spec, np.zeros(spec.weight_shape),
                                        np.zeros(num_classes))))
    return NetworkDescriptor((1, input_hw, input_hw), net_layers, tuple(exits), num_classes,
                             meta={"builder": "toy", "seed": seed})
