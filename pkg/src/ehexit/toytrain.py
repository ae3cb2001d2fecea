"""Synthetic template dataset and closed-form ridge training of exit heads."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, StateError
from .netcore import ExitHead, NetworkDescriptor, exit_features, predict_all_exits

TEMPLATE_SEED = 12345


@dataclass(frozen=True)
class ToyDataset:
    images: np.ndarray  # [N, 1, H, W]
    labels: np.ndarray  # [N]
    split: str
    seed: int
    noise_sigma: float

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def export(self, prefix) -> None:
        """Flat little-endian binary (images f8 then labels i8) plus a JSON manifest."""
        prefix = Path(prefix)
        with open(prefix.with_suffix(".bin"), "wb") as fh:
            fh.write(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        manifest = {"images_shape": list(self.images.shape), "labels_shape": list(self.labels.shape),
                    "dtype_images": "<f8", "dtype_labels": "<i8", "split": self.split,
                    "seed": self.seed, "noise_sigma": self.noise_sigma, "sha256": self.checksum()}
        prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def class_templates(num_classes: int, hw: int = 16, seed: int = TEMPLATE_SEED) -> np.ndarray:
    """Smooth random patterns in [0, 1], one per class."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:hw, 0:hw] / (hw - 1)
    out = np.zeros((num_classes, hw, hw))
    for c in range(num_classes):
        img = np.zeros((hw, hw))
        for _ in range(3):
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            sy, sx = rng.uniform(0.08, 0.3, size=2)
            img += rng.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
        img -= img.min()
        out[c] = img / img.max()
    return out


def gen_dataset(num_classes: int, n_per_class: int, noise_sigma: float, seed: int,
                split: str = "train", hw: int = 16, max_shift: int = 0) -> ToyDataset:
    """Class templates plus Gaussian noise, optionally circularly shifted.

    ``max_shift`` > 0 rolls each template by a uniform offset in
    [-max_shift, max_shift] on both axes before noise is added; this is what
    makes deeper (pooled) features more useful than shallow ones.
    """
    if num_classes < 2:
        raise ConfigError("need at least two classes")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be positive")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be nonnegative")
    templates = class_templates(num_classes, hw)
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.repeat(np.arange(num_classes), n_per_class)
    images = templates[labels].copy()
    if max_shift:
        shifts = rng.integers(-max_shift, max_shift + 1, size=(len(labels), 2))
        for i, (dy, dx) in enumerate(shifts):
            images[i] = np.roll(images[i], (dy, dx), axis=(0, 1))
    images += noise_sigma * rng.standard_normal((len(labels), hw, hw))
    perm = rng.permutation(len(labels))
    return ToyDataset(images[perm][:, None], labels[perm], split, seed, float(noise_sigma))


@dataclass(frozen=True)
class RidgeFit:
    lam: float
    shape: tuple[int, int]
    residual: float
    scale: float

    @property
    def relative_residual(self) -> float:
        return self.residual / self.scale


def ridge_solve(X: np.ndarray, Y: np.ndarray, lam: float) -> tuple[np.ndarray, RidgeFit]:
    """Solve (X^T X + lam I) B = X^T Y by Cholesky, with 1e-8 jitter on failure."""
    A = X.T @ X
    rhs = X.T @ Y
    A_reg = A + lam * np.eye(A.shape[0])
    try:
        B = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A_reg), rhs)
    except np.linalg.LinAlgError:
        try:
            B = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A_reg + 1e-8 * np.eye(A.shape[0])), rhs)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular ridge system (lambda={lam})") from exc
    res = float(np.linalg.norm(A_reg @ B - rhs))
    scale = float(np.linalg.norm(A_reg) * np.linalg.norm(B) + np.linalg.norm(rhs)) or 1.0
    return B, RidgeFit(float(lam), X.shape, res, scale)


def fit_exit_heads(net: NetworkDescriptor, data: ToyDataset, lam: float = 1.0,
                   quantized: bool = True, tol: float = 1e-6):
    """Refit every exit head by ridge regression on one-hot targets.

    Returns (net with trained heads, list of RidgeFit). Head weights come back
    at full precision; callers re-quantize them if a policy asks for it.
    """
    if lam < 0:
        raise ConfigError("ridge lambda must be nonnegative")
    feats = exit_features(net, data.images, quantized)
    Y = np.eye(net.num_classes)[data.labels]
    heads, fits = [], []
    for head, F in zip(net.exits, feats):
        X = np.hstack([F, np.ones((F.shape[0], 1))])
        B, fit = ridge_solve(X, Y, lam)
        if not fit.relative_residual <= tol:
            raise NumericalError(f"ridge residual {fit.relative_residual:.3g} exceeds {tol}")
        spec = head.layer.spec
        W = B[:-1].T.reshape(spec.weight_shape)
        layer = replace(head.layer, weight=W, bias=B[-1].copy(), w_bits=32)
        heads.append(ExitHead(head.after, layer, head.in_index))
        fits.append(fit)
    return replace(net, exits=tuple(heads), heads_trained=True), fits


def eval_accuracy(net: NetworkDescriptor, data: ToyDataset, exit: int | None = None,
                  quantized: bool = True):
    """Top-1 accuracy at one exit, or a list over all exits when ``exit`` is None."""
    if not net.heads_trained:
        raise StateError("exit heads are not trained")
    probs = predict_all_exits(net, data.images, quantized)
    accs = [(p.argmax(axis=1) == data.labels).mean() for p in probs]
    accs = [float(a) for a in accs]
    return accs if exit is None else accs[exit]


def calibrate(net: NetworkDescriptor, data: ToyDataset) -> NetworkDescriptor:
    """Record the maximum input activation of every weighted layer over ``data``.

    The pass runs with weight quantization in place but activation
    quantization off, so each layer sees the float activations it would
    otherwise clamp.
    """
    from .netcore import apply_layer

    act = np.asarray(data.images, dtype=np.float64)
    layers = list(net.layers)
    heads = list(net.exits)
    head_at = {e.after: i for i, e in enumerate(net.exits)}

    def record(layer, x):
        m = float(np.abs(x).max()) if x.size else 0.0
        return replace(layer, act_max=m, act_signed=bool((x < 0).any()))

    for li, layer in enumerate(net.layers):
        if layer.spec.weighted:
            layers[li] = record(layer, act)
        act = apply_layer(layer, act, quantized=False)
        if li in head_at:
            h = heads[head_at[li]]
            x = act if h.in_index is None else act[:, list(h.in_index)]
            heads[head_at[li]] = ExitHead(h.after, record(h.layer, x), h.in_index)
    return replace(net, layers=tuple(layers), exits=tuple(heads))
