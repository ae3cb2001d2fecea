"""Hot numeric kernels.

Each kernel has two implementations with identical semantics: a loop version
compiled with ``numba.njit`` and a vectorized numpy version. The loop version
is used when numba imports cleanly, unless ``EHEXIT_DISABLE_NUMBA=1`` is set
in the environment before import.
"""
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("EHEXIT_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def _maybe_njit(fn):
    if HAVE_NUMBA:
        return njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------- conv2d

def conv2d_numpy(x, w, stride):
    """Valid cross-correlation. x: [N, C, H, W], w: [F, C, k, k]."""
    k = w.shape[2]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    # win: [N, C, Ho, Wo, k, k]
    return np.einsum("nchwij,fcij->nfhw", win, w, optimize=True)


@_maybe_njit
def _conv2d_loops(x, w, stride):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1
    # im2col, then one matrix product
    cols = np.empty((n * ho * wo, c * k * k))
    r = 0
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                q = 0
                for ci in range(c):
                    for di in range(k):
                        for dj in range(k):
                            cols[r, q] = x[b, ci, i * stride + di, j * stride + dj]
                            q += 1
                r += 1
    out = np.dot(cols, np.ascontiguousarray(w.reshape(f, c * k * k).T))
    return np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))


def conv2d_numba(x, w, stride):
    return _conv2d_loops(np.ascontiguousarray(x, dtype=np.float64),
                         np.ascontiguousarray(w, dtype=np.float64), int(stride))


# --------------------------------------------------------------- maxpool

def maxpool2d_numpy(x, k, stride):
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride].max(axis=(4, 5))


@_maybe_njit
def _maxpool_loops(x, k, stride):
    n, c, h, wd = x.shape
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1
    out = np.empty((n, c, ho, wo))
    for b in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    m = x[b, ci, i * stride, j * stride]
                    for di in range(k):
                        for dj in range(k):
                            v = x[b, ci, i * stride + di, j * stride + dj]
                            if v > m:
                                m = v
                    out[b, ci, i, j] = m
    return out


def maxpool2d_numba(x, k, stride):
    return _maxpool_loops(np.ascontiguousarray(x, dtype=np.float64), int(k), int(stride))


# ------------------------------------------------- quantization error sweep

def quant_sq_errors_numpy(w, scales, qmin, qmax, chunk=256):
    """Squared L2 error of clamp(round(w/s), qmin, qmax)*s for each s in scales."""
    w = np.asarray(w, dtype=np.float64).ravel()
    out = np.empty(len(scales))
    for start in range(0, len(scales), chunk):
        s = np.asarray(scales[start:start + chunk], dtype=np.float64)[:, None]
        q = np.clip(np.rint(w[None, :] / s), qmin, qmax) * s
        out[start:start + chunk] = ((q - w[None, :]) ** 2).sum(axis=1)
    return out


@_maybe_njit
def _quant_sq_errors_loops(w, scales, qmin, qmax):
    out = np.empty(scales.shape[0])
    for i in range(scales.shape[0]):
        s = scales[i]
        acc = 0.0
        for j in range(w.shape[0]):
            q = np.rint(w[j] / s)
            if q < qmin:
                q = qmin
            elif q > qmax:
                q = qmax
            d = q * s - w[j]
            acc += d * d
        out[i] = acc
    return out


def quant_sq_errors_numba(w, scales, qmin, qmax):
    return _quant_sq_errors_loops(np.ascontiguousarray(w, dtype=np.float64).ravel(),
                                  np.ascontiguousarray(scales, dtype=np.float64),
                                  float(qmin), float(qmax))


# ------------------------------------------------------- capped charging

def charge_capped_numpy(level, cap, increments):
    """Store level after each nonnegative increment, clipped at cap.

    Returns (levels, absorbed) where absorbed[i] is the energy actually taken in
    by step i. Valid because increments are nonnegative: once full, the store
    stays full until something is spent.
    """
    inc = np.asarray(increments, dtype=np.float64)
    levels = np.minimum(cap, level + np.cumsum(inc))
    absorbed = np.diff(np.concatenate(([level], levels)))
    return levels, absorbed


@_maybe_njit
def _charge_capped_loops(level, cap, inc):
    levels = np.empty(inc.shape[0])
    absorbed = np.empty(inc.shape[0])
    cur = level
    for i in range(inc.shape[0]):
        nxt = cur + inc[i]
        if nxt > cap:
            nxt = cap
        absorbed[i] = nxt - cur
        levels[i] = nxt
        cur = nxt
    return levels, absorbed


def charge_capped_numba(level, cap, increments):
    return _charge_capped_loops(float(level), float(cap),
                                np.ascontiguousarray(increments, dtype=np.float64))


if USE_NUMBA:
    conv2d = conv2d_numba
    maxpool2d = maxpool2d_numba
    quant_sq_errors = quant_sq_errors_numba
    charge_capped = charge_capped_numba
else:
    conv2d = conv2d_numpy
    maxpool2d = maxpool2d_numpy
    quant_sq_errors = quant_sq_errors_numpy
    charge_capped = charge_capped_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
