"""Dense numeric substrate.

Tensors are plain numpy arrays in row-major order, float32 ("single") or
float64 ("double"). Mixed-precision operands are an error, never an implicit
cast. Reductions run in a fixed left-to-right order through the kernel
backends, so repeated runs (and both backends, for +-*/) agree bit for bit.
Public operations never let NaN or Inf escape: they raise instead.
"""

import numpy as np

from . import backends

PRECISIONS = {"single": np.float32, "double": np.float64}
_NAMES = {np.dtype(np.float32): "single", np.dtype(np.float64): "double"}


def dtype_for(precision):
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; use 'single' or 'double'") from None


def precision_of(x) -> str:
    try:
        return _NAMES[x.dtype]
    except KeyError:
        raise TypeError(f"unsupported dtype {x.dtype}; use float32 or float64") from None


def _check_pair(a, b, op):
    precision_of(a), precision_of(b)
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: precision mismatch ({a.dtype} vs {b.dtype})")


def _check_finite(x, op):
    if not np.isfinite(x).all():
        raise FloatingPointError(f"{op}: non-finite values in result")


def matmul(a, b) -> np.ndarray:
    """a[m,k] @ b[k,p] with ascending-k accumulation in a's precision."""
    _check_pair(a, b, "matmul")
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul: expected 2-d operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    out = np.empty((a.shape[0], b.shape[1]), dtype=a.dtype)
    backends.active().matmul(a, b, out)
    _check_finite(out, "matmul")
    return out


def matmul_nt(a, b) -> np.ndarray:
    """a[m,k] @ b[p,k].T; the transpose is materialized so the kernel sees
    contiguous rows and the same ascending-k reduction order."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"matmul_nt: shape mismatch {a.shape} x {b.shape}")
    return matmul(a, np.ascontiguousarray(b.T))


def matmul_tn(a, b) -> np.ndarray:
    """a[k,m].T @ b[k,p], via a materialized transpose of a."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"matmul_tn: shape mismatch {a.shape} x {b.shape}")
    return matmul(np.ascontiguousarray(a.T), b)


def add(a, b) -> np.ndarray:
    """Elementwise sum of same-shape, same-precision tensors."""
    _check_pair(a, b, "add")
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = a + b
    _check_finite(out, "add")
    return out


def softmax_masked(scores, mask):
    """Masked row softmax over the last axis.

    mask is boolean, True = participate. Per row the max over unmasked
    entries is subtracted before exponentiation; masked entries get weight
    exactly 0 and the normalizer sums in ascending slot order. Rows with no
    unmasked entry are a defined output: all-zero weights, flagged True in
    the returned fully_masked array (shape = scores.shape[:-1]).
    """
    precision_of(scores)
    if scores.shape != mask.shape:
        raise ValueError(f"softmax_masked: mask shape {mask.shape} != scores shape {scores.shape}")
    if not np.isfinite(scores).all():
        raise FloatingPointError("softmax_masked: non-finite scores")
    lead = scores.shape[:-1]
    cols = scores.shape[-1]
    s2 = np.ascontiguousarray(scores).reshape(-1, cols)
    m2 = np.ascontiguousarray(mask, dtype=bool).view(np.uint8).reshape(-1, cols)
    out = np.empty_like(s2)
    flags = backends.active().softmax_masked(s2, m2, out)
    _check_finite(out, "softmax_masked")
    return out.reshape(scores.shape), flags.reshape(lead).astype(bool)


def softmax_masked_backward(weights, d_weights) -> np.ndarray:
    """Jacobian-vector product of the masked softmax at the given weights."""
    _check_pair(weights, d_weights, "softmax_masked_backward")
    if weights.shape != d_weights.shape:
        raise ValueError("softmax_masked_backward: shape mismatch")
    cols = weights.shape[-1]
    w2 = np.ascontiguousarray(weights).reshape(-1, cols)
    d2 = np.ascontiguousarray(d_weights).reshape(-1, cols)
    out = np.empty_like(w2)
    backends.active().softmax_backward(w2, d2, out)
    _check_finite(out, "softmax_masked_backward")
    return out.reshape(weights.shape)


def l2_norm_rows(x) -> np.ndarray:
    """Euclidean norm of each row of x[m,d], squares summed in column order."""
    precision_of(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"l2_norm_rows: expected m x d with d >= 1, got {x.shape}")
    acc = np.zeros(x.shape[0], dtype=x.dtype)
    for k in range(x.shape[1]):
        col = x[:, k]
        acc = acc + col * col
    out = np.sqrt(acc)
    _check_finite(out, "l2_norm_rows")
    return out
