"""Pure numpy fallback kernels.

Mirrors the compiled extension operation for operation: reductions run in
ascending index order (np.cumsum is sequential by construction, and the
matmul loop adds one rank-1 term per step), multiplies and adds are rounded
separately, and the RNG transform evaluates the same libm expressions through
the math module. Slower than the compiled backend but numerically aligned
with it up to transcendental-function ulps.
"""

import math

import numpy as np

NAME = "pure"

_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586
_MASK64 = (1 << 64) - 1


def matmul(a, b, out):
    """out[m,p] = a[m,k] @ b[k,p], accumulated in ascending k order."""
    out[:] = 0
    tmp = np.empty_like(out)
    with np.errstate(over="ignore", invalid="ignore"):  # caller screens results
        for kk in range(a.shape[1]):
            np.multiply(a[:, kk, None], b[kk, None, :], out=tmp)
            np.add(out, tmp, out=out)


def softmax_masked(scores, mask, out):
    """Row softmax over entries with mask != 0; masked weights are exactly 0."""
    dt = scores.dtype
    valid = mask != 0
    any_valid = valid.any(axis=1)
    m = np.max(np.where(valid, scores, np.array(-np.inf, dtype=dt)), axis=1)
    m = np.where(any_valid, m, dt.type(0)).astype(dt)
    shifted = np.where(valid, scores - m[:, None], dt.type(0))
    e = np.exp(shifted)
    e[~valid] = 0
    s = np.cumsum(e, axis=1)[:, -1]
    s = np.where(any_valid, s, dt.type(1)).astype(dt)
    np.divide(e, s[:, None], out=out)
    out[~any_valid] = 0
    return (~any_valid).astype(np.uint8)


def softmax_backward(w, dw, out):
    """out = w * (dw - rowdot(dw, w)); the row dot sums in column order."""
    dot = np.cumsum(dw * w, axis=1, dtype=w.dtype)[:, -1]
    np.multiply(w, dw - dot[:, None], out=out)


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK64


def _xo_next(s):
    result = (_rotl((s[0] + s[3]) & _MASK64, 23) + s[0]) & _MASK64
    t = (s[1] << 17) & _MASK64
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def normal_fill(s0, s1, s2, s3, out):
    """Box-Muller fill matching the compiled kernel sample for sample."""
    s = [s0, s1, s2, s3]
    n = out.shape[0]
    i = 0
    while i < n:
        u1 = (_xo_next(s) >> 11) * _INV_2_53
        u2 = (_xo_next(s) >> 11) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        theta = _TWO_PI * u2
        out[i] = r * math.cos(theta)
        i += 1
        if i < n:
            out[i] = r * math.sin(theta)
            i += 1
    return tuple(s)
