# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: fixed-order matmul, masked softmax, RNG fill.

Every per-element reduction runs left to right (ascending index), matching
the operation order of the pure numpy backend bit for bit for +, -, *, /
(transcendentals may differ in the last ulp between backends). Compiled with
-ffp-contract=off so multiply/add pairs are rounded separately, exactly like
the two-step numpy evaluation.
"""

import numpy as np

from libc.math cimport cos, exp, expf, log, sin, sqrt

NAME = "compiled"

ctypedef fused real:
    float
    double


def matmul(real[:, ::1] a, real[:, ::1] b, real[:, ::1] out):
    """out[m,p] = a[m,k] @ b[k,p], accumulated in ascending k order."""
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t i, kk, j
    cdef real aik
    with nogil:
        for i in range(m):
            for j in range(p):
                out[i, j] = 0
            for kk in range(k):
                aik = a[i, kk]
                for j in range(p):
                    out[i, j] = out[i, j] + aik * b[kk, j]


def softmax_masked(real[:, ::1] scores, const unsigned char[:, ::1] mask,
                   real[:, ::1] out):
    """Row softmax over entries with mask != 0; masked weights are exactly 0.

    The row max over unmasked entries is subtracted before exponentiation and
    the normalizer is summed in ascending column order. Returns a uint8 array
    flagging rows with no unmasked entry (their weights are all zero).
    """
    cdef Py_ssize_t rows = scores.shape[0], cols = scores.shape[1]
    flags = np.zeros(rows, dtype=np.uint8)
    cdef unsigned char[::1] fm = flags
    cdef Py_ssize_t i, j
    cdef real m, s, e
    cdef bint seen
    with nogil:
        for i in range(rows):
            seen = False
            m = 0
            for j in range(cols):
                if mask[i, j]:
                    if not seen or scores[i, j] > m:
                        m = scores[i, j]
                    seen = True
            if not seen:
                for j in range(cols):
                    out[i, j] = 0
                fm[i] = 1
                continue
            s = 0
            for j in range(cols):
                if mask[i, j]:
                    if real is float:
                        e = expf(scores[i, j] - m)
                    else:
                        e = exp(scores[i, j] - m)
                    out[i, j] = e
                    s = s + e
                else:
                    out[i, j] = 0
            for j in range(cols):
                out[i, j] = out[i, j] / s
    return flags


def softmax_backward(real[:, ::1] w, real[:, ::1] dw, real[:, ::1] out):
    """out = w * (dw - rowdot(dw, w)), the masked-softmax Jacobian product.

    Masked columns carry w == 0 and therefore contribute nothing and receive
    zero gradient. The row dot product is summed in ascending column order.
    """
    cdef Py_ssize_t rows = w.shape[0], cols = w.shape[1]
    cdef Py_ssize_t i, j
    cdef real dot
    with nogil:
        for i in range(rows):
            dot = 0
            for j in range(cols):
                dot = dot + dw[i, j] * w[i, j]
            for j in range(cols):
                out[i, j] = w[i, j] * (dw[i, j] - dot)


cdef inline unsigned long long _rotl(unsigned long long x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline unsigned long long _xo_next(unsigned long long* s) nogil:
    # xoshiro256++
    cdef unsigned long long result = _rotl(s[0] + s[3], 23) + s[0]
    cdef unsigned long long t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def normal_fill(unsigned long long s0, unsigned long long s1,
                unsigned long long s2, unsigned long long s3,
                double[::1] out):
    """Fill out with standard normals via Box-Muller over xoshiro256++ words.

    Pairing is fixed: consecutive output slots share one (u1, u2) draw; an
    odd-length tail consumes a full draw and keeps only the cosine branch.
    Returns the advanced generator state.
    """
    cdef Py_ssize_t n = out.shape[0], i = 0
    cdef unsigned long long s[4]
    cdef double u1, u2, r, theta
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3
    with nogil:
        while i < n:
            u1 = <double>(_xo_next(s) >> 11) * (1.0 / 9007199254740992.0)
            u2 = <double>(_xo_next(s) >> 11) * (1.0 / 9007199254740992.0)
            r = sqrt(-2.0 * log(1.0 - u1))
            theta = 6.283185307179586 * u2
            out[i] = r * cos(theta)
            i += 1
            if i < n:
                out[i] = r * sin(theta)
                i += 1
    return (s[0], s[1], s[2], s[3])
