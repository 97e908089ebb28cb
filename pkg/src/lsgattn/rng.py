"""Deterministic seeded randomness.

The generator is xoshiro256++ seeded through splitmix64, with normals drawn
by Box-Muller. The exact update rules, so that any implementation can
reproduce the stream bit for bit:

splitmix64 (seeding): x += 0x9E3779B97F4A7C15; z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
    output z ^ (z >> 31). The four generator words s0..s3 are four
    consecutive outputs starting from the 64-bit seed.

xoshiro256++ (next word): result = rotl64(s0 + s3, 23) + s0;
    t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t;
    s3 = rotl64(s3, 45). All arithmetic mod 2**64.

uniform in [0, 1): (word >> 11) * 2**-53 (exact in double).

standard normal: consecutive outputs are paired; each pair draws
    (u1, u2) and yields r*cos(theta), r*sin(theta) with
    r = sqrt(-2*log(1 - u1)) and theta = 6.283185307179586 * u2.
    An odd tail consumes a full (u1, u2) draw and keeps the cosine branch.
    Pairing restarts at every normal() call; only the word stream persists.

The integer stream and the uniform transform are exact and portable. The
normal transform goes through libm's log/cos/sin, so its bits are tied to
the platform's libm; both backends call the same libm and agree bit for bit
on one machine.
"""

import numpy as np

from . import backends

_MASK64 = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


class Rng:
    """Single-owner deterministic generator. Never share one across threads;
    derive independent seeds instead (e.g. via Rng.derive)."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        x = self.seed
        words = []
        for _ in range(4):
            x, w = _splitmix64(x)
            words.append(w)
        if not any(words):  # xoshiro state must be nonzero
            words[0] = 0x9E3779B97F4A7C15
        self._state = tuple(words)

    def derive(self, tag: int) -> "Rng":
        """Independent generator for a subtask; never reuse a tag."""
        return Rng(self.seed ^ _splitmix64(tag & _MASK64)[1])

    def next_word(self) -> int:
        s = list(self._state)
        result = backends.pure._xo_next(s)
        self._state = tuple(s)
        return result

    def uniform(self) -> float:
        return (self.next_word() >> 11) * (1.0 / 9007199254740992.0)

    def normal(self, shape, precision="double") -> np.ndarray:
        """I.i.d. standard normals with the documented Box-Muller pairing.

        Samples are always generated in double and cast down for single
        precision, so both precisions see the same underlying stream.
        """
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = 1
        for extent in shape:
            if extent < 0:
                raise ValueError(f"negative extent in shape {shape}")
            count *= extent
        buf = np.empty(count, dtype=np.float64)
        self._state = backends.active().normal_fill(*self._state, buf)
        out = buf.reshape(shape)
        if precision in ("single", np.float32):
            return out.astype(np.float32)
        if precision in ("double", np.float64):
            return out
        raise ValueError(f"unknown precision {precision!r}")


def rng_normal(rng: Rng, shape, precision="double") -> np.ndarray:
    """Functional spelling of Rng.normal; advances the generator state."""
    return rng.normal(shape, precision)
