"""Cantor function, its generalized inverse, moments and triadic cells.

All evaluations are exact for the float64 inputs they receive: ternary
digits are extracted with two-limb integer arithmetic that never rounds,
so the staircase value is the true value of the mathematical function at
the representable input.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

_LIMB = 2.0**27  # low-limb radix; 19683 * limb stays exactly representable
_CHUNK = 3**9  # nine ternary digits per round


@lru_cache(maxsize=1)
def _cdf_tables():
    """Per-chunk lookup: emitted binary digits and stop flag.

    For nine ternary digits d1..d9 the staircase emits binary digits
    d_i/2 until the first digit 1, which emits a final 1 and stops.
    """
    bits = np.zeros(_CHUNK)
    stop = np.zeros(_CHUNK, dtype=bool)
    for c in range(_CHUNK):
        digits = []
        v = c
        for _ in range(9):
            digits.append(v % 3)
            v //= 3
        digits.reverse()
        acc = 0
        for i, d in enumerate(digits):
            if d == 1:
                acc += 1 << (8 - i)
                stop[c] = True
                break
            acc += (d // 2) << (8 - i)
        bits[c] = acc / 512.0
    return bits, stop


@lru_cache(maxsize=1)
def _quantile_table():
    tern = np.zeros(512)
    for b in range(512):
        acc = 0.0
        for i in range(9):
            if (b >> (8 - i)) & 1:
                acc += 2.0 * 3.0 ** (-(i + 1))
        tern[b] = acc
    return tern


def cantor_cdf(x):
    """Cantor ("devil's staircase") function on [0, 1], vectorized.

    Exact for the float64 inputs received: ternary digits are extracted
    with two-limb integer arithmetic that never rounds.  Values outside
    [0, 1] are clamped.
    """
    bits, stop = _cdf_tables()
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(np.clip(x, 0.0, 1.0))

    # exact two-limb fixed point representation of x as n / 2**54
    n = np.floor(x * 2.0**54)
    n = np.minimum(n, 2.0**54 - 2.0)
    hi = np.floor(n / _LIMB)
    lo = n - hi * _LIMB

    out = np.zeros_like(x)
    alive = np.ones(x.shape, dtype=bool)
    scale = 1.0
    for _ in range(6):
        hi = _CHUNK * hi
        lo = _CHUNK * lo
        carry = np.floor(lo / _LIMB)
        lo -= carry * _LIMB
        hi += carry
        chunk = np.floor(hi / _LIMB)
        hi -= chunk * _LIMB
        idx = chunk.astype(np.int64)
        out += np.where(alive, bits[idx], 0.0) * scale
        alive &= ~stop[idx]
        scale *= 1.0 / 512.0
    out[x >= 1.0] = 1.0
    return float(out[0]) if scalar else out


def cantor_quantile(u):
    """Generalized inverse q(u) = inf{x : C(x) >= u}, vectorized.

    Maps the binary digits of u to ternary digits 0/2; lands on the
    Cantor set (left edge of plateaus at dyadic u).
    """
    tern = _quantile_table()
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(np.clip(u, 0.0, 1.0))

    m = np.floor(u * 2.0**54)
    m = np.minimum(m, 2.0**54 - 2.0)
    out = np.zeros_like(u)
    scale = 1.0
    weight = 2.0**45
    for _ in range(6):
        b = np.floor(m / weight)
        m -= b * weight
        out += tern[b.astype(np.int64)] * scale
        scale /= _CHUNK
        weight /= 512.0
    out[u >= 1.0] = 1.0
    return float(out[0]) if scalar else out


@lru_cache(maxsize=None)
def cantor_moments(kmax: int) -> tuple:
    """Moments ∫ x^k dC(x) on [0,1], k = 0..kmax, exact via self-similarity."""
    binom = [[Fraction(math.comb(a, j)) for j in range(a + 1)] for a in range(kmax + 1)]
    mom = [Fraction(1)]
    for k in range(1, kmax + 1):
        s = Fraction(0)
        for j in range(k):
            s += binom[k][j] * Fraction(2) ** (k - j) * mom[j]
        mom.append(s / (2 * (Fraction(3) ** k - 1)))
    return tuple(float(v) for v in mom)


@lru_cache(maxsize=None)
def cantor_rule(npts: int = 12):
    """Nodes/weights on [0,1] exact for polynomials of degree < npts vs dC.

    Chebyshev nodes with weights fitted to the exact moments; scaled by
    self-similarity onto any triadic cell.
    """
    k = np.arange(npts)
    nodes = 0.5 - 0.5 * np.cos((2 * k + 1) * np.pi / (2 * npts))
    vander = np.vander(nodes, npts, increasing=True).T
    weights = np.linalg.solve(vander, np.array(cantor_moments(npts - 1)))
    return nodes, weights


def triadic_cells(level: int) -> np.ndarray:
    """Left endpoints of the 2**level mass-bearing triadic cells of [0,1]."""
    lefts = np.array([0.0])
    w = 1.0
    for _ in range(level):
        w /= 3.0
        lefts = np.concatenate([lefts, lefts + 2.0 * w])
    return np.sort(lefts)
