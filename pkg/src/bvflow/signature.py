"""Truncated tensor algebra and truncated signatures of BV paths.

The signature is computed as the solution of the measure-driven equation
dS = S ⊗ df' through the contraction solver, which handles singular
drivers (Cantor components) the same way as absolutely continuous ones.
"""

from __future__ import annotations

import numpy as np

from .bvfunction import BVFunction, split
from .errors import DomainError, ShapeError
from .ode import RHS, solve_global

MAX_LEVEL = 6
MAX_DIM = 4


class TruncatedTensor:
    """Element of the degree-≤N truncated tensor algebra over ℝ^d.

    ``levels[k]`` holds the degree-k coefficients with shape (d,)*k;
    level 0 is a scalar.
    """

    __slots__ = ("d", "N", "levels")

    def __init__(self, d: int, N: int, levels):
        self.d = int(d)
        self.N = int(N)
        self.levels = [np.asarray(lv, dtype=float) for lv in levels]
        if len(self.levels) != self.N + 1:
            raise ShapeError("need one coefficient array per level 0..N")
        for k, lv in enumerate(self.levels):
            if lv.shape != (self.d,) * k:
                raise ShapeError(f"level {k} must have shape {(self.d,) * k}")

    @staticmethod
    def unit(d: int, N: int) -> "TruncatedTensor":
        return TruncatedTensor(d, N, [np.ones(()) if k == 0 else np.zeros((d,) * k)
                                      for k in range(N + 1)])

    @staticmethod
    def from_word_vector(d: int, N: int, level1) -> "TruncatedTensor":
        out = TruncatedTensor.unit(d, N)
        out.levels[0] = np.zeros(())
        out.levels[1] = np.asarray(level1, dtype=float)
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([lv.ravel() for lv in self.levels])

    @staticmethod
    def from_flat(d: int, N: int, vec) -> "TruncatedTensor":
        vec = np.asarray(vec, dtype=float)
        levels = []
        pos = 0
        for k in range(N + 1):
            size = d**k
            levels.append(vec[pos:pos + size].reshape((d,) * k))
            pos += size
        return TruncatedTensor(d, N, levels)

    def __repr__(self):
        return f"TruncatedTensor(d={self.d}, N={self.N}, level1={self.levels[1] if self.N else None})"


def _check_compat(s: TruncatedTensor, t: TruncatedTensor):
    if s.d != t.d or s.N != t.N:
        raise ShapeError("tensors live in different truncated algebras")


def tensor_mul(s: TruncatedTensor, t: TruncatedTensor) -> TruncatedTensor:
    """Graded convolution product, truncated above level N."""
    _check_compat(s, t)
    d, N = s.d, s.N
    levels = []
    for k in range(N + 1):
        acc = np.zeros((d,) * k)
        for i in range(k + 1):
            a = s.levels[i].reshape(-1)
            b = t.levels[k - i].reshape(-1)
            acc += np.outer(a, b).reshape((d,) * k)
        levels.append(acc)
    return TruncatedTensor(d, N, levels)


def tensor_exp(v: TruncatedTensor) -> TruncatedTensor:
    """exp in the truncated algebra; the input must have zero level-0 part."""
    if abs(float(v.levels[0])) > 0:
        raise DomainError("tensor exp needs a vanishing level-0 part")
    out = TruncatedTensor.unit(v.d, v.N)
    power = TruncatedTensor.unit(v.d, v.N)
    for m in range(1, v.N + 1):
        power = tensor_mul(power, v)
        power.levels = [lv / m for lv in power.levels]
        out.levels = [a + b for a, b in zip(out.levels, power.levels)]
    return out


def tensor_log(s: TruncatedTensor) -> TruncatedTensor:
    """log in the truncated algebra; the input must have level-0 part 1."""
    if abs(float(s.levels[0]) - 1.0) > 1e-12:
        raise DomainError("tensor log needs level-0 part equal to 1")
    x = TruncatedTensor(s.d, s.N, [lv.copy() for lv in s.levels])
    x.levels[0] = np.zeros(())
    out = TruncatedTensor(s.d, s.N, [np.zeros((s.d,) * k) for k in range(s.N + 1)])
    power = TruncatedTensor.unit(s.d, s.N)
    sign = 1.0
    for m in range(1, s.N + 1):
        power = tensor_mul(power, x)
        out.levels = [a + sign * b / m for a, b in zip(out.levels, power.levels)]
        sign = -sign
    return out


def _signature_rhs(d: int, N: int) -> RHS:
    sizes = [d**k for k in range(N + 1)]
    offsets = np.cumsum([0] + sizes)
    D = int(offsets[-1])

    def apply(v, S):
        v = np.asarray(v, dtype=float)
        S = np.asarray(S, dtype=float)
        out = np.zeros_like(S)
        for k in range(N):
            chunk = S[:, offsets[k]:offsets[k + 1]]
            prod = chunk[:, :, None] * v[:, None, :]
            out[:, offsets[k + 1]:offsets[k + 2]] = prod.reshape(len(S), -1)
        return out

    return RHS(
        apply=apply,
        lipschitz=1.0,
        sup_bound=lambda c, R: float(np.linalg.norm(np.asarray(c).ravel())) + R,
        name=f"signature:{d}:{N}",
    )


def signature(f: BVFunction, N: int, tol: float = 1e-10, with_path: bool = False):
    """Truncated signature of a BV path: solves dS = S ⊗ df'.

    Returns the endpoint tensor, optionally with the full solve report
    (whose solution is the signature path in flat coordinates).
    """
    if N < 1:
        raise DomainError("signature level must be at least 1")
    if len(f.shape) != 1:
        raise ShapeError("signature needs an ℝ^d-valued path")
    d = f.shape[0]
    if N > MAX_LEVEL or d > MAX_DIM:
        raise DomainError(f"desk scale enforced: N ≤ {MAX_LEVEL}, d ≤ {MAX_DIM}")
    rhs = _signature_rhs(d, N)
    S0 = TruncatedTensor.unit(d, N).flat()
    report = solve_global(rhs, f.deriv, f.interval.a, S0, tol=tol)
    end = report.extras["eta"](np.array([f.interval.b]))[0]
    tensor = TruncatedTensor.from_flat(d, N, end)
    if with_path:
        return tensor, report
    return tensor


def chen_check(f: BVFunction, c: float, N: int, tol: float = 1e-10) -> dict:
    """Chen identity report: signature(f|[a,c]) ⊗ signature(f|[c,b]) vs whole."""
    a, b = f.interval.a, f.interval.b
    if not (a < c < b):
        raise DomainError(f"split point {c} must be interior to [{a}, {b}]")
    left, right = split(f, [c])
    s_left = signature(left, N, tol=tol)
    s_right = signature(right, N, tol=tol)
    s_whole = signature(f, N, tol=tol)
    combined = tensor_mul(s_left, s_right)
    gaps = [float(np.max(np.abs(x - y))) if x.ndim else float(abs(x - y))
            for x, y in zip(combined.levels, s_whole.levels)]
    return {
        "max_gap": max(gaps),
        "per_level": gaps,
        "combined": combined,
        "whole": s_whole,
    }
