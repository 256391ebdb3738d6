"""Continuous BV functions as (initial value, derivative measure) pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GluingError, ShapeError
from .measures import (
    DEFAULT_TOL,
    BaseMeasure,
    Density,
    Interval,
    LinearMap,
    VectorMeasure,
    _as_interval,
    add_measures,
    linear_image,
    measure_from_dict,
    measure_to_dict,
    restrict,
)


class BVFunction:
    """f(t) = f(a) + μ([a, t]) for a non-atomic vector measure μ = f'."""

    __slots__ = ("interval", "init", "deriv")

    def __init__(self, init, deriv: VectorMeasure):
        self.init = np.asarray(init, dtype=float)
        self.deriv = deriv
        self.interval = deriv.interval
        if self.init.shape != deriv.shape:
            raise ShapeError(
                f"initial value shape {self.init.shape} does not match measure shape {deriv.shape}"
            )

    @staticmethod
    def constant(value, interval) -> "BVFunction":
        value = np.asarray(value, dtype=float)
        return BVFunction(value, VectorMeasure.zero(interval, value.shape))

    @property
    def shape(self):
        return self.deriv.shape

    def eval_many(self, ts, tol: float = DEFAULT_TOL) -> np.ndarray:
        return self.init + self.deriv.cumulative(ts, tol=tol)

    def __call__(self, t, tol: float = DEFAULT_TOL):
        t = float(t)
        if not self.interval.contains(t):
            raise DomainError(f"t={t} outside [{self.interval.a}, {self.interval.b}]")
        return self.init + self.deriv.cumulative(np.array([t]), tol=tol)[0]

    def sample_grid(self, level: int = 8) -> np.ndarray:
        """Evaluation grid refined where the derivative concentrates mass."""
        pieces = [np.linspace(self.interval.a, self.interval.b, 2**level + 1)]
        for _, base in self.deriv.components:
            pieces.append(base.partition(self.interval, min(level, 20)))
        return np.unique(np.concatenate(pieces))

    def sup_norm(self, tol: float = 1e-9) -> float:
        """Sup norm by sampling on a doubling ladder until stable."""
        prev = None
        for level in range(6, 22):
            ts = self.sample_grid(level)
            vals = self.eval_many(ts)
            sup = float(np.max(np.linalg.norm(vals.reshape(len(vals), -1), axis=1)))
            scale = max(sup, 1.0)
            if prev is not None and abs(sup - prev) < tol * scale:
                return sup
            prev = sup
        return prev


@dataclass(frozen=True)
class BVNorms:
    bv: float
    bv_star: float
    sup: float


def norms(f: BVFunction, tol: float = DEFAULT_TOL) -> BVNorms:
    """‖f(a)‖ + ‖f'‖ and the standard ‖f‖_∞ + ‖f'‖."""
    var = f.deriv.variation(tol=tol)
    sup = f.sup_norm()
    return BVNorms(
        bv=float(np.linalg.norm(f.init.ravel()) + var),
        bv_star=float(sup + var),
        sup=sup,
    )


def split(f: BVFunction, breakpoints) -> list:
    """Restrictions of f to the cells of the given interior breakpoints."""
    a, b = f.interval.a, f.interval.b
    pts = sorted(float(t) for t in breakpoints)
    for t in pts:
        if not (a < t < b):
            raise DomainError(f"split point {t} not interior to [{a}, {b}]")
    cuts = [a] + pts + [b]
    pieces = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        init = f(np.clip(lo, a, b))
        pieces.append(BVFunction(init, restrict(f.deriv, (lo, hi))))
    return pieces


def glue(pieces, tol_glue: float = 1e-9) -> BVFunction:
    """Concatenate adjacent BV functions; endpoints must match."""
    pieces = list(pieces)
    if not pieces:
        raise DomainError("nothing to glue")
    for left, right in zip(pieces[:-1], pieces[1:]):
        if abs(left.interval.b - right.interval.a) > 1e-12 * max(1.0, abs(left.interval.b)):
            raise GluingError(
                f"pieces do not abut: [{left.interval.a},{left.interval.b}] then "
                f"[{right.interval.a},{right.interval.b}]"
            )
        gap = float(np.linalg.norm((left(left.interval.b) - right.init).ravel()))
        if gap > tol_glue:
            raise GluingError(
                f"endpoint mismatch {gap:.3e} exceeds tol_glue={tol_glue:.3e} at t={left.interval.b}",
                gap=gap,
            )
    interval = Interval(pieces[0].interval.a, pieces[-1].interval.b)
    comps = []
    for piece in pieces:
        comps.extend(piece.deriv.components)
    # windows are disjoint, so components may repeat bases without merging
    deriv = VectorMeasure(interval, pieces[0].shape, comps, canonicalize=False)
    return BVFunction(pieces[0].init, deriv)


def reparam_affine(f: BVFunction, target) -> BVFunction:
    """f∘α for the affine α: target → domain; an isometry for both norms."""
    target = _as_interval(target)
    src = f.interval
    k = src.length / target.length

    def alpha(s):
        return src.a + k * (np.asarray(s, dtype=float) - target.a)

    def alpha_inv(t):
        return target.a + (np.asarray(t, dtype=float) - src.a) / k

    comps = []
    for dens, base in f.deriv.components:
        comps.append((
            dens.reparam_affine(alpha, alpha_inv, k),
            base.affine_transport(alpha_inv, k),
        ))
    deriv = VectorMeasure(target, f.shape, comps, canonicalize=False)
    return BVFunction(f.init, deriv)


class C1Map:
    """Continuously differentiable map with a directional Jacobian.

    ``value(x)`` and ``jacobian_apply(x, v)`` are batched over the leading
    axis.  ``domain`` is an optional vectorized membership predicate for
    the open set the map lives on; range containment of paths is checked
    by sampling with a margin.
    """

    def __init__(self, value, jacobian_apply, domain=None, margin=1e-6, name="psi"):
        self.value = value
        self.jacobian_apply = jacobian_apply
        self.domain = domain
        self.margin = margin
        self.name = name

    @staticmethod
    def from_scalar(fn, dfn, name="psi") -> "C1Map":
        return C1Map(
            value=lambda x: fn(x),
            jacobian_apply=lambda x, v: dfn(x) * v,
            name=name,
        )

    @staticmethod
    def exp() -> "C1Map":
        return C1Map.from_scalar(np.exp, np.exp, name="exp")

    @staticmethod
    def from_jacobian_matrix(fn, jac, name="psi") -> "C1Map":
        """jac(x) returns (m, out_dim, in_dim) for vector-valued x."""
        def apply(x, v):
            J = jac(x)
            return np.einsum("mij,mj->mi", J, v.reshape(len(v), -1))
        return C1Map(value=fn, jacobian_apply=apply, name=name)


def fd_jacobian_apply(value, scale: float = 1.0):
    """Central-difference directional Jacobian; lower accuracy than analytic.

    Step is the cube root of machine epsilon times the scale.
    """
    step = (np.finfo(float).eps ** (1.0 / 3.0)) * scale

    def apply(x, v):
        return (value(x + step * v) - value(x - step * v)) / (2.0 * step)

    return apply


def _check_range(psi: C1Map, f: BVFunction, level: int = 10):
    if psi.domain is None:
        return
    ts = f.sample_grid(level)
    vals = f.eval_many(ts)
    ok = np.asarray(psi.domain(vals, psi.margin))
    if not np.all(ok):
        t_exit = float(ts[np.argmin(ok)])
        raise DomainError(
            f"path leaves the domain of {psi.name} near t={t_exit:.6g}"
        )


def compose_chain(psi: C1Map, f: BVFunction) -> BVFunction:
    """ψ∘f with derivative densities t ↦ ψ'(f(t))·ρ_i(t) on the same bases."""
    _check_range(psi, f)
    init = np.asarray(psi.value(f.init[None, ...]))[0]
    comps = []
    for dens, base in f.deriv.components:
        def density(ts, dens=dens):
            ts = np.asarray(ts, dtype=float)
            x = f.eval_many(ts)
            return psi.jacobian_apply(x, dens(ts))
        comps.append((
            Density.from_callable(density, base.window.as_tuple(), init.shape,
                                  breakpoints=dens.breakpoints),
            base,
        ))
    deriv = VectorMeasure(f.interval, init.shape, comps, canonicalize=False)
    return BVFunction(init, deriv)


class C2TimeMap:
    """φ(t, x) with partial derivatives in t and x (batched)."""

    def __init__(self, value, d_time, d_state_apply, domain=None, margin=1e-6, name="phi"):
        self.value = value
        self.d_time = d_time
        self.d_state_apply = d_state_apply
        self.domain = domain
        self.margin = margin
        self.name = name


def superpose_time(phi: C2TimeMap, f: BVFunction) -> BVFunction:
    """t ↦ φ(t, f(t)); adds a Lebesgue component for the explicit t-slot."""
    if phi.domain is not None:
        ts = f.sample_grid(10)
        ok = np.asarray(phi.domain(f.eval_many(ts), phi.margin))
        if not np.all(ok):
            t_exit = float(ts[np.argmin(ok)])
            raise DomainError(f"path leaves the domain of {phi.name} near t={t_exit:.6g}")
    a = f.interval.a
    init = np.asarray(phi.value(np.array([a]), f.init[None, ...]))[0]
    out_shape = init.shape

    def time_density(ts):
        ts = np.asarray(ts, dtype=float)
        return phi.d_time(ts, f.eval_many(ts))

    comps = [(
        Density.from_callable(time_density, f.interval.as_tuple(), out_shape),
        BaseMeasure.lebesgue(f.interval),
    )]
    for dens, base in f.deriv.components:
        def density(ts, dens=dens):
            ts = np.asarray(ts, dtype=float)
            return phi.d_state_apply(ts, f.eval_many(ts), dens(ts))
        comps.append((
            Density.from_callable(density, base.window.as_tuple(), out_shape,
                                  breakpoints=dens.breakpoints),
            base,
        ))
    deriv = VectorMeasure(f.interval, out_shape, comps, canonicalize=False)
    return BVFunction(init, deriv)


def linear_pushforward(alpha, f: BVFunction) -> BVFunction:
    """(α(f(a)), α∘f'); norms scale by at most the operator norm of α."""
    if not isinstance(alpha, LinearMap):
        alpha = LinearMap.from_matrix(alpha)
    return BVFunction(alpha(f.init[None, ...])[0], linear_image(alpha, f.deriv))


# -- serialization


def bvfunction_to_dict(f: BVFunction) -> dict:
    return {"init": np.asarray(f.init).tolist(), "deriv": measure_to_dict(f.deriv)}


def bvfunction_from_dict(d: dict) -> BVFunction:
    deriv = measure_from_dict(d["deriv"])
    return BVFunction(np.asarray(d["init"], dtype=float), deriv)
