"""Bilinear measure products and the right-hand-side constructor.

The primary construction is always the density formula: for μ = Σ ρ_i dν_i,
the product path⊙βμ has densities t ↦ β(path(t), ρ_i(t)) over the same
bases.  The simple-function construction is kept as a brute-force oracle
for tests.
"""

from __future__ import annotations

import numpy as np

from .bvfunction import BVFunction
from .errors import DomainError, ShapeError
from .measures import (
    DEFAULT_TOL,
    Density,
    Interval,
    VectorMeasure,
    _as_interval,
    linear_image,
    measure_eval,
)


class BilinearMap:
    """Continuous bilinear map β: E1 × E2 → F with an operator-norm bound.

    The evaluator is batched over the leading axis.  Bilinearity is
    spot-checked on construction (seeded samples, tolerance 1e-12).
    """

    def __init__(self, evaluator, in1_shape, in2_shape, out_shape, opnorm_bound,
                 check: bool = True):
        self.evaluator = evaluator
        self.in1_shape = tuple(in1_shape)
        self.in2_shape = tuple(in2_shape)
        self.out_shape = tuple(out_shape)
        self.opnorm_bound = float(opnorm_bound)
        if check:
            self._spot_check()

    def __call__(self, x, y):
        return self.evaluator(x, y)

    def _spot_check(self, n: int = 8, tol: float = 1e-12):
        rng = np.random.default_rng(20240917)
        x = rng.standard_normal((n,) + self.in1_shape)
        xp = rng.standard_normal((n,) + self.in1_shape)
        y = rng.standard_normal((n,) + self.in2_shape)
        c = 1.7
        add = self(x + xp, y) - self(x, y) - self(xp, y)
        hom = self(c * x, y) - c * self(x, y)
        scale = 1.0 + float(np.max(np.abs(self(x, y))))
        if np.max(np.abs(add)) > tol * scale or np.max(np.abs(hom)) > tol * scale:
            raise ShapeError("evaluator is not bilinear in its first slot")
        add2 = self(x, y + y) - 2.0 * self(x, y)
        if np.max(np.abs(add2)) > tol * scale:
            raise ShapeError("evaluator is not bilinear in its second slot")

    @staticmethod
    def scalar_mult() -> "BilinearMap":
        return BilinearMap(lambda c, v: c * v, (), (), (), 1.0)

    @staticmethod
    def scaling(shape) -> "BilinearMap":
        """(c, v) ↦ c·v for scalar c and shaped v."""
        shape = tuple(shape)
        expand = (...,) + (None,) * len(shape)
        return BilinearMap(lambda c, v: c[expand] * v, (), shape, shape, 1.0)

    @staticmethod
    def matmul(n: int) -> "BilinearMap":
        return BilinearMap(
            lambda a, b: np.einsum("mij,mjk->mik", a, b),
            (n, n), (n, n), (n, n), float(np.sqrt(n)),
        )

    @staticmethod
    def matvec(n: int, m: int) -> "BilinearMap":
        return BilinearMap(
            lambda a, v: np.einsum("mij,mj->mi", a, v),
            (n, m), (m,), (n,), 1.0,
        )

    @staticmethod
    def dot(d: int) -> "BilinearMap":
        return BilinearMap(
            lambda x, y: np.einsum("mi,mi->m", x, y),
            (d,), (d,), (), 1.0,
        )


class StepFunction:
    """Piecewise-constant path: constant values on a breakpoint partition."""

    def __init__(self, breakpoints, values):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if np.any(np.diff(self.breakpoints) <= 0):
            raise DomainError("step function breakpoints must increase")
        if len(self.values) != len(self.breakpoints) - 1:
            raise ShapeError("need one value per step cell")

    @property
    def shape(self):
        return self.values.shape[1:]

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values.reshape(len(self.values), -1), axis=1)))

    def __call__(self, ts):
        ts = np.asarray(ts, dtype=float)
        idx = np.clip(
            np.searchsorted(self.breakpoints, ts, side="right") - 1,
            0, len(self.values) - 1,
        )
        return self.values[idx]


def _path_parts(path):
    """(callable, breakpoints-or-None, shape) for the admissible path kinds."""
    if isinstance(path, StepFunction):
        return path, path.breakpoints, path.shape
    if isinstance(path, BVFunction):
        return path.eval_many, None, path.shape
    if callable(path):
        return path, None, None
    raise ShapeError("path must be a StepFunction, BVFunction or vectorized callable")


def odot(path, beta: BilinearMap, mu: VectorMeasure) -> VectorMeasure:
    """path ⊙_β μ, the measure with densities t ↦ β(path(t), ρ_i(t))."""
    fn, extra_bp, shape = _path_parts(path)
    if shape is not None and shape != beta.in1_shape:
        raise ShapeError(f"path values {shape} do not fit the bilinear map {beta.in1_shape}")
    if mu.shape != beta.in2_shape:
        raise ShapeError(f"measure values {mu.shape} do not fit the bilinear map {beta.in2_shape}")
    comps = []
    for dens, base in mu.components:
        bp = dens.breakpoints
        if extra_bp is not None:
            inner = extra_bp[(extra_bp > bp[0]) & (extra_bp < bp[-1])]
            bp = np.unique(np.concatenate([bp, inner]))

        def density(ts, dens=dens):
            ts = np.asarray(ts, dtype=float)
            return beta(fn(ts), dens(ts))

        comps.append((
            Density.from_callable(density, base.window.as_tuple(), beta.out_shape,
                                  breakpoints=bp),
            base,
        ))
    return VectorMeasure(mu.interval, beta.out_shape, comps, canonicalize=False)


def odot_simple_oracle(step: StepFunction, beta: BilinearMap, mu: VectorMeasure,
                       tol: float = DEFAULT_TOL):
    """Simple-function construction μ_f(A) = Σ_i β(v_i, μ(A ∩ A_i)).

    Test-only ground truth for odot; returns a map Interval → F.
    """
    if not isinstance(step, StepFunction):
        raise ShapeError("the simple-function oracle needs a StepFunction")

    def evaluate(A):
        A = _as_interval(A)
        total = np.zeros(beta.out_shape)
        for k in range(len(step.values)):
            lo = max(A.a, float(step.breakpoints[k]))
            hi = min(A.b, float(step.breakpoints[k + 1]))
            if hi <= lo:
                continue
            chunk = measure_eval(mu, Interval(lo, hi), tol=tol)
            total = total + beta(step.values[k][None, ...], chunk[None, ...])[0]
        return total

    return evaluate


def compose_linear_after(lam, path, beta: BilinearMap, mu: VectorMeasure,
                         probes: int = 33, tol: float = DEFAULT_TOL):
    """Both sides of λ∘(f⊙βμ) = f⊙_{λ∘β}μ plus their cumulative gap."""
    lhs = linear_image(lam, odot(path, beta, mu))
    lam_arr = lam if not hasattr(lam, "matrix") else lam
    composed = BilinearMap(
        lambda x, y: _apply_linear(lam_arr, beta(x, y)),
        beta.in1_shape, beta.in2_shape, _linear_out_shape(lam_arr, beta.out_shape),
        beta.opnorm_bound * _linear_opnorm(lam_arr),
        check=False,
    )
    rhs = odot(path, composed, mu)
    ts = np.linspace(mu.interval.a, mu.interval.b, probes)
    gap = float(np.max(np.abs(lhs.cumulative(ts, tol=tol) - rhs.cumulative(ts, tol=tol))))
    return lhs, rhs, gap


def _apply_linear(lam, values):
    from .measures import LinearMap

    if isinstance(lam, LinearMap):
        return lam(values)
    lam = np.asarray(lam, dtype=float)
    flat = values.reshape(len(values), -1)
    return flat @ lam.T


def _linear_out_shape(lam, in_shape):
    from .measures import LinearMap

    if isinstance(lam, LinearMap):
        return lam.out_shape
    return (np.asarray(lam).shape[0],)


def _linear_opnorm(lam):
    from .measures import LinearMap

    if isinstance(lam, LinearMap):
        return lam.opnorm()
    return float(np.linalg.norm(np.asarray(lam, dtype=float), 2))


class RHSMap:
    """f: E × U → F, linear in the first slot, batched.

    ``apply(v, y)`` evaluates f; ``lipschitz`` is a Lipschitz constant of
    y ↦ f(·, y) in operator norm; ``domain`` an optional membership
    predicate (values, margin) → bool array for the open set U.
    """

    def __init__(self, apply, lipschitz=None, domain=None, margin=1e-6, name="f"):
        self.apply = apply
        self.lipschitz = None if lipschitz is None else float(lipschitz)
        self.domain = domain
        self.margin = margin
        self.name = name

    def check_range(self, values):
        if self.domain is None:
            return
        ok = np.asarray(self.domain(values, self.margin))
        if not np.all(ok):
            raise DomainError(f"path leaves the domain of {self.name}")


def f_star(f: RHSMap, mu: VectorMeasure, gamma) -> VectorMeasure:
    """f_*(μ, γ): densities s ↦ f(ρ_i(s), γ(s)) on the bases of μ."""
    fn, extra_bp, _ = _path_parts(gamma)
    probe_t = np.array([mu.interval.a, 0.5 * (mu.interval.a + mu.interval.b), mu.interval.b])
    probe_vals = np.asarray(fn(probe_t))
    f.check_range(probe_vals)
    probe = f.apply(np.asarray([dens(probe_t[:1])[0] for dens, _ in mu.components[:1]])
                    if mu.components else np.zeros((1,) + mu.shape), probe_vals[:1])
    out_shape = np.asarray(probe).shape[1:]
    comps = []
    for dens, base in mu.components:
        bp = dens.breakpoints
        if extra_bp is not None:
            inner = extra_bp[(extra_bp > bp[0]) & (extra_bp < bp[-1])]
            bp = np.unique(np.concatenate([bp, inner]))

        def density(ts, dens=dens):
            ts = np.asarray(ts, dtype=float)
            return f.apply(dens(ts), np.asarray(fn(ts)))

        comps.append((
            Density.from_callable(density, base.window.as_tuple(), out_shape,
                                  breakpoints=bp),
            base,
        ))
    return VectorMeasure(mu.interval, out_shape, comps, canonicalize=False)


def estimate_lipschitz(f: RHSMap, sample_states, n: int = 1000, seed: int = 0,
                       safety: float = 1.25) -> float:
    """Sampling-based Lipschitz estimate for diagnostics only.

    Pairwise quotients of ‖f(v, y) − f(v, y')‖ / ‖y − y'‖ over random
    state pairs and random unit directions v, scaled by a safety factor.
    """
    rng = np.random.default_rng(seed)
    states = np.asarray(sample_states(rng, 2 * n))
    y1, y2 = states[:n], states[n:]
    best = 0.0
    vshape = y1.shape[1:]
    for _ in range(4):
        v = rng.standard_normal((n,) + vshape)
        v /= np.maximum(np.linalg.norm(v.reshape(n, -1), axis=1), 1e-30).reshape(
            (-1,) + (1,) * len(vshape))
        num = np.linalg.norm((f.apply(v, y1) - f.apply(v, y2)).reshape(n, -1), axis=1)
        den = np.maximum(np.linalg.norm((y1 - y2).reshape(n, -1), axis=1), 1e-30)
        best = max(best, float(np.max(num / den)))
    return safety * best


def odot_polynomial(path_density: Density, beta: BilinearMap,
                    mu: VectorMeasure) -> VectorMeasure:
    """path ⊙_β μ with exact piecewise-polynomial output densities.

    Requires a piecewise-polynomial path (given as a Density-valued
    function of t) and polynomial measure densities; the coefficient
    arrays are convolved through β, so the result serializes exactly.
    """
    from .measures import _shift_poly

    if not path_density.is_polynomial:
        raise ShapeError("exact products need a piecewise-polynomial path")
    comps = []
    for dens, base in mu.components:
        if not dens.is_polynomial:
            raise ShapeError("exact products need polynomial measure densities")
        cuts = np.unique(np.concatenate([
            dens.breakpoints,
            path_density.breakpoints[
                (path_density.breakpoints > dens.breakpoints[0])
                & (path_density.breakpoints < dens.breakpoints[-1])
            ],
        ]))
        centers, polys = [], []
        for k in range(len(cuts) - 1):
            mid = 0.5 * (cuts[k] + cuts[k + 1])
            jf = int(np.clip(np.searchsorted(path_density.breakpoints, mid, side="right") - 1,
                             0, len(path_density.pieces) - 1))
            jd = int(np.clip(np.searchsorted(dens.breakpoints, mid, side="right") - 1,
                             0, len(dens.pieces) - 1))
            _, cf_ctr, cf = path_density.pieces[jf]
            _, cd_ctr, cd = dens.pieces[jd]
            cf = _shift_poly(cf, mid - cf_ctr, path_density.shape)
            cd = _shift_poly(cd, mid - cd_ctr, dens.shape)
            deg = len(cf) + len(cd) - 1
            out = np.zeros((deg,) + beta.out_shape)
            for i in range(len(cf)):
                for j in range(len(cd)):
                    out[i + j] += beta(cf[i][None, ...], cd[j][None, ...])[0]
            centers.append(mid)
            polys.append(out)
        comps.append((
            Density.piecewise_poly(cuts, centers, polys, beta.out_shape),
            base,
        ))
    return VectorMeasure(mu.interval, beta.out_shape, comps, canonicalize=False)
