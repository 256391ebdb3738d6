"""Base measures, densities and vector measures on a compact interval.

A vector measure is a finite sum of (density, base) components with
declared mutual singularity.  Bases are positive non-atomic measures
given by continuous distribution functions; the supported kinds are
Lebesgue, Cantor and piecewise-linear table CDFs.  Table components with
the default ``lebesgue`` singularity class are converted on construction
to Lebesgue components with piecewise-constant density factors, so that
variation norms stay exact across mutually singular components.

All value types are immutable after construction; the cumulative cache
is filled under a lock and safe for concurrent reads.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .cantor import cantor_cdf, cantor_quantile, triadic_cells
from .errors import (
    DomainError,
    ShapeError,
    SpecError,
    UnsupportedCombinationError,
)
from .quadrature import (
    adaptive_cantor,
    adaptive_cantor_segments,
    adaptive_gauss,
    adaptive_gauss_segments,
    gauss_rule,
)

DEFAULT_TOL = 1e-10

_EDGE = 1e-12


@dataclass(frozen=True)
class Interval:
    """Compact non-degenerate interval [a, b]."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a < self.b):
            raise DomainError(f"degenerate interval [{self.a}, {self.b}]")

    @property
    def length(self) -> float:
        return self.b - self.a

    def contains(self, t: float) -> bool:
        slack = _EDGE * max(1.0, abs(self.a), abs(self.b))
        return self.a - slack <= t <= self.b + slack

    def contains_interval(self, other: "Interval") -> bool:
        return self.contains(other.a) and self.contains(other.b)

    def clip(self, t):
        return np.clip(t, self.a, self.b)

    def as_tuple(self):
        return (self.a, self.b)


def _as_interval(x) -> Interval:
    if isinstance(x, Interval):
        return x
    a, b = x
    return Interval(float(a), float(b))


# ---------------------------------------------------------------------------
# base measures


class BaseMeasure:
    """A finite non-atomic positive measure with a continuous CDF.

    ``window`` is the interval the measure currently lives on; restriction
    narrows the window without losing the defining structure, so Cantor
    measures stay exact under restriction and affine transport.
    """

    __slots__ = ("kind", "window", "singularity_class", "_p")

    def __init__(self, kind, window, singularity_class, params):
        self.kind = kind
        self.window = _as_interval(window)
        self.singularity_class = singularity_class
        self._p = params

    # -- constructors

    @staticmethod
    def lebesgue(window, mass=None) -> "BaseMeasure":
        window = _as_interval(window)
        rate = 1.0 if mass is None else float(mass) / window.length
        if rate < 0:
            raise DomainError("negative mass")
        return BaseMeasure("lebesgue", window, "lebesgue", {"rate": rate})

    @staticmethod
    def cantor(support, mass=1.0, window=None) -> "BaseMeasure":
        support = _as_interval(support)
        window = support if window is None else _as_interval(window)
        if not support.contains_interval(window):
            raise DomainError("window outside Cantor support interval")
        if mass < 0:
            raise DomainError("negative mass")
        return BaseMeasure(
            "cantor", window, "cantor",
            {"support": support, "total": float(mass)},
        )

    @staticmethod
    def from_table(ts, fs, singularity_class="lebesgue", window=None) -> "BaseMeasure":
        ts = np.asarray(ts, dtype=float)
        fs = np.asarray(fs, dtype=float)
        if ts.ndim != 1 or ts.shape != fs.shape or len(ts) < 2:
            raise SpecError("CDF table needs matching 1-d t and F arrays")
        if np.any(np.diff(ts) <= 0):
            raise SpecError("CDF table abscissae must be strictly increasing")
        if np.any(np.diff(fs) < 0) or fs[0] != 0.0:
            raise SpecError("CDF table must be nondecreasing with F(a) = 0")
        window = Interval(float(ts[0]), float(ts[-1])) if window is None else _as_interval(window)
        return BaseMeasure("table", window, singularity_class, {"ts": ts, "fs": fs})

    # -- cdf and inverse

    def _cdf_nat(self, t):
        t = np.asarray(t, dtype=float)
        p = self._p
        if self.kind == "lebesgue":
            return p["rate"] * (t - self.window.a)
        if self.kind == "cantor":
            s = p["support"]
            return p["total"] * cantor_cdf((t - s.a) / s.length)
        return np.interp(t, p["ts"], p["fs"])

    def cdf(self, t):
        """F(t) = measure of [window.a, t], vectorized; F(window.a) = 0."""
        t = np.asarray(t, dtype=float)
        base = self._cdf_nat(np.asarray(self.window.a))
        return self._cdf_nat(self.window.clip(t)) - base

    @property
    def mass(self) -> float:
        return float(self.cdf(self.window.b))

    def quantile(self, u):
        """Left-continuous generalized inverse of the windowed CDF."""
        u = np.asarray(u, dtype=float)
        p = self._p
        if self.kind == "lebesgue":
            if p["rate"] == 0.0:
                return np.full_like(u, self.window.a)
            return self.window.a + u / p["rate"]
        if self.kind == "cantor":
            s = p["support"]
            off = float(self._cdf_nat(np.asarray(self.window.a)))
            if p["total"] == 0.0:
                return np.full_like(u, self.window.a)
            x = cantor_quantile((u + off) / p["total"])
            return self.window.clip(s.a + s.length * x)
        off = float(self._cdf_nat(np.asarray(self.window.a)))
        return self.window.clip(np.interp(u + off, p["fs"], p["ts"]))

    # -- integration

    def integrate(self, g, sub: Interval, tol: float, cuts=None):
        """∫_sub g dν with absolute tolerance tol; g vectorized.

        ``cuts``: known discontinuity/breakpoint locations of g; the range
        is split there first so features near cell edges cannot hide from
        the adaptive error estimate.
        """
        lo = max(sub.a, self.window.a)
        hi = min(sub.b, self.window.b)
        if hi <= lo:
            probe = np.asarray(g(np.array([self.window.a])))
            return np.zeros(probe.shape[1:])
        pieces = [lo, hi]
        if cuts is not None:
            cuts = np.asarray(cuts, dtype=float)
            pieces = np.unique(np.concatenate([[lo, hi], cuts[(cuts > lo) & (cuts < hi)]]))
        total = None
        n_pieces = len(pieces) - 1
        for a, b in zip(pieces[:-1], pieces[1:]):
            val = self._integrate_piece(g, float(a), float(b), tol / n_pieces)
            total = val if total is None else total + val
        return total

    def _integrate_piece(self, g, lo, hi, tol):
        p = self._p
        if self.kind == "lebesgue":
            if p["rate"] == 0.0:
                probe = np.asarray(g(np.array([lo])))
                return np.zeros(probe.shape[1:])
            val, _ = adaptive_gauss(g, lo, hi, tol / p["rate"])
            return p["rate"] * val
        if self.kind == "cantor":
            s = p["support"]
            if p["total"] == 0.0:
                probe = np.asarray(g(np.array([lo])))
                return np.zeros(probe.shape[1:])
            val, _ = adaptive_cantor(
                lambda x: g(s.a + s.length * x),
                (lo - s.a) / s.length,
                (hi - s.a) / s.length,
                tol / p["total"],
            )
            return p["total"] * val
        ts, fs = p["ts"], p["fs"]
        total = None
        n_seg = max(1, len(ts) - 1)
        for k in range(len(ts) - 1):
            a = max(lo, float(ts[k]))
            b = min(hi, float(ts[k + 1]))
            if b <= a:
                continue
            slope = (fs[k + 1] - fs[k]) / (ts[k + 1] - ts[k])
            if slope == 0.0:
                continue
            val, _ = adaptive_gauss(g, a, b, tol / (slope * n_seg))
            val = slope * val
            total = val if total is None else total + val
        if total is None:
            probe = np.asarray(g(np.array([lo])))
            return np.zeros(probe.shape[1:])
        return total

    def segment_integrals(self, dens, knots, tol_each) -> np.ndarray:
        """∫ dens dν over each [knots[k], knots[k+1]], batched per wave."""
        knots = np.asarray(knots, dtype=float)
        m = len(knots) - 1
        probe = np.asarray(dens(knots[:1]))
        out = np.zeros((max(m, 0),) + probe.shape[1:])
        if m < 1:
            return out
        wa, wb = self.window.a, self.window.b
        bp = dens.breakpoints if hasattr(dens, "breakpoints") else np.empty(0)
        sub = np.unique(np.concatenate([
            np.clip(knots, wa, wb), [wa, wb],
            bp[(bp > wa) & (bp < wb)] if len(bp) else np.empty(0),
        ]))
        if len(sub) < 2:
            return out
        parent = np.clip(np.searchsorted(knots, 0.5 * (sub[:-1] + sub[1:]),
                                         side="right") - 1, 0, m - 1)
        p = self._p
        if self.kind == "lebesgue":
            rate = p["rate"]
            if rate == 0.0:
                return out
            vals = rate * adaptive_gauss_segments(dens, sub, tol_each / rate)
        elif self.kind == "cantor":
            s_iv = p["support"]
            total = p["total"]
            if total == 0.0:
                return out
            xs = (sub - s_iv.a) / s_iv.length
            vals = total * adaptive_cantor_segments(
                lambda x: dens(s_iv.a + s_iv.length * np.asarray(x)),
                xs, tol_each / total,
            )
        else:
            ts_tab, fs_tab = p["ts"], p["fs"]
            cuts = np.unique(np.concatenate([sub, np.clip(ts_tab, sub[0], sub[-1])]))
            slopes = np.diff(fs_tab) / np.diff(ts_tab)
            mids = 0.5 * (cuts[:-1] + cuts[1:])
            j = np.clip(np.searchsorted(ts_tab, mids, side="right") - 1, 0, len(slopes) - 1)
            seg_vals = adaptive_gauss_segments(dens, cuts, tol_each / (1.0 + np.max(np.abs(slopes))))
            pad = (1,) * (seg_vals.ndim - 1)
            seg_vals = seg_vals * slopes[j].reshape((-1,) + pad)
            parent2 = np.clip(np.searchsorted(knots, mids, side="right") - 1, 0, m - 1)
            np.add.at(out, parent2, seg_vals)
            return out
        np.add.at(out, parent, vals)
        return out

    # -- solver support: mass-aware partitions and per-cell rules

    def partition(self, sub: Interval, level: int) -> np.ndarray:
        """Breakpoints splitting sub into cells of controlled mass/width.

        For Cantor bases these are the edges of the mass-bearing triadic
        cells at the given level, so every cell is either mass-free or has
        mass ``2**-level`` and width ``3**-level`` of the support.
        """
        lo = max(sub.a, self.window.a)
        hi = min(sub.b, self.window.b)
        if hi <= lo:
            return np.array([sub.a, sub.b])
        if self.kind == "lebesgue":
            n = max(2, 2**level)
            pts = np.linspace(lo, hi, n + 1)
        elif self.kind == "cantor":
            s = self._p["support"]
            lefts = triadic_cells(min(level, 42))
            w = 3.0 ** -min(level, 42)
            edges = np.concatenate([lefts, lefts + w])
            pts = s.a + s.length * edges
            pts = pts[(pts > lo) & (pts < hi)]
        else:
            ts = self._p["ts"]
            inner = ts[(ts > lo) & (ts < hi)]
            pts = [inner]
            knots = np.concatenate([[lo], inner, [hi]])
            n = max(1, 2 ** max(0, level - max(1, len(ts) - 1).bit_length()))
            for k in range(len(knots) - 1):
                pts.append(np.linspace(knots[k], knots[k + 1], n + 1)[1:-1])
            pts = np.concatenate(pts)
        return np.unique(np.concatenate([[lo, hi], np.atleast_1d(pts)]))

    def cell_quadrature(self, edges: np.ndarray, order: int = 4, cdf_values=None):
        """Fixed quadrature blocks for ∫ g dν over the cells between edges.

        Returns a list of (cells, ts, weights) blocks of uniform order;
        within a block ``ts``/``weights`` have shape (ncells, order).
        Nodes are placed in the mass coordinate, so smooth-in-mass
        integrands are integrated at full Gauss order; narrow cells get
        cheaper rules (their contribution is already width-controlled).
        """
        F = self.cdf(edges) if cdf_values is None else cdf_values
        du = np.diff(F)
        widths = np.diff(edges)
        span = float(edges[-1] - edges[0]) + 1e-300
        has_mass = du > 0.0
        orders = np.where(widths > span / 1024.0, order,
                          np.where(widths > span * 3.0**-9, min(order, 2), 1))
        blocks = []
        for o in np.unique(orders[has_mass]):
            cells = np.flatnonzero(has_mass & (orders == o))
            if len(cells) == 0:
                continue
            x, w = gauss_rule(int(o))
            u0 = F[cells]
            us = u0[:, None] + du[cells][:, None] * x[None, :]
            ts = self.quantile(us.ravel()).reshape(len(cells), int(o))
            wts = du[cells][:, None] * w[None, :]
            blocks.append((cells, ts, wts))
        return blocks

    # -- transformations

    def restricted(self, sub: Interval) -> "BaseMeasure":
        lo = max(sub.a, self.window.a)
        hi = min(sub.b, self.window.b)
        hi = max(hi, lo + 0.0)
        if hi <= lo:
            # keep a degenerate-mass window pinned at a valid interval
            lo, hi = sub.a, sub.b
            if self.kind == "lebesgue":
                return BaseMeasure.lebesgue((lo, hi), mass=0.0)
        window = Interval(lo, hi)
        p = self._p
        if self.kind == "lebesgue":
            return BaseMeasure("lebesgue", window, self.singularity_class, dict(p))
        if self.kind == "cantor":
            return BaseMeasure("cantor", window, self.singularity_class, dict(p))
        return BaseMeasure("table", window, self.singularity_class, dict(p))

    def affine_transport(self, alpha_inv, scale: float) -> "BaseMeasure":
        """Image measure under s = alpha_inv(t), an affine order-preserving map."""
        window = Interval(float(alpha_inv(self.window.a)), float(alpha_inv(self.window.b)))
        p = self._p
        if self.kind == "lebesgue":
            return BaseMeasure(
                "lebesgue", window, self.singularity_class,
                {"rate": p["rate"] * scale},
            )
        if self.kind == "cantor":
            s = p["support"]
            support = Interval(float(alpha_inv(s.a)), float(alpha_inv(s.b)))
            return BaseMeasure(
                "cantor", window, self.singularity_class,
                {"support": support, "total": p["total"]},
            )
        return BaseMeasure(
            "table", window, self.singularity_class,
            {"ts": alpha_inv(p["ts"]), "fs": p["fs"].copy()},
        )

    # -- identity for canonical-form merging

    def core_key(self):
        if self.kind == "lebesgue":
            return ("lebesgue",)
        if self.kind == "cantor":
            s = self._p["support"]
            return ("cantor", self.singularity_class, round(s.a, 12), round(s.b, 12))
        return ("table", self.singularity_class, self._p["ts"].tobytes(), self._p["fs"].tobytes())

    def to_dict(self) -> dict:
        d = {"type": self.kind, "mass": self.mass, "class": self.singularity_class}
        if self.kind == "cantor":
            d["support"] = list(self._p["support"].as_tuple())
            d["window"] = list(self.window.as_tuple())
        elif self.kind == "lebesgue":
            d["window"] = list(self.window.as_tuple())
        else:
            d["table"] = {"t": self._p["ts"].tolist(), "F": self._p["fs"].tolist()}
            d["window"] = list(self.window.as_tuple())
        return d

    @staticmethod
    def from_dict(d: dict, interval: Interval) -> "BaseMeasure":
        kind = d.get("type")
        window = _as_interval(d["window"]) if "window" in d else interval
        if kind == "lebesgue":
            return BaseMeasure.lebesgue(window, mass=d.get("mass"))
        if kind == "cantor":
            support = _as_interval(d.get("support", window.as_tuple()))
            windowed_mass = d.get("mass", 1.0)
            unit = BaseMeasure.cantor(support, mass=1.0, window=window)
            frac = unit.mass
            total = windowed_mass / frac if frac > 0 else 1.0
            return BaseMeasure.cantor(support, mass=total, window=window)
        if kind == "cdf_table" or kind == "table":
            tab = d.get("table")
            if tab is None:
                raise SpecError("cdf_table base needs a 'table' entry")
            return BaseMeasure.from_table(
                tab["t"], tab["F"], d.get("class", "lebesgue"), window=window
            )
        raise SpecError(f"unknown base measure type {kind!r}")


def cdf_eval(base: BaseMeasure, t: float) -> float:
    """Distribution function F(t) of a base measure; domain-checked."""
    if not base.window.contains(t):
        raise DomainError(f"t={t} outside [{base.window.a}, {base.window.b}]")
    return float(base.cdf(t))


def integrate(g, base: BaseMeasure, sub, tol: float = DEFAULT_TOL):
    """∫_sub g dν for a vectorized integrand g."""
    sub = _as_interval(sub)
    if not base.window.contains_interval(sub):
        raise DomainError("integration range outside the measure window")
    return base.integrate(g, sub, tol)


# ---------------------------------------------------------------------------
# densities


class Density:
    """Piecewise density on an interval: polynomial pieces or callables.

    Polynomial pieces are stored in local coordinates around the piece
    center, so affine reparametrization and linear images stay exact.
    """

    __slots__ = ("breakpoints", "pieces", "shape")

    def __init__(self, breakpoints, pieces, shape):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        if np.any(np.diff(self.breakpoints) <= 0):
            raise SpecError("density breakpoints must be strictly increasing")
        if len(pieces) != len(self.breakpoints) - 1:
            raise SpecError("need one density piece per breakpoint cell")
        self.pieces = tuple(pieces)
        self.shape = tuple(shape)

    @staticmethod
    def constant(value, interval) -> "Density":
        interval = _as_interval(interval)
        value = np.asarray(value, dtype=float)
        coeffs = value[None, ...]
        center = 0.5 * (interval.a + interval.b)
        return Density(
            [interval.a, interval.b], [("poly", center, coeffs)], value.shape
        )

    @staticmethod
    def polynomial(interval, coeffs, shape=None) -> "Density":
        """Single global polynomial with coefficients in (t - center)^k."""
        interval = _as_interval(interval)
        coeffs = np.asarray(coeffs, dtype=float)
        if shape is None:
            shape = coeffs.shape[1:]
        center = 0.5 * (interval.a + interval.b)
        return Density([interval.a, interval.b], [("poly", center, coeffs)], shape)

    @staticmethod
    def piecewise_poly(breakpoints, centers, coeff_list, shape) -> "Density":
        pieces = [("poly", c, np.asarray(k, dtype=float)) for c, k in zip(centers, coeff_list)]
        return Density(breakpoints, pieces, shape)

    @staticmethod
    def from_callable(fn, interval, shape, breakpoints=None) -> "Density":
        interval = _as_interval(interval)
        if breakpoints is None:
            breakpoints = [interval.a, interval.b]
        pieces = [("fn", None, fn)] * (len(breakpoints) - 1)
        return Density(breakpoints, pieces, shape)

    def __call__(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.zeros(ts.shape + self.shape)
        idx = np.clip(
            np.searchsorted(self.breakpoints, ts, side="right") - 1,
            0,
            len(self.pieces) - 1,
        )
        for j, piece in enumerate(self.pieces):
            sel = idx == j
            if not np.any(sel):
                continue
            kind, center, data = piece
            if kind == "poly":
                x = ts[sel] - center
                acc = np.zeros((x.size,) + self.shape)
                for c in data[::-1]:
                    acc = acc * x.reshape((-1,) + (1,) * len(self.shape)) + c
                out[sel] = acc
            else:
                out[sel] = np.asarray(data(ts[sel]))
        return out

    @property
    def is_polynomial(self) -> bool:
        return all(p[0] == "poly" for p in self.pieces)

    def map_values(self, fn, out_shape, exact_linear=None) -> "Density":
        """Apply a value transformation; exact for linear maps on polys."""
        if exact_linear is not None and self.is_polynomial:
            pieces = []
            for kind, center, coeffs in self.pieces:
                new = np.stack([exact_linear(c) for c in coeffs], axis=0)
                pieces.append(("poly", center, new))
            return Density(self.breakpoints, pieces, out_shape)
        return Density.from_callable(
            lambda ts: fn(self(ts)),
            (self.breakpoints[0], self.breakpoints[-1]),
            out_shape,
            breakpoints=self.breakpoints,
        )

    def norm_density(self):
        """t ↦ Euclidean/Frobenius norm of the density value."""
        def normed(ts):
            v = self(ts)
            return np.sqrt(np.sum(v.reshape(len(v), -1) ** 2, axis=1))
        return normed

    def clipped(self, sub: Interval) -> "Density":
        lo, hi = sub.a, sub.b
        bp = self.breakpoints
        inner = bp[(bp > lo) & (bp < hi)]
        newbp = np.concatenate([[lo], inner, [hi]])
        idx = np.clip(np.searchsorted(bp, newbp[:-1], side="right") - 1, 0, len(self.pieces) - 1)
        pieces = [self.pieces[j] for j in idx]
        return Density(newbp, pieces, self.shape)

    def reparam_affine(self, alpha, alpha_inv, scale) -> "Density":
        """Density of the image measure under s = alpha_inv(t): ρ∘alpha."""
        newbp = alpha_inv(self.breakpoints)
        pieces = []
        for kind, center, data in self.pieces:
            if kind == "poly":
                c_new = float(alpha_inv(center))
                k = np.arange(len(data), dtype=float)
                coeffs = data * (scale ** k).reshape((-1,) + (1,) * len(self.shape))
                pieces.append(("poly", c_new, coeffs))
            else:
                fn = data
                pieces.append(("fn", None, (lambda f: lambda ss: f(alpha(np.asarray(ss))))(fn)))
        return Density(newbp, pieces, self.shape)

    def add(self, other: "Density") -> "Density":
        if self.shape != other.shape:
            raise ShapeError("cannot add densities of different value shapes")
        lo = min(self.breakpoints[0], other.breakpoints[0])
        hi = max(self.breakpoints[-1], other.breakpoints[-1])
        bp = np.unique(np.concatenate([self.breakpoints, other.breakpoints, [lo, hi]]))

        def eval_or_zero(dens, ts):
            out = np.zeros(ts.shape + dens.shape)
            sel = (ts >= dens.breakpoints[0] - _EDGE) & (ts <= dens.breakpoints[-1] + _EDGE)
            if np.any(sel):
                out[sel] = dens(np.clip(ts[sel], dens.breakpoints[0], dens.breakpoints[-1]))
            return out

        if self.is_polynomial and other.is_polynomial:
            pieces = []
            for k in range(len(bp) - 1):
                mid = 0.5 * (bp[k] + bp[k + 1])
                coeffs = None
                for dens in (self, other):
                    if dens.breakpoints[0] - _EDGE <= mid <= dens.breakpoints[-1] + _EDGE:
                        j = int(np.clip(
                            np.searchsorted(dens.breakpoints, mid, side="right") - 1,
                            0, len(dens.pieces) - 1,
                        ))
                        _, center, data = dens.pieces[j]
                        shifted = _shift_poly(data, mid - center, self.shape)
                        coeffs = shifted if coeffs is None else _add_poly(coeffs, shifted)
                if coeffs is None:
                    coeffs = np.zeros((1,) + self.shape)
                pieces.append(("poly", mid, coeffs))
            return Density(bp, pieces, self.shape)
        fn = lambda ts: eval_or_zero(self, np.asarray(ts)) + eval_or_zero(other, np.asarray(ts))
        return Density.from_callable(fn, (lo, hi), self.shape, breakpoints=bp)

    def scaled(self, c: float) -> "Density":
        if self.is_polynomial:
            pieces = [("poly", ctr, c * data) for _, ctr, data in self.pieces]
            return Density(self.breakpoints, pieces, self.shape)
        return self.map_values(lambda v: c * v, self.shape)

    def to_dict(self):
        if not self.is_polynomial:
            raise SpecError("only piecewise-polynomial densities are serializable")
        return {
            "breakpoints": self.breakpoints.tolist(),
            "centers": [float(p[1]) for p in self.pieces],
            "polys": [p[2].tolist() for p in self.pieces],
        }

    @staticmethod
    def from_dict(d: dict, shape) -> "Density":
        bp = d["breakpoints"]
        centers = d.get("centers")
        if centers is None:
            centers = [0.5 * (bp[k] + bp[k + 1]) for k in range(len(bp) - 1)]
            polys = []
            for k, flat in enumerate(d["polys"]):
                coeffs = np.asarray(flat, dtype=float)
                # legacy layout: coefficients in t^j about 0
                shifted = _shift_poly(coeffs, centers[k], shape)
                polys.append(shifted)
        else:
            polys = [np.asarray(p, dtype=float) for p in d["polys"]]
        return Density.piecewise_poly(bp, centers, polys, tuple(shape))


def _shift_poly(coeffs, delta, shape):
    """Re-center polynomial coefficients: p(x) = q(x - delta)."""
    deg = len(coeffs) - 1
    out = np.zeros_like(coeffs)
    from math import comb

    for j in range(deg + 1):
        for i in range(j, deg + 1):
            out[j] = out[j] + comb(i, j) * (delta ** (i - j)) * coeffs[i]
    return out


def _add_poly(a, b):
    n = max(len(a), len(b))
    out = np.zeros((n,) + a.shape[1:])
    out[: len(a)] += a
    out[: len(b)] += b
    return out


# ---------------------------------------------------------------------------
# vector measures


class VectorMeasure:
    """μ = Σ_i ρ_i dν_i with mutually singular bases (canonical form)."""

    __slots__ = ("interval", "shape", "components", "_lock", "_cache")

    def __init__(self, interval, shape, components, canonicalize=True):
        self.interval = _as_interval(interval)
        self.shape = tuple(shape)
        comps = list(components)
        if canonicalize:
            comps = _canonicalize(self.interval, self.shape, comps)
        for dens, base in comps:
            if dens.shape != self.shape:
                raise ShapeError("component density shape mismatch")
        self.components = tuple(comps)
        self._lock = threading.Lock()
        self._cache = {}

    # -- constructors

    @staticmethod
    def zero(interval, shape) -> "VectorMeasure":
        return VectorMeasure(interval, shape, [])

    @staticmethod
    def from_lebesgue_density(interval, density) -> "VectorMeasure":
        interval = _as_interval(interval)
        if not isinstance(density, Density):
            density = Density.constant(density, interval)
        return VectorMeasure(interval, density.shape, [(density, BaseMeasure.lebesgue(interval))])

    @staticmethod
    def from_cantor(interval, value, support=None, mass=1.0) -> "VectorMeasure":
        interval = _as_interval(interval)
        support = interval if support is None else _as_interval(support)
        base = BaseMeasure.cantor(support, mass=mass, window=interval)
        if not isinstance(value, Density):
            value = Density.constant(value, interval)
        return VectorMeasure(interval, value.shape, [(value, base)])

    # -- core evaluation

    def cumulative(self, ts, tol: float = DEFAULT_TOL) -> np.ndarray:
        """μ([a, t]) for an array of points t, one batched quadrature sweep."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        lo, hi = self.interval.a, self.interval.b
        slack = _EDGE * max(1.0, abs(lo), abs(hi))
        if np.any(ts < lo - slack) or np.any(ts > hi + slack):
            raise DomainError("evaluation points outside the measure interval")
        ts_c = np.clip(ts, lo, hi)
        knots = np.unique(np.concatenate([[lo], ts_c]))
        segments = np.zeros((len(knots),) + self.shape)
        ncomp = max(1, len(self.components))
        nseg = max(1, len(knots) - 1)
        for dens, base in self.components:
            seg_tol = tol / (ncomp * nseg)
            segments[1:] += base.segment_integrals(dens, knots, seg_tol)
        cum = np.cumsum(segments.astype(np.longdouble), axis=0).astype(float)
        return cum[np.searchsorted(knots, ts_c)]

    def eval_interval(self, A, tol: float = DEFAULT_TOL) -> np.ndarray:
        A = _as_interval(A)
        if not self.interval.contains_interval(A):
            raise DomainError("interval outside the measure domain")
        total = np.zeros(self.shape)
        ncomp = max(1, len(self.components))
        for dens, base in self.components:
            wa, wb = max(A.a, base.window.a), min(A.b, base.window.b)
            if wb > wa:
                total = total + base.integrate(
                    dens, Interval(wa, wb), tol / ncomp, cuts=dens.breakpoints
                )
        return total

    def total(self, tol: float = DEFAULT_TOL) -> np.ndarray:
        return self.eval_interval(self.interval, tol)

    # -- norms / variation

    def variation_cumulative(self, ts, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Var(μ)([a, t]) at points t (sum over mutually singular parts)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        ts_c = np.clip(ts, self.interval.a, self.interval.b)
        knots = np.unique(np.concatenate([[self.interval.a], ts_c]))
        seg = np.zeros(len(knots))
        nseg = max(1, len(knots) - 1)
        ncomp = max(1, len(self.components))
        for dens, base in self.components:
            g = Density.from_callable(dens.norm_density(), base.window.as_tuple(),
                                      (), breakpoints=dens.breakpoints)
            seg[1:] += base.segment_integrals(g, knots, tol / (ncomp * nseg))
        cum = np.cumsum(seg.astype(np.longdouble)).astype(float)
        return cum[np.searchsorted(knots, ts_c)]

    def variation(self, sub=None, tol: float = DEFAULT_TOL) -> float:
        sub = self.interval if sub is None else _as_interval(sub)
        total = 0.0
        ncomp = max(1, len(self.components))
        for dens, base in self.components:
            wa, wb = max(sub.a, base.window.a), min(sub.b, base.window.b)
            if wb > wa:
                g = dens.norm_density()
                total += float(base.integrate(
                    g, Interval(wa, wb), tol / ncomp, cuts=dens.breakpoints
                ))
        return total

    # -- cached cumulative grid (fill-once, safe for concurrent reads)

    def cumulative_grid(self, level: int = 6, tol: float = DEFAULT_TOL):
        """(ts, values) cumulative cache on a 2**level + 1 grid."""
        key = ("grid", level)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        with self._lock:
            cached = self._cache.get(key)
            if cached is None:
                ts = np.linspace(self.interval.a, self.interval.b, 2**level + 1)
                cached = (ts, self.cumulative(ts, tol))
                self._cache[key] = cached
        return cached

    def __repr__(self):
        kinds = ",".join(base.kind for _, base in self.components) or "zero"
        return f"VectorMeasure([{self.interval.a}, {self.interval.b}], shape={self.shape}, {kinds})"


def _canonicalize(interval, shape, comps):
    """Convert AC tables to Lebesgue components and merge comparable bases."""
    staged = []
    for dens, base in comps:
        if base.kind == "table" and base.singularity_class == "lebesgue":
            ts, fs = base._p["ts"], base._p["fs"]
            slopes = np.diff(fs) / np.diff(ts)
            bp = np.unique(np.concatenate([ts, [base.window.a, base.window.b]]))
            bp = bp[(bp >= base.window.a - _EDGE) & (bp <= base.window.b + _EDGE)]

            def slope_at(tt, ts=ts, slopes=slopes):
                j = np.clip(np.searchsorted(ts, tt, side="right") - 1, 0, len(slopes) - 1)
                return slopes[j]

            if dens.is_polynomial:
                pieces, centers, coeffs = [], [], []
                cut = np.unique(np.concatenate([bp, dens.breakpoints]))
                cut = cut[(cut >= bp[0]) & (cut <= bp[-1])]
                for k in range(len(cut) - 1):
                    mid = 0.5 * (cut[k] + cut[k + 1])
                    j = int(np.clip(np.searchsorted(dens.breakpoints, mid, side="right") - 1, 0, len(dens.pieces) - 1))
                    _, center, data = dens.pieces[j]
                    centers.append(mid)
                    coeffs.append(_shift_poly(data, mid - center, shape) * float(slope_at(mid)))
                newdens = Density.piecewise_poly(cut, centers, coeffs, shape)
            else:
                newdens = Density.from_callable(
                    lambda tt, d=dens, s=slope_at: d(tt) * np.reshape(s(np.asarray(tt)), (-1,) + (1,) * len(shape)),
                    base.window.as_tuple(), shape, breakpoints=dens.breakpoints,
                )
            staged.append((newdens, BaseMeasure.lebesgue(base.window)))
        else:
            staged.append((dens, base))

    merged = {}
    order = []
    for dens, base in staged:
        if base.mass == 0.0 and base.kind != "lebesgue":
            continue
        key = base.core_key()
        if key not in merged:
            merged[key] = (dens, base)
            order.append(key)
            continue
        dens0, base0 = merged[key]
        if base.kind == "lebesgue":
            d0 = dens0.scaled(base0._p["rate"]) if base0._p["rate"] != 1.0 else dens0
            d1 = dens.scaled(base._p["rate"]) if base._p["rate"] != 1.0 else dens
            lo = min(base0.window.a, base.window.a)
            hi = max(base0.window.b, base.window.b)
            merged[key] = (d0.add(d1), BaseMeasure.lebesgue((lo, hi)))
        elif base.kind == "cantor":
            t0, t1 = base0._p["total"], base._p["total"]
            d0 = dens0.scaled(t0) if t0 != 1.0 else dens0
            d1 = dens.scaled(t1) if t1 != 1.0 else dens
            lo = min(base0.window.a, base.window.a)
            hi = max(base0.window.b, base.window.b)
            sup = base0._p["support"]
            merged[key] = (
                d0.add(d1),
                BaseMeasure.cantor(sup, mass=1.0, window=(lo, hi)),
            )
        else:
            if not np.array_equal(base0._p["ts"], base._p["ts"]) or not np.array_equal(base0._p["fs"], base._p["fs"]):
                raise UnsupportedCombinationError(
                    "two distinct table CDFs in singularity class "
                    f"{base.singularity_class!r}; declare distinct classes or merge tables"
                )
            merged[key] = (dens0.add(dens), base0)

    out = []
    keys_by_class = {}
    for key in order:
        dens, base = merged[key]
        cls = base.singularity_class
        keys_by_class.setdefault(cls, []).append(key)
        out.append((dens, base))
    for cls, keys in keys_by_class.items():
        distinct_kinds = {k[0] for k in keys}
        if len(keys) > 1 and len(distinct_kinds) > 1:
            raise UnsupportedCombinationError(
                f"components of different kinds share singularity class {cls!r}"
            )
        if len(keys) > 1 and distinct_kinds == {"cantor"}:
            wins = [merged[k][1].window for k in keys]
            for i in range(len(wins)):
                for j in range(i + 1, len(wins)):
                    if wins[i].a < wins[j].b and wins[j].a < wins[i].b:
                        raise UnsupportedCombinationError(
                            "overlapping Cantor components with different supports; "
                            "declare distinct singularity classes"
                        )
    return out


# ---------------------------------------------------------------------------
# operations


def measure_eval(mu: VectorMeasure, A, tol: float = DEFAULT_TOL) -> np.ndarray:
    """μ(A) for a subinterval A of the domain."""
    return mu.eval_interval(A, tol=tol)


def variation_norm(mu: VectorMeasure, tol: float = DEFAULT_TOL) -> float:
    """Total variation ‖μ‖ = Σ_i ∫ ‖ρ_i‖ dν_i (Euclidean/Frobenius norms)."""
    return mu.variation(tol=tol)


class LinearMap:
    """Linear map between value spaces, with an operator-norm bound."""

    def __init__(self, matrix, in_shape, out_shape=None):
        self.matrix = np.asarray(matrix, dtype=float)
        self.in_shape = tuple(in_shape)
        flat_in = int(np.prod(self.in_shape, dtype=int)) if self.in_shape else 1
        if self.matrix.shape[1] != flat_in:
            raise ShapeError("linear map matrix does not match input shape")
        if out_shape is None:
            out_shape = (self.matrix.shape[0],)
        self.out_shape = tuple(out_shape)

    @staticmethod
    def from_matrix(m) -> "LinearMap":
        m = np.asarray(m, dtype=float)
        return LinearMap(m, (m.shape[1],), (m.shape[0],))

    def __call__(self, values):
        values = np.asarray(values, dtype=float)
        batch = values.shape[: values.ndim - len(self.in_shape)]
        flat = values.reshape(batch + (-1,))
        out = flat @ self.matrix.T
        return out.reshape(batch + self.out_shape)

    def opnorm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def linear_image(alpha, mu: VectorMeasure) -> VectorMeasure:
    """α∘μ: apply a linear map to the values of the measure."""
    if not isinstance(alpha, LinearMap):
        alpha = LinearMap.from_matrix(alpha)
    if alpha.in_shape != mu.shape:
        raise ShapeError(f"linear map expects values of shape {alpha.in_shape}, measure has {mu.shape}")
    comps = []
    for dens, base in mu.components:
        newdens = dens.map_values(alpha, alpha.out_shape, exact_linear=alpha)
        comps.append((newdens, base))
    return VectorMeasure(mu.interval, alpha.out_shape, comps, canonicalize=False)


def restrict(mu: VectorMeasure, sub) -> VectorMeasure:
    """μ|_sub as a measure on sub."""
    sub = _as_interval(sub)
    if not mu.interval.contains_interval(sub):
        raise DomainError("restriction target is not inside the measure domain")
    comps = []
    for dens, base in mu.components:
        wa = max(sub.a, base.window.a)
        wb = min(sub.b, base.window.b)
        if wb <= wa:
            continue
        win = Interval(wa, wb)
        comps.append((dens.clipped(win), base.restricted(win)))
    return VectorMeasure(sub, mu.shape, comps, canonicalize=False)


def rebase(mu: VectorMeasure, nu: VectorMeasure):
    """Common-base representation of two measures.

    Returns (comps_mu, comps_nu): aligned lists of (density, base) pairs over
    the union of base components, with zero densities where one side is
    absent.  Raises UnsupportedCombinationError when singularity cannot be
    decided (same declared class, different table CDFs).
    """
    if mu.shape != nu.shape:
        raise ShapeError("cannot rebase measures of different value shapes")
    interval = Interval(min(mu.interval.a, nu.interval.a), max(mu.interval.b, nu.interval.b))
    tagged = [(dens, base, 0) for dens, base in mu.components]
    tagged += [(dens, base, 1) for dens, base in nu.components]
    # canonicalization of the union performs the merge/singularity checks
    merged_all = _canonicalize(interval, mu.shape, [(d, b) for d, b, _ in tagged])
    sides = []
    for which in (0, 1):
        comps = [(d, b) for d, b, side in tagged if side == which]
        sides.append(_canonicalize(interval, mu.shape, comps))
    keys = []
    for dens, base in merged_all:
        keys.append(base.core_key())
    aligned = ([], [])
    for key, (dens_all, base_all) in zip(keys, merged_all):
        for which in (0, 1):
            match = [(d, b) for d, b in sides[which] if b.core_key() == key]
            if match:
                aligned[which].append(match[0])
            else:
                zero = Density.constant(np.zeros(mu.shape), base_all.window.as_tuple())
                aligned[which].append((zero, base_all))
    return aligned[0], aligned[1]


def add_measures(mu: VectorMeasure, nu: VectorMeasure) -> VectorMeasure:
    """μ + ν via the common-base representation."""
    if mu.shape != nu.shape:
        raise ShapeError("cannot add measures of different value shapes")
    interval = Interval(min(mu.interval.a, nu.interval.a), max(mu.interval.b, nu.interval.b))
    comps = list(mu.components) + list(nu.components)
    return VectorMeasure(interval, mu.shape, comps)


def scale_measure(c: float, mu: VectorMeasure) -> VectorMeasure:
    comps = [(dens.scaled(c), base) for dens, base in mu.components]
    return VectorMeasure(mu.interval, mu.shape, comps, canonicalize=False)


def find_subdivision(mu: VectorMeasure, eps: float, tol: float = None) -> list:
    """Breakpoints a = t0 < ... < tn = b with Var(μ)([t_{j-1}, t_j]) < eps.

    Marches along the cumulative variation with bisection; always
    terminates because the cumulative variation is continuous.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    tol = min(eps * 1e-6, 1e-8) if tol is None else tol
    a, b = mu.interval.a, mu.interval.b
    grid = np.linspace(a, b, 513)
    varcum = mu.variation_cumulative(grid, tol=tol)
    total = float(varcum[-1])
    if total < eps:
        return [a, b]
    target = 0.9 * eps
    points = [a]
    v0 = 0.0
    while True:
        goal = v0 + target
        if goal >= total - tol:
            break
        j = int(np.searchsorted(varcum, goal))
        lo_t, hi_t = grid[j - 1], grid[j]
        lo_v, hi_v = varcum[j - 1], varcum[j]
        for _ in range(60):
            mid = 0.5 * (lo_t + hi_t)
            vm = float(mu.variation_cumulative(np.array([mid]), tol=tol)[0])
            if vm < goal:
                lo_t, lo_v = mid, vm
            else:
                hi_t, hi_v = mid, vm
            if hi_t - lo_t < 1e-13 * (b - a):
                break
        cut = 0.5 * (lo_t + hi_t)
        if cut <= points[-1] + 1e-13 * (b - a):
            # variation is locally flat-free but targets collapse; nudge forward
            cut = min(b, points[-1] + (b - a) * 1e-9)
        points.append(cut)
        v0 = float(mu.variation_cumulative(np.array([cut]), tol=tol)[0])
    if points[-1] < b:
        points.append(b)
    return points


# ---------------------------------------------------------------------------
# serialization


def measure_to_dict(mu: VectorMeasure) -> dict:
    return {
        "interval": list(mu.interval.as_tuple()),
        "shape": list(mu.shape),
        "components": [
            {"base": base.to_dict(), "density": dens.to_dict()}
            for dens, base in mu.components
        ],
    }


def measure_from_dict(d: dict) -> VectorMeasure:
    try:
        interval = _as_interval(d["interval"])
        shape = tuple(d.get("shape", [1]))
        comps = []
        for entry in d.get("components", []):
            base = BaseMeasure.from_dict(entry["base"], interval)
            dens = Density.from_dict(entry["density"], shape)
            comps.append((dens, base))
        return VectorMeasure(interval, shape, comps)
    except KeyError as exc:
        raise SpecError(f"measure spec is missing key {exc}") from exc
