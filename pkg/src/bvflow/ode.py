"""Measure-driven differential equations y' = f_*(μ, y).

The local solver iterates the Picard map Φ(η)(t) = y0 ± f_*(μ, η)([t0, t])
from the constant path.  Iterates live on grids built from the driver's
mass structure (triadic cell edges for Cantor components, mass-uniform
nodes otherwise, plus uniform time fill) and are interpolated linearly in
the local cumulative-mass coordinate: the driver's mass, not Lebesgue
time, controls solution increments, which is what makes singular drivers
(Cantor components) converge at the stated tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bvfunction import BVFunction, C1Map, compose_chain, glue
from .errors import (
    DomainError,
    EscapeError,
    RelatednessError,
    SmallnessError,
    ToleranceError,
)
from .measures import (
    BaseMeasure,
    Density,
    Interval,
    VectorMeasure,
    _as_interval,
    restrict,
)
from .products import RHSMap, f_star

THETA_MAX_GLOBAL = 0.5
_MAX_PIECES = 4096
_MAX_PICARD = 300


class RHS(RHSMap):
    """Right-hand side f(v, y), linear in v, with ball data for Picard.

    ``lipschitz`` and ``sup_bound`` may be floats (global constants) or
    callables (center, radius) → float giving the Lipschitz constant and
    the operator-norm bound of y ↦ f(·, y) on the closed ball around
    center.  ``ball_radius`` defaults to 1 + ‖y0‖; the local theory does
    not dictate a radius, so it stays a knob.
    """

    def __init__(self, apply, lipschitz, sup_bound, domain=None, margin=1e-6,
                 ball_radius=None, name="f"):
        super().__init__(apply, lipschitz=None, domain=domain, margin=margin, name=name)
        self._lip = lipschitz
        self._sup = sup_bound
        self._ball = ball_radius

    def lipschitz_on(self, center, radius) -> float:
        if callable(self._lip):
            return float(self._lip(center, radius))
        return float(self._lip)

    def sup_on(self, center, radius) -> float:
        if callable(self._sup):
            return float(self._sup(center, radius))
        return float(self._sup)

    def ball_radius(self, center) -> float:
        if self._ball is None:
            return 1.0 + float(np.linalg.norm(np.asarray(center).ravel()))
        if callable(self._ball):
            return float(self._ball(center))
        return float(self._ball)


# -- builtin right-hand sides


def scalar_linear() -> RHS:
    """y' = y dμ (scalar)."""
    return RHS(
        apply=lambda v, y: v * y,
        lipschitz=1.0,
        sup_bound=lambda c, R: abs(float(c)) + R,
        name="scalar-linear",
    )


def linear_matrix(n: int) -> RHS:
    """Y' = (dμ)·Y for n×n matrices."""
    return RHS(
        apply=lambda v, y: np.matmul(v, y),
        lipschitz=1.0,
        sup_bound=lambda c, R: float(np.linalg.norm(np.asarray(c), "fro")) + R,
        name="linear-matrix",
    )


def riccati() -> RHS:
    """y' = y² dμ (scalar)."""
    return RHS(
        apply=lambda v, y: v * y * y,
        lipschitz=lambda c, R: 2.0 * (abs(float(c)) + R),
        sup_bound=lambda c, R: (abs(float(c)) + R) ** 2,
        name="riccati",
    )


def rotation() -> RHS:
    """y' = (dμ)·J·y in the plane, J the quarter turn."""
    J = np.array([[0.0, -1.0], [1.0, 0.0]])

    def apply(v, y):
        return v[:, None] * (y @ J.T)

    return RHS(
        apply=apply,
        lipschitz=1.0,
        sup_bound=lambda c, R: float(np.linalg.norm(np.asarray(c).ravel())) + R,
        name="rotation",
    )


def custom_table(ys, gs) -> RHS:
    """Scalar y' = g(y) dμ with g interpolated piecewise-linearly."""
    ys = np.asarray(ys, dtype=float)
    gs = np.asarray(gs, dtype=float)
    slopes = np.diff(gs) / np.diff(ys)
    lip = float(np.max(np.abs(slopes)))

    def apply(v, y):
        return v * np.interp(y, ys, gs)

    def sup_bound(c, R):
        lo, hi = float(c) - R, float(c) + R
        sel = (ys >= lo) & (ys <= hi)
        cand = np.concatenate([gs[sel], np.interp([lo, hi], ys, gs)])
        return float(np.max(np.abs(cand)))

    return RHS(apply=apply, lipschitz=lip, sup_bound=sup_bound, name="custom-table")


def builtin_rhs(name: str, n: int = None, table=None) -> RHS:
    if name == "scalar-linear":
        return scalar_linear()
    if name == "linear-matrix":
        return linear_matrix(n if n else 2)
    if name == "riccati":
        return riccati()
    if name == "rotation":
        return rotation()
    if name == "custom-table":
        if table is None:
            raise DomainError("custom-table rhs needs a table of (y, g(y)) samples")
        return custom_table(table[0], table[1])
    raise DomainError(f"unknown rhs {name!r}")


# -- solver grid


class _SolverGrid:
    """Fixed grid with per-component quadrature for one Picard piece."""

    def __init__(self, mu: VectorMeasure, piece: Interval, t0: float,
                 tri_level: int, n_leb: int):
        self.piece = piece
        nodes = [np.array([piece.a, piece.b, t0])]
        for dens, base in mu.components:
            bp = dens.breakpoints
            nodes.append(bp[(bp > piece.a) & (bp < piece.b)])
            if base.kind == "lebesgue":
                continue
            part = base.partition(piece, tri_level)
            nodes.append(part)
        # dyadic uniform fill so grids of doubled resolution nest exactly
        nodes.append(piece.a + piece.length * (np.arange(n_leb + 1) * (1.0 / n_leb)))
        ts = np.unique(np.concatenate(nodes))
        ts = ts[(ts >= piece.a) & (ts <= piece.b)]
        self.nodes = ts
        self.t0_idx = int(np.searchsorted(ts, t0))
        m = len(ts) - 1

        kappa = 1e-6 / piece.length
        self.W = kappa * (ts - piece.a)
        cdf_list = []
        for _, base in mu.components:
            F = base.cdf(ts)
            cdf_list.append(F)
            self.W = self.W + F
        self._bases = [base for _, base in mu.components]
        self._kappa = kappa

        # per-component fixed quadrature nodes against this grid
        self.comp = []
        for (dens, base), F in zip(mu.components, cdf_list):
            order = 2 if base.kind == "cantor" else 4
            for cells, qts, qw in base.cell_quadrature(ts, order=order, cdf_values=F):
                o = qts.shape[1]
                flat = qts.ravel()
                rho = dens(flat).reshape((len(cells), o) + tuple(dens.shape))
                Wq = self._eval_W(flat).reshape(len(cells), o)
                dW = (self.W[cells + 1] - self.W[cells])[:, None]
                frac = np.where(dW > 0, (Wq - self.W[cells][:, None]) / np.where(dW > 0, dW, 1.0), 0.5)
                frac = np.clip(frac, 0.0, 1.0)
                self.comp.append({
                    "order": o,
                    "w2": qw,
                    "rho": rho.reshape((-1,) + tuple(dens.shape)),
                    "frac2": frac,
                    "cells": cells,
                })

    def _eval_W(self, ts):
        W = self._kappa * (np.asarray(ts, dtype=float) - self.piece.a)
        for base in self._bases:
            W = W + base.cdf(ts)
        return W

    def interp(self, y_nodes, j, frac):
        lo = y_nodes[j]
        hi = y_nodes[j + 1]
        return lo + frac.reshape((-1,) + (1,) * (y_nodes.ndim - 1)) * (hi - lo)

    def interpolant(self, y_nodes):
        grid = self

        def evaluate(ts):
            ts = np.atleast_1d(np.asarray(ts, dtype=float))
            tsc = np.clip(ts, grid.piece.a, grid.piece.b)
            j = np.clip(np.searchsorted(grid.nodes, tsc, side="right") - 1,
                        0, len(grid.nodes) - 2)
            dW = grid.W[j + 1] - grid.W[j]
            Wt = grid._eval_W(tsc)
            frac = np.where(dW > 0, (Wt - grid.W[j]) / np.where(dW > 0, dW, 1.0), 0.0)
            frac = np.clip(frac, 0.0, 1.0)
            return grid.interp(y_nodes, j, frac)

        return evaluate

    def picard_apply(self, rhs: RHS, y0, y_nodes):
        """One application of the Picard map on the grid nodes."""
        m = len(self.nodes) - 1
        shape = np.asarray(y0).shape
        pad = (1,) * len(shape)
        cell = np.zeros((m,) + shape)
        for data in self.comp:
            c = data["cells"]
            order = data["order"]
            ylo = y_nodes[c]
            dy = y_nodes[c + 1] - ylo
            eta = (ylo[:, None] + data["frac2"].reshape(-1, order, *pad) * dy[:, None])
            vals = rhs.apply(data["rho"], eta.reshape((-1,) + shape))
            vals = vals.reshape((-1, order) + shape)
            cell[c] += np.sum(vals * data["w2"].reshape(-1, order, *pad), axis=1)
        # extended-precision running sum: naive cumsum rounding over 1e5+
        # cells would floor the solver accuracy near 1e-12
        cum = np.concatenate([
            np.zeros((1,) + shape),
            np.cumsum(cell.astype(np.longdouble), axis=0).astype(float),
        ])
        return np.asarray(y0) + (cum - cum[self.t0_idx])


@dataclass
class SolveReport:
    solution: BVFunction
    contraction_factor: float
    picard_iters: list
    residual: float
    subdivision: list
    ratios: list = field(default_factory=list)
    piece_reports: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def _solution_measure(rhs: RHS, mu: VectorMeasure, eta) -> VectorMeasure:
    """Derivative measure of the solution: densities s ↦ f(ρ_i(s), η(s))."""
    return f_star(rhs, mu, eta)


def picard_local(rhs: RHS, mu: VectorMeasure, t0: float, y0, tol_fix: float = 1e-9,
                 theta_max: float = 0.9, ball_radius=None, start_level: int = 9,
                 residual_probes: int = 33, _warm=None) -> SolveReport:
    """Solve y' = f_*(μ, y), y(t0) = y0 on the interval of μ by contraction.

    Preconditions: L·‖μ‖ ≤ theta_max < 1 and sup‖f̃‖·‖μ‖ < R on the ball
    around y0 (SmallnessError otherwise, advising subdivision).
    """
    piece = mu.interval
    y0 = np.asarray(y0, dtype=float)
    if not piece.contains(t0):
        raise DomainError(f"t0={t0} outside the driver interval")
    var = mu.variation(tol=min(tol_fix, 1e-10))
    R = ball_radius if ball_radius is not None else rhs.ball_radius(y0)
    L = rhs.lipschitz_on(y0, R)
    sup = rhs.sup_on(y0, R)
    theta = L * var
    if theta > theta_max:
        raise SmallnessError(
            f"L·‖μ‖ = {theta:.3g} exceeds theta_max = {theta_max}; subdivide the driver"
        )
    if sup * var >= R:
        raise SmallnessError(
            f"sup‖f̃‖·‖μ‖ = {sup * var:.3g} is not below the ball radius {R:.3g}; "
            "subdivide the driver"
        )

    has_singular = any(base.kind == "cantor" for _, base in mu.components)
    tri_level = min(start_level, 12)
    curv = max(1.0, sup * max(1.0, L))
    n_goal = piece.length * np.sqrt(curv / (8.0 * max(tol_fix, 1e-13)))
    n_leb = 1 << int(np.clip(np.ceil(np.log2(max(n_goal / 8.0, 64))), 6, 13))
    prev_nodes = None
    prev_grid = None
    prev_levels = None
    prev_extrap = None
    report_iters = []
    ratios = []
    converged = False
    err_est = np.inf
    for _ in range(10):
        grid = _SolverGrid(mu, piece, float(t0), tri_level, n_leb)
        if prev_nodes is not None:
            y = prev_grid.interpolant(prev_nodes)(grid.nodes)
        elif _warm is not None:
            y = np.asarray(_warm(grid.nodes)).reshape((len(grid.nodes),) + y0.shape).copy()
        else:
            y = np.broadcast_to(y0, (len(grid.nodes),) + y0.shape).copy()
        d_prev = None
        iters = 0
        target = 0.2 * tol_fix * (1.0 - theta) / theta if theta > 0 else 0.0
        for _ in range(_MAX_PICARD):
            y_new = grid.picard_apply(rhs, y0, y)
            d = float(np.max(np.linalg.norm((y_new - y).reshape(len(y), -1), axis=1)))
            iters += 1
            if d_prev is not None and d_prev > 10 * tol_fix:
                ratios.append(d / d_prev if d_prev > 0 else 0.0)
            d_prev = d
            y = y_new
            if d <= max(target, 1e-15 * (1.0 + float(np.max(np.abs(y))))):
                break
        else:
            raise ToleranceError("Picard iteration did not converge", achieved_tol=d_prev)
        report_iters.append(iters)
        drift = float(np.max(np.linalg.norm((y - y0).reshape(len(y), -1), axis=1)))
        if drift > R * (1.0 + 1e-9):
            raise DomainError(
                f"iterates leave the ball of radius {R:.3g} around the initial value"
            )
        if prev_nodes is not None:
            coarse = prev_grid.interpolant(prev_nodes)(grid.nodes)
            diff = float(np.max(np.linalg.norm((coarse - y).reshape(len(y), -1), axis=1)))
            # Richardson: diff ≈ error of the coarse level; project the fine
            # error through the slowest convergence rate between the levels
            r = 0.0
            if has_singular:
                r = max(r, 3.0 ** -(tri_level - prev_levels[0]))
            if any(base.kind != "cantor" for _, base in mu.components):
                r = max(r, (prev_levels[1] / n_leb) ** 2)
            r = min(max(r, 1e-6), 0.9)
            err_est = diff * r / (1.0 - r)
            # Leading-order extrapolation.  The Richardson cancellation is
            # exact only at nodes shared with the coarse grid (the grids
            # nest by construction); the correction is computed there and
            # interpolated, since it is smooth in the mass coordinate.
            z = y
            zc_pair = None
            if r < 0.6:
                pos = np.clip(np.searchsorted(grid.nodes, prev_grid.nodes),
                              0, len(grid.nodes) - 1)
                shared = np.flatnonzero(grid.nodes[pos] == prev_grid.nodes)
                if len(shared) == len(prev_grid.nodes):
                    corr = (y[pos] - prev_nodes) * (r / (1.0 - r))
                    z = y + prev_grid.interpolant(corr)(grid.nodes)
                    zc_pair = (prev_grid.nodes, y[pos] + corr)
            if zc_pair is not None and prev_extrap is not None:
                t_old, zc_old = prev_extrap
                pos2 = np.clip(np.searchsorted(zc_pair[0], t_old), 0, len(zc_pair[0]) - 1)
                shared2 = np.flatnonzero(zc_pair[0][pos2] == t_old)
                if len(shared2) > 8:
                    gap = zc_pair[1][pos2[shared2]] - zc_old[shared2]
                    err_extrap = float(np.max(np.linalg.norm(
                        gap.reshape(len(shared2), -1), axis=1)))
                    err_est = min(err_est, max(err_extrap, 0.01 * err_est))
            if zc_pair is not None:
                prev_extrap = zc_pair
            prev_nodes, prev_grid, prev_levels = y, grid, (tri_level, n_leb)
            if err_est <= max(tol_fix, 1e-14):
                converged = True
                prev_nodes = z
                break
            jump = 3.0 * err_est / max(tol_fix, 1e-14)
            tri_step = int(np.clip(np.ceil(np.log(max(jump, 3.0)) / np.log(3.0)), 1, 8))
            leb_mult = 1 << int(np.clip(np.ceil(0.5 * np.log2(max(jump, 4.0))), 1, 6))
        else:
            prev_nodes, prev_grid, prev_levels = y, grid, (tri_level, n_leb)
            tri_step, leb_mult = 5, 8
        new_tri = min(tri_level + tri_step, 19)
        new_leb = min(n_leb * leb_mult, 1 << 17)
        if new_tri == tri_level and new_leb == n_leb and prev_extrap is not None:
            break
        tri_level, n_leb = new_tri, new_leb
    if not converged:
        raise ToleranceError(
            f"grid refinement stalled at interpolation error estimate {err_est:.3g}",
            achieved_tol=err_est,
        )
    y, grid = prev_nodes, prev_grid

    eta = grid.interpolant(y)
    rhs.check_range(eta(grid.nodes))
    deriv = _solution_measure(rhs, mu, eta)
    solution = BVFunction(y[0], deriv)
    residual = 0.0
    if residual_probes:
        residual = solution_residual(rhs, mu, eta, float(t0), y0,
                                     probes=residual_probes, tol=tol_fix / 4)
    return SolveReport(
        solution=solution,
        contraction_factor=theta,
        picard_iters=report_iters,
        residual=residual,
        subdivision=[piece.a, piece.b],
        ratios=ratios,
        extras={"grid_nodes": len(grid.nodes), "eta": eta, "nodes": grid.nodes,
                "values": y, "theta": theta},
    )


def solution_residual(rhs: RHS, mu: VectorMeasure, path_eval, t0: float,
                      y0, probes: int = 200, tol: float = 1e-10,
                      level: int = None) -> float:
    """sup over probes of ‖η(t) − y0 ∓ f_*(μ, η)([t0, t])‖.

    The integral is re-quadratured on an independent fixed grid (its own
    mass partition and uniform fill, offset from anything the solver
    used), in one vectorized pass.  ``path_eval`` must be a fast
    vectorized evaluator of the candidate solution.
    """
    interval = mu.interval
    if level is None:
        level = int(np.clip(np.ceil(np.log(1.0 / max(tol, 1e-13)) / np.log(3.0)), 10, 18))
    ts_pr = np.linspace(interval.a, interval.b, probes)
    nodes = [ts_pr, np.array([t0]), np.linspace(interval.a, interval.b, 4099)]
    for dens, base in mu.components:
        nodes.append(base.partition(interval, level))
        bp = dens.breakpoints
        nodes.append(bp[(bp > interval.a) & (bp < interval.b)])
    knots = np.unique(np.concatenate(nodes))
    shape = np.asarray(y0).shape
    seg = np.zeros((len(knots),) + shape)
    for dens, base in mu.components:
        for cells, qts, qw in base.cell_quadrature(knots, order=3):
            flat = qts.ravel()
            vals = rhs.apply(dens(flat), np.asarray(path_eval(flat)))
            vals = vals.reshape(qts.shape + shape)
            seg[cells + 1] += np.einsum("co...,co->c...", vals, qw) if shape else np.sum(vals * qw, axis=1)
    cum = np.cumsum(seg.astype(np.longdouble), axis=0).astype(float)
    pick = np.searchsorted(knots, ts_pr)
    base_idx = int(np.searchsorted(knots, t0))
    against = np.asarray(y0) + cum[pick] - cum[base_idx]
    vals = np.asarray(path_eval(ts_pr))
    return float(np.max(np.linalg.norm((vals - against).reshape(len(ts_pr), -1), axis=1)))


def solve_global(rhs: RHS, mu: VectorMeasure, t0: float, y0, tol: float = 1e-8,
                 forced_breakpoints=(), theta_max: float = THETA_MAX_GLOBAL,
                 residual_probes: int = 200, escape_norm: float = 1e9) -> SolveReport:
    """Global solve by subdivision + gluing of local Picard solutions.

    Each piece is sized so that L·Var < theta_max and sup‖f̃‖·Var stays
    inside the local ball; pieces chain initial values and are glued.
    Blow-up (the solution escaping every admissible ball) raises
    EscapeError with the exit time, it is never extrapolated.
    """
    a, b = mu.interval.a, mu.interval.b
    t0 = float(t0)
    if not mu.interval.contains(t0):
        raise DomainError(f"t0={t0} outside [{a}, {b}]")
    y0 = np.asarray(y0, dtype=float)
    grid = np.linspace(a, b, 2049)
    varcum = _coarse_varcum(mu, grid)
    total_var = float(varcum[-1])

    def var_between(lo, hi):
        return float(np.interp(hi, grid, varcum) - np.interp(lo, grid, varcum))

    forced = sorted(float(x) for x in forced_breakpoints)

    def march(direction):
        """Solve from t0 to b (direction +1) or to a (direction -1)."""
        pieces = []
        cur_t = t0
        cur_y = y0
        end = b if direction > 0 else a
        n_est = None
        while (end - cur_t) * direction > 1e-14 * (b - a):
            R = rhs.ball_radius(cur_y)
            L = rhs.lipschitz_on(cur_y, R)
            sup = rhs.sup_on(cur_y, R)
            eps_candidates = [np.inf]
            if L > 0:
                eps_candidates.append(theta_max / L)
            if sup > 0:
                eps_candidates.append(0.9 * R / sup)
            eps = min(eps_candidates)
            if not np.isfinite(eps) or eps <= 0:
                raise EscapeError("no admissible piece size", exit_time=cur_t)
            nxt = _march_variation(grid, varcum, cur_t, end, eps, direction)
            for fbp in forced:
                if direction > 0 and cur_t < fbp < nxt:
                    nxt = fbp
                if direction < 0 and nxt < fbp < cur_t:
                    nxt = fbp
            if abs(nxt - cur_t) <= 1e-14 * (b - a):
                raise EscapeError(
                    f"solution escapes every admissible ball near t={cur_t:.8g}",
                    exit_time=cur_t,
                )
            lo, hi = (cur_t, nxt) if direction > 0 else (nxt, cur_t)
            mu_piece = restrict(mu, (lo, hi))
            if n_est is None:
                n_est = max(1, int(np.ceil(total_var / max(eps, 1e-30))))
            # piece errors accumulate about additively and the final residual
            # check guards the total, so a sqrt split of the budget suffices
            tol_piece = max(tol / (3.0 * np.sqrt(max(1, n_est))), 1e-13)
            rep = picard_local(
                rhs, mu_piece, cur_t, cur_y, tol_fix=tol_piece,
                theta_max=min(0.95, theta_max * 1.2 + 0.05), ball_radius=R,
                residual_probes=0,
            )
            pieces.append(rep)
            cur_t = nxt
            cur_y = rep.extras["values"][-1] if direction > 0 else rep.extras["values"][0]
            if float(np.linalg.norm(cur_y.ravel())) > escape_norm:
                raise EscapeError(
                    f"solution norm exceeds {escape_norm:.3g} at t={cur_t:.8g}",
                    exit_time=cur_t,
                )
            if len(pieces) > _MAX_PIECES:
                raise EscapeError(
                    f"piece budget exhausted at t={cur_t:.8g} (blow-up suspected)",
                    exit_time=cur_t,
                )
        return pieces

    fw = march(+1) if t0 < b else []
    bw = march(-1) if t0 > a else []
    reports = sorted(bw + fw, key=lambda r: r.solution.interval.a)
    if not reports:
        raise DomainError("empty solve range")
    solution = glue([r.solution for r in reports], tol_glue=np.inf)
    eta_full = _piecewise_eval([r.solution.interval for r in reports],
                               [r.extras["eta"] for r in reports])
    residual = solution_residual(rhs, mu, eta_full, t0, y0,
                                 probes=residual_probes, tol=tol / 4)
    if residual > 5.0 * tol:
        raise ToleranceError(
            f"solution residual {residual:.3g} exceeds 5·tol", estimate=residual,
            achieved_tol=residual,
        )
    iters = [sum(r.picard_iters) for r in reports]
    ratios = [x for r in reports for x in r.ratios]
    return SolveReport(
        solution=solution,
        contraction_factor=max(r.contraction_factor for r in reports),
        picard_iters=iters,
        residual=residual,
        subdivision=[reports[0].solution.interval.a] + [r.solution.interval.b for r in reports],
        ratios=ratios,
        piece_reports=reports,
        extras={"eta": eta_full},
    )


def _piecewise_eval(intervals, evals):
    bounds = np.array([iv.a for iv in intervals] + [intervals[-1].b])

    def evaluate(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        idx = np.clip(np.searchsorted(bounds, ts, side="right") - 1, 0, len(evals) - 1)
        out = None
        for k, ev in enumerate(evals):
            sel = idx == k
            if not np.any(sel):
                continue
            v = np.asarray(ev(ts[sel]))
            if out is None:
                out = np.zeros(ts.shape + v.shape[1:])
            out[sel] = v
        return out

    return evaluate


def _coarse_varcum(mu: VectorMeasure, grid: np.ndarray) -> np.ndarray:
    """Cumulative variation on a grid by one fixed-rule pass per component.

    Used only to size subdivision pieces (the contraction slack absorbs
    the small quadrature error of the fixed rule).
    """
    seg = np.zeros(len(grid))
    for dens, base in mu.components:
        g = dens.norm_density()
        for cells, qts, qw in base.cell_quadrature(grid, order=4):
            vals = g(qts.ravel()).reshape(qts.shape)
            seg[cells + 1] += np.sum(vals * qw, axis=1)
    return np.cumsum(seg)


def _march_variation(grid, varcum, cur, end, eps, direction):
    """Furthest point toward end with Var between cur and it ≤ 0.95·eps."""
    target = 0.95 * eps
    v_cur = float(np.interp(cur, grid, varcum))
    v_end = float(np.interp(end, grid, varcum))
    if abs(v_end - v_cur) <= target:
        return end
    lo, hi = cur, end
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if abs(float(np.interp(mid, grid, varcum)) - v_cur) <= target:
            lo = mid
        else:
            hi = mid
        if abs(hi - lo) < 1e-15 * abs(grid[-1] - grid[0]):
            break
    if abs(lo - cur) < 1e-14 * abs(grid[-1] - grid[0]):
        return hi  # ensure progress; piece variation stays ≤ eps by continuity
    return lo


def transport_solution(tau: C1Map, rhs_f: RHS, rhs_g: RHS, mu: VectorMeasure,
                       report_or_solution, t0=None, check_tol: float = 1e-8,
                       n_samples: int = 200, seed: int = 7) -> BVFunction:
    """τ∘γ for a solution γ of y' = f_*(μ, y); solves y' = g_*(μ, y).

    Relatedness g(v, τ(x)) = dτ(x)(f(v, x)) is spot-checked on samples
    drawn around the solution range (RelatednessError on failure), and
    the transported path is residual-checked against the g-equation.
    """
    solution = getattr(report_or_solution, "solution", report_or_solution)
    fast_eval = solution.eval_many
    if hasattr(report_or_solution, "extras") and "eta" in getattr(report_or_solution, "extras", {}):
        fast_eval = report_or_solution.extras["eta"]
    rng = np.random.default_rng(seed)
    ts = np.linspace(solution.interval.a, solution.interval.b, 64)
    vals = np.asarray(fast_eval(ts))
    lo = vals.min(axis=0)
    hi = vals.max(axis=0)
    pad = 0.1 * (np.abs(hi - lo) + 1.0)
    shape = solution.shape
    xs = rng.uniform((lo - pad)[None], (hi + pad)[None],
                     size=(n_samples,) + shape)
    vs = rng.standard_normal((n_samples,) + shape)
    lhs = rhs_g.apply(vs, np.asarray(tau.value(xs)))
    rhs_vals = tau.jacobian_apply(xs, rhs_f.apply(vs, xs))
    gaps = np.linalg.norm((lhs - rhs_vals).reshape(n_samples, -1), axis=1)
    scale = 1.0 + float(np.max(np.linalg.norm(lhs.reshape(n_samples, -1), axis=1)))
    worst = int(np.argmax(gaps))
    if gaps[worst] > check_tol * scale:
        raise RelatednessError(
            f"relatedness identity fails: gap {gaps[worst]:.3g}",
            worst_sample=(xs[worst], vs[worst]),
        )
    transported = compose_chain(tau, solution)
    t0 = solution.interval.a if t0 is None else float(t0)

    def transported_eval(ss):
        return np.asarray(tau.value(np.asarray(fast_eval(ss))))

    res = solution_residual(rhs_g, mu, transported_eval, t0,
                            transported_eval(np.array([t0]))[0],
                            probes=100, tol=check_tol / 10)
    if res > 50 * check_tol:
        raise ToleranceError(
            f"transported path does not solve the target equation (residual {res:.3g})",
            estimate=res,
        )
    return transported


# -- chart-wise solving on a manifold


@dataclass
class Chart:
    """Chart φ: U_φ → V_φ with inverse, both C¹ with Jacobian actions."""

    phi: C1Map
    phi_inv: C1Map
    radius: float
    contains: object = None
    name: str = "chart"


class ManifoldRHS:
    """f: E × M → TM, linear in E, presented in ambient coordinates.

    ``apply(v, p)`` returns the tangent value at p in ambient coordinates;
    ``lipschitz``/``sup_bound`` bound the chart representations f_φ on the
    chart trust balls (floats suffice at desk scale).
    """

    def __init__(self, apply, lipschitz, sup_bound, name="f"):
        self.apply = apply
        self.lipschitz = float(lipschitz)
        self.sup_bound = float(sup_bound)
        self.name = name

    def in_chart(self, chart: Chart) -> RHS:
        def chart_apply(v, x):
            p = np.asarray(chart.phi_inv.value(x))
            return chart.phi.jacobian_apply(p, self.apply(v, p))

        return RHS(
            apply=chart_apply,
            lipschitz=self.lipschitz,
            sup_bound=self.sup_bound,
            ball_radius=chart.radius,
            name=f"{self.name}|{chart.name}",
        )


@dataclass
class ChartSolveReport:
    solution: BVFunction
    chart_records: list
    piece_reports: list


def solve_chartwise(atlas, rhs_m: ManifoldRHS, mu: VectorMeasure, t0: float, y0,
                    tol: float = 1e-8, trust: float = 0.8,
                    theta_max: float = THETA_MAX_GLOBAL) -> ChartSolveReport:
    """Solve a manifold BV equation piecewise in charts.

    Switches chart when the chart coordinate would leave the trust ball
    (hysteresis factor ``trust``); the returned ambient path glues the
    chart solutions.  Raises ChartError when no chart covers a state.
    """
    from .errors import ChartError

    a, b = mu.interval.a, mu.interval.b
    t0 = float(t0)
    y0 = np.asarray(y0, dtype=float)
    grid = np.linspace(a, b, 2049)
    varcum = _coarse_varcum(mu, grid)

    def pick_chart(p):
        best = None
        best_margin = -np.inf
        for k, chart in enumerate(atlas):
            if chart.contains is not None and not chart.contains(p):
                continue
            x = np.asarray(chart.phi.value(p[None, ...]))[0]
            margin = chart.radius - float(np.linalg.norm(x.ravel()))
            if margin > best_margin:
                best, best_margin = k, margin
        if best is None or best_margin <= 0:
            raise ChartError("no chart of the atlas covers the current state")
        return best

    def march(direction):
        pieces = []
        records = []
        cur_t, cur_p = t0, y0
        end = b if direction > 0 else a
        while (end - cur_t) * direction > 1e-14 * (b - a):
            k = pick_chart(cur_p)
            chart = atlas[k]
            rhs_c = rhs_m.in_chart(chart)
            x0 = np.asarray(chart.phi.value(cur_p[None, ...]))[0]
            budget = trust * chart.radius - float(np.linalg.norm(x0.ravel()))
            if budget <= 0:
                raise ChartError("chart trust region exhausted at entry")
            eps = min(theta_max / max(rhs_m.lipschitz, 1e-12),
                      0.9 * budget / max(rhs_m.sup_bound, 1e-12))
            nxt = _march_variation(grid, varcum, cur_t, end, eps, direction)
            for _ in range(12):
                lo, hi = (cur_t, nxt) if direction > 0 else (nxt, cur_t)
                mu_piece = restrict(mu, (lo, hi))
                rep = picard_local(
                    rhs_c, mu_piece, cur_t, x0,
                    tol_fix=max(tol / 16.0, 1e-13),
                    theta_max=0.95, ball_radius=chart.radius,
                    residual_probes=0,
                )
                xs = rep.extras["values"]
                sup_x = float(np.max(np.linalg.norm(xs.reshape(len(xs), -1), axis=1)))
                if sup_x <= trust * chart.radius:
                    break
                nxt = cur_t + 0.5 * (nxt - cur_t)
            else:
                raise ChartError("cannot keep the solution inside the chart trust ball")
            ambient = compose_chain(chart.phi_inv, rep.solution)
            pieces.append((ambient, chart, rep))
            records.append({"interval": [lo, hi], "chart": chart.name})
            cur_t = nxt
            x_end = rep.extras["values"][-1] if direction > 0 else rep.extras["values"][0]
            cur_p = np.asarray(chart.phi_inv.value(x_end[None, ...]))[0]
        return pieces, records

    fw, rec_fw = march(+1) if t0 < b else ([], [])
    bw, rec_bw = march(-1) if t0 > a else ([], [])
    entries = sorted(bw + fw, key=lambda e: e[0].interval.a)
    pieces = [e[0] for e in entries]
    solution = glue(pieces, tol_glue=np.inf) if len(pieces) > 1 else pieces[0]
    eta_full = _piecewise_eval(
        [p.interval for p in pieces],
        [(lambda ch, rp: (lambda ss: np.asarray(ch.phi_inv.value(np.asarray(rp.extras["eta"](ss))))))(e[1], e[2])
         for e in entries],
    )
    return ChartSolveReport(solution=solution,
                            chart_records=rec_bw[::-1] + rec_fw,
                            piece_reports=[{"eta": eta_full}])
