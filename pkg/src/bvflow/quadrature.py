"""Adaptive quadrature engines for the supported base measures.

Two engines are provided, both with parent-versus-children error
estimation and breadth-first batched evaluation of the integrand:

* ``adaptive_gauss``: composite Gauss-Legendre on t-intervals, for bases
  that are (piecewise) proportional to Lebesgue measure after the CDF
  substitution.
* ``adaptive_cantor``: self-similar triadic subdivision for the standard
  Cantor measure on [0, 1], using a moment-fitted rule on each
  mass-bearing cell.

Integrands are vectorized callables mapping (m,) arrays of points to
(m, ...) arrays of values.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .cantor import cantor_cdf, cantor_rule
from .errors import ToleranceError

_MAX_CELLS = 400_000


@lru_cache(maxsize=None)
def gauss_rule(n: int):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


def _err(v):
    return float(np.max(np.abs(v)))


def _eval_cells(g, lefts, widths, nodes, weights, masses=None):
    """Rule values on a batch of cells; returns (ncell, *shape)."""
    pts = lefts[:, None] + widths[:, None] * nodes[None, :]
    vals = np.asarray(g(pts.ravel()))
    vals = vals.reshape(pts.shape + vals.shape[1:])
    scale = widths if masses is None else masses
    extra = (1,) * (vals.ndim - 2)
    return np.einsum("cn...,n->c...", vals, weights) * scale.reshape((-1,) + extra)


def adaptive_gauss(g, lo: float, hi: float, tol: float, max_depth: int = 48):
    """∫_lo^hi g(t) dt by adaptive composite Gauss-Legendre.

    Returns (value, error_estimate); raises ToleranceError if the budget
    cannot be met before the depth or cell cap.
    """
    if hi <= lo:
        probe = np.asarray(g(np.array([lo])))
        return np.zeros(probe.shape[1:]), 0.0
    nodes, weights = gauss_rule(10)
    lefts = np.array([lo])
    widths = np.array([hi - lo])
    parent = _eval_cells(g, lefts, widths, nodes, weights)
    total = np.zeros_like(parent[0])
    err_acc = 0.0
    span = hi - lo
    for depth in range(max_depth):
        mid_w = widths / 2.0
        child_l = np.concatenate([lefts, lefts + mid_w])
        child_w = np.concatenate([mid_w, mid_w])
        child_v = _eval_cells(g, child_l, child_w, nodes, weights)
        n = len(lefts)
        refined = child_v[:n] + child_v[n:]
        est = np.abs(parent - refined).reshape(n, -1).max(axis=1)
        if err_acc + float(est.sum()) <= tol:
            return total + refined.sum(axis=0), err_acc + float(est.sum())
        mag = np.abs(refined).reshape(n, -1).max(axis=1)
        budget = np.maximum(0.5 * tol * widths / span, 1e-14 * mag + 1e-18)
        done = est <= budget
        total = total + refined[done].sum(axis=0)
        err_acc += float(est[done].sum())
        if np.all(done):
            return total, err_acc
        keep = ~done
        order = np.concatenate([np.flatnonzero(keep), n + np.flatnonzero(keep)])
        lefts = child_l[order]
        widths = child_w[order]
        parent = child_v[order]
        if len(lefts) > _MAX_CELLS:
            break
    total = total + parent.sum(axis=0)
    err_acc += float(np.abs(parent).reshape(len(lefts), -1).max(axis=1).sum()) * 0.5
    raise ToleranceError(
        "adaptive Gauss quadrature did not converge to tol=%.3g" % tol,
        estimate=total,
        achieved_tol=err_acc,
    )


def _cantor_cover(lo: float, hi: float, max_depth: int = 45):
    """Cover of [lo,hi] ∩ supp(C) by whole triadic cells plus edge stubs.

    Returns (cells, stubs): cells is a list of (left, width, mass) fully
    inside [lo, hi]; stubs is a list of (lo_i, hi_i, mass_i) of total mass
    below 2**-max_depth each, handled by a one-point rule.
    """
    cells = []
    stubs = []
    queue = [(0.0, 1.0, 1.0, 0)]
    while queue:
        left, width, mass, depth = queue.pop()
        right = left + width
        if right <= lo or left >= hi:
            continue
        if lo <= left and right <= hi:
            cells.append((left, width, mass))
            continue
        if depth >= max_depth:
            a, b = max(left, lo), min(right, hi)
            stubs.append((a, b, cantor_cdf(b) - cantor_cdf(a)))
            continue
        w3 = width / 3.0
        queue.append((left, w3, mass / 2.0, depth + 1))
        queue.append((left + 2.0 * w3, w3, mass / 2.0, depth + 1))
    return cells, stubs


def adaptive_cantor(g, lo: float, hi: float, tol: float, max_depth: int = 40):
    """∫_[lo,hi] g dC for the standard Cantor measure on [0, 1].

    Returns (value, error_estimate).
    """
    lo, hi = max(lo, 0.0), min(hi, 1.0)
    probe = np.asarray(g(np.array([0.5 * (lo + hi)])))
    total = np.zeros(probe.shape[1:])
    if hi <= lo:
        return total, 0.0
    nodes, weights = cantor_rule()
    cells, stubs = _cantor_cover(lo, hi)
    err_acc = 0.0
    for a, b, m in stubs:
        if m > 0.0:
            total = total + m * np.asarray(g(np.array([(a + b) / 2.0])))[0]
            err_acc += m * 1e-12
    if not cells:
        return total, err_acc
    lefts = np.array([c[0] for c in cells])
    widths = np.array([c[1] for c in cells])
    masses = np.array([c[2] for c in cells])
    parent = _eval_cells(g, lefts, widths, nodes, weights, masses)
    for depth in range(max_depth):
        n = len(lefts)
        child_l = np.concatenate([lefts, lefts + 2.0 * widths / 3.0])
        child_w = np.concatenate([widths / 3.0, widths / 3.0])
        child_m = np.concatenate([masses / 2.0, masses / 2.0])
        child_v = _eval_cells(g, child_l, child_w, nodes, weights, child_m)
        refined = child_v[:n] + child_v[n:]
        est = np.abs(parent - refined).reshape(n, -1).max(axis=1)
        if err_acc + float(est.sum()) <= tol:
            return total + refined.sum(axis=0), err_acc + float(est.sum())
        mag = np.abs(refined).reshape(n, -1).max(axis=1)
        budget = np.maximum(0.5 * tol * masses, 1e-14 * mag + 1e-18)
        done = est <= budget
        total = total + refined[done].sum(axis=0)
        err_acc += float(est[done].sum())
        if np.all(done):
            return total, err_acc
        keep = ~done
        order = np.concatenate([np.flatnonzero(keep), n + np.flatnonzero(keep)])
        lefts = child_l[order]
        widths = child_w[order]
        masses = child_m[order]
        parent = child_v[order]
        if len(lefts) > _MAX_CELLS:
            break
    total = total + parent.sum(axis=0)
    err_acc += float(np.abs(parent).reshape(len(lefts), -1).max(axis=1).sum()) * 0.5
    raise ToleranceError(
        "adaptive Cantor quadrature did not converge to tol=%.3g" % tol,
        estimate=total,
        achieved_tol=err_acc,
    )


def adaptive_gauss_segments(g, knots, tol_each, max_depth: int = 48):
    """Per-segment ∫ g dt between consecutive knots, batched across segments.

    Returns (m, ...) per-segment integrals with every integrand call
    batched across all active cells of all segments; per-segment absolute
    tolerance tol_each.
    """
    knots = np.asarray(knots, dtype=float)
    m = len(knots) - 1
    probe = np.asarray(g(knots[:1]))
    out_shape = probe.shape[1:]
    totals = np.zeros((m,) + out_shape)
    widths0 = np.diff(knots)
    active = widths0 > 0.0
    if not np.any(active):
        return totals
    nodes, weights = gauss_rule(10)
    lefts = knots[:-1][active]
    widths = widths0[active]
    segs = np.flatnonzero(active)
    seg_width = widths0.copy()
    parent = _eval_cells(g, lefts, widths, nodes, weights)
    err_seg = np.zeros(m)
    for _ in range(max_depth):
        n = len(lefts)
        half = widths / 2.0
        child_l = np.concatenate([lefts, lefts + half])
        child_w = np.concatenate([half, half])
        child_s = np.concatenate([segs, segs])
        child_v = _eval_cells(g, child_l, child_w, nodes, weights)
        refined = child_v[:n] + child_v[n:]
        est = np.abs(parent - refined).reshape(n, -1).max(axis=1)
        rem_per_seg = np.bincount(segs, weights=est, minlength=m)
        if np.all(err_seg + rem_per_seg <= tol_each):
            np.add.at(totals, segs, refined)
            return totals
        mag = np.abs(refined).reshape(n, -1).max(axis=1)
        budget = np.maximum(0.5 * tol_each * widths / seg_width[segs],
                            1e-14 * mag + 1e-18)
        done = est <= budget
        np.add.at(totals, segs[done], refined[done])
        err_seg += np.bincount(segs[done], weights=est[done], minlength=m)
        if np.all(done):
            return totals
        keep = np.flatnonzero(~done)
        order = np.concatenate([keep, n + keep])
        lefts, widths, segs = child_l[order], child_w[order], child_s[order]
        parent = child_v[order]
        if len(lefts) > _MAX_CELLS:
            break
    np.add.at(totals, segs, parent)
    raise ToleranceError(
        "segmented Gauss quadrature did not converge to tol=%.3g" % tol_each,
        estimate=totals,
        achieved_tol=float(np.max(np.bincount(segs, weights=np.abs(
            parent).reshape(len(parent), -1).max(axis=1), minlength=m))),
    )


def adaptive_cantor_segments(g, knots, tol_each, max_depth: int = 40,
                             cover_depth: int = 45):
    """Per-segment ∫ g dC between consecutive knots of [0, 1], batched."""
    knots = np.asarray(knots, dtype=float)
    m = len(knots) - 1
    probe = np.asarray(g(np.array([0.5])))
    out_shape = probe.shape[1:]
    totals = np.zeros((m,) + out_shape)
    # one sweep of the triadic tree: cells fully inside a segment become
    # active; cells straddling knots descend; tiny straddlers become stubs
    act_l, act_w, act_m, act_s = [], [], [], []
    queue = [(0.0, 1.0, 1.0, 0)]
    lo, hi = knots[0], knots[-1]
    while queue:
        left, width, mass, depth = queue.pop()
        right = left + width
        if right <= lo or left >= hi:
            continue
        j_left = int(np.searchsorted(knots, left, side="right") - 1)
        j_right = int(np.searchsorted(knots, right, side="left") - 1)
        if 0 <= j_left == j_right < m:
            act_l.append(left)
            act_w.append(width)
            act_m.append(mass)
            act_s.append(j_left)
            continue
        if depth >= cover_depth:
            cuts = np.unique(np.clip(knots, left, right))
            masses = np.diff(cantor_cdf(cuts))
            mids = 0.5 * (cuts[:-1] + cuts[1:])
            vals = np.asarray(g(mids))
            for k in range(len(mids)):
                if masses[k] > 0.0:
                    j = int(np.searchsorted(knots, mids[k], side="right") - 1)
                    if 0 <= j < m:
                        totals[j] = totals[j] + masses[k] * vals[k]
            continue
        w3 = width / 3.0
        queue.append((left, w3, mass / 2.0, depth + 1))
        queue.append((left + 2.0 * w3, w3, mass / 2.0, depth + 1))
    if not act_l:
        return totals
    nodes, weights = cantor_rule()
    lefts = np.array(act_l)
    widths = np.array(act_w)
    masses = np.array(act_m)
    segs = np.array(act_s, dtype=int)
    seg_mass = np.maximum(np.bincount(segs, weights=masses, minlength=m), 1e-300)
    parent = _eval_cells(g, lefts, widths, nodes, weights, masses)
    err_seg = np.zeros(m)
    for _ in range(max_depth):
        n = len(lefts)
        child_l = np.concatenate([lefts, lefts + 2.0 * widths / 3.0])
        child_w = np.concatenate([widths / 3.0, widths / 3.0])
        child_m = np.concatenate([masses / 2.0, masses / 2.0])
        child_s = np.concatenate([segs, segs])
        child_v = _eval_cells(g, child_l, child_w, nodes, weights, child_m)
        refined = child_v[:n] + child_v[n:]
        est = np.abs(parent - refined).reshape(n, -1).max(axis=1)
        rem_per_seg = np.bincount(segs, weights=est, minlength=m)
        if np.all(err_seg + rem_per_seg <= tol_each):
            np.add.at(totals, segs, refined)
            return totals
        mag = np.abs(refined).reshape(n, -1).max(axis=1)
        budget = np.maximum(0.5 * tol_each * masses / seg_mass[segs],
                            1e-14 * mag + 1e-18)
        done = est <= budget
        np.add.at(totals, segs[done], refined[done])
        err_seg += np.bincount(segs[done], weights=est[done], minlength=m)
        if np.all(done):
            return totals
        keep = np.flatnonzero(~done)
        order = np.concatenate([keep, n + keep])
        lefts, widths, masses, segs = (child_l[order], child_w[order],
                                       child_m[order], child_s[order])
        parent = child_v[order]
        if len(lefts) > _MAX_CELLS:
            break
    np.add.at(totals, segs, parent)
    raise ToleranceError(
        "segmented Cantor quadrature did not converge to tol=%.3g" % tol_each,
        estimate=totals,
        achieved_tol=float(np.max(np.bincount(segs, weights=est, minlength=m))),
    )
