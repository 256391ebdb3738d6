"""Matrix Lie groups: evolution of algebra-valued measures, right
logarithmic derivative, pointwise group operations and the semidirect
factorization of BV paths.

Evolution and the logarithmic derivative each have two independently
coded routes: the primary one works in the ambient matrix space (the
right-translation field (v, g) ↦ v·g is linear in v and smooth in g);
the chart route works in logarithmic coordinates through the
right-trivialized differential of exp and its inverse.  Their agreement
is the uniqueness cross-check exposed by ``mode="both"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bvfunction import BVFunction, C1Map, compose_chain, glue
from .errors import ConditioningError, DomainError, InversionError, ShapeError
from .measures import Density, Interval, VectorMeasure, restrict
from .matrixfunc import expm, expm_batch, expm_frechet, logm, logm_batch, logm_frechet
from .ode import RHS, _piecewise_eval, linear_matrix, picard_local, solve_global
from .products import f_star


def _inv_batch(gs):
    """Batched matrix inverse; closed form for the common 3×3 case."""
    gs = np.asarray(gs, dtype=float)
    n = gs.shape[-1]
    if n == 1:
        if np.any(np.abs(gs) < 1e-300):
            raise InversionError("path value is numerically singular")
        return 1.0 / gs
    if n == 3:
        a, b, c = gs[..., 0, 0], gs[..., 0, 1], gs[..., 0, 2]
        d, e, f = gs[..., 1, 0], gs[..., 1, 1], gs[..., 1, 2]
        g, h, i = gs[..., 2, 0], gs[..., 2, 1], gs[..., 2, 2]
        A = e * i - f * h
        B = c * h - b * i
        C = b * f - c * e
        det = a * A + d * B + g * C
        if np.any(np.abs(det) < 1e-12):
            raise InversionError("path value is numerically singular")
        out = np.empty_like(gs)
        out[..., 0, 0] = A
        out[..., 0, 1] = B
        out[..., 0, 2] = C
        out[..., 1, 0] = f * g - d * i
        out[..., 1, 1] = a * i - c * g
        out[..., 1, 2] = c * d - a * f
        out[..., 2, 0] = d * h - e * g
        out[..., 2, 1] = b * g - a * h
        out[..., 2, 2] = a * e - b * d
        return out / det[..., None, None]
    dets = np.abs(np.linalg.det(gs))
    if np.any(dets < 1e-12):
        raise InversionError("path value is numerically singular")
    return np.linalg.inv(gs)


class MatrixGroup:
    """Matrix Lie group descriptor: ambient size, algebra basis, chart radius."""

    def __init__(self, name, n, algebra_basis, r_chart=0.5, tol_membership=1e-8,
                 kind="gl", nilpotent=False):
        self.name = name
        self.n = int(n)
        self.basis = np.asarray(algebra_basis, dtype=float)
        self.dim = len(self.basis)
        self.r_chart = float(r_chart)
        self.tol_membership = float(tol_membership)
        self.kind = kind
        self.nilpotent = nilpotent
        flat = self.basis.reshape(self.dim, -1)
        self._basis_flat = flat
        self._proj = np.linalg.pinv(flat.T)  # coords = _proj @ vec

    # -- algebra helpers

    def coords(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        batch = v.shape[:-2]
        return v.reshape(batch + (-1,)) @ self._proj.T

    def from_coords(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        batch = c.shape[:-1]
        return (c @ self._basis_flat).reshape(batch + (self.n, self.n))

    def project_algebra(self, v):
        """(projection onto span(basis), off-span residual norm)."""
        v = np.asarray(v, dtype=float)
        proj = self.from_coords(self.coords(v))
        res = np.linalg.norm((v - proj).reshape(v.shape[:-2] + (-1,)), axis=-1)
        return proj, res

    def algebra_closure_defect(self) -> float:
        worst = 0.0
        for i in range(self.dim):
            for j in range(self.dim):
                c = self.basis[i] @ self.basis[j] - self.basis[j] @ self.basis[i]
                _, res = self.project_algebra(c)
                worst = max(worst, float(res))
        return worst

    # -- exp / log

    def exp(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.nilpotent:
            out = np.eye(self.n)
            term = np.eye(self.n)
            for k in range(1, 2 * self.n + 2):
                term = term @ v / k
                out = out + term
                if not np.any(term):
                    break
            return out
        return expm(v)

    def log(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if self.nilpotent:
            Y = g - np.eye(self.n)
            term = Y.copy()
            out = Y.copy()
            sign = -1.0
            for k in range(2, 2 * self.n + 2):
                term = term @ Y
                if not np.any(term):
                    break
                out = out + sign * term / k
                sign = -sign
            return out
        return logm(g, radius=self.r_chart)

    def exp_map(self) -> C1Map:
        """exp as a C¹ map with the right-trivialized Jacobian."""

        def value(xs):
            return expm_batch(np.asarray(xs))

        def jac(xs, vs):
            d = dexp_right(xs, vs)
            return np.einsum("mij,mjk->mik", d, expm_batch(np.asarray(xs)))

        return C1Map(value=value, jacobian_apply=jac, name=f"exp[{self.name}]")

    def log_map(self) -> C1Map:
        def value(gs):
            return logm_batch(np.asarray(gs), radius=self.r_chart)

        def jac(gs, vs):
            gs = np.asarray(gs)
            out = np.empty_like(np.asarray(vs, dtype=float))
            for k in range(len(gs)):
                out[k] = logm_frechet(gs[k], vs[k], radius=self.r_chart)
            return out

        return C1Map(value=value, jacobian_apply=jac, name=f"log[{self.name}]")

    # -- membership / drift

    def distance(self, g) -> np.ndarray:
        """Defect of group membership, vectorized over the leading axis."""
        g = np.asarray(g, dtype=float)
        single = g.ndim == 2
        g = g.reshape((-1, self.n, self.n))
        if self.kind == "so":
            gtg = np.einsum("mji,mjk->mik", g, g)
            d = np.linalg.norm((gtg - np.eye(self.n)).reshape(len(g), -1), axis=1)
            d = np.where(np.linalg.det(g) <= 0, np.inf, d)
        elif self.kind == "gl":
            det = np.abs(np.linalg.det(g))
            d = np.where(det > 1e-12, 0.0, np.inf)
        else:
            # unipotent kinds: deviation of log from the algebra span
            d = np.empty(len(g))
            for k in range(len(g)):
                try:
                    _, res = self.project_algebra(self.log(g[k]))
                    d[k] = float(res)
                except Exception:
                    d[k] = np.inf
        return d[0] if single else d

    def membership(self, g, tol=None) -> bool:
        tol = self.tol_membership if tol is None else tol
        return bool(np.all(self.distance(g) <= tol))


def gl(n: int) -> MatrixGroup:
    basis = np.eye(n * n).reshape(n * n, n, n)
    return MatrixGroup(f"gl:{n}", n, basis, kind="gl")


def so(n: int) -> MatrixGroup:
    basis = []
    for i in range(n):
        for j in range(i + 1, n):
            b = np.zeros((n, n))
            b[i, j] = -1.0
            b[j, i] = 1.0
            basis.append(b)
    return MatrixGroup(f"so:{n}", n, np.array(basis), kind="so")


def heisenberg() -> MatrixGroup:
    X = np.zeros((3, 3)); X[0, 1] = 1.0
    Y = np.zeros((3, 3)); Y[1, 2] = 1.0
    Z = np.zeros((3, 3)); Z[0, 2] = 1.0
    return MatrixGroup("heis", 3, np.array([X, Y, Z]), kind="unipotent", nilpotent=True)


def _words(d, N):
    out = []
    level = [()]
    for _ in range(N):
        level = [w + (i,) for w in level for i in range(d)]
        out.extend(sorted(level))
    # regenerate in graded lexicographic order
    out = []
    level = [()]
    for _ in range(N):
        level = [w + (i,) for w in level for i in range(d)]
        out.extend(level)
    return out


def nilpotent_free(d: int, N: int) -> MatrixGroup:
    """Unipotent matrix model of the degree-≤N truncated tensor algebra.

    Basis elements are left multiplications by the words of length 1..N;
    exp of level-1 elements realizes the step-N free nilpotent group.
    """
    words = [()] + _words(d, N)
    index = {w: k for k, w in enumerate(words)}
    D = len(words)
    basis = []
    for w in _words(d, N):
        L = np.zeros((D, D))
        for u in words:
            if len(w) + len(u) <= N:
                L[index[w + u], index[u]] = 1.0
        basis.append(L)
    return MatrixGroup(f"nilpotent:{d}:{N}", D, np.array(basis),
                       kind="unipotent", nilpotent=True)


def group_from_name(name: str) -> MatrixGroup:
    parts = name.split(":")
    if parts[0] == "gl":
        return gl(int(parts[1]))
    if parts[0] == "so":
        return so(int(parts[1]))
    if parts[0] == "heis":
        return heisenberg()
    if parts[0] == "nilpotent":
        return nilpotent_free(int(parts[1]), int(parts[2]))
    raise DomainError(f"unknown group {name!r}")


# ---------------------------------------------------------------------------
# dexp and its inverse


def dexp_right(x, u, tol: float = 1e-16, max_terms: int = 60):
    """Right-trivialized differential of exp: Σ_k ad_x^k(u) / (k+1)!.

    Batched over the leading axis; series truncated at term norm tol.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
        u = u[None]
    s = u.copy()           # ad^k u / k!
    out = u.copy()         # Σ s_k / (k+1)
    scale = float(np.max(np.linalg.norm(u.reshape(len(u), -1), axis=1))) + 1e-300
    for k in range(1, max_terms):
        s = (np.einsum("mij,mjk->mik", x, s) - np.einsum("mij,mjk->mik", s, x)) / k
        out = out + s / (k + 1)
        if float(np.max(np.linalg.norm(s.reshape(len(s), -1), axis=1))) < tol * scale:
            break
    return out[0] if single else out


def dexpinv_right(group: MatrixGroup, x, v, cond_limit: float = 1e12):
    """Inverse of dexp_right in the algebra basis (batched linear solve)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
        v = v[None]
    m = len(x)
    k = group.dim
    cols = np.empty((m, k, k))
    for j in range(k):
        bj = np.broadcast_to(group.basis[j], (m, group.n, group.n))
        cols[:, :, j] = group.coords(dexp_right(x, bj))
    rhs = group.coords(v)
    try:
        sol = np.linalg.solve(cols, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("dexp is singular (near 2π resonance)") from exc
    conds = np.linalg.cond(cols)
    if np.any(~np.isfinite(conds)) or np.max(conds) > cond_limit:
        raise ConditioningError(
            f"dexp is badly conditioned (cond {np.max(conds):.3g}); "
            "reduce the chart step"
        )
    out = group.from_coords(sol)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# group paths


@dataclass
class GroupPath:
    """Matrix-group-valued BV path with a recorded membership drift."""

    bv: BVFunction
    group: MatrixGroup
    drift: float
    fast_eval: object = None
    extras: dict = field(default_factory=dict)

    @property
    def interval(self):
        return self.bv.interval

    def __call__(self, t):
        if self.fast_eval is not None:
            return self.fast_eval(np.array([float(t)]))[0]
        return self.bv(t)

    def eval_many(self, ts):
        if self.fast_eval is not None:
            return self.fast_eval(ts)
        return self.bv.eval_many(ts)


def _probe_grid(mu_or_path, n: int = 257):
    interval = mu_or_path.interval
    ts = [np.linspace(interval.a, interval.b, n)]
    comps = getattr(mu_or_path, "components", None)
    if comps is None:
        comps = mu_or_path.deriv.components if hasattr(mu_or_path, "deriv") else []
    for _, base in comps:
        ts.append(base.partition(interval, 8))
    return np.unique(np.concatenate(ts))


def _algebra_check(group: MatrixGroup, mu: VectorMeasure, tol: float = 1e-10):
    ts = _probe_grid(mu, 65)
    for dens, _ in mu.components:
        vals = dens(ts)
        _, res = group.project_algebra(vals)
        scale = 1.0 + float(np.max(np.linalg.norm(vals.reshape(len(vals), -1), axis=1)))
        if float(np.max(res)) > tol * scale:
            raise DomainError(
                f"measure densities are not {group.name}-algebra valued "
                f"(off-span residual {float(np.max(res)):.3g})"
            )


def _right_translate(path: BVFunction, fast_eval, g) -> tuple:
    """(path·g, fast eval) for a constant group element g."""
    g = np.asarray(g, dtype=float)
    comps = []
    for dens, base in path.deriv.components:
        comps.append((
            dens.map_values(lambda V: V @ g, dens.shape, exact_linear=lambda c: c @ g),
            base,
        ))
    deriv = VectorMeasure(path.interval, path.shape, comps, canonicalize=False)
    translated = BVFunction(path.init @ g, deriv)

    def fe(ts):
        return np.asarray(fast_eval(ts)) @ g

    return translated, fe


def evolve(group: MatrixGroup, mu: VectorMeasure, init_g=None, mode: str = "ambient",
           tol: float = 1e-8, tol_group: float = 1e-6) -> GroupPath:
    """Evolution dη = (dμ)·η, η(a) = init_g, for a 𝔤-valued measure μ.

    mode "ambient" solves the linear matrix equation in ℝ^{n×n} and right
    translates; mode "chart" solves in log coordinates piecewise and glues
    by right multiplication; "both" runs the two and records their sup
    distance in ``extras["mode_agreement"]``.
    """
    if mu.shape != (group.n, group.n):
        raise ShapeError(f"measure values must be {group.n}×{group.n} matrices")
    _algebra_check(group, mu)
    init_g = np.eye(group.n) if init_g is None else np.asarray(init_g, dtype=float)
    if not group.membership(init_g, tol=1e-6):
        raise DomainError("initial value is not in the group (tolerance 1e-6)")

    if mode == "both":
        amb = evolve(group, mu, init_g, mode="ambient", tol=tol, tol_group=tol_group)
        cha = evolve(group, mu, init_g, mode="chart", tol=tol, tol_group=tol_group)
        ts = _probe_grid(mu)
        gap = float(np.max(np.linalg.norm(
            (amb.eval_many(ts) - cha.eval_many(ts)).reshape(len(ts), -1), axis=1)))
        amb.extras["mode_agreement"] = gap
        amb.extras["chart_path"] = cha
        return amb

    if mode == "ambient":
        rhs = linear_matrix(group.n)
        report = solve_global(rhs, mu, mu.interval.a, np.eye(group.n), tol=tol)
        base_eval = report.extras["eta"]
        path, fe = _right_translate(report.solution, base_eval, init_g)
        extras = {"report": report, "mode": "ambient"}
    elif mode == "chart":
        path, fe, records = _evolve_chart(group, mu, tol)
        path, fe = _right_translate(path, fe, init_g)
        extras = {"mode": "chart", "pieces": records}
    else:
        raise DomainError(f"unknown evolve mode {mode!r}")

    ts = _probe_grid(mu)
    drift = float(np.max(group.distance(fe(ts))))
    return GroupPath(bv=path, group=group, drift=drift, fast_eval=fe, extras=extras)


def _evolve_chart(group: MatrixGroup, mu: VectorMeasure, tol: float):
    """Chart-mode evolution: x' = dexp⁻¹(x, dμ) per piece, glued on the right."""
    rhs = RHS(
        apply=lambda v, x: dexpinv_right(group, x, v),
        lipschitz=1.0,
        sup_bound=1.8,
        ball_radius=group.r_chart,
        name="chart-evolution",
    )
    a, b = mu.interval.a, mu.interval.b
    grid = np.linspace(a, b, 1025)
    from .ode import _coarse_varcum
    varcum = _coarse_varcum(mu, grid)
    eps = min(0.5 / 1.0, 0.45 * group.r_chart / 1.8)
    exp_map = group.exp_map()

    pieces = []
    fast_pieces = []
    records = []
    from .ode import _march_variation

    cur_t = a
    left = np.eye(group.n)
    guard = 0
    while cur_t < b - 1e-14 * (b - a):
        nxt = _march_variation(grid, varcum, cur_t, b, eps, +1)
        mu_piece = restrict(mu, (cur_t, nxt))
        rep = picard_local(rhs, mu_piece, cur_t, np.zeros((group.n, group.n)),
                           tol_fix=max(tol / 16.0, 1e-13), theta_max=0.95,
                           residual_probes=0)
        x_eta = rep.extras["eta"]
        g_piece = compose_chain(exp_map, rep.solution)
        piece, fe = _right_translate(g_piece, lambda ts, x_eta=x_eta: expm_batch(x_eta(ts)), left)
        pieces.append(piece)
        fast_pieces.append(fe)
        records.append({"interval": [cur_t, nxt], "left": left.copy()})
        left = expm(x_eta(np.array([nxt]))[0]) @ left
        cur_t = nxt
        guard += 1
        if guard > 4096:
            raise DomainError("chart evolution piece budget exhausted")
    path = glue(pieces, tol_glue=np.inf) if len(pieces) > 1 else pieces[0]
    fe = _piecewise_eval([p.interval for p in pieces], fast_pieces)
    return path, fe, records


def log_derivative(eta: GroupPath, mode: str = "ambient", project: bool = True,
                   tol: float = 1e-9) -> VectorMeasure:
    """Right logarithmic derivative δʳ(η): the 𝔤-valued measure with
    dη = (dδʳ)·η.

    The ambient formula multiplies the derivative densities by η(s)⁻¹ on
    the same bases; the chart formula subdivides until increments stay in
    the log chart and pushes the chart derivative through dexp (an
    independent algorithm kept as a cross-check).
    """
    group = eta.group
    evaluate = eta.eval_many
    if mode == "ambient":
        comps = []
        for dens, base in eta.bv.deriv.components:
            def density(ts, dens=dens):
                ts = np.asarray(ts, dtype=float)
                gs = np.asarray(evaluate(ts))
                vals = np.matmul(dens(ts), _inv_batch(gs))
                if project:
                    vals, _ = group.project_algebra(vals)
                return vals
            comps.append((
                Density.from_callable(density, base.window.as_tuple(),
                                      (group.n, group.n), breakpoints=dens.breakpoints),
                base,
            ))
        return VectorMeasure(eta.interval, (group.n, group.n), comps, canonicalize=False)
    if mode != "chart":
        raise DomainError(f"unknown log_derivative mode {mode!r}")

    # chart route: subdivide (marching the cumulative variation, halving on
    # violation) so that η(t)η(t_{j-1})⁻¹ stays well inside the log chart,
    # take chart coordinates x_j = log(η η(t_{j-1})⁻¹) and push the chart
    # derivative through dexp.
    a, b = eta.interval.a, eta.interval.b
    grid = np.linspace(a, b, 1025)
    from .ode import _coarse_varcum, _march_variation
    varcum = _coarse_varcum(eta.bv.deriv, grid)

    cuts = [a]
    eps = 0.35 * group.r_chart
    guard = 0
    while cuts[-1] < b - 1e-14 * (b - a):
        lo = cuts[-1]
        nxt = _march_variation(grid, varcum, lo, b, eps, +1)
        g0inv = np.linalg.inv(evaluate(np.array([lo]))[0])
        for _ in range(20):
            probes = np.linspace(lo, nxt, 33)
            incs = np.asarray(evaluate(probes)) @ g0inv
            dist = np.max(np.linalg.norm(
                (incs - np.eye(group.n)).reshape(len(probes), -1), axis=1))
            if dist <= 0.8 * group.r_chart:
                break
            nxt = lo + 0.5 * (nxt - lo)
        cuts.append(nxt)
        guard += 1
        if guard > 4096:
            raise DomainError("log-derivative chart subdivision budget exhausted")

    comps = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        g0inv = np.linalg.inv(evaluate(np.array([lo]))[0])
        piece = restrict(eta.bv.deriv, (lo, hi))
        for dens, base in piece.components:
            def density(ts, dens=dens, g0inv=g0inv):
                ts = np.asarray(ts, dtype=float)
                incs = np.asarray(evaluate(ts)) @ g0inv
                vs = dens(ts) @ g0inv
                ws = np.empty_like(vs)
                for k in range(len(ts)):
                    ws[k] = logm_frechet(incs[k], vs[k], radius=group.r_chart)
                xs = logm_batch(incs, radius=group.r_chart)
                return dexp_right(xs, ws)
            comps.append((
                Density.from_callable(density, base.window.as_tuple(),
                                      (group.n, group.n), breakpoints=dens.breakpoints),
                base,
            ))
    return VectorMeasure(eta.interval, (group.n, group.n), comps, canonicalize=False)


def path_multiply(eta: GroupPath, zeta: GroupPath, tol_group: float = 1e-6) -> GroupPath:
    """Pointwise product path with Leibniz-rule derivative densities."""
    if eta.group is not zeta.group and eta.group.name != zeta.group.name:
        raise ShapeError("paths live in different groups")
    n = eta.group.n
    ev_eta, ev_zeta = eta.eval_many, zeta.eval_many
    comps = []
    for dens, base in eta.bv.deriv.components:
        def density(ts, dens=dens):
            ts = np.asarray(ts, dtype=float)
            return np.einsum("mij,mjk->mik", dens(ts), np.asarray(ev_zeta(ts)))
        comps.append((Density.from_callable(density, base.window.as_tuple(), (n, n),
                                            breakpoints=dens.breakpoints), base))
    for dens, base in zeta.bv.deriv.components:
        def density(ts, dens=dens):
            ts = np.asarray(ts, dtype=float)
            return np.einsum("mij,mjk->mik", np.asarray(ev_eta(ts)), dens(ts))
        comps.append((Density.from_callable(density, base.window.as_tuple(), (n, n),
                                            breakpoints=dens.breakpoints), base))
    deriv = VectorMeasure(eta.interval, (n, n), comps)
    init = eta.bv.init @ zeta.bv.init
    path = BVFunction(init, deriv)

    def fe(ts):
        return np.einsum("mij,mjk->mik", np.asarray(ev_eta(ts)), np.asarray(ev_zeta(ts)))

    ts = _probe_grid(eta.bv)
    drift = float(np.max(eta.group.distance(fe(ts))))
    return GroupPath(bv=path, group=eta.group, drift=drift, fast_eval=fe)


def path_invert(eta: GroupPath) -> GroupPath:
    n = eta.group.n
    ev = eta.eval_many

    def inv_many(ts):
        return _inv_batch(np.asarray(ev(ts)))

    comps = []
    for dens, base in eta.bv.deriv.components:
        def density(ts, dens=dens):
            ts = np.asarray(ts, dtype=float)
            invs = inv_many(ts)
            return -np.einsum("mij,mjk,mkl->mil", invs, dens(ts), invs)
        comps.append((Density.from_callable(density, base.window.as_tuple(), (n, n),
                                            breakpoints=dens.breakpoints), base))
    deriv = VectorMeasure(eta.interval, (n, n), comps, canonicalize=False)
    path = BVFunction(np.linalg.inv(eta.bv.init), deriv)
    ts = _probe_grid(eta.bv)
    drift = float(np.max(eta.group.distance(inv_many(ts))))
    return GroupPath(bv=path, group=eta.group, drift=drift, fast_eval=inv_many)


def constant_path(group: MatrixGroup, interval, g) -> GroupPath:
    g = np.asarray(g, dtype=float)
    bv = BVFunction.constant(g, interval)

    def fe(ts):
        return np.broadcast_to(g, (len(np.atleast_1d(ts)), group.n, group.n))

    return GroupPath(bv=bv, group=group, drift=float(group.distance(g)), fast_eval=fe)


def semidirect_split(eta: GroupPath):
    """(δʳ(η), η(a)): the semidirect factorization of a group-valued path."""
    mu = log_derivative(eta, mode="ambient")
    g = eta(eta.interval.a)
    return mu, g
