"""Damped Newton for f(lam[chi + dd^c phi]) = e^{G + c} on the periodic torus.

In fixed-G mode the unknowns are (phi, c) with mean(phi) = 0; in monotone
mode the right-hand side is e^{G0 + beta*phi} and c = 0.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spilu, spsolve

from .errors import ArgumentError, DataError, HessianLabError, NonConvergenceError
from .regmax import reg_max_batch
from .symfunc import (
    OperatorSpec,
    cone_margin,
    eval_f_unchecked,
    grad_f_unchecked,
    in_cone,
    operator_cone,
)
from .torusgrid import (
    HermitianField,
    ScalarField,
    TorusGrid,
    ddc_array,
    hermitian_eigvals,
    laplacian_symbol,
)

MIN_STEP = 2.0**-30
ARMIJO = 1e-4
CONTINUATION = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One equation instance.

    With ``beta`` None the right-hand side is e^{G + c} with c unknown;
    otherwise it is e^{G + beta*phi} with c fixed at 0 (G plays the role of G0).
    """

    op: OperatorSpec
    chi: HermitianField
    G: ScalarField
    beta: float | None = None
    residual_linf: float = 1e-9
    max_newton: int = 60

    def __post_init__(self):
        if self.chi.grid != self.G.grid:
            raise ArgumentError("chi and G live on different grids")
        if self.op.n != self.G.grid.n:
            raise ArgumentError(f"operator {self.op} has dimension {self.op.n}, grid has {self.G.grid.n}")
        if self.beta is not None and not self.beta > 0:
            raise ArgumentError("monotone mode requires beta > 0")
        lam = hermitian_eigvals(self.chi.values)
        inside = in_cone(operator_cone(self.op), lam)
        if not np.all(inside):
            pts = np.flatnonzero(~np.ravel(inside))
            raise DataError(f"lam[chi] outside the operator cone at point {int(pts[0])}", points=pts.tolist())

    @property
    def grid(self) -> TorusGrid:
        return self.G.grid

    @property
    def monotone(self) -> bool:
        return self.beta is not None

    def scaled(self, s: float) -> "ProblemSpec":
        return ProblemSpec(self.op, self.chi, self.G * s, self.beta, self.residual_linf, self.max_newton)


@dataclass(frozen=True, eq=False)
class SolveResult:
    phi: ScalarField
    c: float
    residuals: list
    dampings: list
    margins: list
    wall_time: float
    linear_iterations: int = 0
    continuation: list = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.residuals[-1]

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1

    @property
    def phi_sup(self) -> ScalarField:
        """Copy normalized by sup phi = 0."""
        return self.phi - float(self.phi.values.max())

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "residual_linf": self.residual,
            "iterations": self.iterations,
            "residuals": list(self.residuals),
            "dampings": list(self.dampings),
            "cone_margins": list(self.margins),
            "linear_iterations": self.linear_iterations,
            "continuation": list(self.continuation),
            "wall_time": self.wall_time,
            "phi_mean": float(self.phi.values.mean()),
            "phi_sup": float(self.phi.values.max()),
        }


# -- residual and linearization -------------------------------------------------

@dataclass
class _State:
    A: np.ndarray  # chi + dd^c phi, complex Hermitian per point
    lam: np.ndarray
    fval: np.ndarray
    rhs: np.ndarray
    R: np.ndarray
    margin: float


def _state(problem: ProblemSpec, phi: np.ndarray, c: float) -> _State:
    A = problem.chi.values + ddc_array(phi, problem.grid)
    lam = hermitian_eigvals(A)
    fval = eval_f_unchecked(problem.op, lam)
    if problem.monotone:
        rhs = np.exp(problem.G.values + problem.beta * phi)
    else:
        rhs = np.exp(problem.G.values + c)
    margins = cone_margin(operator_cone(problem.op), lam)
    margin = float(np.min(margins))
    return _State(A, lam, fval, rhs, fval - rhs, margin)


def linearization_weights(op: OperatorSpec, A: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """P with d f(lam[A])[B] = tr(P B), per point; shape (..., n, n).

    For n = 2 the spectral projectors give P = fbar*I + dd*(A - mean*I) with
    dd the divided difference of the gradient; dd is set to 0 across
    (near-)degenerate eigenvalues, where the gradient is symmetric.
    """
    n = A.shape[-1]
    g = grad_f_unchecked(op, lam)
    if n == 1:
        return g[..., None].astype(complex)
    if n != 2:
        raise ArgumentError("linearization implemented for n <= 2")
    gap = lam[..., 1] - lam[..., 0]
    scale = 1.0 + np.abs(lam).max(axis=-1)
    tiny = gap <= 1e-7 * scale
    dd = np.where(tiny, 0.0, (g[..., 1] - g[..., 0]) / np.where(tiny, 1.0, gap))
    fbar = 0.5 * (g[..., 0] + g[..., 1])
    mean = 0.5 * (lam[..., 0] + lam[..., 1])
    P = dd[..., None, None] * (A - mean[..., None, None] * np.eye(2))
    P = P + fbar[..., None, None] * np.eye(2)
    return P


def _contract(P: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("...jk,...kj->...", P, B).real


def residual(problem: ProblemSpec, phi, c: float = 0.0) -> np.ndarray:
    """Pointwise residual f(lam[chi + dd^c phi]) - rhs."""
    vals = phi.values if isinstance(phi, ScalarField) else np.asarray(phi, dtype=float)
    return _state(problem, vals, c).R


def jacobian_apply(problem: ProblemSpec, phi, c: float, psi, dc: float = 0.0) -> np.ndarray:
    """Directional derivative of ``residual`` at (phi, c) along (psi, dc)."""
    vals = phi.values if isinstance(phi, ScalarField) else np.asarray(phi, dtype=float)
    psi = psi.values if isinstance(psi, ScalarField) else np.asarray(psi, dtype=float)
    st = _state(problem, vals, c)
    P = linearization_weights(problem.op, st.A, st.lam)
    out = _contract(P, ddc_array(psi, problem.grid))
    if problem.monotone:
        return out - problem.beta * st.rhs * psi
    return out - st.rhs * dc


def _newton_step(problem: ProblemSpec, st: _State, tol: float):
    grid = problem.grid
    shape = grid.shape
    M = grid.size
    P = linearization_weights(problem.op, st.A, st.lam)
    trace_p = np.trace(P, axis1=-2, axis2=-1).real
    s = float(trace_p.mean())
    lap = laplacian_symbol(grid)
    if problem.monotone:
        w = problem.beta * st.rhs
        wbar = float(w.mean())

        def mv(x):
            psi = x.reshape(shape)
            return (_contract(P, ddc_array(psi, grid)) - w * psi).ravel()

        denom = s * lap - wbar

        def prec(r):
            return np.fft.ifftn(np.fft.fftn(r.reshape(shape)) / denom).real.ravel()

        size = M
        b = -st.R.ravel()
    else:
        w = st.rhs
        wbar = float(w.mean())
        denom = s * lap
        denom.flat[0] = 1.0

        def mv(x):
            psi = x[:M].reshape(shape)
            dc = x[M]
            top = _contract(P, ddc_array(psi, grid)) - w * dc
            return np.concatenate([top.ravel(), [psi.mean()]])

        def prec(r):
            top = r[:M].reshape(shape)
            rbar = float(top.mean())
            dc = -rbar / wbar
            Fh = np.fft.fftn(top - rbar) / denom
            Fh.flat[0] = 0.0
            psi = np.fft.ifftn(Fh).real + r[M]
            return np.concatenate([psi.ravel(), [dc]])

        size = M + 1
        b = np.concatenate([-st.R.ravel(), [0.0]])

    count = [0]

    def cb(_):
        count[0] += 1

    A_op = LinearOperator((size, size), matvec=mv, dtype=float)
    M_op = LinearOperator((size, size), matvec=prec, dtype=float)
    x, info = gmres(A_op, b, M=M_op, rtol=tol, atol=0.0, restart=60, maxiter=20, callback=cb, callback_type="pr_norm")
    if problem.monotone:
        return x.reshape(shape), 0.0, count[0]
    return x[:M].reshape(shape), float(x[M]), count[0]


def _initial_c(problem: ProblemSpec, fval: np.ndarray) -> float:
    return float(np.log(np.mean(fval)) - np.log(np.mean(np.exp(problem.G.values))))


def _newton(problem: ProblemSpec, phi: np.ndarray, c: float, history: dict):
    st = _state(problem, phi, c)
    res = float(np.max(np.abs(st.R)))
    history["residuals"].append(res)
    history["margins"].append(st.margin)
    for _ in range(problem.max_newton):
        if res <= problem.residual_linf:
            return phi, c, True
        eta = max(1e-13, min(1e-2, 0.1 * res))
        dphi, dc, its = _newton_step(problem, st, eta)
        history["linear"] += its
        alpha = 1.0
        while True:
            trial_phi = phi + alpha * dphi
            if not problem.monotone:
                trial_phi = trial_phi - trial_phi.mean()
            trial_c = c + alpha * dc
            trial = _state(problem, trial_phi, trial_c)
            ok_cone = trial.margin > 0 and trial.margin >= 0.5 * st.margin
            if ok_cone:
                tres = float(np.max(np.abs(trial.R)))
                if tres <= (1 - ARMIJO * alpha) * res:
                    break
            alpha *= 0.5
            if alpha < MIN_STEP:
                history["failure"] = {"residual": res, "margin": st.margin}
                return phi, c, False
        phi, c, st, res = trial_phi, trial_c, trial, tres
        history["residuals"].append(res)
        history["dampings"].append(alpha)
        history["margins"].append(st.margin)
    return phi, c, res <= problem.residual_linf


def solve_periodic(problem: ProblemSpec, phi0: ScalarField | None = None) -> SolveResult:
    """Solve the periodic problem; see ``ProblemSpec`` for the two modes."""
    t0 = time.perf_counter()
    grid = problem.grid
    phi = np.zeros(grid.shape) if phi0 is None else np.array(phi0.values, dtype=float)
    if phi0 is not None and phi0.grid != grid:
        raise ArgumentError("initial field lives on a different grid")
    if not problem.monotone:
        phi = phi - phi.mean()
    st = _state(problem, phi, 0.0)
    if not (st.margin > 0):
        raise ArgumentError("initial field is not cone-admissible")
    c = 0.0 if problem.monotone else _initial_c(problem, st.fval)
    history = {"residuals": [], "dampings": [], "margins": [], "linear": 0}
    phi1, c1, ok = _newton(problem, phi, c, history)
    used = []
    if not ok and "failure" in history:
        # continuation in the amplitude of G, warm-started
        used = list(CONTINUATION)
        phi1, c1 = phi, c
        for s in CONTINUATION:
            history.pop("failure", None)
            sub = problem.scaled(s)
            if not problem.monotone:
                st_s = _state(sub, phi1, c1)
                c1 = c1 if s > CONTINUATION[0] else _initial_c(sub, st_s.fval)
            phi1, c1, ok = _newton(sub, phi1, c1, history)
            if not ok:
                break
    if not ok:
        raise NonConvergenceError(
            "Newton iteration did not reach the residual tolerance",
            diagnostics={
                "residuals": history["residuals"],
                "dampings": history["dampings"],
                "margins": history["margins"],
                **history.get("failure", {}),
            },
        )
    return SolveResult(
        phi=ScalarField(grid, phi1),
        c=float(c1),
        residuals=history["residuals"],
        dampings=history["dampings"],
        margins=history["margins"],
        wall_time=time.perf_counter() - t0,
        linear_iterations=history["linear"],
        continuation=used,
    )


# -- sup-slope ------------------------------------------------------------------

def fourier_modes(ndim: int, count: int) -> list[tuple[int, ...]]:
    """First ``count`` nonzero integer wave vectors up to sign, by |m|^2 then lexicographically."""
    out = []
    radius = 1
    while True:
        cand = []
        for m in itertools.product(range(-radius, radius + 1), repeat=ndim):
            if any(m) and m > tuple(-x for x in m):
                cand.append(m)
        cand.sort(key=lambda m: (sum(x * x for x in m), tuple(-x for x in m)))
        if len(cand) >= count and sum(x * x for x in cand[count - 1]) <= radius * radius:
            return cand[:count]
        radius += 1


def _trial_basis(grid: TorusGrid, modes) -> np.ndarray:
    coords = grid.coords()
    basis = []
    for m in modes:
        arg = 2 * np.pi * sum(mi * x for mi, x in zip(m, coords))
        basis.append(np.cos(arg))
        basis.append(np.sin(arg))
    return np.array(basis)


@dataclass(frozen=True, eq=False)
class SupSlopeResult:
    e_c_upper: float
    best_u: ScalarField
    coefficients: np.ndarray
    modes: list
    evaluations: int
    gap: float | None = None

    def to_dict(self) -> dict:
        return {
            "e_c_upper": self.e_c_upper,
            "c_upper": math.log(self.e_c_upper),
            "modes": [list(m) for m in self.modes],
            "coefficients": self.coefficients.tolist(),
            "evaluations": self.evaluations,
            "gap": self.gap,
        }


def sup_slope_objective(op: OperatorSpec, chi: HermitianField, G: ScalarField, u: np.ndarray) -> float:
    """max e^{-G} f(lam[chi + dd^c u]); +inf when u is not admissible."""
    A = chi.values + ddc_array(u, G.grid)
    lam = hermitian_eigvals(A)
    if not np.all(in_cone(operator_cone(op), lam)):
        return math.inf
    return float(np.max(np.exp(-G.values) * eval_f_unchecked(op, lam)))


def estimate_sup_slope(
    op: OperatorSpec,
    chi: HermitianField,
    G: ScalarField,
    modes: int = 5,
    budget: int = 4000,
    step: float = 0.05,
    min_step: float = 1e-7,
    warm_start=None,
    c_solver: float | None = None,
) -> SupSlopeResult:
    """Certified upper bound on e^c by compass search over Fourier coefficients.

    Every admissible trial u gives e^c <= max e^{-G} f(lam[chi + dd^c u]);
    only strict improvements are accepted, so the value never increases
    past its starting point. ``warm_start`` may be a shorter coefficient
    vector from a poorer nested family.
    """
    grid = G.grid
    mlist = fourier_modes(grid.ndim, modes)
    basis = _trial_basis(grid, mlist)
    a = np.zeros(len(basis))
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float)
        if ws.size > a.size:
            raise ArgumentError("warm start has more coefficients than the family")
        a[: ws.size] = ws

    def objective(coef):
        return sup_slope_objective(op, chi, G, np.tensordot(coef, basis, axes=1))

    best = objective(a)
    evals = 1
    if not math.isfinite(best):
        raise HessianLabError("no admissible trial field (the start is outside the cone)")
    h = step
    while h >= min_step and evals < budget:
        improved = False
        for i in range(a.size):
            for sgn in (1.0, -1.0):
                if evals >= budget:
                    break
                trial = a.copy()
                trial[i] += sgn * h
                val = objective(trial)
                evals += 1
                if val < best:
                    a, best, improved = trial, val, True
                    break
        if not improved:
            h *= 0.5
    u = ScalarField(grid, np.tensordot(a, basis, axes=1))
    gap = None if c_solver is None else best / math.exp(c_solver) - 1.0
    return SupSlopeResult(best, u, a, mlist, evals, gap)


def nested_sup_slope(op, chi, G, mode_counts, **kw) -> list[SupSlopeResult]:
    """Run ``estimate_sup_slope`` over increasing families, each warm-started from the last."""
    out = []
    ws = None
    for m in sorted(mode_counts):
        r = estimate_sup_slope(op, chi, G, modes=m, warm_start=ws, **kw)
        out.append(r)
        ws = r.coefficients
    return out


# -- gluing ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Chart:
    """A local piece for gluing: open set ``domain``, compact ``core`` inside it, field v, margin eps."""

    domain: np.ndarray
    core: np.ndarray
    v: ScalarField
    eps: float


def _boundary_layer(mask: np.ndarray) -> np.ndarray:
    edge = np.zeros_like(mask)
    for a in range(mask.ndim):
        for s in (1, -1):
            edge |= mask & ~np.roll(mask, s, axis=a)
    return edge


def glue_subsolutions(u: ScalarField, cover: list, eps_weights=None) -> ScalarField:
    """w = M_eps{v_a(x) : x in domain_a}, after checking the cover conditions.

    Conditions checked on the grid: the cores cover every point,
    v_a - eps_a > u on core_a and v_a + eps_a < u on the boundary layer of
    domain_a (domain points with a grid neighbour outside it).
    """
    if not cover:
        raise ArgumentError("empty cover")
    eps = [ch.eps for ch in cover] if eps_weights is None else list(eps_weights)
    if len(eps) != len(cover):
        raise ArgumentError("one eps weight per chart required")
    shape = u.grid.shape
    covered = np.zeros(shape, dtype=bool)
    failures = []
    for a, (ch, e) in enumerate(zip(cover, eps)):
        if ch.domain.shape != shape or ch.core.shape != shape:
            raise ArgumentError(f"chart {a} masks do not match the grid")
        if not e > 0:
            raise ArgumentError("chart margins must be positive")
        if np.any(ch.core & ~ch.domain):
            raise DataError(f"chart {a}: core not inside domain")
        covered |= ch.core
        bad_core = ch.core & ~(ch.v.values - e > u.values)
        bad_edge = _boundary_layer(ch.domain) & ~(ch.v.values + e < u.values)
        # a chart whose domain is the whole torus has no boundary
        bad = np.flatnonzero((bad_core | bad_edge).ravel())
        if bad.size:
            failures.append((a, bad.tolist()))
    if failures:
        a, pts = failures[0]
        raise DataError(f"cover condition fails for chart {a} at {len(pts)} points", points=failures)
    if not np.all(covered):
        pts = np.flatnonzero(~covered.ravel())
        raise DataError("cores do not cover the grid", points=[(-1, pts.tolist())])
    T = np.stack([np.where(ch.domain, ch.v.values, -np.inf).ravel() for ch in cover], axis=-1)
    E = np.broadcast_to(np.asarray(eps, dtype=float), T.shape)
    if len(cover) == 1:
        return ScalarField(u.grid, T[:, 0].reshape(shape))
    return ScalarField(u.grid, reg_max_batch(T, E).reshape(shape))


# -- Dirichlet problem on a ball ------------------------------------------------

@dataclass(frozen=True, eq=False)
class DirichletResult:
    points: np.ndarray  # interior grid points, shape (P, 2n)
    values: np.ndarray
    h: float
    radius: float
    residual: float
    A: float
    iterations: int
    residuals: list


def _real_to_complex_coeffs(n: int) -> dict:
    """For each real index pair (a <= b), the complex Hessian it contributes to."""
    d = 2 * n
    out = {}
    for a in range(d):
        for b in range(a, d):
            E = np.zeros((d, d))
            E[a, b] = E[b, a] = 1.0
            C = np.zeros((n, n), dtype=complex)
            for j in range(n):
                for k in range(n):
                    xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
                    C[j, k] = 0.25 * ((E[xj, xk] + E[yj, yk]) + 1j * (E[xj, yk] - E[yj, xk]))
            out[(a, b)] = C
    return out


def _directions(d: int):
    dirs = []
    for a in range(d):
        v = np.zeros(d, dtype=int)
        v[a] = 1
        dirs.append(("axis", (a,), v))
    for a in range(d):
        for b in range(a + 1, d):
            for s in (1, -1):
                v = np.zeros(d, dtype=int)
                v[a], v[b] = 1, s
                dirs.append(("diag", (a, b, s), v))
    return dirs


def _ray_exit(x: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    """Positive s with |x + s v| = r, per row of x."""
    vv = float(v @ v)
    xv = x @ v
    xx = np.einsum("ij,ij->i", x, x)
    return (-xv + np.sqrt(xv * xv - vv * (xx - r * r))) / vv


class _BallStencil:
    """Shortley-Weller directional second differences on grid points inside a ball."""

    def __init__(self, n: int, radius: float, cells: int):
        self.n = n
        self.d = 2 * n
        self.r = radius
        self.h = radius / cells
        rng = np.arange(-cells, cells + 1)
        pts = np.array(list(itertools.product(rng, repeat=self.d)), dtype=int)
        x = pts * self.h
        inside = np.einsum("ij,ij->i", x, x) < radius * radius * (1 - 1e-12)
        self.idx = pts[inside]
        self.x = x[inside]
        self.P = len(self.idx)
        # dense index box for neighbour lookup
        box = np.full((2 * cells + 3,) * self.d, -1, dtype=np.int64)
        box[tuple((self.idx + cells + 1).T)] = np.arange(self.P)
        self.ops = {}
        for kind, key, v in _directions(self.d):
            nbr, dist = {}, {}
            for sgn in (1, -1):
                j = box[tuple((self.idx + sgn * v + cells + 1).T)]
                dd = np.ones(self.P)
                out = j < 0
                if np.any(out):
                    dd[out] = _ray_exit(self.x[out], sgn * v * self.h, radius)
                nbr[sgn], dist[sgn] = j, dd
            df, db = dist[1], dist[-1]
            # d^2/dt^2 u(x + t v) divided by |v|^2
            scale = self.h**2 * float(v @ v)
            w = {1: 2.0 / (df * (df + db) * scale), -1: 2.0 / (db * (df + db) * scale)}
            rows = [np.arange(self.P)]
            cols = [np.arange(self.P)]
            vals = [-(w[1] + w[-1])]
            const_pts = []
            for sgn in (1, -1):
                has = nbr[sgn] >= 0
                rows.append(np.flatnonzero(has))
                cols.append(nbr[sgn][has])
                vals.append(w[sgn][has])
                bpts = self.x + (sgn * dist[sgn])[:, None] * (v * self.h)[None, :]
                const_pts.append((np.where(has, 0.0, w[sgn]), bpts))
            D = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.P, self.P)
            )
            self.ops[(kind, key)] = (D, const_pts)

    def hessian_ops(self, g):
        """Sparse operators and boundary constants for each real Hessian entry (a <= b)."""
        out = {}
        cache = {}
        for (kind, key), (D, const_pts) in self.ops.items():
            const = sum(w * g(bp) for w, bp in const_pts)
            cache[(kind, key)] = (D, const)
        for a in range(self.d):
            out[(a, a)] = cache[("axis", (a,))]
            for b in range(a + 1, self.d):
                Dp, cp = cache[("diag", (a, b, 1))]
                Dm, cm = cache[("diag", (a, b, -1))]
                # (H_aa + H_bb +- 2 H_ab) / 2 along e_a +- e_b
                out[(a, b)] = ((Dp - Dm) * 0.5, (cp - cm) * 0.5)
        return out


def _sparse_solve(J, b, d):
    # planar stencils factor with little fill; 4-D balls go through ILU-GMRES
    if J.shape[0] <= 2000 or (d == 2 and J.shape[0] <= 200000):
        return spsolve(J, b)
    ilu = spilu(J, drop_tol=1e-5, fill_factor=20)
    M = LinearOperator(J.shape, matvec=ilu.solve, dtype=float)
    x, info = gmres(J, b, M=M, rtol=1e-12, atol=0.0, restart=100, maxiter=50)
    if info != 0:
        x = spsolve(J, b)
    return x


def _as_callable(fn, d):
    if callable(fn):
        return lambda x: np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape[:1])
    val = float(fn)
    return lambda x: np.full(x.shape[0], val)


def solve_dirichlet_ball(
    op: OperatorSpec,
    radius: float,
    boundary,
    rhs,
    chi=None,
    cells: int | None = None,
    tol: float = 1e-10,
    max_newton: int = 60,
) -> DirichletResult:
    """fd2 Newton solve of f(lam[chi + dd^c u]) = rhs in the ball |x| < radius of C^n.

    ``boundary`` and ``rhs`` are callables on points of R^{2n} (rows of an
    array) or constants; ``chi`` a constant Hermitian matrix (identity by
    default). The seed is A(|x|^2 - r^2) + g with A doubled until the seed is
    an admissible subsolution.
    """
    n = op.n
    if n not in (1, 2):
        raise ArgumentError("Dirichlet solve supports n <= 2")
    if not radius > 0:
        raise ArgumentError("radius must be positive")
    d = 2 * n
    cells = cells or (16 if n == 1 else 6)
    chi = np.eye(n, dtype=complex) if chi is None else np.asarray(chi, dtype=complex)
    g = _as_callable(boundary, d)
    psi = _as_callable(rhs, d)
    st = _BallStencil(n, radius, cells)
    target = psi(st.x)
    if not np.all(target > 0):
        raise ArgumentError("rhs must be bounded below by a positive constant (f vanishes on the cone boundary)")
    hops = st.hessian_ops(g)
    coeffs = _real_to_complex_coeffs(n)
    cone = operator_cone(op)

    def complex_hessian(u):
        C = np.broadcast_to(chi, (st.P, n, n)).copy()
        for (a, b), (D, const) in hops.items():
            C += (D @ u + const)[:, None, None] * coeffs[(a, b)]
        return C

    def evaluate(u):
        C = complex_hessian(u)
        lam = hermitian_eigvals(C)
        return C, lam, eval_f_unchecked(op, lam) - target, float(np.min(cone_margin(cone, lam)))

    xx = np.einsum("ij,ij->i", st.x, st.x)
    gx = g(st.x)
    A = 1.0
    for _ in range(60):
        u = A * (xx - radius**2) + gx
        _, _, R, margin = evaluate(u)
        if margin > 0 and np.all(R >= 0):
            break
        A *= 2
    else:
        raise NonConvergenceError("A-doubling did not produce an admissible seed", {"A": A})
    seed_A = A
    C, lam, R, margin = evaluate(u)
    res = float(np.max(np.abs(R)))
    history = [res]
    for _ in range(max_newton):
        if res <= tol:
            break
        P = linearization_weights(op, C, lam)
        J = sp.csr_matrix((st.P, st.P))
        for (a, b), (D, _) in hops.items():
            w = _contract(P, np.broadcast_to(coeffs[(a, b)], P.shape))
            J = J + sp.diags(w) @ D
        du = _sparse_solve(J.tocsc(), -R, d)
        alpha = 1.0
        while True:
            trial = u + alpha * du
            Ct, lt, Rt, mt = evaluate(trial)
            rt = float(np.max(np.abs(Rt)))
            if mt > 0 and mt >= 0.5 * margin and rt <= (1 - ARMIJO * alpha) * res:
                break
            alpha *= 0.5
            if alpha < MIN_STEP:
                raise NonConvergenceError("damping underflow in the Dirichlet solve", {"residuals": history})
        u, C, lam, R, margin, res = trial, Ct, lt, Rt, mt, rt
        history.append(res)
    if res > tol:
        raise NonConvergenceError("Dirichlet Newton did not converge", {"residuals": history})
    return DirichletResult(st.x, u, st.h, radius, res, seed_A, len(history) - 1, history)
