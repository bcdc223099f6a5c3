"""Richberg smoothing of strictly convex functions on boxes (d <= 2), and the
regularized limit operator g_eps built from it.

A smoothed function is M_eps{v_j} where v_j = l_j + 3 t_j / 4 + eps_j |x - x_j|^2
is attached to the section S_{t_j}(x_j) = {u < l_j + t_j}; seeds x_j come from a
quadtree whose cells are covered by the half-level sections.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .errors import ArgumentError, ConstructionError, DomainError
from .regmax import reg_max_grid
from .symfunc import GammaInf, OperatorSpec, f_inf_branches, in_cone, sigmas, skipped_sigmas


# -- oracles ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConvexOracle:
    """A convex u on the open box (lo, hi) with a subgradient for supporting planes."""

    lo: np.ndarray
    hi: np.ndarray
    fn: Callable
    subgrad: Callable

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1 or not np.all(hi > lo):
            raise ArgumentError("box needs lo < hi componentwise")
        if lo.size > 2:
            raise ArgumentError("convex smoothing supports d <= 2")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def d(self) -> int:
        return self.lo.size

    @property
    def size(self) -> float:
        return float(np.max(self.hi - self.lo))

    def eval(self, x) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def supporting_affine(self, x0):
        """(u(x0), p) so that l(x) = u(x0) + p.(x - x0) supports u at x0."""
        x0 = np.asarray(x0, dtype=float)
        return self.eval(x0), np.asarray(self.subgrad(x0), dtype=float)

    def interior(self, x, margin: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x > self.lo + margin) & (x < self.hi - margin), axis=-1)

    @classmethod
    def paraboloid(cls, lo, hi, center=None):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        a = np.zeros_like(lo) if center is None else np.asarray(center, dtype=float)
        return cls(lo, hi, lambda x: np.sum((x - a) ** 2, axis=-1), lambda x: 2 * (x - a))

    @classmethod
    def cone_plus_paraboloid(cls, lo, hi):
        """u = |x| + |x|^2, with subgradient 0 at the kink."""

        def fn(x):
            r2 = np.sum(x * x, axis=-1)
            return np.sqrt(r2) + r2

        def sg(x):
            r = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
            unit = np.divide(x, r, out=np.zeros_like(x), where=r > 0)
            return unit + 2 * x

        return cls(lo, hi, fn, sg)


def _ray_directions(d: int, rays: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    ang = 2 * np.pi * np.arange(rays) / rays
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def _exit_distance(oracle: ConvexOracle, x0: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance from x0 to the box boundary along each direction; shape (S, R)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(dirs[None] > 0, (oracle.hi - x0[:, None, :]) / dirs[None], np.inf)
        dn = np.where(dirs[None] < 0, (oracle.lo - x0[:, None, :]) / dirs[None], np.inf)
    return np.min(np.minimum(up, dn), axis=-1)


def _ray_radii(oracle, x0, val, slope, t, dirs, iters=60):
    """Bisection for the section boundary along each ray; shape (S, R).

    Returns (radii, hits_box) where hits_box marks rays that leave the box
    before reaching the level.
    """
    rmax = _exit_distance(oracle, x0, dirs) * (1 - 1e-9)

    def gap(r):
        pts = x0[:, None, :] + r[..., None] * dirs[None]
        lin = val[:, None] + np.einsum("sd,srd->sr", slope, pts - x0[:, None, :])
        return oracle.eval(pts) - lin - t[:, None]

    hits = gap(rmax) < 0
    lo = np.zeros_like(rmax)
    hi = rmax.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = gap(mid) < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.where(hits, rmax, 0.5 * (lo + hi)), hits


@dataclass(frozen=True, eq=False)
class Section:
    x0: np.ndarray
    t: float
    value: float
    slope: np.ndarray
    directions: np.ndarray
    radii: np.ndarray
    oracle: ConvexOracle

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lin = self.value + (x - self.x0) @ self.slope
        return self.oracle.interior(x) & (self.oracle.eval(x) < lin + self.t)

    @property
    def diameter(self) -> float:
        pts = self.x0 + self.radii[:, None] * self.directions
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt(np.max(np.sum(diff * diff, axis=-1))))


def section(oracle: ConvexOracle, x0, t: float, rays: int = 32) -> Section:
    """S_t(x0) = {x : u(x) < l_{x0}(x) + t} with a ray-sampled boundary."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (oracle.d,):
        raise ArgumentError(f"point has dimension {x0.size}, domain has {oracle.d}")
    if not oracle.interior(x0):
        raise ArgumentError("section base point must be interior to the domain")
    if not t > 0:
        raise ArgumentError("section level must be positive")
    val, slope = oracle.supporting_affine(x0)
    dirs = _ray_directions(oracle.d, rays)
    radii, _ = _ray_radii(oracle, x0[None], np.atleast_1d(val), slope[None], np.array([float(t)]), dirs)
    return Section(x0, float(t), float(val), slope, dirs, radii[0], oracle)


# -- smoothing --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SmoothedConvex:
    """Evaluator for the glued function; valid on the compact box [klo, khi]."""

    oracle: ConvexOracle
    seeds: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    t: np.ndarray
    eps: np.ndarray
    reach: np.ndarray
    klo: np.ndarray
    khi: np.ndarray
    points_per_eps: int = 24

    @functools.cached_property
    def _tree(self):
        return cKDTree(self.seeds)

    def __len__(self):
        return len(self.seeds)

    def _gather(self, x: np.ndarray):
        rmax = float(self.reach.max())
        counts = self._tree.query_ball_point(x, r=rmax, return_length=True)
        k = int(max(1, counts.max()))
        k = min(k, len(self.seeds))
        dist, idx = self._tree.query(x, k=k, distance_upper_bound=rmax * (1 + 1e-12))
        dist = dist.reshape(len(x), k)
        idx = idx.reshape(len(x), k)
        valid = idx < len(self.seeds)
        j = np.where(valid, idx, 0)
        xj = self.seeds[j]
        lin = self.values[j] + np.einsum("pkd,pkd->pk", self.slopes[j], x[:, None, :] - xj)
        u = self.oracle.eval(x)[:, None]
        gap = u - lin
        tj = self.t[j]
        inside = valid & (gap < tj) & (dist <= self.reach[j])
        core = inside & (gap < 0.5 * tj)
        v = lin + 0.75 * tj + self.eps[j] * np.sum((x[:, None, :] - xj) ** 2, axis=-1)
        return np.where(inside, v, -np.inf), np.where(inside, self.eps[j], 1.0), core

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.oracle.d)
        if not np.all((flat >= self.klo) & (flat <= self.khi)):
            bad = int(np.argmin(np.all((flat >= self.klo) & (flat <= self.khi), axis=-1)))
            raise DomainError(f"point {flat[bad].tolist()} outside the smoothed region", point=bad)
        out = np.empty(len(flat))
        chunk = 2048
        for s in range(0, len(flat), chunk):
            T, E, core = self._gather(flat[s : s + chunk])
            if not np.all(core.any(axis=1)):
                bad = int(np.argmin(core.any(axis=1))) + s
                raise ConstructionError("point not covered by any half-level section", witness=flat[bad])
            # drop dominated charts, then keep only the active columns
            top = np.max(T - E, axis=1, keepdims=True)
            T = np.where(T + E >= top, T, -np.inf)
            order = np.argsort(-T, axis=1, kind="stable")
            m = int((T > -np.inf).sum(axis=1).max())
            T = np.take_along_axis(T, order[:, :m], axis=1)
            E = np.take_along_axis(E, order[:, :m], axis=1)
            out[s : s + chunk] = reg_max_grid(T, E, self.points_per_eps)
        return out.reshape(x.shape[:-1])

    def hessian(self, x, step: float) -> np.ndarray:
        """Central-difference Hessian at each point; shape (..., d, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.oracle.d
        E = np.eye(d) * step
        f0 = self(x)
        H = np.empty(x.shape[:-1] + (d, d))
        for a in range(d):
            H[..., a, a] = (self(x + E[a]) - 2 * f0 + self(x - E[a])) / step**2
            for b in range(a + 1, d):
                pp = self(x + E[a] + E[b])
                pm = self(x + E[a] - E[b])
                mp = self(x - E[a] + E[b])
                mm = self(x - E[a] - E[b])
                H[..., a, b] = H[..., b, a] = (pp - pm - mp + mm) / (4 * step**2)
        return H


def _as_h(h):
    if callable(h):
        return lambda x: np.asarray(h(x), dtype=float)
    val = float(h)
    if not val > 0:
        raise ArgumentError("h must be positive")
    return lambda x: np.full(np.shape(x)[:-1], val)


def _levels(oracle, x0, val, slope, hfun, dirs, samples=6, rounds=30):
    """Largest t <= inf h over the section (sampled along rays), per seed."""
    t = np.maximum(hfun(x0), 0.0)
    if np.any(~(t > 0)):
        raise ArgumentError("h must be positive on the domain")
    frac = np.linspace(0.0, 1.0, samples + 1)[1:]
    for _ in range(rounds):
        radii, _ = _ray_radii(oracle, x0, val, slope, t, dirs, iters=40)
        pts = x0[:, None, None, :] + (radii[..., None, None] * frac[None, None, :, None]) * dirs[None, :, None, :]
        hmin = np.min(hfun(pts).reshape(len(x0), -1), axis=1)
        hmin = np.minimum(hmin, hfun(x0))
        new = np.minimum(t, 0.98 * hmin)
        if np.all(new >= t * (1 - 1e-12)):
            return t, hmin
        t = new
    return t, hmin


def _covered(oracle, pts, pool_x, pool_val, pool_slope, pool_t, block=256):
    """True where some pooled chart has u - l_j < t_j / 4 at the point."""
    u = oracle.eval(pts)
    out = np.zeros(len(pts), dtype=bool)
    for s in range(0, len(pool_x), block):
        sl = slice(s, s + block)
        lin = pool_val[sl][None] + np.einsum("jd,pjd->pj", pool_slope[sl], pts[:, None, :] - pool_x[sl][None])
        out |= np.any(u[:, None] - lin < 0.25 * pool_t[sl][None], axis=1)
    return out


def smooth_convex(
    oracle: ConvexOracle,
    h,
    rays: int = 32,
    gradient_spread: float | None = 0.05,
    min_cell: float | None = None,
    inset: float | None = None,
    coverage: str = "center",
    max_seeds: int = 200_000,
    check_convexity: bool = True,
) -> SmoothedConvex:
    """Build u~ with u <= u~ <= u + h and D^2 u~ > 0 on the inset box.

    Seeds come from a quadtree over the inset box. With ``coverage="center"``
    a cell is accepted when its half-diagonal fits inside the half-level
    section of its centre and, if ``gradient_spread`` is set, the subgradient
    varies across the cell by at most gradient_spread * sqrt(40 h / size)
    (so the nominal value applies at h = size/40; cells stop refining for
    this reason at ``min_cell``, default size/128). Every accepted centre is
    a seed.

    With ``coverage="union"`` every visited centre is a seed and a cell is
    accepted once a 7^d lattice of its points lies in the quarter-level
    section of some seed. This needs far fewer seeds for nearly flat u, but
    the seeds are sparse, so the Hessian of u~ is only guaranteed positive
    semidefinite up to quadrature error.

    Section levels follow t_j <= inf h over the section; the margin eps_j is
    the largest power of 1/2 times inf h / 4 with eps_j (1 + R_j^2) < t_j / 4.
    """
    if coverage not in ("center", "union"):
        raise ArgumentError(f"unknown coverage mode {coverage!r}")
    hfun = _as_h(h)
    d = oracle.d
    inset = oracle.size / 256 if inset is None else float(inset)
    klo, khi = oracle.lo + inset, oracle.hi - inset
    dirs = _ray_directions(d, rays)
    slack = 1.0 / math.cos(math.pi / rays) if d == 2 else 1.0
    centers = ((klo + khi) / 2)[None, :]
    halves = (0.5 * (khi - klo))[None, :]
    corners = np.array(list(np.ndindex(*(2,) * d))) * 2 - 1.0
    lattice = np.stack(np.meshgrid(*[np.linspace(-1, 1, 7)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    pool = []  # (x, val, slope, t, hmin) per level
    while len(centers):
        val, slope = oracle.supporting_affine(centers)
        if check_convexity:
            probe = centers[:, None, :] + 1e-3 * oracle.size * dirs[None]
            lin = val[:, None] + np.einsum("sd,srd->sr", slope, probe - centers[:, None, :])
            flat = oracle.eval(probe) - lin <= 1e-13 * (1 + np.abs(val[:, None]))
            if np.any(flat):
                s, r = np.argwhere(flat)[0]
                raise ConstructionError("oracle is not strictly convex at the sampled resolution", witness=probe[s, r])
        t, hmin = _levels(oracle, centers, val, slope, hfun, dirs)
        if coverage == "center":
            rhalf, _ = _ray_radii(oracle, centers, val, slope, 0.5 * t, dirs)
            inner = np.min(rhalf, axis=1) / slack
            ok = np.sqrt(np.sum(halves**2, axis=1)) < inner
            if gradient_spread is not None:
                pc = np.clip(centers[:, None, :] + corners[None] * halves[:, None, :], oracle.lo, oracle.hi)
                spread = np.max(np.linalg.norm(oracle.subgrad(pc) - slope[:, None, :], axis=-1), axis=1)
                # planes a cell apart differ by ~spread^2/curvature; keep that a fixed fraction of h
                tol = gradient_spread * np.sqrt(40.0 * hmin / oracle.size)
                floor = min_cell if min_cell is not None else oracle.size / 128
                ok &= (spread <= tol) | (np.max(halves, axis=1) * 2 <= floor)
            keep = ok
        else:
            keep = np.ones(len(centers), dtype=bool)
        pool.append((centers[keep], val[keep], slope[keep], t[keep], hmin[keep]))
        if coverage == "union":
            px, pv, ps, pt = (np.concatenate([p[i] for p in pool]) for i in range(4))
            pts = (centers[:, None, :] + lattice[None] * halves[:, None, :]).reshape(-1, d)
            ok = _covered(oracle, pts, px, pv, ps, pt).reshape(len(centers), -1).all(axis=1)
        centers, halves = centers[~ok], halves[~ok]
        if len(centers):
            if np.min(halves) < oracle.size * 1e-7:
                raise ConstructionError("quadtree refinement underflow", witness=centers[0])
            halves = halves / 2
            centers = (centers[:, None, :] + corners[None] * halves[:, None, :]).reshape(-1, d)
            halves = np.repeat(halves, 2**d, axis=0)
        if sum(len(p[0]) for p in pool) + len(centers) > max_seeds:
            raise ConstructionError("seed budget exceeded", witness=centers[0] if len(centers) else None)
    seeds, val, slope, t, hmin = (np.concatenate([p[i] for p in pool]) for i in range(5))
    rfull, _ = _ray_radii(oracle, seeds, val, slope, t, dirs)
    reach = np.max(rfull, axis=1) * slack * 1.05
    eps = 0.25 * hmin
    for _ in range(200):
        bad = ~(eps * (1 + reach**2) < 0.25 * t)
        if not np.any(bad):
            break
        eps = np.where(bad, 0.5 * eps, eps)
    return SmoothedConvex(oracle, seeds, val, slope, t, eps, reach, klo, khi)


def sample_table(sm: SmoothedConvex, samples: int = 64, step: float | None = None) -> dict:
    """Cell-centred samples on the box: x, u, u~, u~ - u and min Hessian eigenvalue."""
    o = sm.oracle
    axes = [o.lo[a] + (np.arange(samples) + 0.5) * (o.hi[a] - o.lo[a]) / samples for a in range(o.d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, o.d)
    step = o.size / 512 if step is None else step
    u = o.eval(grid)
    ut = sm(grid)
    H = sm.hessian(grid, step)
    mineig = np.linalg.eigvalsh(H)[:, 0]
    return {"x": grid, "u": u, "u_tilde": ut, "diff": ut - u, "min_hessian_eig": mineig}


# -- f_tilde and g_eps ------------------------------------------------------------

def _check_finite_family(spec: OperatorSpec):
    if not spec.has_finite_f_inf:
        raise ArgumentError(f"{spec} has f_inf = +inf; the regularization needs the quotient family")


def _arctan_part(eps: float, lam: np.ndarray) -> np.ndarray:
    n = lam.shape[-1]
    partial = lam.sum(axis=-1, keepdims=True) - lam
    return (eps / n) * np.sum(np.arctan(partial), axis=-1)


def f_tilde_eps(spec: OperatorSpec, eps: float, lam):
    """f_inf(lam) + (eps/n) sum_i arctan(sum_{k != i} lam_k)."""
    _check_finite_family(spec)
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != spec.n:
        raise ArgumentError(f"spectrum has dimension {lam.shape[-1]}, operator has {spec.n}")
    inside = in_cone(GammaInf(spec), lam)
    if not np.all(inside):
        raise DomainError(f"spectrum outside Gamma_inf of {spec}", point=int(np.argmin(np.ravel(inside))))
    out = f_inf_branches(spec, lam).min(axis=-1) + _arctan_part(eps, lam)
    return float(out) if np.ndim(out) == 0 else out


def _branch_grads(spec: OperatorSpec, lam: np.ndarray) -> np.ndarray:
    """Gradient of each branch f_{inf,i}; shape (..., n branches, n)."""
    n, k, l = spec.n, spec.k, spec.l
    p = 1.0 / (k - l)
    out = np.zeros(lam.shape[:-1] + (n, n))
    for i in range(n):
        rest = np.delete(lam, i, axis=-1)
        e = sigmas(rest)
        sk = skipped_sigmas(rest) if rest.shape[-1] > 0 else None
        num, den = e[..., k - 1], e[..., l - 1]
        dnum = sk[..., k - 2] if k >= 2 else np.zeros_like(rest)
        dden = sk[..., l - 2] if l >= 2 else np.zeros_like(rest)
        q = num / den
        dq = (dnum * den[..., None] - num[..., None] * dden) / (den**2)[..., None]
        g = p * (q ** (p - 1.0))[..., None] * dq
        others = [j for j in range(n) if j != i]
        out[..., i, others] = g
    return out


def f_tilde_oracle(spec: OperatorSpec, eps: float, lo, hi) -> ConvexOracle:
    """ConvexOracle for -f_tilde_eps on the box (lo, hi)^n."""
    _check_finite_family(spec)
    n = spec.n
    box_lo = np.full(n, float(lo))
    box_hi = np.full(n, float(hi))

    def fn(x):
        return -(f_inf_branches(spec, x).min(axis=-1) + _arctan_part(eps, x))

    def sg(x):
        branches = f_inf_branches(spec, x)
        i = np.argmin(branches, axis=-1)
        bg = np.take_along_axis(_branch_grads(spec, x), i[..., None, None], axis=-2)[..., 0, :]
        partial = x.sum(axis=-1, keepdims=True) - x
        w = 1.0 / (1.0 + partial**2)
        arct = (eps / n) * (np.sum(w, axis=-1, keepdims=True) - w)
        return -(bg + arct)

    return ConvexOracle(box_lo, box_hi, fn, sg)


@dataclass(frozen=True, eq=False)
class GEps:
    spec: OperatorSpec
    eps: float
    lo: float
    hi: float
    smoothed: SmoothedConvex | None

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.shape[-1] != self.spec.n:
            raise ArgumentError(f"spectrum has dimension {lam.shape[-1]}, operator has {self.spec.n}")
        inside = in_cone(GammaInf(self.spec), lam)
        if not np.all(inside):
            raise DomainError(f"spectrum outside Gamma_inf of {self.spec}", point=int(np.argmin(np.ravel(inside))))
        if self.smoothed is None:
            return _soft_min_g(self.spec, self.eps, lam)
        flat = lam.reshape(-1, 2)
        sm = self.smoothed
        ok = np.all((flat >= sm.klo) & (flat <= sm.khi), axis=-1)
        if not np.all(ok):
            bad = int(np.argmin(ok))
            raise DomainError(
                f"spectrum {flat[bad].tolist()} outside the precomputed box "
                f"[{sm.klo[0]:.4g}, {sm.khi[0]:.4g}]^2; rebuild with a larger box",
                point=bad,
            )
        both = np.concatenate([flat, flat[:, ::-1]])
        vals = -sm(both)
        out = 0.5 * (vals[: len(flat)] + vals[len(flat) :])
        out = out.reshape(lam.shape[:-1])
        return float(out) if out.ndim == 0 else out


def _soft_min_g(spec: OperatorSpec, eps: float, lam: np.ndarray):
    n = spec.n
    p = max(1.0, math.log(n) / -math.log1p(-eps)) if eps > 0 else math.inf
    br = f_inf_branches(spec, lam)
    if math.isinf(p):
        soft = br.min(axis=-1)
    else:
        m = br.min(axis=-1, keepdims=True)
        soft = m[..., 0] * np.sum((br / m) ** (-p), axis=-1) ** (-1.0 / p)
    out = soft + _arctan_part(eps, lam)
    return float(out) if np.ndim(out) == 0 else out


@functools.lru_cache(maxsize=8)
def build_g_eps(spec: OperatorSpec, eps: float, lo: float = 0.05, hi: float = 20.0) -> GEps:
    """g_eps on [lo, hi]^n; n = 2 runs the smoothing pipeline, n >= 3 the soft-min surrogate."""
    _check_finite_family(spec)
    if not 0 < eps < 1:
        raise ArgumentError("eps must lie in (0, 1)")
    if spec.n != 2:
        return GEps(spec, eps, lo, hi, None)
    pad = min((hi - lo) / 256, lo / 2)
    oracle = f_tilde_oracle(spec, eps, lo - pad, hi + pad)

    def h(x):
        return eps * f_inf_branches(spec, x).min(axis=-1)

    sm = smooth_convex(oracle, h, gradient_spread=None, inset=pad, coverage="union")
    return GEps(spec, eps, lo, hi, sm)


def g_eps(spec: OperatorSpec, eps: float, lam, lo: float = 0.05, hi: float = 20.0):
    return build_g_eps(spec, float(eps), float(lo), float(hi))(lam)
