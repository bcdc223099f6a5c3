"""De Giorgi extinction routine and stability / uniqueness experiment harnesses."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ArgumentError, HessianLabError
from .solver import ProblemSpec, SolveResult, solve_periodic
from .symfunc import OperatorSpec, in_cone, operator_cone
from .torusgrid import HermitianField, ScalarField, ddc, eigenvalues, norm_l1, norm_linf
from .viscosity import check_subsolution


# -- De Giorgi ------------------------------------------------------------------

@dataclass(frozen=True)
class DeGiorgiInput:
    """A non-increasing u >= 0 on [s0, inf), sampled or callable.

    Supply either ``s``/``u`` sample arrays or ``fn``; ``B0`` and ``mu`` are
    the constants of the hypothesis t*u(s+t) <= B0*u(s)^(1+mu).
    """

    B0: float
    mu: float
    s0: float = 0.0
    s: tuple | None = None
    u: tuple | None = None
    fn: Callable | None = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ArgumentError("mu must be positive")
        if not self.B0 > 0:
            raise ArgumentError("B0 must be positive")
        if self.s0 < 0:
            raise ArgumentError("s0 must be nonnegative")
        if self.fn is None:
            if self.s is None or self.u is None or len(self.s) != len(self.u) or not len(self.s):
                raise ArgumentError("provide matching s and u samples or a callable")
            s = np.asarray(self.s, dtype=float)
            u = np.asarray(self.u, dtype=float)
            if np.any(np.diff(s) <= 0):
                raise ArgumentError("samples must have increasing s")
            if np.any(np.diff(u) > 0) or np.any(u < 0):
                raise ArgumentError("u must be non-increasing and nonnegative")

    def value(self, s: float) -> float:
        if self.fn is not None:
            return float(self.fn(s))
        return float(np.interp(s, self.s, self.u))


def de_giorgi_bound(inp: DeGiorgiInput) -> float:
    """s0 + 2 B0 u(s0)^mu / (1 - 2^-mu)."""
    return inp.s0 + 2.0 * inp.B0 * inp.value(inp.s0) ** inp.mu / (1.0 - 2.0 ** (-inp.mu))


@dataclass(frozen=True)
class DeGiorgiReport:
    hypothesis_holds: bool
    extinction_observed: float | None
    bound: float
    within_bound: bool | None
    worst_ratio: float


def de_giorgi_verify(inp: DeGiorgiInput, grid=None, rel_tol: float = 1e-12) -> DeGiorgiReport:
    """Check the hypothesis on all sample pairs and compare extinction with the bound.

    For a callable input, ``grid`` gives the sample points (default 2001
    points on [s0, 2*bound]).
    """
    bound = de_giorgi_bound(inp)
    if inp.fn is not None:
        s = np.asarray(grid, dtype=float) if grid is not None else np.linspace(inp.s0, inp.s0 + 2 * (bound - inp.s0) + 1, 2001)
        u = np.array([float(inp.fn(x)) for x in s])
    else:
        s = np.asarray(inp.s, dtype=float)
        u = np.asarray(inp.u, dtype=float)
    keep = s >= inp.s0
    s, u = s[keep], u[keep]
    # t*u(s+t) versus B0*u(s)^(1+mu) for every ordered pair
    t = s[None, :] - s[:, None]
    lhs = np.where(t > 0, t * u[None, :], 0.0)
    rhs = inp.B0 * u[:, None] ** (1 + inp.mu)
    excess = lhs - rhs * (1 + rel_tol)
    holds = bool(np.all(excess <= 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    worst = float(ratio.max()) if ratio.size else 0.0
    zero = np.flatnonzero(u == 0)
    ext = float(s[zero[0]]) if zero.size else None
    within = None if (ext is None or not holds) else ext <= bound * (1 + 1e-12)
    return DeGiorgiReport(holds, ext, bound, within, worst)


def de_giorgi_instance(rng, steps: int | None = None) -> DeGiorgiInput:
    """Sampled u following the extinction recursion with shortened steps.

    s_{k+1} = s_k + 2 theta B0 u(s_k)^mu with theta < 1 and u halving at
    each step; after the last step u is set to zero.
    """
    B0 = float(rng.uniform(0.1, 5.0))
    mu = float(rng.uniform(0.2, 3.0))
    s0 = float(rng.uniform(0.0, 5.0))
    u0 = float(rng.uniform(0.1, 10.0))
    theta = float(rng.uniform(0.5, 0.95))
    steps = int(rng.integers(3, 30)) if steps is None else steps
    s, u = [s0], [u0]
    for _ in range(steps):
        step = 2 * theta * B0 * u[-1] ** mu
        if step < 1e-9 * (1 + s[-1]):
            break
        s.append(s[-1] + step)
        u.append(u[-1] / 2)
    u[-1] = 0.0
    return DeGiorgiInput(B0=B0, mu=mu, s0=s0, s=tuple(s), u=tuple(u))


# -- stability ------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityRecord:
    nu: float
    amplitude: float
    lhs: float
    rhs1: float
    rhs2: float
    C: float
    c1: float
    c2: float
    delta0: float
    c_bound_ok: bool

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_nu(n: int) -> float:
    return 0.4 if n == 1 else 0.3


def _solve(op, chi, G, **kw) -> SolveResult:
    return solve_periodic(ProblemSpec(op, chi, G, **kw))


def stability_experiment(
    op: OperatorSpec,
    chi: HermitianField,
    G_base: ScalarField,
    perturbation: ScalarField,
    amplitudes,
    nu: float | None = None,
    tol: float = 1e-10,
) -> list[StabilityRecord]:
    """Solve with G_base and G_base + a*perturbation for each amplitude a."""
    n = G_base.grid.n
    nu = default_nu(n) if nu is None else float(nu)
    if not 0 < nu < 1.0 / n:
        raise ArgumentError(f"nu must lie in (0, 1/n) = (0, {1.0 / n})")
    base = _solve(op, chi, G_base, residual_linf=tol)
    out = []
    for a in amplitudes:
        G2 = G_base + perturbation * float(a)
        try:
            other = base if a == 0 else _solve(op, chi, G2, residual_linf=tol)
        except HessianLabError as exc:
            raise type(exc)(f"solve failed at amplitude {a}: {exc}") from exc
        rhs_bound = np.exp(np.maximum(G_base.values + base.c, G2.values + other.c))
        delta0 = check_subsolution(op, "f_inf", chi, ScalarField.constant(chi.grid, 0.0), rhs_bound).delta0
        if not delta0 > 0:
            raise ArgumentError(f"chi is not a strict subsolution at amplitude {a}")
        diff = base.phi - other.phi
        lhs = norm_linf(diff)
        rhs1 = norm_linf(np.exp(G_base.values) - np.exp(G2.values))
        rhs2 = norm_l1(diff) ** (nu / (1 + nu))
        denom = rhs1 + rhs2
        C = lhs / denom if denom > 0 else 0.0
        dG = norm_linf(G2 - G_base)
        slack = 2 * tol
        ok = (base.c - dG - slack <= other.c) and (other.c <= base.c + dG + slack)
        out.append(StabilityRecord(nu, float(a), lhs, rhs1, rhs2, C, base.c, other.c, delta0, bool(ok)))
    return out


# -- uniqueness -----------------------------------------------------------------

@dataclass(frozen=True)
class UniquenessReport:
    max_phi_distance: float
    max_c_spread: float
    converged: int
    failed: list = field(default_factory=list)
    results: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "max_phi_distance": self.max_phi_distance,
            "max_c_spread": self.max_c_spread,
            "converged": self.converged,
            "failed": self.failed,
            "c_values": [r.c for r in self.results],
        }


def random_seed_field(
    grid, rng, amplitude: float = 0.02, modes: int = 3, quantize: int = 20, op=None, chi=None
) -> ScalarField:
    """Smooth random trigonometric seed with dyadic values (exact constant shifts).

    With ``op`` and ``chi`` given, the seed is halved until lam[chi + dd^c seed]
    lies in the operator cone everywhere; halving keeps the values dyadic.
    """
    coords = grid.coords()
    vals = np.zeros(grid.shape)
    for _ in range(modes):
        m = rng.integers(-2, 3, size=grid.ndim)
        ph = rng.uniform(0, 2 * np.pi)
        vals += rng.uniform(-1, 1) * np.cos(2 * np.pi * sum(mi * x for mi, x in zip(m, coords)) + ph)
    vals *= amplitude / max(1.0, np.abs(vals).max())
    seed = ScalarField(grid, np.round(vals * 2.0**quantize) / 2.0**quantize)
    if op is not None and chi is not None:
        for _ in range(60):
            if np.all(in_cone(operator_cone(op), eigenvalues(None, chi + ddc(seed)))):
                break
            seed = seed * 0.5
        else:
            raise ArgumentError("chi itself is not admissible for the operator")
    return seed


def uniqueness_experiment(problem: ProblemSpec, seeds) -> UniquenessReport:
    """Solve from each seed and report the worst pairwise disagreement."""
    results, failed = [], []
    for i, seed in enumerate(seeds):
        try:
            results.append(solve_periodic(problem, seed))
        except HessianLabError as exc:
            failed.append({"seed": i, "error": str(exc)})
    dphi, dc = 0.0, 0.0
    for a, b in itertools.combinations(results, 2):
        pa, pb = a.phi.values, b.phi.values
        if not problem.monotone:
            pa, pb = pa - pa.mean(), pb - pb.mean()
        dphi = max(dphi, float(np.max(np.abs(pa - pb))))
        dc = max(dc, abs(a.c - b.c))
    return UniquenessReport(dphi, dc, len(results), failed, results)


def fitted_exponent(records) -> float | None:
    """Least-squares slope of log lhs against log ||phi1 - phi2||_L1 (through rhs2)."""
    pts = [(r.rhs2, r.lhs, r.nu) for r in records if r.lhs > 0 and r.rhs2 > 0]
    if len(pts) < 2:
        return None
    l1 = np.array([p[0] ** ((1 + p[2]) / p[2]) for p in pts])
    lhs = np.array([p[1] for p in pts])
    slope = np.polyfit(np.log(l1), np.log(lhs), 1)[0]
    return float(slope) if math.isfinite(slope) else None
