"""Sup/inf convolutions on the torus and discrete viscosity checks.

On the flat torus exp_z(xi) = z + xi, so the convolutions are maxima (minima)
of shifted copies of the field penalized by |xi|^2 / eps over grid offsets.
The checkers replace touching test functions by finite differences at each
grid point.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .symfunc import (
    GammaInf,
    OperatorSpec,
    eval_f_unchecked,
    f_inf_branches,
    in_cone,
    operator_cone,
)
from .torusgrid import HermitianField, ScalarField, ddc, eigenvalues


@dataclass(frozen=True, eq=False)
class ConvolutionReport:
    eps: float
    kind: str
    field: ScalarField
    radius: float
    semiconvexity: float

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "kind": self.kind,
            "radius": self.radius,
            "semiconvexity": self.semiconvexity,
            "min": float(self.field.values.min()),
            "max": float(self.field.values.max()),
        }


@dataclass(frozen=True)
class SubsolutionReport:
    mode: str
    worst_margin: float
    delta0: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "worst_margin": _json_float(self.worst_margin),
            "delta0": _json_float(self.delta0),
            "violations": [int(v) for v in self.violations],
        }


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


# -- convolutions -----------------------------------------------------------------

def search_radius(phi: ScalarField, eps: float) -> float:
    osc = float(phi.values.max() - phi.values.min())
    return math.sqrt(eps * osc) + phi.grid.h


def _offsets(ndim: int, reach: int, radius_cells: float | None):
    rng = range(-reach, reach + 1)
    for m in itertools.product(rng, repeat=ndim):
        if radius_cells is None or sum(c * c for c in m) <= radius_cells**2:
            yield m


def _convolve(values: np.ndarray, h: float, eps: float, offsets) -> np.ndarray:
    best = np.full(values.shape, -np.inf)
    axes = tuple(range(values.ndim))
    for m in offsets:
        pen = eps - (h * h * sum(c * c for c in m)) / eps
        shifted = np.roll(values, tuple(-c for c in m), axis=axes)
        np.maximum(best, shifted + pen, out=best)
    return best


def _semiconvexity(values: np.ndarray, h: float, eps: float, sign: float) -> float:
    # second differences of sign*phi^eps + |z|^2/eps along every grid axis
    worst = np.inf
    quad = 2.0 * h * h / eps
    for a in range(values.ndim):
        d2 = np.roll(values, -1, a) - 2 * values + np.roll(values, 1, a)
        worst = min(worst, float((sign * d2).min() + quad))
    return worst


def _check_eps(eps) -> float:
    eps = float(eps)
    if not eps > 0 or not math.isfinite(eps):
        raise ArgumentError(f"eps must be positive, got {eps}")
    return eps


def sup_convolution(phi: ScalarField, eps: float) -> ConvolutionReport:
    """phi^eps(z) = max_xi phi(z + xi) + eps - |xi|^2/eps over grid offsets |xi| <= r*."""
    eps = _check_eps(eps)
    g = phi.grid
    r = search_radius(phi, eps)
    reach = int(math.ceil(r / g.h))
    out = _convolve(phi.values, g.h, eps, _offsets(g.ndim, reach, r / g.h))
    return ConvolutionReport(eps, "sup", ScalarField(g, out), r, _semiconvexity(out, g.h, eps, 1.0))


def inf_convolution(phi: ScalarField, eps: float) -> ConvolutionReport:
    """phi_eps = -((-phi)^eps)."""
    rep = sup_convolution(-phi, eps)
    return ConvolutionReport(eps, "inf", -rep.field, rep.radius, rep.semiconvexity)


def sup_convolution_bruteforce(phi: ScalarField, eps: float) -> ScalarField:
    """Reference: every lattice offset with |m_a| <= N on each axis."""
    eps = _check_eps(eps)
    g = phi.grid
    return ScalarField(g, _convolve(phi.values, g.h, eps, _offsets(g.ndim, g.N, None)))


# -- checkers ---------------------------------------------------------------------

def _spectrum(chi: HermitianField, u: ScalarField, method: str, omega0=None) -> np.ndarray:
    if chi.grid != u.grid:
        raise ArgumentError("chi and u live on different grids")
    return eigenvalues(omega0, chi + ddc(u, method))


def _rhs_values(rhs, grid) -> np.ndarray:
    if isinstance(rhs, ScalarField):
        if rhs.grid != grid:
            raise ArgumentError("rhs lives on a different grid")
        return rhs.values
    return np.broadcast_to(np.asarray(rhs, dtype=float), grid.shape)


def _validate_spec(spec: OperatorSpec, grid) -> None:
    if spec.n != grid.n:
        raise ArgumentError(f"operator {spec} has dimension {spec.n}, grid has {grid.n}")


def operator_values(spec: OperatorSpec, mode: str, lam: np.ndarray):
    """(values, inside) of f on Gamma or f_inf on Gamma_inf, pointwise."""
    if mode == "f":
        inside = in_cone(operator_cone(spec), lam)
        return eval_f_unchecked(spec, lam), inside
    if mode == "f_inf":
        inside = in_cone(GammaInf(spec), lam)
        if not spec.is_quotient:
            return np.where(inside, np.inf, np.nan), inside
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = f_inf_branches(spec, lam).min(axis=-1)
        return np.where(inside, vals, np.nan), inside
    raise ArgumentError(f"unknown cone mode {mode!r}; expected 'f' or 'f_inf'")


def check_subsolution(
    spec: OperatorSpec,
    mode: str,
    chi: HermitianField,
    u: ScalarField,
    rhs,
    method: str = "fd2",
) -> SubsolutionReport:
    """Pointwise cone membership and margin operator - rhs at every grid point."""
    _validate_spec(spec, u.grid)
    lam = _spectrum(chi, u, method)
    vals, inside = operator_values(spec, mode, lam)
    r = _rhs_values(rhs, u.grid)
    violations = np.flatnonzero(~np.ravel(inside)).tolist()
    if violations:
        worst = -math.inf
    else:
        worst = float(np.min(vals - r))
    return SubsolutionReport(mode, worst, max(0.0, worst), violations)


def check_supersolution(
    spec: OperatorSpec,
    chi: HermitianField,
    u: ScalarField,
    rhs,
    method: str = "fd2",
    tol: float = 0.0,
) -> SubsolutionReport:
    """At each point either lam is outside Gamma or f(lam) <= rhs + tol.

    ``worst_margin`` is min(rhs - f) over points inside the cone.
    """
    _validate_spec(spec, u.grid)
    lam = _spectrum(chi, u, method)
    vals, inside = operator_values(spec, "f", lam)
    r = _rhs_values(rhs, u.grid)
    gap = np.where(inside, r - vals, np.inf)
    violations = np.flatnonzero(np.ravel(gap < -tol)).tolist()
    worst = float(gap.min())
    return SubsolutionReport("super", worst, max(0.0, worst), violations)


# -- convolution trend ------------------------------------------------------------

@dataclass(frozen=True)
class TrendPoint:
    eps: float
    violation: float
    inflation: float


def needed_inflation(spec, chi, v, rhs, method="fd2", hi: float = 1.0, iters: int = 60) -> float:
    """Smallest rho >= 0 (to bisection accuracy) with chi + rho*I making v a subsolution."""
    def ok(rho):
        rep = check_subsolution(spec, "f", chi.shift(rho), v, rhs, method)
        return rep.passed and rep.worst_margin >= 0

    if ok(0.0):
        return 0.0
    while not ok(hi):
        hi *= 2
        if hi > 1e6:
            return math.inf
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def convolution_trend(spec, chi, phi, rhs, eps_list=(0.1, 0.05, 0.025), method="fd2") -> list[TrendPoint]:
    """Subsolution violation of phi^eps/(1+eps) against chi/(1+eps) and rhs.

    ``violation`` is max(0, -worst margin); ``inflation`` the rho needed so
    that (chi + rho I)/(1+eps) restores the inequality.
    """
    out = []
    for eps in eps_list:
        a = float(eps)
        v = sup_convolution(phi, eps).field * (1.0 / (1 + a))
        chi_a = chi * (1.0 / (1 + a))
        rep = check_subsolution(spec, "f", chi_a, v, rhs, method)
        viol = math.inf if rep.violations else max(0.0, -rep.worst_margin)
        rho = needed_inflation(spec, chi_a, v, rhs, method) * (1 + a)
        out.append(TrendPoint(a, viol, rho))
    return out
