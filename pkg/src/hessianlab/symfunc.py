"""Elementary symmetric functions, the operator families and their cones.

Spectra are plain float arrays whose last axis holds the n eigenvalues, so
every routine here also works on stacks of spectra (one per grid point).
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError, DomainError


class _PlusInfinity:
    """Marker for f_inf = +inf on the sigma_k family.

    Compares greater than every real number and refuses arithmetic, so it can
    never leak into a floating point computation as a NaN source.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "PLUS_INF"

    def __str__(self):
        return "+inf"

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("PLUS_INF")

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __float__(self):
        raise TypeError("PLUS_INF is a marker, not a float")


PLUS_INF = _PlusInfinity()


def is_plus_inf(value) -> bool:
    return value is PLUS_INF


class OperatorKind(enum.Enum):
    SIGMA_K_ROOT = "sigma"
    HESSIAN_QUOTIENT = "quot"


_SPEC_RE = re.compile(r"^\s*(sigma):(\d+)/(\d+)\s*$|^\s*(quot):(\d+):(\d+)/(\d+)\s*$")


@dataclass(frozen=True)
class OperatorSpec:
    """sigma_k^{1/k} (``kind=SIGMA_K_ROOT``) or (sigma_k/sigma_l)^{1/(k-l)}."""

    kind: OperatorKind
    n: int
    k: int
    l: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ArgumentError(f"dimension must be >= 1, got {self.n}")
        if self.kind is OperatorKind.SIGMA_K_ROOT:
            if not 1 <= self.k <= self.n:
                raise ArgumentError(f"sigma spec needs 1 <= k <= n, got k={self.k}, n={self.n}")
            if self.l != 0:
                raise ArgumentError("sigma spec takes no l")
        else:
            if not 1 <= self.l < self.k <= self.n:
                raise ArgumentError(
                    f"quotient spec needs 1 <= l < k <= n, got k={self.k}, l={self.l}, n={self.n}"
                )

    @classmethod
    def sigma(cls, k: int, n: int) -> "OperatorSpec":
        return cls(OperatorKind.SIGMA_K_ROOT, n, k)

    @classmethod
    def quotient(cls, k: int, l: int, n: int) -> "OperatorSpec":
        return cls(OperatorKind.HESSIAN_QUOTIENT, n, k, l)

    @classmethod
    def parse(cls, text: str) -> "OperatorSpec":
        """Parse ``sigma:k/n`` or ``quot:k:l/n``."""
        m = _SPEC_RE.match(text)
        if m is None:
            raise ArgumentError(f"cannot parse operator spec {text!r}; expected sigma:k/n or quot:k:l/n")
        if m.group(1):
            return cls.sigma(int(m.group(2)), int(m.group(3)))
        return cls.quotient(int(m.group(5)), int(m.group(6)), int(m.group(7)))

    def __str__(self):
        if self.kind is OperatorKind.SIGMA_K_ROOT:
            return f"sigma:{self.k}/{self.n}"
        return f"quot:{self.k}:{self.l}/{self.n}"

    @property
    def is_quotient(self) -> bool:
        return self.kind is OperatorKind.HESSIAN_QUOTIENT

    @property
    def has_finite_f_inf(self) -> bool:
        return self.is_quotient


class ConeKind(enum.Enum):
    GAMMA_K = "GammaK"
    GAMMA_INF = "GammaInf"
    GAMMA_PRIME = "GammaPrime"
    GAMMA_1 = "Gamma1"
    GAMMA_N = "GammaN"
    FULL_SPACE = "FullSpace"


@dataclass(frozen=True)
class ConeId:
    kind: ConeKind
    k: int | None = None
    spec: OperatorSpec | None = None

    def __post_init__(self):
        if self.kind is ConeKind.GAMMA_K and (self.k is None or self.k < 1):
            raise ArgumentError("GammaK needs k >= 1")
        if self.kind in (ConeKind.GAMMA_INF, ConeKind.GAMMA_PRIME) and self.spec is None:
            raise ArgumentError(f"{self.kind.value} needs an operator spec")

    def __str__(self):
        if self.kind is ConeKind.GAMMA_K:
            return f"GammaK({self.k})"
        if self.spec is not None:
            return f"{self.kind.value}({self.spec})"
        return self.kind.value


def GammaK(k: int) -> ConeId:
    return ConeId(ConeKind.GAMMA_K, k=k)


def GammaInf(spec: OperatorSpec) -> ConeId:
    return ConeId(ConeKind.GAMMA_INF, spec=spec)


def GammaPrime(spec: OperatorSpec) -> ConeId:
    return ConeId(ConeKind.GAMMA_PRIME, spec=spec)


Gamma1 = ConeId(ConeKind.GAMMA_1)
GammaN = ConeId(ConeKind.GAMMA_N)
FullSpace = ConeId(ConeKind.FULL_SPACE)


def operator_cone(spec: OperatorSpec) -> ConeId:
    """The cone Gamma on which f is defined (Gamma_k for both families)."""
    return GammaK(spec.k)


def as_spectrum(lam, n: int | None = None) -> np.ndarray:
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if n is not None and arr.shape[-1] != n:
        raise ArgumentError(f"spectrum has length {arr.shape[-1]}, expected {n}")
    if arr.shape[-1] < 1:
        raise ArgumentError("empty spectrum")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError("spectrum has non-finite entries")
    return arr


# -- elementary symmetric polynomials ---------------------------------------

def sigmas(lam) -> np.ndarray:
    """All sigma_0..sigma_n via the coefficients of prod_i (1 + lam_i t)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    for i in range(n):
        li = lam[..., i : i + 1]
        # descending j so e[j-1] is still the previous-stage coefficient
        e[..., 1 : i + 2] = e[..., 1 : i + 2] + li * e[..., 0 : i + 1]
    return e


def sigma(j: int, lam):
    """j-th elementary symmetric polynomial, sigma_0 = 1."""
    lam = as_spectrum(lam)
    n = lam.shape[-1]
    if not 0 <= j <= n:
        raise ArgumentError(f"sigma index {j} out of range 0..{n}")
    out = sigmas(lam)[..., j]
    return float(out) if out.ndim == 0 else out


def _skip(lam: np.ndarray, i: int) -> np.ndarray:
    return np.delete(lam, i, axis=-1)


def skipped_sigmas(lam) -> np.ndarray:
    """Array s[..., i, j] = sigma_j of lam with lam_i removed (j = 0..n-1)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    return np.stack([sigmas(_skip(lam, i)) for i in range(n)], axis=-2)


# -- cones --------------------------------------------------------------------

def _positive_upto(e: np.ndarray, kmax: int) -> np.ndarray:
    if kmax <= 0:
        return np.ones(e.shape[:-1], dtype=bool)
    return np.all(e[..., 1 : kmax + 1] > 0, axis=-1)


def _expected_dim(cone: ConeId) -> int | None:
    if cone.kind is ConeKind.GAMMA_INF:
        return cone.spec.n
    if cone.kind is ConeKind.GAMMA_PRIME:
        return cone.spec.n - 1
    return None


def in_cone(cone: ConeId, lam):
    """Strict membership test (no tolerance). Vectorized over leading axes."""
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0:
        lam = lam.reshape(1)
    n = lam.shape[-1]
    want = _expected_dim(cone)
    if want is not None and n != want:
        raise ArgumentError(f"cone {cone} lives in dimension {want}, spectrum has {n}")
    kind = cone.kind
    if kind is ConeKind.GAMMA_K:
        if cone.k > n:
            raise ArgumentError(f"GammaK({cone.k}) undefined in dimension {n}")
        out = _positive_upto(sigmas(lam), cone.k)
    elif kind is ConeKind.GAMMA_PRIME:
        out = _positive_upto(sigmas(lam), cone.spec.k - 1)
    elif kind is ConeKind.GAMMA_INF:
        kk = cone.spec.k - 1
        if kk <= 0 or n == 1:
            out = np.ones(lam.shape[:-1], dtype=bool)
        else:
            sk = skipped_sigmas(lam)
            out = np.all(np.all(sk[..., 1 : kk + 1] > 0, axis=-1), axis=-1)
    elif kind is ConeKind.GAMMA_1:
        out = lam.sum(axis=-1) > 0
    elif kind is ConeKind.GAMMA_N:
        out = np.all(lam > 0, axis=-1)
    else:
        out = np.ones(lam.shape[:-1], dtype=bool)
    return bool(out) if np.ndim(out) == 0 else out


def cone_margin(cone: ConeId, lam, iters: int = 80):
    """Distance to the cone boundary along the diagonal.

    Returns sup{s : lam - s*(1,...,1) in cone}; positive iff lam is inside.
    Cones without constraints give ``np.inf``.
    """
    lam = np.asarray(lam, dtype=float)
    scalar = lam.ndim == 1
    lam2 = lam.reshape(-1, lam.shape[-1])
    n = lam2.shape[-1]
    kind = cone.kind
    if kind is ConeKind.FULL_SPACE:
        out = np.full(lam2.shape[0], np.inf)
    elif kind is ConeKind.GAMMA_N:
        out = lam2.min(axis=-1)
    elif kind is ConeKind.GAMMA_1:
        out = lam2.mean(axis=-1)
    elif kind is ConeKind.GAMMA_K:
        out = _gamma_k_margin(lam2, cone.k, iters)
    elif kind is ConeKind.GAMMA_PRIME:
        kk = cone.spec.k - 1
        out = np.full(lam2.shape[0], np.inf) if kk <= 0 else _gamma_k_margin(lam2, kk, iters)
    else:
        if n != cone.spec.n:
            raise ArgumentError(f"cone {cone} lives in dimension {cone.spec.n}, spectrum has {n}")
        kk = cone.spec.k - 1
        if kk <= 0 or n == 1:
            out = np.full(lam2.shape[0], np.inf)
        else:
            out = np.min(
                np.stack([_gamma_k_margin(_skip(lam2, i), kk, iters) for i in range(n)], axis=-1),
                axis=-1,
            )
    return float(out[0]) if scalar else out.reshape(lam.shape[:-1])


def _gamma_k_margin(lam: np.ndarray, k: int, iters: int) -> np.ndarray:
    # lam - min(lam) e lies in the closure of Gamma_n, lam - mean(lam) e has sigma_1 = 0
    lo = lam.min(axis=-1)
    hi = lam.mean(axis=-1)
    if k == 1:
        return hi
    if k == lam.shape[-1]:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = _positive_upto(sigmas(lam - mid[:, None]), k)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return lo


# -- operators ----------------------------------------------------------------

def _check_domain(spec: OperatorSpec, lam: np.ndarray, e: np.ndarray) -> None:
    bad = ~(e[..., 1 : spec.k + 1] > 0)
    if np.any(bad):
        flat = bad.reshape(-1, spec.k)
        point = int(np.argmax(flat.any(axis=1)))
        j = int(np.argmax(flat[point])) + 1
        raise DomainError(
            f"spectrum outside Gamma_{spec.k} for {spec}: sigma_{j} <= 0 at point {point}",
            index=j,
            point=point,
        )


def eval_f(spec: OperatorSpec, lam):
    """Evaluate f on Gamma; raises DomainError naming the failing sigma_j."""
    lam = as_spectrum(lam, spec.n)
    e = sigmas(lam)
    _check_domain(spec, lam, e)
    if spec.is_quotient:
        out = (e[..., spec.k] / e[..., spec.l]) ** (1.0 / (spec.k - spec.l))
    else:
        out = e[..., spec.k] ** (1.0 / spec.k)
    return float(out) if out.ndim == 0 else out


def eval_f_unchecked(spec: OperatorSpec, lam: np.ndarray) -> np.ndarray:
    """eval_f without the domain check; NaN outside Gamma. For inner loops."""
    e = sigmas(lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        if spec.is_quotient:
            out = (e[..., spec.k] / e[..., spec.l]) ** (1.0 / (spec.k - spec.l))
        else:
            out = e[..., spec.k] ** (1.0 / spec.k)
    inside = _positive_upto(e, spec.k)
    return np.where(inside, out, np.nan)


def grad_f(spec: OperatorSpec, lam):
    """Analytic gradient of f on Gamma."""
    lam = as_spectrum(lam, spec.n)
    e = sigmas(lam)
    _check_domain(spec, lam, e)
    return _grad_from_sigmas(spec, lam, e)


def grad_f_unchecked(spec: OperatorSpec, lam: np.ndarray) -> np.ndarray:
    """grad_f without the domain check; meaningless outside Gamma."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return _grad_from_sigmas(spec, lam, sigmas(lam))


def _grad_from_sigmas(spec: OperatorSpec, lam: np.ndarray, e: np.ndarray) -> np.ndarray:
    k, l = spec.k, spec.l
    sk = skipped_sigmas(lam)
    dk = sk[..., k - 1]  # d sigma_k / d lam_i
    if not spec.is_quotient:
        sig = e[..., k]
        return (1.0 / k) * (sig ** (1.0 / k - 1.0))[..., None] * dk
    dl = sk[..., l - 1]
    num, den = e[..., k], e[..., l]
    q = num / den
    dq = (dk * den[..., None] - num[..., None] * dl) / (den**2)[..., None]
    p = 1.0 / (k - l)
    return p * (q ** (p - 1.0))[..., None] * dq


def f_inf_branches(spec: OperatorSpec, lam) -> np.ndarray:
    """The finite branches f_{inf,i}(lam with lam_i skipped), quotient family only."""
    if not spec.is_quotient:
        raise ArgumentError("f_inf branches are infinite for the sigma family")
    lam = np.asarray(lam, dtype=float)
    sk = skipped_sigmas(lam)
    return (sk[..., spec.k - 1] / sk[..., spec.l - 1]) ** (1.0 / (spec.k - spec.l))


def eval_f_inf(spec: OperatorSpec, lam):
    """The limit operator f_inf on Gamma_inf; PLUS_INF for the sigma family."""
    lam = as_spectrum(lam, spec.n)
    inside = in_cone(GammaInf(spec), lam)
    if not np.all(inside):
        point = int(np.argmin(np.ravel(inside)))
        raise DomainError(f"spectrum outside Gamma_inf of {spec} at point {point}", point=point)
    if not spec.is_quotient:
        return PLUS_INF
    out = f_inf_branches(spec, lam).min(axis=-1)
    return float(out) if out.ndim == 0 else out


def f_inf_limit_check(spec: OperatorSpec, lam, i: int, R_list: Sequence[float]) -> list[float]:
    """f evaluated with lam_i replaced by each R; approaches f_{inf,i}."""
    lam = as_spectrum(lam, spec.n).copy()
    if lam.ndim != 1:
        raise ArgumentError("f_inf_limit_check takes a single spectrum")
    if not 0 <= i < spec.n:
        raise ArgumentError(f"index {i} out of range")
    out = []
    for R in R_list:
        lam[i] = R
        out.append(eval_f(spec, lam))
    return out


def shift_radius(spec: OperatorSpec, samples, iters: int = 60) -> float:
    """Radius R0 with lam + mu in Gamma for lam in samples, mu in closed Gamma_n, |mu| >= R0.

    Uses the bound that such mu has some coordinate >= |mu|/sqrt(n), and that
    adding a vector of closed Gamma_n never leaves Gamma.
    """
    samples = np.atleast_2d(as_spectrum(samples, spec.n))
    cone = operator_cone(spec)
    worst = 0.0
    for i in range(spec.n):
        lo = np.zeros(len(samples))
        hi = np.ones(len(samples))
        for _ in range(200):
            moved = samples.copy()
            moved[:, i] += hi
            ok = in_cone(cone, moved)
            if np.all(ok):
                break
            hi = np.where(ok, hi, 2 * hi)
        else:
            raise DomainError("sample not in Gamma_inf: no finite shift reaches Gamma")
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            moved = samples.copy()
            moved[:, i] += mid
            ok = in_cone(cone, moved)
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        worst = max(worst, float(hi.max()))
    return math.sqrt(spec.n) * worst
