"""Shared sampling helpers for the test suite."""
import numpy as np

from hessianlab.symfunc import GammaInf, OperatorSpec, cone_margin, operator_cone


def sample_in_cone(cone, n, count, rng, spread=1.0, lo=0.05, hi=2.0):
    """Random spectra with cone margin in (lo, hi)."""
    x = rng.normal(scale=spread, size=(count, n))
    s = np.atleast_1d(cone_margin(cone, x))
    return x - s[:, None] + rng.uniform(lo, hi, size=(count, 1))


def sample_gamma(spec: OperatorSpec, count, rng, **kw):
    return sample_in_cone(operator_cone(spec), spec.n, count, rng, **kw)


def sample_gamma_inf(spec: OperatorSpec, count, rng, **kw):
    return sample_in_cone(GammaInf(spec), spec.n, count, rng, **kw)


SIGMA_FAMILY = [OperatorSpec.sigma(k, n) for n in range(1, 5) for k in range(1, n + 1)]
QUOTIENT_FAMILY = [OperatorSpec.quotient(k, l, n) for (k, l) in [(2, 1), (3, 1), (3, 2)] for n in (3, 4)]
