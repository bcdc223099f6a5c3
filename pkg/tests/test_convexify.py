import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessianlab.convexify import (
    ConvexOracle,
    build_g_eps,
    f_tilde_eps,
    f_tilde_oracle,
    g_eps,
    sample_table,
    section,
    smooth_convex,
)
from hessianlab.errors import ArgumentError, ConstructionError, DomainError
from hessianlab.symfunc import OperatorSpec, eval_f_inf

Q212 = OperatorSpec.quotient(2, 1, 2)
BOX = ([-1.0, -1.0], [1.0, 1.0])


def _f_inf(lam):
    return eval_f_inf(Q212, lam)


# -- oracles and sections -----------------------------------------------------------


def test_supporting_affine_touches_only_at_base_point(rng):
    for oracle in (ConvexOracle.paraboloid(*BOX), ConvexOracle.cone_plus_paraboloid(*BOX)):
        for x0 in ([0.0, 0.0], [0.3, -0.2]):
            val, p = oracle.supporting_affine(x0)
            x = rng.uniform(-1, 1, size=(500, 2))
            gap = oracle.eval(x) - (val + (x - np.array(x0)) @ p)
            assert np.all(gap >= -1e-12)
            assert np.all(gap[np.linalg.norm(x - np.array(x0), axis=1) > 1e-6] > 0)


def test_oracle_box_validation():
    with pytest.raises(ArgumentError):
        ConvexOracle.paraboloid([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ArgumentError):
        ConvexOracle.paraboloid([0.0] * 3, [1.0] * 3)


def test_section_disc_examples():
    o = ConvexOracle.paraboloid(*BOX)
    assert section(o, [0.0, 0.0], 0.01).diameter == pytest.approx(0.2, rel=1e-9)
    assert section(o, [0.0, 0.0], 1e-4).diameter == pytest.approx(0.02, rel=1e-9)
    s = section(o, [0.0, 0.0], 0.01)
    assert s.contains(np.array([[0.05, 0.05], [0.0, 0.099]])).all()
    assert not s.contains(np.array([[0.08, 0.08]])).any()


def test_section_translation():
    a = np.array([0.2, -0.3])
    base = section(ConvexOracle.paraboloid(*BOX), [0.0, 0.0], 0.01)
    moved = section(ConvexOracle.paraboloid(*BOX, center=a), a, 0.01)
    np.testing.assert_allclose(moved.radii, base.radii, atol=1e-12)


@settings(max_examples=20)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(1e-3, 0.1))
def test_sections_shrink(x, y, t):
    for o in (ConvexOracle.paraboloid(*BOX), ConvexOracle.cone_plus_paraboloid(*BOX)):
        assert section(o, [x, y], t / 10).diameter < section(o, [x, y], t).diameter


def test_section_errors():
    o = ConvexOracle.paraboloid(*BOX)
    with pytest.raises(ArgumentError):
        section(o, [1.0, 0.0], 0.01)
    with pytest.raises(ArgumentError):
        section(o, [0.0, 0.0], 0.0)


# -- smoothing ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def smooth_paraboloid():
    return smooth_convex(ConvexOracle.paraboloid(*BOX), 0.1)


def test_smooth_paraboloid_sandwich_and_hessian(smooth_paraboloid):
    tab = sample_table(smooth_paraboloid, samples=24)
    assert np.all(tab["diff"] >= 0) and np.all(tab["diff"] <= 0.1)
    assert np.all(tab["min_hessian_eig"] > 0)


def test_smooth_large_h_is_trivial():
    sm = smooth_convex(ConvexOracle.paraboloid(*BOX), 10.0)
    tab = sample_table(sm, samples=16)
    assert np.all(tab["diff"] >= 0) and np.all(tab["diff"] <= 10.0)


def test_smoothed_is_deterministic(smooth_paraboloid):
    x = np.random.default_rng(1).uniform(-0.9, 0.9, size=(50, 2))
    again = smooth_convex(ConvexOracle.paraboloid(*BOX), 0.1)
    assert np.array_equal(smooth_paraboloid(x), again(x))


def test_evaluation_outside_box(smooth_paraboloid):
    with pytest.raises(DomainError):
        smooth_paraboloid(np.array([[1.5, 0.0]]))


def test_linear_oracle_rejected_with_witness():
    lin = ConvexOracle(np.array(BOX[0]), np.array(BOX[1]), lambda x: x[..., 0] + 2 * x[..., 1], lambda x: np.broadcast_to([1.0, 2.0], x.shape))
    with pytest.raises(ConstructionError) as info:
        smooth_convex(lin, 0.1)
    assert info.value.witness is not None


def test_bad_h_rejected():
    with pytest.raises(ArgumentError):
        smooth_convex(ConvexOracle.paraboloid(*BOX), 0.0)


# -- f_tilde and g_eps --------------------------------------------------------------


def test_f_tilde_examples():
    assert f_tilde_eps(Q212, 0.0, [2.0, 5.0]) == 2.0
    expect = 2 + 0.05 * (math.atan(5) + math.atan(2))
    assert f_tilde_eps(Q212, 0.1, [2.0, 5.0]) == pytest.approx(expect, abs=1e-15)
    assert f_tilde_eps(Q212, 0.1, [2.0, 5.0]) == pytest.approx(2.12403, abs=5e-6)


def test_f_tilde_errors():
    with pytest.raises(DomainError):
        f_tilde_eps(Q212, 0.1, [-1.0, -2.0])
    with pytest.raises(ArgumentError):
        f_tilde_eps(OperatorSpec.sigma(2, 2), 0.1, [1.0, 1.0])


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 1, 2), (2, 1, 3), (3, 2, 3), (3, 1, 4)]), st.floats(0.0, 0.5))
def test_f_tilde_sandwich(seed, kln, eps):
    spec = OperatorSpec.quotient(*kln)
    lam = np.random.default_rng(seed).uniform(0.05, 10.0, size=(100, spec.n))
    ft = f_tilde_eps(spec, eps, lam)
    fi = eval_f_inf(spec, lam)
    assert np.all(fi <= ft) and np.all(ft <= fi + math.pi / 2 * eps)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.02, 0.1]))
def test_minus_f_tilde_strictly_convex_on_segments(seed, eps):
    rng = np.random.default_rng(seed)
    o = f_tilde_oracle(Q212, eps, 0.05, 20.0)
    a, b = rng.uniform(0.1, 19.0, size=(2, 200, 2))
    keep = np.linalg.norm(a - b, axis=1) > 1e-3
    mid = o.eval((a + b) / 2)
    assert np.all((0.5 * (o.eval(a) + o.eval(b)) - mid)[keep] > 0)


@pytest.fixture(scope="module", params=[0.1, 0.02])
def g_built(request):
    return build_g_eps(Q212, request.param)


def _lam(rng, count, lo=0.1, hi=15.0):
    return rng.uniform(lo, hi, size=(count, 2))


def test_g_sandwich(g_built, rng):
    eps = g_built.eps
    lam = _lam(rng, 1000)
    g = g_built(lam)
    fi = _f_inf(lam)
    assert np.all((1 - eps) * fi <= g + 1e-10)
    assert np.all(g <= fi + math.pi / 2 * eps + 1e-10)
    assert np.all(g <= f_tilde_eps(Q212, eps, lam))


def test_g_symmetric_exactly(g_built, rng):
    lam = _lam(rng, 300)
    assert np.array_equal(g_built(lam), g_built(lam[:, ::-1]))


def test_g_monotone(g_built, rng):
    lam = _lam(rng, 300, hi=14.0)
    g = g_built(lam)
    for i in range(2):
        up = lam.copy()
        up[:, i] += 0.1
        assert np.all(g_built(up) >= g)


def test_g_concave_midpoint(g_built, rng):
    a, b = _lam(rng, 400), _lam(rng, 400)
    gap = g_built((a + b) / 2) - 0.5 * (g_built(a) + g_built(b))
    assert gap.min() >= -1e-8


def test_g_grows_along_rays(g_built, rng):
    lam = rng.uniform(0.05, 1.0, size=(50, 2))
    R = np.array([1.0, 4.0, 16.0])
    vals = np.array([g_built(r * lam) for r in R])
    assert np.all(np.diff(vals, axis=0) > 0)
    # roughly linear growth: f_inf is 1-homogeneous and the correction is bounded
    assert np.all(vals[-1] >= (1 - g_built.eps) * 16 * _f_inf(lam))


def test_g_outside_box_asks_for_rebuild(g_built):
    with pytest.raises(DomainError, match="rebuild"):
        g_built(np.array([30.0, 1.0]))
    with pytest.raises(DomainError):
        g_built(np.array([-5.0, -5.0]))


def test_g_entry_point_matches_builder(rng):
    lam = _lam(rng, 10)
    assert np.array_equal(g_eps(Q212, 0.1, lam), build_g_eps(Q212, 0.1)(lam))


@pytest.mark.parametrize("kln", [(2, 1, 3), (3, 1, 3), (3, 2, 4)])
def test_soft_min_surrogate_higher_n(kln, rng):
    spec = OperatorSpec.quotient(*kln)
    eps = 0.1
    g = build_g_eps(spec, eps)
    lam = rng.uniform(0.1, 10.0, size=(500, spec.n))
    vals = g(lam)
    fi = eval_f_inf(spec, lam)
    assert np.all((1 - eps) * fi <= vals + 1e-10) and np.all(vals <= fi + math.pi / 2 * eps)
    perm = rng.permutation(spec.n)
    np.testing.assert_allclose(g(lam[:, perm]), vals, rtol=1e-13)
    up = lam.copy()
    up[:, 0] += 0.1
    assert np.all(g(up) >= vals)
