import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessianlab.errors import ArgumentError, DataError
from hessianlab.torusgrid import (
    HermitianField,
    ScalarField,
    TorusGrid,
    ddc,
    eigenvalues,
    integrate,
    jacobi_eigh,
    norm_l1,
    norm_linf,
    read_field,
    write_field,
)

TWO_PI = 2 * np.pi


def _trig_field(grid, rng, modes=3, amp=0.2):
    """Random real trigonometric polynomial with integer frequencies below Nyquist."""
    coords = grid.coords()
    v = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.integers(-modes, modes + 1, size=grid.ndim)
        phase = rng.uniform(0, TWO_PI)
        v += amp * rng.normal() * np.cos(TWO_PI * sum(ki * c for ki, c in zip(k, coords)) + phase)
    return ScalarField(grid, v)


@pytest.mark.parametrize("n,N", [(1, 7), (1, 6), (3, 8), (2, 9)])
def test_grid_validation(n, N):
    with pytest.raises(ArgumentError):
        TorusGrid(n, N)


def test_grid_basics():
    g = TorusGrid(2, 8)
    assert g.h == 0.125 and g.shape == (8, 8, 8, 8) and g.size == 8**4
    x1, y1, x2, y2 = g.coords()
    assert x1[3, 0, 0, 0] == 0.375 and y2[0, 0, 0, 5] == 0.625


def test_scalar_field_rejects_nonfinite_and_wrong_shape():
    g = TorusGrid(1, 8)
    with pytest.raises(DataError):
        ScalarField(g, np.full(g.shape, np.nan))
    with pytest.raises(ArgumentError):
        ScalarField(g, np.zeros((8, 9)))


def test_hermitian_symmetrized_on_construction(rng):
    g = TorusGrid(2, 8)
    raw = rng.normal(size=g.shape + (2, 2)) + 1j * rng.normal(size=g.shape + (2, 2))
    A = HermitianField(g, raw).values
    np.testing.assert_array_equal(A, np.conj(np.swapaxes(A, -1, -2)))
    assert np.all(A[..., 0, 0].imag == 0)


def test_ddc_constant_is_zero():
    for n in (1, 2):
        g = TorusGrid(n, 8)
        for method in ("spectral", "fd2"):
            assert np.abs(ddc(ScalarField.constant(g, 3.7), method).values).max() < 1e-12


def test_ddc_cosine_one_dimensional():
    g = TorusGrid(1, 32)
    x, _ = g.coords()
    A = ddc(ScalarField(g, np.cos(TWO_PI * x))).values[..., 0, 0]
    np.testing.assert_allclose(A.real, -np.pi**2 * np.cos(TWO_PI * x), atol=1e-11)
    assert np.abs(A.imag).max() == 0


def test_ddc_two_dimensional_single_entry():
    g = TorusGrid(2, 8)
    x1 = g.coords()[0]
    A = ddc(ScalarField(g, np.cos(TWO_PI * x1))).values
    np.testing.assert_allclose(A[..., 0, 0].real, -np.pi**2 * np.cos(TWO_PI * x1), atol=1e-11)
    assert np.abs(A[..., 0, 1]).max() < 1e-12
    assert np.abs(A[..., 1, 1]).max() < 1e-12


def test_ddc_mixed_entry_matches_wirtinger():
    # phi = cos(2 pi (x1 + x2)): phi_{1 2bar} = (1/4) phi_{x1 x2} = -pi^2 cos
    g = TorusGrid(2, 8)
    x1, _, x2, _ = g.coords()
    A = ddc(ScalarField(g, np.cos(TWO_PI * (x1 + x2)))).values
    np.testing.assert_allclose(A[..., 0, 1], -np.pi**2 * np.cos(TWO_PI * (x1 + x2)), atol=1e-11)
    # phi = cos(2 pi (x1 + y2)): phi_{1 2bar} = (i/4) phi_{x1 y2}
    _, _, _, y2 = g.coords()
    B = ddc(ScalarField(g, np.cos(TWO_PI * (x1 + y2)))).values
    np.testing.assert_allclose(B[..., 0, 1], -1j * np.pi**2 * np.cos(TWO_PI * (x1 + y2)), atol=1e-11)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
def test_trace_integrates_to_zero(seed, n):
    g = TorusGrid(n, 16 if n == 1 else 8)
    phi = _trig_field(g, np.random.default_rng(seed))
    assert abs(integrate(ddc(phi).trace())) < 1e-12


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_ddc_linear(seed, a, b):
    g = TorusGrid(2, 8)
    rng = np.random.default_rng(seed)
    p, q = _trig_field(g, rng), _trig_field(g, rng)
    lhs = ddc(a * p + b * q).values
    rhs = a * ddc(p).values + b * ddc(q).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_spectral_exact_on_trig_polynomial():
    g = TorusGrid(1, 16)
    x, y = g.coords()
    phi = ScalarField(g, np.sin(TWO_PI * 3 * x) * np.cos(TWO_PI * 2 * y))
    exact = -0.25 * (TWO_PI**2) * (9 + 4) * phi.values
    np.testing.assert_allclose(ddc(phi).values[..., 0, 0].real, exact, atol=1e-10)


@pytest.mark.parametrize("n,Ns", [(1, (16, 32, 64)), (2, (8, 16, 32))])
def test_fd2_converges_at_second_order(n, Ns):
    errs = []
    for N in Ns:
        g = TorusGrid(n, N)
        c = g.coords()
        phi = ScalarField(g, np.exp(0.5 * np.sin(TWO_PI * c[0])) * np.cos(TWO_PI * c[1]) + 0.3 * np.sin(TWO_PI * (c[0] + c[-1])))
        errs.append(np.abs(ddc(phi, "fd2").values - ddc(phi, "spectral").values).max())
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8), rates


def test_eigenvalue_examples(rng):
    g = TorusGrid(2, 8)
    np.testing.assert_allclose(eigenvalues(None, HermitianField.constant(g, np.diag([2.0, 3.0])))[0, 0, 0, 0], [2, 3])
    np.testing.assert_allclose(eigenvalues(None, HermitianField.constant(g, [[0, 1], [1, 0]]))[0, 0, 0, 0], [-1, 1], atol=1e-15)
    for _ in range(50):
        a, d = rng.normal(size=2)
        b = complex(*rng.normal(size=2))
        M = np.array([[a, b], [np.conj(b), d]])
        w = eigenvalues(None, HermitianField.constant(g, M))[1, 2, 3, 4]
        disc = np.sqrt((a - d) ** 2 + 4 * abs(b) ** 2)
        np.testing.assert_allclose(w, [(a + d - disc) / 2, (a + d + disc) / 2], atol=1e-12)


def test_generalized_eigenvalues_and_errors(rng):
    g = TorusGrid(2, 8)
    w0 = HermitianField.constant(g, np.diag([2.0, 4.0]))
    A = HermitianField.constant(g, np.diag([2.0, 2.0]))
    np.testing.assert_allclose(eigenvalues(w0, A)[0, 0, 0, 0], [0.5, 1.0])
    bad = np.broadcast_to(np.eye(2, dtype=complex), g.shape + (2, 2)).copy()
    bad[0, 0, 1, 0] = np.diag([1.0, -1.0])
    with pytest.raises(DataError) as info:
        eigenvalues(HermitianField(g, bad), A)
    assert "point 8" in str(info.value)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_scalar_shift_moves_every_eigenvalue(seed, delta):
    g = TorusGrid(2, 8)
    A = ddc(_trig_field(g, np.random.default_rng(seed)))
    np.testing.assert_allclose(eigenvalues(None, A.shift(delta)), eigenvalues(None, A) + delta, atol=1e-12)
    w = eigenvalues(None, A)
    assert np.all(w[..., 0] <= w[..., 1])


def test_jacobi_matches_numpy(rng):
    for n in (3, 4):
        X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        A = X + X.conj().T
        w, V = jacobi_eigh(A)
        np.testing.assert_allclose(w, np.linalg.eigvalsh(A), atol=1e-12)
        np.testing.assert_allclose(V @ np.diag(w) @ V.conj().T, A, atol=1e-12)


def test_integrals_and_norms():
    g = TorusGrid(1, 16)
    x, _ = g.coords()
    assert integrate(ScalarField.constant(g, 1.0)) == 1.0
    assert abs(integrate(ScalarField(g, np.sin(TWO_PI * x)))) < 1e-14
    assert norm_linf(ScalarField(g, np.cos(TWO_PI * x))) == 1.0
    # (1/N) sum_j |cos(2 pi j / N)| = (2/N) cot(pi/N) when 4 divides N
    assert norm_l1(ScalarField(g, np.cos(TWO_PI * x))) == pytest.approx(2 / 16 / np.tan(np.pi / 16), abs=1e-15)


@pytest.mark.parametrize("binary", [False, True])
def test_field_file_round_trip_is_bit_exact(tmp_path, rng, binary):
    g = TorusGrid(2, 8)
    phi = ScalarField(g, rng.normal(size=g.shape) * 10.0 ** rng.integers(-300, 300, size=g.shape))
    A = HermitianField(g, rng.normal(size=g.shape + (2, 2)) + 1j * rng.normal(size=g.shape + (2, 2)))
    for f in (phi, A):
        p = tmp_path / "f.field"
        write_field(p, f, binary=binary)
        back = read_field(p)
        assert type(back) is type(f) and back.grid == g
        assert np.array_equal(back.values, f.values)


def test_field_file_format(tmp_path):
    g = TorusGrid(1, 8)
    p = tmp_path / "c.field"
    write_field(p, ScalarField.constant(g, 0.5))
    lines = p.read_text().splitlines()
    assert lines[0] == "torus 1 8" and len(lines) == 65 and lines[1] == "0.5"


def test_field_file_errors(tmp_path):
    p = tmp_path / "bad.field"
    p.write_text("grid 1 8\n0\n")
    with pytest.raises(DataError):
        read_field(p)
    p.write_bytes(b"torus 1 8\n" + b"\x00\x01\x02")
    with pytest.raises(DataError):
        read_field(p)
