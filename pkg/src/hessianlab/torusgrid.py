"""Periodic grids on the flat torus C^n / (Z^n + iZ^n), n in {1, 2}.

Real axes are ordered (x1, y1, x2, y2) with z_j = x_j + i y_j; a field on an
N-point grid is an array of shape (N,) * 2n indexed in that order.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError


@dataclass(frozen=True)
class TorusGrid:
    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ArgumentError(f"complex dimension must be 1 or 2, got {self.n}")
        if self.N < 8 or self.N % 2:
            raise ArgumentError(f"N must be even and >= 8, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.ndim

    @property
    def size(self) -> int:
        return self.N**self.ndim

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays (x1, y1[, x2, y2]) on the grid, values in [0, 1)."""
        axis = np.arange(self.N) * self.h
        return tuple(np.meshgrid(*([axis] * self.ndim), indexing="ij"))

    def named_coords(self) -> dict[str, np.ndarray]:
        names = ["x1", "y1", "x2", "y2"][: self.ndim]
        return dict(zip(names, self.coords()))

    @functools.cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers 2*pi*k broadcast along each axis."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N) * 2 * np.pi
        out = []
        for a in range(self.ndim):
            shape = [1] * self.ndim
            shape[a] = self.N
            out.append(k.reshape(shape))
        return tuple(out)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ArgumentError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise DataError("field has non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, grid: TorusGrid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        return cls(grid, np.broadcast_to(fn(*grid.coords()), grid.shape))

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ArgumentError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def map(self, fn) -> "ScalarField":
        return ScalarField(self.grid, fn(self.values))

    def mean(self) -> float:
        return integrate(self)


@dataclass(frozen=True, eq=False)
class HermitianField:
    """One n x n Hermitian matrix per grid point; symmetrized on construction."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.grid.n
        vals = np.array(self.values, dtype=complex)
        if vals.shape != self.grid.shape + (n, n):
            raise ArgumentError(f"Hermitian field shape {vals.shape} does not match grid")
        vals = 0.5 * (vals + np.conj(np.swapaxes(vals, -1, -2)))
        idx = np.arange(n)
        vals[..., idx, idx] = vals[..., idx, idx].real
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def identity(cls, grid: TorusGrid, scale: float = 1.0) -> "HermitianField":
        return cls.constant(grid, scale * np.eye(grid.n))

    @classmethod
    def constant(cls, grid: TorusGrid, matrix) -> "HermitianField":
        m = np.asarray(matrix, dtype=complex)
        return cls(grid, np.broadcast_to(m, grid.shape + m.shape))

    def __add__(self, other):
        if isinstance(other, HermitianField):
            if other.grid != self.grid:
                raise ArgumentError("fields live on different grids")
            return HermitianField(self.grid, self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, HermitianField):
            return HermitianField(self.grid, self.values - other.values)
        return NotImplemented

    def __mul__(self, c):
        return HermitianField(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def shift(self, delta: float) -> "HermitianField":
        """Add delta times the identity at every point."""
        return HermitianField(self.grid, self.values + delta * np.eye(self.grid.n))

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, np.trace(self.values, axis1=-2, axis2=-1).real)


# -- differentiation ------------------------------------------------------------

def real_hessian(phi: ScalarField, method: str = "spectral") -> np.ndarray:
    """Real Hessian D^2 phi, shape grid.shape + (2n, 2n)."""
    g = phi.grid
    d = g.ndim
    H = np.empty(g.shape + (d, d))
    if method == "spectral":
        F = np.fft.fftn(phi.values)
        k = g.wavenumbers
        # first-derivative symbols with the Nyquist mode removed
        k1 = []
        for a in range(d):
            ka = k[a].copy()
            ka.flat[g.N // 2] = 0.0
            k1.append(ka)
        for a in range(d):
            H[..., a, a] = np.fft.ifftn(-(k[a] ** 2) * F).real
            for b in range(a + 1, d):
                H[..., a, b] = H[..., b, a] = np.fft.ifftn(-(k1[a] * k1[b]) * F).real
    elif method == "fd2":
        v = phi.values
        h2 = g.h**2
        for a in range(d):
            H[..., a, a] = (np.roll(v, -1, a) - 2 * v + np.roll(v, 1, a)) / h2
            for b in range(a + 1, d):
                pp = np.roll(np.roll(v, -1, a), -1, b)
                pm = np.roll(np.roll(v, -1, a), 1, b)
                mp = np.roll(np.roll(v, 1, a), -1, b)
                mm = np.roll(np.roll(v, 1, a), 1, b)
                H[..., a, b] = H[..., b, a] = (pp - pm - mp + mm) / (4 * h2)
    else:
        raise ArgumentError(f"unknown differentiation method {method!r}")
    return H


def complex_hessian_from_real(H: np.ndarray, n: int) -> np.ndarray:
    """phi_{j kbar} = 1/4 [(phi_{xj xk} + phi_{yj yk}) + i (phi_{xj yk} - phi_{yj xk})]."""
    out = np.empty(H.shape[:-2] + (n, n), dtype=complex)
    for j in range(n):
        for k in range(n):
            xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
            re = H[..., xj, xk] + H[..., yj, yk]
            im = H[..., xj, yk] - H[..., yj, xk]
            out[..., j, k] = 0.25 * (re + 1j * im)
    return out


@functools.lru_cache(maxsize=16)
def _ddc_symbols(grid: TorusGrid):
    """Fourier symbols of phi_{j kbar} for j <= k."""
    k = grid.wavenumbers
    k1 = []
    for a in range(grid.ndim):
        ka = k[a].copy()
        ka.flat[grid.N // 2] = 0.0
        k1.append(ka)
    out = []
    for j in range(grid.n):
        xj, yj = 2 * j, 2 * j + 1
        out.append((j, j, -0.25 * (k[xj] ** 2 + k[yj] ** 2)))
        for m in range(j + 1, grid.n):
            xm, ym = 2 * m, 2 * m + 1
            re = k1[xj] * k1[xm] + k1[yj] * k1[ym]
            im = k1[xj] * k1[ym] - k1[yj] * k1[xm]
            out.append((j, m, -0.25 * (re + 1j * im)))
    return tuple(out)


def ddc_array(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Spectral complex Hessian of raw grid values, shape grid.shape + (n, n)."""
    F = np.fft.fftn(values)
    out = np.empty(grid.shape + (grid.n, grid.n), dtype=complex)
    for j, m, sym in _ddc_symbols(grid):
        if j == m:
            out[..., j, j] = np.fft.ifftn(sym * F).real
        else:
            out[..., j, m] = np.fft.ifftn(sym * F)
            out[..., m, j] = np.conj(out[..., j, m])
    return out


def ddc(phi: ScalarField, method: str = "spectral") -> HermitianField:
    """The complex Hessian (phi_{j kbar}) as a Hermitian field."""
    if method == "spectral":
        return HermitianField(phi.grid, ddc_array(phi.values, phi.grid))
    H = real_hessian(phi, method)
    return HermitianField(phi.grid, complex_hessian_from_real(H, phi.grid.n))


def laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    """Fourier symbol of sum_j phi_{j jbar} = (1/4) Laplacian."""
    return -0.25 * sum(k**2 for k in grid.wavenumbers)


# -- eigenvalues ----------------------------------------------------------------

def jacobi_eigh(A, tol: float = 1e-13, max_sweeps: int = 100):
    """Cyclic Jacobi for one Hermitian matrix; ascending eigenvalues and vectors."""
    A = np.array(A, dtype=complex)
    n = A.shape[0]
    V = np.eye(n, dtype=complex)
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(A) ** 2) - np.sum(np.abs(np.diag(A)) ** 2))
        if off < tol * scale or off < 1e-300:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                mag = abs(apq)
                if mag < 1e-300:
                    continue
                phase = apq / mag
                tau = (A[q, q].real - A[p, p].real) / (2 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1 / np.sqrt(1 + t * t)
                s = t * c
                J = np.eye(n, dtype=complex)
                J[p, p] = c
                J[q, q] = c
                J[p, q] = s * phase
                J[q, p] = -s * np.conj(phase)
                A = J.conj().T @ A @ J
                V = V @ J
    w = np.diag(A).real
    order = np.argsort(w)
    return w[order], V[:, order]


def _eig2x2(M: np.ndarray) -> np.ndarray:
    a = M[..., 0, 0].real
    d = M[..., 1, 1].real
    b = M[..., 0, 1]
    mean = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), np.abs(b))
    return np.stack([mean - rad, mean + rad], axis=-1)


def hermitian_eigvals(M: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a stack of Hermitian matrices."""
    n = M.shape[-1]
    if n == 1:
        return M[..., 0, :].real.copy()
    if n == 2:
        return _eig2x2(M)
    flat = M.reshape(-1, n, n)
    return np.stack([jacobi_eigh(m)[0] for m in flat]).reshape(M.shape[:-1])


def _require_positive_definite(w: np.ndarray) -> None:
    n = w.shape[-1]
    if n == 1:
        bad = ~(w[..., 0, 0].real > 0)
    elif n == 2:
        bad = ~((w[..., 0, 0].real > 0) & (_eig2x2(w)[..., 0] > 0))
    else:
        bad = ~(hermitian_eigvals(w)[..., 0] > 0)
    if np.any(bad):
        pts = np.flatnonzero(bad.ravel())
        raise DataError(f"reference form not positive definite at point {int(pts[0])}", points=pts.tolist())


def eigenvalues(omega0: HermitianField | None, A: HermitianField) -> np.ndarray:
    """Eigenvalues of A with respect to omega0 (None means the identity)."""
    if omega0 is None:
        return hermitian_eigvals(A.values)
    if omega0.grid != A.grid:
        raise ArgumentError("fields live on different grids")
    w = omega0.values
    _require_positive_definite(w)
    L = np.linalg.cholesky(w)
    Linv = np.linalg.inv(L)
    C = Linv @ A.values @ np.conj(np.swapaxes(Linv, -1, -2))
    return hermitian_eigvals(C)


# -- integrals and norms --------------------------------------------------------

def _vals(f) -> np.ndarray:
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def integrate(f) -> float:
    """Midpoint rule on the unit-volume torus (pairwise summation)."""
    v = np.ascontiguousarray(_vals(f), dtype=float)
    return float(np.sum(v) / v.size)


def norm_linf(f) -> float:
    return float(np.max(np.abs(_vals(f))))


def norm_l1(f) -> float:
    return integrate(np.abs(_vals(f)))


# -- field files ----------------------------------------------------------------

def _flatten_components(f) -> tuple[TorusGrid, np.ndarray]:
    if isinstance(f, ScalarField):
        return f.grid, f.values.reshape(-1, 1)
    g = f.grid
    v = f.values.reshape(g.size, g.n * g.n)
    return g, np.stack([v.real, v.imag], axis=-1).reshape(g.size, 2 * g.n * g.n)


def _unflatten(grid: TorusGrid, data: np.ndarray):
    ncol = data.shape[1]
    if ncol == 1:
        return ScalarField(grid, data[:, 0].reshape(grid.shape))
    if ncol == 2 * grid.n * grid.n:
        pairs = data.reshape(grid.size, grid.n * grid.n, 2)
        vals = (pairs[..., 0] + 1j * pairs[..., 1]).reshape(grid.shape + (grid.n, grid.n))
        return HermitianField(grid, vals)
    raise DataError(f"field file has {ncol} values per point; expected 1 or {2 * grid.n * grid.n}")


def write_field(path, f, binary: bool = False) -> None:
    grid, data = _flatten_components(f)
    header = f"torus {grid.n} {grid.N}\n"
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        return
    with open(path, "w") as fh:
        fh.write(header)
        for row in data:
            fh.write(" ".join(repr(float(x)) for x in row))
            fh.write("\n")


def read_field(path):
    """Read a text or binary field file; the kind is detected from the payload."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError("field file has no header line")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != "torus":
        raise DataError(f"bad field header {raw[:nl]!r}; expected 'torus n N'")
    grid = TorusGrid(int(parts[1]), int(parts[2]))
    body = raw[nl + 1 :]
    try:
        text = body.decode("ascii")
        rows = [line.split() for line in text.splitlines() if line.strip()]
        if len(rows) != grid.size:
            raise ValueError
        data = np.array([[float(x) for x in r] for r in rows])
    except (UnicodeDecodeError, ValueError):
        if len(body) % (8 * grid.size):
            raise DataError("binary field payload size does not match the grid")
        ncol = len(body) // (8 * grid.size)
        data = np.frombuffer(body, dtype="<f8").reshape(grid.size, ncol).astype(float)
    return _unflatten(grid, data)


def is_binary_field(path) -> bool:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    try:
        raw[nl + 1 :].decode("ascii")
    except UnicodeDecodeError:
        return True
    return False

