"""Torus grids, band-limited interaction kernels, and quadrature.

Everything lives on the periodic unit torus T^d = [0,1)^d.  A function of j
torus points is stored densely as a numpy array of shape (M,)*(d*j), with the
axes of x_1 first (row-major, x_1 slowest).  Interaction kernels have the form
K(x, y) = b(x) + Khat(x - y) and are band-limited trigonometric polynomials
kept as cosine/sine coefficient tables, so convolutions against grid fields
are exact whenever the grid resolves the band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TorusGrid",
    "GridField",
    "KernelSpec",
    "eval_kernel",
    "convolve_density",
    "quadrature",
    "fourier_field",
    "product_field",
    "trig_interp",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid with M points per dimension on T^dim.

    Nodes are {m/M : 0 <= m < M} in every dimension; the spacing h = 1/M is
    exact in floating point for power-of-two M (recommended).
    """

    M: int
    dim: int = 1

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"grid needs at least 2 points per dimension, got M={self.M}")
        if self.dim not in (1, 2):
            raise ValueError(f"only dim 1 and 2 are supported, got dim={self.dim}")

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.M) / self.M

    def shape(self, arity: int) -> tuple:
        return (self.M,) * (self.dim * arity)

    def cell_volume(self, arity: int = 1) -> float:
        return self.h ** (self.dim * arity)

    def coord(self, axis: int, arity: int) -> np.ndarray:
        """Node coordinates along one axis, shaped to broadcast over shape(arity)."""
        n_axes = self.dim * arity
        if not 0 <= axis < n_axes:
            raise ValueError(f"axis {axis} out of range for arity {arity}")
        shape = [1] * n_axes
        shape[axis] = self.M
        return self.points.reshape(shape)


@dataclass
class GridField:
    """Real-valued function samples on (T^d)^arity.

    values has shape grid.shape(arity); a flat array of the right length is
    accepted and reshaped.
    """

    grid: TorusGrid
    arity: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        want = self.grid.shape(self.arity)
        if v.shape != want:
            if v.size != int(np.prod(want)):
                raise ValueError(
                    f"field values have {v.size} entries, expected {int(np.prod(want))} "
                    f"for arity {self.arity} on M={self.grid.M}, dim={self.grid.dim}"
                )
            v = v.reshape(want)
        self.values = v

    def integrate(self) -> float:
        """Rectangle-rule integral; exact for trigonometric polynomials below Nyquist."""
        return float(self.values.sum() * self.grid.cell_volume(self.arity))

    def marginalize(self, coordinate: int) -> "GridField":
        """Integrate out one torus factor (0-based), returning an arity-1 smaller field."""
        if not 0 <= coordinate < self.arity:
            raise ValueError(f"coordinate {coordinate} out of range for arity {self.arity}")
        d = self.grid.dim
        axes = tuple(range(coordinate * d, (coordinate + 1) * d))
        vals = self.values.sum(axis=axes) * self.grid.cell_volume(1)
        return GridField(self.grid, self.arity - 1, vals)

    def is_probability_density(self, tol: float = 1e-12) -> bool:
        return bool(self.values.min() >= -tol and abs(self.integrate() - 1.0) <= 1e-12)

    def copy(self) -> "GridField":
        return GridField(self.grid, self.arity, self.values.copy())


def quadrature(f: GridField) -> float:
    """Integral of a grid field over its full domain (T^d)^arity."""
    return f.integrate()


def _series(coeff_cos: np.ndarray, coeff_sin: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for m, (a, b) in enumerate(zip(coeff_cos, coeff_sin)):
        if a != 0.0:
            out = out + a * np.cos(2.0 * np.pi * m * x)
        if b != 0.0:
            out = out + b * np.sin(2.0 * np.pi * m * x)
    return out


@dataclass(frozen=True)
class KernelSpec:
    """Bounded interaction K(x, y) = b(x) + Khat(x - y) on the torus.

    b and Khat are trigonometric polynomials; arrays hold mode-m cosine/sine
    coefficients for m = 0..band.  sup_norm_bound is the cached L-infinity
    upper bound given by the sum of coefficient magnitudes.
    """

    b_cos: np.ndarray
    b_sin: np.ndarray
    k_cos: np.ndarray
    k_sin: np.ndarray

    def __post_init__(self):
        for name in ("b_cos", "b_sin", "k_cos", "k_sin"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim != 1:
                raise ValueError(f"{name} must be a 1-d coefficient table")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite coefficients")
            object.__setattr__(self, name, arr)
        if len(self.b_cos) != len(self.b_sin) or len(self.k_cos) != len(self.k_sin):
            raise ValueError("cos/sin coefficient tables must have equal length")
        if self.b_sin[0] != 0.0 or self.k_sin[0] != 0.0:
            raise ValueError("mode-0 sine coefficient must be 0")

    @property
    def band(self) -> int:
        """Largest mode index carried by either coefficient table."""
        return max(len(self.b_cos), len(self.k_cos)) - 1

    @property
    def sup_norm_bound(self) -> float:
        return float(
            np.abs(self.b_cos).sum()
            + np.abs(self.b_sin).sum()
            + np.abs(self.k_cos).sum()
            + np.abs(self.k_sin).sum()
        )

    def b_values(self, x) -> np.ndarray:
        return _series(self.b_cos, self.b_sin, x)

    def khat_values(self, z) -> np.ndarray:
        return _series(self.k_cos, self.k_sin, z)

    def eval(self, x, y) -> np.ndarray:
        z = np.mod(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), 1.0)
        return self.b_values(x) + self.khat_values(z)

    def _check_band(self, M: int) -> None:
        if 2 * self.band >= M:
            raise ValueError(
                f"kernel band {self.band} exceeds the Nyquist limit of an M={M} grid"
            )

    def _coeff_fft(self, cos_t: np.ndarray, sin_t: np.ndarray, M: int) -> np.ndarray:
        """Continuum Fourier coefficients c_m (for e^{2*pi*i*m*x}) in fft order."""
        self._check_band(M)
        c = np.zeros(M, dtype=complex)
        c[0] = cos_t[0]
        for m in range(1, len(cos_t)):
            cm = 0.5 * (cos_t[m] - 1j * sin_t[m])
            if cm != 0:
                c[m] = cm
                c[-m] = np.conj(cm)
        return c

    def b_coeff_fft(self, M: int) -> np.ndarray:
        return self._coeff_fft(self.b_cos, self.b_sin, M)

    def khat_coeff_fft(self, M: int) -> np.ndarray:
        return self._coeff_fft(self.k_cos, self.k_sin, M)

    def is_zero(self) -> bool:
        return bool(
            np.all(self.b_cos == 0)
            and np.all(self.b_sin == 0)
            and np.all(self.k_cos == 0)
            and np.all(self.k_sin == 0)
        )

    @classmethod
    def zero(cls) -> "KernelSpec":
        return cls(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))

    @classmethod
    def from_tables(cls, b: dict | None = None, khat: dict | None = None) -> "KernelSpec":
        """Build from {mode: (cos, sin)} dicts for the two parts."""

        def expand(table):
            if not table:
                return np.zeros(1), np.zeros(1)
            top = max(table)
            cos_t = np.zeros(top + 1)
            sin_t = np.zeros(top + 1)
            for m, (a, s) in table.items():
                cos_t[m] = a
                sin_t[m] = s
            return cos_t, sin_t

        b_cos, b_sin = expand(b)
        k_cos, k_sin = expand(khat)
        return cls(b_cos, b_sin, k_cos, k_sin)

    @classmethod
    def from_text(cls, text: str) -> "KernelSpec":
        """Parse the kernel file format: lines `b|khat <mode> <cos> <sin>`."""
        tables: dict[str, dict[int, tuple]] = {"b": {}, "khat": {}}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"kernel line {lineno}: expected 4 fields, got {len(parts)}")
            kind, mode_s, cos_s, sin_s = parts
            if kind not in tables:
                raise ValueError(f"kernel line {lineno}: unknown part {kind!r} (want b or khat)")
            try:
                mode = int(mode_s)
                cos_c = float(cos_s)
                sin_c = float(sin_s)
            except ValueError as exc:
                raise ValueError(f"kernel line {lineno}: {exc}") from None
            if mode < 0:
                raise ValueError(f"kernel line {lineno}: negative mode {mode}")
            if not (math.isfinite(cos_c) and math.isfinite(sin_c)):
                raise ValueError(f"kernel line {lineno}: non-finite coefficient")
            if mode == 0 and sin_c != 0.0:
                raise ValueError(f"kernel line {lineno}: mode 0 sin coefficient must be 0")
            if mode in tables[kind]:
                raise ValueError(f"kernel line {lineno}: duplicate {kind} mode {mode}")
            tables[kind][mode] = (cos_c, sin_c)
        return cls.from_tables(tables["b"], tables["khat"])

    @classmethod
    def from_file(cls, path) -> "KernelSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        lines = []
        for kind, cos_t, sin_t in (("b", self.b_cos, self.b_sin), ("khat", self.k_cos, self.k_sin)):
            for m in range(len(cos_t)):
                if cos_t[m] != 0.0 or sin_t[m] != 0.0:
                    lines.append(f"{kind} {m} {float(cos_t[m])!r} {float(sin_t[m])!r}")
        return "\n".join(lines) + "\n"

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def eval_kernel(k: KernelSpec, x, y):
    """K(x, y) = b(x) + Khat(x - y) with x - y reduced mod 1."""
    return k.eval(x, y)


def convolve_density(k: KernelSpec, rho: GridField) -> GridField:
    """Grid samples of (K * rho)(x) = integral of K(x, y) rho(y) dy, spectrally exact.

    The drift part contributes b(x) * mass(rho); the pair part is a circular
    convolution evaluated through the kernel's continuum Fourier coefficients,
    exact because the kernel is band-limited below the grid Nyquist mode.
    """
    if rho.grid.dim != 1 or rho.arity != 1:
        raise ValueError("convolve_density expects an arity-1 field on a 1-d torus")
    M = rho.grid.M
    k._check_band(M)
    mass = rho.integrate()
    pair = np.fft.ifft(k.khat_coeff_fft(M) * np.fft.fft(rho.values)).real
    vals = k.b_values(rho.grid.points) * mass + pair
    return GridField(rho.grid, 1, vals)


def fourier_field(grid: TorusGrid, cos_coeffs, sin_coeffs=None) -> GridField:
    """Arity-1 field sum_m a_m cos(2 pi m x) + s_m sin(2 pi m x) (d=1)."""
    if grid.dim != 1:
        raise ValueError("fourier_field builds 1-d fields only")
    cos_coeffs = np.atleast_1d(np.asarray(cos_coeffs, dtype=float))
    if sin_coeffs is None:
        sin_coeffs = np.zeros_like(cos_coeffs)
    sin_coeffs = np.atleast_1d(np.asarray(sin_coeffs, dtype=float))
    if len(sin_coeffs) != len(cos_coeffs):
        raise ValueError("cos/sin coefficient lists must have equal length")
    if 2 * (len(cos_coeffs) - 1) >= grid.M:
        raise ValueError("coefficient band exceeds the grid Nyquist limit")
    return GridField(grid, 1, _series(cos_coeffs, sin_coeffs, grid.points))


def product_field(rho: GridField, arity: int) -> GridField:
    """Tensor power rho^{⊗arity} as an arity-j field on the same grid."""
    if rho.arity != 1:
        raise ValueError("product_field expects an arity-1 factor")
    vals = rho.values
    out = vals
    for _ in range(arity - 1):
        out = np.multiply.outer(out, vals)
    return GridField(rho.grid, arity, out)


def trig_interp(f: GridField, x) -> np.ndarray:
    """Evaluate an arity-1 field off-grid by trigonometric interpolation.

    Exact for fields whose spectrum lies strictly below the Nyquist mode,
    which holds for every density and observable this package produces.
    """
    if f.grid.dim != 1 or f.arity != 1:
        raise ValueError("trig_interp expects an arity-1 field on a 1-d torus")
    M = f.grid.M
    x = np.asarray(x, dtype=float)
    spec = np.fft.rfft(f.values) / M
    out = np.full_like(x, spec[0].real)
    for m in range(1, len(spec)):
        c = spec[m]
        if abs(c) < 1e-15:
            continue
        w = 2.0 if m < M / 2 else 1.0  # the Nyquist bin is not doubled
        out = out + w * (c.real * np.cos(2 * np.pi * m * x) - c.imag * np.sin(2 * np.pi * m * x))
    return out
