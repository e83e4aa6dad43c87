"""Periodic grids, sampled fields, and their binary serialization.

A ``GridSpec`` is an n-dimensional torus sampled on a regular lattice
(power-of-two sample counts).  ``GridField`` holds complex samples in
row-major axis order.  The frequency lattice is the integer lattice scaled
by 2*pi/period per axis, in standard FFT order; the forward transform is
unscaled and the inverse carries the 1/N factor (numpy convention),
verified by round-trip tests.

Fields serialize to a flat binary format: magic ``AKGF``, a little-endian
u32 version, then n, the sizes and the periods as little-endian f64,
followed by interleaved re/im f64 samples, row-major.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ContractViolation
from .indexing import KappaWeight, as_kappa

__all__ = [
    "GridSpec",
    "GridField",
    "TrigPolynomial",
    "save_akgf",
    "load_akgf",
]

_MAGIC = b"AKGF"
_VERSION = 1


def _is_pow2(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Sampling of an n-torus: per-axis sample counts and domain lengths."""

    sizes: tuple
    periods: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        periods = tuple(float(p) for p in self.periods)
        if len(sizes) != len(periods) or not sizes:
            raise ContractViolation("sizes and periods must be nonempty and of equal length")
        for s in sizes:
            if s < 4 or not _is_pow2(s):
                raise ContractViolation(f"grid sizes must be powers of two >= 4, got {sizes}")
        for p in periods:
            if not p > 0:
                raise ContractViolation(f"periods must be positive, got {periods}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "periods", periods)

    @property
    def n(self) -> int:
        return len(self.sizes)

    @property
    def point_count(self) -> int:
        out = 1
        for s in self.sizes:
            out *= s
        return out

    @property
    def spacings(self) -> tuple:
        return tuple(p / s for p, s in zip(self.periods, self.sizes))

    @property
    def cell_volume(self) -> float:
        out = 1.0
        for h in self.spacings:
            out *= h
        return out

    def coordinate_axes(self) -> list[np.ndarray]:
        """Per-axis sample coordinates in [0, L)."""
        return [np.arange(s) * (p / s) for s, p in zip(self.sizes, self.periods)]

    def coordinate_mesh(self, sparse: bool = True) -> list[np.ndarray]:
        return list(np.meshgrid(*self.coordinate_axes(), indexing="ij", sparse=sparse))

    def frequency_axes(self) -> list[np.ndarray]:
        """Per-axis angular frequencies 2*pi*k/L in FFT order."""
        return [
            2.0 * np.pi * np.fft.fftfreq(s, d=p / s)
            for s, p in zip(self.sizes, self.periods)
        ]

    def frequency_mesh(self, sparse: bool = True) -> list[np.ndarray]:
        return list(np.meshgrid(*self.frequency_axes(), indexing="ij", sparse=sparse))

    def kappa_radius_lattice(self, kappa: KappaWeight) -> np.ndarray:
        """|xi|_kappa at every lattice frequency (dense array)."""
        kappa = as_kappa(kappa)
        if kappa.n != self.n:
            raise ContractViolation("kappa dimension does not match grid")
        mesh = self.frequency_mesh(sparse=True)
        s = np.zeros(self.sizes, dtype=float)
        for ax, k in zip(mesh, kappa):
            s = s + np.abs(ax) ** (2.0 / k)
        return np.sqrt(s)

    def axis_step_distances(self, kappa: KappaWeight) -> tuple:
        """kappa-distance of a single lattice step along each axis."""
        kappa = as_kappa(kappa)
        return tuple(h ** (1.0 / k) for h, k in zip(self.spacings, kappa))

    def min_nonzero_kappa_radius(self, kappa: KappaWeight) -> float:
        r = self.kappa_radius_lattice(kappa)
        return float(np.min(r[r > 0]))

    def max_kappa_radius(self, kappa: KappaWeight) -> float:
        return float(np.max(self.kappa_radius_lattice(kappa)))

    def nearest_index(self, x: Sequence[float]) -> tuple:
        """Lattice index of the grid point nearest to x (periodic)."""
        if len(x) != self.n:
            raise ContractViolation("point dimension does not match grid")
        idx = []
        for xi, s, p in zip(x, self.sizes, self.periods):
            idx.append(int(np.rint(float(xi) / (p / s))) % s)
        return tuple(idx)

    def point_at(self, index: Sequence[int]) -> tuple:
        return tuple((i % s) * (p / s) for i, s, p in zip(index, self.sizes, self.periods))


@dataclass(frozen=True)
class GridField:
    """Complex samples of a function on a periodic grid."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != self.spec.sizes:
            raise ContractViolation(
                f"value shape {vals.shape} does not match grid sizes {self.spec.sizes}"
            )
        if not np.all(np.isfinite(vals.view(float))):
            raise ContractViolation("field values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridField":
        return cls(spec, np.zeros(spec.sizes, dtype=complex))

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "GridField":
        mesh = spec.coordinate_mesh(sparse=True)
        vals = np.asarray(fn(*mesh), dtype=complex) + np.zeros(spec.sizes, dtype=complex)
        return cls(spec, vals)

    def fft(self) -> np.ndarray:
        return np.fft.fftn(self.values)

    @classmethod
    def from_spectrum(cls, spec: GridSpec, spectrum: np.ndarray) -> "GridField":
        return cls(spec, np.fft.ifftn(spectrum))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def value_at(self, x: Sequence[float]) -> complex:
        """Trigonometric (spectral) interpolation at an arbitrary point."""
        spec = self.spec
        if len(x) != spec.n:
            raise ContractViolation("point dimension does not match grid")
        coeffs = self.fft() / spec.point_count
        phase = np.zeros(spec.sizes, dtype=complex)
        for ax, xl in zip(spec.frequency_mesh(sparse=True), x):
            phase = phase + 1j * ax * float(xl)
        return complex(np.sum(coeffs * np.exp(phase)))

    def __add__(self, other: "GridField") -> "GridField":
        if other.spec != self.spec:
            raise ContractViolation("grid mismatch in field addition")
        return GridField(self.spec, self.values + other.values)

    def __sub__(self, other: "GridField") -> "GridField":
        if other.spec != self.spec:
            raise ContractViolation("grid mismatch in field subtraction")
        return GridField(self.spec, self.values - other.values)

    def __mul__(self, scalar) -> "GridField":
        return GridField(self.spec, self.values * complex(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class TrigPolynomial:
    """Finite frequency sum  f(x) = sum_k  amp_k * exp(i <2*pi*k/L, x>).

    ``terms`` is a tuple of (integer frequency tuple, complex amplitude).
    With ``real=True`` the real part is taken after summation.  Forward
    differential operators act exactly on these fields on the lattice.
    """

    terms: tuple
    real: bool = False

    def __post_init__(self):
        norm = []
        for freq, amp in self.terms:
            norm.append((tuple(int(k) for k in freq), complex(amp)))
        object.__setattr__(self, "terms", tuple(norm))

    def evaluate(self, spec: GridSpec) -> GridField:
        mesh = spec.coordinate_mesh(sparse=True)
        vals = np.zeros(spec.sizes, dtype=complex)
        for freq, amp in self.terms:
            if len(freq) != spec.n:
                raise ContractViolation("frequency dimension does not match grid")
            for k, s in zip(freq, spec.sizes):
                if abs(k) > s // 2:
                    raise ContractViolation(
                        f"frequency {freq} exceeds the lattice Nyquist limit for sizes {spec.sizes}"
                    )
            phase = np.zeros(spec.sizes, dtype=float)
            for ax, k, p in zip(mesh, freq, spec.periods):
                phase = phase + (2.0 * np.pi * k / p) * ax
            vals = vals + amp * np.exp(1j * phase)
        if self.real:
            vals = vals.real.astype(complex)
        return GridField(spec, vals)


# -- periodic anisotropic distances ----------------------------------------


def min_image(delta: np.ndarray, period: float) -> np.ndarray:
    """Per-axis minimal-image absolute displacement on a circle of length L."""
    d = np.abs(np.asarray(delta, dtype=float)) % period
    return np.minimum(d, period - d)


def offset_distance_grid(spec: GridSpec, kappa: KappaWeight) -> np.ndarray:
    """kappa-distance of every lattice offset (same shape as the grid)."""
    kappa = as_kappa(kappa)
    s = None
    for size, period, k in zip(spec.sizes, spec.periods, kappa):
        axis = min_image(np.arange(size) * (period / size), period)
        axis_term = axis ** (2.0 / k)
        s = axis_term if s is None else s[..., None] + axis_term
    return np.sqrt(s)


def distance_from_point(spec: GridSpec, kappa: KappaWeight, x0: Sequence[float]) -> np.ndarray:
    """Periodic kappa-distance of every grid point from x0."""
    kappa = as_kappa(kappa)
    if len(x0) != spec.n:
        raise ContractViolation("point dimension does not match grid")
    s = None
    for ax, xl, period, k in zip(spec.coordinate_axes(), x0, spec.periods, kappa):
        axis_term = min_image(ax - float(xl), period) ** (2.0 / k)
        s = axis_term if s is None else s[..., None] + axis_term
    return np.sqrt(s)


def ball_mask(spec: GridSpec, kappa: KappaWeight, center: Sequence[float], radius: float) -> np.ndarray:
    """Boolean mask of grid points within kappa-distance ``radius`` of center."""
    if not radius > 0:
        raise ContractViolation("ball radius must be positive")
    return distance_from_point(spec, kappa, center) <= radius


def inscribed_radius(spec: GridSpec, kappa: KappaWeight) -> float:
    """Largest R with the kappa-ball B_R inside one fundamental cell."""
    kappa = as_kappa(kappa)
    return min((p / 2.0) ** (1.0 / k) for p, k in zip(spec.periods, kappa))


# -- binary serialization ----------------------------------------------------


def save_akgf(field: GridField, path) -> None:
    spec = field.spec
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        header = [float(spec.n)] + [float(s) for s in spec.sizes] + list(spec.periods)
        fh.write(np.asarray(header, dtype="<f8").tobytes())
        inter = np.empty(spec.point_count * 2, dtype="<f8")
        flat = field.values.reshape(-1)
        inter[0::2] = flat.real
        inter[1::2] = flat.imag
        fh.write(inter.tobytes())


def load_akgf(path) -> GridField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ContractViolation(f"bad magic {magic!r}, expected {_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ContractViolation(f"unsupported format version {version}")
        (n_f,) = struct.unpack("<d", fh.read(8))
        n = int(n_f)
        sizes = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(int)
        periods = np.frombuffer(fh.read(8 * n), dtype="<f8")
        spec = GridSpec(tuple(int(s) for s in sizes), tuple(float(p) for p in periods))
        inter = np.frombuffer(fh.read(spec.point_count * 16), dtype="<f8")
        vals = (inter[0::2] + 1j * inter[1::2]).reshape(spec.sizes)
        return GridField(spec, vals)
