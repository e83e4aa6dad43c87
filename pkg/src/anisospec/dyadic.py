"""Anisotropic dyadic frequency blocks and multiplier shell bounds.

A smooth radial bump psi (1 inside radius 1/2, 0 outside radius 1, measured
in the anisotropic distance) generates the blocks

    phi_j(xi) = psi(T_{2^{-j-1}} xi) - psi(T_{2^{-j}} xi),

each supported in the shell 2^(j-1) <= |xi|_kappa <= 2^(j+1) and summing
telescopically to 1 away from the origin.  The shell bound of a multiplier m
is estimated per dyadic radius R = 2^j as

    R^(-|kappa| + gamma.kappa) * integral over R < |xi|_kappa < 2R of |D^gamma m|,

computed by midpoint tensor quadrature on a lattice dilated with the shell
(so the scaled values of an exactly homogeneous multiplier agree across
shells to rounding, which is the dilation invariance of the quantity).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ContractViolation
from .grids import GridSpec
from .indexing import KappaWeight, as_kappa, kappa_norm
from .polynomials import Polynomial
from .symbols import RationalSymbol, rational_derivative

__all__ = [
    "smooth_step",
    "BumpProfile",
    "DyadicBlockSet",
    "LowFrequencyCutoff",
    "partition_check",
    "mihlin_constant",
    "MihlinEstimate",
    "default_shell_range",
    "write_mihlin_csv",
]


def smooth_step(t) -> np.ndarray | float:
    """C-infinity monotone step: 0 for t <= 0, 1 for t >= 1."""
    t_arr = np.asarray(t, dtype=float)
    out = np.zeros_like(t_arr)
    out[t_arr >= 1.0] = 1.0
    mid = (t_arr > 0.0) & (t_arr < 1.0)
    if np.any(mid):
        tm = t_arr[mid]
        a = np.exp(-1.0 / tm)
        b = np.exp(-1.0 / (1.0 - tm))
        out[mid] = a / (a + b)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class BumpProfile:
    """Radial profile psi(s): exactly 1 for s <= 1/2, exactly 0 for s >= 1,
    smooth and monotone in between.  ``smoothness_order`` records the
    regularity of the transition (the default exp-based step is C-infinity).
    """

    smoothness_order: float = math.inf

    def __call__(self, s) -> np.ndarray | float:
        s_arr = np.asarray(s, dtype=float)
        return smooth_step(2.0 * (1.0 - s_arr))


@dataclass(frozen=True)
class DyadicBlockSet:
    """The blocks phi_j for j in [j_min, j_max] over a fixed weight vector."""

    kappa: KappaWeight
    j_min: int
    j_max: int
    bump: BumpProfile = field(default_factory=BumpProfile)

    def __post_init__(self):
        object.__setattr__(self, "kappa", as_kappa(self.kappa))
        if self.j_min > self.j_max:
            raise ContractViolation("j_min must not exceed j_max")

    def bump_eval(self, xi) -> np.ndarray | float:
        """psi(|xi|_kappa)."""
        return self.bump(kappa_norm(xi, self.kappa))

    def block_eval(self, j: int, xi) -> np.ndarray | float:
        """phi_j(xi); vanishes outside 2^(j-1) <= |xi|_kappa <= 2^(j+1)."""
        if not self.j_min <= j <= self.j_max:
            raise ContractViolation(f"block index {j} outside [{self.j_min}, {self.j_max}]")
        s = kappa_norm(xi, self.kappa)
        return self.bump(s * 2.0 ** (-j - 1)) - self.bump(s * 2.0 ** (-j))

    def block_sum(self, xi) -> np.ndarray | float:
        s = np.asarray(kappa_norm(xi, self.kappa), dtype=float)
        return self.bump(s * 2.0 ** (-self.j_max - 1)) - self.bump(s * 2.0 ** (-self.j_min))


def partition_check(blocks: DyadicBlockSet, xi_samples) -> tuple[float, int]:
    """Max |sum_j phi_j - 1| over samples inside the covered annulus.

    Samples outside 2^(j_min+1) <= |xi|_kappa <= 2^(j_max-1) are excluded;
    the number excluded is returned alongside the deviation.
    """
    xi = np.asarray(xi_samples, dtype=float)
    s = kappa_norm(xi, blocks.kappa)
    inside = (s >= 2.0 ** (blocks.j_min + 1)) & (s <= 2.0 ** (blocks.j_max - 1))
    excluded = int(np.count_nonzero(~inside))
    if not np.any(inside):
        return 0.0, excluded
    total = np.zeros_like(s[inside])
    for j in range(blocks.j_min, blocks.j_max + 1):
        total = total + blocks.block_eval(j, xi[inside])
    return float(np.max(np.abs(total - 1.0))), excluded


@dataclass(frozen=True)
class LowFrequencyCutoff:
    """Multiplier gate 1 - psi(|xi|_kappa / radius): identically zero for
    |xi|_kappa <= radius/2 and identically 1 beyond ``radius``."""

    radius: float
    kappa: KappaWeight
    bump: BumpProfile = field(default_factory=BumpProfile)

    def __post_init__(self):
        object.__setattr__(self, "kappa", as_kappa(self.kappa))
        if not self.radius > 0:
            raise ContractViolation("cutoff radius must be positive")

    def factor(self, xi) -> np.ndarray | float:
        s = np.asarray(kappa_norm(xi, self.kappa), dtype=float)
        return 1.0 - self.bump(s / self.radius)

    def factor_from_radius(self, s) -> np.ndarray | float:
        return 1.0 - self.bump(np.asarray(s, dtype=float) / self.radius)


@dataclass(frozen=True)
class MihlinShellRow:
    j: int
    R: float
    shell_integral: float
    scaled_value: float
    flagged: bool


@dataclass(frozen=True)
class MihlinEstimate:
    """Per-shell table and the running max of the scaled shell integrals."""

    gamma: tuple
    a_gamma: float
    rows: tuple
    resolution: int
    flagged: bool


def default_shell_range(spec: GridSpec, kappa) -> tuple[int, int]:
    """Shells meeting the grid's frequency lattice, padded by one on each side."""
    kappa = as_kappa(kappa)
    lo = spec.min_nonzero_kappa_radius(kappa)
    hi = spec.max_kappa_radius(kappa)
    return int(np.floor(np.log2(lo))) - 1, int(np.ceil(np.log2(hi))) + 1


def _shell_quadrature(fn_abs, kappa: KappaWeight, R: float, resolution: int) -> float:
    """Midpoint tensor quadrature of fn_abs over R < |xi|_kappa < 2R.

    The lattice covers the bounding box |xi_l| <= (2R)^(k_l) and is the
    dilation by R of the reference unit-shell lattice, so homogeneous
    integrands give exactly dilation-covariant sums.
    """
    n = kappa.n
    half = [(2.0 * R) ** k for k in kappa]
    axes = []
    for L in half:
        h = 2.0 * L / resolution
        axes.append(-L + (np.arange(resolution) + 0.5) * h)
    mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
    s = np.zeros((resolution,) * n, dtype=float)
    for ax, k in zip(mesh, kappa):
        s = s + np.abs(ax) ** (2.0 / k)
    s = np.sqrt(s)
    mask = (s > R) & (s < 2.0 * R)
    cell = 1.0
    for L in half:
        cell *= 2.0 * L / resolution
    if not np.any(mask):
        return 0.0
    pts = np.stack([np.broadcast_to(ax, mask.shape)[mask] for ax in mesh], axis=-1)
    return float(np.sum(fn_abs(pts)) * cell)


def mihlin_constant(
    ms: RationalSymbol,
    gamma,
    kappa,
    shells: Sequence[int] | tuple[int, int],
    resolution: int | None = None,
    convergence_rtol: float = 0.05,
) -> MihlinEstimate:
    """Scaled shell integrals of |D^gamma m| over dyadic radii R = 2^j.

    Each shell integral is compared against the half-resolution value; a
    relative change above ``convergence_rtol`` flags the row (and the
    estimate) as not converged.
    """
    kappa = as_kappa(kappa)
    gamma = tuple(int(g) for g in gamma)
    if isinstance(shells, tuple) and len(shells) == 2 and not isinstance(shells[0], (list, tuple)):
        j_values = list(range(int(shells[0]), int(shells[1]) + 1))
    else:
        j_values = [int(j) for j in shells]
    if resolution is None:
        resolution = 256 if kappa.n <= 2 else 64
    if any(gamma):
        if ms.cutoff is not None:
            raise ContractViolation("cannot differentiate a cutoff multiplier; use gamma = 0")
        target = rational_derivative(ms, gamma)
    else:
        target = ms

    def fn_abs(pts):
        return np.abs(target(pts))
    rows = []
    scale_exp = -kappa.total + sum(g * k for g, k in zip(gamma, kappa))
    for j in j_values:
        R = 2.0**j
        integral = _shell_quadrature(fn_abs, kappa, R, resolution)
        coarse = _shell_quadrature(fn_abs, kappa, R, max(resolution // 2, 8))
        scaled = integral * R**scale_exp
        denom = max(abs(integral), 1e-300)
        flagged = abs(integral - coarse) / denom > convergence_rtol and integral > 0
        rows.append(MihlinShellRow(j=j, R=R, shell_integral=integral,
                                   scaled_value=scaled, flagged=flagged))
    a_gamma = max((r.scaled_value for r in rows), default=0.0)
    return MihlinEstimate(
        gamma=gamma,
        a_gamma=a_gamma,
        rows=tuple(rows),
        resolution=resolution,
        flagged=any(r.flagged for r in rows),
    )


def write_mihlin_csv(estimates: Sequence[MihlinEstimate], path, header_lines: Sequence[str] = ()) -> None:
    """Shell tables as CSV with columns j, R, shell_integral, scaled_value."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gamma", "j", "R", "shell_integral", "scaled_value", "flagged"])
        for est in estimates:
            g = " ".join(str(g) for g in est.gamma)
            for row in est.rows:
                writer.writerow([g, row.j, repr(row.R), repr(row.shell_integral),
                                 repr(row.scaled_value), int(row.flagged)])
