"""Polynomial symbols of dilation-homogeneous operators and their analysis.

An operator  P = sum D^beta (a_{alpha beta} D^alpha)  over a completed index
pair has symbol  p(xi) = sum a_{alpha beta} (i xi)^(alpha+beta), exactly
homogeneous of order m under the anisotropic dilations:
p(T_r xi) = r^m p(xi).  Nondegeneracy is certified through the two-sided
sandwich  lower * |xi|_kappa^m <= |p(xi)| <= upper * |xi|_kappa^m,  with the
constants measured on a dense sample of the unit sphere and refined by
coordinate descent.  The sampled bounds are certificates at the reported
resolution, not proofs.

Rational multipliers (i xi)^(alpha+beta) / p(xi) and their exact quotient
rule derivatives live here too; their shell decay feeds the dyadic
multiplier bounds.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .exceptions import ContractViolation, DegenerateSymbolError
from .grids import GridField, GridSpec
from .indexing import (
    DEFAULT_SEED,
    IndexSetPair,
    KappaWeight,
    MultiIndex,
    as_kappa,
    as_multi_index,
    dilate,
    kappa_norm,
)
from .polynomials import Polynomial

__all__ = [
    "OperatorSpec",
    "EllipticityBounds",
    "HomogeneityReport",
    "RationalSymbol",
    "eval_symbol",
    "check_homogeneity",
    "kappa_sphere_points",
    "ellipticity_bounds",
    "perturbation_radius",
    "rational_derivative",
    "multiplier_for",
]

DEGENERACY_THRESHOLD = 1e-12
HOMOGENEITY_RTOL = 1e-10


@dataclass(frozen=True)
class EllipticityBounds:
    """Sampled sandwich constants: lower = min, upper = max of |p| on the
    unit anisotropic sphere (min over the grid as well for field
    coefficients)."""

    lower: float
    upper: float
    argmin: tuple
    sphere_resolution: int
    argmin_x: tuple | None = None

    def __post_init__(self):
        if not (0 < self.lower <= self.upper):
            raise ContractViolation("bounds must satisfy 0 < lower <= upper")


@dataclass(frozen=True)
class HomogeneityReport:
    passed: bool
    max_rel_deviation: float


@dataclass(frozen=True)
class RationalSymbol:
    """numerator / denominator, optionally gated by a low-frequency cutoff.

    The cutoff is any object with ``factor(xi) -> array in [0, 1]`` that
    vanishes identically near the origin; evaluation returns 0 there without
    touching the denominator.
    """

    numerator: Polynomial
    denominator: Polynomial
    cutoff: object | None = None

    def __post_init__(self):
        if self.denominator.n != self.numerator.n:
            raise ContractViolation("numerator/denominator dimension mismatch")
        if self.denominator.is_zero:
            raise ContractViolation("denominator must be nonzero")

    @property
    def n(self) -> int:
        return self.numerator.n

    def __call__(self, xi) -> np.ndarray | complex:
        num = np.asarray(self.numerator(xi), dtype=complex)
        den = np.asarray(self.denominator(xi), dtype=complex)
        if self.cutoff is None:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = num / den
        else:
            factor = np.asarray(self.cutoff.factor(xi), dtype=float)
            shape = np.broadcast_shapes(num.shape, den.shape, factor.shape)
            den_b = np.broadcast_to(den, shape).copy()
            live = np.broadcast_to(factor, shape) > 0.0
            den_b[~live] = 1.0  # the factor already zeroes these points
            out = np.where(live, factor * num / den_b, 0.0 + 0.0j)
        if out.ndim == 0:
            return complex(out)
        return out


class OperatorSpec:
    """Index pair plus coefficients; the housing of one concrete operator.

    ``coeffs`` maps (alpha, beta) pairs with alpha in A, beta in B to either
    a complex constant or a GridField (variable coefficient).  ``lower_order``
    maps pairs of strictly smaller weighted degree to constants or fields.
    """

    def __init__(
        self,
        index_pair: IndexSetPair,
        coeffs: Mapping,
        lower_order: Mapping | None = None,
    ):
        self.index_pair = index_pair
        self.coeffs = self._normalize(coeffs, principal=True)
        self.lower_order = self._normalize(lower_order or {}, principal=False)
        if not self.coeffs:
            raise ContractViolation("operator needs at least one principal coefficient")
        self._grid = None
        for value in list(self.coeffs.values()) + list(self.lower_order.values()):
            if isinstance(value, GridField):
                if self._grid is None:
                    self._grid = value.spec
                elif value.spec != self._grid:
                    raise ContractViolation("all coefficient fields must share one grid")

    def _normalize(self, mapping: Mapping, principal: bool) -> dict:
        kappa = self.index_pair.kappa
        out: dict = {}
        for (alpha, beta), value in mapping.items():
            a = as_multi_index(alpha)
            b = as_multi_index(beta)
            if principal:
                if a not in self.index_pair.A or b not in self.index_pair.B:
                    raise ContractViolation(
                        f"principal key ({tuple(a)}, {tuple(b)}) not in A x B"
                    )
            else:
                if (a + b).degree(kappa) >= self.index_pair.m:
                    raise ContractViolation(
                        f"lower-order key ({tuple(a)}, {tuple(b)}) must have weighted degree < m"
                    )
            if not isinstance(value, GridField):
                value = complex(value)
            out[(a, b)] = value
        return out

    # -- basic views ---------------------------------------------------------

    @property
    def kappa(self) -> KappaWeight:
        return self.index_pair.kappa

    @property
    def m(self) -> int:
        return self.index_pair.m

    @property
    def A(self) -> frozenset:
        return self.index_pair.A

    @property
    def B(self) -> frozenset:
        return self.index_pair.B

    @property
    def n(self) -> int:
        return self.index_pair.n

    @property
    def grid(self) -> GridSpec | None:
        return self._grid

    @property
    def constant_coefficient(self) -> bool:
        return self._grid is None

    def sorted_principal(self) -> list:
        return sorted(self.coeffs.items(), key=lambda kv: (tuple(kv[0][0]), tuple(kv[0][1])))

    def sorted_lower(self) -> list:
        return sorted(self.lower_order.items(), key=lambda kv: (tuple(kv[0][0]), tuple(kv[0][1])))

    # -- symbols ---------------------------------------------------------------

    def coefficient_value(self, value, x=None) -> complex:
        if isinstance(value, GridField):
            if x is None:
                raise ContractViolation("a frozen point x is required for field coefficients")
            idx = value.spec.nearest_index(x)
            point = value.spec.point_at(idx)
            if np.allclose(point, tuple(float(c) for c in x), rtol=0.0, atol=1e-12):
                return complex(value.values[idx])
            return value.value_at(x)
        return complex(value)

    def principal_symbol(self, x=None) -> Polynomial:
        poly = Polynomial(self.n, {})
        for (a, b), value in self.sorted_principal():
            c = self.coefficient_value(value, x)
            poly = poly + Polynomial.i_xi_power(a + b) * c
        return poly

    def lower_symbol(self, x=None) -> Polynomial:
        poly = Polynomial(self.n, {})
        for (a, b), value in self.sorted_lower():
            c = self.coefficient_value(value, x)
            poly = poly + Polynomial.i_xi_power(a + b) * c
        return poly

    def full_symbol(self, x=None) -> Polynomial:
        return self.principal_symbol(x) + self.lower_symbol(x)

    def principal_term_arrays(self) -> list:
        """(exponent alpha+beta, coefficient array over the grid) pairs."""
        if self._grid is None:
            raise ContractViolation("term arrays only make sense for field coefficients")
        out = []
        for (a, b), value in self.sorted_principal():
            arr = value.values if isinstance(value, GridField) else np.full(self._grid.sizes, complex(value))
            out.append((a + b, arr))
        return out


def eval_symbol(op: OperatorSpec, xi, x=None, include_lower: bool = True):
    """p(x, xi) = sum a_{alpha beta}(x) (i xi)^(alpha+beta) (+ lower order)."""
    if not op.constant_coefficient and x is None:
        raise ContractViolation("operator has field coefficients; a point x is required")
    poly = op.full_symbol(x) if (include_lower and op.lower_order) else op.principal_symbol(x)
    return poly(xi)


def check_homogeneity(
    op_or_poly,
    m: int | None = None,
    kappa=None,
    trials: int = 64,
    seed: int = DEFAULT_SEED,
    rtol: float = HOMOGENEITY_RTOL,
    x=None,
) -> HomogeneityReport:
    """Sample p(T_r xi) against r^m p(xi) and report the worst deviation."""
    if isinstance(op_or_poly, OperatorSpec):
        poly = op_or_poly.principal_symbol(x)
        m = op_or_poly.m
        kappa = op_or_poly.kappa
    else:
        poly = op_or_poly
        if m is None or kappa is None:
            raise ContractViolation("m and kappa are required for a bare polynomial")
    kappa = as_kappa(kappa)
    rng = np.random.default_rng(seed)
    rs = np.exp(rng.uniform(np.log(0.1), np.log(10.0), size=trials))
    xis = rng.uniform(-2.0, 2.0, size=(trials, kappa.n))
    worst = 0.0
    for r, xi in zip(rs, xis):
        lhs = poly(dilate(r, xi, kappa))
        rhs = (r ** m) * poly(xi)
        scale = max(abs(lhs), abs(rhs))
        if scale == 0.0:
            continue
        worst = max(worst, abs(lhs - rhs) / scale)
    return HomogeneityReport(passed=worst <= rtol, max_rel_deviation=worst)


def kappa_sphere_points(
    kappa,
    count: int,
    seed: int = DEFAULT_SEED,
    include_axes: bool = True,
) -> np.ndarray:
    """Sample the unit anisotropic sphere.

    Directions are drawn uniformly on the Euclidean sphere and each is scaled
    to |t * u|_kappa = 1 by bisection in t (the radius map is monotone along
    rays).  Coordinate axis points are appended so extrema that sit on an
    axis are hit exactly.
    """
    kappa = as_kappa(kappa)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, kappa.n))
    norms = np.linalg.norm(dirs, axis=1)
    good = norms > 1e-12
    dirs = dirs[good] / norms[good, None]
    if include_axes:
        eye = np.eye(kappa.n)
        dirs = np.concatenate([dirs, eye, -eye], axis=0)
    return _scale_to_sphere(dirs, kappa)


def _scale_to_sphere(dirs: np.ndarray, kappa: KappaWeight) -> np.ndarray:
    exps = 2.0 / np.asarray(kappa, dtype=float)
    base = np.abs(dirs) ** exps  # |u_l|^(2/k_l)

    def radius_sq(log_t: np.ndarray) -> np.ndarray:
        t = np.exp(log_t)
        return np.sum((t[:, None] ** exps) * base, axis=1)

    lo = np.full(dirs.shape[0], np.log(1e-9))
    hi = np.full(dirs.shape[0], np.log(1e9))
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        too_big = radius_sq(mid) > 1.0
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_big, lo, mid)
    t = np.exp(0.5 * (lo + hi))
    return dirs * t[:, None]


def _refine_on_sphere(poly: Polynomial, kappa: KappaWeight, direction: np.ndarray,
                      minimize: bool, iters: int) -> tuple:
    """Coordinate descent over the direction, re-projected to the sphere."""
    u = direction / np.linalg.norm(direction)
    point = _scale_to_sphere(u[None, :], kappa)[0]
    best = abs(poly(point))
    step = 0.1
    sign = 1.0 if minimize else -1.0
    for _ in range(iters):
        improved = False
        for axis in range(kappa.n):
            for delta in (step, -step):
                cand = u.copy()
                cand[axis] += delta
                nrm = np.linalg.norm(cand)
                if nrm < 1e-12:
                    continue
                cand /= nrm
                pt = _scale_to_sphere(cand[None, :], kappa)[0]
                val = abs(poly(pt))
                if sign * (val - best) < 0.0:
                    best, u, point = val, cand, pt
                    improved = True
        if not improved:
            step *= 0.5
            if step < 1e-13:
                break
    return best, point


def ellipticity_bounds(
    op: OperatorSpec,
    x=None,
    sphere_resolution: int | None = None,
    refine_iters: int = 50,
    seed: int = DEFAULT_SEED,
) -> EllipticityBounds:
    """Certify the sandwich constants by dense sphere sampling + refinement.

    For field coefficients with ``x=None`` the minimum runs over every grid
    point as well; the argmin frequency is refined at the worst grid point.
    Raises DegenerateSymbolError when the sampled minimum falls below the
    degeneracy threshold.
    """
    kappa = op.kappa
    count = sphere_resolution if sphere_resolution is not None else 4096 * op.n
    report = None
    if op.constant_coefficient or x is not None:
        report = check_homogeneity(op, x=x, seed=seed)
        if not report.passed:
            raise ContractViolation(
                f"symbol is not homogeneous (relative deviation {report.max_rel_deviation:.3e})"
            )
    pts = kappa_sphere_points(kappa, count, seed=seed)

    if op.constant_coefficient or x is not None:
        poly = op.principal_symbol(x)
        vals = np.abs(poly(pts))
        i_min = int(np.argmin(vals))
        i_max = int(np.argmax(vals))
        lo, argmin = _refine_on_sphere(poly, kappa, pts[i_min], True, refine_iters)
        hi, _ = _refine_on_sphere(poly, kappa, pts[i_max], False, refine_iters)
        lo = min(lo, float(vals[i_min]))
        hi = max(hi, float(vals[i_max]))
        if lo < DEGENERACY_THRESHOLD:
            raise DegenerateSymbolError(
                f"symbol vanishes on the unit sphere (min {lo:.3e} at {tuple(argmin)})",
                argmin=tuple(argmin),
                value=lo,
            )
        return EllipticityBounds(lower=lo, upper=hi, argmin=tuple(argmin),
                                 sphere_resolution=len(pts))

    # field coefficients: sweep every grid point (chunked over sphere samples)
    grid = op.grid
    terms = op.principal_term_arrays()
    coeff_mat = np.stack([arr.reshape(-1) for _, arr in terms], axis=1)  # (Ngrid, T)
    exps = [e for e, _ in terms]
    lo_val, hi_val = np.inf, -np.inf
    lo_pt = lo_x = None
    chunk = max(1, 2**22 // max(coeff_mat.shape[0], 1))
    for start in range(0, len(pts), chunk):
        block = pts[start : start + chunk]
        mono = np.stack([Polynomial.i_xi_power(e)(block) for e in exps], axis=1)  # (c, T)
        vals = np.abs(coeff_mat @ mono.T)  # (Ngrid, c)
        bmin = np.unravel_index(int(np.argmin(vals)), vals.shape)
        bmax = np.unravel_index(int(np.argmax(vals)), vals.shape)
        if vals[bmin] < lo_val:
            lo_val = float(vals[bmin])
            lo_pt = block[bmin[1]]
            lo_x = np.unravel_index(bmin[0], grid.sizes)
        if vals[bmax] > hi_val:
            hi_val = float(vals[bmax])
    x_worst = grid.point_at(lo_x)
    poly = op.principal_symbol(x_worst)
    lo_ref, argmin = _refine_on_sphere(poly, kappa, lo_pt, True, refine_iters)
    lo_val = min(lo_val, lo_ref)
    if lo_val < DEGENERACY_THRESHOLD:
        raise DegenerateSymbolError(
            f"symbol vanishes on the unit sphere (min {lo_val:.3e})",
            argmin=tuple(argmin),
            value=lo_val,
        )
    return EllipticityBounds(lower=lo_val, upper=hi_val, argmin=tuple(argmin),
                             sphere_resolution=len(pts), argmin_x=tuple(x_worst))


def perturbation_radius(
    op: OperatorSpec,
    sphere_resolution: int = 2048,
    base_radius: float = 1.0 / 16.0,
    consecutive: int = 4,
    seed: int = DEFAULT_SEED,
    bounds: EllipticityBounds | None = None,
) -> float:
    """Smallest sampled radius beyond which |p + h| >= lower * rho^m / 2.

    Radii double from ``base_radius``.  The ladder runs until the bound has
    held on ``consecutive`` doublings *and* the lower-order part is dominated
    with margin (sup |h| <= lower * rho^m / 4 on the shell); since every
    lower-order monomial scales by at most 2^(m-1) per doubling while the
    threshold scales by 2^m, domination then persists for all larger radii,
    so the returned radius really is past the last failure.  Zero when there
    is no lower-order part.
    """
    if not op.constant_coefficient:
        raise ContractViolation("perturbation radius requires constant coefficients")
    if not op.lower_order:
        return 0.0
    if bounds is None:
        bounds = ellipticity_bounds(op, sphere_resolution=sphere_resolution, seed=seed)
    p = op.principal_symbol()
    h = op.lower_symbol()
    pts = kappa_sphere_points(op.kappa, sphere_resolution, seed=seed)
    scales = np.asarray([float(k) for k in op.kappa])
    streak = 0
    last_fail = None
    rho = base_radius
    while rho <= 2.0**30:
        shell = pts * (rho ** scales)
        h_vals = np.abs(h(shell))
        threshold = 0.5 * bounds.lower * rho**op.m
        if np.min(np.abs(p(shell) + h(shell))) >= threshold:
            streak += 1
        else:
            streak = 0
            last_fail = rho
        dominated = np.max(h_vals) <= 0.5 * threshold
        if dominated and streak >= consecutive:
            return float(base_radius if last_fail is None else 2.0 * last_fail)
        rho *= 2.0
    raise ContractViolation(
        "perturbation bound never achieved up to radius 2^30; "
        "lower-order degrees violate the hypothesis"
    )


def rational_derivative(ms: RationalSymbol, gamma) -> RationalSymbol:
    """Exact derivative D^gamma (N/D) by the quotient rule, expanded.

    Each single-axis step maps (N, D) to (N' D - N D', D^2) with polynomial
    arithmetic; no cancellation is attempted.
    """
    if ms.cutoff is not None:
        raise ContractViolation("cannot differentiate a cutoff multiplier symbolically")
    gamma = as_multi_index(gamma) if not isinstance(gamma, MultiIndex) else gamma
    num, den = ms.numerator, ms.denominator
    for axis, reps in enumerate(gamma):
        for _ in range(int(reps)):
            num, den = (
                num.derivative(axis) * den - num * den.derivative(axis),
                den * den,
            )
    return RationalSymbol(numerator=num, denominator=den)


def multiplier_for(op: OperatorSpec, alpha, beta) -> RationalSymbol:
    """The solve multiplier (i xi)^(alpha+beta) / p(xi)."""
    if not op.constant_coefficient:
        raise ContractViolation("multipliers require constant coefficients")
    a = as_multi_index(alpha)
    b = as_multi_index(beta)
    return RationalSymbol(
        numerator=Polynomial.i_xi_power(a + b),
        denominator=op.principal_symbol(),
    )
