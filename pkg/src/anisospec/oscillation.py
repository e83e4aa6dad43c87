"""Oscillation moduli, Dini integrals, seminorms, and mean-deviation metrics.

The sup modulus of one or several fields is

    omega(rho) = sup { sum_i |f_i(x) - f_i(y)| : dist(x, y) <= rho },

measured with the periodic anisotropic distance.  On a regular torus lattice
every pair is congruent to an offset, so the exact profile costs one
vectorized sweep per offset; huge grids fall back to seeded pair subsampling
and the profile is labeled as sampled.  The center-referenced mean
oscillation replaces the sup by a ball average of |a(x) - a(x0)|, maximized
over sampled centers.

Dini integrals  int_0^r omega/rho drho  and  r^g int_r^R omega/rho^(1+g) drho
are evaluated by log-spaced trapezoid quadrature on the tabulated profile;
below the smallest tabulated radius the modulus is extrapolated linearly and
the extrapolated share is reported.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ContractViolation
from .grids import GridField, GridSpec, ball_mask, distance_from_point, offset_distance_grid
from .indexing import DEFAULT_SEED, KappaWeight, as_kappa, as_multi_index

__all__ = [
    "OscillationProfile",
    "DiniReport",
    "oscillation_profile",
    "mean_oscillation_profile",
    "dini_integrals",
    "seminorm",
    "campanato_phi",
    "sup_difference",
    "pair_oscillation_curve",
    "write_profile_csv",
    "write_dini_csv",
]

SUBSAMPLE_POINT_LIMIT = 2**16
SUBSAMPLE_PAIRS = 10**6


@dataclass(frozen=True)
class OscillationProfile:
    """Binned modulus table rho -> omega(rho)."""

    radii: np.ndarray
    values: np.ndarray
    kind: str
    sampled: bool = False
    skipped_radii: tuple = ()

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if radii.ndim != 1 or radii.shape != values.shape:
            raise ContractViolation("profile radii/values must be matching 1-D arrays")
        if np.any(np.diff(radii) <= 0):
            raise ContractViolation("profile radii must be strictly increasing")
        if np.any(values < 0):
            raise ContractViolation("profile values must be non-negative")
        if self.kind not in ("sup_oscillation", "mean_oscillation"):
            raise ContractViolation(f"unknown profile kind {self.kind!r}")
        if self.kind == "sup_oscillation" and np.any(np.diff(values) < 0):
            raise ContractViolation("sup oscillation must be non-decreasing")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "values", values)

    def value_at(self, rho: float) -> float:
        """Step evaluation: the tabulated value at the largest radius <= rho."""
        idx = int(np.searchsorted(self.radii, rho, side="right")) - 1
        if idx < 0:
            return 0.0
        return float(self.values[idx])

    @property
    def max_radius(self) -> float:
        return float(self.radii[-1])


@dataclass(frozen=True)
class DiniReport:
    r: float
    R: float
    gamma: float
    small_scale_integral: float
    tail_integral: float
    extrapolated_fraction: float
    flags: tuple = ()


def _fields_list(fields) -> list[GridField]:
    if isinstance(fields, GridField):
        return [fields]
    if isinstance(fields, Mapping):
        return [fields[k] for k in sorted(fields, key=lambda k: tuple(k) if isinstance(k, tuple) else str(k))]
    return list(fields)


def _curve_from_pairs(dists: np.ndarray, gaps: np.ndarray, bins: int | None,
                      kind: str = "sup_oscillation", sampled: bool = False) -> OscillationProfile:
    order = np.argsort(dists, kind="stable")
    d = dists[order]
    g = np.maximum.accumulate(gaps[order])
    if bins is None:
        # compress to the last entry per distinct radius
        keep = np.nonzero(np.diff(d, append=np.inf) > 0)[0]
        return OscillationProfile(d[keep], g[keep], kind, sampled=sampled)
    edges = np.geomspace(d[0], d[-1], bins)
    idx = np.searchsorted(d, edges, side="right") - 1
    valid = idx >= 0
    return OscillationProfile(edges[valid], g[idx[valid]], kind, sampled=sampled)


def _offset_gaps_2d(stack: np.ndarray) -> np.ndarray:
    """max over x of sum_i |f_i(x) - f_i(x + offset)| for every lattice offset."""
    k, n0, n1 = stack.shape
    out = np.zeros((n0, n1))
    cols = np.arange(n1)
    block = max(1, 2**21 // (n0 * n1))  # bound the (i, s1, j) temporaries
    for s0 in range(n0):
        rolled = np.roll(stack, -s0, axis=1)  # fields x i x j
        for start in range(0, n1, block):
            shifts = cols[start : start + block]
            shift_idx = (cols[None, :] + shifts[:, None]) % n1  # (s1, j)
            total = None
            for c in range(k):
                b = rolled[c][:, shift_idx]              # (i, s1, j)
                diff = np.abs(stack[c][:, None, :] - b)  # (i, s1, j)
                total = diff if total is None else total + diff
            out[s0, start : start + block] = total.max(axis=(0, 2))
    return out


def _offset_gaps_generic(stack: np.ndarray, sizes: tuple) -> np.ndarray:
    out = np.zeros(sizes)
    for offset in np.ndindex(*sizes):
        if all(o == 0 for o in offset):
            continue
        total = None
        for c in range(stack.shape[0]):
            diff = np.abs(stack[c] - np.roll(stack[c], [-o for o in offset],
                                             axis=tuple(range(len(sizes)))))
            total = diff if total is None else total + diff
        out[offset] = total.max()
    return out


def oscillation_profile(
    fields,
    kappa,
    bins: int | None = None,
    seed: int = DEFAULT_SEED,
    max_pairs: int = SUBSAMPLE_PAIRS,
) -> OscillationProfile:
    """Sup modulus of continuity over the whole torus.

    Exact (every pair, grouped by lattice offset) up to 2^16 grid points;
    larger grids use ``max_pairs`` seeded random pairs and the result is
    flagged ``sampled``.  The profile is non-decreasing by construction.
    """
    flds = _fields_list(fields)
    spec = flds[0].spec
    kappa = as_kappa(kappa)
    for f in flds:
        if f.spec != spec:
            raise ContractViolation("all fields must share one grid")
    stack = np.stack([f.values for f in flds])
    if spec.point_count <= SUBSAMPLE_POINT_LIMIT:
        dist = offset_distance_grid(spec, kappa)
        gaps = _offset_gaps_2d(stack) if spec.n == 2 else _offset_gaps_generic(stack, spec.sizes)
        flat_d = dist.reshape(-1)[1:]
        flat_g = gaps.reshape(-1)[1:]
        return _curve_from_pairs(flat_d, flat_g, bins)
    rng = np.random.default_rng(seed)
    npts = spec.point_count
    ii = rng.integers(0, npts, size=max_pairs)
    jj = rng.integers(0, npts, size=max_pairs)
    keep = ii != jj
    ii, jj = ii[keep], jj[keep]
    coords = [ax.reshape(-1) for ax in np.meshgrid(*spec.coordinate_axes(), indexing="ij")]
    d = np.zeros(len(ii))
    for ax, period, k in zip(coords, spec.periods, kappa):
        delta = np.abs(ax[ii] - ax[jj]) % period
        delta = np.minimum(delta, period - delta)
        d += delta ** (2.0 / k)
    d = np.sqrt(d)
    flat = stack.reshape(stack.shape[0], -1)
    g = np.abs(flat[:, ii] - flat[:, jj]).sum(axis=0)
    return _curve_from_pairs(d, g, bins if bins is not None else 256, sampled=True)


def pair_oscillation_curve(
    fields,
    kappa,
    center: Sequence[float] | None = None,
    region_radius: float | None = None,
    bins: int | None = None,
) -> OscillationProfile:
    """Sup modulus restricted to a ball (or the whole grid when no region).

    Pairs are enumerated inside the ball (chunked); distances stay periodic.
    """
    if center is None or region_radius is None:
        return oscillation_profile(fields, kappa, bins=bins)
    flds = _fields_list(fields)
    spec = flds[0].spec
    kappa = as_kappa(kappa)
    mask = ball_mask(spec, kappa, center, region_radius)
    coords = [np.broadcast_to(ax, spec.sizes)[mask]
              for ax in np.meshgrid(*spec.coordinate_axes(), indexing="ij", sparse=True)]
    vals = np.stack([f.values[mask] for f in flds])
    m = vals.shape[1]
    if m < 2:
        raise ContractViolation("region contains fewer than two grid points")
    dist_chunks = []
    gap_chunks = []
    chunk = max(1, 2**22 // m)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        d = np.zeros((stop - start, m))
        for ax, period, k in zip(coords, spec.periods, kappa):
            delta = np.abs(ax[start:stop, None] - ax[None, :]) % period
            delta = np.minimum(delta, period - delta)
            d += delta ** (2.0 / k)
        d = np.sqrt(d)
        g = np.abs(vals[:, start:stop, None] - vals[:, None, :]).sum(axis=0)
        # keep strictly upper pairs relative to global indexing
        rows = np.arange(start, stop)[:, None]
        cols = np.arange(m)[None, :]
        upper = cols > rows
        dist_chunks.append(d[upper])
        gap_chunks.append(g[upper])
    dists = np.concatenate(dist_chunks)
    gaps = np.concatenate(gap_chunks)
    return _curve_from_pairs(dists, gaps, bins)


def sup_difference(field_or_fields, kappa, r: float,
                   center: Sequence[float] | None = None,
                   region_radius: float | None = None) -> float:
    """Max |f(x) - f(y)| over in-region pairs at distance <= r."""
    curve = pair_oscillation_curve(field_or_fields, kappa, center, region_radius)
    return curve.value_at(r)


def mean_oscillation_profile(
    fields,
    kappa,
    bins: int = 24,
    centers: Sequence[Sequence[float]] | None = None,
    radii: Sequence[float] | None = None,
    center_count: int = 16,
    seed: int = DEFAULT_SEED,
) -> OscillationProfile:
    """Center-referenced mean oscillation, maximized over sampled centers.

    omega-bar(rho) = max over centers x0 of
    sum_i mean over the ball B_rho(x0) of |a_i(x) - a_i(x0)|.
    Bins whose ball holds no point other than the center are skipped and
    reported via ``skipped_radii``.
    """
    flds = _fields_list(fields)
    spec = flds[0].spec
    kappa = as_kappa(kappa)
    if centers is None:
        rng = np.random.default_rng(seed)
        flat = rng.integers(0, spec.point_count, size=center_count)
        centers = [spec.point_at(np.unravel_index(int(i), spec.sizes)) for i in flat]
    if radii is None:
        lo = 2.0 * min(spec.axis_step_distances(kappa))
        hi = spec.max_kappa_radius(kappa)
        radii = np.geomspace(lo, hi, bins)
    radii = np.asarray(sorted(float(r) for r in radii))
    values = np.full(len(radii), -1.0)
    populated = np.zeros(len(radii), dtype=bool)
    for x0 in centers:
        dists = distance_from_point(spec, kappa, x0)
        gaps = np.zeros(spec.sizes)
        for f in flds:
            ref = complex(f.values[spec.nearest_index(x0)])
            gaps = gaps + np.abs(f.values - ref)
        order = np.argsort(dists.reshape(-1), kind="stable")
        sorted_gaps = gaps.reshape(-1)[order]
        cums = np.cumsum(sorted_gaps)
        sorted_d = dists.reshape(-1)[order]
        counts = np.searchsorted(sorted_d, radii, side="right")
        for i, c in enumerate(counts):
            if c < 2:
                continue
            populated[i] = True
            values[i] = max(values[i], cums[c - 1] / c)
    skipped = tuple(float(r) for r, ok in zip(radii, populated) if not ok)
    return OscillationProfile(
        radii[populated], np.maximum(values[populated], 0.0), "mean_oscillation",
        skipped_radii=skipped,
    )


# -- Dini integrals ------------------------------------------------------------


def _omega_interpolator(profile: OscillationProfile):
    radii = profile.radii
    values = profile.values
    positive = np.all(values > 0)
    log_r = np.log(radii)
    log_v = np.log(values) if positive else None

    def omega(rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        out = np.empty_like(rho)
        below = rho < radii[0]
        above = rho > radii[-1]
        mid = ~below & ~above
        out[below] = values[0] * rho[below] / radii[0]
        out[above] = values[-1]
        if np.any(mid):
            if positive:
                out[mid] = np.exp(np.interp(np.log(rho[mid]), log_r, log_v))
            else:
                out[mid] = np.interp(rho[mid], radii, values)
        return out

    return omega


def _log_trapezoid(fn, lo: float, hi: float, nodes: int) -> float:
    if hi <= lo:
        return 0.0
    u = np.linspace(math.log(lo), math.log(hi), nodes)
    return float(np.trapezoid(fn(np.exp(u)), u))


def dini_integrals(
    profile: OscillationProfile,
    r: float,
    R: float,
    gamma: float = 1.0,
    nodes: int = 512,
) -> DiniReport:
    """Small-scale integral int_0^r omega/rho and tail r^g int_r^R omega/rho^(1+g).

    Below the smallest tabulated radius the modulus extends linearly (exact
    closed forms are used for that piece); the extrapolated share of the
    total is reported, with a flag when r sits a decade below the table.
    """
    if not (0 < r <= R):
        raise ContractViolation("need 0 < r <= R")
    if not (0 < gamma <= 1.0):
        raise ContractViolation("gamma must lie in (0, 1]")
    flags = []
    r0 = float(profile.radii[0])
    v0 = float(profile.values[0])
    omega = _omega_interpolator(profile)
    if r < r0 / 10.0:
        flags.append("extrapolation-dominated")
    if R > profile.max_radius * (1 + 1e-12):
        flags.append("tail-extends-beyond-table")

    # small scale: exact linear-extrapolation piece + log-trapezoid remainder
    # (in u = log rho the integrand of int omega/rho drho is just omega)
    a = min(r, r0)
    small_extrap = v0 * a / r0
    small_main = _log_trapezoid(omega, r0, r, nodes) if r > r0 else 0.0
    small = small_extrap + small_main

    # tail: extrapolated piece on [r, min(r0, R)] plus tabulated remainder
    tail_extrap = 0.0
    lo_tab = max(r, r0)
    if r < r0:
        upper = min(r0, R)
        slope = v0 / r0
        if abs(gamma - 1.0) < 1e-14:
            tail_extrap = slope * math.log(upper / r)
        else:
            tail_extrap = slope * (upper ** (1.0 - gamma) - r ** (1.0 - gamma)) / (1.0 - gamma)
    tail_main = _log_trapezoid(lambda rho: omega(rho) / rho**gamma, lo_tab, R, nodes) if R > lo_tab else 0.0
    tail = (r**gamma) * (tail_extrap + tail_main)

    total = small + tail
    extrap_share = (small_extrap + (r**gamma) * tail_extrap) / total if total > 0 else 0.0
    return DiniReport(
        r=float(r), R=float(R), gamma=float(gamma),
        small_scale_integral=float(small), tail_integral=float(tail),
        extrapolated_fraction=float(extrap_share), flags=tuple(flags),
    )


# -- seminorms and mean deviations ------------------------------------------------


def _region_mask(spec: GridSpec, kappa, center, radius) -> np.ndarray:
    if center is None or radius is None:
        return np.ones(spec.sizes, dtype=bool)
    return ball_mask(spec, as_kappa(kappa), center, radius)


def seminorm(
    u_derivs: Mapping,
    p: float,
    kappa=None,
    center: Sequence[float] | None = None,
    region_radius: float | None = None,
) -> float:
    """Cell-weighted discrete seminorm over the region.

    Finite p: (sum_alpha sum_cells |D^alpha u|^p * cell_volume)^(1/p).
    p = infinity: max over alpha of the sup (a fixed convention; reported
    constants absorb the equivalence with the summed variant).
    """
    if not u_derivs:
        raise ContractViolation("empty derivative map")
    items = sorted(u_derivs.items(), key=lambda kv: tuple(kv[0]))
    spec = items[0][1].spec
    mask = _region_mask(spec, kappa, center, region_radius)
    if p == math.inf:
        return max(float(np.max(np.abs(f.values[mask]))) if np.any(mask) else 0.0
                   for _, f in items)
    if not p > 0:
        raise ContractViolation("p must be positive or infinity")
    total = 0.0
    for _, f in items:
        total += float(np.sum(np.abs(f.values[mask]) ** p)) * spec.cell_volume
    return total ** (1.0 / p)


def ball_mean(field: GridField, kappa, center, radius) -> complex:
    mask = ball_mask(field.spec, as_kappa(kappa), center, radius)
    if not np.any(mask):
        raise ContractViolation("ball contains no grid points")
    return complex(np.mean(field.values[mask]))


def _golden_section(fn, lo: float, hi: float, evals: int) -> tuple:
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc, fd = fn(c), fn(d)
    used = 2
    while used < evals and (b - a) > 1e-15 * max(abs(a), abs(b), 1.0):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = fn(d)
        used += 1
    return (c, fc) if fc <= fd else (d, fd)


def campanato_phi(
    u_derivs: Mapping,
    p: float,
    center: Sequence[float],
    radius: float,
    kappa,
    budget: int = 200,
    rtol: float = 1e-10,
) -> tuple[float, bool]:
    """sum over alpha of  min_b (ball mean of |D^alpha u - b|^p)^(1/p),  p < 1.

    The complex constant is found by golden-section sweeps over the real and
    imaginary parts in turn, seeded at the coordinate medians (for p < 1 the
    minimizer is not the mean).  Returns (value, converged); when the budget
    runs out before the relative improvement drops below ``rtol`` the best
    value found is returned with ``converged=False``.
    """
    if not (0 < p < 1):
        raise ContractViolation("this mean deviation is defined for 0 < p < 1")
    if not u_derivs:
        raise ContractViolation("empty derivative map")
    items = sorted(u_derivs.items(), key=lambda kv: tuple(kv[0]))
    spec = items[0][1].spec
    mask = ball_mask(spec, as_kappa(kappa), center, radius)
    if not np.any(mask):
        raise ContractViolation("ball contains no grid points")
    total = 0.0
    all_converged = True
    for _, fld in items:
        w = fld.values[mask]

        def objective(b: complex) -> float:
            return float(np.mean(np.abs(w - b) ** p))

        re = np.real(w)
        im = np.imag(w)
        b_re, b_im = float(np.median(re)), float(np.median(im))
        span_re = max(float(re.max() - re.min()), 0.0)
        span_im = max(float(im.max() - im.min()), 0.0)
        rad_re = span_re * 0.51 + 1e-12
        rad_im = span_im * 0.51 + 1e-12
        best = objective(complex(b_re, b_im))
        used = 1
        converged = span_re == 0.0 and span_im == 0.0
        per_sweep = max(budget // 8, 8)
        shrink = 0.618 ** (per_sweep - 2) * 8.0  # re-center and tighten each pass
        while used < budget and not converged:
            prev = best
            if span_re > 0.0:
                b_re, val = _golden_section(
                    lambda t: objective(complex(t, b_im)), b_re - rad_re, b_re + rad_re,
                    min(per_sweep, budget - used))
                used += min(per_sweep, budget - used)
                best = min(best, val)
                rad_re = max(rad_re * shrink, 1e-15)
            if span_im > 0.0 and used < budget:
                b_im, val = _golden_section(
                    lambda t: objective(complex(b_re, t)), b_im - rad_im, b_im + rad_im,
                    min(per_sweep, budget - used))
                used += min(per_sweep, budget - used)
                best = min(best, val)
                rad_im = max(rad_im * shrink, 1e-15)
            if prev - best <= rtol * max(best, 1e-300):
                converged = True
        total += best ** (1.0 / p)
        all_converged = all_converged and converged
    return total, all_converged


# -- exports -------------------------------------------------------------------


def write_profile_csv(profile: OscillationProfile, path, header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rho", "omega", "kind"])
        for rho, om in zip(profile.radii, profile.values):
            writer.writerow([repr(float(rho)), repr(float(om)), profile.kind])


def write_dini_csv(reports: Sequence[DiniReport], path, header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r", "R", "gamma", "small_scale", "tail"])
        for rep in reports:
            writer.writerow([repr(rep.r), repr(rep.R), repr(rep.gamma),
                             repr(rep.small_scale_integral), repr(rep.tail_integral)])
