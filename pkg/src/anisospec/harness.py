"""End-to-end empirical checks of the interior regularity inequalities.

Each verification solves a concrete problem, measures both sides of the
target inequality on the solved fields, and reports the implied empirical
constant  C = lhs / sum(rhs terms).  The scientific claim under test is
stability: C measured at one scale r (or one grid resolution) should predict
the others within the configured windows.  Reports below the trusted radius
floor (eight grid steps, measured along the finest axis in the anisotropic
distance) are suppressed; there the discretization error dominates.

Also housed here: the ball-mean Taylor projection whose top derivatives are
the ball means, per-radius decay tables of the mean p-deviation of the top
derivatives, and the absorption iteration turning a one-step decay
inequality into a full modulus bound.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ContractViolation
from .grids import GridField, GridSpec, TrigPolynomial, ball_mask, inscribed_radius
from .indexing import MultiIndex, as_multi_index
from .oscillation import (
    DiniReport,
    OscillationProfile,
    campanato_phi,
    dini_integrals,
    mean_oscillation_profile,
    oscillation_profile,
    pair_oscillation_curve,
    seminorm,
)
from .polynomials import Polynomial
from .solver import rhs_from_manufactured, solve_constant, solve_variable_neumann
from .symbols import OperatorSpec

__all__ = [
    "Problem",
    "EstimateReport",
    "TaylorProjection",
    "DecayTable",
    "AbsorptionResult",
    "taylor_project",
    "verify_global",
    "verify_variable",
    "verify_sobolev",
    "campanato_decay",
    "absorption_iterate",
    "trusted_r_floor",
    "write_reports_csv",
    "write_reports_json",
]


def trusted_r_floor(spec: GridSpec, kappa) -> float:
    """Eight grid steps along the finest axis, in the anisotropic distance."""
    return 8.0 * min(spec.axis_step_distances(kappa))


@dataclass(frozen=True)
class Problem:
    """One verification setup: operator, grid, data, and window parameters."""

    op: OperatorSpec
    grid: GridSpec
    rhs: Mapping | None = None
    manufactured: object | None = None
    theta: float = 0.5
    gamma: float = 0.5
    radii: tuple = ()
    label: str = "problem"

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ContractViolation("theta must lie in (0, 1)")
        if not 0 < self.gamma < 1:
            raise ContractViolation("gamma must lie in (0, 1)")
        if self.op.grid is not None and self.op.grid != self.grid:
            raise ContractViolation("coefficient grid differs from problem grid")

    def _as_field(self, obj) -> GridField:
        if isinstance(obj, GridField):
            if obj.spec != self.grid:
                raise ContractViolation("field grid differs from problem grid")
            return obj
        if isinstance(obj, TrigPolynomial):
            return obj.evaluate(self.grid)
        raise ContractViolation(f"cannot interpret {type(obj).__name__} as grid data")

    def manufactured_field(self) -> GridField | None:
        return self._as_field(self.manufactured) if self.manufactured is not None else None

    def rhs_fields(self) -> dict:
        """Per-beta data; a manufactured solution overrides and derives them."""
        u = self.manufactured_field()
        if u is not None:
            return rhs_from_manufactured(self.op, u)
        if not self.rhs:
            raise ContractViolation("problem has neither rhs nor manufactured solution")
        return {as_multi_index(b): self._as_field(f) for b, f in self.rhs.items()}


@dataclass(frozen=True)
class EstimateReport:
    """Left side, labeled right-side terms, and the implied constant."""

    lhs: float
    rhs_terms: dict
    empirical_C: float | None
    scale_r: float
    metadata: dict
    flags: tuple = ()

    @property
    def rhs_total(self) -> float:
        return float(sum(self.rhs_terms.values()))


@dataclass(frozen=True)
class TaylorProjection:
    """Ball-mean anchored polynomial: coefficients c_alpha / alpha! on
    monomials (x - x0)^alpha over the top index set; its alpha-derivative is
    exactly c_alpha for alpha in the set."""

    center: tuple
    coefficients: dict

    def evaluate(self, spec: GridSpec) -> np.ndarray:
        """Pointwise values on the grid, using minimal-image displacements."""
        axes = spec.coordinate_axes()
        disp = []
        for ax, c, period in zip(axes, self.center, spec.periods):
            d = (ax - float(c) + period / 2.0) % period - period / 2.0
            disp.append(d)
        mesh = np.meshgrid(*disp, indexing="ij", sparse=True)
        out = np.zeros(spec.sizes, dtype=complex)
        for alpha, coeff in self.coefficients.items():
            term = np.full(spec.sizes, coeff / alpha.factorial, dtype=complex)
            for ax, e in zip(mesh, alpha):
                if e:
                    term = term * ax**e
            out += term
        return out


def _ball_mean(field_vals: np.ndarray, mask: np.ndarray) -> complex:
    return complex(np.mean(field_vals[mask]))


def taylor_project(
    u_derivs: Mapping,
    kappa,
    center: Sequence[float],
    r: float,
    u_field: GridField | None = None,
):
    """Ball means of the top derivatives and the recentred derivative fields.

    Returns (projection, residual derivative map) and, when the field itself
    is supplied, the pointwise residual u - Q as a third element.
    """
    items = sorted(u_derivs.items(), key=lambda kv: tuple(kv[0]))
    spec = items[0][1].spec
    mask = ball_mask(spec, kappa, center, r)
    if not np.any(mask):
        raise ContractViolation("projection ball contains no grid points")
    coeffs = {}
    residual = {}
    for alpha, fld in items:
        alpha = as_multi_index(alpha)
        c = _ball_mean(fld.values, mask)
        coeffs[alpha] = c
        residual[alpha] = GridField(spec, fld.values - c)
    proj = TaylorProjection(center=tuple(float(c) for c in center), coefficients=coeffs)
    if u_field is None:
        return proj, residual
    res_field = GridField(u_field.spec, u_field.values - proj.evaluate(u_field.spec))
    return proj, residual, res_field


# -- shared assembly ---------------------------------------------------------------


def _alpha_curves(derivs: Mapping, kappa, center=None, region_radius=None) -> dict:
    curves = {}
    for alpha, fld in sorted(derivs.items(), key=lambda kv: tuple(kv[0])):
        curves[alpha] = pair_oscillation_curve(fld, kappa, center, region_radius)
    return curves


def _report(lhs, terms, r, metadata, extra_flags=()) -> EstimateReport:
    total = float(sum(terms.values()))
    flags = list(extra_flags)
    if total <= 0.0:
        flags.append("rhs_zero")
        c = None
    else:
        c = lhs / total
    return EstimateReport(lhs=float(lhs), rhs_terms=dict(terms), empirical_C=c,
                          scale_r=float(r), metadata=dict(metadata), flags=tuple(flags))


def verify_global(problem: Problem, r_values: Sequence[float]) -> list[EstimateReport]:
    """Whole-torus modulus bound for the top derivatives, constant coefficients.

    lhs(r): worst modulus of continuity among the solved D^alpha u at scale r.
    rhs(r): the two Dini terms of the data modulus at exponent 1 (small-scale
    integral and the r-weighted tail up to the grid diameter).
    """
    op = problem.op
    if not op.constant_coefficient:
        raise ContractViolation("global verification requires constant coefficients")
    f = problem.rhs_fields()
    result = solve_constant(op, f)
    kappa = op.kappa
    omega_f = oscillation_profile([f[b] for b in sorted(f)], kappa)
    curves = _alpha_curves(result.derivatives, kappa)
    r_top = omega_f.max_radius
    floor = trusted_r_floor(problem.grid, kappa)
    meta = {"operator": problem.label, "grid": list(problem.grid.sizes),
            "kind": "global", "trusted_floor": floor, "residual": result.residual}
    reports = []
    for r in sorted(float(v) for v in r_values):
        if r < floor or r > r_top:
            continue
        lhs = max(curve.value_at(r) for curve in curves.values())
        dini = dini_integrals(omega_f, r, r_top, gamma=1.0)
        terms = {"dini_small": dini.small_scale_integral, "dini_tail": dini.tail_integral}
        reports.append(_report(lhs, terms, r, meta, extra_flags=dini.flags))
    return reports


def _five_center_design(spec: GridSpec, kappa, center, radius) -> list[tuple]:
    """The ball center plus four axis points at half radius."""
    centers = [tuple(center)]
    for axis, k in enumerate(kappa):
        off = (0.5 * radius) ** k
        for sign in (1.0, -1.0):
            pt = list(center)
            pt[axis] = pt[axis] + sign * off
            centers.append(tuple(pt))
    # keep exactly five: center plus one per (axis, sign) up to four entries
    return centers[:5]


def verify_variable(problem: Problem, r_values: Sequence[float]) -> list[EstimateReport]:
    """Interior modulus bound with mean-oscillation data, variable coefficients.

    lhs(r): worst modulus among D^alpha u over the inner ball of radius
    theta * R0.  rhs(r): seminorm * r^gamma, the two Dini terms of the data
    mean oscillation, and the seminorm-weighted Dini terms of the coefficient
    mean oscillation.
    """
    op = problem.op
    f = problem.rhs_fields()
    if op.grid is not None:
        result = solve_variable_neumann(op, f)
    else:
        result = solve_constant(op, f)
    kappa = op.kappa
    spec = problem.grid
    r0 = inscribed_radius(spec, kappa)
    center = tuple(p / 2.0 for p in spec.periods)
    theta_r0 = problem.theta * r0
    gamma = problem.gamma
    sem = seminorm(result.derivatives, math.inf, kappa, center, r0)
    centers = _five_center_design(spec, kappa, center, theta_r0)
    lo = 2.0 * min(spec.axis_step_distances(kappa))
    radii = np.geomspace(lo, r0, 32)
    f_fields = [f[b] for b in sorted(f)]
    omega_f = mean_oscillation_profile(f_fields, kappa, centers=centers, radii=radii)
    coeff_fields = [v for _, v in op.sorted_principal() if isinstance(v, GridField)]
    if coeff_fields:
        omega_a = mean_oscillation_profile(coeff_fields, kappa, centers=centers, radii=radii)
    else:
        omega_a = OscillationProfile(omega_f.radii, np.zeros_like(omega_f.values),
                                     "mean_oscillation")
    curves = _alpha_curves(result.derivatives, kappa, center, theta_r0)
    floor = trusted_r_floor(spec, kappa)
    meta = {"operator": problem.label, "grid": list(spec.sizes), "kind": "variable",
            "trusted_floor": floor, "R0": r0, "theta": problem.theta, "gamma": gamma,
            "residual": result.residual, "seminorm_inf": sem}
    if hasattr(result, "contraction_factors"):
        meta["contraction_factors"] = list(result.contraction_factors)
        meta["freeze_point"] = list(result.freeze_point)
    reports = []
    for r in sorted(float(v) for v in r_values):
        if r < floor or r > 2.0 * theta_r0:
            continue
        lhs = max(curve.value_at(r) for curve in curves.values())
        dini_f = dini_integrals(omega_f, r, r0, gamma=gamma)
        dini_a = dini_integrals(omega_a, r, r0, gamma=gamma)
        terms = {
            "seminorm_r_gamma": sem * r**gamma,
            "dini_f_small": dini_f.small_scale_integral,
            "dini_f_tail": dini_f.tail_integral,
            "dini_a_small": sem * dini_a.small_scale_integral,
            "dini_a_tail": sem * dini_a.tail_integral,
        }
        reports.append(_report(lhs, terms, r, meta, extra_flags=dini_f.flags))
    return reports


def verify_sobolev(problem: Problem, p: float, q: float | None = None) -> EstimateReport:
    """Embedding check: lower-set derivative norms against top-set norms.

    For 1 <= p < |kappa| and admissible q the report compares
    max over the lower set of ||D^a' u||_q (inner ball) with
    sum over the top set of ||D^a u||_p (outer ball).  For p > |kappa| the
    report is informational: it records the log-log fitted modulus exponent
    of the lower-set derivatives next to both candidate exponents
    (1 - p/|kappa| as printed, 1 - |kappa|/p as the classical embedding
    suggests) and never fails a run.
    """
    op = problem.op
    if not op.constant_coefficient:
        raise ContractViolation("embedding check requires constant coefficients")
    total_weight = op.kappa.total
    f = problem.rhs_fields()
    result = solve_constant(op, f, include_lower=True)
    spec = problem.grid
    kappa = op.kappa
    r0 = inscribed_radius(spec, kappa)
    center = tuple(per / 2.0 for per in spec.periods)
    lower_only = {a: v for a, v in result.derivatives.items() if a not in op.A}
    meta = {"operator": problem.label, "grid": list(spec.sizes), "kind": "sobolev",
            "p": p, "q": q, "homogeneous_dimension": total_weight,
            "theta": problem.theta}
    if p > total_weight:
        floor = trusted_r_floor(spec, kappa)
        fitted = {}
        for alpha, fld in sorted(lower_only.items(), key=lambda kv: tuple(kv[0])):
            curve = pair_oscillation_curve(fld, kappa, center, problem.theta * r0)
            sel = (curve.radii >= floor) & (curve.radii <= problem.theta * r0) & (curve.values > 0)
            if np.count_nonzero(sel) >= 3:
                slope = np.polyfit(np.log(curve.radii[sel]), np.log(curve.values[sel]), 1)[0]
                fitted[tuple(alpha)] = float(slope)
        meta["fitted_exponents"] = {str(k): v for k, v in sorted(fitted.items())}
        lhs = min(fitted.values()) if fitted else 0.0
        terms = {
            "printed_exponent": 1.0 - p / total_weight,
            "embedding_exponent": 1.0 - total_weight / p,
        }
        return EstimateReport(lhs=float(lhs), rhs_terms=terms, empirical_C=None,
                              scale_r=float(r0), metadata=meta,
                              flags=("informational",))
    if not 1.0 <= p < total_weight:
        raise ContractViolation(f"p must satisfy 1 <= p < {total_weight} or p > {total_weight}")
    q_limit = total_weight * p / (total_weight - p)
    if q is None or not 1.0 <= q < q_limit:
        raise ContractViolation(f"q must lie in [1, {q_limit}) for p={p}")
    lhs = max(
        seminorm({a: fld}, q, kappa, center, problem.theta * r0)
        for a, fld in result.derivatives.items()
        if a not in op.A
    )
    rhs = sum(
        seminorm({a: result.derivatives[a]}, p, kappa, center, r0) for a in sorted(op.A)
    )
    return _report(lhs, {"top_norms_sum": rhs}, r0, meta)


@dataclass(frozen=True)
class DecayTable:
    radii: np.ndarray
    values: np.ndarray
    per_center: dict
    p: float
    fitted_exponent: float | None
    reference_exponent: float


def campanato_decay(problem: Problem, radii: Sequence[float], p: float) -> DecayTable:
    """Mean p-deviation of the top derivatives against the ball radius.

    p >= 1 tabulates the cell-weighted norm of D^alpha u minus its ball mean
    (summed over the top set); p < 1 tabulates the constant-optimized mean
    deviation.  The log-log slope over the radii is fitted when at least
    three radii produce positive values; the reference exponent is
    |kappa|/p + min kappa for p >= 1 and min kappa for p < 1.
    """
    radii = sorted(float(r) for r in radii)
    op = problem.op
    kappa = op.kappa
    spec = problem.grid
    u = problem.manufactured_field()
    if u is not None:
        mesh = spec.frequency_mesh(sparse=True)
        u_hat = u.fft()
        derivs = {
            a: GridField.from_spectrum(spec, Polynomial.i_xi_power(a)(mesh) * u_hat)
            for a in sorted(op.A)
        }
    else:
        derivs = solve_constant(op, problem.rhs_fields()).derivatives
    quarter = [per / 4.0 for per in spec.periods]
    center = tuple(per / 2.0 for per in spec.periods)
    centers = [center,
               (quarter[0],) + center[1:],
               (3 * quarter[0],) + center[1:],
               center[:-1] + (quarter[-1],),
               center[:-1] + (3 * quarter[-1],)]
    per_center = {c: [] for c in centers}
    for r in radii:
        for c in centers:
            if p >= 1.0:
                mask = ball_mask(spec, kappa, c, r)
                total = 0.0
                for alpha in sorted(op.A):
                    vals = derivs[alpha].values
                    if np.any(mask):
                        dev = vals[mask] - np.mean(vals[mask])
                        total += (np.sum(np.abs(dev) ** p) * spec.cell_volume) ** (1.0 / p)
                per_center[c].append(total)
            else:
                val, _ = campanato_phi(derivs, p, c, r, kappa)
                per_center[c].append(val)
    values = np.mean(np.asarray([per_center[c] for c in centers]), axis=0)
    fitted = None
    positive = values > 0
    if np.count_nonzero(positive) >= 3:
        fitted = float(np.polyfit(np.log(np.asarray(radii)[positive]),
                                  np.log(values[positive]), 1)[0])
    reference = (kappa.total / p + kappa.min_weight) if p >= 1.0 else float(kappa.min_weight)
    return DecayTable(
        radii=np.asarray(radii), values=values,
        per_center={tuple(k): np.asarray(v) for k, v in per_center.items()},
        p=float(p), fitted_exponent=fitted, reference_exponent=float(reference),
    )


# -- absorption iteration --------------------------------------------------------


@dataclass(frozen=True)
class AbsorptionResult:
    bound: float
    closed_form: float
    steps: int
    hypothesis_violations: tuple
    flags: tuple = ()


def _table_eval(table, radius: float) -> float:
    radii, values = table
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.searchsorted(radii, radius)
    for j in (idx - 1, idx):
        if 0 <= j < len(radii) and abs(radii[j] - radius) <= 1e-12 * max(radius, radii[j]):
            return float(values[j])
    if radius <= radii[0]:
        return float(values[0])
    if radius >= radii[-1]:
        return float(values[-1])
    if np.all(values > 0):
        return float(np.exp(np.interp(math.log(radius), np.log(radii), np.log(values))))
    return float(np.interp(radius, radii, values))


def _normalize_table(table) -> tuple:
    if isinstance(table, Mapping):
        radii = sorted(table)
        return np.asarray(radii, dtype=float), np.asarray([table[r] for r in radii], dtype=float)
    radii, values = table
    order = np.argsort(np.asarray(radii, dtype=float))
    return (np.asarray(radii, dtype=float)[order], np.asarray(values, dtype=float)[order])


def absorption_iterate(
    phi_table,
    psi_table,
    tau: float,
    gamma: float,
    A: float,
    r: float,
    R0: float,
) -> AbsorptionResult:
    """Unroll  phi(tau R) <= tau^gamma phi(R) + psi(R)  down to scale r.

    The recursion is applied k times with k the unique integer satisfying
    tau^(k+1) R0 < r <= tau^k R0, then the quasi-monotonicity constant A
    bridges from tau^k R0 to r.  The closed-form right side
    (r/R0)^gamma phi(R0) + r^gamma int_r^R0 psi/rho^(gamma+1)  is returned
    alongside for comparison (with unit constant).  The quasi-monotonicity
    hypothesis is checked on the tabulated radii; violations are flagged but
    the iteration still runs.
    """
    if not (0.0 < tau < 1.0):
        raise ContractViolation("tau must lie in (0, 1)")
    if not (0.0 < gamma <= 1.0):
        raise ContractViolation("gamma must lie in (0, 1]")
    if A < 1.0:
        raise ContractViolation("A must be >= 1")
    if not (0.0 < r <= R0):
        raise ContractViolation("need 0 < r <= R0")
    phi = _normalize_table(phi_table)
    psi = _normalize_table(psi_table)

    violations = []
    for name, table in (("phi", phi), ("psi", psi)):
        radii, values = table
        for i, R in enumerate(radii):
            if R > R0 or tau * R < radii[0]:
                continue
            lo = _table_eval(table, tau * R)
            inside = (radii >= tau * R) & (radii <= R)
            for rv, vv in zip(radii[inside], values[inside]):
                if not (lo / A - 1e-12 <= vv <= A * values[i] + 1e-12 * max(1.0, values[i])):
                    violations.append((name, float(R), float(rv)))
                    break

    k = 0
    while tau ** (k + 1) * R0 >= r:
        k += 1
    b = _table_eval(phi, R0)
    for j in range(k):
        b = tau**gamma * b + _table_eval(psi, tau**j * R0)
    bound = A * b

    if R0 > r:
        u = np.linspace(math.log(r), math.log(R0), 512)
        rho = np.exp(u)
        integrand = np.asarray([_table_eval(psi, x) for x in rho]) * rho ** (-gamma)
        integral = float(np.trapezoid(integrand, u))
    else:
        integral = 0.0
    closed = (r / R0) ** gamma * _table_eval(phi, R0) + r**gamma * integral
    flags = ("hypothesis_violated",) if violations else ()
    return AbsorptionResult(bound=float(bound), closed_form=float(closed), steps=k,
                            hypothesis_violations=tuple(violations), flags=flags)


# -- serialization -----------------------------------------------------------------


def write_reports_csv(reports: Sequence[EstimateReport], path, header_lines: Sequence[str] = ()) -> None:
    term_keys = sorted({k for rep in reports for k in rep.rhs_terms})
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "r", "lhs", *term_keys, "empirical_C", "flags"])
        for rep in reports:
            row = [rep.metadata.get("kind", ""), repr(rep.scale_r), repr(rep.lhs)]
            row += [repr(float(rep.rhs_terms.get(k, 0.0))) for k in term_keys]
            row.append("" if rep.empirical_C is None else repr(float(rep.empirical_C)))
            row.append(";".join(rep.flags))
            writer.writerow(row)


def report_payload(rep: EstimateReport) -> dict:
    return {
        "operator": rep.metadata.get("operator", ""),
        "grid": rep.metadata.get("grid", []),
        "r": rep.scale_r,
        "lhs": rep.lhs,
        "rhs_terms": {k: float(v) for k, v in sorted(rep.rhs_terms.items())},
        "empirical_C": rep.empirical_C,
        "flags": list(rep.flags),
    }


def write_reports_json(reports: Sequence[EstimateReport], path, envelope: dict | None = None) -> None:
    payload = {"reports": [report_payload(r) for r in reports]}
    if envelope:
        payload.update(envelope)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
