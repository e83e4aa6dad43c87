import math

import numpy as np
import pytest

from helpers import (
    grid_2d,
    heat_operator,
    manufactured_heat,
    rough_forcing,
    variable_heat_operator,
)

from anisospec.exceptions import ContractViolation
from anisospec.grids import GridField, GridSpec, TrigPolynomial, ball_mask
from anisospec.harness import (
    AbsorptionResult,
    Problem,
    absorption_iterate,
    campanato_decay,
    taylor_project,
    trusted_r_floor,
    verify_global,
    verify_sobolev,
    verify_variable,
    write_reports_csv,
    write_reports_json,
)
from anisospec.indexing import MultiIndex
from anisospec.polynomials import Polynomial

TWO_PI = 2.0 * np.pi


# -- oracles -----------------------------------------------------------------

def unroll_recursion(phi_R0, psi_fn, tau, gamma, k, A):
    """Direct loop unrolling of the one-step decay recursion."""
    b = phi_R0
    for j in range(k):
        b = tau**gamma * b + psi_fn(tau**j)
    return A * b


def smooth_u(spec):
    terms = (((1, 0), 0.8), ((0, 1), 0.5j), ((1, 1), 0.3), ((-1, 1), 0.2 - 0.1j))
    return TrigPolynomial(terms).evaluate(spec)


# -- Taylor projection ----------------------------------------------------------

def test_taylor_constant_derivatives_zero_residual():
    spec = grid_2d(16)
    c1, c2 = 1.5 - 0.5j, 2.0 + 1.0j
    derivs = {
        (2, 0): GridField(spec, np.full(spec.sizes, c1)),
        (0, 1): GridField(spec, np.full(spec.sizes, c2)),
    }
    proj, residual = taylor_project(derivs, (1, 2), (np.pi, np.pi), 1.0)
    assert proj.coefficients[MultiIndex((2, 0))] == pytest.approx(c1)
    for fld in residual.values():
        assert fld.sup_norm() < 1e-14


def test_taylor_projection_linearity():
    spec = grid_2d(16)
    rng = np.random.default_rng(5)
    d1 = {(2, 0): GridField(spec, rng.normal(size=spec.sizes).astype(complex))}
    d2 = {(2, 0): GridField(spec, rng.normal(size=spec.sizes).astype(complex))}
    a, b = 0.3, -1.2
    combo = {(2, 0): GridField(spec, a * d1[(2, 0)].values + b * d2[(2, 0)].values)}
    p1, _ = taylor_project(d1, (1, 2), (np.pi, np.pi), 1.0)
    p2, _ = taylor_project(d2, (1, 2), (np.pi, np.pi), 1.0)
    pc, _ = taylor_project(combo, (1, 2), (np.pi, np.pi), 1.0)
    key = MultiIndex((2, 0))
    assert pc.coefficients[key] == pytest.approx(a * p1.coefficients[key] + b * p2.coefficients[key], rel=1e-12)


def test_taylor_reprojection_idempotent():
    spec = grid_2d(32)
    rng = np.random.default_rng(7)
    derivs = {(2, 0): GridField(spec, rng.normal(size=spec.sizes).astype(complex)),
              (0, 1): GridField(spec, rng.normal(size=spec.sizes).astype(complex))}
    _, residual = taylor_project(derivs, (1, 2), (np.pi, np.pi), 1.0)
    proj2, _ = taylor_project(residual, (1, 2), (np.pi, np.pi), 1.0)
    for c in proj2.coefficients.values():
        assert abs(c) < 1e-10


def test_taylor_residual_spectrum_shift():
    # subtracting the ball mean changes only the zero mode
    spec = grid_2d(16)
    rng = np.random.default_rng(9)
    f = GridField(spec, rng.normal(size=spec.sizes).astype(complex))
    derivs = {(2, 0): f}
    _, residual = taylor_project(derivs, (1, 2), (np.pi, np.pi), 1.0)
    a = f.fft()
    b = residual[MultiIndex((2, 0))].fft()
    diff = a - b
    diff.reshape(-1)[0] = 0.0
    assert np.max(np.abs(diff)) < 1e-10 * np.max(np.abs(a))


# -- global verification -----------------------------------------------------------

def test_verify_global_zero_rhs_flagged():
    spec = grid_2d(32)
    prob = Problem(op=heat_operator(), grid=spec,
                   rhs={(0, 0): GridField.zeros(spec)}, label="zero")
    reports = verify_global(prob, [2.0])
    assert reports
    for rep in reports:
        assert rep.empirical_C is None
        assert "rhs_zero" in rep.flags


def test_verify_global_reports_structure():
    spec = grid_2d(64)
    f = rough_forcing(spec)
    prob = Problem(op=heat_operator(), grid=spec, rhs={(0, 0): f}, label="rough")
    floor = trusted_r_floor(spec, (1, 2))
    rs = np.geomspace(floor, 3.0, 8)
    reports = verify_global(prob, rs)
    assert len(reports) == 8
    for rep in reports:
        assert rep.lhs > 0
        assert rep.empirical_C is not None
        assert set(rep.rhs_terms) == {"dini_small", "dini_tail"}


def test_verify_global_suppresses_untrusted_radii():
    spec = grid_2d(32)
    f = rough_forcing(spec, x_octaves=3, t_octaves=2)
    prob = Problem(op=heat_operator(), grid=spec, rhs={(0, 0): f})
    floor = trusted_r_floor(spec, (1, 2))
    reports = verify_global(prob, [floor / 10.0, floor * 1.5])
    assert len(reports) == 1
    assert reports[0].scale_r == pytest.approx(floor * 1.5)


def test_verify_global_smooth_data_lipschitz_slope():
    # smooth manufactured solution: lhs scales like r near the floor
    spec = grid_2d(64)
    prob = Problem(op=heat_operator(), grid=spec, manufactured=smooth_u(spec))
    floor = trusted_r_floor(spec, (1, 2))
    rs = np.geomspace(floor, 2 * floor, 4)
    reports = verify_global(prob, rs)
    lhs = np.asarray([rep.lhs for rep in reports])
    slope = np.polyfit(np.log([r.scale_r for r in reports]), np.log(lhs), 1)[0]
    assert slope >= 0.8
    assert np.all(lhs / np.asarray([r.scale_r for r in reports]) <= 10.0 * lhs[0] / reports[0].scale_r)


# -- variable verification -----------------------------------------------------------

def test_verify_variable_constant_coefficients_zero_a_terms():
    spec = grid_2d(64)
    f = rough_forcing(spec, x_octaves=3, t_octaves=2)
    prob = Problem(op=heat_operator(), grid=spec, rhs={(0, 0): f}, gamma=0.5)
    reports = verify_variable(prob, [0.9, 1.2])
    assert reports
    for rep in reports:
        assert rep.rhs_terms["dini_a_small"] == 0.0
        assert rep.rhs_terms["dini_a_tail"] == 0.0
        assert rep.empirical_C is not None


def test_verify_variable_all_zero_flagged():
    spec = grid_2d(64)
    prob = Problem(op=heat_operator(), grid=spec, rhs={(0, 0): GridField.zeros(spec)})
    reports = verify_variable(prob, [1.0])
    for rep in reports:
        assert rep.lhs == 0.0
        assert rep.empirical_C is None


def test_verify_variable_with_field_coefficients():
    spec = grid_2d(64)
    op = variable_heat_operator(spec, 0.05)
    _, f, _ = manufactured_heat(spec)
    prob = Problem(op=op, grid=spec, rhs={(0, 0): f}, gamma=0.5, label="eps005")
    reports = verify_variable(prob, [0.8, 1.2])
    assert reports
    for rep in reports:
        assert rep.rhs_terms["dini_a_small"] > 0
        assert rep.empirical_C is not None
        assert max(rep.metadata["contraction_factors"]) < 0.5


def test_global_and_variable_share_dini_structure():
    # identical profiles through the same quadrature give identical terms
    from anisospec.oscillation import OscillationProfile, dini_integrals

    radii = np.geomspace(1e-3, 2.0, 500)
    prof = OscillationProfile(radii, radii**0.5, "sup_oscillation")
    a = dini_integrals(prof, 0.3, 2.0, gamma=1.0)
    b = dini_integrals(prof, 0.3, 2.0, gamma=1.0)
    assert a.small_scale_integral == b.small_scale_integral
    assert a.tail_integral == b.tail_integral


# -- embedding checks -------------------------------------------------------------------

def test_sobolev_zero_solution_flagged():
    spec = grid_2d(32)
    prob = Problem(op=heat_operator(), grid=spec, rhs={(0, 0): GridField.zeros(spec)})
    rep = verify_sobolev(prob, p=2.0, q=5.0)
    assert rep.lhs == 0.0
    assert rep.empirical_C is None


def test_sobolev_low_p_branch():
    spec = grid_2d(64)
    prob = Problem(op=heat_operator(), grid=spec, manufactured=smooth_u(spec))
    rep = verify_sobolev(prob, p=2.0, q=5.0)
    assert rep.empirical_C is not None and rep.empirical_C > 0
    assert rep.metadata["homogeneous_dimension"] == 3


def test_sobolev_domain_errors():
    spec = grid_2d(32)
    prob = Problem(op=heat_operator(), grid=spec, manufactured=smooth_u(spec))
    with pytest.raises(ContractViolation):
        verify_sobolev(prob, p=2.0, q=7.0)  # beyond the embedding limit 6
    with pytest.raises(ContractViolation):
        verify_sobolev(prob, p=0.5, q=1.0)


def test_sobolev_high_p_informational():
    spec = grid_2d(64)
    prob = Problem(op=heat_operator(), grid=spec, manufactured=smooth_u(spec))
    rep = verify_sobolev(prob, p=6.0)
    assert "informational" in rep.flags
    assert rep.rhs_terms["printed_exponent"] == pytest.approx(1.0 - 6.0 / 3.0)
    assert rep.rhs_terms["embedding_exponent"] == pytest.approx(1.0 - 3.0 / 6.0)
    assert rep.metadata["fitted_exponents"]


# -- decay tables ---------------------------------------------------------------------

def test_campanato_decay_constant_derivative_zero():
    # top derivatives of a low-degree polynomial vanish; table is identically 0
    spec = grid_2d(32)
    op = heat_operator()
    zero_derivs_problem = Problem(op=op, grid=spec,
                                  rhs={(0, 0): GridField.zeros(spec)})
    table = campanato_decay(zero_derivs_problem, [0.4, 0.6, 0.9], p=2.0)
    assert np.all(table.values < 1e-12)
    assert table.fitted_exponent is None


def test_campanato_decay_smooth_exponent():
    spec = grid_2d(64)
    prob = Problem(op=heat_operator(), grid=spec, manufactured=smooth_u(spec))
    radii = np.geomspace(0.45, 1.1, 5)
    table = campanato_decay(prob, radii, p=2.0)
    assert table.reference_exponent == pytest.approx(3.0 / 2.0 + 1.0)
    assert table.fitted_exponent is not None
    assert table.fitted_exponent >= table.reference_exponent - 0.5


def test_campanato_decay_both_branches_monotone():
    spec = grid_2d(64)
    prob = Problem(op=heat_operator(), grid=spec, manufactured=smooth_u(spec))
    radii = np.geomspace(0.5, 1.1, 4)
    t2 = campanato_decay(prob, radii, p=2.0)
    th = campanato_decay(prob, radii, p=0.5)
    for tbl in (t2, th):
        assert np.all(np.diff(tbl.values) >= -0.1 * tbl.values[:-1])


def test_campanato_decay_needs_three_radii():
    spec = grid_2d(32)
    prob = Problem(op=heat_operator(), grid=spec, manufactured=smooth_u(spec))
    table = campanato_decay(prob, [0.5, 1.0], p=2.0)
    assert table.fitted_exponent is None


# -- absorption iteration -----------------------------------------------------------------

def test_absorption_pure_power_exact():
    gamma, tau, R0 = 0.7, 0.5, 1.0
    radii = np.asarray([tau**j for j in range(12)][::-1])
    phi = (radii, radii**gamma)
    psi = (radii, np.zeros_like(radii))
    k = 5
    r = tau**k * R0
    res = absorption_iterate(phi, psi, tau, gamma, A=1.0, r=r, R0=R0)
    assert res.steps == k
    assert res.bound == pytest.approx((r / R0) ** gamma, rel=1e-12)
    assert res.bound == pytest.approx(res.closed_form, rel=1e-9)


def test_absorption_constant_psi_geometric():
    gamma, tau, R0, c = 0.5, 0.5, 1.0, 0.3
    radii = np.asarray([tau**j for j in range(14)][::-1])
    phi = (radii, np.zeros_like(radii))
    psi = (radii, np.full_like(radii, c))
    r = tau**6
    res = absorption_iterate(phi, psi, tau, gamma, A=1.0, r=r, R0=R0)
    want = unroll_recursion(0.0, lambda s: c, tau, gamma, res.steps, 1.0)
    assert res.bound == pytest.approx(want, rel=1e-12)
    assert res.bound <= c / (1.0 - tau**gamma) + 1e-12


def test_absorption_matches_direct_recursion():
    tau, gamma = 0.5, 1.0
    radii = np.asarray([tau**j for j in range(16)][::-1])
    phi = (radii, radii)          # phi(R) = R
    psi = (radii, radii**2)       # psi(R) = R^2
    r = tau**7
    res = absorption_iterate(phi, psi, tau, gamma, A=1.0, r=r, R0=1.0)
    want = unroll_recursion(1.0, lambda s: s**2, tau, gamma, res.steps, 1.0)
    assert res.bound == pytest.approx(want, rel=1e-12)


def test_absorption_randomized_against_oracle():
    rng = np.random.default_rng(23)
    for _ in range(100):
        tau = float(rng.uniform(0.3, 0.8))
        gamma = float(rng.uniform(0.2, 1.0))
        A = float(rng.uniform(1.0, 2.0))
        R0 = float(rng.uniform(0.5, 2.0))
        depth = int(rng.integers(6, 12))
        radii = np.asarray([R0 * tau**j for j in range(depth)][::-1])
        phi_vals = rng.uniform(0.1, 2.0, size=depth)[::-1]
        psi_vals = rng.uniform(0.0, 1.0, size=depth)[::-1]
        k = int(rng.integers(1, depth - 1))
        r = R0 * tau**k
        res = absorption_iterate((radii, phi_vals), (radii, psi_vals),
                                 tau, gamma, A, r, R0)
        psi_map = {round(math.log(R0 * tau**j) * 1e6): psi_vals[depth - 1 - j]
                   for j in range(depth)}
        want = unroll_recursion(phi_vals[-1],
                                lambda s: psi_map[round(math.log(R0 * s) * 1e6)],
                                tau, gamma, res.steps, A)
        assert res.bound == pytest.approx(want, rel=1e-12)


def test_absorption_flags_hypothesis_violation():
    tau, gamma = 0.5, 0.5
    radii = np.asarray([0.125, 0.25, 0.5, 1.0])
    phi = (radii, np.asarray([1.0, 100.0, 0.001, 1.0]))  # wildly non-monotone
    psi = (radii, np.zeros(4))
    res = absorption_iterate(phi, psi, tau, gamma, A=1.0, r=0.25, R0=1.0)
    assert "hypothesis_violated" in res.flags
    assert res.hypothesis_violations


# -- serialization --------------------------------------------------------------------------

def test_report_csv_json_round_trip(tmp_path):
    spec = grid_2d(32)
    f = rough_forcing(spec, x_octaves=3, t_octaves=2)
    prob = Problem(op=heat_operator(), grid=spec, rhs={(0, 0): f}, label="io")
    reports = verify_global(prob, [1.8, 2.5])
    csv_path = tmp_path / "reports.csv"
    json_path = tmp_path / "reports.json"
    write_reports_csv(reports, csv_path, header_lines=["artifact_version=0.1.0"])
    write_reports_json(reports, json_path, envelope={"artifact_version": "0.1.0"})
    text = csv_path.read_text()
    assert text.startswith("# artifact_version=0.1.0\n")
    assert "dini_small" in text.splitlines()[1]
    import json as json_mod

    payload = json_mod.loads(json_path.read_text())
    assert payload["artifact_version"] == "0.1.0"
    assert len(payload["reports"]) == 2
    assert payload["reports"][0]["rhs_terms"]["dini_small"] > 0
