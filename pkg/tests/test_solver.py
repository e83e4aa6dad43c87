import numpy as np
import pytest

from helpers import (
    grid_2d,
    heat_operator,
    manufactured_heat,
    manufactured_third_order,
    third_order_operator,
    variable_heat_operator,
)

from anisospec.exceptions import (
    ContractViolation,
    DivergenceError,
    SingularMultiplierError,
)
from anisospec.grids import GridField, GridSpec, TrigPolynomial, load_akgf, save_akgf
from anisospec.indexing import MultiIndex
from anisospec.polynomials import Polynomial
from anisospec.solver import (
    apply_multiplier,
    forward_apply,
    parametrix_apply,
    rhs_from_manufactured,
    solve_constant,
    solve_variable_neumann,
)
from anisospec.symbols import RationalSymbol


def identity_multiplier(n=2):
    one = Polynomial.constant(n, 1.0)
    return RationalSymbol(one, one)


# -- multiplier application ------------------------------------------------------

def test_identity_round_trip_keep():
    spec = grid_2d(16)
    rng = np.random.default_rng(5)
    f = GridField(spec, rng.normal(size=spec.sizes) + 1j * rng.normal(size=spec.sizes))
    out = apply_multiplier(identity_multiplier(), f, dc_policy="keep")
    assert np.max(np.abs(out.values - f.values)) < 1e-12


def test_dc_projection_kills_constants():
    spec = grid_2d(8)
    f = GridField(spec, np.ones(spec.sizes, dtype=complex))
    out = apply_multiplier(identity_multiplier(), f, dc_policy="zero")
    assert np.max(np.abs(out.values)) < 1e-14


def test_spectral_differentiation_1d():
    spec = GridSpec((64,), (2 * np.pi,))
    x = spec.coordinate_axes()[0]
    f = GridField(spec, np.sin(x).astype(complex))
    out = apply_multiplier(lambda mesh: 1j * mesh[0], f, dc_policy="zero")
    assert np.max(np.abs(out.values - np.cos(x))) < 1e-10


def test_singular_multiplier_reports_frequency():
    spec = grid_2d(8)
    f = GridField(spec, np.ones(spec.sizes, dtype=complex))
    bad = RationalSymbol(Polynomial.constant(2, 1.0),
                         Polynomial(2, {(2, 0): 1.0, (0, 0): -1.0}))  # vanishes at xi=1
    with pytest.raises(SingularMultiplierError) as err:
        apply_multiplier(bad, f)
    assert err.value.frequency is not None


def test_dc_error_policy():
    spec = grid_2d(8)
    f = GridField(spec, np.ones(spec.sizes, dtype=complex))
    ms = RationalSymbol(Polynomial.constant(2, 1.0), Polynomial(2, {(2, 0): 1.0, (0, 1): 1j}))
    with pytest.raises(SingularMultiplierError):
        apply_multiplier(ms, f, dc_policy="error")


# -- constant solve -----------------------------------------------------------------

@pytest.mark.parametrize("n", [64, 128])
def test_heat_round_trip_manufactured(n):
    spec = grid_2d(n)
    op = heat_operator()
    u, f, derivs = manufactured_heat(spec)
    result = solve_constant(op, {(0, 0): f})
    assert result.residual < 1e-12
    for alpha, want in derivs.items():
        got = result.derivative(alpha)
        err = np.max(np.abs(got.values - want.values)) / max(np.max(np.abs(want.values)), 1e-30)
        assert err < 1e-9


@pytest.mark.parametrize("n", [64, 128])
def test_third_order_round_trip_manufactured(n):
    spec = grid_2d(n)
    op = third_order_operator()
    u, f, derivs = manufactured_third_order(spec)
    result = solve_constant(op, {(0, 0): f})
    for alpha, want in derivs.items():
        got = result.derivative(alpha)
        err = np.max(np.abs(got.values - want.values)) / max(np.max(np.abs(want.values)), 1e-30)
        assert err < 1e-9


def test_zero_rhs_gives_zero_fields():
    spec = grid_2d(16)
    result = solve_constant(heat_operator(), {(0, 0): GridField.zeros(spec)})
    for fld in result.derivatives.values():
        assert np.max(np.abs(fld.values)) == 0.0
    assert result.residual == 0.0


def test_solve_linearity():
    spec = grid_2d(32)
    rng = np.random.default_rng(9)
    op = heat_operator()

    def band_limited():
        terms = []
        for _ in range(4):
            k = (int(rng.integers(-5, 6)), int(rng.integers(-5, 6)))
            terms.append((k, complex(rng.normal(), rng.normal())))
        return TrigPolynomial(tuple(terms)).evaluate(spec)

    f1, f2 = band_limited(), band_limited()
    a, b = 0.7 - 0.2j, -1.3 + 0.5j
    combo = GridField(spec, a * f1.values + b * f2.values)
    r_combo = solve_constant(op, {(0, 0): combo})
    r1 = solve_constant(op, {(0, 0): f1})
    r2 = solve_constant(op, {(0, 0): f2})
    for alpha in r_combo.derivatives:
        lhs = r_combo.derivative(alpha).values
        rhs = a * r1.derivative(alpha).values + b * r2.derivative(alpha).values
        scale = max(np.max(np.abs(lhs)), 1e-30)
        assert np.max(np.abs(lhs - rhs)) / scale < 1e-12


def test_round_trip_property_random_band_limited():
    spec = grid_2d(32)
    op = heat_operator()
    rng = np.random.default_rng(12)
    terms = []
    for _ in range(6):
        k = (int(rng.integers(-7, 8)), int(rng.integers(-7, 8)))
        if k == (0, 0):
            k = (1, 1)
        terms.append((k, complex(rng.normal(), rng.normal())))
    u = TrigPolynomial(tuple(terms)).evaluate(spec)
    u = GridField(spec, u.values - np.mean(u.values))  # zero-mean representative
    f = rhs_from_manufactured(op, u)
    result = solve_constant(op, f, include_lower=True)
    for alpha in result.derivatives:
        mesh = spec.frequency_mesh(sparse=True)
        want = np.fft.ifftn(Polynomial.i_xi_power(alpha)(mesh) * u.fft())
        got = result.derivative(alpha).values
        scale = max(np.max(np.abs(want)), 1e-30)
        assert np.max(np.abs(got - want)) / scale < 1e-9


def test_include_lower_produces_lower_fields():
    spec = grid_2d(16)
    op = heat_operator()
    _, f, _ = manufactured_heat(spec)
    result = solve_constant(op, {(0, 0): f}, include_lower=True)
    assert MultiIndex((0, 0)) in result.derivatives
    assert MultiIndex((1, 0)) in result.derivatives


def test_dilation_covariance_of_solve():
    # w_R(x) = w(T_R x) solves the rescaled equation with rhs R^m f(T_R x)
    R = 2.0
    op = heat_operator()
    spec1 = GridSpec((64, 64), (2 * np.pi, 2 * np.pi))
    spec2 = GridSpec((64, 64), (2 * np.pi / R, 2 * np.pi / R**2))
    _, f1, derivs1 = manufactured_heat(spec1)
    mesh2 = spec2.coordinate_mesh(sparse=True)
    x2, t2 = mesh2
    f2_vals = R**2 * (-np.sin(R * x2) * np.sin(R**2 * t2) + np.sin(R * x2) * np.cos(R**2 * t2))
    f2 = GridField(spec2, f2_vals.astype(complex) + np.zeros(spec2.sizes))
    r2 = solve_constant(op, {(0, 0): f2})
    for alpha, want1 in derivs1.items():
        weight = R ** MultiIndex(alpha).degree(op.kappa)
        got = r2.derivative(alpha).values
        want = weight * want1.values  # lattice2 maps onto lattice1 under T_R
        scale = max(np.max(np.abs(want)), 1e-30)
        assert np.max(np.abs(got - want)) / scale < 1e-9


# -- parametrix ------------------------------------------------------------------------

def test_parametrix_reduces_to_solve_without_lower_order():
    spec = grid_2d(32)
    op = heat_operator()
    _, f, _ = manufactured_heat(spec)
    smallest = spec.min_nonzero_kappa_radius(op.kappa)
    res_solve = solve_constant(op, {(0, 0): f}, include_lower=True)
    res_par = parametrix_apply(op, {(0, 0): f}, cutoff_radius=smallest * 0.49)
    for alpha in res_solve.derivatives:
        a_vals = res_solve.derivative(alpha).values
        b_vals = res_par.derivative(alpha).values
        scale = max(np.max(np.abs(a_vals)), 1e-30)
        assert np.max(np.abs(a_vals - b_vals)) / scale < 1e-12


def test_parametrix_zero_rhs():
    spec = grid_2d(16)
    op = heat_operator(lower_order={((0, 0), (0, 0)): 1.0})
    res = parametrix_apply(op, {(0, 0): GridField.zeros(spec)}, cutoff_radius=4.0)
    assert res.v.sup_norm() == 0.0


def test_parametrix_residual_bookkeeping():
    spec = grid_2d(32)
    op = heat_operator(lower_order={((0, 0), (0, 0)): 1.0})
    _, f, _ = manufactured_heat(spec)
    res = parametrix_apply(op, {(0, 0): f}, cutoff_radius=2.0)
    assert res.residual < 1e-9
    assert 0.0 <= res.low_frequency_fraction <= 1.0


def test_parametrix_cutoff_precondition():
    spec = grid_2d(16)
    op = heat_operator(lower_order={((0, 0), (0, 0)): -1.0})
    _, f, _ = manufactured_heat(spec)
    with pytest.raises(ContractViolation):
        parametrix_apply(op, {(0, 0): f}, cutoff_radius=1e-3)


def test_parametrix_vanishes_below_half_cutoff():
    spec = grid_2d(32)
    op = heat_operator()
    _, f, _ = manufactured_heat(spec)
    res = parametrix_apply(op, {(0, 0): f}, cutoff_radius=3.0)
    radii = spec.kappa_radius_lattice(op.kappa)
    v_hat = res.v.fft()
    assert np.max(np.abs(v_hat[radii <= 1.5])) < 1e-12 * max(np.max(np.abs(v_hat)), 1e-30)


# -- variable coefficients ----------------------------------------------------------------

def test_neumann_constant_coefficients_single_sweep():
    spec = grid_2d(32)
    pair_op = variable_heat_operator(spec, eps=0.0)
    _, f, derivs = manufactured_heat(spec)
    res = solve_variable_neumann(pair_op, {(0, 0): f})
    assert res.iterations == 1
    assert res.operator_norm_estimate == 0.0
    ref = solve_constant(heat_operator(), {(0, 0): f})
    for alpha in ref.derivatives:
        a_vals = ref.derivative(alpha).values
        b_vals = res.derivative(alpha).values
        scale = max(np.max(np.abs(a_vals)), 1e-30)
        assert np.max(np.abs(a_vals - b_vals)) / scale < 1e-12


@pytest.mark.parametrize("eps", [0.02, 0.05])
def test_neumann_converges_small_oscillation(eps):
    spec = grid_2d(64)
    op = variable_heat_operator(spec, eps)
    _, f, _ = manufactured_heat(spec)
    res = solve_variable_neumann(op, {(0, 0): f}, tol=1e-11)
    assert res.residual <= 1e-8
    assert res.contraction_factors
    assert max(res.contraction_factors) < 0.5
    assert res.operator_norm_estimate < 1.0


def test_neumann_divergence_error_large_oscillation():
    spec = grid_2d(64)
    op = variable_heat_operator(spec, 0.9)
    _, f, _ = manufactured_heat(spec)
    with pytest.raises(DivergenceError):
        solve_variable_neumann(op, {(0, 0): f})


def test_neumann_residual_matches_forward_apply():
    spec = grid_2d(64)
    op = variable_heat_operator(spec, 0.05)
    _, f, _ = manufactured_heat(spec)
    res = solve_variable_neumann(op, {(0, 0): f}, tol=1e-11)
    # defect check through the independent forward application path: build u
    # from its x-derivative spectrum is not available; instead verify the
    # solved fields satisfy the equation pseudospectrally via forward_apply
    # on a reconstructed u (heat: u recoverable from D^(0,1) u by 1/(i tau)).
    mesh = spec.frequency_mesh(sparse=True)
    dxx = res.derivative((2, 0)).values
    a_field = op.coeffs[(MultiIndex((2, 0)), MultiIndex((0, 0)))]
    dt = res.derivative((0, 1)).values
    lhs = dt + a_field.values * dxx  # d_t u - a(x) d_xx u with sign in field
    assert np.max(np.abs(lhs - f.values + np.mean(f.values))) / np.max(np.abs(f.values)) < 1e-7


# -- serialization -----------------------------------------------------------------------

def test_akgf_round_trip(tmp_path):
    spec = GridSpec((8, 16), (2 * np.pi, 4.0))
    rng = np.random.default_rng(3)
    f = GridField(spec, rng.normal(size=spec.sizes) + 1j * rng.normal(size=spec.sizes))
    path = tmp_path / "field.akgf"
    save_akgf(f, path)
    g = load_akgf(path)
    assert g.spec == spec
    assert np.array_equal(g.values, f.values)


def test_akgf_header_layout(tmp_path):
    spec = GridSpec((4, 4), (1.0, 2.0))
    f = GridField.zeros(spec)
    path = tmp_path / "zero.akgf"
    save_akgf(f, path)
    raw = path.read_bytes()
    assert raw[:4] == b"AKGF"
    assert int.from_bytes(raw[4:8], "little") == 1
    header = np.frombuffer(raw[8 : 8 + 8 * 5], dtype="<f8")
    assert header[0] == 2.0  # n
    assert tuple(header[1:3]) == (4.0, 4.0)
    assert tuple(header[3:5]) == (1.0, 2.0)
    assert len(raw) == 8 + 5 * 8 + 16 * 16
