"""Shared fixtures: concrete operators and manufactured data used across tests."""
import numpy as np

from anisospec.grids import GridField, GridSpec, TrigPolynomial
from anisospec.indexing import IndexSetPair
from anisospec.symbols import OperatorSpec

TWO_PI = 2.0 * np.pi


def heat_operator(lower_order=None):
    """d_t - d_xx on (x, t): symbol xi^2 + i*tau, kappa=(1,2), m=2."""
    pair = IndexSetPair.from_b([(0, 0)], 2, (1, 2))
    return OperatorSpec(pair, {((2, 0), (0, 0)): -1.0, ((0, 1), (0, 0)): 1.0},
                        lower_order=lower_order)


def third_order_operator():
    """d_t^2 - d_x^3 on (x, t): symbol -tau^2 + i*xi^3, kappa=(2,3), m=6."""
    pair = IndexSetPair.from_b([(0, 0)], 6, (2, 3))
    return OperatorSpec(pair, {((0, 2), (0, 0)): 1.0, ((3, 0), (0, 0)): -1.0})


def degenerate_operator():
    """xi^2 alone with kappa=(1,2): vanishes at (0, tau) on the unit sphere."""
    pair = IndexSetPair.from_b([(0, 0)], 2, (1, 2))
    return OperatorSpec(pair, {((2, 0), (0, 0)): -1.0})


def laplacian_operator(n=2):
    pair = IndexSetPair.from_b([(0,) * n], 2, (1,) * n)
    coeffs = {}
    for a in pair.A:
        if max(a) == 2:
            coeffs[(a, (0,) * n)] = -1.0
    return OperatorSpec(pair, coeffs)


def variable_heat_operator(spec: GridSpec, eps: float):
    """Heat operator with x-dependent diffusivity a(x) = 1 + eps*sin(x)."""
    pair = IndexSetPair.from_b([(0, 0)], 2, (1, 2))
    mesh = spec.coordinate_mesh(sparse=True)
    a_field = GridField(spec, np.broadcast_to(
        -(1.0 + eps * np.sin(mesh[0])), spec.sizes).astype(complex))
    return OperatorSpec(pair, {((2, 0), (0, 0)): a_field, ((0, 1), (0, 0)): 1.0})


def grid_2d(n=64, periods=(TWO_PI, TWO_PI)):
    return GridSpec((n, n), periods)


def manufactured_heat(spec: GridSpec):
    """u = sin(x)cos(t), with f = d_t u - d_xx u known in closed form."""
    mesh = spec.coordinate_mesh(sparse=True)
    x, t = mesh
    u = GridField(spec, (np.sin(x) * np.cos(t)).astype(complex) + np.zeros(spec.sizes))
    f = GridField(spec, (-np.sin(x) * np.sin(t) + np.sin(x) * np.cos(t)).astype(complex)
                  + np.zeros(spec.sizes))
    d_xx = GridField(spec, (-np.sin(x) * np.cos(t)).astype(complex) + np.zeros(spec.sizes))
    d_t = GridField(spec, (-np.sin(x) * np.sin(t)).astype(complex) + np.zeros(spec.sizes))
    return u, f, {(2, 0): d_xx, (0, 1): d_t}


def manufactured_third_order(spec: GridSpec):
    """u = sin(2x)sin(3t) for the third-order operator; all fields closed form."""
    mesh = spec.coordinate_mesh(sparse=True)
    x, t = mesh
    base = np.zeros(spec.sizes)
    u = GridField(spec, (np.sin(2 * x) * np.sin(3 * t)).astype(complex) + base)
    # f = d_t^2 u - d_x^3 u = -9 sin(2x)sin(3t) + 8 cos(2x)sin(3t)
    f = GridField(spec, ((-9.0 * np.sin(2 * x) + 8.0 * np.cos(2 * x)) * np.sin(3 * t)).astype(complex) + base)
    d_x3 = GridField(spec, (-8.0 * np.cos(2 * x) * np.sin(3 * t)).astype(complex) + base)
    d_t2 = GridField(spec, (-9.0 * np.sin(2 * x) * np.sin(3 * t)).astype(complex) + base)
    return u, f, {(3, 0): d_x3, (0, 2): d_t2}


def rough_forcing(spec: GridSpec, x_octaves=5, t_octaves=3, seed=2):
    """Band-limited two-ladder field whose oscillation behaves like rho^(1/2)."""
    rng = np.random.default_rng(seed)
    terms = []
    for j in range(x_octaves):
        k = 2**j
        phase = np.exp(1j * rng.uniform(0, TWO_PI))
        terms.append(((k, 0), 0.5 * phase * 2.0 ** (-j / 2.0)))
        terms.append(((-k, 0), 0.5 * np.conj(phase) * 2.0 ** (-j / 2.0)))
    for j in range(t_octaves):
        k = 4**j
        phase = np.exp(1j * rng.uniform(0, TWO_PI))
        terms.append(((0, k), 0.5 * phase * 2.0 ** (-j / 2.0)))
        terms.append(((0, -k), 0.5 * np.conj(phase) * 2.0 ** (-j / 2.0)))
    return TrigPolynomial(tuple(terms), real=True).evaluate(spec)
