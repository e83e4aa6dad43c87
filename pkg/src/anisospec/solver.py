"""FFT application of Fourier multipliers and equation solving on the torus.

Equations  P u = sum_beta D^beta f_beta  with a certified constant-coefficient
principal part are solved exactly on the frequency lattice: each top-order
derivative is recovered through the multiplier (i xi)^(alpha+beta) / p(xi),
with the zero mode projected out (the only polynomial ambiguity surviving on
the torus is the constant).  A lower-order part is handled by the cutoff
parametrix (1 - psi(|xi|/c)) / (p + h), which leaves low frequencies
untouched.  Variable coefficients with small oscillation go through the
frozen-coefficient fixed-point iteration: the difference (a(x0) - a(x)) D^a u
is moved to the right-hand side and the constant solve is repeated until the
derivative fields stop moving.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dyadic import BumpProfile, LowFrequencyCutoff
from .exceptions import (
    ContractViolation,
    DivergenceError,
    SingularMultiplierError,
    ToleranceError,
)
from .grids import GridField, GridSpec
from .indexing import DEFAULT_SEED, MultiIndex, as_multi_index
from .polynomials import Polynomial
from .symbols import OperatorSpec, RationalSymbol, perturbation_radius

__all__ = [
    "SolveResult",
    "ParametrixResult",
    "VariableSolveResult",
    "apply_multiplier",
    "forward_apply",
    "rhs_from_manufactured",
    "solve_constant",
    "parametrix_apply",
    "solve_variable_neumann",
]

_DC = 0  # flat index of the zero frequency


@dataclass(frozen=True)
class SolveResult:
    """Derivative fields keyed by multi-index, plus solve bookkeeping."""

    derivatives: dict
    dc_policy_applied: bool
    residual: float

    def derivative(self, alpha) -> GridField:
        return self.derivatives[as_multi_index(alpha)]


@dataclass(frozen=True)
class ParametrixResult:
    v: GridField
    derivatives: dict
    residual: float
    low_frequency_fraction: float
    cutoff_radius: float

    def derivative(self, alpha) -> GridField:
        return self.derivatives[as_multi_index(alpha)]


@dataclass(frozen=True)
class VariableSolveResult(SolveResult):
    freeze_point: tuple
    iterations: int
    contraction_factors: tuple
    operator_norm_estimate: float


def _multiplier_lattice(multiplier, spec: GridSpec) -> np.ndarray:
    mesh = spec.frequency_mesh(sparse=True)
    if isinstance(multiplier, RationalSymbol):
        vals = multiplier(mesh)
    elif callable(multiplier):
        vals = multiplier(mesh)
    else:
        vals = np.asarray(multiplier, dtype=complex)
        if vals.shape != spec.sizes:
            raise ContractViolation("multiplier array shape does not match grid")
    vals = np.asarray(vals, dtype=complex) + np.zeros(spec.sizes, dtype=complex)
    return vals


def _check_off_dc_finite(vals: np.ndarray, spec: GridSpec) -> None:
    bad = ~np.isfinite(vals)
    bad.reshape(-1)[_DC] = False
    if np.any(bad):
        idx = np.unravel_index(int(np.argmax(bad)), spec.sizes)
        freq = tuple(ax[i] for ax, i in zip(spec.frequency_axes(), idx))
        raise SingularMultiplierError(
            f"multiplier singular at nonzero lattice frequency {freq}", frequency=freq
        )


def apply_multiplier(multiplier, f: GridField, dc_policy: str = "zero") -> GridField:
    """(m * fhat)-inverse with explicit zero-mode policy.

    ``zero`` projects the mean out of the output, ``keep`` passes the input
    mean through untouched, ``error`` demands a finite multiplier value at
    the zero frequency and applies it.
    """
    if dc_policy not in ("zero", "keep", "error"):
        raise ContractViolation(f"unknown dc policy {dc_policy!r}")
    spec = f.spec
    vals = _multiplier_lattice(multiplier, spec)
    _check_off_dc_finite(vals, spec)
    spectrum = f.fft()
    flat = vals.reshape(-1)
    if dc_policy == "error":
        if not np.isfinite(flat[_DC]):
            raise SingularMultiplierError(
                "multiplier singular at the zero frequency", frequency=(0.0,) * spec.n
            )
    out = spectrum * np.where(np.isfinite(vals), vals, 0.0)
    if dc_policy == "zero":
        out.reshape(-1)[_DC] = 0.0
    elif dc_policy == "keep":
        out.reshape(-1)[_DC] = spectrum.reshape(-1)[_DC]
    return GridField.from_spectrum(spec, out)


def _rhs_spectrum(op: OperatorSpec, f: Mapping, spec: GridSpec) -> np.ndarray:
    """S(xi) = sum_beta (i xi)^beta fhat_beta."""
    mesh = spec.frequency_mesh(sparse=True)
    S = np.zeros(spec.sizes, dtype=complex)
    for beta, field in sorted(f.items(), key=lambda kv: tuple(kv[0])):
        beta = as_multi_index(beta)
        if beta not in op.B:
            raise ContractViolation(f"rhs key {tuple(beta)} is not in B")
        if field.spec != spec:
            raise ContractViolation("all rhs fields must share one grid")
        S += Polynomial.i_xi_power(beta)(mesh) * field.fft()
    return S


def forward_apply(op: OperatorSpec, u: GridField, include_lower: bool = True) -> GridField:
    """P u (plus the lower-order part when present), evaluated pseudospectrally."""
    spec = u.spec
    mesh = spec.frequency_mesh(sparse=True)
    u_hat = u.fft()
    out = np.zeros(spec.sizes, dtype=complex)
    for (a, b), value in op.sorted_principal() + op.sorted_lower():
        if not include_lower and (a, b) in op.lower_order:
            continue
        if isinstance(value, GridField):
            if value.spec != spec:
                raise ContractViolation("coefficient grid does not match field grid")
            da_u = np.fft.ifftn(Polynomial.i_xi_power(a)(mesh) * u_hat)
            term = np.fft.fftn(value.values * da_u) * Polynomial.i_xi_power(b)(mesh)
        else:
            term = value * Polynomial.i_xi_power(a + b)(mesh) * u_hat
        out += term
    return GridField.from_spectrum(spec, out)


def rhs_from_manufactured(op: OperatorSpec, u: GridField) -> dict:
    """Per-beta right-hand sides f_beta = sum_alpha a_{alpha beta} D^alpha u."""
    spec = u.spec
    mesh = spec.frequency_mesh(sparse=True)
    u_hat = u.fft()
    out: dict = {}
    for (a, b), value in op.sorted_principal():
        da_u = np.fft.ifftn(Polynomial.i_xi_power(a)(mesh) * u_hat)
        if isinstance(value, GridField):
            contrib = value.values * da_u
        else:
            contrib = value * da_u
        if b in out:
            out[b] = GridField(spec, out[b].values + contrib)
        else:
            out[b] = GridField(spec, contrib)
    return out


def solve_constant(
    op: OperatorSpec,
    f: Mapping,
    include_lower: bool = False,
    requested: Sequence | None = None,
) -> SolveResult:
    """Recover the derivative fields of  P u = sum D^beta f_beta  spectrally.

    The zero mode is projected out of every output.  ``include_lower``
    additionally returns D^gamma u for every gamma in the lower index set;
    ``requested`` restricts/extends the index list explicitly.  The residual
    is the relative frequency-space defect of the solved equation.
    """
    if not op.constant_coefficient:
        raise ContractViolation("solve_constant requires constant coefficients")
    if op.lower_order:
        raise ContractViolation("principal-only solve; use parametrix_apply for lower-order terms")
    if not f:
        raise ContractViolation("rhs mapping is empty")
    spec = next(iter(f.values())).spec
    S = _rhs_spectrum(op, f, spec)
    mesh = spec.frequency_mesh(sparse=True)
    p_vals = op.principal_symbol()(mesh) + np.zeros(spec.sizes, dtype=complex)
    flat_p = p_vals.reshape(-1)
    zero_off_dc = (flat_p[1:] == 0)
    if np.any(zero_off_dc):
        idx = np.unravel_index(int(np.argmax(zero_off_dc)) + 1, spec.sizes)
        freq = tuple(ax[i] for ax, i in zip(spec.frequency_axes(), idx))
        raise SingularMultiplierError(
            f"symbol vanishes at nonzero lattice frequency {freq}", frequency=freq
        )
    u_hat = np.zeros(spec.sizes, dtype=complex)
    flat_u = u_hat.reshape(-1)
    flat_s = S.reshape(-1)
    flat_u[1:] = flat_s[1:] / flat_p[1:]
    if requested is None:
        indices = sorted(op.A) + (sorted(op.index_pair.lower_set() - op.A) if include_lower else [])
    else:
        indices = [as_multi_index(a) for a in requested]
    derivatives = {}
    for alpha in indices:
        spec_alpha = Polynomial.i_xi_power(alpha)(mesh) * u_hat
        derivatives[alpha] = GridField.from_spectrum(spec, spec_alpha)
    s_norm = float(np.linalg.norm(flat_s[1:]))
    defect = float(np.linalg.norm(flat_p[1:] * flat_u[1:] - flat_s[1:]))
    residual = defect / s_norm if s_norm > 0 else 0.0
    return SolveResult(derivatives=derivatives, dc_policy_applied=True, residual=residual)


def parametrix_apply(
    op: OperatorSpec,
    f: Mapping,
    cutoff_radius: float,
    bump: BumpProfile | None = None,
) -> ParametrixResult:
    """Apply the cutoff approximate inverse (1 - psi)/(p + h) to the data.

    Requires ``cutoff_radius`` at least twice the perturbation radius, so the
    gated denominator is bounded below.  Low frequencies (inside half the
    cutoff) are untouched: the returned ``low_frequency_fraction`` reports
    the share of the data living there.
    """
    if not op.constant_coefficient:
        raise ContractViolation("parametrix requires constant coefficients")
    if not f:
        raise ContractViolation("rhs mapping is empty")
    radius_floor = 2.0 * perturbation_radius(op)
    if cutoff_radius < radius_floor:
        raise ContractViolation(
            f"cutoff radius {cutoff_radius} below twice the perturbation radius {radius_floor / 2}"
        )
    spec = next(iter(f.values())).spec
    S = _rhs_spectrum(op, f, spec)
    mesh = spec.frequency_mesh(sparse=True)
    cut = LowFrequencyCutoff(radius=cutoff_radius, kappa=op.kappa,
                             bump=bump if bump is not None else BumpProfile())
    factor = np.asarray(cut.factor_from_radius(spec.kappa_radius_lattice(op.kappa)), dtype=float)
    q = op.full_symbol()(mesh) + np.zeros(spec.sizes, dtype=complex)
    live = factor > 0.0
    if np.any(live & (q == 0)):
        idx = np.unravel_index(int(np.argmax(live & (q == 0))), spec.sizes)
        freq = tuple(ax[i] for ax, i in zip(spec.frequency_axes(), idx))
        raise SingularMultiplierError(
            f"perturbed symbol vanishes inside the active band at {freq}", frequency=freq
        )
    mult = np.zeros(spec.sizes, dtype=complex)
    mult[live] = factor[live] / q[live]
    v_hat = mult * S
    v = GridField.from_spectrum(spec, v_hat)
    derivatives = {}
    for alpha in sorted(op.index_pair.lower_set()):
        derivatives[alpha] = GridField.from_spectrum(spec, Polynomial.i_xi_power(alpha)(mesh) * v_hat)
    s_norm = float(np.linalg.norm(S))
    defect = float(np.linalg.norm(q * v_hat - factor * S))
    low_frac = float(np.linalg.norm((1.0 - factor) * S)) / s_norm if s_norm > 0 else 0.0
    residual = defect / s_norm if s_norm > 0 else 0.0
    return ParametrixResult(v=v, derivatives=derivatives, residual=residual,
                            low_frequency_fraction=low_frac, cutoff_radius=cutoff_radius)


def _coefficient_oscillations(op: OperatorSpec, x0_index: tuple) -> dict:
    """sup_x |a(x) - a(x0)| per coefficient (zero for constants)."""
    out = {}
    for key, value in op.coeffs.items():
        if isinstance(value, GridField):
            out[key] = float(np.max(np.abs(value.values - value.values[x0_index])))
        else:
            out[key] = 0.0
    return out


def _select_freeze_index(op: OperatorSpec, seed: int = DEFAULT_SEED) -> tuple:
    """Grid point minimizing the total sup-oscillation of the coefficients."""
    spec = op.grid
    fields = [v.values.reshape(-1) for v in op.coeffs.values() if isinstance(v, GridField)]
    npts = spec.point_count
    if npts <= 4096:
        candidates = np.arange(npts)
    else:
        rng = np.random.default_rng(seed)
        candidates = np.unique(rng.integers(0, npts, size=1024))
    total = np.zeros(len(candidates))
    for vals in fields:
        for start in range(0, len(candidates), 256):
            block = candidates[start : start + 256]
            total[start : start + 256] += np.max(
                np.abs(vals[None, :] - vals[block, None]), axis=1
            )
    best = int(candidates[int(np.argmin(total))])
    return tuple(int(i) for i in np.unravel_index(best, spec.sizes))


def _freeze(op: OperatorSpec, x0_index: tuple) -> OperatorSpec:
    frozen = {}
    for key, value in op.coeffs.items():
        frozen[key] = complex(value.values[x0_index]) if isinstance(value, GridField) else value
    return OperatorSpec(op.index_pair, frozen)


def solve_variable_neumann(
    op: OperatorSpec,
    f: Mapping,
    x0: Sequence[float] | None = None,
    max_iters: int = 50,
    tol: float = 1e-10,
) -> VariableSolveResult:
    """Fixed-point solve with coefficients frozen at x0.

    Each sweep re-solves the frozen equation with the coefficient mismatch
    moved to the right-hand side.  Raises DivergenceError when the upfront
    operator-norm estimate (total oscillation times the summed multiplier
    sups) reaches 1, or when the measured contraction factor is >= 1 on
    three consecutive sweeps.
    """
    if op.grid is None:
        raise ContractViolation("solve_variable_neumann expects field coefficients"
                                " (use solve_constant otherwise)")
    if op.lower_order:
        raise ContractViolation("variable solve supports principal parts only")
    spec = op.grid
    for field in f.values():
        if field.spec != spec:
            raise ContractViolation("rhs grid does not match coefficient grid")
    x0_index = spec.nearest_index(x0) if x0 is not None else _select_freeze_index(op)
    frozen = _freeze(op, x0_index)
    oscillations = _coefficient_oscillations(op, x0_index)

    mesh = spec.frequency_mesh(sparse=True)
    p0 = frozen.principal_symbol()(mesh) + np.zeros(spec.sizes, dtype=complex)
    flat_p0 = p0.reshape(-1)
    if np.any(flat_p0[1:] == 0):
        raise SingularMultiplierError("frozen symbol vanishes on the lattice")
    mult_sups = {}
    for (a, b) in op.coeffs:
        mono = Polynomial.i_xi_power(a + b)(mesh) + np.zeros(spec.sizes, dtype=complex)
        mult_sups[(a, b)] = float(np.max(np.abs(mono.reshape(-1)[1:] / flat_p0[1:])))
    estimate = sum(oscillations.values()) * sum(mult_sups.values())
    if estimate >= 1.0:
        raise DivergenceError(
            f"estimated contraction bound {estimate:.3g} >= 1; coefficient oscillation too large",
            estimate=estimate,
        )

    # cached pieces of the frozen solve
    alphas = sorted(op.A)
    mono_alpha = {a: Polynomial.i_xi_power(a)(mesh) + np.zeros(spec.sizes, dtype=complex)
                  for a in alphas}
    mono_beta = {}
    for (_, b) in op.coeffs:
        if b not in mono_beta:
            mono_beta[b] = Polynomial.i_xi_power(b)(mesh) + np.zeros(spec.sizes, dtype=complex)
    S0 = _rhs_spectrum(op, f, spec)
    deltas_const = {
        key: (frozen.coeffs[key] - (value.values if isinstance(value, GridField) else value))
        for key, value in op.coeffs.items()
    }
    perfectly_frozen = all(
        np.max(np.abs(np.asarray(d))) == 0.0 for d in deltas_const.values()
    )

    def frozen_solve(S: np.ndarray) -> dict:
        u_hat = np.zeros(spec.sizes, dtype=complex)
        u_hat.reshape(-1)[1:] = S.reshape(-1)[1:] / flat_p0[1:]
        return {a: np.fft.ifftn(mono_alpha[a] * u_hat) for a in alphas}

    current = frozen_solve(S0)
    factors: list[float] = []
    iterations = 1
    if not perfectly_frozen:
        prev_delta = None
        expanding = 0
        for iterations in range(2, max_iters + 2):
            S = S0.copy()
            for (a, b), gap in deltas_const.items():
                if isinstance(gap, np.ndarray) or gap != 0:
                    S += mono_beta[b] * np.fft.fftn(gap * current[a])
            new = frozen_solve(S)
            delta = max(np.max(np.abs(new[a] - current[a])) for a in alphas)
            scale = max(max(np.max(np.abs(new[a])) for a in alphas), 1e-300)
            current = new
            if prev_delta is not None and prev_delta > 0:
                factor = delta / prev_delta
                factors.append(factor)
                expanding = expanding + 1 if factor >= 1.0 else 0
                if expanding >= 3:
                    raise DivergenceError(
                        "contraction factor >= 1 on three consecutive sweeps",
                        trace=factors,
                        estimate=estimate,
                    )
            prev_delta = delta
            if delta / scale < tol:
                break
        else:
            raise ToleranceError(
                f"fixed-point iteration did not converge in {max_iters} sweeps"
            )

    derivatives = {a: GridField(spec, vals) for a, vals in current.items()}
    # pseudospectral defect of the full variable equation
    g_hat = np.zeros(spec.sizes, dtype=complex)
    for (a, b), value in op.sorted_principal():
        coeff_vals = value.values if isinstance(value, GridField) else value
        g_hat += mono_beta[b] * np.fft.fftn(coeff_vals * current[a])
    s_norm = float(np.linalg.norm(S0.reshape(-1)[1:]))
    defect = float(np.linalg.norm((g_hat - S0).reshape(-1)[1:]))
    residual = defect / s_norm if s_norm > 0 else 0.0
    return VariableSolveResult(
        derivatives=derivatives,
        dc_policy_applied=True,
        residual=residual,
        freeze_point=spec.point_at(x0_index),
        iterations=iterations,
        contraction_factors=tuple(factors),
        operator_norm_estimate=estimate,
    )
