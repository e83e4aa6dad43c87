"""Sparse multivariate polynomials with complex coefficients.

Terms are stored as a dict mapping exponent tuples to coefficients, e.g.
``{(2, 0): 1.0, (0, 1): 1j}`` for  xi^2 + i*tau  in two variables.  All
arithmetic (sum, product, power, axis derivative) is exact on the stored
coefficients; evaluation is numpy-vectorized and accepts either per-axis
broadcastable arrays (a sparse mesh) or a stacked point array whose last
axis is the coordinate axis.
"""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ContractViolation

__all__ = ["Polynomial"]


def _split_axes(xi, n: int) -> list[np.ndarray]:
    if isinstance(xi, (list, tuple)):
        axes = [np.asarray(a) for a in xi]
        if len(axes) != n:
            raise ContractViolation(f"expected {n} coordinate arrays, got {len(axes)}")
        return axes
    arr = np.asarray(xi)
    if arr.ndim == 0 or arr.shape[-1] != n:
        raise ContractViolation(f"point array must have last dimension {n}")
    return [arr[..., l] for l in range(n)]


class Polynomial:
    """Immutable-by-convention sparse polynomial in ``n`` variables."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping[tuple, complex] | None = None):
        self.n = int(n)
        if self.n < 1:
            raise ContractViolation("polynomial needs at least one variable")
        clean: dict[tuple, complex] = {}
        for exps, coeff in (terms or {}).items():
            key = tuple(int(e) for e in exps)
            if len(key) != self.n or any(e < 0 for e in key):
                raise ContractViolation(f"bad exponent tuple {exps!r} for n={self.n}")
            c = complex(coeff)
            if c != 0:
                clean[key] = clean.get(key, 0) + c
        self.terms = {k: v for k, v in clean.items() if v != 0}

    @classmethod
    def constant(cls, n: int, value: complex) -> "Polynomial":
        return cls(n, {(0,) * n: value})

    @classmethod
    def monomial(cls, exponents: Iterable[int], coeff: complex = 1.0) -> "Polynomial":
        exps = tuple(int(e) for e in exponents)
        return cls(len(exps), {exps: coeff})

    @classmethod
    def i_xi_power(cls, exponents: Iterable[int]) -> "Polynomial":
        """(i xi)^alpha = i^|alpha| * xi^alpha."""
        exps = tuple(int(e) for e in exponents)
        return cls(len(exps), {exps: 1j ** sum(exps)})

    # -- algebra -----------------------------------------------------------

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise ContractViolation("polynomial dimension mismatch")
            return other
        return Polynomial.constant(self.n, other)

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return Polynomial(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.n, {k: -v for k, v in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Polynomial":
        other = self._coerce(other)
        out: dict[tuple, complex] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                key = tuple(a + b for a, b in zip(e1, e2))
                out[key] = out.get(key, 0) + c1 * c2
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, int) or k < 0:
            raise ContractViolation("polynomial power must be a non-negative integer")
        out = Polynomial.constant(self.n, 1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def derivative(self, axis: int) -> "Polynomial":
        """Partial derivative along one axis (exact on coefficients)."""
        if not 0 <= axis < self.n:
            raise ContractViolation(f"axis {axis} out of range for n={self.n}")
        out: dict[tuple, complex] = {}
        for exps, coeff in self.terms.items():
            e = exps[axis]
            if e == 0:
                continue
            key = exps[:axis] + (e - 1,) + exps[axis + 1 :]
            out[key] = out.get(key, 0) + coeff * e
        return Polynomial(self.n, out)

    def derivative_multi(self, gamma: Sequence[int]) -> "Polynomial":
        out = self
        for axis, reps in enumerate(gamma):
            for _ in range(int(reps)):
                out = out.derivative(axis)
        return out

    # -- queries -----------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def kappa_degrees(self, kappa) -> set[int]:
        """Weighted degrees present among the terms."""
        kw = tuple(kappa)
        return {sum(e * k for e, k in zip(exps, kw)) for exps in self.terms}

    def allclose(self, other: "Polynomial", rtol: float = 1e-12, atol: float = 0.0) -> bool:
        other = self._coerce(other)
        keys = set(self.terms) | set(other.terms)
        scale = max([abs(v) for v in self.terms.values()] + [abs(v) for v in other.terms.values()] + [0.0])
        for k in keys:
            a = self.terms.get(k, 0)
            b = other.terms.get(k, 0)
            if abs(a - b) > atol + rtol * scale:
                return False
        return True

    # -- evaluation --------------------------------------------------------

    def __call__(self, xi) -> np.ndarray | complex:
        """Evaluate at points.

        ``xi`` is either a sequence of n broadcastable coordinate arrays or
        an array whose last axis indexes the coordinates.  Scalars in, scalar
        out.
        """
        axes = _split_axes(xi, self.n)
        # cache the per-axis powers actually needed
        needed: list[set] = [set() for _ in range(self.n)]
        for exps in self.terms:
            for l, e in enumerate(exps):
                needed[l].add(e)
        powers = [
            {e: (np.asarray(ax, dtype=complex) ** e if e != 1 else np.asarray(ax, dtype=complex))
             for e in need if e != 0}
            for ax, need in zip(axes, needed)
        ]
        out = None
        for exps, coeff in self.terms.items():
            term = np.asarray(coeff, dtype=complex)
            for l, e in enumerate(exps):
                if e != 0:
                    term = term * powers[l][e]
            out = term if out is None else out + term
        if out is None:
            shape = np.broadcast_shapes(*[np.shape(a) for a in axes])
            out = np.zeros(shape, dtype=complex)
        out = np.asarray(out, dtype=complex) + np.zeros(np.broadcast_shapes(*[np.shape(a) for a in axes]), dtype=complex)
        if out.ndim == 0:
            return complex(out)
        return out

    def __repr__(self) -> str:
        if not self.terms:
            return "Polynomial(0)"
        bits = []
        for exps in sorted(self.terms):
            mono = "*".join(f"x{l}^{e}" for l, e in enumerate(exps) if e) or "1"
            bits.append(f"({self.terms[exps]:.6g})*{mono}")
        return "Polynomial(" + " + ".join(bits) + ")"
