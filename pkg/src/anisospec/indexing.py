"""Multi-index arithmetic and anisotropic dilation geometry.

A weight vector kappa = (k_1, ..., k_n) of positive integers induces

    |x|_kappa   = sqrt(sum_l |x_l|^(2/k_l))          (anisotropic distance)
    T_r x       = (r^(k_1) x_1, ..., r^(k_n) x_n)    (anisotropic dilation)

with |T_r x|_kappa = r |x|_kappa and |B_r| = r^(|kappa|) |B_1|, where
|kappa| = sum_l k_l plays the role of a homogeneous dimension.  The index
sets attached to an operator of order m are handled here as well: given a
finite set B of multi-indices, the completion is every alpha with
(alpha + beta) . kappa = m for all beta in B, and the lower set collects
every gamma with (gamma + beta) . kappa <= m.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ContractViolation

__all__ = [
    "KappaWeight",
    "MultiIndex",
    "IndexSetPair",
    "kappa_distance",
    "kappa_norm",
    "dilate",
    "b_completion",
    "lower_index_set",
    "unit_ball_volume",
    "ball_volume",
    "quasi_triangle_constant",
    "DEFAULT_SEED",
]

DEFAULT_SEED = 20260810


class KappaWeight(tuple):
    """Anisotropy weights: a tuple of positive integers, one per axis."""

    def __new__(cls, weights: Iterable[int]) -> "KappaWeight":
        orig = tuple(weights)
        ws = tuple(int(w) for w in orig)
        if len(ws) == 0:
            raise ContractViolation("kappa weights must be nonempty")
        for w, o in zip(ws, orig):
            if w < 1 or w != o:
                raise ContractViolation(f"kappa weights must be positive integers, got {orig!r}")
        return super().__new__(cls, ws)

    @property
    def n(self) -> int:
        return len(self)

    @property
    def total(self) -> int:
        """The homogeneous dimension |kappa| = sum of the weights."""
        return sum(self)

    @property
    def min_weight(self) -> int:
        return min(self)


class MultiIndex(tuple):
    """A tuple of non-negative integer exponents.

    Note: ``+`` is elementwise addition (index composition), not tuple
    concatenation.
    """

    def __new__(cls, exponents: Iterable[int]) -> "MultiIndex":
        orig = tuple(exponents)
        exps = tuple(int(e) for e in orig)
        if len(exps) == 0:
            raise ContractViolation("multi-index must be nonempty")
        for e, o in zip(exps, orig):
            if e < 0 or e != o:
                raise ContractViolation(f"multi-index entries must be non-negative integers, got {orig!r}")
        return super().__new__(cls, exps)

    @property
    def order(self) -> int:
        """Total order |alpha| = sum of the exponents."""
        return sum(self)

    def degree(self, kappa: KappaWeight) -> int:
        """Weighted degree alpha . kappa."""
        if len(kappa) != len(self):
            raise ContractViolation(f"dimension mismatch: index {self} vs kappa {tuple(kappa)}")
        return sum(a * k for a, k in zip(self, kappa))

    @property
    def factorial(self) -> int:
        out = 1
        for e in self:
            for j in range(2, e + 1):
                out *= j
        return out

    def __add__(self, other):  # type: ignore[override]
        if len(other) != len(self):
            raise ContractViolation("multi-index dimension mismatch in addition")
        return MultiIndex(tuple(a + b for a, b in zip(self, other)))


def as_multi_index(value) -> MultiIndex:
    return value if isinstance(value, MultiIndex) else MultiIndex(value)


def as_kappa(value) -> KappaWeight:
    return value if isinstance(value, KappaWeight) else KappaWeight(value)


def _check_dim(name: str, arr: np.ndarray, n: int) -> None:
    if arr.shape[-1] != n:
        raise ContractViolation(f"{name} has dimension {arr.shape[-1]}, expected {n}")


def kappa_distance(x, y, kappa) -> float | np.ndarray:
    """Anisotropic distance sqrt(sum_l |x_l - y_l|^(2/k_l)).

    ``x`` and ``y`` may carry leading batch dimensions; the last axis is the
    coordinate axis.  Symmetric, zero exactly on the diagonal, and exactly
    covariant under dilations: d(T_r x, T_r y) = r d(x, y).
    """
    kappa = as_kappa(kappa)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_dim("x", x, kappa.n)
    _check_dim("y", y, kappa.n)
    exps = 2.0 / np.asarray(kappa, dtype=float)
    s = np.sum(np.abs(x - y) ** exps, axis=-1)
    return np.sqrt(s)


def kappa_norm(x, kappa) -> float | np.ndarray:
    """|x|_kappa, the distance from the origin."""
    kappa = as_kappa(kappa)
    x = np.asarray(x, dtype=float)
    return kappa_distance(x, np.zeros(kappa.n), kappa)


def dilate(r: float, x, kappa) -> np.ndarray:
    """Anisotropic dilation T_r x = (r^(k_l) x_l)_l for r > 0."""
    kappa = as_kappa(kappa)
    if not r > 0:
        raise ContractViolation(f"dilation scale must be positive, got {r}")
    x = np.asarray(x, dtype=float)
    _check_dim("x", x, kappa.n)
    scales = np.asarray([float(r) ** k for k in kappa])
    return x * scales


def _degree_lattice(bound_per_axis: Sequence[int], kappa: KappaWeight):
    """All exponent tuples with alpha_l <= bound_per_axis[l], plus degrees."""
    axes = [np.arange(b + 1) for b in bound_per_axis]
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    degrees = flat @ np.asarray(kappa, dtype=int)
    return flat, degrees


def b_completion(B, m: int, kappa) -> frozenset[MultiIndex]:
    """All alpha with (alpha + beta) . kappa = m for every beta in B.

    Finite because every weight is >= 1 (alpha_l <= m / k_l componentwise).
    If some beta already has degree above m the result is empty and a
    warning is emitted.
    """
    kappa = as_kappa(kappa)
    m = int(m)
    bset = [as_multi_index(b) for b in B]
    if not bset:
        raise ContractViolation("B must be nonempty")
    degs = [b.degree(kappa) for b in bset]
    if any(d > m for d in degs):
        warnings.warn(
            f"some beta in B has weighted degree above m={m}; completion is empty",
            RuntimeWarning,
            stacklevel=2,
        )
        return frozenset()
    if len(set(degs)) > 1:
        # (alpha+beta).kappa = m for all beta forces all beta degrees equal.
        return frozenset()
    target = m - degs[0]
    flat, degrees = _degree_lattice([m // k for k in kappa], kappa)
    hits = flat[degrees == target]
    return frozenset(MultiIndex(tuple(row)) for row in hits)


def lower_index_set(B, m: int, kappa) -> frozenset[MultiIndex]:
    """All gamma with (gamma + beta) . kappa <= m for every beta in B."""
    kappa = as_kappa(kappa)
    m = int(m)
    bset = [as_multi_index(b) for b in B]
    if not bset:
        raise ContractViolation("B must be nonempty")
    degs = [b.degree(kappa) for b in bset]
    if any(d > m for d in degs):
        warnings.warn(
            f"some beta in B has weighted degree above m={m}; lower set is empty",
            RuntimeWarning,
            stacklevel=2,
        )
        return frozenset()
    budget = m - max(degs)
    flat, degrees = _degree_lattice([max(budget, 0) // k for k in kappa], kappa)
    hits = flat[degrees <= budget]
    return frozenset(MultiIndex(tuple(row)) for row in hits)


@dataclass(frozen=True)
class IndexSetPair:
    """A completed pair (A, B) of index sets for an operator of order m.

    Invariants enforced at construction: every (alpha + beta) has weighted
    degree m, A equals the completion of B, and both sets are nonempty.
    """

    A: frozenset
    B: frozenset
    m: int
    kappa: KappaWeight

    def __post_init__(self):
        object.__setattr__(self, "kappa", as_kappa(self.kappa))
        object.__setattr__(self, "A", frozenset(as_multi_index(a) for a in self.A))
        object.__setattr__(self, "B", frozenset(as_multi_index(b) for b in self.B))
        if self.m < 1:
            raise ContractViolation(f"order m must be a positive integer, got {self.m}")
        if not self.A or not self.B:
            raise ContractViolation("index sets A and B must be nonempty")
        for a in self.A:
            for b in self.B:
                if (a + b).degree(self.kappa) != self.m:
                    raise ContractViolation(
                        f"(alpha+beta).kappa != m for alpha={a}, beta={b}, m={self.m}"
                    )
        if self.A != b_completion(self.B, self.m, self.kappa):
            raise ContractViolation("A is not the completion of B at order m")

    @classmethod
    def from_b(cls, B, m: int, kappa) -> "IndexSetPair":
        kappa = as_kappa(kappa)
        A = b_completion(B, m, kappa)
        if not A:
            raise ContractViolation("completion of B is empty; no operator exists at this order")
        return cls(A=A, B=frozenset(as_multi_index(b) for b in B), m=int(m), kappa=kappa)

    def lower_set(self) -> frozenset[MultiIndex]:
        """Gamma with (gamma + beta) . kappa <= m for all beta (contains A)."""
        return lower_index_set(self.B, self.m, self.kappa)

    @property
    def n(self) -> int:
        return self.kappa.n


def _default_resolution(n: int) -> int:
    if n <= 2:
        return 1024
    if n == 3:
        return 256
    return 64


@lru_cache(maxsize=64)
def _unit_ball_quadrature(weights: tuple, resolution: int) -> float:
    # Midpoint tensor quadrature of the indicator of sum |x_l|^(2/k_l) <= 1
    # over [-1, 1]^n, chunked along the first axis to bound memory.
    n = len(weights)
    exps = [2.0 / k for k in weights]
    h = 2.0 / resolution
    mids = -1.0 + (np.arange(resolution) + 0.5) * h
    axis_terms = [np.abs(mids) ** e for e in exps]
    if n == 1:
        count = int(np.count_nonzero(axis_terms[0] <= 1.0))
        return count * h
    tail = axis_terms[1]
    for t in axis_terms[2:]:
        tail = tail[..., None] + t  # broadcasted partial sums over axes 2..n
    # tail has shape (resolution,)*(n-1) after the loop above
    total = 0
    for first in axis_terms[0]:
        total += int(np.count_nonzero(first + tail <= 1.0))
    return total * h**n


def unit_ball_volume(kappa, resolution: int | None = None) -> float:
    """Volume of the unit anisotropic ball by midpoint tensor quadrature.

    The result is cached per (kappa, resolution).  Use
    ``unit_ball_volume_error`` for a resolution-doubling error estimate.
    """
    kappa = as_kappa(kappa)
    res = int(resolution) if resolution is not None else _default_resolution(kappa.n)
    if res < 2:
        raise ContractViolation("quadrature resolution must be >= 2")
    return _unit_ball_quadrature(tuple(kappa), res)


def unit_ball_volume_error(kappa, resolution: int | None = None) -> float:
    """Crude error estimate: change between this and half resolution."""
    kappa = as_kappa(kappa)
    res = int(resolution) if resolution is not None else _default_resolution(kappa.n)
    return abs(unit_ball_volume(kappa, res) - unit_ball_volume(kappa, max(res // 2, 2)))


def ball_volume(r: float, kappa, resolution: int | None = None) -> float:
    """|B_r| = r^(|kappa|) * |B_1|; the scaling in r is exact by construction."""
    kappa = as_kappa(kappa)
    if not r > 0:
        raise ContractViolation(f"ball radius must be positive, got {r}")
    return float(r) ** kappa.total * unit_ball_volume(kappa, resolution)


def quasi_triangle_constant(kappa, samples: int = 4096, seed: int = DEFAULT_SEED) -> float:
    """Empirical quasi-metric constant max d(x,z) / (d(x,y) + d(y,z)).

    Sampled over random triples plus degenerate triples with y = x (which pin
    the supremum at 1); deterministic for a fixed seed.  For these weights the
    distance is in fact a metric, so the value is 1 up to rounding.
    """
    kappa = as_kappa(kappa)
    if samples < 3:
        raise ContractViolation("need at least 3 sample triples")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(samples, 3, kappa.n))
    # degenerate triples y = x attain ratio exactly 1
    k = max(samples // 8, 1)
    pts[:k, 1, :] = pts[:k, 0, :]
    dxz = kappa_distance(pts[:, 0, :], pts[:, 2, :], kappa)
    dxy = kappa_distance(pts[:, 0, :], pts[:, 1, :], kappa)
    dyz = kappa_distance(pts[:, 1, :], pts[:, 2, :], kappa)
    denom = dxy + dyz
    mask = denom > 0
    return float(np.max(dxz[mask] / denom[mask]))


def enumerate_indices_up_to(m: int, kappa) -> list[MultiIndex]:
    """Every multi-index with weighted degree <= m (utility for searches)."""
    kappa = as_kappa(kappa)
    out = []
    for combo in product(*[range(m // k + 1) for k in kappa]):
        idx = MultiIndex(combo)
        if idx.degree(kappa) <= m:
            out.append(idx)
    return out
