"""Truncated multivariate power series with complex coefficients.

Coefficients are stored densely in graded-lexicographic order: all
multi-indices of total degree 0 first, then degree 1, and so on. Within a
degree the first variable carries the highest exponent first, so for D=2
the order is (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...

Because the order is graded, ``IndexSet(D, m)`` is a prefix of
``IndexSet(D, M)`` for every ``m <= M``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

_COUNT_LIMIT = 2**63 - 1


def _check_dims(D: int, M: int) -> None:
    if D < 1:
        raise ValueError(f"dimension count must be >= 1, got {D}")
    if M < 0:
        raise ValueError(f"order must be >= 0, got {M}")


def n_col(D: int, M: int) -> int:
    """Number of monomials of total degree exactly ``M`` in ``D`` variables."""
    _check_dims(D, M)
    count = math.comb(M + D - 1, M)
    if count > _COUNT_LIMIT:
        raise OverflowError(f"n_col({D}, {M}) exceeds the 64-bit count range")
    return count


def n_term(D: int, M: int) -> int:
    """Number of monomials of total degree at most ``M`` in ``D`` variables."""
    _check_dims(D, M)
    count = math.comb(M + D, M)
    if count > _COUNT_LIMIT:
        raise OverflowError(f"n_term({D}, {M}) exceeds the 64-bit count range")
    return count


def _compositions(m: int, D: int):
    """All D-tuples of non-negative ints summing to m, first entry largest first."""
    if D == 1:
        yield (m,)
        return
    for first in range(m, -1, -1):
        for rest in _compositions(m - first, D - 1):
            yield (first,) + rest


class IndexSet:
    """All multi-indices of dimension ``D`` and total degree ``<= M``."""

    def __init__(self, D: int, M: int):
        _check_dims(D, M)
        self.D = D
        self.M = M
        self.indices: tuple[tuple[int, ...], ...] = tuple(
            n for m in range(M + 1) for n in _compositions(m, D)
        )
        self._rank = {n: r for r, n in enumerate(self.indices)}
        self.exponents = np.array(self.indices, dtype=np.int64).reshape(len(self.indices), D)
        self.degrees = self.exponents.sum(axis=1)
        starts = [0]
        for m in range(M + 1):
            starts.append(starts[-1] + n_col(D, m))
        self._starts = tuple(starts)
        # rank of n - e_k, or -1 when n_k == 0
        dec = np.full((len(self.indices), D), -1, dtype=np.int64)
        for r, n in enumerate(self.indices):
            for k in range(D):
                if n[k] > 0:
                    dec[r, k] = self._rank[n[:k] + (n[k] - 1,) + n[k + 1:]]
        self.decrement = dec

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        return isinstance(other, IndexSet) and (self.D, self.M) == (other.D, other.M)

    def __hash__(self) -> int:
        return hash((self.D, self.M))

    def __repr__(self) -> str:
        return f"IndexSet(D={self.D}, M={self.M})"

    def rank(self, n) -> int:
        n = tuple(int(v) for v in n)
        try:
            return self._rank[n]
        except KeyError:
            raise IndexError(f"multi-index {n} outside {self!r}") from None

    def degree_slice(self, m: int) -> slice:
        """Ranks holding the monomials of total degree ``m``."""
        if not 0 <= m <= self.M:
            raise IndexError(f"degree {m} outside 0..{self.M}")
        return slice(self._starts[m], self._starts[m + 1])

    def prefix(self, M: int) -> IndexSet:
        if M > self.M:
            raise ValueError("prefix order exceeds the set's order")
        return get_index_set(self.D, M)

    def pairs(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        """Ranks ``(n - tau, tau)`` for every ``tau <= n`` componentwise, where n = indices[r].

        The first pair is tau = 0 and the last is tau = n.
        """
        return _pairs(self, r)

    def degree_pairs(self, m: int, interior: bool = False) -> ConvolutionPlan:
        return _degree_pairs(self, m, interior)


@lru_cache(maxsize=None)
def get_index_set(D: int, M: int) -> IndexSet:
    return IndexSet(D, M)


@lru_cache(maxsize=None)
def _pairs_cached(D: int, M: int, r: int):
    iset = get_index_set(D, M)
    n = iset.indices[r]
    taus = sorted(itertools.product(*(range(k + 1) for k in n)), key=iset.rank)
    right = np.array([iset.rank(t) for t in taus], dtype=np.int64)
    left = np.array([iset.rank(tuple(a - b for a, b in zip(n, t))) for t in taus], dtype=np.int64)
    return left, right


def _pairs(iset: IndexSet, r: int):
    return _pairs_cached(iset.D, iset.M, r)


@dataclass(frozen=True)
class ConvolutionPlan:
    """Flattened convolution pairs for every target multi-index of one degree.

    ``segments`` sums the pair products into one column per target.
    """

    targets: slice
    left: np.ndarray
    right: np.ndarray
    segments: sparse.csr_matrix

    def apply(self, F: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Convolution of row-stacked series F and G at every target; shape (rows, targets)."""
        F = np.atleast_2d(F)
        G = np.atleast_2d(G)
        prod = F[:, self.left] * G[:, self.right]
        return np.asarray(self.segments.T @ prod.T).T


@lru_cache(maxsize=None)
def _degree_pairs_cached(D: int, M: int, m: int, interior: bool) -> ConvolutionPlan:
    iset = get_index_set(D, M)
    sl = iset.degree_slice(m)
    lefts, rights, segs = [], [], []
    for j, r in enumerate(range(sl.start, sl.stop)):
        left, right = _pairs(iset, r)
        if interior:
            left, right = left[1:-1], right[1:-1]
        lefts.append(left)
        rights.append(right)
        segs.append(np.full(len(left), j, dtype=np.int64))
    left = np.concatenate(lefts) if lefts else np.zeros(0, dtype=np.int64)
    right = np.concatenate(rights) if rights else np.zeros(0, dtype=np.int64)
    seg = np.concatenate(segs) if segs else np.zeros(0, dtype=np.int64)
    ntarget = sl.stop - sl.start
    S = sparse.csr_matrix(
        (np.ones(len(seg)), (np.arange(len(seg)), seg)), shape=(len(seg), ntarget)
    )
    return ConvolutionPlan(targets=sl, left=left, right=right, segments=S)


def _degree_pairs(iset: IndexSet, m: int, interior: bool) -> ConvolutionPlan:
    return _degree_pairs_cached(iset.D, iset.M, m, interior)


@dataclass(frozen=True, eq=False)
class MPSeries:
    """A truncated multivariate power series over an :class:`IndexSet`."""

    index_set: IndexSet
    coeffs: np.ndarray
    real: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (len(self.index_set),):
            raise ValueError(f"expected {len(self.index_set)} coefficients, got shape {c.shape}")
        if self.real and np.any(np.abs(c.imag) > 1e-14):
            raise ValueError("series flagged real has imaginary coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, index_set: IndexSet, real: bool = False) -> MPSeries:
        return cls(index_set, np.zeros(len(index_set), dtype=complex), real)

    @classmethod
    def constant(cls, index_set: IndexSet, value: complex) -> MPSeries:
        c = np.zeros(len(index_set), dtype=complex)
        c[0] = value
        return cls(index_set, c)

    @classmethod
    def monomial(cls, index_set: IndexSet, n, value: complex = 1.0) -> MPSeries:
        c = np.zeros(len(index_set), dtype=complex)
        c[index_set.rank(n)] = value
        return cls(index_set, c)

    def __getitem__(self, n) -> complex:
        return complex(self.coeffs[self.index_set.rank(n)])

    def __mul__(self, other: MPSeries) -> MPSeries:
        return truncated_product(self, other)

    def __call__(self, s) -> complex:
        return evaluate(self, s)

    def degree_max(self, m: int) -> float:
        """Largest coefficient magnitude among monomials of degree ``m``."""
        return float(np.max(np.abs(self.coeffs[self.index_set.degree_slice(m)])))


def _same_set(f: MPSeries, g: MPSeries) -> None:
    if f.index_set != g.index_set:
        raise ValueError(f"index sets differ: {f.index_set!r} vs {g.index_set!r}")


def conv_at(f: MPSeries, g: MPSeries, n, lo_excl: bool = False, hi_excl: bool = False) -> complex:
    """Sum of ``f[n - tau] * g[tau]`` over ``0 <= tau <= n``.

    ``lo_excl`` drops the tau = 0 term and ``hi_excl`` the tau = n term.
    For n = 0 both boundaries are the same term.
    """
    _same_set(f, g)
    r = f.index_set.rank(n)
    left, right = f.index_set.pairs(r)
    lo = 1 if lo_excl else 0
    hi = len(left) - 1 if hi_excl else len(left)
    if r == 0 and (lo_excl or hi_excl):
        return 0j
    left, right = left[lo:hi], right[lo:hi]
    return complex(np.sum(f.coeffs[left] * g.coeffs[right]))


def truncated_product(f: MPSeries, g: MPSeries) -> MPSeries:
    """Product of two series with all terms above the set's order dropped."""
    _same_set(f, g)
    iset = f.index_set
    out = np.empty(len(iset), dtype=complex)
    for m in range(iset.M + 1):
        plan = iset.degree_pairs(m)
        out[plan.targets] = plan.apply(f.coeffs, g.coeffs)[0]
    return MPSeries(iset, out, real=f.real and g.real)


class SingularReciprocalError(ZeroDivisionError):
    pass


def reciprocal(V: MPSeries) -> MPSeries:
    """Series ``W`` with ``V * W == 1`` through the set's order."""
    iset = V.index_set
    v0 = V.coeffs[0]
    if v0 == 0:
        raise SingularReciprocalError("reciprocal of a series with zero constant term")
    W = reciprocal_block(V.coeffs[None, :], iset)[0]
    return MPSeries(iset, W)


def reciprocal_block(V: np.ndarray, iset: IndexSet) -> np.ndarray:
    """Row-wise reciprocal of stacked coefficient arrays ``V`` (rows, terms)."""
    V = np.atleast_2d(V)
    W = np.zeros_like(V, dtype=complex)
    W[:, 0] = 1.0 / V[:, 0]
    for m in range(1, iset.M + 1):
        update_reciprocal(W, V, iset, m)
    return W


def update_reciprocal(W: np.ndarray, V: np.ndarray, iset: IndexSet, m: int) -> None:
    """Fill degree-``m`` entries of ``W`` from lower orders of ``W`` and orders <= m of ``V``.

    Uses ``W[n] = -(sum over tau != n of W[tau] V[n - tau]) / V[0]``.
    """
    plan = iset.degree_pairs(m)
    # the last pair of every target is tau = n, whose W[n] is still zero
    W[:, plan.targets] = 0.0
    W[:, plan.targets] = -plan.apply(V, W) / V[:, :1]


def conj_coeffs(f: MPSeries) -> MPSeries:
    """Conjugate every coefficient; the scales are treated as real."""
    return MPSeries(f.index_set, np.conj(f.coeffs), real=f.real)


def monomials(iset: IndexSet, s) -> np.ndarray:
    """Values of every monomial of ``iset`` at the real point ``s``."""
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape != (iset.D,):
        raise ValueError(f"expected a point of length {iset.D}, got {s.shape[0]}")
    return np.prod(s[None, :] ** iset.exponents, axis=1)


def evaluate(f: MPSeries, s) -> complex:
    """Value of the series at the real point ``s`` by direct monomial summation."""
    mono = monomials(f.index_set, s)
    return complex(f.coeffs @ mono)
