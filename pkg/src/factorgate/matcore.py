"""Symmetric-matrix primitives.

Matrices are plain ``numpy`` arrays.  Index sets are tuples of 0-based,
strictly increasing integers.  Everything here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np

IndexSet = Tuple[int, ...]


class NotPositiveDefiniteError(ValueError):
    """Raised when a decider receives a matrix that is not positive definite."""


@dataclass(frozen=True)
class Tolerances:
    """Numeric policy translating exact zero/rank statements to floating point.

    Attributes:
        zero: absolute threshold below which an entry or determinant is zero.
        rank: relative singular-value cutoff used by :func:`numeric_rank`.
        fit: max-norm reconstruction error accepted for a certificate.
        reject: max-norm fit error at or above which non-membership is reported.
        pd: strict positivity margin for uniquenesses and eigenvalues.
        align: max-norm disagreement tolerated between two representations
            that are supposed to coincide (overlap checks, gluing).
    """

    zero: float = 1e-9
    rank: float = 1e-9
    fit: float = 1e-9
    reject: float = 1e-3
    pd: float = 1e-8
    align: float = 1e-6

    def __post_init__(self):
        for name in ("zero", "rank", "fit", "reject", "pd", "align"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"tolerance {name!r} must be positive, got {value}")
        if not self.fit < self.reject:
            raise ValueError("tolerance 'fit' must be smaller than 'reject'")


DEFAULT_TOL = Tolerances()


def as_symmetric(a) -> np.ndarray:
    """Return a float copy of `a` whose lower triangle mirrors the upper one.

    Symmetry of the result is exact; the strictly lower triangle of the
    input is ignored.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


def index_set(indices: Iterable[int], p: Optional[int] = None) -> IndexSet:
    """Validate and normalize an index collection into a sorted tuple."""
    out = tuple(sorted(int(i) for i in indices))
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate indices in {out}")
    if p is not None and out and (out[0] < 0 or out[-1] >= p):
        raise IndexError(f"index set {out} out of range for dimension {p}")
    return out


def complement(p: int, removed: Iterable[int]) -> IndexSet:
    removed = set(removed)
    return tuple(i for i in range(p) if i not in removed)


def principal_submatrix(sigma: np.ndarray, A: Sequence[int]) -> np.ndarray:
    """Return ``sigma[A, A]`` in the order of `A`."""
    A = list(A)
    p = sigma.shape[0]
    if not A:
        raise ValueError("index set must be non-empty")
    if min(A) < 0 or max(A) >= p:
        raise IndexError(f"index set {tuple(A)} out of range for dimension {p}")
    return sigma[np.ix_(A, A)]


def minor(sigma: np.ndarray, A: Sequence[int], B: Sequence[int]) -> float:
    """Determinant of the rectangular selection ``sigma[A, B]``."""
    A, B = list(A), list(B)
    if len(A) != len(B) or not A:
        raise ValueError(f"minor needs |A| = |B| >= 1, got {len(A)} and {len(B)}")
    if min(A + B) < 0 or max(A) >= sigma.shape[0] or max(B) >= sigma.shape[1]:
        raise IndexError("minor index out of range")
    return float(np.linalg.det(sigma[np.ix_(A, B)]))


def numeric_rank(M: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> int:
    """Number of singular values above ``tol.rank`` times the largest one."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol.rank * s[0]))


def batched_ranks(blocks: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """:func:`numeric_rank` over a stack of equally shaped blocks."""
    s = np.linalg.svd(blocks, compute_uv=False)
    top = s[..., :1]
    return np.sum((s > tol.rank * top) & (top > 0), axis=-1)


def is_positive_definite(sigma: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> bool:
    if not np.all(np.isfinite(sigma)):
        return False
    return bool(np.linalg.eigvalsh(sigma)[0] > tol.pd)


def require_positive_definite(sigma: np.ndarray, tol: Tolerances = DEFAULT_TOL):
    if not is_positive_definite(sigma, tol):
        lam = np.linalg.eigvalsh(sigma)[0] if np.all(np.isfinite(sigma)) else np.nan
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (minimum eigenvalue {lam:.6g})"
        )


def gram(gamma: np.ndarray) -> np.ndarray:
    """``gamma @ gamma.T`` with exactly symmetric output."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim == 1:
        gamma = gamma[:, None]
    return as_symmetric(gamma @ gamma.T)


def disjoint_pairs(
    candidates: Sequence[int], size: int
) -> Iterator[Tuple[IndexSet, IndexSet]]:
    """Yield disjoint ``(A, B)`` pairs of the given size in lexicographic order."""
    for A in combinations(candidates, size):
        rest = [c for c in candidates if c not in A]
        for B in combinations(rest, size):
            yield A, B


def find_nonsingular_offdiag_minor(
    psi: np.ndarray, i: int, m: int, tol: Tolerances = DEFAULT_TOL
) -> Optional[Tuple[IndexSet, IndexSet]]:
    """Find disjoint ``A, B`` avoiding `i` with ``|det psi[A, B]| > tol.zero``.

    The search is exhaustive and returns the lexicographically smallest
    pair, or ``None`` if every such minor vanishes.
    """
    p = psi.shape[0]
    if m < 1:
        raise ValueError("m must be at least 1")
    if p < 2 * m + 1:
        raise ValueError(f"need p >= 2m+1, got p={p}, m={m}")
    if not 0 <= i < p:
        raise IndexError(f"row {i} out of range for dimension {p}")
    others = [k for k in range(p) if k != i]
    pairs = list(disjoint_pairs(others, m))
    rows = np.array([a for a, _ in pairs])
    cols = np.array([b for _, b in pairs])
    blocks = psi[rows[:, :, None], cols[:, None, :]]
    dets = np.abs(np.linalg.det(blocks))
    hits = np.flatnonzero(dets > tol.zero)
    if hits.size == 0:
        return None
    return pairs[hits[0]]
