"""Instance generators for members and counterexamples."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Tuple, Union

import numpy as np
from scipy.stats import special_ortho_group

from .certificates import FactorRep
from .matcore import complement, principal_submatrix


@dataclass(frozen=True)
class Generic:
    """All designed non-zero quantities bounded away from zero."""


@dataclass(frozen=True)
class RankOneSubset:
    """Rows in `rows` load on a single common direction (two factors only)."""

    rows: Tuple[int, ...]


@dataclass(frozen=True)
class ZeroRows:
    rows: Tuple[int, ...]


@dataclass(frozen=True)
class TwoBlock:
    """First half of the rows on factor one, the rest on factor two."""


Pattern = Union[Generic, RankOneSubset, ZeroRows, TwoBlock]


class GenerationError(RuntimeError):
    """The rejection sampler ran out of attempts."""


@dataclass(frozen=True)
class GenSpec:
    p: int
    m: int
    delta_range: Tuple[float, float] = (0.5, 2.0)
    gamma_range: Tuple[float, float] = (-2.0, 2.0)
    pattern: Pattern = field(default_factory=Generic)
    genericity_margin: float = 0.05
    max_tries: int = 10_000

    def __post_init__(self):
        if self.p < 1 or self.m < 0 or self.m > self.p:
            raise ValueError(f"invalid dimensions p={self.p}, m={self.m}")
        lo, hi = self.delta_range
        if not 0 < lo <= hi:
            raise ValueError("delta_range must be positive")
        if self.genericity_margin < 0:
            raise ValueError("genericity_margin must be non-negative")
        if self.gamma_range[0] >= self.gamma_range[1]:
            raise ValueError("gamma_range must be a non-empty interval")
        if isinstance(self.pattern, RankOneSubset):
            if self.m != 2:
                raise ValueError("RankOneSubset needs m = 2")
            if not set(self.pattern.rows) <= set(range(self.p)) or not self.pattern.rows:
                raise ValueError("RankOneSubset rows out of range")
        if isinstance(self.pattern, ZeroRows):
            if not set(self.pattern.rows) <= set(range(self.p)):
                raise ValueError("ZeroRows rows out of range")
        if isinstance(self.pattern, TwoBlock) and (self.m != 2 or self.p < 4):
            raise ValueError("TwoBlock needs m = 2 and p >= 4")


def _draw_gamma(spec: GenSpec, rng) -> np.ndarray:
    lo, hi = spec.gamma_range
    gamma = rng.uniform(lo, hi, size=(spec.p, spec.m))
    pat = spec.pattern
    if isinstance(pat, ZeroRows):
        gamma[list(pat.rows)] = 0.0
    elif isinstance(pat, RankOneSubset):
        gamma[list(pat.rows), 1:] = 0.0
    elif isinstance(pat, TwoBlock):
        half = spec.p // 2
        gamma[:half, 1] = 0.0
        gamma[half:, 0] = 0.0
    return gamma


def _acceptable(spec: GenSpec, gamma: np.ndarray, sigma: np.ndarray) -> bool:
    eps = spec.genericity_margin
    pat = spec.pattern
    p = spec.p
    if spec.m == 0:
        return True
    # designed zeros are exact; everything else must clear the margin
    structural = np.zeros_like(gamma, dtype=bool)
    live = np.ones(p, dtype=bool)
    if isinstance(pat, ZeroRows):
        structural[list(pat.rows)] = True
        live[list(pat.rows)] = False
    elif isinstance(pat, RankOneSubset):
        structural[list(pat.rows), 1:] = True
    elif isinstance(pat, TwoBlock):
        structural = gamma == 0.0
    if np.any(np.abs(gamma[~structural]) < eps):
        return False
    off = np.abs(sigma[np.ix_(live, live)])
    np.fill_diagonal(off, np.inf)
    if not isinstance(pat, TwoBlock) and np.any(off < eps):
        return False
    if spec.m == 2:
        shared = set(pat.rows) if isinstance(pat, RankOneSubset) else set()
        rows = [i for i in range(p) if live[i]]
        for i, j in combinations(rows, 2):
            if i in shared and j in shared:
                continue
            if isinstance(pat, TwoBlock) and (i < p // 2) == (j < p // 2):
                continue
            if abs(np.linalg.det(gamma[[i, j]])) < eps:
                return False
    return True


def random_member(spec: GenSpec, seed: int) -> Tuple[np.ndarray, FactorRep]:
    """Draw ``(sigma, rep)`` with ``sigma = diag(delta) + gamma gamma^T``.

    Structured patterns are drawn in their normal form and then rotated
    by a random orthogonal matrix, so the returned loading hides the
    pattern behind the rotation gauge.
    """
    rng = np.random.default_rng(seed)
    for _ in range(spec.max_tries):
        delta = rng.uniform(*spec.delta_range, size=spec.p)
        gamma = _draw_gamma(spec, rng)
        sigma = np.diag(delta) + gamma @ gamma.T
        sigma = (sigma + sigma.T) / 2
        if _acceptable(spec, gamma, sigma):
            break
    else:
        raise GenerationError(f"no acceptable draw in {spec.max_tries} tries for {spec}")
    if spec.m >= 2 and not isinstance(spec.pattern, Generic):
        Q = special_ortho_group.rvs(spec.m, random_state=rng)
        gamma = gamma @ Q
    rep = FactorRep(delta, gamma)
    return rep.reconstruct(), rep


def tightness_example(m: int) -> np.ndarray:
    """The block matrix ``[[2I, I], [I, 2I]]`` with ``(m+1) x (m+1)`` blocks."""
    if m < 0:
        raise ValueError("m must be non-negative")
    eye = np.eye(m + 1)
    return np.block([[2 * eye, eye], [eye, 2 * eye]])


def deleted_submatrix_certificate(m: int, dropped: int) -> FactorRep:
    """Explicit m-factor representation of the example with one index removed.

    Index `dropped` is 0-based.  Its partner ``dropped +- (m+1)`` becomes an
    isolated row with uniqueness 2; each of the m surviving pairs loads
    with weight one on its own factor.
    """
    n = 2 * (m + 1)
    if m < 1:
        raise ValueError("m must be at least 1")
    if not 0 <= dropped < n:
        raise IndexError(f"dropped index {dropped} out of range for size {n}")
    keep = complement(n, [dropped])
    partner = (dropped + m + 1) % n
    delta = np.array([2.0 if i == partner else 1.0 for i in keep])
    gamma = np.zeros((len(keep), m))
    pair_ids = [k for k in range(m + 1) if k != dropped % (m + 1)]
    for row, i in enumerate(keep):
        if i != partner:
            gamma[row, pair_ids.index(i % (m + 1))] = 1.0
    rep = FactorRep(delta, gamma)
    assert np.array_equal(rep.reconstruct(),
                          principal_submatrix(tightness_example(m), keep))
    return rep


def perturb(sigma: np.ndarray, magnitude: float, seed: int) -> np.ndarray:
    """Add a symmetric off-diagonal perturbation with max-norm `magnitude`.

    Positive definiteness of the result is not checked.
    """
    if magnitude < 0:
        raise ValueError("magnitude must be non-negative")
    sigma = np.array(sigma, dtype=float)
    p = sigma.shape[0]
    if magnitude == 0 or p < 2:
        return sigma
    rng = np.random.default_rng(seed)
    E = np.triu(rng.uniform(-1.0, 1.0, size=(p, p)), 1)
    E *= magnitude / np.max(np.abs(E))
    return sigma + E + E.T
