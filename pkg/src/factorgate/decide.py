"""Direct membership deciders for at most two factors."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import oracle
from .certificates import (
    FactorRep,
    FitResidual,
    RankObstruction,
    Status,
    TetradViolation,
    UniquenessViolation,
    Verdict,
)
from .matcore import (
    DEFAULT_TOL,
    Tolerances,
    batched_ranks,
    disjoint_pairs,
    require_positive_definite,
)

__all__ = [
    "FactorRep",
    "Status",
    "Verdict",
    "decide",
    "decide_diagonal",
    "decide_one_factor",
    "decide_two_factor",
    "rank_obstruction",
]

DEFAULT_RESTARTS = 50


def rank_obstruction(sigma: np.ndarray, m: int,
                     tol: Tolerances = DEFAULT_TOL) -> Optional[RankObstruction]:
    """Lexicographically first disjoint ``(m+1) x (m+1)`` block of full rank.

    Off-diagonal blocks of ``diag(delta) + gamma gamma^T`` are blocks of the
    rank-``m`` matrix ``gamma gamma^T``, so a hit proves non-membership.
    Entries at or below ``tol.zero`` are treated as exact zeros.
    """
    p = sigma.shape[0]
    size = m + 1
    if p < 2 * size:
        return None
    pairs = list(disjoint_pairs(range(p), size))
    rows = np.array([a for a, _ in pairs])
    cols = np.array([b for _, b in pairs])
    blocks = sigma[rows[:, :, None], cols[:, None, :]]
    blocks = np.where(np.abs(blocks) > tol.zero, blocks, 0.0)
    ranks = batched_ranks(blocks, tol)
    hits = np.flatnonzero(ranks == size)
    if hits.size == 0:
        return None
    A, B = pairs[hits[0]]
    return RankObstruction(A, B, size)


def decide_diagonal(sigma: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> Verdict:
    require_positive_definite(sigma, tol)
    p = sigma.shape[0]
    witness = rank_obstruction(sigma, 0, tol)
    if witness is not None:
        return Verdict.non_member(witness)
    return Verdict.member(FactorRep(np.diag(sigma).copy(), np.zeros((p, 0))),
                          max_error=0.0)


def _support_components(sigma, tol):
    adj = np.abs(sigma) > tol.zero
    np.fill_diagonal(adj, False)
    p = adj.shape[0]
    if p >= 2 and adj.sum() == p * (p - 1):
        return adj, [list(range(p))]
    _, labels = connected_components(adj.astype(np.int8), directed=False)
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(lab, []).append(i)
    comps = sorted((g for g in groups.values() if len(g) >= 2), key=lambda g: g[0])
    return adj, comps


def _finish_one_factor(sigma, gamma, tol, path):
    delta = np.diag(sigma) - gamma**2
    rep = FactorRep(delta, gamma[:, None]).canonical(tol.zero)
    err = rep.max_error(sigma)
    diagnostics = dict(path=path, max_error=err, min_delta=float(delta.min()))
    if err > tol.fit:
        return Verdict.non_member(FitResidual(err), **diagnostics)
    i = int(np.argmin(delta))
    if delta[i] < -tol.pd:
        return Verdict.non_member(UniquenessViolation(i, float(delta[i])), **diagnostics)
    if delta[i] <= tol.pd:
        return Verdict.indeterminate(reason="uniqueness on the boundary", **diagnostics)
    return Verdict.member(rep, **diagnostics)


def decide_one_factor(sigma: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> Verdict:
    """Exact decision of membership in the one-factor model.

    Every off-diagonal entry of a member is a product ``gamma_i gamma_j``.
    Rows with no non-zero off-diagonal entry get a zero loading; at most
    one connected group of non-zero entries may exist, and within it the
    squared loadings follow from ratios ``sigma_ij sigma_ik / sigma_jk``.
    """
    require_positive_definite(sigma, tol)
    p = sigma.shape[0]
    witness = rank_obstruction(sigma, 1, tol)
    if witness is not None:
        return Verdict.non_member(witness)

    adj, comps = _support_components(sigma, tol)
    gamma = np.zeros(p)
    if not comps:
        return _finish_one_factor(sigma, gamma, tol, "diagonal")
    if len(comps) > 1:
        # only reachable for p < 4, where no disjoint 2x2 block exists
        (i, j), (k, l) = _first_edge(adj, comps[0]), _first_edge(adj, comps[1])
        return Verdict.non_member(
            TetradViolation((i, j, k, l), float(sigma[i, j] * sigma[k, l])))

    comp = comps[0]
    if len(comp) == 2:
        i, j = comp
        s = sigma[i, j]
        # geometric split of |s| keeps both uniquenesses positive whenever
        # sigma_ij^2 < sigma_ii sigma_jj
        ratio = np.sqrt(sigma[i, i] / sigma[j, j])
        gamma[i] = np.sqrt(abs(s) * ratio)
        gamma[j] = np.sign(s) * np.sqrt(abs(s) / ratio)
        return _finish_one_factor(sigma, gamma, tol, "pair")

    # a connected group that is not complete has a vanishing entry between
    # two rows sharing a neighbour, while gamma_a gamma_hub gamma_b != 0
    for a in comp:
        for b in comp:
            if a < b and not adj[a, b]:
                hubs = [c for c in comp if adj[a, c] and adj[c, b]]
                if hubs:
                    hub = hubs[0]
                    return Verdict.non_member(TetradViolation(
                        (a, hub, b), float(sigma[a, hub] * sigma[hub, b])))

    sq = np.zeros(p)
    for i in comp:
        others = sorted((c for c in comp if c != i), key=lambda c: (-abs(sigma[i, c]), c))
        j, k = others[0], others[1]
        sq[i] = sigma[i, j] * sigma[i, k] / sigma[j, k]
        if sq[i] <= 0:
            return Verdict.non_member(TetradViolation((i, j, k), float(sq[i])))
    root = comp[0]
    gamma[comp] = np.sqrt(sq[comp])
    for i in comp[1:]:
        gamma[i] *= np.sign(sigma[root, i])
    return _finish_one_factor(sigma, gamma, tol, "triads")


def _first_edge(adj, comp):
    for a in comp:
        for b in comp:
            if a < b and adj[a, b]:
                return a, b
    raise AssertionError("component without an edge")


def decide_two_factor(sigma: np.ndarray, tol: Tolerances = DEFAULT_TOL,
                      restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> Verdict:
    """Membership in the two-factor model.

    Tries the exact one-factor route and the exact rank obstruction
    first; otherwise falls back on the multistart fit, which yields a
    three-way answer because a residual floor is evidence, not proof.
    """
    require_positive_definite(sigma, tol)
    one = decide_one_factor(sigma, tol)
    if one.is_member:
        return Verdict.member(one.certificate.padded(2), route="one_factor",
                              max_error=one.diagnostics["max_error"])
    witness = rank_obstruction(sigma, 2, tol)
    if witness is not None:
        return Verdict.non_member(witness, route="rank_obstruction")

    res = oracle.fit(sigma, 2, restarts=restarts, seed=seed, tol=tol, stop_at=tol.fit)
    rep = res.candidate
    diagnostics = dict(route="fit", residual=res.residual, max_error=res.max_error,
                       min_delta=float(rep.delta.min()), starts=len(res.per_start),
                       restarts=restarts, seed=seed)
    if res.max_error <= tol.fit and rep.delta.min() > tol.pd:
        return Verdict.member(rep, **diagnostics)
    if res.max_error >= tol.reject:
        return Verdict.non_member(FitResidual(res.max_error), **diagnostics)
    return Verdict.indeterminate(**diagnostics)


def decide(sigma: np.ndarray, m: int, tol: Tolerances = DEFAULT_TOL,
           restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> Verdict:
    """Dispatch to the decider for `m` factors."""
    if m == 0:
        return decide_diagonal(sigma, tol)
    if m == 1:
        return decide_one_factor(sigma, tol)
    if m == 2:
        return decide_two_factor(sigma, tol, restarts=restarts, seed=seed)
    raise ValueError(f"only m in (0, 1, 2) is supported, got {m}")
