"""Constructive assembly of factor representations from marginal ones.

The induction engine builds a representation of a p x p matrix from
representations of the two (p-1) x (p-1) margins obtained by dropping one
"first" and one "last" index.  The margins are made to agree on their
overlap and then glued; the one entry covered by neither margin is
recovered from a vanishing minor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import orthogonal_procrustes

from .certificates import FactorRep, Status
from .decide import DEFAULT_RESTARTS, decide_one_factor, decide_two_factor
from .matcore import (
    DEFAULT_TOL,
    IndexSet,
    Tolerances,
    disjoint_pairs,
    find_nonsingular_offdiag_minor,
    gram,
    numeric_rank,
    require_positive_definite,
)


class GlueError(ValueError):
    """The two margins cannot be glued (overlap or minor condition fails)."""


class ConstructionError(RuntimeError):
    """The induction reached a dead end.

    `step` names the stage that failed; `detail` carries whatever numbers
    were available at that point.
    """

    def __init__(self, step: str, message: str, detail: Optional[dict] = None):
        super().__init__(f"{step}: {message}")
        self.step = step
        self.detail = detail or {}


@dataclass(frozen=True)
class RankOneClass:
    k: int
    A: IndexSet
    zero_rows: IndexSet = ()


@dataclass
class Construction:
    rep: FactorRep
    max_error: float
    steps: List[Dict] = field(default_factory=list)
    attempts: int = 1

    def paths(self) -> List[str]:
        return [s["path"] for s in self.steps]

    def to_dict(self):
        return {
            "certificate": self.rep.to_dict(),
            "max_error": self.max_error,
            "attempts": self.attempts,
            "steps": self.steps,
        }


# -- building blocks ---------------------------------------------------------


def diagonal_forcing(psi: np.ndarray, phi: Optional[np.ndarray], m: int, i: int,
                     tol: Tolerances = DEFAULT_TOL) -> Optional[float]:
    """Diagonal entry ``i`` forced by the off-diagonal part of a rank-m matrix.

    If disjoint ``A, B`` avoiding `i` with a non-singular ``psi[A, B]``
    exist, every rank-m matrix sharing the off-diagonal entries of `psi`
    has the same ``(i, i)`` entry, namely the value making the bordered
    minor on rows ``{i} + A`` and columns ``{i} + B`` vanish.  That value
    is returned; ``None`` means the entry is not forced.  When `phi` is
    given, both diagonals are checked against the forced value.
    """
    for name, mat in (("psi", psi), ("phi", phi)):
        if mat is not None and numeric_rank(mat, tol) > m:
            raise ValueError(f"{name} has rank above {m}")
    if phi is not None:
        off = np.abs(psi - phi)
        np.fill_diagonal(off, 0.0)
        if off.max() > tol.align:
            raise ValueError("psi and phi differ off the diagonal")
    pair = find_nonsingular_offdiag_minor(psi, i, m, tol)
    if pair is None:
        return None
    A, B = list(pair[0]), list(pair[1])
    forced = float(psi[i, B] @ np.linalg.solve(psi[np.ix_(A, B)], psi[A, i]))
    if phi is not None:
        for name, mat in (("psi", psi), ("phi", phi)):
            if abs(mat[i, i] - forced) > tol.align:
                raise ValueError(
                    f"{name}[{i}, {i}] = {mat[i, i]!r} differs from forced value {forced!r}")
    return forced


def align_orthogonal(gamma: np.ndarray, G: np.ndarray,
                     tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """Orthogonal ``Q`` with ``gamma = G @ Q`` for loadings with equal Gram matrices.

    Both loadings are rotated so that their column space sits in the
    leading ``k = rank`` columns; the full-rank ``k``-column blocks are
    related by a k x k orthogonal matrix, which is padded with an
    identity and conjugated back.
    """
    gamma = np.asarray(gamma, dtype=float)
    G = np.asarray(G, dtype=float)
    if gamma.shape != G.shape:
        raise ValueError(f"shape mismatch {gamma.shape} vs {G.shape}")
    p, m = gamma.shape
    if p < m:
        raise ValueError("need at least as many rows as columns")
    gap = np.max(np.abs(gram(gamma) - gram(G)), initial=0.0)
    scale = max(1.0, np.max(np.abs(gram(gamma)), initial=0.0))
    if gap > tol.fit * scale:
        raise ValueError(f"Gram matrices differ by {gap:.3g}")
    k = numeric_rank(gamma, tol)
    if numeric_rank(G, tol) != k:
        raise ValueError("loadings have different numeric rank")
    _, _, v1t = np.linalg.svd(gamma)
    _, _, v2t = np.linalg.svd(G)
    lead = (gamma @ v1t.T)[:, :k]
    lead_g = (G @ v2t.T)[:, :k]
    Q3 = np.eye(m)
    if k:
        Q3[:k, :k] = orthogonal_procrustes(lead_g, lead)[0]
    return v2t.T @ Q3 @ v1t


def glue(sigma: np.ndarray, rep_top: FactorRep, rep_bottom: FactorRep,
         B: Sequence[int], C: Sequence[int], tol: Tolerances = DEFAULT_TOL) -> FactorRep:
    """Glue representations of ``sigma[:-1, :-1]`` and ``sigma[1:, 1:]``.

    `rep_top` covers indices ``0..p-2`` and `rep_bottom` covers ``1..p-1``;
    their loadings must already agree on the shared rows.  `B` and `C`
    are disjoint m-subsets of ``1..p-2`` with a non-singular ``sigma[B, C]``.
    """
    p = sigma.shape[0]
    m = rep_top.m
    if rep_bottom.m != m or rep_top.p != p - 1 or rep_bottom.p != p - 1:
        raise ValueError("representations do not match the margins of sigma")
    if p < 2 * m + 3:
        raise ValueError(f"gluing needs p >= 2m+3, got p={p}, m={m}")
    B, C = list(B), list(C)
    if (len(B) != m or len(C) != m or set(B) & set(C)
            or not set(B + C) <= set(range(1, p - 1))):
        raise GlueError(f"B={B}, C={C} are not disjoint m-subsets of the middle rows")
    det = np.linalg.det(sigma[np.ix_(B, C)]) if m else 1.0
    if abs(det) <= tol.zero:
        raise GlueError(f"sigma[B, C] is singular (det {det:.3g})")
    overlap = np.max(np.abs(rep_top.gamma[1:] - rep_bottom.gamma[:-1]), initial=0.0)
    if overlap > tol.align:
        raise GlueError(f"loadings disagree on the overlap by {overlap:.3g}")

    delta = np.concatenate([rep_top.delta[:1], rep_bottom.delta])
    gamma = np.vstack([rep_top.gamma[:1], rep_bottom.gamma])
    rep = FactorRep(delta, gamma)
    glued = rep.reconstruct()
    # the corner is the value that zeroes the minor on rows {0}+B, cols C+{p-1}
    if m:
        implied = float(sigma[0, C] @ np.linalg.solve(sigma[np.ix_(B, C)], sigma[B, p - 1]))
    else:
        implied = 0.0
    corner = abs(glued[0, p - 1] - sigma[0, p - 1])
    if corner > tol.align or abs(implied - sigma[0, p - 1]) > tol.align:
        raise GlueError(
            f"corner entry mismatch: glued {glued[0, p - 1]!r}, minor-implied "
            f"{implied!r}, actual {sigma[0, p - 1]!r}")
    err = np.max(np.abs(glued - sigma))
    if err > tol.align:
        raise GlueError(f"glued representation misses sigma by {err:.3g}")
    return rep


def classify_rank_one_subsets(gamma: np.ndarray, tol: Tolerances = DEFAULT_TOL) -> RankOneClass:
    """Largest set of rows spanning a single direction.

    Zero rows are left out of the search.  Ties go to the
    lexicographically smallest row set.
    """
    gamma = np.asarray(gamma, dtype=float)
    norms = np.linalg.norm(gamma, axis=1)
    zero_rows = tuple(int(i) for i in np.flatnonzero(norms <= tol.zero))
    live = [i for i in range(gamma.shape[0]) if i not in zero_rows]
    for size in range(len(live), 0, -1):
        for A in combinations(live, size):
            if numeric_rank(gamma[list(A)], tol) == 1:
                return RankOneClass(size, A, zero_rows)
    return RankOneClass(0, (), zero_rows)


def normalize_loading(gamma: np.ndarray, A: Sequence[int],
                      tol: Tolerances = DEFAULT_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """Rotate `gamma` so rows `A` load on the first column only.

    Returns ``(gamma @ Q, Q)``; each column of the result has its first
    entry above ``tol.zero`` positive.
    """
    gamma = np.asarray(gamma, dtype=float)
    A = list(A)
    if numeric_rank(gamma[A], tol) != 1:
        raise ValueError(f"rows {A} do not have rank one")
    _, _, vt = np.linalg.svd(gamma[A])
    Q = vt.T.copy()
    rotated = gamma @ Q
    for k in range(Q.shape[1]):
        nz = np.flatnonzero(np.abs(rotated[:, k]) > tol.zero)
        if nz.size and rotated[nz[0], k] < 0:
            Q[:, k] *= -1
            rotated[:, k] *= -1
    return rotated, Q


# -- induction engine --------------------------------------------------------


class _Engine:
    def __init__(self, sigma, m, tol, restarts, seed):
        self.sigma = sigma
        self.m = m
        self.tol = tol
        self.restarts = restarts
        self.seed = seed
        self.memo: Dict[IndexSet, FactorRep] = {}
        self.steps: List[Dict] = []

    def build(self, I: IndexSet) -> FactorRep:
        if I not in self.memo:
            self.memo[I] = self._build(I)
        return self.memo[I]

    def _sub(self, I):
        return self.sigma[np.ix_(I, I)]

    def _nonzero(self, i, j):
        return abs(self.sigma[i, j]) > self.tol.zero

    def _build(self, I):
        n = len(I)
        if n == 2 * (self.m + 1):
            return self._base(I)
        for pos, i in enumerate(I):
            if not any(self._nonzero(i, j) for j in I if j != i):
                return self._zero_row(I, pos)
        if self.m == 1:
            return self._step_one(I)
        return self._step_two(I)

    def _base(self, I):
        S = self._sub(I)
        if self.m == 1:
            verdict = decide_one_factor(S, self.tol)
        else:
            verdict = decide_two_factor(S, self.tol, self.restarts, self.seed)
        if not verdict.is_member:
            raise ConstructionError(
                "base", f"submatrix {I} is {verdict.status.value}",
                {"indices": list(I), "verdict": verdict.to_dict()})
        self.steps.append({"size": len(I), "indices": list(I), "path": "base",
                           "route": verdict.diagnostics.get("route", "one_factor")})
        return verdict.certificate

    def _zero_row(self, I, pos):
        i = I[pos]
        rest = I[:pos] + I[pos + 1:]
        rep = self.build(rest)
        delta = np.insert(rep.delta, pos, self.sigma[i, i])
        gamma = np.insert(rep.gamma, pos, 0.0, axis=0)
        self.steps.append({"size": len(I), "indices": list(I), "path": "zero_row",
                           "row": i})
        return FactorRep(delta, gamma)

    def _margins(self, I, first, last):
        top_idx = tuple(j for j in I if j != last)
        bot_idx = tuple(j for j in I if j != first)
        top = self.build(top_idx)
        bot = self.build(bot_idx)
        middle = [j for j in I if j not in (first, last)]
        # local order: first, middle..., last
        top = top.restrict([top_idx.index(j) for j in [first] + middle])
        bot = bot.restrict([bot_idx.index(j) for j in middle + [last]])
        return top, bot, middle

    def _glue(self, I, first, last, top, bot, middle, step):
        order = [first] + middle + [last]
        S = self._sub(order)
        n = len(order)
        B = C = None
        for A_, B_ in disjoint_pairs(range(1, n - 1), self.m):
            if abs(np.linalg.det(S[np.ix_(A_, B_)])) > self.tol.zero:
                B, C = A_, B_
                break
        if B is None:
            raise ConstructionError("glue", "no non-singular minor among the middle rows",
                                    {"indices": list(I)})
        try:
            rep = glue(S, top, bot, B, C, self.tol)
        except GlueError as exc:
            raise ConstructionError("glue", str(exc), {"indices": list(I)}) from exc
        step.update(size=len(I), indices=list(I), first=first, last=last,
                    B=[order[b] for b in B], C=[order[c] for c in C])
        self.steps.append(step)
        back = [order.index(j) for j in I]
        return rep.restrict(back)

    def _overlap_agrees(self, top, bot):
        """Compare the implied overlap Gram diagonals of the two margins."""
        g_top = top.gamma[1:]
        g_bot = bot.gamma[:-1]
        gap = np.abs(np.sum(g_top**2, axis=1) - np.sum(g_bot**2, axis=1))
        forced = 0
        psi, phi = gram(g_top), gram(g_bot)
        if psi.shape[0] >= 2 * self.m + 1:
            for i in range(psi.shape[0]):
                try:
                    if diagonal_forcing(psi, None, self.m, i, self.tol) is not None:
                        forced += 1
                except ValueError:
                    pass
        return float(gap.max()) <= self.tol.align, forced, float(gap.max())

    def _aligned(self, top, bot):
        Q = align_orthogonal(top.gamma[1:], bot.gamma[:-1], self.tol)
        return FactorRep(bot.delta, bot.gamma @ Q)

    # one factor: drop two indices outside a triangle of non-zero entries
    def _step_one(self, I):
        tri = next((T for T in combinations(I, 3)
                    if self._nonzero(T[0], T[1]) and self._nonzero(T[0], T[2])
                    and self._nonzero(T[1], T[2])), None)
        if tri is None:
            verdict = decide_one_factor(self._sub(I), self.tol)
            if not verdict.is_member:
                raise ConstructionError("pair", f"{I} has no triangle and no direct "
                                        "one-factor representation", {"indices": list(I)})
            self.steps.append({"size": len(I), "indices": list(I), "path": "pair"})
            return verdict.certificate
        outside = [j for j in I if j not in tri]
        first, last = outside[0], outside[-1]
        top, bot, middle = self._margins(I, first, last)
        agree, forced, gap = self._overlap_agrees(top, bot)
        if not agree:
            raise ConstructionError("overlap", f"one-factor margins disagree by {gap:.3g}",
                                    {"indices": list(I)})
        bot = self._aligned(top, bot)
        return self._glue(I, first, last, top, bot, middle,
                          {"path": "sign", "triangle": list(tri), "forced": forced})

    # two factors
    def _core(self, I):
        failing = [T for T in combinations(I, 4)
                   if decide_one_factor(self._sub(T), self.tol).status is Status.NON_MEMBER]
        if not failing:
            return None, failing
        for W in combinations(I, 5):
            if not any(set(T) <= set(W) for T in failing):
                continue
            if all(any(self._nonzero(i, j) for j in W if j != i) for i in W):
                return W, failing
        raise ConstructionError("core", f"no 5-subset of {I} satisfies the uniqueness "
                                "hypotheses", {"indices": list(I)})

    def _step_two(self, I):
        W, _ = self._core(I)
        if W is None:
            sub = _Engine(self.sigma, 1, self.tol, self.restarts, self.seed)
            rep = sub.build(I).padded(2)
            self.steps.extend(sub.steps)
            self.steps.append({"size": len(I), "indices": list(I), "path": "nested"})
            return rep
        outside = [j for j in I if j not in W]
        first, last = outside[0], outside[-1]
        top, bot, middle = self._margins(I, first, last)
        pos = {j: k for k, j in enumerate(middle)}
        cls = classify_rank_one_subsets(top.gamma[[1 + pos[j] for j in W]], self.tol)
        step = {"core": list(W), "k": cls.k}
        if cls.k > 3:
            raise ConstructionError("core", f"core {W} has k={cls.k} > 3",
                                    {"indices": list(I), "core": list(W)})
        if cls.k == 3:
            normal = self._normalized(I, W, cls, top, bot, middle)
            if normal is not None:
                return self._structured(I, first, last, top, bot, middle, step, *normal)
        agree, forced, gap = self._overlap_agrees(top, bot)
        if not agree:
            raise ConstructionError("uniqueness", f"margins disagree by {gap:.3g} on an "
                                    "overlap whose representation should be unique",
                                    {"indices": list(I), "core": list(W)})
        bot = self._aligned(top, bot)
        step.update(path="unique", forced=forced)
        return self._glue(I, first, last, top, bot, middle, step)

    def _normalized(self, I, W, cls, top, bot, middle):
        """Bring both margins to the form where the rank-one rows load on factor one.

        Returns ``None`` when a middle row outside the core loads on the
        second factor, in which case the overlap representation is unique.
        """
        tol = self.tol
        pos = {j: k for k, j in enumerate(middle)}
        A = [W[a] for a in cls.A]
        u, v = [j for j in W if j not in A]
        a_mid = [pos[j] for j in A]
        _, q_top = normalize_loading(top.gamma[1:], a_mid, tol)
        _, q_bot = normalize_loading(bot.gamma[:-1], a_mid, tol)
        gt = top.gamma @ q_top
        gb = bot.gamma @ q_bot
        # same sign on the second loading of u in both margins
        if gt[1 + pos[u], 1] < 0:
            gt[:, 1] *= -1
        if gb[pos[u], 1] < 0:
            gb[:, 1] *= -1
        mid_t, mid_b = gt[1:], gb[:-1]
        others = [pos[j] for j in middle if j not in W]
        if others and max(np.abs(mid_t[others, 1]).max(),
                          np.abs(mid_b[others, 1]).max()) > tol.zero:
            return None
        if np.max(np.abs(mid_t[:, 0] - mid_b[:, 0])) > tol.align:
            raise ConstructionError("first_column", "normalized margins do not share "
                                    "their first column", {"indices": list(I)})
        return A, u, v, gt, gb

    def _structured(self, I, first, last, top, bot, middle, step, A, u, v, gt, gb):
        tol = self.tol
        pos = {j: k for k, j in enumerate(middle)}
        uv = [pos[u], pos[v]]
        step["rank_one"] = A

        def with_uv(g, delta, offset, new_uv):
            g = g.copy()
            delta = delta.copy()
            for r, val in zip(uv, new_uv):
                g[offset + r, 1] = val
                j = middle[r]
                delta[offset + r] = self.sigma[j, j] - g[offset + r] @ g[offset + r]
            return g, delta

        if abs(gt[0, 1]) <= tol.zero:
            g, d = with_uv(gt, top.delta, 1, gb[uv, 1])
            step["path"] = "structured_rescale_top"
            t_rep, b_rep = FactorRep(d, g), FactorRep(bot.delta, gb)
        elif abs(gb[-1, 1]) <= tol.zero:
            g, d = with_uv(gb, bot.delta, 0, gt[[1 + r for r in uv], 1])
            step["path"] = "structured_rescale_bottom"
            t_rep, b_rep = FactorRep(top.delta, gt), FactorRep(d, g)
        else:
            t_rep, b_rep = self._pin_by_six(I, A, u, v, first, last, gt, gb, top, bot,
                                            middle, step)
        if min(t_rep.delta.min(), b_rep.delta.min()) <= tol.pd:
            raise ConstructionError("rescale", "rescaled margin has a non-positive "
                                    "uniqueness", {"indices": list(I)})
        return self._glue(I, first, last, t_rep, b_rep, middle, step)

    def _pin_by_six(self, I, A, u, v, first, last, gt, gb, top, bot, middle, step):
        """Pin the disputed second loadings through a 6 x 6 submatrix.

        Both margins and a representation of ``sigma[S, S]``, with
        ``S = {first, A[1], A[2], u, v, last}``, share the off-diagonal
        entries on their common five rows; the diagonal at `u` is forced
        there, which fixes the second loading of `u` (and then of `v`).
        """
        tol = self.tol
        S = [first, A[1], A[2], u, v, last]
        verdict = decide_two_factor(self.sigma[np.ix_(S, S)], tol, self.restarts, self.seed)
        if not verdict.is_member:
            raise ConstructionError("six", f"submatrix {S} is {verdict.status.value}",
                                    {"indices": list(I), "six": S})
        F = verdict.certificate.gamma
        row_t = {j: k for k, j in enumerate([first] + middle)}
        row_b = {j: k for k, j in enumerate(middle + [last])}
        top5 = [row_t[j] for j in S[:5]]
        bot5 = [row_b[j] for j in S[1:]]
        try:
            pinned_t = diagonal_forcing(gram(gt[top5]), gram(F[:5]), 2, 3, tol)
            pinned_b = diagonal_forcing(gram(gb[bot5]), gram(F[1:]), 2, 2, tol)
        except ValueError as exc:
            raise ConstructionError("pin", str(exc), {"indices": list(I), "six": S}) from exc
        if pinned_t is None or pinned_b is None:
            raise ConstructionError("pin", "diagonal at u is not forced",
                                    {"indices": list(I), "six": S})
        c_uu = float(F[3] @ F[3])
        iu = row_t[u]
        first_load = gt[iu, 0]
        second = np.sqrt(max(c_uu - first_load**2, 0.0))
        iv = row_t[v]
        product = self.sigma[u, v] - gt[iu, 0] * gt[iv, 0]
        new_uv = (second, product / second)
        step.update(path="structured_pinned", six=S, pinned=c_uu,
                    forced_top=pinned_t, forced_bottom=pinned_b)
        reps = []
        for g, rep, rows in ((gt, top, row_t), (gb, bot, row_b)):
            g = g.copy()
            delta = rep.delta.copy()
            for j, val in zip((u, v), new_uv):
                if abs(g[rows[j], 1] - val) > tol.align:
                    raise ConstructionError(
                        "pin", f"second loading of row {j} is {g[rows[j], 1]!r}, pinned "
                        f"value {val!r}", {"indices": list(I), "six": S})
                g[rows[j], 1] = val
                delta[rows[j]] = self.sigma[j, j] - g[rows[j]] @ g[rows[j]]
            reps.append(FactorRep(delta, g))
        return reps[0], reps[1]


def build_by_induction(sigma: np.ndarray, m: int, tol: Tolerances = DEFAULT_TOL,
                       restarts: int = DEFAULT_RESTARTS, seed: int = 0,
                       check: bool = True) -> Construction:
    """Assemble a representation of `sigma` by induction on its size.

    With `check`, the matrix must first pass the reduced test on all
    principal submatrices of size ``2(m+1)``.  A failed attempt is
    retried once with four times as many fit restarts.
    """
    from .finiteness import decide_by_submatrices

    sigma = np.asarray(sigma, dtype=float)
    if m not in (1, 2):
        raise ValueError(f"induction is implemented for m in (1, 2), got {m}")
    p = sigma.shape[0]
    if p < 2 * (m + 1):
        raise ValueError(f"need p >= {2 * (m + 1)}, got {p}")
    require_positive_definite(sigma, tol)
    if check:
        verdict = decide_by_submatrices(sigma, m, tol=tol, restarts=restarts, seed=seed)
        if not verdict.is_member:
            raise ConstructionError("precondition", f"reduced test says "
                                    f"{verdict.status.value}", {"verdict": verdict.to_dict()})
    error = None
    for attempt, n_starts in enumerate((restarts, 4 * restarts), start=1):
        engine = _Engine(sigma, m, tol, n_starts, seed + attempt - 1)
        try:
            rep = engine.build(tuple(range(p))).canonical(tol.zero)
        except ConstructionError as exc:
            error = exc
            continue
        err = rep.max_error(sigma)
        if err > tol.fit * p:
            error = ConstructionError("postcondition", f"reconstruction error {err:.3g}",
                                      {"max_error": err})
            continue
        return Construction(rep, err, engine.steps, attempts=attempt)
    raise error
