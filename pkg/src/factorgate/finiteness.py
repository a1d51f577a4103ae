"""Membership through principal submatrices of a fixed size.

For m <= 2 factors, a positive definite matrix has an m-factor
representation exactly when every principal submatrix of size 2(m+1)
has one.  This module runs that reduced test and checks it against a
direct decision.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Dict, List, Optional

import numpy as np

from .certificates import FailedSubset, LowerModelMember, Status, Verdict
from .decide import DEFAULT_RESTARTS, decide, decide_one_factor
from .matcore import DEFAULT_TOL, Tolerances, require_positive_definite

THREADS_ENV = "FACTOR_GATE_THREADS"


def _workers(workers: Optional[int]) -> int:
    if workers is not None:
        return max(1, int(workers))
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def decide_by_submatrices(sigma: np.ndarray, m: int, subset_size: Optional[int] = None,
                          tol: Tolerances = DEFAULT_TOL, restarts: int = DEFAULT_RESTARTS,
                          seed: int = 0, full_scan: bool = False,
                          workers: Optional[int] = None) -> Verdict:
    """Decide every principal submatrix of `subset_size` (default ``2(m+1)``).

    Subsets are visited in lexicographic order.  The first failing subset
    is the witness; with `full_scan` every subset is decided and all
    failures are listed in the diagnostics.  Inner indeterminate answers
    never count as failures.
    """
    if m not in (0, 1, 2):
        raise ValueError(f"only m in (0, 1, 2) is supported, got {m}")
    p = sigma.shape[0]
    size = 2 * (m + 1) if subset_size is None else int(subset_size)
    if not 1 <= size <= p:
        raise ValueError(f"subset size {size} not in 1..{p}")
    require_positive_definite(sigma, tol)

    subsets = list(combinations(range(p), size))

    def run(A):
        return decide(sigma[np.ix_(A, A)], m, tol, restarts=restarts, seed=seed)

    n_workers = _workers(workers)
    failures: List[FailedSubset] = []
    undecided: List[List[int]] = []
    checked = 0
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            verdicts = list(pool.map(run, subsets))
    else:
        verdicts = None
    for k, A in enumerate(subsets):
        v = verdicts[k] if verdicts is not None else run(A)
        checked += 1
        if v.status is Status.NON_MEMBER:
            failures.append(FailedSubset(A, v))
            if not full_scan:
                break
        elif v.status is Status.INDETERMINATE:
            undecided.append(list(A))

    diagnostics = dict(m=m, subset_size=size, subsets_total=len(subsets),
                       subsets_checked=checked, indeterminate_subsets=undecided)
    if full_scan:
        diagnostics["failing_subsets"] = [list(f.subset) for f in failures]
    if failures:
        return Verdict.non_member(failures[0], **diagnostics)
    if undecided:
        return Verdict.indeterminate(**diagnostics)
    return Verdict.member(None, **diagnostics)


def strict_membership(sigma: np.ndarray, m: int, tol: Tolerances = DEFAULT_TOL,
                      restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> Verdict:
    """Membership in the m-factor model but not the (m-1)-factor one.

    The second half looks for a principal submatrix of size 2m outside
    the smaller model: a non-zero off-diagonal entry for m = 1, a 4 x 4
    submatrix rejected by the one-factor decider for m = 2.
    """
    if m not in (1, 2):
        raise ValueError(f"strict membership is defined for m in (1, 2), got {m}")
    p = sigma.shape[0]
    if p < 2 * (m + 1):
        raise ValueError(f"need p >= {2 * (m + 1)}, got {p}")
    reduced = decide_by_submatrices(sigma, m, tol=tol, restarts=restarts, seed=seed)

    escape = None
    undecided_lower = 0
    for A in combinations(range(p), 2 * m):
        sub = sigma[np.ix_(A, A)]
        if m == 1:
            status = Status.NON_MEMBER if abs(sub[0, 1]) > tol.zero else Status.MEMBER
        else:
            status = decide_one_factor(sub, tol).status
        if status is Status.NON_MEMBER:
            escape = list(A)
            break
        if status is Status.INDETERMINATE:
            undecided_lower += 1

    diagnostics = dict(reduced=reduced.to_dict(), lower_model_escape=escape)
    if reduced.status is Status.NON_MEMBER:
        return Verdict.non_member(reduced.witness, **diagnostics)
    if escape is None and not undecided_lower:
        return Verdict.non_member(LowerModelMember(m - 1), **diagnostics)
    if reduced.status is Status.INDETERMINATE or escape is None:
        return Verdict.indeterminate(**diagnostics)
    return Verdict.member(None, **diagnostics)


@dataclass
class EquivalenceReport:
    m: int
    p: int
    reduced: Verdict
    global_: Verdict
    construction: Optional[Dict] = None
    construction_error: Optional[str] = None

    @property
    def statuses(self):
        return self.reduced.status, self.global_.status

    @property
    def decided(self) -> bool:
        return Status.INDETERMINATE not in self.statuses

    @property
    def agree(self) -> bool:
        if not self.decided:
            return True
        same = self.reduced.status is self.global_.status
        if same and self.reduced.is_member and self.m > 0:
            return self.construction_error is None
        return same

    @property
    def defect(self) -> bool:
        """A hard disagreement outside the indeterminate zone."""
        return not self.agree

    def to_dict(self):
        return {
            "m": self.m,
            "p": self.p,
            "reduced": self.reduced.to_dict(),
            "global": self.global_.to_dict(),
            "construction": self.construction,
            "construction_error": self.construction_error,
            "agree": self.agree,
            "defect": self.defect,
        }


def verify_equivalence(sigma: np.ndarray, m: int, tol: Tolerances = DEFAULT_TOL,
                       restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> EquivalenceReport:
    """Compare the reduced verdict with the direct one; build a certificate for members."""
    from .construct import ConstructionError, build_by_induction

    p = sigma.shape[0]
    if p < 2 * (m + 1):
        raise ValueError(f"need p >= {2 * (m + 1)}, got {p}")
    reduced = decide_by_submatrices(sigma, m, tol=tol, restarts=restarts, seed=seed)
    global_ = decide(sigma, m, tol, restarts=restarts, seed=seed)
    report = EquivalenceReport(m, p, reduced, global_)
    if reduced.is_member and m > 0:
        try:
            built = build_by_induction(sigma, m, tol, restarts=restarts, seed=seed,
                                       check=False)
            report.construction = {"max_error": built.max_error, "paths": built.paths(),
                                   "attempts": built.attempts}
        except ConstructionError as exc:
            report.construction_error = str(exc)
    return report


@dataclass
class SweepSummary:
    m: int
    p: int
    members: int = 0
    non_members: int = 0
    agreements: int = 0
    defects: List[Dict] = field(default_factory=list)
    indeterminate_members: int = 0
    indeterminate_non_members: int = 0
    # generated members rejected by either verdict
    ground_truth_misses: int = 0
    max_construction_error: float = 0.0

    @property
    def trials(self) -> int:
        return self.members + self.non_members

    def to_dict(self):
        return {
            "m": self.m,
            "p": self.p,
            "trials": self.trials,
            "members": self.members,
            "non_members": self.non_members,
            "agreements": self.agreements,
            "hard_disagreements": len(self.defects),
            "indeterminate_members": self.indeterminate_members,
            "indeterminate_non_members": self.indeterminate_non_members,
            "ground_truth_misses": self.ground_truth_misses,
            "max_construction_error": self.max_construction_error,
            "defects": self.defects,
        }


def equivalence_sweep(m: int, p: int, members: int, non_members: int, seed: int,
                      magnitude: float = 0.2, tol: Tolerances = DEFAULT_TOL,
                      restarts: int = DEFAULT_RESTARTS) -> SweepSummary:
    """Verify the reduction on generated members and perturbed non-members.

    Non-members are generated members plus an off-diagonal perturbation of
    max-norm `magnitude`, redrawn until positive definite.
    """
    from .matcore import is_positive_definite
    from .witness import GenSpec, perturb, random_member

    summary = SweepSummary(m, p)
    spec = GenSpec(p, m)
    rng = np.random.default_rng(seed)
    jobs = [True] * members + [False] * non_members
    for is_member in jobs:
        draw = int(rng.integers(2**31))
        sigma, _ = random_member(spec, draw)
        if not is_member:
            for k in range(100):
                candidate = perturb(sigma, magnitude, draw + k + 1)
                if is_positive_definite(candidate, tol):
                    sigma = candidate
                    break
            else:
                raise RuntimeError("could not draw a positive definite perturbation")
        report = verify_equivalence(sigma, m, tol, restarts=restarts, seed=draw % 1000)
        if is_member:
            summary.members += 1
        else:
            summary.non_members += 1
        if not report.decided:
            if is_member:
                summary.indeterminate_members += 1
            else:
                summary.indeterminate_non_members += 1
        if is_member and Status.NON_MEMBER in report.statuses:
            summary.ground_truth_misses += 1
        if report.defect:
            summary.defects.append({"draw": draw, "member": is_member,
                                    "report": report.to_dict()})
        elif report.decided:
            summary.agreements += 1
        if report.construction:
            summary.max_construction_error = max(summary.max_construction_error,
                                                 report.construction["max_error"])
    return summary
