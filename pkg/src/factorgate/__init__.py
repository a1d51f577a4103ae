"""Membership tests and certificates for the factor-analysis covariance sets.

A symmetric positive definite ``sigma`` lies in the m-factor set when
``sigma = diag(delta) + gamma @ gamma.T`` with ``delta > 0`` and a
``p x m`` loading ``gamma``.  For ``m <= 2`` this is decided by the
principal submatrices of size ``2(m+1)``.
"""

from .certificates import (
    FactorRep,
    FailedSubset,
    FitResidual,
    LowerModelMember,
    RankObstruction,
    Status,
    TetradViolation,
    UniquenessViolation,
    Verdict,
)
from .construct import (
    Construction,
    ConstructionError,
    GlueError,
    align_orthogonal,
    build_by_induction,
    classify_rank_one_subsets,
    diagonal_forcing,
    glue,
    normalize_loading,
)
from .decide import (
    decide,
    decide_diagonal,
    decide_one_factor,
    decide_two_factor,
    rank_obstruction,
)
from .finiteness import (
    decide_by_submatrices,
    equivalence_sweep,
    strict_membership,
    verify_equivalence,
)
from .matcore import DEFAULT_TOL, NotPositiveDefiniteError, Tolerances
from .oracle import FitResult, fit
from .witness import (
    GenSpec,
    Generic,
    RankOneSubset,
    TwoBlock,
    ZeroRows,
    deleted_submatrix_certificate,
    perturb,
    random_member,
    tightness_example,
)

__version__ = "0.1.0"

__all__ = sorted(
    name for name, obj in globals().items()
    if not name.startswith("_") and getattr(obj, "__module__", "").startswith(__name__)
)
