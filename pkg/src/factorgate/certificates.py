"""Verdicts returned by the deciders, with their certificates or witnesses."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .matcore import IndexSet, as_symmetric


@dataclass(frozen=True)
class FactorRep:
    """A decomposition ``diag(delta) + gamma @ gamma.T``."""

    delta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float).reshape(-1)
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim == 1:
            gamma = gamma[:, None]
        if gamma.size == 0:
            gamma = gamma.reshape(delta.shape[0], 0)
        if gamma.shape[0] != delta.shape[0]:
            raise ValueError(
                f"delta has {delta.shape[0]} rows but gamma has {gamma.shape[0]}"
            )
        if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(gamma))):
            raise ValueError("certificate entries must be finite")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def p(self) -> int:
        return self.delta.shape[0]

    @property
    def m(self) -> int:
        return self.gamma.shape[1]

    def reconstruct(self) -> np.ndarray:
        return as_symmetric(np.diag(self.delta) + self.gamma @ self.gamma.T)

    def max_error(self, sigma: np.ndarray) -> float:
        return float(np.max(np.abs(self.reconstruct() - sigma)))

    def restrict(self, rows) -> "FactorRep":
        rows = list(rows)
        return FactorRep(self.delta[rows], self.gamma[rows])

    def padded(self, m: int) -> "FactorRep":
        """Append zero loading columns up to `m` columns."""
        extra = m - self.m
        if extra < 0:
            raise ValueError("cannot pad to fewer columns")
        return FactorRep(self.delta, np.hstack([self.gamma, np.zeros((self.p, extra))]))

    def canonical(self, zero: float = 0.0) -> "FactorRep":
        """Columns by descending norm, first entry above `zero` positive."""
        gamma = self.gamma.copy()
        if self.m:
            order = np.argsort(-np.linalg.norm(gamma, axis=0), kind="stable")
            gamma = gamma[:, order]
            for k in range(self.m):
                nz = np.flatnonzero(np.abs(gamma[:, k]) > zero)
                if nz.size and gamma[nz[0], k] < 0:
                    gamma[:, k] = -gamma[:, k]
        return FactorRep(self.delta.copy(), gamma)

    def to_dict(self) -> Dict[str, Any]:
        return {"delta": self.delta.tolist(), "gamma": self.gamma.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FactorRep":
        delta = np.asarray(data["delta"], dtype=float)
        gamma = np.asarray(data["gamma"], dtype=float).reshape(delta.shape[0], -1)
        return cls(delta, gamma)


class Status(str, enum.Enum):
    MEMBER = "member"
    NON_MEMBER = "non_member"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class RankObstruction:
    """An off-diagonal block ``sigma[rows, cols]`` of rank larger than m."""

    rows: IndexSet
    cols: IndexSet
    rank: int
    kind = "rank_obstruction"

    def to_dict(self):
        return {"kind": self.kind, "rows": list(self.rows), "cols": list(self.cols),
                "rank": self.rank}


@dataclass(frozen=True)
class TetradViolation:
    """Entries of a one-factor pattern that cannot be ``gamma_i * gamma_j``."""

    indices: Tuple[int, ...]
    residual: float
    kind = "tetrad_violation"

    def to_dict(self):
        return {"kind": self.kind, "indices": list(self.indices),
                "residual": self.residual}


@dataclass(frozen=True)
class UniquenessViolation:
    """The off-diagonal pattern forces a non-positive uniqueness."""

    index: int
    value: float
    kind = "uniqueness_violation"

    def to_dict(self):
        return {"kind": self.kind, "index": self.index, "value": self.value}


@dataclass(frozen=True)
class FitResidual:
    value: float
    kind = "fit_residual"

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class FailedSubset:
    """A principal submatrix that fails the smaller membership problem."""

    subset: IndexSet
    inner: "Verdict"
    kind = "failed_subset"

    def to_dict(self):
        return {"kind": self.kind, "subset": list(self.subset),
                "inner": self.inner.to_dict()}


@dataclass(frozen=True)
class LowerModelMember:
    """Strict membership fails because the matrix lies in the model with m-1."""

    m: int
    kind = "lower_model_member"

    def to_dict(self):
        return {"kind": self.kind, "m": self.m}


Witness = Union[RankObstruction, TetradViolation, UniquenessViolation, FitResidual,
                FailedSubset, LowerModelMember]


@dataclass(frozen=True)
class Verdict:
    status: Status
    certificate: Optional[FactorRep] = None
    witness: Optional[Witness] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.status is Status.NON_MEMBER and self.witness is None:
            raise ValueError("a non-member verdict needs a witness")

    @property
    def is_member(self) -> bool:
        return self.status is Status.MEMBER

    @classmethod
    def member(cls, certificate=None, **diagnostics) -> "Verdict":
        return cls(Status.MEMBER, certificate=certificate, diagnostics=diagnostics)

    @classmethod
    def non_member(cls, witness, **diagnostics) -> "Verdict":
        return cls(Status.NON_MEMBER, witness=witness, diagnostics=diagnostics)

    @classmethod
    def indeterminate(cls, **diagnostics) -> "Verdict":
        return cls(Status.INDETERMINATE, diagnostics=diagnostics)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"status": self.status.value}
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_dict()
        if self.witness is not None:
            out["witness"] = self.witness.to_dict()
        out["diagnostics"] = _jsonable(self.diagnostics)
        return out


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "to_dict"):
        return value.to_dict()
    return value
