"""Multistart least-squares fit of the low-rank-plus-diagonal model.

Only off-diagonal entries enter the objective; the uniquenesses are
implied by ``delta_i = sigma_ii - |gamma_i|^2``.  Feasibility of
``delta_i >= tol.pd`` is handled by a one-sided quadratic penalty whose
weight is raised in stages, followed by a projection that shrinks any
offending loading row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .certificates import FactorRep
from .matcore import DEFAULT_TOL, Tolerances

PENALTY_SCHEDULE = (1.0, 1e3, 1e6)
MAX_ITER = 10_000
GRAD_TOL = 1e-13


@dataclass(frozen=True)
class StartRecord:
    start: int
    residual: float
    iterations: int
    history: Optional[List[float]] = None


@dataclass(frozen=True)
class FitResult:
    residual: float
    max_error: float
    candidate: FactorRep
    per_start: List[StartRecord] = field(default_factory=list)
    converged: bool = False
    feasibility: str = "penalty+projection"

    def to_dict(self):
        return {
            "residual": self.residual,
            "max_error": self.max_error,
            "converged": self.converged,
            "feasibility": self.feasibility,
            "candidate": self.candidate.to_dict(),
            "per_start": [
                {"start": r.start, "residual": r.residual, "iterations": r.iterations}
                for r in self.per_start
            ],
        }


def _pairs(p):
    return np.triu_indices(p, 1)


def offdiag_residuals(sigma: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    iu, ju = _pairs(sigma.shape[0])
    return sigma[iu, ju] - np.einsum("ka,ka->k", gamma[iu], gamma[ju])


def _penalty_terms(sigma, gamma, eps):
    return np.maximum(0.0, np.einsum("ia,ia->i", gamma, gamma) - np.diag(sigma) + eps)


def objective(sigma: np.ndarray, gamma: np.ndarray, weight: float = 0.0,
              eps: float = DEFAULT_TOL.pd) -> float:
    """Sum of squared off-diagonal errors plus the feasibility penalty."""
    gamma = np.asarray(gamma, dtype=float).reshape(sigma.shape[0], -1)
    r = offdiag_residuals(sigma, gamma)
    val = float(r @ r)
    if weight:
        h = _penalty_terms(sigma, gamma, eps)
        val += weight * float(h @ h)
    return val


def gradient(sigma: np.ndarray, gamma: np.ndarray, weight: float = 0.0,
             eps: float = DEFAULT_TOL.pd) -> np.ndarray:
    """Analytic gradient of :func:`objective` with respect to `gamma`."""
    gamma = np.asarray(gamma, dtype=float).reshape(sigma.shape[0], -1)
    p = sigma.shape[0]
    E = np.zeros((p, p))
    iu, ju = _pairs(p)
    E[iu, ju] = offdiag_residuals(sigma, gamma)
    E = E + E.T
    g = -2.0 * E @ gamma
    if weight:
        h = _penalty_terms(sigma, gamma, eps)
        g += 4.0 * weight * h[:, None] * gamma
    return g


def _residuals_and_jacobian(sigma, gamma, sqrt_w, eps, iu, ju):
    p, m = gamma.shape
    npairs = iu.shape[0]
    r_off = sigma[iu, ju] - np.einsum("ka,ka->k", gamma[iu], gamma[ju])
    h = np.maximum(0.0, np.einsum("ia,ia->i", gamma, gamma) - np.diag(sigma) + eps)
    r = np.concatenate([r_off, sqrt_w * h])
    J = np.zeros((npairs + p, p, m))
    k = np.arange(npairs)
    # r_off = sigma - <g_i, g_j>, so the derivative carries a minus sign
    J[k, iu] = -gamma[ju]
    J[k, ju] = -gamma[iu]
    active = h > 0
    rows = npairs + np.flatnonzero(active)
    J[rows, np.flatnonzero(active)] = 2.0 * sqrt_w * gamma[active]
    return r, J.reshape(npairs + p, p * m)


def descend(sigma: np.ndarray, gamma0: np.ndarray, weight: float,
            eps: float = DEFAULT_TOL.pd, max_iter: int = MAX_ITER,
            record: bool = False):
    """Levenberg-Marquardt on the penalized objective from `gamma0`.

    Only steps that lower the objective are accepted, so the recorded
    objective sequence is non-increasing.

    Returns ``(gamma, iterations, converged, history)``.
    """
    p, m = gamma0.shape
    iu, ju = _pairs(p)
    sqrt_w = np.sqrt(weight)
    x = gamma0.astype(float).copy()
    r, J = _residuals_and_jacobian(sigma, x, sqrt_w, eps, iu, ju)
    f = float(r @ r)
    history = [f] if record else None
    eye = np.eye(p * m)
    lam = None
    nu = 2.0
    converged = False
    it = 0
    while it < max_iter:
        g = J.T @ r
        if 2.0 * np.max(np.abs(g)) < GRAD_TOL or f < 1e-30:
            converged = True
            break
        A = J.T @ J
        floor = 1e-12 * max(float(np.max(np.diag(A))), 1.0)
        if lam is None:
            lam = 1e-3 * max(float(np.max(np.diag(A))), 1e-12)
        lam = max(lam, floor)
        it += 1
        step = np.linalg.solve(A + lam * eye, -g)
        x_new = x + step.reshape(p, m)
        r_new, J_new = _residuals_and_jacobian(sigma, x_new, sqrt_w, eps, iu, ju)
        f_new = float(r_new @ r_new)
        if f_new < f:
            stalled = f - f_new <= 1e-15 * f
            x, r, J, f = x_new, r_new, J_new, f_new
            lam *= 0.3
            nu = 2.0
        else:
            stalled = np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(x))
            lam *= nu
            nu *= 2.0
        if record:
            history.append(f)
        # no representable progress left
        if stalled or lam > 1e20:
            converged = 2.0 * np.max(np.abs(J.T @ r)) < GRAD_TOL
            break
    return x, it, converged, history


def principal_axis_start(sigma: np.ndarray, m: int, sweeps: int = 3) -> np.ndarray:
    """A few principal-axis iterations starting from squared multiple correlations."""
    diag = np.diag(sigma)
    comm = diag - 1.0 / np.diag(np.linalg.inv(sigma))
    for _ in range(sweeps):
        reduced = sigma.copy()
        np.fill_diagonal(reduced, comm)
        w, V = np.linalg.eigh(reduced)
        w, V = w[::-1][:m], V[:, ::-1][:, :m]
        gamma = V * np.sqrt(np.maximum(w, 0.0))
        comm = np.minimum(np.einsum("ia,ia->i", gamma, gamma), 0.995 * diag)
    return gamma


def project_feasible(sigma: np.ndarray, gamma: np.ndarray, eps: float) -> np.ndarray:
    """Shrink rows so that every implied uniqueness is at least ``2 * eps``."""
    gamma = gamma.copy()
    diag = np.diag(sigma)
    norms = np.einsum("ia,ia->i", gamma, gamma)
    bad = diag - norms < 2.0 * eps
    if np.any(bad):
        target = np.maximum(diag[bad] - 2.0 * eps, 0.0)
        gamma[bad] *= np.sqrt(target / norms[bad])[:, None]
    return gamma


def _fit_one(sigma, gamma0, eps, record):
    gamma = gamma0
    total = 0
    history = [] if record else None
    converged = False
    for weight in PENALTY_SCHEDULE:
        gamma, iters, converged, hist = descend(sigma, gamma, weight, eps, record=record)
        total += iters
        if record:
            history.append(hist)
        if np.all(_penalty_terms(sigma, gamma, eps) == 0.0):
            break
    gamma = project_feasible(sigma, gamma, eps)
    return gamma, total, converged, history


def fit(sigma: np.ndarray, m: int, restarts: int = 50, seed: int = 0,
        tol: Tolerances = DEFAULT_TOL, stop_at: Optional[float] = None,
        record: bool = False) -> FitResult:
    """Best-of-`restarts` fit of ``sigma`` by ``diag(delta) + gamma gamma^T``.

    Start 0 is a principal-axis solution; the remaining starts draw
    loadings uniformly from ``[-1, 1] * sqrt(mean(diag(sigma)))`` using a
    generator seeded with `seed`.  With `stop_at`, the restarts stop as
    soon as a candidate's max-norm error is at most `stop_at`.  The winner
    is the smallest residual, earliest start on ties.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    if m == 0:
        r = offdiag_residuals(sigma, np.zeros((p, 0)))
        rep = FactorRep(np.diag(sigma).copy(), np.zeros((p, 0)))
        return FitResult(float(r @ r), float(np.max(np.abs(r), initial=0.0)), rep,
                         [StartRecord(0, float(r @ r), 0)], converged=True)

    rng = np.random.default_rng(seed)
    scale = np.sqrt(np.mean(np.diag(sigma)))
    best = None
    records = []
    any_converged = False
    for start in range(restarts):
        if start == 0:
            gamma0 = principal_axis_start(sigma, m)
        else:
            gamma0 = rng.uniform(-1.0, 1.0, size=(p, m)) * scale
        gamma, iters, converged, hist = _fit_one(sigma, gamma0, tol.pd, record)
        r = offdiag_residuals(sigma, gamma)
        res = float(r @ r)
        records.append(StartRecord(start, res, iters, hist))
        any_converged |= converged
        if best is None or res < best[0]:
            best = (res, float(np.max(np.abs(r), initial=0.0)), gamma)
        if stop_at is not None and best[1] <= stop_at:
            break

    res, max_err, gamma = best
    delta = np.diag(sigma) - np.einsum("ia,ia->i", gamma, gamma)
    rep = FactorRep(delta, gamma).canonical(tol.zero)
    return FitResult(res, max_err, rep, records, converged=any_converged)
