"""
Drive-level fitting: approximate a target spectrum with physical LEDs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .spectra import N_BANDS

ZERO_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class RealizationFit:
    weights: np.ndarray
    residual_l2: float
    active_count: int

    @property
    def active_indices(self):
        return [int(i) for i in np.flatnonzero(self.weights > ZERO_TOL)]

    def report(self):
        return {
            "weights": self.weights.tolist(),
            "residual_l2": self.residual_l2,
            "active_indices": self.active_indices,
        }


def _passive_lstsq(a, b, passive):
    z = np.zeros(a.shape[1])
    if passive.any():
        z[passive] = np.linalg.lstsq(a[:, passive], b, rcond=None)[0]
    return z


def nnls(a, b, maxiter=None, tol=None):
    """Lawson-Hanson active-set solution of ``min ||a x - b||`` with ``x >= 0``.

    Parameters
    ----------
    a : (m, n) array_like
    b : (m,) array_like
    maxiter : int, optional
        Cap on outer iterations, default ``10 * n``.
    tol : float, optional
        Dual feasibility tolerance, default ``10 * eps * max(m, n) * max|a'b|``.

    Returns
    -------
    x : ndarray, shape (n,)
    rnorm : float
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = a.shape
    if b.shape != (m,):
        raise ShapeError(f"b must have shape ({m},), got {b.shape}")
    maxiter = 10 * n if maxiter is None else maxiter
    atb = a.T @ b
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(1.0, np.abs(atb).max(initial=0.0))

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    # columns whose entry would immediately go non-positive; cleared once x moves
    skip = np.zeros(n, dtype=bool)
    w = atb.copy()
    for _ in range(maxiter):
        cand = np.where(passive | skip, -np.inf, w)
        j = int(np.argmax(cand))
        if cand[j] <= tol:
            break
        passive[j] = True
        z = _passive_lstsq(a, b, passive)
        if z[j] <= 0:
            passive[j] = False
            skip[j] = True
            continue
        skip[:] = False
        while np.any(z[passive] <= 0):
            # step back to the boundary and drop variables that hit zero
            idx = np.flatnonzero(passive & (z <= 0))
            alpha = np.min(x[idx] / (x[idx] - z[idx]))
            x = x + alpha * (z - x)
            passive &= x > ZERO_TOL
            x[~passive] = 0.0
            z = _passive_lstsq(a, b, passive)
        x = z
        w = a.T @ (b - a @ x)
    return x, float(np.linalg.norm(a @ x - b))


def fit_nnls(target, bank, max_active=None):
    """Non-negative LED weights whose mix best matches ``target``.

    With ``max_active`` the full solution's largest weights pick the LEDs
    to keep, and the fit is redone on that subset.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (N_BANDS,):
        raise ShapeError(f"target must be ({N_BANDS},), got {target.shape}")
    bases = np.asarray(getattr(bank, "bases", bank), dtype=np.float64)
    if bases.ndim != 2 or bases.shape[0] == 0:
        raise DomainError("bank is empty")
    a = bases.T
    x, rnorm = nnls(a, target)
    if max_active is not None:
        if max_active < 1:
            raise DomainError("max_active must be >= 1")
        if np.count_nonzero(x > ZERO_TOL) > max_active:
            keep = np.sort(np.argsort(-x, kind="stable")[:max_active])
            xs, rnorm = nnls(a[:, keep], target)
            x = np.zeros_like(x)
            x[keep] = xs
    return RealizationFit(x, rnorm, int(np.count_nonzero(x > ZERO_TOL)))
