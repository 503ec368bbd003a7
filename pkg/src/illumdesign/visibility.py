"""
Visibility-constrained scaling of LED design weights.

A multiplexed spectrum whose scotopic perceived power exceeds the threshold
``psi_hat`` is pulled back to the threshold by shrinking only the weights of
LEDs that the scotopic eye can see. Bases with zero scotopic response carry
no visibility cost and keep their weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import DomainError, ShapeError
from .spectra import multiplex, perceived_power

DEFAULT_EPSILON = 1e-9


@dataclass(frozen=True, eq=False)
class DesignWeights:
    """LED weights in (0, 1), parameterized by unconstrained logits."""

    logits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.logits, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError(f"logits must be 1-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "logits", arr)

    @classmethod
    def from_sigma(cls, sigma):
        s = np.asarray(sigma, dtype=np.float64)
        if np.any((s <= 0) | (s >= 1)):
            raise DomainError("sigma entries must lie strictly inside (0, 1)")
        return cls(logit(s))

    @property
    def sigma(self):
        return expit(self.logits)

    def __len__(self):
        return self.logits.shape[0]


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    sigma_hat: np.ndarray
    xi: float
    psi_before: float
    psi_after: float


def scale_factor(psi, psi_hat, epsilon=DEFAULT_EPSILON):
    """``min(psi_hat / (psi + epsilon), 1)``, and exactly 1 once ``psi <= psi_hat``.

    The explicit compliant branch keeps projection idempotent: a spectrum
    already at or under the threshold is never nudged by the epsilon guard.
    """
    if not psi_hat > 0:
        raise DomainError(f"psi_hat must be > 0, got {psi_hat}")
    if not epsilon > 0:
        raise DomainError(f"epsilon must be > 0, got {epsilon}")
    if psi < 0:
        raise DomainError(f"perceived power must be >= 0, got {psi}")
    if psi <= psi_hat:
        return 1.0
    return min(psi_hat / (psi + epsilon), 1.0)


def project(bank, weights, scotopic_curve, psi_hat, epsilon=DEFAULT_EPSILON):
    """Scale visible LED weights so the mixed spectrum is at most just invisible.

    Parameters
    ----------
    bank : LedBank
    weights : DesignWeights or array_like
        Either design weights or raw coefficients ``sigma``.
    scotopic_curve : array_like
        Scotopic luminosity on the grid.
    psi_hat : float
        Visibility threshold, ``> 0``. ``np.inf`` disables the constraint.
    epsilon : float
        Guard added to the perceived power in the denominator.
    """
    sigma = np.asarray(getattr(weights, "sigma", weights), dtype=np.float64)
    if sigma.shape != (bank.k,):
        raise ShapeError(f"expected {bank.k} weights, got shape {sigma.shape}")
    phi = multiplex(bank, sigma)
    psi_before = perceived_power(scotopic_curve, phi)
    xi = scale_factor(psi_before, psi_hat, epsilon)
    sigma_hat = np.where(bank.vis_active, xi * sigma, sigma)
    psi_after = perceived_power(scotopic_curve, multiplex(bank, sigma_hat))
    return ProjectionResult(sigma_hat, xi, psi_before, psi_after)
