"""
Closed-form restoration surrogate and image-quality metrics.

The reconstructor is a per-pixel affine map from the six noisy input
channels (VIS RGB, VIS+NIR RGB) plus a constant to the three output
channels, fitted by ridge regression. Because the fit is closed form, the
restoration loss is an exact function of the inputs and can be
differentiated through the fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import RankError, ShapeError

N_FEATURES = 7
PSNR_CAP = 99.0


@dataclass(frozen=True, eq=False)
class LinearReconstructor:
    matrix: np.ndarray  # (3, 7)
    ridge: float = 0.0


def features(vis, nir):
    """Stack ``(3, W, H)`` inputs into a ``(W*H, 7)`` design matrix."""
    vis = np.asarray(vis, dtype=np.float64)
    nir = np.asarray(nir, dtype=np.float64)
    if vis.shape != nir.shape or vis.ndim != 3 or vis.shape[0] != 3:
        raise ShapeError(f"vis and nir must share a (3, W, H) shape, got {vis.shape} and {nir.shape}")
    n = vis.shape[1] * vis.shape[2]
    return np.column_stack([vis.reshape(3, n).T, nir.reshape(3, n).T, np.ones(n)])


def _targets(target):
    target = np.asarray(target, dtype=np.float64)
    return target.reshape(3, -1).T


def _solve(z, y, ridge, extra_diag=None):
    a = z.T @ z
    if extra_diag is not None:
        a[np.diag_indices_from(a)] += extra_diag
    if ridge == 0:
        if np.linalg.matrix_rank(a) < a.shape[0]:
            raise RankError("normal matrix is singular; use ridge > 0")
    else:
        a[np.diag_indices_from(a)] += ridge
    w = np.linalg.solve(a, z.T @ y)
    return a, w


def fit_reconstructor(vis, nir, target, ridge=1e-6):
    """Least-squares affine map from ``[vis; nir; 1]`` to ``target``, ridge-penalized."""
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    z = features(vis, nir)
    y = _targets(target)
    if y.shape[0] != z.shape[0]:
        raise ShapeError("target size does not match inputs")
    _, w = _solve(z, y, ridge)
    return LinearReconstructor(w.T.copy(), ridge)


def apply_reconstructor(model, vis, nir):
    vis = np.asarray(vis)
    z = features(vis, nir)
    return (z @ model.matrix.T).T.reshape(vis.shape)


def fitted_loss(z, y, ridge, noise_var=None, grad=False):
    """Mean squared error of the ridge fit of ``y`` on ``z``, optionally with its gradient.

    ``noise_var`` (length 7, or None) adds the expected effect of independent
    zero-mean input noise with those total variances per column: the fit
    sees ``Z'Z + diag(noise_var)`` and the loss gains ``sum_j noise_var[j] * |W_j|^2``.

    Returns ``loss`` or ``(loss, dL/dz, dL/dnoise_var)``.
    """
    n = y.size
    s = np.zeros(z.shape[1]) if noise_var is None else np.asarray(noise_var, dtype=np.float64)
    a, w = _solve(z, y, ridge, s)
    r = z @ w - y
    loss = (np.sum(r * r) + np.sum(s * np.sum(w * w, axis=1))) / n
    if not grad:
        return loss
    # H = (R'Z + W'S) A^-1 simplifies to -ridge * W' A^-1 at the optimum
    h = -ridge * np.linalg.solve(a, w).T  # a is symmetric
    dz = (2.0 / n) * (r @ w.T - r @ h - z @ (h.T @ w.T))
    ds = (np.sum(w * w, axis=1) - 2.0 * np.einsum("jc,cj->j", w, h)) / n
    return loss, dz, ds


def mse_loss(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def psnr(x, y, peak=1.0):
    """Peak signal-to-noise ratio in dB, capped at 99 dB for identical images."""
    err = mse_loss(x, y)
    if err == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(peak**2 / err), PSNR_CAP))


def _ssim_channel(x, y, data_range, sigma):
    k1, k2 = 0.01, 0.03
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    # truncate=3.5 with sigma=1.5 gives an 11x11 window
    filt = lambda im: ndimage.gaussian_filter(im, sigma, truncate=3.5, mode="reflect")
    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    pad = 5
    return s[pad:-pad, pad:-pad].mean()


def ssim(x, y, data_range=1.0, sigma=1.5):
    """Mean structural similarity over channels (Gaussian window, borders excluded)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape[1:]) < 11:
        raise ShapeError("images must be at least 11x11 for SSIM")
    return float(np.mean([_ssim_channel(a, b, data_range, sigma) for a, b in zip(x, y)]))


def metrics_record(scene_id, x, y, peak=1.0):
    return {"scene_id": scene_id, "ssim": ssim(x, y), "psnr": psnr(x, y, peak), "mse": mse_loss(x, y)}
