"""
Image formation from reflectance cubes, plus shot and pattern noise.

Images are float64 arrays of shape ``(3, W, H)``; cubes are ``(48, W, H)``.
A pixel's channel value is the band-wise sum of reflectance times
illuminant times camera sensitivity.

Noise draws are counter based: every random number is a hash of
``(seed, stream, element index, draw number)``, so results do not depend
on evaluation order and chunked/threaded evaluation is bit-identical to
the serial path.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, gammaln

from .errors import DomainError, FormatError, ShapeError
from .spectra import N_BANDS, VIS_MASK, WAVELENGTHS, format_float, read_grid_table, gaussian_curve

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_U_GOLDEN = np.uint64(_GOLDEN)
_U_M1 = np.uint64(0xBF58476D1CE4E5B9)
_U_M2 = np.uint64(0x94D049BB133111EB)

POISSON_INVERSION_LIMIT = 10.0

# stream tags keep Poisson and pattern draws from sharing keys
_TAG_POISSON = 0x504F
_TAG_PATTERN = 0x4E50


@dataclass(frozen=True, eq=False)
class CameraSensitivity:
    """Per-channel spectral sensitivity, rows ordered R, G, B."""

    rows: np.ndarray

    def __post_init__(self):
        arr = np.array(self.rows, dtype=np.float64)
        if arr.shape != (3, N_BANDS):
            raise ShapeError(f"camera sensitivity must be (3, {N_BANDS}), got {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("camera sensitivity must be finite and non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "rows", arr)


def default_camera():
    """RGB Gaussians (R 600, G 540, B 460 nm, FWHM 80 nm) with a shared NIR tail.

    The tail is identical for all three channels, so above ~820 nm the
    camera is effectively monochrome.
    """
    tail = 0.35 * expit((WAVELENGTHS - 760.0) / 15.0)
    rows = [gaussian_curve(c, 80.0, support_fwhm=np.inf) + tail for c in (600.0, 540.0, 460.0)]
    return CameraSensitivity(np.array(rows))


def read_camera(path):
    """Camera CSV with header ``wavelength_nm,R,G,B``."""
    header, vals = read_grid_table(path, "wavelength_nm")
    if len(header) != 4:
        raise FormatError(f"{path}: expected columns wavelength_nm,R,G,B", 0)
    return CameraSensitivity(vals.T)


def write_camera(path, camera):
    with Path(path).open("w", newline="") as fh:
        fh.write("wavelength_nm,R,G,B\n")
        for n, wl in enumerate(WAVELENGTHS):
            fh.write(",".join([str(wl)] + [format_float(v) for v in camera.rows[:, n]]) + "\n")


def _cube_data(cube):
    data = np.asarray(getattr(cube, "data", cube))
    if data.ndim != 3 or data.shape[0] != N_BANDS:
        raise ShapeError(f"cube must be ({N_BANDS}, W, H), got {data.shape}")
    return data


def _camera_rows(camera):
    return getattr(camera, "rows", camera)


def render(cube, spectrum, camera):
    """RGB image of a reflectance cube under ``spectrum`` seen by ``camera``."""
    data = _cube_data(cube)
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.shape != (N_BANDS,):
        raise ShapeError(f"spectrum must be ({N_BANDS},), got {spectrum.shape}")
    weights = np.asarray(_camera_rows(camera), dtype=np.float64) * spectrum
    return np.tensordot(weights, data, axes=(1, 0))


def split_vis(spectrum):
    """Copy of ``spectrum`` with every band at or beyond 700 nm set to zero."""
    out = np.array(spectrum, dtype=np.float64)
    if out.shape != (N_BANDS,):
        raise ShapeError(f"spectrum must be ({N_BANDS},), got {out.shape}")
    out[~VIS_MASK] = 0.0
    return out


def band_scale_factors(phi, phi_hat, epsilon=1e-9):
    """Energy ratios after projection for the visible part and the full band."""
    phi = np.asarray(phi, dtype=np.float64)
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    xi_vis = phi_hat[VIS_MASK].sum() / (phi[VIS_MASK].sum() + epsilon)
    xi_nir = phi_hat.sum() / (phi.sum() + epsilon)
    return float(xi_vis), float(xi_nir)


def clamp_unit(image):
    return np.clip(image, 0.0, 1.0)


# -- counter-based random numbers ---------------------------------------------

def _mix_int(x):
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_key(seed, *path):
    """Fold a seed and a sequence of non-negative ints into a 64-bit key."""
    key = _mix_int(int(seed) & _MASK64)
    for p in path:
        key = _mix_int(key ^ _mix_int(int(p) & _MASK64))
    return key


def _mix(x):
    x = x + _U_GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _U_M1
    x = (x ^ (x >> np.uint64(27))) * _U_M2
    return x ^ (x >> np.uint64(31))


def counter_uniform(key, counters, draw):
    """Uniform(0, 1) variates, one per counter, for the given draw number."""
    k = np.uint64(key)
    d = np.uint64(_mix_int((draw * _GOLDEN) & _MASK64))
    h = _mix(_mix(counters ^ k) ^ d)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def counter_normal(key, counters):
    u1 = counter_uniform(key, counters, 0)
    u2 = counter_uniform(key, counters, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _poisson_inversion(lam, key, counters):
    u = counter_uniform(key, counters, 0)
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    todo = u > cdf
    n = 0
    while todo.any() and n < 200:
        n += 1
        p = np.where(todo, p * lam / n, p)
        cdf = np.where(todo, cdf + p, cdf)
        k[todo] = n
        todo &= u > cdf
    return k


def _poisson_ptrs(lam, key, counters):
    # transformed rejection with squeeze (Hormann 1993)
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    out = np.zeros(lam.shape, dtype=np.int64)
    pending = np.arange(lam.size)
    rnd = 0
    while pending.size:
        c = counters[pending]
        u = counter_uniform(key, c, 1 + 2 * rnd) - 0.5
        v = counter_uniform(key, c, 2 + 2 * rnd)
        rnd += 1
        aa, bb, ll = a[pending], b[pending], lam[pending]
        us = 0.5 - np.abs(u)
        k = np.floor((2.0 * aa / us + bb) * u + ll + 0.43)
        fast = (us >= 0.07) & (v <= vr[pending])
        reject = (k < 0) | ((us < 0.013) & (v > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(v) + np.log(invalpha[pending]) - np.log(aa / (us * us) + bb)
            rhs = -ll + k * loglam[pending] - gammaln(k + 1.0)
        slow = ~fast & ~reject & (lhs <= rhs)
        done = fast | slow
        out[pending[done]] = k[done].astype(np.int64)
        pending = pending[~done]
    return out


def poisson_counter(lam, key, counters):
    """Poisson draws with means ``lam`` using counter-based uniforms.

    Means below 10 use CDF inversion, larger means use transformed
    rejection. ``counters`` identify each element's private stream.
    """
    lam = np.asarray(lam, dtype=np.float64)
    out = np.zeros(lam.shape, dtype=np.int64)
    small = lam < POISSON_INVERSION_LIMIT
    if small.any():
        out[small] = _poisson_inversion(lam[small], key, counters[small])
    if (~small).any():
        out[~small] = _poisson_ptrs(lam[~small], key, counters[~small])
    return out


# -- noise --------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroPattern:
    def sample(self, shape, key):
        return np.zeros(shape)

    @property
    def variance(self):
        return 0.0


@dataclass(frozen=True)
class GaussianPattern:
    """Zero-mean i.i.d. Gaussian field with standard deviation ``std``."""

    std: float = 1.0 / 255.0

    def sample(self, shape, key):
        if self.std == 0:
            return np.zeros(shape)
        counters = np.arange(int(np.prod(shape)), dtype=np.uint64)
        return self.std * counter_normal(key, counters).reshape(shape)

    @property
    def variance(self):
        return self.std**2


class FilePatternBank:
    """Additive noise patterns read from a raw little-endian float32 file.

    The file holds ``count`` patterns of shape ``(3, width, height)`` back to
    back. A draw picks a pattern and a crop window from the key.
    """

    def __init__(self, path, width, height):
        raw = np.fromfile(Path(path), dtype="<f4")
        plane = 3 * width * height
        if raw.size == 0 or raw.size % plane:
            raise ShapeError(f"{path}: size {raw.size} is not a multiple of 3*{width}*{height}")
        self.patterns = raw.reshape(-1, 3, width, height).astype(np.float64)

    @property
    def variance(self):
        return float(self.patterns.var())

    def sample(self, shape, key):
        _, w, h = shape
        n, _, pw, ph = self.patterns.shape
        if w > pw or h > ph:
            raise ShapeError(f"pattern {pw}x{ph} smaller than image {w}x{h}")
        idx = key % n
        ox = _mix_int(key ^ 1) % (pw - w + 1)
        oy = _mix_int(key ^ 2) % (ph - h + 1)
        return self.patterns[idx, :, ox:ox + w, oy:oy + h].copy()


@dataclass(frozen=True)
class NoiseModel:
    """Shot noise with camera gain ``kappa`` plus an additive pattern."""

    kappa: float = 1.0 / 255.0
    pattern: object = field(default_factory=GaussianPattern)
    seed: int = 0

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError(f"kappa must be > 0, got {self.kappa}")


def add_noise(image, xi, model, stream=(), workers=1):
    """``kappa * Poisson(image * xi / kappa) + N``, without clamping.

    ``stream`` is a tuple of non-negative ints that selects an independent
    noise realization under the model's seed (e.g. iteration, sample, branch).
    With ``workers > 1`` the Poisson draws are computed in channel chunks on
    a thread pool; the result is bit-identical to the serial path.
    """
    if not model.kappa > 0:
        raise DomainError(f"kappa must be > 0, got {model.kappa}")
    if not 0 <= xi <= 1:
        raise DomainError(f"xi must be in [0, 1], got {xi}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"image must be (3, W, H), got {image.shape}")
    if np.any(image < 0):
        raise DomainError("noise-free image must be non-negative")
    lam = (image * xi / model.kappa).ravel()
    key = derive_key(model.seed, _TAG_POISSON, *stream)
    counters = np.arange(lam.size, dtype=np.uint64)
    if workers > 1:
        chunks = np.array_split(np.arange(lam.size), workers)
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda idx: poisson_counter(lam[idx], key, counters[idx]), chunks))
        counts = np.concatenate(parts)
    else:
        counts = poisson_counter(lam, key, counters)
    shot = model.kappa * counts.reshape(image.shape)
    pattern = model.pattern.sample(image.shape, derive_key(model.seed, _TAG_PATTERN, *stream))
    return shot + pattern


# -- export -------------------------------------------------------------------

def write_f32(path, image):
    """Raw little-endian float32 planes in (channel, W, H) order."""
    np.ascontiguousarray(image, dtype="<f4").tofile(Path(path))


def read_f32(path, width, height):
    return np.fromfile(Path(path), dtype="<f4").reshape(3, width, height)


def write_png16(path, image):
    """16-bit RGB PNG after clamping to [0, 1]."""
    import cv2

    img = np.round(clamp_unit(np.asarray(image)) * 65535.0).astype(np.uint16)
    # (3, W, H) -> (H, W, BGR)
    bgr = np.ascontiguousarray(img[::-1].transpose(2, 1, 0))
    if not cv2.imwrite(str(path), bgr):
        raise OSError(f"could not write {path}")


def read_png16(path):
    import cv2

    bgr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if bgr is None:
        raise OSError(f"could not read {path}")
    return bgr.transpose(2, 1, 0)[::-1].astype(np.float64) / 65535.0
