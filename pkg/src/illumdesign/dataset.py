"""
Hyperspectral cubes on disk, synthetic test scenes and ground-truth images.

HSC1 layout (all little-endian)::

    0   16 bytes  magic b"HSC1" + 8 zero bytes + u32 version (=1)
    16  u32 W, u32 H, u32 n_bands, u32 reserved
    32  n_bands float32 wavelengths (nm)
    ..  n_bands float32 planes of W*H values, band-major, row index = W axis
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .imaging import default_camera, render
from .spectra import N_BANDS, VIS_MASK, WAVELENGTHS, gaussian_curve

MAGIC = b"HSC1" + bytes(8)
VERSION = 1
_HEADER = struct.Struct("<4I")
_DATA_OFFSET = 16 + _HEADER.size + 4 * N_BANDS


@dataclass(frozen=True, eq=False)
class HyperCube:
    """Reflectance per band per pixel, shape ``(48, W, H)``."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != N_BANDS:
            raise ShapeError(f"cube must be ({N_BANDS}, W, H), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DomainError("cube contains non-finite values")
        if np.any(self.data < 0):
            raise DomainError("cube contains negative reflectance")

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[2]


# -- HSC1 ---------------------------------------------------------------------

def save_cube(path, cube):
    data = np.ascontiguousarray(getattr(cube, "data", cube), dtype="<f4")
    n, w, h = data.shape
    with Path(path).open("wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        fh.write(_HEADER.pack(w, h, n, 0))
        fh.write(WAVELENGTHS.astype("<f4").tobytes())
        fh.write(data.tobytes())


def _load_hsc1(path):
    raw = Path(path).read_bytes()
    if len(raw) < 32 or raw[:12] != MAGIC:
        raise FormatError(f"{path}: bad magic", 0)
    (version,) = struct.unpack_from("<I", raw, 12)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 12)
    w, h, n, _ = _HEADER.unpack_from(raw, 16)
    wl_end = 32 + 4 * n
    if len(raw) < wl_end:
        raise FormatError(f"{path}: truncated wavelength table", len(raw))
    wl = np.frombuffer(raw, dtype="<f4", count=n, offset=32)
    expected = wl_end + 4 * n * w * h
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, file has {len(raw)}", min(len(raw), expected))
    data = np.frombuffer(raw, dtype="<f4", offset=wl_end).reshape(n, w, h).copy()

    start = 0
    # cubes recorded from 400 nm carry two bands ahead of the shared grid
    if n == N_BANDS + 2 and wl[0] == 400 and wl[1] == 410:
        start = 2
    elif n != N_BANDS:
        raise FormatError(f"{path}: expected {N_BANDS} bands, found {n}", 24)
    bad = np.flatnonzero(wl[start:] != WAVELENGTHS)
    if bad.size:
        raise FormatError(f"{path}: wavelength table off the 420..890 nm grid", 32 + 4 * (start + int(bad[0])))
    flat = data.reshape(-1)
    bad = np.flatnonzero(~np.isfinite(flat) | (flat < 0))
    if bad.size:
        raise FormatError(f"{path}: non-finite or negative value", wl_end + 4 * int(bad[0]))
    return data[start:]


def _load_band_folder(path):
    import cv2

    planes = []
    for wl in WAVELENGTHS:
        f = Path(path) / f"{wl}.png"
        if not f.exists():
            raise FormatError(f"{path}: missing band file {f.name}")
        img = cv2.imread(str(f), cv2.IMREAD_UNCHANGED)
        if img is None or img.ndim != 2:
            raise FormatError(f"{f}: expected a single-channel PNG")
        scale = 65535.0 if img.dtype == np.uint16 else 255.0
        planes.append(img.T.astype(np.float32) / np.float32(scale))
    shapes = {p.shape for p in planes}
    if len(shapes) != 1:
        raise FormatError(f"{path}: band images differ in size")
    return np.stack(planes)


def load_cube(path):
    """Read an HSC1 file or a folder of per-band PNGs named ``<nm>.png``."""
    path = Path(path)
    data = _load_band_folder(path) if path.is_dir() else _load_hsc1(path)
    return HyperCube(data)


# -- synthetic scenes ---------------------------------------------------------

def flat(value):
    return np.full(N_BANDS, float(value))


def bump(center_nm, fwhm_nm, amplitude=0.8, base=0.1):
    return base + amplitude * gaussian_curve(center_nm, fwhm_nm, support_fwhm=np.inf)


def ramp(start, stop):
    return np.linspace(start, stop, N_BANDS)


def metamer_pair(shared, alt_a, alt_b, agree="vis"):
    """Two reflectances equal to ``shared`` on one band range, differing on the other.

    ``agree="vis"`` gives a pair identical below 700 nm (indistinguishable
    under visible light); ``agree="nir"`` gives a pair identical at and above
    700 nm (indistinguishable under NIR-only light).
    """
    keep = VIS_MASK if agree == "vis" else ~VIS_MASK
    a = np.where(keep, shared, alt_a)
    b = np.where(keep, shared, alt_b)
    return a, b


def random_reflectance(rng):
    """Smooth random reflectance in [0, 1]: a floor plus two Gaussian bumps."""
    curve = np.full(N_BANDS, rng.uniform(0.02, 0.2))
    for _ in range(2):
        curve += rng.uniform(0.1, 0.45) * gaussian_curve(
            rng.uniform(420, 890), rng.uniform(40, 200), support_fwhm=np.inf)
    return np.clip(curve, 0.0, 1.0)


@dataclass
class SceneSpec:
    """Patch-grid scene.

    Patches are filled row-major from ``patch_spectra``; any remaining
    patches get random smooth reflectances drawn from ``seed``.
    """

    rows: int
    cols: int
    patch_spectra: list = field(default_factory=list)
    patch_size: int = 8
    seed: int = 0


def synth_scene(spec):
    if spec.rows < 1 or spec.cols < 1 or spec.patch_size < 1:
        raise DomainError("scene layout must have at least one patch of at least one pixel")
    n = spec.rows * spec.cols
    if len(spec.patch_spectra) > n:
        raise DomainError(f"{len(spec.patch_spectra)} spectra for {n} patches")
    rng = np.random.default_rng(spec.seed)
    spectra = [np.asarray(s, dtype=np.float64) for s in spec.patch_spectra]
    spectra += [random_reflectance(rng) for _ in range(n - len(spectra))]
    ps = spec.patch_size
    data = np.empty((N_BANDS, spec.cols * ps, spec.rows * ps))
    for idx, refl in enumerate(spectra):
        if refl.shape != (N_BANDS,) or np.any(refl < 0) or np.any(refl > 1):
            raise DomainError(f"patch {idx}: reflectance must be {N_BANDS} values in [0, 1]")
        r, c = divmod(idx, spec.cols)
        data[:, c * ps:(c + 1) * ps, r * ps:(r + 1) * ps] = refl[:, None, None]
    return HyperCube(data)


# -- ground truth -------------------------------------------------------------

def default_white_led(camera=None):
    """Phosphor-style white LED, zero from 700 nm, scaled so white paper renders at 1.0.

    Blue pump at 450 nm plus a broad lobe around 570 nm.
    """
    camera = default_camera() if camera is None else camera
    curve = gaussian_curve(450.0, 20.0, support_fwhm=np.inf) + 0.75 * gaussian_curve(
        570.0, 110.0, support_fwhm=np.inf)
    curve[~VIS_MASK] = 0.0
    return curve / (camera.rows @ curve).max()


def ground_truth(cube, white_led, camera):
    return render(cube, white_led, camera)


# -- manifest -----------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Cube paths with a train/test assignment; ``scene_id`` is the file stem."""

    entries: list  # (path, scene_id, split)

    def split(self, name):
        return [(p, s) for p, s, sp in self.entries if sp == name]

    @property
    def train(self):
        return self.split("train")

    @property
    def test(self):
        return self.split("test")


def read_manifest(path):
    """Parse ``path<TAB>split`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1].strip() not in ("train", "test"):
            raise FormatError(f"{path}: expected 'path<TAB>train|test'", lineno)
        cube_path = Path(parts[0])
        if not cube_path.is_absolute():
            cube_path = path.parent / cube_path
        entries.append((cube_path, cube_path.stem, parts[1].strip()))
    seen = {}
    for p, _, sp in entries:
        key = p.resolve()
        if seen.setdefault(key, sp) != sp:
            raise FormatError(f"{path}: {p} appears in both train and test")
    return DatasetManifest(entries)


def write_manifest(path, entries):
    """``entries`` is an iterable of ``(cube_path, split)``."""
    with Path(path).open("w") as fh:
        for p, sp in entries:
            fh.write(f"{p}\t{sp}\n")
