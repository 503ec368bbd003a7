"""
Wavelength grid, luminosity functions and LED multiplexing.

Every spectral quantity in the package lives on one fixed grid: 48 bands
from 420 nm to 890 nm in 10 nm steps. Curves are plain float64 numpy
arrays of length 48; integrals over wavelength are dot products on this
grid with the 10 nm step folded into the tables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError

START_NM = 420
STEP_NM = 10
N_BANDS = 48
WAVELENGTHS = START_NM + STEP_NM * np.arange(N_BANDS)

#: first band index at or beyond 700 nm (bands 0..27 are visible)
VIS_CUTOFF_NM = 700
N_VIS = int(np.searchsorted(WAVELENGTHS, VIS_CUTOFF_NM))
VIS_MASK = WAVELENGTHS < VIS_CUTOFF_NM

SCOTOPIC_PEAK = 1700.0
PHOTOPIC_PEAK = 683.0

# CIE 1924 photopic V(lambda), 420..780 nm at 10 nm; zero beyond.
_CIE_PHOTOPIC = np.array([
    0.004, 0.0116, 0.023, 0.038, 0.06, 0.09098, 0.13902, 0.20802, 0.323,
    0.503, 0.71, 0.862, 0.954, 0.99495, 0.995, 0.952, 0.87, 0.757, 0.631,
    0.503, 0.381, 0.265, 0.175, 0.107, 0.061, 0.032, 0.017, 0.00821,
    0.004102, 0.002091, 0.001047, 0.00052, 0.000249, 0.00012, 0.00006,
    0.00003, 0.000015,
])

# CIE 1951 scotopic V'(lambda), 420..690 nm at 10 nm. The tabulated tail
# beyond 690 nm is below 2e-5 of the peak and is treated as exactly zero.
_CIE_SCOTOPIC = np.array([
    0.0966, 0.1998, 0.3281, 0.455, 0.567, 0.676, 0.793, 0.904, 0.982,
    0.997, 0.935, 0.811, 0.65, 0.481, 0.3288, 0.2076, 0.1212, 0.0655,
    0.03315, 0.01593, 0.00737, 0.003335, 0.001497, 0.000677, 0.0003129,
    0.000148, 0.0000715, 0.00003533,
])


def band_index(wavelength_nm):
    """Index of the grid band nearest to ``wavelength_nm``."""
    return int(np.argmin(np.abs(WAVELENGTHS - wavelength_nm)))


def as_curve(values, name="curve"):
    """Validate ``values`` as a spectral curve and return a float64 copy."""
    arr = np.array(values, dtype=np.float64)
    if arr.shape != (N_BANDS,):
        raise ShapeError(f"{name} must have shape ({N_BANDS},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise DomainError(f"{name} contains negative values")
    return arr


def _pad(table):
    out = np.zeros(N_BANDS)
    out[: len(table)] = table
    return out


def photopic():
    """Photopic luminosity on the grid, peak scaled to 683."""
    v = _pad(_CIE_PHOTOPIC)
    return v / v.max() * PHOTOPIC_PEAK


def scotopic():
    """Scotopic luminosity on the grid, peak 1700 at the 510 nm band."""
    v = _pad(_CIE_SCOTOPIC)
    return v / v.max() * SCOTOPIC_PEAK


@dataclass(frozen=True)
class LuminosityTables:
    photopic: np.ndarray = field(default_factory=photopic)
    scotopic: np.ndarray = field(default_factory=scotopic)


def mesopic(photopic_curve, scotopic_curve, x):
    """Blend of the two luminosity functions, ``(1 - x) * scotopic + x * photopic``."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"mesopic mixing parameter must be in [0, 1], got {x}")
    v = as_curve(photopic_curve, "photopic")
    vs = as_curve(scotopic_curve, "scotopic")
    if x == 0.0:
        return vs
    if x == 1.0:
        return v
    return (1.0 - x) * vs + x * v


def perceived_power(luminosity, spectrum):
    """Inner product of a luminosity function with a spectrum."""
    lum = np.asarray(luminosity, dtype=np.float64)
    spec = np.asarray(spectrum, dtype=np.float64)
    if lum.shape != (N_BANDS,) or spec.shape != (N_BANDS,):
        raise ShapeError(f"expected two ({N_BANDS},) curves, got {lum.shape} and {spec.shape}")
    return float(lum @ spec)


def gaussian_curve(center_nm, fwhm_nm, peak=1.0, support_fwhm=1.5):
    """Gaussian sampled on the grid and truncated to ``|d| <= support_fwhm * fwhm``."""
    d = WAVELENGTHS - center_nm
    curve = peak * np.exp2(-4.0 * (d / fwhm_nm) ** 2)
    curve[np.abs(d) > support_fwhm * fwhm_nm] = 0.0
    return curve


@dataclass(frozen=True, eq=False)
class LedBank:
    """K LED emission spectra plus a flag per base telling whether it is visible.

    ``vis_active[k]`` is true iff the scotopic perceived power of base k is
    strictly positive. Build with :meth:`from_bases` so the flags are derived
    from the data rather than supplied.
    """

    bases: np.ndarray
    vis_active: np.ndarray

    @classmethod
    def from_bases(cls, bases, scotopic_curve=None):
        arr = np.array(bases, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != N_BANDS:
            raise ShapeError(f"bank must have shape (K, {N_BANDS}), got {arr.shape}")
        if arr.shape[0] < 1:
            raise DomainError("bank needs at least one base")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DomainError("bank bases must be finite and non-negative")
        if np.any(~arr.any(axis=1)):
            raise DomainError("bank contains an all-zero base")
        vs = scotopic() if scotopic_curve is None else as_curve(scotopic_curve, "scotopic")
        arr.setflags(write=False)
        active = arr @ vs > 0
        active.setflags(write=False)
        return cls(arr, active)

    @property
    def k(self):
        return self.bases.shape[0]

    def __len__(self):
        return self.bases.shape[0]

    def subset(self, indices):
        idx = list(indices)
        return LedBank(self.bases[idx].copy(), self.vis_active[idx].copy())


def default_bank(k=26, fwhm_nm=20.0):
    """``k`` unit-peak Gaussian LEDs with centres evenly spaced over the grid."""
    centers = np.linspace(WAVELENGTHS[0], WAVELENGTHS[-1], k)
    return LedBank.from_bases([gaussian_curve(c, fwhm_nm) for c in centers])


def multiplex(bank, weights):
    """Weighted sum of the bank's bases.

    ``weights`` may be a :class:`~illumdesign.visibility.DesignWeights` or an
    array of K non-negative coefficients.
    """
    sigma = np.asarray(getattr(weights, "sigma", weights), dtype=np.float64)
    if sigma.shape != (bank.k,):
        raise ShapeError(f"expected {bank.k} weights, got shape {sigma.shape}")
    return sigma @ bank.bases


# -- CSV ----------------------------------------------------------------------

def format_float(v):
    return repr(float(v))


def read_grid_table(path, expected_header_prefix):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0].strip() != expected_header_prefix:
        raise FormatError(f"{path}: header must start with '{expected_header_prefix}'", 0)
    body = [r for r in rows[1:] if r]
    if len(body) != N_BANDS:
        raise FormatError(f"{path}: expected {N_BANDS} data rows, found {len(body)}", len(body) + 1)
    try:
        table = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from None
    if table.ndim != 2 or table.shape[1] != len(rows[0]):
        raise FormatError(f"{path}: ragged rows")
    bad = np.flatnonzero(table[:, 0] != WAVELENGTHS)
    if bad.size:
        raise FormatError(f"{path}: wavelength column must be 420..890 step 10", int(bad[0]) + 1)
    vals = table[:, 1:]
    bad_rows = np.flatnonzero(~np.all(np.isfinite(vals) & (vals >= 0), axis=1))
    if bad_rows.size:
        raise FormatError(f"{path}: values must be finite and >= 0", int(bad_rows[0]) + 1)
    return rows[0], vals


def read_spectrum(path):
    header, vals = read_grid_table(path, "wavelength_nm")
    if len(header) != 2:
        raise FormatError(f"{path}: expected header 'wavelength_nm,value'", 0)
    return vals[:, 0].copy()


def write_spectrum(path, curve):
    curve = as_curve(curve)
    with Path(path).open("w", newline="") as fh:
        fh.write("wavelength_nm,value\n")
        for wl, v in zip(WAVELENGTHS, curve):
            fh.write(f"{wl},{format_float(v)}\n")


def read_bank(path, scotopic_curve=None):
    header, vals = read_grid_table(path, "wavelength_nm")
    if len(header) < 2:
        raise FormatError(f"{path}: bank needs at least one base column", 0)
    return LedBank.from_bases(vals.T, scotopic_curve)


def write_bank(path, bank):
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(["wavelength_nm"] + [f"base_{k}" for k in range(bank.k)]) + "\n")
        for n, wl in enumerate(WAVELENGTHS):
            fh.write(",".join([str(wl)] + [format_float(v) for v in bank.bases[:, n]]) + "\n")
