"""Visibility-constrained illumination spectrum design for seeing in the dark."""

from .errors import DomainError, FormatError, NumericalAbort, RankError, ShapeError
from .spectra import (
    N_BANDS, WAVELENGTHS, LedBank, LuminosityTables, default_bank, mesopic, multiplex,
    perceived_power, photopic, scotopic,
)
from .visibility import DesignWeights, ProjectionResult, project, scale_factor
from .imaging import (
    CameraSensitivity, GaussianPattern, NoiseModel, add_noise, band_scale_factors,
    default_camera, render, split_vis,
)
from .dataset import HyperCube, SceneSpec, ground_truth, load_cube, save_cube, synth_scene
from .restore import (
    LinearReconstructor, apply_reconstructor, fit_reconstructor, mse_loss, psnr, ssim,
)
from .optimizer import DesignConfig, DesignProblem, design_spectrum, objective
from .realize import RealizationFit, fit_nnls

__version__ = "0.1.0"
