"""
Gradient-descent design of LED weights under the visibility constraint.

Each evaluation runs the full pipeline: multiplex the bank, project onto
the visibility bound, render the VIS-only and full-band images, add shot
and pattern noise, fit the affine reconstructor and score it against the
white-light ground truth.

Gradients come from one of three routes:

``analytic-noise-free``
    exact chain rule through the pipeline with noise removed (inputs equal
    their means).
``analytic-expected-noise``
    exact chain rule through the noise-free pipeline plus the expected
    effect of independent shot and pattern noise on the fitted
    reconstructor (a data-dependent ridge term).
``finite-difference``
    central differences of the reported (noisy) objective, using the same
    noise streams on both sides.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericalAbort, ShapeError
from .imaging import GaussianPattern, NoiseModel, ZeroPattern, add_noise, derive_key
from .restore import fitted_loss
from .spectra import VIS_MASK
from .visibility import scale_factor

GRAD_MODES = ("analytic-noise-free", "analytic-expected-noise", "finite-difference")

_TAG_BATCH = 0x4241
EVAL_STREAM = (1 << 62,)


@dataclass
class DesignConfig:
    psi_hat: float = 10.0
    epsilon: float = 1e-9
    iters: int = 50_000
    step_size: float = 1e-3
    decay_every: int = 20_000
    decay_factor: float = 0.1
    batch: int = 16
    grad_mode: str = "analytic-expected-noise"
    fd_step: float = 1e-3
    seed: int = 0
    noise: bool = True
    kappa: float = 1.0 / 255.0
    noise_std: float = 1.0 / 255.0
    ridge: float = 1e-6
    init_logit: float = 0.0
    checkpoint_every: int = 100
    workers: int = 1
    # Reference training used Adam(beta1=0.5, beta2=0.999); this loop is plain descent.

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.psi_hat > 0:
            raise DomainError(f"psi_hat must be > 0, got {self.psi_hat}")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be > 0")
        if self.iters < 1 or self.batch < 1 or self.checkpoint_every < 1 or self.decay_every < 1:
            raise DomainError("iters, batch, decay_every and checkpoint_every must be >= 1")
        if not self.step_size > 0:
            raise DomainError("step_size must be > 0")
        if self.grad_mode not in GRAD_MODES:
            raise DomainError(f"grad_mode must be one of {GRAD_MODES}, got {self.grad_mode!r}")
        if not self.kappa > 0:
            raise DomainError("kappa must be > 0")
        if self.noise_std < 0 or self.ridge < 0 or not self.fd_step > 0:
            raise DomainError("noise_std and ridge must be >= 0, fd_step > 0")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")

    def learning_rate(self, t):
        return self.step_size * self.decay_factor ** (t // self.decay_every)

    def noise_model(self):
        pattern = GaussianPattern(self.noise_std) if self.noise_std > 0 else ZeroPattern()
        return NoiseModel(self.kappa, pattern, self.seed)


@dataclass
class Projected:
    """Forward quantities of the spectral part of the pipeline."""

    sigma: np.ndarray
    phi: np.ndarray
    psi: float
    xi: float
    sigma_hat: np.ndarray
    phi_hat: np.ndarray
    psi_after: float
    xi_vis: float
    xi_nir: float


class DesignProblem:
    """Bank, camera, luminosity and ground-truth illuminant bound to a config."""

    def __init__(self, bank, camera, scotopic, white_led, config):
        self.bank = bank
        self.camera_rows = np.asarray(getattr(camera, "rows", camera), dtype=np.float64)
        self.scotopic = np.asarray(scotopic, dtype=np.float64)
        self.white_led = np.asarray(white_led, dtype=np.float64)
        self.config = config
        self.noise_model = config.noise_model()
        self._gt = {}

    # -- spectral part --------------------------------------------------------

    def spectral(self, logits):
        cfg = self.config
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (self.bank.k,):
            raise ShapeError(f"expected {self.bank.k} logits, got shape {logits.shape}")
        b = self.bank.bases
        sigma = expit(logits)
        phi = sigma @ b
        psi = float(self.scotopic @ phi)
        xi = scale_factor(psi, cfg.psi_hat, cfg.epsilon)
        sigma_hat = np.where(self.bank.vis_active, xi * sigma, sigma)
        phi_hat = sigma_hat @ b
        d_vis = phi[VIS_MASK].sum() + cfg.epsilon
        d_all = phi.sum() + cfg.epsilon
        return Projected(
            sigma, phi, psi, xi, sigma_hat, phi_hat, float(self.scotopic @ phi_hat),
            float(phi_hat[VIS_MASK].sum() / d_vis), float(phi_hat.sum() / d_all),
        )

    # -- per-scene rendering --------------------------------------------------

    def _flat(self, cube):
        data = np.asarray(getattr(cube, "data", cube), dtype=np.float64)
        return data.reshape(data.shape[0], -1), data.shape[1:]

    def ground_truth(self, cube):
        key = id(cube)
        hit = self._gt.get(key)
        if hit is None or hit[0] is not cube:
            t, _ = self._flat(cube)
            hit = (cube, (self.camera_rows * self.white_led) @ t)
            self._gt[key] = hit
        return hit[1]

    def _images(self, t, proj):
        """Noise-free VIS-only and full-band renders, each ``(3, P)``."""
        w_nir = self.camera_rows * proj.phi_hat
        w_vis = w_nir * VIS_MASK
        return w_vis @ t, w_nir @ t

    def _sample(self, cube, proj, stream, noisy):
        t, shape = self._flat(cube)
        i_vis, i_nir = self._images(t, proj)
        if noisy:
            m = self.noise_model
            z_vis = add_noise(i_vis.reshape(3, *shape), proj.xi_vis, m, stream + (0,)).reshape(3, -1)
            z_nir = add_noise(i_nir.reshape(3, *shape), proj.xi_nir, m, stream + (1,)).reshape(3, -1)
        else:
            z_vis = proj.xi_vis * i_vis
            z_nir = proj.xi_nir * i_nir
        return z_vis, z_nir

    def _design(self, cubes, proj, stream, noisy):
        jobs = [(c, stream + (j,)) for j, c in enumerate(cubes)]
        run = lambda job: self._sample(job[0], proj, job[1], noisy)
        if self.config.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.config.workers) as pool:
                parts = list(pool.map(run, jobs))
        else:
            parts = [run(j) for j in jobs]
        z_vis = np.concatenate([p[0] for p in parts], axis=1)
        z_nir = np.concatenate([p[1] for p in parts], axis=1)
        z = np.column_stack([z_vis.T, z_nir.T, np.ones(z_vis.shape[1])])
        y = np.concatenate([self.ground_truth(c) for c in cubes], axis=1).T
        return z, y

    # -- objective ------------------------------------------------------------

    def loss(self, logits, cubes, stream=(0,), noisy=None):
        """Pooled restoration MSE over ``cubes``; noisy per config unless overridden."""
        if not cubes:
            raise DomainError("objective needs a non-empty batch")
        noisy = self.config.noise if noisy is None else noisy
        proj = self.spectral(logits)
        z, y = self._design(cubes, proj, tuple(stream), noisy)
        return float(fitted_loss(z, y, self.config.ridge))

    def loss_and_grad(self, logits, cubes, expected_noise=False):
        """Noise-free pipeline loss and its exact gradient with respect to the logits.

        With ``expected_noise`` the fitted reconstructor also accounts for the
        mean effect of the configured shot and pattern noise.
        """
        if not cubes:
            raise DomainError("objective needs a non-empty batch")
        cfg = self.config
        proj = self.spectral(logits)
        t = np.concatenate([self._flat(c)[0] for c in cubes], axis=1)
        y = np.concatenate([self.ground_truth(c) for c in cubes], axis=1).T
        i_vis, i_nir = self._images(t, proj)
        z_vis, z_nir = proj.xi_vis * i_vis, proj.xi_nir * i_nir
        z = np.column_stack([z_vis.T, z_nir.T, np.ones(t.shape[1])])

        kappa = cfg.kappa
        noise_var = None
        if expected_noise and cfg.noise:
            n_pix = t.shape[1]
            pat = self.noise_model.pattern.variance
            noise_var = np.concatenate([
                kappa * z_vis.sum(axis=1) + n_pix * pat,
                kappa * z_nir.sum(axis=1) + n_pix * pat,
                [0.0],
            ])
        loss, dz, ds = fitted_loss(z, y, cfg.ridge, noise_var, grad=True)
        g_zvis = dz[:, :3].T
        g_znir = dz[:, 3:6].T
        if noise_var is not None:
            g_zvis = g_zvis + kappa * ds[:3, None]
            g_znir = g_znir + kappa * ds[3:6, None]
        return loss, self._backprop(proj, t, i_vis, i_nir, g_zvis, g_znir)

    def _backprop(self, proj, t, i_vis, i_nir, g_zvis, g_znir):
        cfg = self.config
        c = self.camera_rows
        b = self.bank.bases
        mask = VIS_MASK.astype(np.float64)

        g_xv = float(np.sum(g_zvis * i_vis))
        g_xn = float(np.sum(g_znir * i_nir))
        # images are linear in phi_hat: I[c, p] = sum_n T[n, p] * w_n * phi_hat[n] * C[c, n]
        q_vis = (proj.xi_vis * g_zvis) @ t.T
        q_nir = (proj.xi_nir * g_znir) @ t.T
        g_phi_hat = mask * np.sum(q_vis * c, axis=0) + np.sum(q_nir * c, axis=0)
        g_phi = np.zeros_like(g_phi_hat)

        d_vis = proj.phi[VIS_MASK].sum() + cfg.epsilon
        d_all = proj.phi.sum() + cfg.epsilon
        g_phi_hat += g_xv / d_vis * mask + g_xn / d_all
        g_phi -= g_xv * proj.xi_vis / d_vis * mask + g_xn * proj.xi_nir / d_all

        active = self.bank.vis_active
        g_sigma_hat = b @ g_phi_hat
        g_sigma = g_sigma_hat * np.where(active, proj.xi, 1.0)
        g_xi = float(np.sum(g_sigma_hat * proj.sigma * active))
        if proj.psi > cfg.psi_hat and cfg.psi_hat / (proj.psi + cfg.epsilon) < 1.0:
            g_psi = -g_xi * cfg.psi_hat / (proj.psi + cfg.epsilon) ** 2
            g_phi += g_psi * self.scotopic
        g_sigma += b @ g_phi
        return g_sigma * proj.sigma * (1.0 - proj.sigma)

    def fd_grad(self, logits, cubes, stream=(0,), noisy=None, h=None):
        """Central differences of :meth:`loss`, same noise streams on both sides."""
        h = self.config.fd_step if h is None else h
        logits = np.asarray(logits, dtype=np.float64)
        g = np.empty_like(logits)
        for k in range(logits.size):
            e = np.zeros_like(logits)
            e[k] = h
            g[k] = (self.loss(logits + e, cubes, stream, noisy)
                    - self.loss(logits - e, cubes, stream, noisy)) / (2 * h)
        return g


def objective(logits, batch_cubes, bank, camera, scotopic, config, white_led=None, stream=(0,)):
    """Mean restoration loss of the batch for the given design logits."""
    from .dataset import default_white_led

    white = default_white_led(camera) if white_led is None else white_led
    return DesignProblem(bank, camera, scotopic, white, config).loss(logits, batch_cubes, stream)


# -- descent loop -------------------------------------------------------------

@dataclass
class DesignTrace:
    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


@dataclass
class DesignResult:
    sigma_star: np.ndarray
    logits_star: np.ndarray
    curve: np.ndarray
    projection: Projected
    best_loss: float
    trace: DesignTrace

    def sidecar(self, psi_hat):
        p = self.projection
        return {
            "sigma": self.sigma_star.tolist(),
            "sigma_hat": p.sigma_hat.tolist(),
            "xi": p.xi,
            "xi_vis": p.xi_vis,
            "xi_nir": p.xi_nir,
            "psi_after": p.psi_after,
            "psi_hat": psi_hat,
            "loss": self.best_loss,
        }


class _BatchSampler:
    """Consecutive batches from shuffled epochs of ``n`` items."""

    def __init__(self, n, seed):
        self.n = n
        self.rng = np.random.default_rng(derive_key(seed, _TAG_BATCH))
        self.queue = []

    def next(self, size):
        out = []
        while len(out) < size:
            if not self.queue:
                self.queue = list(self.rng.permutation(self.n))
            out.append(int(self.queue.pop(0)))
        return out


def design_spectrum(train_cubes, bank, camera, scotopic, config, white_led=None, log=None):
    """Optimize design logits on ``train_cubes`` and return the best design seen.

    ``train_cubes`` is a sequence of cubes (arrays or :class:`HyperCube`).
    ``log``, if given, is called with each checkpoint record.
    """
    from .dataset import default_white_led

    if not train_cubes:
        raise DomainError("training split is empty")
    white = default_white_led(camera) if white_led is None else white_led
    problem = DesignProblem(bank, camera, scotopic, white, config)
    cfg = config
    sampler = _BatchSampler(len(train_cubes), cfg.seed)
    logits = np.full(bank.k, float(cfg.init_logit))
    best_loss, best_logits = math.inf, logits.copy()
    trace = DesignTrace()

    for t in range(cfg.iters):
        cubes = [train_cubes[i] for i in sampler.next(cfg.batch)]
        stream = (t,)
        if cfg.grad_mode == "finite-difference":
            loss = problem.loss(logits, cubes, stream)
            grad = problem.fd_grad(logits, cubes, stream)
        else:
            _, grad = problem.loss_and_grad(
                logits, cubes, expected_noise=cfg.grad_mode == "analytic-expected-noise")
            loss = problem.loss(logits, cubes, stream) if cfg.noise else _
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalAbort(f"non-finite loss or gradient at iteration {t}", trace)
        if loss < best_loss:
            best_loss, best_logits = loss, logits.copy()
        if t % cfg.checkpoint_every == 0 or t == cfg.iters - 1:
            proj = problem.spectral(logits)
            rec = dict(iteration=t, sigma=proj.sigma.tolist(), xi=proj.xi,
                       psi_after=proj.psi_after, loss=loss, best_loss=best_loss,
                       lr=cfg.learning_rate(t))
            trace.append(**rec)
            if log is not None:
                log(rec)
        logits = logits - cfg.learning_rate(t) * grad

    proj = problem.spectral(best_logits)
    return DesignResult(proj.sigma, best_logits, proj.phi_hat, proj, best_loss, trace)


def config_dict(config):
    return asdict(config)
