"""
Command-line entry point.

Every command writes its effective configuration (``config.json``) into
``--out`` before doing any work. Passing that file back through
``--config`` replays the run; flags given on the command line override
values from the file.

Exit codes: 0 ok, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .dataset import (
    SceneSpec, default_white_led, load_cube, read_manifest, save_cube, synth_scene,
    write_manifest,
)
from .errors import DomainError, FormatError, NumericalAbort, RankError, ShapeError
from .imaging import (
    GaussianPattern, NoiseModel, ZeroPattern, add_noise, default_camera, read_camera,
    render, split_vis, write_f32, write_png16,
)
from .optimizer import GRAD_MODES, DesignConfig, design_spectrum
from .realize import fit_nnls
from .restore import apply_reconstructor, fit_reconstructor, metrics_record
from .spectra import default_bank, read_bank, read_spectrum, scotopic, write_spectrum

log = logging.getLogger("illumdesign")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(Exception):
    pass


# -- shared plumbing ----------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON config; flags override its values")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="64-bit seed for all randomness")
    p.add_argument("--bank", help="LED bank CSV (default: 26 Gaussian LEDs)")
    p.add_argument("--camera", help="camera sensitivity CSV wavelength_nm,R,G,B")
    p.add_argument("--scotopic", help="scotopic luminosity override (spectrum CSV)")
    p.add_argument("--white", help="ground-truth white LED (spectrum CSV)")


def _add_noise(p):
    p.add_argument("--kappa", type=float, help="camera gain (default 1/255)")
    p.add_argument("--noise-std", type=float, help="std of the additive pattern (default 1/255)")
    p.add_argument("--noise", dest="noise", action="store_true", default=None)
    p.add_argument("--no-noise", dest="noise", action="store_false")


_COMMON_DEFAULTS = {
    "config": None, "out": None, "seed": 0, "bank": None, "camera": None,
    "scotopic": None, "white": None,
}
_NOISE_DEFAULTS = {"kappa": 1.0 / 255.0, "noise_std": 1.0 / 255.0, "noise": True}


def _resolve(args, defaults):
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"--config: file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config: invalid JSON ({exc})") from None
        unknown = set(loaded) - set(defaults) - {"command"}
        if unknown:
            raise ConfigError(f"--config: unknown keys {sorted(unknown)}")
        cfg.update({k: v for k, v in loaded.items() if k != "command"})
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None and key != "config":
            cfg[key] = val
    cfg["config"] = None
    for key in ("bank", "camera", "scotopic", "white", "manifest", "cube", "curve", "design",
                "target"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    if not cfg.get("out"):
        raise ConfigError("--out is required")
    return cfg


def _write_config(cfg, command):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": command, **{k: v for k, v in cfg.items() if k != "config"}}
    (out / "config.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return out


def _require_file(cfg, key, flag):
    if not cfg.get(key):
        raise ConfigError(f"{flag} is required")
    if not Path(cfg[key]).exists():
        raise ConfigError(f"{flag}: not found: {cfg[key]}")
    return Path(cfg[key])


def _physics(cfg):
    scot = read_spectrum(cfg["scotopic"]) if cfg.get("scotopic") else scotopic()
    bank = read_bank(cfg["bank"], scot) if cfg.get("bank") else default_bank()
    if not cfg.get("bank") and cfg.get("scotopic"):
        bank = type(bank).from_bases(bank.bases, scot)
    camera = read_camera(cfg["camera"]) if cfg.get("camera") else default_camera()
    white = read_spectrum(cfg["white"]) if cfg.get("white") else default_white_led(camera)
    return scot, bank, camera, white


def _noise_model(cfg):
    if not cfg["kappa"] > 0:
        raise DomainError("--kappa must be > 0")
    if cfg["noise_std"] < 0:
        raise DomainError("--noise-std must be >= 0")
    pattern = GaussianPattern(cfg["noise_std"]) if cfg["noise_std"] > 0 else ZeroPattern()
    return NoiseModel(cfg["kappa"], pattern, cfg["seed"])


def _load_split(manifest_path, split):
    manifest = read_manifest(manifest_path)
    items = manifest.split(split)
    return [(sid, load_cube(p)) for p, sid in items]


# -- design -------------------------------------------------------------------

_DESIGN_FIELDS = {f.name: f.default for f in fields(DesignConfig)}


def _design_parser(sub):
    p = sub.add_parser("design", help="optimize LED weights under the visibility bound")
    _add_common(p)
    _add_noise(p)
    p.add_argument("--manifest", help="dataset manifest (path<TAB>train|test)")
    p.add_argument("--psi-hat", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--decay-every", type=int)
    p.add_argument("--decay-factor", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--grad-mode", choices=GRAD_MODES)
    p.add_argument("--fd-step", type=float)
    p.add_argument("--ridge", type=float)
    p.add_argument("--init-logit", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_design)


def cmd_design(args):
    defaults = {**_COMMON_DEFAULTS, **_DESIGN_FIELDS, "manifest": None}
    cfg = _resolve(args, defaults)
    manifest = _require_file(cfg, "manifest", "--manifest")
    design_cfg = DesignConfig(**{k: cfg[k] for k in _DESIGN_FIELDS})
    out = _write_config(cfg, "design")

    scot, bank, camera, white = _physics(cfg)
    train = [c for _, c in _load_split(manifest, "train")]
    if not train:
        raise ConfigError("--manifest: training split is empty")
    trace_path = out / "trace.jsonl"
    try:
        result = design_spectrum(train, bank, camera, scot, design_cfg, white,
                                 log=lambda rec: log.info("iter %d loss %.6g", rec["iteration"], rec["loss"]))
    except NumericalAbort as exc:
        if exc.trace is not None:
            trace_path.write_text(exc.trace.to_jsonl())
        raise
    trace_path.write_text(result.trace.to_jsonl())
    write_spectrum(out / "curve.csv", result.curve)
    (out / "design.json").write_text(json.dumps(result.sidecar(design_cfg.psi_hat), indent=2) + "\n")
    print(f"best loss {result.best_loss:.6g}, psi {result.projection.psi_after:.6g} "
          f"(limit {design_cfg.psi_hat}) -> {out}")
    return EXIT_OK


# -- simulate -----------------------------------------------------------------

def _simulate_parser(sub):
    p = sub.add_parser("simulate", help="render VIS, VIS+NIR and ground-truth images")
    _add_common(p)
    _add_noise(p)
    p.add_argument("--cube", help="HSC1 cube or band folder")
    p.add_argument("--curve", help="illuminant spectrum CSV")
    p.add_argument("--design", help="design.json sidecar supplying xi_vis / xi_nir")
    p.add_argument("--xi-vis", type=float)
    p.add_argument("--xi-nir", type=float)
    p.set_defaults(func=cmd_simulate)


def _xi_pair(cfg):
    xv, xn = 1.0, 1.0
    if cfg.get("design"):
        side = json.loads(Path(cfg["design"]).read_text())
        xv, xn = side.get("xi_vis", 1.0), side.get("xi_nir", 1.0)
    if cfg.get("xi_vis") is not None:
        xv = cfg["xi_vis"]
    if cfg.get("xi_nir") is not None:
        xn = cfg["xi_nir"]
    return xv, xn


def _inputs(cube, curve, camera, xv, xn, model, noisy, stream):
    i_vis = render(cube, split_vis(curve), camera)
    i_nir = render(cube, curve, camera)
    if noisy:
        return (add_noise(i_vis, xv, model, stream + (0,)),
                add_noise(i_nir, xn, model, stream + (1,)))
    return xv * i_vis, xn * i_nir


def cmd_simulate(args):
    defaults = {**_COMMON_DEFAULTS, **_NOISE_DEFAULTS, "cube": None, "curve": None,
                "design": None, "xi_vis": None, "xi_nir": None}
    cfg = _resolve(args, defaults)
    cube_path = _require_file(cfg, "cube", "--cube")
    curve_path = _require_file(cfg, "curve", "--curve")
    model = _noise_model(cfg)
    xv, xn = _xi_pair(cfg)
    out = _write_config(cfg, "simulate")

    _, _, camera, white = _physics(cfg)
    cube = load_cube(cube_path)
    curve = read_spectrum(curve_path)
    vis, nir = _inputs(cube, curve, camera, xv, xn, model, cfg["noise"], (0,))
    gt = render(cube, white, camera)
    for name, img in (("vis", vis), ("nir", nir), ("gt", gt)):
        write_f32(out / f"{name}.f32", img)
        write_png16(out / f"{name}.png", img)
    (out / "shape.json").write_text(json.dumps({"channels": 3, "width": cube.width,
                                                "height": cube.height, "dtype": "<f4"}) + "\n")
    print(f"wrote vis/nir/gt ({cube.width}x{cube.height}) -> {out}")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------------

def _evaluate_parser(sub):
    p = sub.add_parser("evaluate", help="fit the reconstructor on train, score test scenes")
    _add_common(p)
    _add_noise(p)
    p.add_argument("--manifest")
    p.add_argument("--curve", help="illuminant spectrum CSV (e.g. a designed curve.csv)")
    p.add_argument("--design", help="design.json sidecar supplying xi_vis / xi_nir")
    p.add_argument("--xi-vis", type=float)
    p.add_argument("--xi-nir", type=float)
    p.add_argument("--ridge", type=float)
    p.add_argument("--self-check", dest="self_check", action="store_true", default=None,
                   help="score ground truth against itself")
    p.set_defaults(func=cmd_evaluate)


REPORT_KEYS = ("scene_id", "ssim", "psnr", "mse")


def cmd_evaluate(args):
    defaults = {**_COMMON_DEFAULTS, **_NOISE_DEFAULTS, "manifest": None, "curve": None,
                "design": None, "xi_vis": None, "xi_nir": None, "ridge": 1e-6,
                "self_check": False}
    cfg = _resolve(args, defaults)
    manifest = _require_file(cfg, "manifest", "--manifest")
    if not cfg["self_check"]:
        _require_file(cfg, "curve", "--curve")
    model = _noise_model(cfg)
    xv, xn = _xi_pair(cfg)
    out = _write_config(cfg, "evaluate")

    _, _, camera, white = _physics(cfg)
    test = _load_split(manifest, "test")
    if not test:
        raise ConfigError("--manifest: test split is empty")
    scenes = []
    if cfg["self_check"]:
        for sid, cube in test:
            gt = render(cube, white, camera)
            scenes.append(metrics_record(sid, gt, gt))
    else:
        train = _load_split(manifest, "train")
        if not train:
            raise ConfigError("--manifest: training split is empty")
        curve = read_spectrum(cfg["curve"])
        fit_vis, fit_nir, fit_gt = [], [], []
        for j, (_, cube) in enumerate(train):
            v, n = _inputs(cube, curve, camera, xv, xn, model, cfg["noise"], (0, j))
            fit_vis.append(v)
            fit_nir.append(n)
            fit_gt.append(render(cube, white, camera))
        # concatenating along W keeps per-pixel pairing intact
        recon = fit_reconstructor(np.concatenate(fit_vis, axis=1), np.concatenate(fit_nir, axis=1),
                                  np.concatenate(fit_gt, axis=1), cfg["ridge"])
        for j, (sid, cube) in enumerate(test):
            v, n = _inputs(cube, curve, camera, xv, xn, model, cfg["noise"], (1, j))
            x = apply_reconstructor(recon, v, n)
            scenes.append(metrics_record(sid, x, render(cube, white, camera)))
    aggregate = {k: float(np.mean([s[k] for s in scenes])) for k in REPORT_KEYS[1:]}
    report = {"scenes": scenes, "aggregate": aggregate}
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"ssim {aggregate['ssim']:.4f}  psnr {aggregate['psnr']:.2f}  mse {aggregate['mse']:.3g}")
    return EXIT_OK


# -- realize ------------------------------------------------------------------

def _realize_parser(sub):
    p = sub.add_parser("realize", help="fit a target curve with non-negative LED drive levels")
    _add_common(p)
    p.add_argument("--target", help="target spectrum CSV")
    p.add_argument("--max-active", type=int)
    p.set_defaults(func=cmd_realize)


def cmd_realize(args):
    defaults = {**_COMMON_DEFAULTS, "target": None, "max_active": None}
    cfg = _resolve(args, defaults)
    target_path = _require_file(cfg, "target", "--target")
    if cfg["max_active"] is not None and cfg["max_active"] < 1:
        raise DomainError("--max-active must be >= 1")
    out = _write_config(cfg, "realize")

    _, bank, _, _ = _physics(cfg)
    fit = fit_nnls(read_spectrum(target_path), bank, cfg["max_active"])
    (out / "fit.json").write_text(json.dumps(fit.report(), indent=2) + "\n")
    write_spectrum(out / "fitted.csv", fit.weights @ bank.bases)
    print(f"residual {fit.residual_l2:.4g} with {fit.active_count} LEDs -> {out}")
    return EXIT_OK


# -- synth (test data) --------------------------------------------------------

def _synth_parser(sub):
    p = sub.add_parser("synth", help="write synthetic patch scenes and a manifest")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, help="number of scenes (default 8)")
    p.add_argument("--test", type=int, help="scenes assigned to the test split (default 2)")
    p.add_argument("--grid", type=int, help="patches per side (default 6)")
    p.add_argument("--patch", type=int, help="patch size in pixels (default 8)")
    p.set_defaults(func=cmd_synth)


def cmd_synth(args):
    defaults = {"config": None, "out": None, "seed": 0, "count": 8, "test": 2, "grid": 6,
                "patch": 8}
    cfg = _resolve(args, defaults)
    if cfg["count"] < 1 or not 0 <= cfg["test"] <= cfg["count"]:
        raise DomainError("--count must be >= 1 and 0 <= --test <= --count")
    out = _write_config(cfg, "synth")
    entries = []
    for i in range(cfg["count"]):
        spec = SceneSpec(cfg["grid"], cfg["grid"], patch_size=cfg["patch"], seed=cfg["seed"] * 1_000_003 + i)
        name = f"scene_{i:03d}.hsc"
        save_cube(out / name, synth_scene(spec))
        entries.append((name, "test" if i >= cfg["count"] - cfg["test"] else "train"))
    write_manifest(out / "manifest.tsv", entries)
    print(f"wrote {cfg['count']} scenes -> {out / 'manifest.tsv'}")
    return EXIT_OK


# -- main ---------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="illumdesign", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_design_parser, _simulate_parser, _evaluate_parser, _realize_parser, _synth_parser):
        add(sub)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DomainError, FormatError, ShapeError, RankError, TypeError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
