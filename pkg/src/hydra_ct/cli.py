"""Command-line interface: gen-data, train, reconstruct, baseline, eval.

A single JSON config file carries every module's parameters; flags override
config keys. The effective config (after defaults) is echoed into the output
directory. Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
abort.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from .dataset import DatasetConfig, GeometryConfig, build_dataset, load_manifest
from .denoiser import LayerConfig
from .errors import ConfigError, DataError, NumericalError
from .evaluate import evaluate, pick_tv_alpha, save_png, select_max_checkpoint
from .metrics import psnr  # noqa: F401  (handy for --help examples and scripts)
from .phantoms import PhantomConfig
from .radon import FbpConfig, estimate_operator_norm, fbp, make_operator
from .solver import EquilibriumConfig
from .tensorio import load_tensor, save_tensor
from .training import (LossConfig, StoppingConfig, apply_model, best_checkpoint,
                       load_checkpoint, train)
from .tv import TvConfig, pgd_reconstruct
from .dataset import load_split, operator_from_manifest

DEFAULT_CONFIG = {
    "seed": 0,
    "geometry": {"image_size": 64, "n_angles_full": 64, "n_views": 16,
                 "n_detectors": None, "detector_spacing": 1.0, "ray_scale": None},
    "phantom": {"n_ellipses": [3, 8], "intensity_range": [-0.5, 0.5]},
    "dataset": {"photons_per_bin": 1000,
                "splits": {"train": 70, "val": 15, "test": 15}},
    "fbp": {"filter_kind": "ram-lak", "cutoff": 1.0},
    "tv": {"alpha": None, "variant": "isotropic", "inner_iters": 20,
           "pgd_iters": 300, "step": None},
    "layer": {"lambda_mix": 0.4, "omega": "clamp", "step": None},
    "equilibrium": {"tol": 1e-3, "max_iters": 50, "method": "anderson",
                    "anderson_memory": 5, "anderson_ridge": 1e-4,
                    "anderson_relaxation": 1.0, "init": "zero"},
    "loss": {"gamma": None, "noise_sigma": 0.15, "mode": "hydra", "tv_alpha": 1e-3},
    "training": {"max_steps": 20000, "lr": 1e-5, "lr_schedule": "constant",
                 "batch_size": 1, "widths": [1, 32, 32, 32, 1], "budget": 0.9},
    "stopping": {"eval_every": 1000, "patience": 10, "val_subset_size": None},
    "threads": 1,
}


def _merge(defaults, overrides, path=""):
    out = copy.deepcopy(defaults)
    for key, val in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and key != "splits":
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(defaults[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(path=None):
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as f:
            user = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config JSON: {e}")
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge(DEFAULT_CONFIG, user)


def echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config_effective.json"), "w") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)


def _threads(args, cfg):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HYDRA_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"HYDRA_THREADS must be an integer, got {env!r}")
    return cfg["threads"]


def _dataset_config(cfg):
    g = cfg["geometry"]
    return DatasetConfig(
        geometry=GeometryConfig(g["image_size"], g["n_angles_full"], g["n_views"],
                                g["n_detectors"], g["detector_spacing"],
                                g.get("ray_scale")),
        phantom=PhantomConfig(size=g["image_size"],
                              n_ellipses=tuple(cfg["phantom"]["n_ellipses"]),
                              intensity_range=tuple(cfg["phantom"]["intensity_range"]),
                              seed=cfg["seed"]),
        photons_per_bin=cfg["dataset"]["photons_per_bin"],
        splits=dict(cfg["dataset"]["splits"]),
        seed=cfg["seed"],
    )


def _eq_config(cfg, init=None):
    e = cfg["equilibrium"]
    return EquilibriumConfig(tol=e["tol"], max_iters=e["max_iters"], method=e["method"],
                             anderson_memory=e["anderson_memory"],
                             anderson_ridge=e["anderson_ridge"],
                             anderson_relaxation=e["anderson_relaxation"],
                             init=init or e["init"])


def cmd_gen_data(args):
    cfg = load_config(args.config)
    if args.views is not None:
        cfg["geometry"]["n_views"] = args.views
    if args.seed is not None:
        cfg["seed"] = args.seed
    echo_config(cfg, args.out)
    build_dataset(args.out, _dataset_config(cfg), force=args.force,
                  threads=_threads(args, cfg))
    print(f"dataset written to {args.out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    if args.mode:
        cfg["loss"]["mode"] = args.mode
    if args.max_steps is not None:
        cfg["training"]["max_steps"] = args.max_steps
    if args.seed is not None:
        cfg["seed"] = args.seed
    echo_config(cfg, args.out)
    lc = cfg["loss"]
    tc = cfg["training"]
    sc = cfg["stopping"]
    summary = train(
        args.data, args.out,
        loss_cfg=LossConfig(gamma=lc["gamma"], noise_sigma=lc["noise_sigma"],
                            mode=lc["mode"], tv_alpha=lc["tv_alpha"]),
        eq_cfg=_eq_config(cfg),
        stop_cfg=StoppingConfig(sc["eval_every"], sc["patience"],
                                sc["val_subset_size"]),
        max_steps=tc["max_steps"], lr=tc["lr"], lr_schedule=tc["lr_schedule"],
        batch_size=tc["batch_size"], widths=tuple(tc["widths"]),
        budget=tc["budget"], lambda_mix=cfg["layer"]["lambda_mix"],
        layer_step=cfg["layer"]["step"], seed=cfg["seed"], resume=args.resume,
        log=print,
    )
    print(f"training done: {summary['steps']} steps, best step {summary['best_step']}")
    return 0


def _write_recon(out_dir, x, report=None, verbose=False):
    os.makedirs(out_dir, exist_ok=True)
    save_tensor(os.path.join(out_dir, "recon.t"), x)
    save_png(os.path.join(out_dir, "recon.png"), x)
    if report is not None and verbose:
        with open(os.path.join(out_dir, "solve_report.json"), "w") as f:
            json.dump(report.to_dict(), f, indent=1)


def cmd_reconstruct(args):
    net, _, index = load_checkpoint(args.ckpt)
    g = index.get("geometry")
    if g is None:
        raise ConfigError("checkpoint lacks geometry metadata")
    op = make_operator(g["image_size"], g["n_angles_full"], g["n_views"],
                       g["n_detectors"], g["detector_spacing"],
                       g.get("ray_scale", 1.0))
    estimate_operator_norm(op, iters=100, seed=0)
    y = np.asarray(load_tensor(args.sinogram), dtype=np.float64)
    if y.shape != op.sino_shape:
        raise DataError(f"sinogram shape {y.shape} does not match checkpoint "
                        f"geometry {op.sino_shape}")
    lk = index.get("layer", {})
    layer_cfg = LayerConfig(op, lambda_mix=lk.get("lambda_mix", 0.4),
                            omega=lk.get("omega", "clamp"), step=lk.get("step"))
    cfg = load_config(args.config)
    x, report = apply_model(net, layer_cfg, _eq_config(cfg, init="fbp"), y)
    _write_recon(args.out, x, report, args.verbose)
    print(f"reconstruction written to {args.out} "
          f"({report.iterations} iterations, converged={report.converged})")
    return 0


def cmd_baseline(args):
    cfg = load_config(args.config)
    g = cfg["geometry"]
    ray_scale = g.get("ray_scale")
    if ray_scale is None:
        ray_scale = 4.0 / g["image_size"]
    op = make_operator(g["image_size"], g["n_angles_full"], g["n_views"],
                       g["n_detectors"], g["detector_spacing"], ray_scale)
    y = np.asarray(load_tensor(args.sinogram), dtype=np.float64)
    if y.shape != op.sino_shape:
        raise DataError(f"sinogram shape {y.shape} does not match geometry "
                        f"{op.sino_shape}")
    if args.method == "fbp":
        f = cfg["fbp"]
        x = np.clip(fbp(op, y, FbpConfig(f["filter_kind"], f["cutoff"])), 0.0, 1.0)
    else:
        estimate_operator_norm(op, iters=100, seed=0)
        t = cfg["tv"]
        alpha = args.alpha if args.alpha is not None else (t["alpha"] or 1e-3)
        x = pgd_reconstruct(op, y, TvConfig(alpha=alpha, variant=t["variant"],
                                            inner_iters=t["inner_iters"],
                                            pgd_iters=t["pgd_iters"], step=t["step"]))
    _write_recon(args.out, x)
    print(f"{args.method} reconstruction written to {args.out}")
    return 0


def cmd_eval(args):
    cfg = load_config(args.config)
    echo_config(cfg, args.out)
    eq_cfg = _eq_config(cfg, init="fbp")
    layer_kwargs = {"lambda_mix": cfg["layer"]["lambda_mix"],
                    "omega": cfg["layer"]["omega"], "step": cfg["layer"]["step"]}
    methods = {}
    if args.fbp:
        f = cfg["fbp"]
        methods["fbp"] = {"fbp_cfg": FbpConfig(f["filter_kind"], f["cutoff"])}
    if args.tv:
        t = cfg["tv"]
        alpha = args.tv_alpha if args.tv_alpha is not None else t["alpha"]
        if alpha is None:
            alpha = pick_tv_alpha(args.data)
            print(f"grid search selected tv alpha = {alpha}")
        methods["tv"] = {"tv_cfg": TvConfig(alpha=alpha, variant=t["variant"],
                                            inner_iters=t["inner_iters"],
                                            pgd_iters=t["pgd_iters"], step=t["step"])}
    for name, run_dir in (("deq-plain", args.deq_plain), ("deq-tv", args.deq_tv)):
        if run_dir:
            methods[name] = {"ckpt": best_checkpoint(run_dir),
                             "layer_kwargs": layer_kwargs}
    if args.hydra:
        manifest = load_manifest(args.data, verify=False)
        op = operator_from_manifest(manifest)
        estimate_operator_norm(op, iters=100, seed=0)
        val_sinos = load_split(args.data, manifest, "val", "sino_noisy")
        val_phantoms = load_split(args.data, manifest, "val", "phantom")
        max_ckpt, _ = select_max_checkpoint(args.hydra, op, eq_cfg, layer_kwargs,
                                            val_sinos, val_phantoms)
        methods["hydra-auto"] = {"ckpt": best_checkpoint(args.hydra),
                                 "layer_kwargs": layer_kwargs}
        methods["hydra-max"] = {"ckpt": max_ckpt, "layer_kwargs": layer_kwargs}
    if not methods:
        raise ConfigError("no methods selected (use --fbp/--tv/--deq-plain/"
                          "--deq-tv/--hydra)")
    results, _ = evaluate(args.data, args.out, methods, eq_cfg=eq_cfg,
                          save_images=not args.no_images, log=print)
    from .evaluate import format_summary

    print(format_summary(results))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hydra-ct",
                                description="Measurement-only deep-equilibrium "
                                            "sparse-view CT toolkit")
    p.add_argument("--threads", type=int, default=None,
                   help="worker pool bound (fallback: HYDRA_THREADS env var)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a phantom/sinogram dataset")
    g.add_argument("--config", help="JSON run config")
    g.add_argument("--out", required=True, help="dataset output directory")
    g.add_argument("--force", action="store_true", help="overwrite existing dataset")
    g.add_argument("--views", type=int, help="override geometry.n_views")
    g.add_argument("--seed", type=int, help="override global seed")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a reconstruction network")
    t.add_argument("--config", help="JSON run config")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="run output directory")
    t.add_argument("--mode", choices=["hydra", "plain", "tv"],
                   help="override loss.mode")
    t.add_argument("--resume", help="checkpoint directory to resume from")
    t.add_argument("--max-steps", type=int, help="override training.max_steps")
    t.add_argument("--seed", type=int, help="override global seed")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reconstruct", help="reconstruct one sinogram with a checkpoint")
    r.add_argument("--ckpt", required=True, help="checkpoint directory")
    r.add_argument("--sinogram", required=True, help="sinogram tensor file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--config", help="JSON run config (solver settings)")
    r.add_argument("--verbose", action="store_true",
                   help="also write the solver report JSON")
    r.set_defaults(func=cmd_reconstruct)

    b = sub.add_parser("baseline", help="classical reconstruction of one sinogram")
    b.add_argument("--method", choices=["fbp", "tv"], required=True)
    b.add_argument("--config", help="JSON run config (geometry)")
    b.add_argument("--sinogram", required=True, help="sinogram tensor file")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--alpha", type=float, help="TV regularization weight")
    b.set_defaults(func=cmd_baseline)

    e = sub.add_parser("eval", help="evaluate methods on the test split")
    e.add_argument("--config", help="JSON run config")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--out", required=True, help="report output directory")
    e.add_argument("--fbp", action="store_true", help="include the FBP baseline")
    e.add_argument("--tv", action="store_true", help="include the TV-PGD baseline")
    e.add_argument("--tv-alpha", type=float, help="TV weight (default: grid search)")
    e.add_argument("--deq-plain", help="run directory of a mode=plain training")
    e.add_argument("--deq-tv", help="run directory of a mode=tv training")
    e.add_argument("--hydra", help="run directory of a mode=hydra training "
                                   "(adds hydra-auto and hydra-max)")
    e.add_argument("--no-images", action="store_true",
                   help="skip per-sample PNG/tensor outputs")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
