"""Test-set evaluation across methods: per-sample CSV, reconstruction images,
and an aligned summary table (PSNR / SSIM / inference time)."""
from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .dataset import load_manifest, load_split, operator_from_manifest
from .denoiser import LayerConfig
from .errors import ConfigError
from .metrics import psnr, ssim
from .radon import FbpConfig, estimate_operator_norm, fbp
from .solver import EquilibriumConfig
from .training import apply_model, best_checkpoint, load_checkpoint
from .tensorio import save_tensor
from .tv import TvConfig, grid_search_alpha, pgd_reconstruct

CSV_COLUMNS = ("method", "n_views", "sample_id", "psnr_db", "ssim", "time_s")


@dataclass
class MethodResult:
    method: str
    n_views: int
    mean_psnr: float
    mean_ssim: float
    mean_time: float
    n_samples: int


def save_png(path, img):
    """8-bit grayscale PNG with linear [0,1] mapping; raw tensors stay authoritative."""
    arr = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(path)


def select_max_checkpoint(run_dir, op, eq_cfg, layer_cfg_kwargs, val_sinos, val_phantoms):
    """Oracle checkpoint selection: highest mean PSNR against validation phantoms."""
    ckpts = sorted(d for d in os.listdir(run_dir) if d.startswith("ckpt_"))
    if not ckpts:
        raise ConfigError(f"no checkpoints in {run_dir}")
    best, best_score = None, -np.inf
    for name in ckpts:
        net, _, _ = load_checkpoint(os.path.join(run_dir, name))
        layer_cfg = LayerConfig(op, **layer_cfg_kwargs)
        scores = [psnr(apply_model(net, layer_cfg, eq_cfg, y)[0], ph)
                  for y, ph in zip(val_sinos, val_phantoms)]
        score = float(np.mean(scores))
        if score > best_score:
            best, best_score = name, score
    return os.path.join(run_dir, best), best_score


def _method_reconstructor(name, spec, op, eq_cfg):
    """Returns a zero-argument-model, per-sinogram reconstruction closure.

    Model loading happens here, outside the timed path."""
    if name == "fbp":
        cfg = spec.get("fbp_cfg") or FbpConfig()
        return lambda y: np.clip(fbp(op, y, cfg), 0.0, 1.0)
    if name == "tv":
        cfg = spec.get("tv_cfg") or TvConfig(alpha=spec["alpha"])
        return lambda y: pgd_reconstruct(op, y, cfg)
    if name in ("deq-plain", "deq-tv", "hydra-auto", "hydra-max"):
        net, _, _ = load_checkpoint(spec["ckpt"])
        layer_cfg = LayerConfig(op, **spec.get("layer_kwargs", {}))
        return lambda y: apply_model(net, layer_cfg, eq_cfg, y)[0]
    raise ConfigError(f"unknown method {name!r}")


def evaluate(data_root, out_dir, methods, eq_cfg=None, save_images=True, log=None):
    """Reconstruct every test sinogram with every method.

    methods: ordered dict-like of {name: spec}; specs as in
    _method_reconstructor. Returns (list[MethodResult], per-sample rows).
    """
    eq_cfg = eq_cfg or EquilibriumConfig(init="fbp")
    os.makedirs(out_dir, exist_ok=True)
    manifest = load_manifest(data_root, verify=False)
    op = operator_from_manifest(manifest)
    estimate_operator_norm(op, iters=100, seed=0)
    n_views = manifest["geometry"]["n_views"]
    test_sinos = load_split(data_root, manifest, "test", "sino_noisy")
    test_phantoms = load_split(data_root, manifest, "test", "phantom")
    sample_ids = [e["id"] for e in manifest["samples"]["test"]]

    rows = []
    results = []
    for name, spec in methods.items():
        try:
            recon = _method_reconstructor(name, spec, op, eq_cfg)
        except (FileNotFoundError, KeyError, ConfigError) as e:
            if log:
                log(f"skipping {name}: {e}")
            continue
        psnrs, ssims, times = [], [], []
        for sid, y, ph in zip(sample_ids, test_sinos, test_phantoms):
            t0 = time.perf_counter()
            x = recon(y)
            dt = time.perf_counter() - t0
            p = psnr(x, ph)
            s = ssim(x, ph)
            psnrs.append(p)
            ssims.append(s)
            times.append(dt)
            rows.append([name, n_views, sid, f"{p:.4f}", f"{s:.6f}", f"{dt:.6f}"])
            if save_images:
                save_tensor(os.path.join(out_dir, f"{name}_{sid}.t"), x)
                save_png(os.path.join(out_dir, f"{name}_{sid}.png"), x)
        results.append(MethodResult(name, n_views, float(np.mean(psnrs)),
                                    float(np.mean(ssims)), float(np.mean(times)),
                                    len(psnrs)))
        if log:
            log(f"{name} ({n_views} views): psnr={results[-1].mean_psnr:.2f} dB "
                f"ssim={results[-1].mean_ssim:.4f} time={results[-1].mean_time:.4f} s")

    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)
    summary = format_summary(results)
    with open(os.path.join(out_dir, "summary.txt"), "w") as f:
        f.write(summary + "\n")
    return results, rows


def format_summary(results):
    lines = [f"{'Method':<12} {'Views':>5} {'PSNR (dB)':>10} {'SSIM':>8} {'Time (s)':>10} {'N':>4}"]
    for r in results:
        lines.append(f"{r.method:<12} {r.n_views:>5d} {r.mean_psnr:>10.2f} "
                     f"{r.mean_ssim:>8.3f} {r.mean_time:>10.4f} {r.n_samples:>4d}")
    return "\n".join(lines)


def pick_tv_alpha(data_root, grid=None, tv_cfg=None, n_val=5):
    """Grid-search the TV weight on validation samples (oracle-using baseline)."""
    manifest = load_manifest(data_root, verify=False)
    op = operator_from_manifest(manifest)
    estimate_operator_norm(op, iters=100, seed=0)
    sinos = load_split(data_root, manifest, "val", "sino_noisy")[:n_val]
    phantoms = load_split(data_root, manifest, "val", "phantom")[:n_val]
    kwargs = {} if grid is None else {"grid": grid}
    return grid_search_alpha(op, sinos, phantoms, cfg=tv_cfg, **kwargs)
