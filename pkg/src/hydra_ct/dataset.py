"""Dataset synthesis and the manifest.json contract.

A dataset directory holds, per sample, a phantom tensor (evaluation only), a
clean sinogram, and a Poisson-noisy sinogram, plus manifest.json recording
geometry, split membership, and a sha256 per file. Training code must only
ever touch the sino_noisy entries (measurement-only firewall).
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .phantoms import PhantomConfig, gen_phantom
from .radon import apply_poisson_noise, make_operator
from .tensorio import load_tensor, save_tensor

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
_NOISE_SEED_OFFSET = 1_000_003  # keep phantom and noise streams disjoint


@dataclass
class GeometryConfig:
    image_size: int = 64
    n_angles_full: int = 64
    n_views: int = 16
    n_detectors: int | None = None
    detector_spacing: float = 1.0
    # Attenuation calibration: 4.0 / image_size keeps line integrals of [0,1]
    # phantoms below ~5, so 1000-photon Beer-Lambert noise stays informative
    # instead of saturating at the single-photon clamp.
    ray_scale: float | None = None

    def __post_init__(self):
        if self.ray_scale is None:
            self.ray_scale = 4.0 / self.image_size

    def build(self):
        return make_operator(self.image_size, self.n_angles_full, self.n_views,
                             self.n_detectors, self.detector_spacing,
                             self.ray_scale)


@dataclass
class DatasetConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    photons_per_bin: int = 1000
    splits: dict = field(default_factory=lambda: {"train": 70, "val": 15, "test": 15})
    seed: int = 0

    def __post_init__(self):
        for name in self.splits:
            if name not in SPLITS:
                raise ConfigError(f"unknown split {name!r}")
        if self.phantom.size != self.geometry.image_size:
            raise ConfigError("phantom size must match geometry image_size")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _synth_sample(op, cfg, global_index):
    phantom = gen_phantom(cfg.phantom, global_index)
    clean = op.forward(phantom)
    noisy = apply_poisson_noise(clean, cfg.photons_per_bin,
                                [cfg.seed, _NOISE_SEED_OFFSET + global_index])
    return phantom, clean, noisy


def build_dataset(root, cfg: DatasetConfig, force=False, threads=1):
    """Generate phantoms and clean/noisy sinograms for every split.

    Deterministic: (cfg.seed -> bytes) is a pure function regardless of the
    thread count (synthesis is parallel per sample; writes are ordered).
    Refuses to overwrite an existing manifest unless force is set.
    """
    manifest_path = os.path.join(root, "manifest.json")
    if os.path.exists(manifest_path) and not force:
        raise DataError(f"{root} already contains a dataset (use force to overwrite)")
    os.makedirs(root, exist_ok=True)

    op = cfg.geometry.build()
    counts = [(split, int(cfg.splits.get(split, 0))) for split in SPLITS]
    n_total = sum(c for _, c in counts)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            synthesized = list(pool.map(lambda g: _synth_sample(op, cfg, g),
                                        range(n_total)))
    else:
        synthesized = [_synth_sample(op, cfg, g) for g in range(n_total)]

    samples = {}
    global_index = 0
    for split, count in counts:
        entries = []
        for i in range(count):
            sid = f"{split}_{i:04d}"
            phantom, clean, noisy = synthesized[global_index]
            files = {}
            for kind, arr in (("phantom", phantom), ("sino_clean", clean),
                              ("sino_noisy", noisy)):
                fname = f"{sid}_{kind}.t"
                save_tensor(os.path.join(root, fname), arr)
                files[kind] = {"file": fname, "sha256": _sha256(os.path.join(root, fname))}
            entries.append({"id": sid, "index": global_index, **files})
            global_index += 1
        samples[split] = entries

    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "geometry": {
            "image_size": cfg.geometry.image_size,
            "n_angles_full": cfg.geometry.n_angles_full,
            "n_views": cfg.geometry.n_views,
            "n_detectors": cfg.geometry.n_detectors or cfg.geometry.image_size,
            "detector_spacing": cfg.geometry.detector_spacing,
            "ray_scale": cfg.geometry.ray_scale,
        },
        "photons_per_bin": cfg.photons_per_bin,
        "phantom": {
            "n_ellipses": list(cfg.phantom.n_ellipses),
            "intensity_range": list(cfg.phantom.intensity_range),
        },
        "splits": {s: len(samples[s]) for s in SPLITS},
        "samples": samples,
    }
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_manifest(root, verify=True):
    path = os.path.join(root, "manifest.json")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise DataError(f"no manifest.json in {root}")
    except json.JSONDecodeError as e:
        raise DataError(f"malformed manifest.json: {e}")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError("manifest format version mismatch")
    if verify:
        verify_integrity(root, manifest, kinds=("sino_clean", "sino_noisy"))
    return manifest


def verify_integrity(root, manifest, kinds=("phantom", "sino_clean", "sino_noisy")):
    """Check declared sha256 hashes; only for files of the requested kinds."""
    for split, entries in manifest["samples"].items():
        for entry in entries:
            for kind in kinds:
                ref = entry[kind]
                path = os.path.join(root, ref["file"])
                if not os.path.exists(path):
                    raise DataError(f"missing {path}")
                if _sha256(path) != ref["sha256"]:
                    raise DataError(f"hash mismatch for {path}")


def operator_from_manifest(manifest):
    g = manifest["geometry"]
    return make_operator(g["image_size"], g["n_angles_full"], g["n_views"],
                         g["n_detectors"], g["detector_spacing"],
                         g.get("ray_scale", 1.0))


def load_split(root, manifest, split, kind):
    """Load every tensor of one kind for a split, as float64 arrays.

    kind 'phantom' is for evaluation only; training code must not call it.
    """
    out = []
    for entry in manifest["samples"][split]:
        arr = load_tensor(os.path.join(root, entry[kind]["file"]))
        out.append(np.asarray(arr, dtype=np.float64))
    return out
