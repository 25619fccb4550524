"""Acceptance gate: end-to-end benchmark orderings and exactness anchors.

One test per criterion; each prints a PASS/FAIL line with the measured
numbers. The benchmark (datasets, nine training runs, evaluation sweep) runs
once per configuration and is cached under the system temp directory, so a
re-run of the suite only re-checks the assertions.

Scale is selected with HYDRA_CT_ACCEPTANCE:
  smoke (default): 32x32 images, 20 test samples, <= 20 min end to end
  full:            64x64 images, 200 phantoms, 50 test samples, <= 4 h
"""
import hashlib
import json
import os
import tempfile

import numpy as np
import pytest

from hydra_ct.dataset import (DatasetConfig, GeometryConfig, build_dataset,
                              load_manifest, load_split,
                              operator_from_manifest)
from hydra_ct.denoiser import DenoiserNet, LayerConfig, denoiser_vjp
from hydra_ct.evaluate import evaluate, pick_tv_alpha, select_max_checkpoint
from hydra_ct.metrics import psnr, ssim
from hydra_ct.phantoms import PhantomConfig
from hydra_ct.radon import estimate_operator_norm, make_operator
from hydra_ct.solver import EquilibriumConfig, solve_fixed_point
from hydra_ct.training import (LossConfig, StoppingConfig, apply_model,
                               best_checkpoint, load_checkpoint, train)
from hydra_ct.tv import TvConfig, tv_prox, tv_value_and_grad

MODE = os.environ.get("HYDRA_CT_ACCEPTANCE", "smoke")

SCALES = {
    "smoke": {
        "image_size": 32,
        "n_angles_full": 64,
        "splits": {"train": 30, "val": 6, "test": 20},
        "steps": {16: 500, 32: 900, 64: 1300},
        "widths": (1, 16, 16, 16, 1),
        "seed": 0,
    },
    "full": {
        "image_size": 64,
        "n_angles_full": 64,
        "splits": {"train": 130, "val": 20, "test": 50},
        "steps": {16: 300, 32: 500, 64: 700},
        "widths": (1, 16, 16, 16, 1),
        "seed": 1,
    },
}

VIEW_COUNTS = (16, 32, 64)
LEARNED = ("deq-plain", "deq-tv", "hydra-auto", "hydra-max")

TRAIN = {
    "lr": 2e-2,
    "batch_size": 4,
    "eval_every": 100,
    "patience": 10,
    "gamma_scale": 0.03,  # hydra regularizer weight, relative to ||A||^2
    "lr_schedule": "constant",
}


def _cache_dir():
    key = json.dumps([MODE, SCALES[MODE], TRAIN, VIEW_COUNTS],
                     sort_keys=True, default=str)
    digest = hashlib.sha256(key.encode()).hexdigest()[:12]
    return os.path.join(tempfile.gettempdir(), f"hydra_ct_accept_{MODE}_{digest}")


def _run_benchmark(base):
    scale = SCALES[MODE]
    results = {}
    for views in VIEW_COUNTS:
        droot = os.path.join(base, f"data{views}")
        if not os.path.exists(os.path.join(droot, "manifest.json")):
            build_dataset(droot, DatasetConfig(
                geometry=GeometryConfig(scale["image_size"],
                                        scale["n_angles_full"], views),
                phantom=PhantomConfig(size=scale["image_size"], seed=0),
                splits=dict(scale["splits"]), seed=0), threads=4)
        manifest = load_manifest(droot, verify=False)
        op = operator_from_manifest(manifest)
        estimate_operator_norm(op, iters=100, seed=0)

        runs = {}
        for mode in ("hydra", "plain", "tv"):
            out = os.path.join(base, f"run_{mode}_{views}")
            gamma = (TRAIN["gamma_scale"] * op.norm_sq if mode == "hydra"
                     else None)
            if not os.path.exists(os.path.join(out, "BEST")):
                train(droot, out,
                      loss_cfg=LossConfig(mode=mode, gamma=gamma),
                      eq_cfg=EquilibriumConfig(init="fbp"),
                      stop_cfg=StoppingConfig(
                          eval_every=TRAIN["eval_every"],
                          patience=TRAIN["patience"]),
                      max_steps=scale["steps"][views], lr=TRAIN["lr"],
                      lr_schedule=TRAIN["lr_schedule"],
                      batch_size=TRAIN["batch_size"], widths=scale["widths"],
                      seed=scale["seed"])
            runs[mode] = out

        eq_cfg = EquilibriumConfig(init="fbp")
        val_sinos = load_split(droot, manifest, "val", "sino_noisy")
        val_phantoms = load_split(droot, manifest, "val", "phantom")
        alpha = pick_tv_alpha(droot, n_val=4)
        max_ckpt, _ = select_max_checkpoint(runs["hydra"], op, eq_cfg, {},
                                            val_sinos, val_phantoms)
        auto_ckpt = best_checkpoint(runs["hydra"])
        methods = {
            "fbp": {},
            "tv": {"alpha": alpha},
            "deq-plain": {"ckpt": best_checkpoint(runs["plain"])},
            "deq-tv": {"ckpt": best_checkpoint(runs["tv"])},
            "hydra-auto": {"ckpt": auto_ckpt},
            "hydra-max": {"ckpt": max_ckpt},
        }
        res, _ = evaluate(droot, os.path.join(base, f"eval{views}"), methods,
                          eq_cfg=eq_cfg, save_images=False)

        # solver iteration census on the selected model over the test split
        net, _, _ = load_checkpoint(max_ckpt)
        layer_cfg = LayerConfig(op)
        test_sinos = load_split(droot, manifest, "test", "sino_noisy")
        iters = []
        for y in test_sinos:
            _, report = apply_model(net, layer_cfg, eq_cfg, y)
            iters.append([report.iterations, bool(report.converged)])

        results[str(views)] = {
            "methods": {r.method: {"psnr": r.mean_psnr, "ssim": r.mean_ssim,
                                   "time": r.mean_time} for r in res},
            "auto_step": int(os.path.basename(auto_ckpt).split("_")[1]),
            "max_step": int(os.path.basename(max_ckpt).split("_")[1]),
            "eval_every": TRAIN["eval_every"],
            "solver_iters": iters,
            "tv_alpha": alpha,
            "hydra_run": runs["hydra"],
            "data_root": droot,
        }
    return results


@pytest.fixture(scope="module")
def bench():
    base = _cache_dir()
    cache = os.path.join(base, "results.json")
    if os.path.exists(cache):
        with open(cache) as f:
            return json.load(f)
    os.makedirs(base, exist_ok=True)
    results = _run_benchmark(base)
    with open(cache, "w") as f:
        json.dump(results, f, indent=1)
    return results


def _report(name, ok, detail):
    print(f"\nCRITERION {name}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


# -------------------------------------------------- criterion 1: properties

def test_criterion_1_property_suite():
    checks = []

    # adjoint identity <Ax, y> = <x, A^T y>, 32-bit inputs, < 1e-5 relative
    op = make_operator(32, 32, 8)
    rng = np.random.default_rng(0)
    x = rng.random((32, 32), dtype=np.float32).astype(np.float64)
    y = rng.random(op.sino_shape, dtype=np.float32).astype(np.float64)
    lhs = float((op.forward(x) * y).sum())
    rhs = float((x * op.adjoint(y)).sum())
    rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
    checks.append(("adjoint dot-test", rel < 1e-5, f"rel={rel:.2e}"))

    # layer contraction factor <= lambda*budget + (1 - lambda)
    estimate_operator_norm(op, iters=200, seed=0)
    net = DenoiserNet((1, 8, 8, 1), spectral_size=32, seed=1)
    layer_cfg = LayerConfig(op)
    from hydra_ct.denoiser import layer_apply
    y_meas = op.forward(rng.random((32, 32)))
    bound = layer_cfg.lambda_mix * net.lipschitz_budget + (1 - layer_cfg.lambda_mix)
    worst = 0.0
    for _ in range(20):
        a, b = rng.random((32, 32)), rng.random((32, 32))
        num = np.linalg.norm(layer_apply(net, layer_cfg, a, y_meas)
                             - layer_apply(net, layer_cfg, b, y_meas))
        worst = max(worst, num / np.linalg.norm(a - b))
    checks.append(("layer contraction", worst <= bound + 1e-9,
                   f"worst={worst:.4f} bound={bound:.4f}"))

    # fixed-point uniqueness: zero vs fbp init within 5x solver tolerance
    tol = 1e-3
    x_a, _ = apply_model(net, layer_cfg, EquilibriumConfig(tol=tol, init="zero"),
                         y_meas)
    x_b, _ = apply_model(net, layer_cfg, EquilibriumConfig(tol=tol, init="fbp"),
                         y_meas)
    gap = np.linalg.norm(x_a - x_b) / max(np.linalg.norm(x_a), 1e-12)
    checks.append(("fixed-point uniqueness", gap <= 5 * tol,
                   f"gap={gap:.2e} limit={5 * tol:.0e}"))

    # JFB surrogate gradient vs central finite differences, 8x8 problem
    from hydra_ct.training import hybrid_loss_and_grad, surrogate_loss
    op8 = make_operator(8, 8)
    estimate_operator_norm(op8, iters=200, seed=0)
    net8 = DenoiserNet((1, 4, 4, 1), spectral_size=8, seed=8)
    cfg8 = LayerConfig(op8)
    y8 = op8.forward(np.random.default_rng(108).random((8, 8)) + 0.5)
    x_star, _ = apply_model(net8, cfg8, EquilibriumConfig(), y8)
    loss_cfg = LossConfig(mode="hydra")
    fd_rng = np.random.default_rng(108)
    eps_noise = fd_rng.normal(0.0, loss_cfg.noise_sigma, x_star.shape)
    gamma = loss_cfg.resolved_gamma(op8.norm_sq)
    _, grads = hybrid_loss_and_grad(net8, cfg8, EquilibriumConfig(), loss_cfg,
                                    y8, np.random.default_rng(108),
                                    x_star=x_star)

    def total():
        dc, reg = surrogate_loss(net8, cfg8, loss_cfg, x_star, y8, eps_noise)
        return dc + gamma * reg

    params = net8.params()
    h = 1e-6
    worst_rel = 0.0
    picked = 0
    while picked < 8:
        pi = int(fd_rng.integers(0, len(params)))
        idx = tuple(fd_rng.integers(0, s) for s in params[pi].shape)
        if abs(grads[pi][idx]) < 1e-4:
            continue
        params[pi][idx] += h
        up = total()
        params[pi][idx] -= 2 * h
        dn = total()
        params[pi][idx] += h
        fd = (up - dn) / (2 * h)
        worst_rel = max(worst_rel, abs(fd - grads[pi][idx]) / abs(grads[pi][idx]))
        picked += 1
    checks.append(("JFB gradient FD", worst_rel < 1e-3,
                   f"worst rel={worst_rel:.2e}"))

    # TV prox vs smoothed-objective oracle, 8x8, < 1e-3 inf-norm
    from scipy.optimize import minimize
    v = np.random.default_rng(3).random((8, 8))
    w = 0.1

    def objective(flat):
        xx = flat.reshape(8, 8)
        tval, tgrad = tv_value_and_grad(xx, eps=1e-12)
        return (0.5 * ((xx - v) ** 2).sum() + w * tval,
                ((xx - v) + w * tgrad).ravel())

    oracle = minimize(objective, v.ravel(), jac=True, method="L-BFGS-B",
                      options={"maxiter": 2000, "ftol": 1e-16, "gtol": 1e-12}
                      ).x.reshape(8, 8)
    prox_gap = float(np.max(np.abs(tv_prox(v, w, inner_iters=500) - oracle)))
    checks.append(("TV prox oracle", prox_gap < 1e-3, f"inf-norm={prox_gap:.2e}"))

    # SSIM vs naive double-loop oracle < 1e-6
    from test_metrics import _ssim_naive
    a = np.random.default_rng(4).random((20, 20))
    b = np.clip(a + 0.1 * np.random.default_rng(5).standard_normal((20, 20)),
                0, 1)
    ssim_gap = abs(ssim(a, b) - _ssim_naive(a, b))
    checks.append(("SSIM oracle", ssim_gap < 1e-6, f"gap={ssim_gap:.2e}"))

    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{n} {'ok' if o else 'FAIL'} ({d})" for n, o, d in checks)
    assert _report("1 property suite", ok, detail)


# ----------------------------------------- criterion 2: benchmark orderings

def test_criterion_2a_tv_beats_fbp(bench):
    ok = True
    parts = []
    for views in VIEW_COUNTS:
        m = bench[str(views)]["methods"]
        good = (m["tv"]["psnr"] > m["fbp"]["psnr"]
                and m["tv"]["ssim"] > m["fbp"]["ssim"])
        ok &= good
        parts.append(f"{views}v tv={m['tv']['psnr']:.2f}/{m['tv']['ssim']:.3f} "
                     f"fbp={m['fbp']['psnr']:.2f}/{m['fbp']['ssim']:.3f}")
    assert _report("2a tv > fbp (psnr and ssim)", ok, "; ".join(parts))


def test_criterion_2b_hydra_max_tops_ablations(bench):
    ok = True
    parts = []
    for views in VIEW_COUNTS:
        m = bench[str(views)]["methods"]
        hm = m["hydra-max"]["psnr"]
        good = (hm >= m["deq-plain"]["psnr"] and hm >= m["deq-tv"]["psnr"])
        ok &= good
        parts.append(f"{views}v hydra-max={hm:.2f} "
                     f"plain={m['deq-plain']['psnr']:.2f} "
                     f"tv={m['deq-tv']['psnr']:.2f}")
    assert _report("2b hydra-max >= ablations (psnr)", ok, "; ".join(parts))


def test_criterion_2c_learned_methods_monotone_in_views(bench):
    ok = True
    parts = []
    for method in LEARNED:
        seq = [bench[str(v)]["methods"][method]["psnr"] for v in VIEW_COUNTS]
        good = seq[0] <= seq[1] <= seq[2]
        ok &= good
        parts.append(f"{method} " + "/".join(f"{p:.2f}" for p in seq))
    assert _report("2c psnr monotone 16->32->64 views", ok, "; ".join(parts))


# -------------------------------------------- criterion 3: auto-stop fidelity

def test_criterion_3_auto_stop_fidelity(bench):
    ok = True
    parts = []
    for views in VIEW_COUNTS:
        b = bench[str(views)]
        gap_db = (b["methods"]["hydra-max"]["psnr"]
                  - b["methods"]["hydra-auto"]["psnr"])
        step_gap = abs(b["auto_step"] - b["max_step"]) / b["eval_every"]
        good = gap_db <= 0.5 and step_gap <= 2
        ok &= good
        parts.append(f"{views}v gap={gap_db:.2f}dB steps={step_gap:.0f}ivals")
    assert _report("3 auto within 0.5 dB and 2 eval intervals of max", ok,
                   "; ".join(parts))


# ------------------------------------------- criterion 4: solver efficiency

def test_criterion_4_solver_efficiency(bench):
    # constructed linear contraction with factor 0.95
    rng = np.random.default_rng(0)
    n = 40
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    scales = rng.uniform(0.3, 1.0, n)
    scales *= 0.95 / scales.max()
    mat = q @ np.diag(scales) @ q.T
    b = rng.standard_normal(n)
    _, rp = solve_fixed_point(lambda x: mat @ x + b, np.zeros(n),
                              EquilibriumConfig(method="picard", tol=1e-3,
                                                max_iters=1000))
    _, ra = solve_fixed_point(lambda x: mat @ x + b, np.zeros(n),
                              EquilibriumConfig(method="anderson", tol=1e-3,
                                                max_iters=1000))
    anderson_wins = ra.converged and rp.converged and ra.iterations < rp.iterations

    # <= 50 iterations on >= 95% of test-set solves after training
    iters = [it for views in VIEW_COUNTS
             for it, _ in bench[str(views)]["solver_iters"]]
    frac = float(np.mean([it <= 50 for it in iters]))
    ok = anderson_wins and frac >= 0.95
    assert _report(
        "4 solver efficiency", ok,
        f"anderson={ra.iterations} picard={rp.iterations} iters; "
        f"{frac * 100:.1f}% of {len(iters)} test solves within 50 "
        f"(max {max(iters)})")


# ----------------------------------------------- criterion 5: timing shape

def test_criterion_5_timing_shape(bench):
    ok = True
    parts = []
    for views in VIEW_COUNTS:
        m = bench[str(views)]["methods"]
        fastest = min(m.values(), key=lambda r: r["time"])["time"]
        good = (m["hydra-max"]["time"] < m["tv"]["time"]
                and m["fbp"]["time"] <= fastest)
        ok &= good
        parts.append(f"{views}v fbp={m['fbp']['time']:.4f}s "
                     f"hydra={m['hydra-max']['time']:.4f}s "
                     f"tv={m['tv']['time']:.4f}s")
    assert _report("5 fbp < hydra < tv-pgd inference time", ok, "; ".join(parts))


# ----------------------------------------------- criterion 6: psnr anchor

def test_criterion_6_psnr_exactness():
    x = np.full((32, 32), 0.4)
    val = psnr(x + 0.1, x, data_range=1.0)
    ok = abs(val - 20.0) <= 1e-9
    assert _report("6 psnr offset-0.1 anchor", ok, f"psnr={val:.12f} dB")
