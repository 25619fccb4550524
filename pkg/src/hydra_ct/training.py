"""Self-supervised training: hybrid loss with Jacobian-free gradients, Adam,
ablation losses, and the re-simulation stopping monitor.

Gradient contract (JFB): the equilibrium x* is solved without gradients, then
exactly one layer application is differentiated. The regularization term
detaches x* in both positions and trains the denoiser only.

All randomness is a pure function of (seed, step), so resuming from a
checkpoint reproduces the uninterrupted trajectory bit for bit.
"""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import load_manifest, load_split, operator_from_manifest
from .denoiser import (DenoiserNet, LayerConfig, _forward_cached, denoiser_vjp,
                       gradient_map, normalize_spectral, omega_project)
from .errors import ConfigError, NumericalError
from .metrics import psnr
from .radon import estimate_operator_norm, fbp
from .solver import EquilibriumConfig, solve_fixed_point
from .tensorio import load_tensor, save_tensor
from .tv import tv_value_and_grad

MODES = ("hydra", "plain", "tv")
_EPS_STREAM = 2_000_003
_ORDER_STREAM = 3_000_017


@dataclass
class LossConfig:
    gamma: float | None = None  # None -> norm_sq of the operator
    noise_sigma: float = 0.15   # fraction of the unit dynamic range
    mode: str = "hydra"
    tv_alpha: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")

    def resolved_gamma(self, norm_sq):
        if self.mode != "hydra":
            return 0.0
        return float(norm_sq) if self.gamma is None else self.gamma


@dataclass
class StoppingConfig:
    eval_every: int = 1000
    patience: int = 10
    val_subset_size: int | None = None

    def __post_init__(self):
        if self.eval_every < 1 or self.patience < 1:
            raise ConfigError("eval_every and patience must be >= 1")


@dataclass
class TrainState:
    lr: float = 1e-5
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    best_metric: float = -np.inf
    best_step: int = -1
    evals_since_best: int = 0

    def ensure_moments(self, params):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def apply_model(net, layer_cfg: LayerConfig, eq_cfg: EquilibriumConfig, y):
    """Reconstruction B(y): solve the equilibrium layer's fixed point."""
    from .denoiser import layer_apply

    if eq_cfg.init == "fbp":
        x0 = np.clip(fbp(layer_cfg.op, y), 0.0, 1.0)
    else:
        x0 = np.zeros((layer_cfg.op.image_size,) * 2)
    return solve_fixed_point(lambda x: layer_apply(net, layer_cfg, x, y), x0, eq_cfg)


def surrogate_loss(net, layer_cfg: LayerConfig, loss_cfg: LossConfig,
                   x_star, y, eps_noise=None):
    """The scalar JFB surrogate: x_star and eps_noise held fixed.

    This is the function whose gradient hybrid_loss_and_grad computes; the
    finite-difference tests differentiate exactly this.
    """
    lam = layer_cfg.lambda_mix
    v = gradient_map(layer_cfg, x_star, y)
    d, _ = _forward_cached(net, v)
    z_pre = lam * d + (1.0 - lam) * v
    z = omega_project(z_pre) if layer_cfg.omega == "clamp" else z_pre
    r = layer_cfg.op.forward(z) - y
    loss_dc = float((r ** 2).sum())
    loss_reg = 0.0
    if loss_cfg.mode == "hydra" and eps_noise is not None:
        u = x_star + eps_noise
        d2, _ = _forward_cached(net, u)
        loss_reg = float(((d2 - x_star) ** 2).sum())
    elif loss_cfg.mode == "tv":
        loss_reg = tv_value_and_grad(z)[0]
    return loss_dc, loss_reg


def hybrid_loss_and_grad(net, layer_cfg: LayerConfig, eq_cfg: EquilibriumConfig,
                         loss_cfg: LossConfig, y, rng, x_star=None):
    """Solve for x*, then differentiate the one-layer surrogate.

    Returns (losses dict, param gradients). rng draws the denoising noise;
    pass x_star to skip the solve (used by tests).
    """
    if x_star is None:
        x_star, _ = apply_model(net, layer_cfg, eq_cfg, y)
    lam = layer_cfg.lambda_mix
    gamma = loss_cfg.resolved_gamma(layer_cfg.op.norm_sq)

    v = gradient_map(layer_cfg, x_star, y)
    d, cache = _forward_cached(net, v)
    z_pre = lam * d + (1.0 - lam) * v
    if layer_cfg.omega == "clamp":
        z = omega_project(z_pre)
        clamp_mask = ((z_pre > 0.0) & (z_pre < 1.0)).astype(np.float64)
    else:
        z = z_pre
        clamp_mask = 1.0
    r = layer_cfg.op.forward(z) - y
    loss_dc = float((r ** 2).sum())
    g_z = 2.0 * layer_cfg.op.adjoint(r)

    loss_reg = 0.0
    if loss_cfg.mode == "tv":
        tval, tgrad = tv_value_and_grad(z)
        loss_reg = tval
        g_z = g_z + loss_cfg.tv_alpha * tgrad
    grads, _ = denoiser_vjp(net, v, lam * clamp_mask * g_z, cache)

    if loss_cfg.mode == "hydra":
        eps_noise = rng.normal(0.0, loss_cfg.noise_sigma, x_star.shape)
        u = x_star + eps_noise
        d2, cache2 = _forward_cached(net, u)
        diff = d2 - x_star
        loss_reg = float((diff ** 2).sum())
        grads_r, _ = denoiser_vjp(net, u, 2.0 * diff, cache2)
        grads = [g + gamma * gr for g, gr in zip(grads, grads_r)]

    total = loss_dc + (gamma * loss_reg if loss_cfg.mode == "hydra"
                       else loss_cfg.tv_alpha * loss_reg if loss_cfg.mode == "tv"
                       else 0.0)
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss: dc={loss_dc} reg={loss_reg}")
    losses = {"dc": loss_dc, "reg": loss_reg, "total": total}
    return losses, grads


def adam_step(net, state: TrainState, grads, normalize=True, lr=None):
    """Standard Adam update followed by spectral re-normalization.

    lr overrides state.lr for this step (scheduled rates); normalize=False
    skips the re-normalization (used by optimizer unit tests that compare
    against the textbook update)."""
    step_lr = state.lr if lr is None else lr
    params = net.params()
    state.ensure_moments(params)
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g ** 2
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p -= step_lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if normalize:
        normalize_spectral(net)
    return net, state


def auto_stop_metric(net, layer_cfg, eq_cfg, val_sinos):
    """Mean PSNR between B(y) and B(A B(y)) over validation measurements.

    Measurement-only: never touches phantom files."""
    if not val_sinos:
        raise ConfigError("empty validation set")
    scores = []
    for y in val_sinos:
        x_star, _ = apply_model(net, layer_cfg, eq_cfg, y)
        y_resim = layer_cfg.op.forward(x_star)
        x_again, _ = apply_model(net, layer_cfg, eq_cfg, y_resim)
        scores.append(psnr(x_star, x_again, 1.0))
    return float(np.mean(scores))


def _save_checkpoint(out_dir, step, net, state, meta=None):
    ckpt = os.path.join(out_dir, f"ckpt_{step:07d}")
    net.save(ckpt, extra={**(meta or {}), "step": step})
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        save_tensor(os.path.join(ckpt, f"adam_m{i}.t"), m, np.float64)
        save_tensor(os.path.join(ckpt, f"adam_v{i}.t"), v, np.float64)
    with open(os.path.join(ckpt, "train_state.json"), "w") as f:
        json.dump({"step": state.step, "lr": state.lr,
                   "batch_size": state.batch_size,
                   "best_metric": state.best_metric, "best_step": state.best_step,
                   "evals_since_best": state.evals_since_best}, f, indent=1)
    return ckpt


def load_checkpoint(ckpt_dir):
    net, index = DenoiserNet.load(ckpt_dir)
    state = TrainState()
    sp = os.path.join(ckpt_dir, "train_state.json")
    if os.path.exists(sp):
        with open(sp) as f:
            s = json.load(f)
        state.step = s["step"]
        state.lr = s["lr"]
        state.batch_size = s.get("batch_size", 1)
        state.best_metric = s["best_metric"]
        state.best_step = s["best_step"]
        state.evals_since_best = s["evals_since_best"]
        state.m = [load_tensor(os.path.join(ckpt_dir, f"adam_m{i}.t"))
                   for i in range(2 * net.n_layers)]
        state.v = [load_tensor(os.path.join(ckpt_dir, f"adam_v{i}.t"))
                   for i in range(2 * net.n_layers)]
    return net, state, index


def _sample_order(seed, epoch, n):
    return np.random.default_rng([seed, _ORDER_STREAM, epoch]).permutation(n)


def cosine_lr(base_lr, step, max_steps, hold_frac=0.6, final_frac=0.1):
    """Constant learning rate for the first hold_frac of the run, then a
    cosine anneal down to final_frac * base_lr. Pure function of step, so
    checkpoint resume stays bit-exact."""
    hold = hold_frac * max_steps
    if step <= hold or max_steps <= hold:
        return base_lr
    t = (step - hold) / (max_steps - hold)
    lo = final_frac * base_lr
    return lo + 0.5 * (base_lr - lo) * (1.0 + np.cos(np.pi * min(t, 1.0)))


def train(data_root, out_dir, *, loss_cfg=None, eq_cfg=None, stop_cfg=None,
          max_steps=20_000, lr=1e-5, batch_size=1, lambda_mix=0.4,
          layer_step=None, widths=(1, 32, 32, 32, 1), budget=0.9, seed=0,
          resume=None, norm_iters=100, lr_schedule="constant", log=None):
    """Run measurement-only training; returns a summary dict.

    lr_schedule is "constant" or "cosine" (hold then anneal, see cosine_lr).
    Reads only noisy sinograms (the measurement firewall); phantom files are
    never opened on this code path.
    """
    if lr_schedule not in ("constant", "cosine"):
        raise ConfigError("lr_schedule must be 'constant' or 'cosine'")
    loss_cfg = loss_cfg or LossConfig()
    eq_cfg = eq_cfg or EquilibriumConfig(init="zero")
    stop_cfg = stop_cfg or StoppingConfig()
    os.makedirs(out_dir, exist_ok=True)

    manifest = load_manifest(data_root, verify=False)
    op = operator_from_manifest(manifest)
    estimate_operator_norm(op, iters=norm_iters, seed=seed)
    train_sinos = load_split(data_root, manifest, "train", "sino_noisy")
    val_sinos = load_split(data_root, manifest, "val", "sino_noisy")
    if stop_cfg.val_subset_size:
        val_sinos = val_sinos[: stop_cfg.val_subset_size]
    if not train_sinos:
        raise ConfigError("training split is empty")

    layer_cfg = LayerConfig(op, lambda_mix=lambda_mix, step=layer_step)
    ckpt_meta = {"geometry": manifest["geometry"], "mode": loss_cfg.mode,
                 "layer": {"lambda_mix": layer_cfg.lambda_mix,
                           "omega": layer_cfg.omega, "step": layer_cfg.step}}
    if resume:
        net, state, _ = load_checkpoint(resume)
    else:
        net = DenoiserNet(widths, budget, spectral_size=op.image_size, seed=seed)
        state = TrainState(lr=lr, batch_size=batch_size)
    state.ensure_moments(net.params())

    log_path = os.path.join(out_dir, "train_log.csv")
    new_log = not (resume and os.path.exists(log_path))
    log_f = open(log_path, "w" if new_log else "a", newline="")
    writer = csv.writer(log_f)
    if new_log:
        writer.writerow(["step", "loss_dc", "loss_reg", "stop_metric_db", "wallclock_s"])

    t0 = time.perf_counter()
    checkpoints = []
    halted = False
    n_train = len(train_sinos)
    batch = max(1, int(state.batch_size))
    while state.step < max_steps and not halted:
        step = state.step  # 0-based index of the optimizer step about to run
        acc = None
        dc_sum = reg_sum = 0.0
        for j in range(batch):
            counter = step * batch + j  # position in the global sample stream
            epoch, pos = divmod(counter, n_train)
            idx = int(_sample_order(seed, epoch, n_train)[pos])
            rng = np.random.default_rng([seed, _EPS_STREAM, counter])
            losses, grads = hybrid_loss_and_grad(net, layer_cfg, eq_cfg, loss_cfg,
                                                 train_sinos[idx], rng)
            acc = grads if acc is None else [a + g for a, g in zip(acc, grads)]
            dc_sum += losses["dc"]
            reg_sum += losses["reg"]
        losses = {"dc": dc_sum / batch, "reg": reg_sum / batch}
        lr_now = (state.lr if lr_schedule == "constant"
                  else cosine_lr(state.lr, state.step + 1, max_steps))
        adam_step(net, state, [a / batch for a in acc], lr=lr_now)

        metric_str = ""
        if state.step % stop_cfg.eval_every == 0:
            metric = auto_stop_metric(net, layer_cfg, eq_cfg, val_sinos)
            metric_str = f"{metric:.6f}"
            checkpoints.append(_save_checkpoint(out_dir, state.step, net, state, ckpt_meta))
            if metric > state.best_metric:
                state.best_metric = metric
                state.best_step = state.step
                state.evals_since_best = 0
                with open(os.path.join(out_dir, "BEST"), "w") as f:
                    f.write(f"{state.best_step}\n")
            else:
                state.evals_since_best += 1
                if state.evals_since_best >= stop_cfg.patience:
                    halted = True
        writer.writerow([state.step, f"{losses['dc']:.8e}", f"{losses['reg']:.8e}",
                         metric_str, f"{time.perf_counter() - t0:.3f}"])
        if log and state.step % stop_cfg.eval_every == 0:
            log(f"step {state.step}: dc={losses['dc']:.4e} reg={losses['reg']:.4e} "
                f"stop={metric_str or 'n/a'}")
    log_f.close()

    final_ckpt = _save_checkpoint(out_dir, state.step, net, state, ckpt_meta)
    if final_ckpt not in checkpoints:
        checkpoints.append(final_ckpt)
    if state.best_step < 0:  # no evaluation ever ran
        state.best_step = state.step
        with open(os.path.join(out_dir, "BEST"), "w") as f:
            f.write(f"{state.best_step}\n")
    return {"steps": state.step, "best_step": state.best_step,
            "best_metric": state.best_metric, "halted_early": halted,
            "checkpoints": checkpoints}


def best_checkpoint(out_dir):
    with open(os.path.join(out_dir, "BEST")) as f:
        step = int(f.read().strip())
    return os.path.join(out_dir, f"ckpt_{step:07d}")
