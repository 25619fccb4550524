"""Fixed-point solving: Picard iteration and regularized Anderson acceleration."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError

_EPS = np.finfo(np.float64).eps


@dataclass
class EquilibriumConfig:
    tol: float = 1e-3
    max_iters: int = 50
    method: str = "anderson"
    anderson_memory: int = 5
    anderson_ridge: float = 1e-4  # relative to the Gram trace
    anderson_relaxation: float = 1.0
    init: str = "zero"  # zero | fbp

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.anderson_memory < 1:
            raise ConfigError("anderson_memory must be >= 1")
        if self.method not in ("picard", "anderson"):
            raise ConfigError("method must be 'picard' or 'anderson'")
        if self.init not in ("zero", "fbp"):
            raise ConfigError("init must be 'zero' or 'fbp'")


@dataclass
class SolveReport:
    iterations: int = 0
    final_residual: float = np.inf
    converged: bool = False
    residual_history: list = field(default_factory=list)

    def to_dict(self):
        return {"iterations": self.iterations,
                "final_residual": self.final_residual,
                "converged": self.converged,
                "residual_history": list(self.residual_history)}


def anderson_step(xs, fs, m, ridge, beta):
    """Mix the last min(m, k) iterate/value pairs.

    Solves min ||sum_i a_i (f_i - x_i)||^2 subject to sum a_i = 1 via ridge-
    regularized normal equations (regularization scaled by the Gram trace),
    then returns beta * sum a_i f_i + (1 - beta) * sum a_i x_i.
    """
    if not xs:
        raise ConfigError("anderson_step needs a nonempty history")
    k = min(m, len(xs))
    X = np.stack([x.ravel() for x in xs[-k:]])
    F = np.stack([f.ravel() for f in fs[-k:]])
    G = F - X
    gram = G @ G.T
    reg = ridge * max(np.trace(gram), _EPS)
    gram = gram + reg * np.eye(k)
    # bordered system enforcing the affine constraint
    H = np.zeros((k + 1, k + 1))
    H[0, 1:] = 1.0
    H[1:, 0] = 1.0
    H[1:, 1:] = gram
    rhs = np.zeros(k + 1)
    rhs[0] = 1.0
    coeffs = np.linalg.solve(H, rhs)[1:]
    mixed = beta * (coeffs @ F) + (1.0 - beta) * (coeffs @ X)
    return mixed.reshape(xs[0].shape), coeffs


def solve_fixed_point(step_fn, x0, cfg: EquilibriumConfig):
    """Solve x = step_fn(x) from x0; returns (x, SolveReport).

    step_fn must be a contraction for the convergence guarantee; a non-finite
    iterate is treated as a bug signal and raises NumericalError. An Anderson
    candidate whose residual grows by more than 10x is discarded in favor of
    the plain Picard step for that iteration.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    report = SolveReport()
    xs, fs = [], []
    prev_res = np.inf
    for it in range(1, cfg.max_iters + 1):
        fx = step_fn(x)
        if not np.all(np.isfinite(fx)):
            raise NumericalError("non-finite iterate in fixed-point solve")
        res = float(np.linalg.norm(fx - x) / max(np.linalg.norm(x), _EPS))
        if cfg.method == "anderson" and res > 10.0 * prev_res and len(fs) >= 2:
            # safeguard: retake the previous point's Picard step
            x = fs[-1]
            fx = step_fn(x)
            res = float(np.linalg.norm(fx - x) / max(np.linalg.norm(x), _EPS))
        report.residual_history.append(res)
        report.iterations = it
        report.final_residual = res
        xs.append(x)
        fs.append(fx)
        if len(xs) > cfg.anderson_memory:
            xs.pop(0)
            fs.pop(0)
        if res <= cfg.tol:
            report.converged = True
            x = fx
            break
        prev_res = res
        if cfg.method == "picard" or len(xs) == 1:
            x = fx
        else:
            x, _ = anderson_step(xs, fs, cfg.anderson_memory,
                                 cfg.anderson_ridge, cfg.anderson_relaxation)
    return x, report
