"""Exact Gaussian-process regression with Cholesky factorization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from fmeval.baselines.kernels import KernelExpr, gram, gram_with_grads, kernel_diag, params, with_params
from fmeval.errors import InvalidInput, NumericalFailure
from fmeval.util import rng_for

MAX_JITTER = 1e-2
LOG_BOUNDS = (math.log(1e-5), math.log(1e5))


@dataclass
class GpModel:
    kernel: KernelExpr
    train_x: np.ndarray
    train_y: np.ndarray
    cholesky_factor: np.ndarray
    alpha_vector: np.ndarray
    jitter: float
    jitter_history: list[float] = field(default_factory=list)
    n_clamped: int = 0

    @property
    def escalated(self) -> bool:
        return len(self.jitter_history) > 1


def _solve_lower(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.linalg.solve(L, B)


def _cho_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.linalg.solve(L.T, np.linalg.solve(L, B))


def gp_fit(kernel: KernelExpr, train_x, train_y, jitter: float = 1e-8) -> GpModel:
    """Factorize K + jitter*I, multiplying the jitter by 10 on failure up to 1e-2."""
    x = np.asarray(train_x, dtype=float)
    y = np.asarray(train_y, dtype=float).reshape(-1)
    if len(x) != len(y) or len(y) == 0:
        raise InvalidInput("train_x and train_y must be non-empty and of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInput("training data must be finite")
    K = gram(kernel, x)
    if not np.all(np.isfinite(K)):
        raise NumericalFailure("kernel matrix has non-finite entries")
    history = []
    j = jitter
    while True:
        history.append(j)
        try:
            L = np.linalg.cholesky(K + j * np.eye(len(y)))
            break
        except np.linalg.LinAlgError:
            j *= 10
            if j > MAX_JITTER * (1 + 1e-9):
                raise NumericalFailure(f"kernel matrix not positive definite even with jitter {history[-1]:g}") from None
    alpha = _cho_solve(L, y)
    return GpModel(kernel, x, y, L, alpha, j, history)


def gp_predict(model: GpModel, query_x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at each query point.

    Variance includes any WhiteNoise term of the kernel. Negative values from
    round-off are clamped to zero and counted on ``model.n_clamped``.
    """
    q = np.asarray(query_x, dtype=float)
    Ks = gram(model.kernel, model.train_x, q)
    mean = Ks.T @ model.alpha_vector
    v = _solve_lower(model.cholesky_factor, Ks)
    var = kernel_diag(model.kernel, q) - np.sum(v * v, axis=0)
    negative = var < 0
    if np.any(negative):
        model.n_clamped += int(negative.sum())
        warnings.warn(f"clamped {int(negative.sum())} negative predictive variances "
                      f"(most negative {var.min():.3g})", RuntimeWarning, stacklevel=2)
        var = np.where(negative, 0.0, var)
    return mean, var


def gp_log_marginal_likelihood(model: GpModel, with_grad: bool = False):
    """log p(y | X, kernel); with ``with_grad`` also d/d(log hyperparameters)."""
    y, L, alpha = model.train_y, model.cholesky_factor, model.alpha_vector
    n = len(y)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * math.log(2 * math.pi)
    if not with_grad:
        return lml
    _, dKs = gram_with_grads(model.kernel, model.train_x)
    W = np.outer(alpha, alpha) - _cho_solve(L, np.eye(n))
    # 0.5 * tr(W dK), with W and dK symmetric
    grad = np.array([0.5 * float(np.sum(W * dK)) for dK in dKs])
    return lml, grad


def lml_and_grad(kernel: KernelExpr, x, y, jitter: float = 1e-8) -> tuple[float, np.ndarray]:
    return gp_log_marginal_likelihood(gp_fit(kernel, x, y, jitter), with_grad=True)


@dataclass(frozen=True)
class OptimizeResult:
    kernel: KernelExpr
    lml: float
    initial_lml: float
    restart_lmls: tuple[float, ...]
    n_failed_restarts: int


def gp_optimize(kernel: KernelExpr, x, y, restarts: int = 5, steps: int = 100, seed: int = 0,
                learning_rate: float = 0.01, jitter: float = 1e-8, spread: float = 2.0,
                full: bool = False):
    """Gradient ascent on the log marginal likelihood in log-hyperparameter space.

    Restart 0 starts at ``kernel``; later restarts start from log-uniform draws
    within a factor e**spread of it. Each log-hyperparameter keeps its own step
    size (Rprop): it grows by 1.2 while the gradient sign holds and halves when
    the sign flips, which copes with the very different curvatures of, say, a
    period and a variance. The best likelihood seen over all restarts and steps
    wins, so the result never scores below the initial kernel.
    """
    if restarts < 1 or steps < 0:
        raise InvalidInput("restarts >= 1 and steps >= 0 are required")
    theta0 = np.log(np.array(params(kernel)))
    rng = rng_for(seed, "gp-restarts")
    best_kernel, best_lml, initial_lml = None, -math.inf, None
    restart_lmls, failed = [], 0
    for r in range(restarts):
        start = theta0 if r == 0 else theta0 + rng.uniform(-spread, spread, size=theta0.shape)
        if r > 0:
            start = np.clip(start, *LOG_BOUNDS)
        theta = start.copy()
        delta = np.full_like(start, learning_rate)
        prev = np.zeros_like(start)
        last_step = np.zeros_like(start)
        prev_lml = -math.inf
        run_best = -math.inf
        try:
            for t in range(steps + 1):
                # the untouched input kernel is used as-is so a zero-step run returns it exactly
                candidate = kernel if (r == 0 and t == 0) else with_params(kernel, np.exp(theta))
                lml, grad = lml_and_grad(candidate, x, y, jitter)
                if not (math.isfinite(lml) and np.all(np.isfinite(grad))):
                    raise NumericalFailure("non-finite likelihood")
                if r == 0 and t == 0:
                    initial_lml = lml
                if lml > run_best:
                    run_best = lml
                if lml > best_lml:
                    best_lml, best_kernel = lml, candidate
                if t == steps:
                    break
                agree = grad * prev
                flipped = agree < 0
                delta = np.where(agree > 0, np.minimum(delta * 1.2, 1.0),
                                 np.where(flipped, np.maximum(delta * 0.5, 1e-8), delta))
                # a sign flip after a worse step undoes that coordinate's last move
                step = np.where(flipped, -last_step if lml < prev_lml else 0.0, delta * np.sign(grad))
                prev = np.where(flipped, 0.0, grad)
                prev_lml = lml
                new_theta = np.clip(theta + step, *LOG_BOUNDS)
                last_step = new_theta - theta
                theta = new_theta
        except (NumericalFailure, InvalidInput):
            failed += 1
        restart_lmls.append(run_best)
    if best_kernel is None:
        raise NumericalFailure("every optimization restart failed numerically")
    result = OptimizeResult(best_kernel, best_lml,
                            initial_lml if initial_lml is not None else -math.inf,
                            tuple(restart_lmls), failed)
    return result if full else result.kernel
