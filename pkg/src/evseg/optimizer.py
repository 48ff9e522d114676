"""Contrast maximization with a hand-rolled Adam optimizer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .objective import contrast_and_grad
from .warps import DOF, OPTIMIZABLE, MotionModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    max_iters: int = 1000
    grad_tol: float = 1e-6  # relative to the current contrast value
    patience: int = 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


class Adam:
    """Adam update for a single parameter vector.

    ``step`` returns the increment for *descent*; callers that ascend negate
    the gradient they pass in.
    """

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, grad):
        grad = np.asarray(grad, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class OptimizeResult:
    theta_star: np.ndarray
    final_contrast: float
    trace: list = field(default_factory=list)  # (iteration, theta, contrast)
    converged: bool = False
    reason: str = ""

    @property
    def n_iters(self):
        return len(self.trace)

    def trace_csv(self):
        dof = len(self.theta_star)
        head = "iter," + ",".join(f"theta{i}" for i in range(dof)) + ",contrast\n"
        rows = [
            f"{it}," + ",".join(repr(float(v)) for v in theta) + f",{c!r}\n"
            for it, theta, c in self.trace
        ]
        return head + "".join(rows)


def maximize(events, model_kind, theta_init=None, config=None, epsilon=1.0, use_polarity=False):
    """Estimate the warp parameters that maximize the IWE variance.

    Runs Adam ascent from ``theta_init`` (zeros by default) and returns the
    best point visited, so the result is never worse than the start.
    """
    if model_kind not in OPTIMIZABLE:
        raise ModelError(f"{model_kind} is not optimizable")
    config = config or OptimizerConfig()
    theta = np.zeros(DOF[model_kind]) if theta_init is None else np.array(theta_init, dtype=np.float64)
    if theta.shape != (DOF[model_kind],) or not np.all(np.isfinite(theta)):
        raise ValueError("theta_init must be a finite vector matching the warp's degrees of freedom")
    adam = Adam(config.learning_rate, config.beta1, config.beta2, config.eps_adam)
    trace = []
    best_c, best_theta, stale = -np.inf, theta.copy(), 0
    reason, converged = "max_iters", False
    for it in range(1, config.max_iters + 1):
        report, grad = contrast_and_grad(events, MotionModel(model_kind, theta), epsilon, use_polarity)
        c = report.value
        trace.append((it, theta.copy(), c))
        if c > best_c:
            best_c, best_theta, stale = c, theta.copy(), 0
        else:
            stale += 1
        if np.linalg.norm(grad) <= config.grad_tol * abs(c):
            reason, converged = "grad_tol", True
            break
        if stale >= config.patience:
            reason, converged = "patience", True
            break
        theta = theta + adam.step(-grad)
    log.debug("maximize %s: %d iters, stop=%s, theta*=%s, C=%.6g",
              model_kind, len(trace), reason, best_theta, best_c)
    return OptimizeResult(best_theta, best_c, trace, converged, reason)
