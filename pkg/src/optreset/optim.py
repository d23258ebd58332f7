"""Stateful first-order optimizers with explicit, resettable internal state.

Every step is pure: it takes (params, grad, state, hyper) and returns new
params, a new state, and a StepReport. The stored state always holds the raw
running moment averages; bias correction is applied to working copies only,
so two states with equal (m, v, i) are interchangeable regardless of history.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("sgd", "adam", "rmsprop", "radam")


@dataclass(frozen=True)
class OptimHyper:
    """Step size and moment decay rates shared by all optimizer kinds."""

    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    kind: str = "adam"
    prox_coeff: float = 0.0
    radam_threshold: float = 4.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in [0, 1), got {self.beta2}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.prox_coeff < 0:
            raise ValueError(f"prox_coeff must be >= 0, got {self.prox_coeff}")
        # The rectifier expression is only real-valued above 4.
        if self.radam_threshold < 4.0:
            raise ValueError(
                f"radam_threshold must be >= 4, got {self.radam_threshold}"
            )


@dataclass
class OptimizerState:
    """First moment m, second moment v, and the step counter i."""

    m: np.ndarray
    v: np.ndarray
    i: int


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics.

    debias1/debias2 are 1 - beta^i for the post-increment counter, for every
    optimizer kind (they record the counter state, whether or not the kind
    applies the correction). rectifier_active is only meaningful for radam.
    """

    debias1: float
    debias2: float
    rectifier_active: bool
    grad_norm: float


def fresh_state(param_shape) -> OptimizerState:
    return OptimizerState(m=np.zeros(param_shape), v=np.zeros(param_shape), i=0)


def reset_state(state: OptimizerState) -> OptimizerState:
    """Zero moments and counter; indistinguishable from a fresh state."""
    return fresh_state(state.m.shape)


def _check_step_inputs(params: np.ndarray, grad: np.ndarray, state: OptimizerState):
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grad {grad.shape}, "
            f"state {state.m.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")


def _debias_factors(h: OptimHyper, i: int) -> tuple[float, float]:
    return 1.0 - h.beta1**i, 1.0 - h.beta2**i


def adam_step(
    params: np.ndarray, grad: np.ndarray, state: OptimizerState, h: OptimHyper
) -> tuple[np.ndarray, OptimizerState, StepReport]:
    """One Adam update.

    Moment recurrences use the stored raw averages; the debiased copies are
    used for the parameter update only and never written back to the state.
    """
    _check_step_inputs(params, grad, state)
    i = state.i + 1
    m = h.beta1 * state.m + (1.0 - h.beta1) * grad
    v = h.beta2 * state.v + (1.0 - h.beta2) * grad * grad
    d1, d2 = _debias_factors(h, i)
    m_hat = m / d1
    v_hat = v / d2
    new_params = params - h.alpha * m_hat / (np.sqrt(v_hat) + h.epsilon)
    report = StepReport(d1, d2, False, float(np.linalg.norm(grad)))
    return new_params, OptimizerState(m, v, i), report


def rmsprop_step(
    params: np.ndarray, grad: np.ndarray, state: OptimizerState, h: OptimHyper
) -> tuple[np.ndarray, OptimizerState, StepReport]:
    """One RMSProp update: the raw gradient scaled by the undebiased root
    second moment. The first moment is unused and stays zero."""
    _check_step_inputs(params, grad, state)
    i = state.i + 1
    v = h.beta2 * state.v + (1.0 - h.beta2) * grad * grad
    new_params = params - h.alpha * grad / (np.sqrt(v) + h.epsilon)
    d1, d2 = _debias_factors(h, i)
    report = StepReport(d1, d2, False, float(np.linalg.norm(grad)))
    return new_params, OptimizerState(state.m, v, i), report


def radam_step(
    params: np.ndarray, grad: np.ndarray, state: OptimizerState, h: OptimHyper
) -> tuple[np.ndarray, OptimizerState, StepReport]:
    """One rectified-Adam update.

    Moments and debiasing as in Adam. While the variance proxy rho_i is at or
    below the threshold the step is momentum-only (-alpha * m_hat); above it,
    the adaptive step is scaled by the rectifier, which approaches 1 as i
    grows so the update converges to Adam's.
    """
    _check_step_inputs(params, grad, state)
    i = state.i + 1
    m = h.beta1 * state.m + (1.0 - h.beta1) * grad
    v = h.beta2 * state.v + (1.0 - h.beta2) * grad * grad
    d1, d2 = _debias_factors(h, i)
    m_hat = m / d1
    rho_inf = 2.0 / (1.0 - h.beta2) - 1.0
    rho = rho_inf - 2.0 * i * h.beta2**i / d2
    if rho > h.radam_threshold:
        v_hat = v / d2
        rect = np.sqrt(
            ((rho - 4.0) * (rho - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)
        )
        new_params = params - h.alpha * rect * m_hat / (np.sqrt(v_hat) + h.epsilon)
        active = True
    else:
        new_params = params - h.alpha * m_hat
        active = False
    report = StepReport(d1, d2, active, float(np.linalg.norm(grad)))
    return new_params, OptimizerState(m, v, i), report


def sgd_step(
    params: np.ndarray, grad: np.ndarray, state: OptimizerState, h: OptimHyper
) -> tuple[np.ndarray, OptimizerState, StepReport]:
    """Plain gradient descent; moments are untouched, only the counter moves."""
    _check_step_inputs(params, grad, state)
    i = state.i + 1
    new_params = params - h.alpha * grad
    d1, d2 = _debias_factors(h, i)
    report = StepReport(d1, d2, False, float(np.linalg.norm(grad)))
    return new_params, OptimizerState(state.m, state.v, i), report


_STEPS = {
    "sgd": sgd_step,
    "adam": adam_step,
    "rmsprop": rmsprop_step,
    "radam": radam_step,
}


def optimizer_step(
    params: np.ndarray, grad: np.ndarray, state: OptimizerState, h: OptimHyper
) -> tuple[np.ndarray, OptimizerState, StepReport]:
    """Dispatch to the step function for h.kind."""
    return _STEPS[h.kind](params, grad, state, h)


def apply_proximal(
    grad: np.ndarray, w: np.ndarray, theta: np.ndarray, prox_coeff: float
) -> np.ndarray:
    """Add the pull-toward-target term: grad + prox_coeff * (w - theta).

    With prox_coeff 0 the gradient is returned unchanged.
    """
    if prox_coeff < 0:
        raise ValueError(f"prox_coeff must be >= 0, got {prox_coeff}")
    if w.shape != theta.shape or w.shape != grad.shape:
        raise ValueError(
            f"shape mismatch: grad {grad.shape}, w {w.shape}, theta {theta.shape}"
        )
    if prox_coeff == 0:
        return grad
    return grad + prox_coeff * (w - theta)
