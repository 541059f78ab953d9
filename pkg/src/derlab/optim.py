"""Adam over a flat parameter vector, plus heavy-ball momentum SGD.

Momentum SGD exists for the nu-collapse counterexample; it is not a
supported training path for the evidential losses.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # multiplicative per-step decay of the learning rate; 1.0 keeps it constant
    decay: float = 1.0
    step: int = 0
    first_moment: np.ndarray = None
    second_moment: np.ndarray = None

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(state, params, grad):
    """One bias-corrected Adam update. Returns (new_params, state); ``state`` is updated in place."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if state.first_moment is None:
        state.first_moment = np.zeros_like(params)
        state.second_moment = np.zeros_like(params)
    elif state.first_moment.shape != params.shape:
        raise ValueError("optimizer state does not match parameter length")
    state.step += 1
    t = state.step
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    lr = state.learning_rate * state.decay ** (t - 1)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon), state


@dataclass
class MomentumState:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    step: int = 0
    velocity: np.ndarray = field(default=None)


def momentum_step(state, params, grad):
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if state.velocity is None:
        state.velocity = np.zeros_like(params)
    state.step += 1
    state.velocity = state.momentum * state.velocity + grad
    return params - state.learning_rate * state.velocity, state
