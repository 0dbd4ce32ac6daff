"""Adam optimizer as a pure function over an immutable state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray, lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if state.m.shape != theta.shape or grad.shape != theta.shape:
        raise ValueError(f"state/gradient shape mismatch for theta of shape {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient component")
    t = state.t + 1
    m = BETA1 * state.m + (1.0 - BETA1) * grad
    v = BETA2 * state.v + (1.0 - BETA2) * grad * grad
    m_hat = m / (1.0 - BETA1 ** t)
    v_hat = v / (1.0 - BETA2 ** t)
    new_theta = theta - lr * m_hat / (np.sqrt(v_hat) + EPS)
    return new_theta, AdamState(m, v, t)
