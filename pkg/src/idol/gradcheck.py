from __future__ import annotations

import numpy as np

from .nn import Model, loss


def gradient_check(model: Model, x, target, kind: str, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter is ``|a - c| / max(|a|, |c|, 1e-12)``.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    _, analytic = model.loss_and_grad(x, target, kind)
    theta = model.params.copy()
    worst = 0.0
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + h
        lp = loss(kind, model.forward(x, params=theta), target)
        theta[i] = orig - h
        lm = loss(kind, model.forward(x, params=theta), target)
        theta[i] = orig
        central = (lp - lm) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(central), 1e-12)
        worst = max(worst, abs(analytic[i] - central) / denom)
    return worst
