"""Parameter update rules: Adadelta and plain SGD.

Updates are applied in place; accumulator state lives in
:class:`AdadeltaState` and starts at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError, ShapeError


@dataclass
class AdadeltaState:
    """Running averages of squared gradients and squared updates."""

    rho: float = 0.95
    eps: float = 1e-6
    acc_grad: list = field(default_factory=list)
    acc_update: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ParameterError(f"adadelta rho must be in (0, 1), got {self.rho}")
        if self.eps <= 0:
            raise ParameterError(f"adadelta eps must be positive, got {self.eps}")

    def _ensure(self, params):
        if not self.acc_grad:
            self.acc_grad = [np.zeros_like(p) for p in params]
            self.acc_update = [np.zeros_like(p) for p in params]
        elif len(self.acc_grad) != len(params):
            raise ShapeError("adadelta state does not match parameter count")


def adadelta_step(params, grads, state: AdadeltaState):
    """One Adadelta update over matching lists of parameter/gradient arrays.

    acc_g <- rho*acc_g + (1-rho)*g^2
    delta  = -sqrt((acc_u + eps) / (acc_g + eps)) * g
    acc_u <- rho*acc_u + (1-rho)*delta^2
    """
    state._ensure(params)
    rho, eps = state.rho, state.eps
    for p, g, ag, au in zip(params, grads, state.acc_grad, state.acc_update):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in adadelta step")
        ag *= rho
        ag += (1 - rho) * g * g
        delta = -np.sqrt((au + eps) / (ag + eps)) * g
        au *= rho
        au += (1 - rho) * delta * delta
        p += delta
    return params, state


def sgd_step(params, grads, lr):
    """Vanilla gradient descent: p <- p - lr * g."""
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in sgd step")
        p -= lr * g
    return params
