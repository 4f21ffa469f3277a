"""AdamW with decoupled weight decay.

State is kept per parameter name in plain dicts so it serializes alongside
the parameters themselves. The decay term is computed from the parameter
value before the moment step is applied:

    theta <- theta - lr * wd * theta - lr * m_hat / (sqrt(v_hat) + eps)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


@dataclass
class AdamWState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("betas must be in [0, 1)")
        if self.lr <= 0.0 or self.eps <= 0.0:
            raise ConfigError("lr and eps must be positive")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be non-negative")


def adamw_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState
) -> None:
    """One in-place AdamW update over every parameter.

    Moment buffers are created lazily on the first step. Raises ConfigError
    if the gradient dict does not cover the parameters exactly.
    """
    if set(grads) != set(params):
        missing = sorted(set(params) - set(grads))
        extra = sorted(set(grads) - set(params))
        raise ConfigError(f"gradient keys mismatch: missing {missing}, extra {extra}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p -= state.lr * state.weight_decay * p
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
