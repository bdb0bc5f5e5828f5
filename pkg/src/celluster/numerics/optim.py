"""Adam with bias correction, functional over lists of parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeMismatchError


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Mutates moments in `state`, returns new arrays."""
    if len(params) != len(grads):
        raise ShapeMismatchError(
            f"adam_step: {len(params)} params vs {len(grads)} grads"
        )
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatchError(
                f"adam_step: param shape {p.shape}, grad shape {g.shape}, moment shape {m.shape}"
            )

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = b2 * state.second_moment[i] + (1.0 - b2) * (g * g)
        state.first_moment[i] = m
        state.second_moment[i] = v
        m_hat = m / correction1
        v_hat = v / correction2
        updated.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return updated, state
