"""ADAM with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ContractError, DomainError
from .tensor import DTYPE, Parameter


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")


def adam_step(params: Sequence[Parameter], state: AdamState) -> AdamState:
    """Apply one in-place ADAM update to ``params`` and clear their gradients.

    Raises :class:`ContractError` (before touching anything) if a parameter
    has no gradient.
    """
    for p in params:
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {p.name!r} has no gradient")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p in params:
        g = p.grad.astype(np.float64)
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros(p.shape, dtype=DTYPE)
            v = np.zeros(p.shape, dtype=DTYPE)
        else:
            v = state.v[p.name]
        m64 = state.beta1 * m + (1 - state.beta1) * g
        v64 = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[p.name], state.v[p.name] = m64.astype(DTYPE), v64.astype(DTYPE)
        update = state.lr * (m64 / bc1) / (np.sqrt(v64 / bc2) + state.epsilon)
        p.data = (p.data - update).astype(DTYPE)
        p.grad = None
    return state


class Adam:
    """Thin stateful wrapper so training loops can call ``opt.step()``."""

    def __init__(self, params: Sequence[Parameter], lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
