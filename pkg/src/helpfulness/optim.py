"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_parameter(cls, param: Tensor, learning_rate: float = 0.001, **kwargs) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data),
                   learning_rate=learning_rate, **kwargs)


def adam_states(params: Sequence[Tensor], learning_rate: float = 0.001) -> list[AdamState]:
    return [AdamState.for_parameter(p, learning_rate) for p in params]


def adam_step(params: Sequence[Tensor], states: Sequence[AdamState]) -> None:
    """Apply one Adam update to every parameter in place, then clear gradients."""
    if len(params) != len(states):
        raise ContractError(f"{len(params)} parameters but {len(states)} optimizer states")
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {p.name or p!r} has no gradient")
    for p, st in zip(params, states):
        if st.first_moment.shape != p.shape:
            raise ContractError(f"optimizer state shape {st.first_moment.shape} != parameter {p.shape}")
        g = p.grad
        st.step_count += 1
        st.first_moment *= st.beta1
        st.first_moment += (1.0 - st.beta1) * g
        st.second_moment *= st.beta2
        st.second_moment += (1.0 - st.beta2) * (g * g)
        m_hat = st.first_moment / (1.0 - st.beta1 ** st.step_count)
        v_hat = st.second_moment / (1.0 - st.beta2 ** st.step_count)
        p.data -= st.learning_rate * m_hat / (np.sqrt(v_hat) + st.epsilon)
        p.grad = None
