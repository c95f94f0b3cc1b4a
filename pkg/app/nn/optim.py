from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from app.nn.tensor import Parameter


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared step counter"""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Sequence[Parameter], **hyper) -> "AdamState":
        state = cls(**hyper)
        for p in params:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state


def adam_step(params: Sequence[Parameter], state: AdamState) -> Tuple[Sequence[Parameter], AdamState]:
    """One Adam update followed by decoupled weight decay, in place"""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
        if state.weight_decay:
            p.data -= (state.lr * state.weight_decay) * p.data
    return params, state


def zero_grad(params: Sequence[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def uniform_init(name: str, shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator, dtype) -> Parameter:
    """U(-a, a) with a = sqrt(6 / fan_in)"""
    bound = np.sqrt(6.0 / fan_in)
    return Parameter(name, rng.uniform(-bound, bound, size=shape), dtype=dtype)


def zeros_init(name: str, shape: Tuple[int, ...], dtype) -> Parameter:
    return Parameter(name, np.zeros(shape), dtype=dtype)
