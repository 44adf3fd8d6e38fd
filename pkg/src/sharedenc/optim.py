"""Adam with bias correction, float32 state."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None],
              state: AdamState, config: AdamConfig) -> None:
    """One in-place Adam update.

    Parameters whose gradient is ``None`` did not take part in the loss; they
    and their moments are left untouched. The step counter is shared.
    """
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    f32 = np.float32
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"adam: grad for {name} has shape {g.shape}, param has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ShapeError(f"adam: state for {name} has shape {m.shape}, param has {p.shape}")
        v = state.v[name]
        g = g.astype(np.float32, copy=False)
        m *= f32(b1)
        m += f32(1.0 - b1) * g
        v *= f32(b2)
        v += f32(1.0 - b2) * (g * g)
        m_hat = m / f32(c1)
        v_hat = v / f32(c2)
        p -= f32(config.lr) * m_hat / (np.sqrt(v_hat) + f32(config.eps))


class Adam:
    """Thin stateful wrapper binding :func:`adam_step` to a parameter dict."""

    def __init__(self, params: dict[str, Tensor], config: AdamConfig | None = None):
        self.params = params
        self.config = config or AdamConfig()
        self.state = AdamState()

    def step(self):
        adam_step({n: p.data for n, p in self.params.items()},
                  {n: p.grad for n, p in self.params.items()},
                  self.state, self.config)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
