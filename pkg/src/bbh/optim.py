"""Adam with bias correction, operating in place on numpy arrays."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _array(p):
    return p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update; ``params`` are modified in place.

    ``params`` may be Tensors or float64 arrays. Returns (params, state).
    """
    arrays = [_array(p) for p in params]
    if len(arrays) != len(grads):
        raise ContractError(f"adam_step: {len(arrays)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        g = np.asarray(g)
        if g.shape != a.shape or m.shape != a.shape:
            raise ContractError(f"adam_step: gradient shape {g.shape} vs parameter {a.shape}")
        kernels.adam_update(a, g, m, v, lr, b1, b2, state.eps, c1, c2)
    return params, state


class Adam:
    """Stateful wrapper pairing a parameter list with its AdamState."""

    def __init__(self, params, lr):
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.state = AdamState()

    def step(self, grads):
        adam_step(self.params, [grads[p] for p in self.params], self.state, self.lr)
