"""Adam with bias correction over named parameter dictionaries."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update. Pure function: returns (new_params, new_state).

    ``params``/``grads`` map name -> ndarray with matching shapes; ``state``
    is ``{}`` on the first call.
    """
    t = state.get("t", 0) + 1
    new_params = {}
    new_state = {"t": t}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        m = state.get(f"m:{name}", np.zeros_like(p))
        v = state.get(f"v:{name}", np.zeros_like(p))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        new_params[name] = p - lr * mhat / (np.sqrt(vhat) + eps)
        new_state[f"m:{name}"] = m
        new_state[f"v:{name}"] = v
    return new_params, new_state


class Adam:
    """Stateful wrapper that updates parameter Tensors in place."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict = {}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        raw = {k: t.data for k, t in self.params.items()}
        new, self.state = adam_step(raw, grads, self.state, self.lr,
                                    self.beta1, self.beta2, self.eps)
        for k, t in self.params.items():
            t.data = new[k]
