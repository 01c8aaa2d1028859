from __future__ import annotations

import numpy as np
import torch

from ..errors import NonFinite


def _finite(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.all(np.isfinite(x)))


class SGDMomentum:
    """Heavy-ball SGD with L2 weight decay.

    Per parameter: ``d = g + wd * theta``; ``buf = mu * buf + d`` (``buf = d``
    on the first step); ``theta -= lr * buf``. Works in place on numpy arrays
    and torch tensors alike.
    """

    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 1e-4):
        if lr < 0 or momentum < 0 or weight_decay < 0:
            raise ValueError("lr, momentum and weight_decay must be nonnegative")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict[int, object] = {}

    def step(self, params, grads, step_index=None):
        params, grads = list(params), list(grads)
        for g in grads:
            if g is not None and not _finite(g):
                raise NonFinite("non-finite encoder gradient", step=step_index)
        with torch.no_grad():
            for i, (p, g) in enumerate(zip(params, grads)):
                if g is None:
                    continue
                d = g + self.weight_decay * p if self.weight_decay else g
                if self.momentum:
                    buf = self.buffers.get(i)
                    if buf is None:
                        buf = d.clone() if isinstance(d, torch.Tensor) else np.array(d, copy=True)
                    else:
                        buf = self.momentum * buf + d
                    self.buffers[i] = buf
                    d = buf
                p -= self.lr * d
        return params

    def state_dict(self):
        return {"lr": self.lr, "momentum": self.momentum, "weight_decay": self.weight_decay, "buffers": dict(self.buffers)}

    def load_state_dict(self, state):
        self.lr = state["lr"]
        self.momentum = state["momentum"]
        self.weight_decay = state["weight_decay"]
        self.buffers = dict(state["buffers"])


def update_encoder(params, grads, lr: float, momentum: float = 0.0, weight_decay: float = 0.0, optimizer=None):
    """Apply one SGD(-momentum) step in place; pass ``optimizer`` to keep momentum across calls."""
    opt = optimizer or SGDMomentum(lr, momentum, weight_decay)
    return opt.step(params, grads)
