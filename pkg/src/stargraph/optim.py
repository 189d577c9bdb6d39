"""AdamW with decoupled weight decay and bias correction."""

from __future__ import annotations

import numpy as np

from .errors import NumericError
from .tensor import Parameter


class AdamW:
    """Adam update with weight decay applied directly to the parameters.

    Per step t (1-based)::

        p <- p * (1 - lr * wd)
        m <- b1 m + (1 - b1) g;   v <- b2 v + (1 - b2) g^2
        p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        bad = [p.name for p in self.params if not np.all(np.isfinite(p.grad))]
        if bad:
            raise NumericError(f"non-finite gradient in {', '.join(bad)}; step aborted")
        lr = float(self.lr if lr is None else lr)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.data *= p.dtype.type(1.0 - lr * self.weight_decay)
            m *= p.dtype.type(self.beta1)
            m += p.dtype.type(1.0 - self.beta1) * g
            v *= p.dtype.type(self.beta2)
            v += p.dtype.type(1.0 - self.beta2) * g * g
            denom = np.sqrt(v / p.dtype.type(c2)) + p.dtype.type(self.eps)
            p.data -= p.dtype.type(lr / c1) * m / denom

    def state_dict(self) -> dict:
        state = {"t": np.array(self.t)}
        for p, m, v in zip(self.params, self.m, self.v):
            state[f"m/{p.name}"] = m.copy()
            state[f"v/{p.name}"] = v.copy()
        return state

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for i, p in enumerate(self.params):
            self.m[i][...] = state[f"m/{p.name}"]
            self.v[i][...] = state[f"v/{p.name}"]
