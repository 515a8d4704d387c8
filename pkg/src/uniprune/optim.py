"""AdamW over named numpy arrays, one moment pair per key."""

from __future__ import annotations

import numpy as np

Array = np.ndarray


class AdamW:
    def __init__(self, lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0) -> None:
        if lr <= 0.0:
            raise ValueError("lr must be positive")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._m: dict = {}
        self._v: dict = {}
        self._t: dict = {}

    def step(self, key, value: Array, grad: Array) -> Array:
        """One decoupled-weight-decay Adam update; returns the new value."""
        if key not in self._m:
            self._m[key] = np.zeros_like(value)
            self._v[key] = np.zeros_like(value)
            self._t[key] = 0
        self._t[key] += 1
        t = self._t[key]
        m = self._m[key] = self.beta1 * self._m[key] + (1.0 - self.beta1) * grad
        v = self._v[key] = self.beta2 * self._v[key] + (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        out = value - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                 + self.weight_decay * value)
        return out
