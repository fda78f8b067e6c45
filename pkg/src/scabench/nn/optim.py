"""Adam optimizer over layer parameter dictionaries."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingDiverged


class Adam:
    """Adam with bias correction; defaults match the training recipe.

    ``targets`` is an iterable of (name, layer, key) triples as produced by
    ``Layer.named_parameters``. ``step`` reads ``layer.grads[key]``, updates
    ``layer.params[key]`` in place, and raises TrainingDiverged on any
    non-finite gradient.
    """

    def __init__(self, targets, lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.targets = list(targets)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(layer.params[key]) for _, layer, key in self.targets]
        self._v = [np.zeros_like(layer.params[key]) for _, layer, key in self.targets]

    def zero_grad(self):
        for _, layer, key in self.targets:
            layer.grads[key][...] = 0.0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for (name, layer, key), m, v in zip(self.targets, self._m, self._v):
            g = layer.grads[key]
            if not np.isfinite(g).all():
                raise TrainingDiverged(f"non-finite gradient in {name!r} at step {self.t}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            layer.params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
