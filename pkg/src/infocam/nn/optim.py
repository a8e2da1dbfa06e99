"""SGD-with-momentum and Adam parameter updates.

Optimizers hold per-parameter state keyed by parameter name, so one
optimizer instance tracks exactly one network.  Updates are deterministic
given the sequence of gradients.
"""

import numpy as np


class Optimizer:
    def step(self, net):
        for name, param, grad in net.param_items():
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(
                    f"non-finite gradient in {name}; training diverged")
            self._update(name, param, grad)

    def _update(self, name, param, grad):
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, lr=0.01, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity = {}

    def _update(self, name, param, grad):
        if self.momentum:
            v = self._velocity.setdefault(name, np.zeros_like(param))
            v *= self.momentum
            v -= self.lr * grad
            param += v
        else:
            param -= self.lr * grad


class Adam(Optimizer):
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = {}

    def _update(self, name, param, grad):
        m = self._m.setdefault(name, np.zeros_like(param))
        v = self._v.setdefault(name, np.zeros_like(param))
        t = self._t.get(name, 0) + 1
        self._t[name] = t
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name, lr, momentum=0.9):
    if name == "adam":
        return Adam(lr=lr)
    if name == "sgd":
        return SGD(lr=lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {name!r}")
