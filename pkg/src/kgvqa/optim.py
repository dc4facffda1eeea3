"""First-order optimizers over dicts of numpy arrays (updated in place)."""

import numpy as np


class Adam:
    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    """SGD with optional heavy-ball momentum and per-key L2 weight decay."""

    def __init__(self, params, lr=0.01, momentum=0.0, weight_decay=0.0, decay_keys=()):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay_keys = set(decay_keys)
        self.buf = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        for k, g in grads.items():
            if self.weight_decay and k in self.decay_keys:
                g = g + self.weight_decay * self.params[k]
            if self.momentum:
                b = self.buf[k]
                b *= self.momentum
                b += g
                g = b
            self.params[k] -= self.lr * g
