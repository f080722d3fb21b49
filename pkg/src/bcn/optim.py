"""Parameter initialization and optimizers (plain SGD and Adam)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform fan-in scaling for ReLU stacks: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class SGD:
    """Plain stochastic gradient descent, no momentum."""

    kind = "sgd"

    def __init__(self, params: list[tuple[str, Tensor]], lr: float, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        for _, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + np.float32(self.weight_decay) * p.data
            p.data -= np.float32(self.lr) * g

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return []

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        pass


class Adam:
    """Bias-corrected Adam with optional decoupled weight decay."""

    kind = "adam"

    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            mhat = m / bc1
            vhat = v / bc2
            if self.weight_decay:
                p.data -= np.float32(self.lr * self.weight_decay) * p.data
            p.data -= (np.float32(self.lr) * mhat / (np.sqrt(vhat) + self.eps)).astype(np.float32)

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [("adam.t", np.array([self.t], dtype=np.float32))]
        for name, _ in self.params:
            out.append((f"adam.m.{name}", self.m[name]))
            out.append((f"adam.v.{name}", self.v[name]))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.t = int(arrays["adam.t"][0])
        for name, p in self.params:
            m = arrays[f"adam.m.{name}"].reshape(p.data.shape)
            v = arrays[f"adam.v.{name}"].reshape(p.data.shape)
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ValueError(f"optimizer state for {name} does not match parameter shape")
            self.m[name] = m.astype(np.float32).copy()
            self.v[name] = v.astype(np.float32).copy()
