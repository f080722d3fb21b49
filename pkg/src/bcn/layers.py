"""Thin layer wrappers holding parameters for the model assemblies."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .optim import kaiming_uniform
from .tensor import RunningStats, Tensor


class Conv2d:
    def __init__(self, rng, in_ch: int, out_ch: int, k: int, stride: int = 1, padding: int = 0):
        fan_in = in_ch * k * k
        self.weight = Tensor(kaiming_uniform(rng, (out_ch, in_ch, k, k), fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class BatchNorm2d:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running = RunningStats(channels)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.batchnorm2d(
            x, self.gamma, self.beta, self.running,
            mode="train" if training else "eval",
            momentum=self.momentum, eps=self.eps,
        )

    def params(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def buffers(self, prefix):
        return [(f"{prefix}.running_mean", self.running), (f"{prefix}.running_var", self.running)]


class Linear:
    def __init__(self, rng, in_features: int, out_features: int):
        self.weight = Tensor(kaiming_uniform(rng, (out_features, in_features), in_features), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)

    def params(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]
