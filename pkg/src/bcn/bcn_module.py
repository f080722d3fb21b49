"""The broadcasting module: coordinate concat, 1x1 stack, pool, re-broadcast.

Forward contract (pooling MAX or AVG):
  1. concat input features F with coordinate planes C along channels
  2. m layers of 1x1 convolution, ReLU after every layer
  3. global pool per channel -> [N, n]
  4. expand back to [N, n, h, w]
  5. concat C again -> [N, n + n_c, h, w]

With pooling NONE (the skip-connection ablation) steps 3-4 are skipped and
``skip_forward`` must be used instead.  Coordinate planes are regenerated
per input resolution, so the module is resolution-generic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import tensor as T
from .coords import CoordMode, make_planes
from .optim import kaiming_uniform
from .tensor import Tensor


class Pooling(Enum):
    MAX = "max"
    AVG = "avg"
    NONE = "none"


@dataclass
class BcnConfig:
    layer_widths: list[int]
    pooling: Pooling = Pooling.MAX
    coord_mode: CoordMode = CoordMode.CENTERED_XY_RADIAL
    reduce_to: Optional[int] = None

    def __post_init__(self):
        self.pooling = Pooling(self.pooling)
        self.coord_mode = CoordMode(self.coord_mode)
        if len(self.layer_widths) < 1:
            raise ValueError("layer_widths must contain at least one width")
        if any(s < 1 for s in self.layer_widths):
            raise ValueError(f"layer widths must be positive, got {self.layer_widths}")
        if self.reduce_to is not None and self.reduce_to < 1:
            raise ValueError(f"reduce_to must be positive, got {self.reduce_to}")

    @property
    def out_channels(self) -> int:
        return self.layer_widths[-1] + self.coord_mode.num_planes


class BcnModule:
    """Learned kernels realizing the broadcast transform for a fixed n'."""

    def __init__(self, config: BcnConfig, in_channels: int, rng: np.random.Generator):
        self.config = config
        self.in_channels = in_channels
        n_c = config.coord_mode.num_planes
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        prev = in_channels + n_c
        for width in config.layer_widths:
            self.weights.append(
                Tensor(kaiming_uniform(rng, (width, prev, 1, 1), fan_in=prev), requires_grad=True)
            )
            self.biases.append(Tensor(np.zeros(width, dtype=np.float32), requires_grad=True))
            prev = width
        self.reduce_weight: Optional[Tensor] = None
        self.reduce_bias: Optional[Tensor] = None
        if config.reduce_to is not None:
            merged = in_channels + config.out_channels
            self.reduce_weight = Tensor(
                kaiming_uniform(rng, (config.reduce_to, merged, 1, 1), fan_in=merged),
                requires_grad=True,
            )
            self.reduce_bias = Tensor(np.zeros(config.reduce_to, dtype=np.float32), requires_grad=True)
        self.last_argmax: Optional[np.ndarray] = None  # [N, n] flat positions
        self.last_spatial: Optional[tuple[int, int]] = None

    def params(self, prefix: str = "bcn") -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}.stack{i}.weight", w))
            out.append((f"{prefix}.stack{i}.bias", b))
        if self.reduce_weight is not None:
            out.append((f"{prefix}.reduce.weight", self.reduce_weight))
            out.append((f"{prefix}.reduce.bias", self.reduce_bias))
        return out

    # -- internals ---------------------------------------------------------

    def _planes_tensor(self, n: int, h: int, w: int) -> Optional[Tensor]:
        n_c = self.config.coord_mode.num_planes
        if n_c == 0:
            return None
        planes = make_planes(self.config.coord_mode, h, w).planes
        return Tensor(np.broadcast_to(planes[None], (n, n_c, h, w)))

    def _stack(self, f: Tensor) -> tuple[Tensor, Optional[Tensor]]:
        n, c, h, w = f.shape
        if c != self.in_channels:
            raise T.ShapeError(
                f"module built for {self.in_channels} input channels, got {f.shape}"
            )
        planes = self._planes_tensor(n, h, w)
        x = T.concat_channels([f, planes]) if planes is not None else f
        for wgt, b in zip(self.weights, self.biases):
            x = T.relu(T.conv2d(x, wgt, b))
        return x, planes

    # -- public forwards ---------------------------------------------------

    def forward(self, f: Tensor) -> Tensor:
        """Pool-and-broadcast forward; needs pooling MAX or AVG."""
        if self.config.pooling is Pooling.NONE:
            raise ValueError("pooling NONE is the skip-connection variant; use skip_forward")
        n, _, h, w = f.shape
        x, planes = self._stack(f)
        if self.config.pooling is Pooling.MAX:
            pooled, argmax = T.global_max_pool(x)
            self.last_argmax = argmax
            self.last_spatial = (h, w)
        else:
            pooled = T.global_avg_pool(x)
            self.last_argmax = None
            self.last_spatial = (h, w)
        b = T.expand_spatial(pooled, h, w)
        return T.concat_channels([b, planes]) if planes is not None else b

    def skip_forward(self, f: Tensor) -> Tensor:
        """Same 1x1 stack, but features pass through unpooled."""
        if self.config.pooling is not Pooling.NONE:
            raise ValueError("skip_forward is only valid with pooling NONE")
        x, planes = self._stack(f)
        return T.concat_channels([x, planes]) if planes is not None else x

    def merge_and_reduce(self, f: Tensor, b: Tensor) -> Tensor:
        """Concat [F, B] and apply the reduction 1x1 conv + ReLU."""
        if self.reduce_weight is None:
            raise ValueError("merge_and_reduce needs reduce_to set in the config")
        if f.shape[2:] != b.shape[2:] or f.shape[0] != b.shape[0]:
            raise T.ShapeError(f"spatial mismatch between F {f.shape} and B {b.shape}")
        merged = T.concat_channels([f, b])
        return T.relu(T.conv2d(merged, self.reduce_weight, self.reduce_bias))
