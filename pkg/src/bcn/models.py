"""Concrete network assemblies.

ScaledMnistNet: 3-5 strided 3x3 conv layers (conv -> ReLU -> batchnorm),
optionally with coordinate concat, a skip-connection stack, or a full
broadcast module between layers 2 and 3, then a pooled 10-way classifier
and a 2-d center regressor.  The pooled heads keep the parameter budget at
the reference counts and make the trunk resolution-agnostic, which the
zero-shot larger-canvas evaluation relies on.

SortOfClevrNet: four 24-filter conv layers (stride 2, or stride 1 in the
fourth for the high-resolution variant), then one of four heads:
  * multiRN     -- broadcast summary + question, 1x1-conv relation stack,
                   global sum pool, MLP classifier; n relation evaluations.
  * multiRN w/o broadcast -- same minus the broadcast summary.
  * pairwise RN -- coordinates appended to per-position objects, shared MLP
                   over all n^2 ordered pairs; n^2 relation evaluations.
  * MLP only    -- flattened features + question straight into the MLP.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional

import numpy as np

from . import tensor as T
from .bcn_module import BcnConfig, BcnModule, Pooling
from .coords import CoordMode, make_planes
from .layers import BatchNorm2d, Conv2d, Linear
from .tensor import Tensor

QUESTION_DIM = 11
NUM_ANSWERS = 10


class SmnistVariant(Enum):
    BASELINE = "baseline"
    CCE_ONLY = "cce_only"
    SKIP = "skip"
    BCN_AVG = "bcn_avg"
    BCN_MAX = "bcn_max"


class SocHead(Enum):
    MULTIRN = "multirn"
    MULTIRN_NO_BCN = "multirn_no_bcn"
    RN_PAIRWISE = "rn_pairwise"
    MLP_ONLY = "mlp_only"


class _Net:
    """Shared parameter/buffer bookkeeping."""

    def __init__(self):
        self.training = True
        self._named_params: list[tuple[str, Tensor]] = []
        self._named_bns: list[tuple[str, BatchNorm2d]] = []

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def params(self) -> list[tuple[str, Tensor]]:
        return list(self._named_params)

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(name, p.data) for name, p in self._named_params]
        for name, bn in self._named_bns:
            out.append((f"{name}.running_mean", bn.running.mean))
            out.append((f"{name}.running_var", bn.running.var))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for name, p in self._named_params:
            a = arrays[name]
            if a.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {a.shape} vs {p.data.shape}")
            p.data = a.astype(np.float32).copy()
        for name, bn in self._named_bns:
            bn.running.mean = arrays[f"{name}.running_mean"].astype(np.float32).copy()
            bn.running.var = arrays[f"{name}.running_var"].astype(np.float32).copy()

    def _register(self, prefix: str, layer):
        self._named_params.extend(layer.params(prefix))
        if isinstance(layer, BatchNorm2d):
            self._named_bns.append((prefix, layer))


def param_count(net: _Net) -> int:
    """Number of learnable scalars (conv, linear, batchnorm gamma/beta)."""
    return sum(p.size for _, p in net.params())


# ---------------------------------------------------------------------------

class ScaledMnistNet(_Net):
    BCN_WIDTHS = [64, 64, 128]

    def __init__(
        self,
        variant: SmnistVariant = SmnistVariant.BCN_MAX,
        depth: int = 3,
        filters: int = 24,
        coord_mode: CoordMode = CoordMode.CENTERED_XY_RADIAL,
        seed: int = 0,
    ):
        super().__init__()
        if depth not in (3, 4, 5):
            raise ValueError(f"depth must be 3, 4 or 5, got {depth}")
        self.variant = SmnistVariant(variant)
        self.depth = depth
        self.filters = filters
        self.coord_mode = CoordMode(coord_mode)
        rng = np.random.default_rng(seed)

        n_c = self.coord_mode.num_planes
        self.convs: list[Conv2d] = []
        self.bns: list[BatchNorm2d] = []
        for i in range(depth):
            in_ch = 1 if i == 0 else filters
            if i == 2 and self.variant is SmnistVariant.CCE_ONLY:
                in_ch += n_c
            conv = Conv2d(rng, in_ch, filters, 3, stride=2, padding=1)
            bn = BatchNorm2d(filters)
            self.convs.append(conv)
            self.bns.append(bn)
            self._register(f"conv{i}", conv)
            self._register(f"bn{i}", bn)

        self.bcn: Optional[BcnModule] = None
        if self.variant in (SmnistVariant.SKIP, SmnistVariant.BCN_AVG, SmnistVariant.BCN_MAX):
            pooling = {
                SmnistVariant.SKIP: Pooling.NONE,
                SmnistVariant.BCN_AVG: Pooling.AVG,
                SmnistVariant.BCN_MAX: Pooling.MAX,
            }[self.variant]
            cfg = BcnConfig(
                layer_widths=list(self.BCN_WIDTHS),
                pooling=pooling,
                coord_mode=self.coord_mode,
                reduce_to=filters,
            )
            self.bcn = BcnModule(cfg, in_channels=filters, rng=rng)
            self._named_params.extend(self.bcn.params("bcn"))

        self.head_cls = Linear(rng, filters, 10)
        self.head_ctr = Linear(rng, filters, 2)
        self._register("head_cls", self.head_cls)
        self._register("head_ctr", self.head_ctr)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """x: [N, 1, H, W] -> (class_logits [N, 10], center_pred [N, 2])."""
        if x.ndim != 4 or x.shape[1] != 1:
            raise T.ShapeError(f"expected [N, 1, H, W] input, got {x.shape}")
        for i in range(self.depth):
            if i == 2:
                x = self._insert(x)
            x = self.bns[i](T.relu(self.convs[i](x)), self.training)
        pooled = T.global_avg_pool(x)
        return self.head_cls(pooled), self.head_ctr(pooled)

    def _insert(self, f: Tensor) -> Tensor:
        if self.variant is SmnistVariant.BASELINE:
            return f
        if self.variant is SmnistVariant.CCE_ONLY:
            n, _, h, w = f.shape
            planes = make_planes(self.coord_mode, h, w).planes
            c = Tensor(np.broadcast_to(planes[None], (n, planes.shape[0], h, w)))
            return T.concat_channels([f, c])
        if self.variant is SmnistVariant.SKIP:
            b = self.bcn.skip_forward(f)
        else:
            b = self.bcn.forward(f)
        return self.bcn.merge_and_reduce(f, b)


def scaled_mnist_forward(net: ScaledMnistNet, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample convenience wrapper: [1, H, W] -> (logits[10], center[2])."""
    logits, center = net.forward(Tensor(np.asarray(image)[None]))
    return logits.data[0], center.data[0]


# ---------------------------------------------------------------------------

class SortOfClevrNet(_Net):
    BCN_WIDTHS = [128, 128, 256]
    G_WIDTH = 256
    F_WIDTH = 256

    def __init__(
        self,
        head: SocHead = SocHead.MULTIRN,
        cnn_h: bool = False,
        coord_mode: CoordMode = CoordMode.CENTERED_XY_RADIAL,
        question_dim: int = QUESTION_DIM,
        rn_g_layers: int = 4,
        rn_include_radial: bool = False,
        seed: int = 0,
    ):
        super().__init__()
        self.head = SocHead(head)
        self.cnn_h = cnn_h
        self.coord_mode = CoordMode(coord_mode)
        self.question_dim = question_dim
        self.rn_include_radial = rn_include_radial
        self.g_theta_evals = 0  # per-sample relation evaluations, accumulated
        rng = np.random.default_rng(seed)

        filters = 24
        self.convs, self.bns = [], []
        for i in range(4):
            stride = 1 if (i == 3 and cnn_h) else 2
            conv = Conv2d(rng, 3 if i == 0 else filters, filters, 3, stride=stride, padding=1)
            bn = BatchNorm2d(filters)
            self.convs.append(conv)
            self.bns.append(bn)
            self._register(f"conv{i}", conv)
            self._register(f"bn{i}", bn)

        self.bcn: Optional[BcnModule] = None
        g_in = None
        if self.head is SocHead.MULTIRN:
            cfg = BcnConfig(list(self.BCN_WIDTHS), Pooling.MAX, self.coord_mode)
            self.bcn = BcnModule(cfg, in_channels=filters, rng=rng)
            self._named_params.extend(self.bcn.params("bcn"))
            g_in = filters + cfg.out_channels + question_dim
        elif self.head is SocHead.MULTIRN_NO_BCN:
            g_in = filters + question_dim

        if g_in is not None:
            self.g1 = Conv2d(rng, g_in, self.G_WIDTH, 1)
            self.g2 = Conv2d(rng, self.G_WIDTH, self.G_WIDTH, 1)
            self._register("g1", self.g1)
            self._register("g2", self.g2)
            f_in = self.G_WIDTH
        elif self.head is SocHead.RN_PAIRWISE:
            ncoord = 3 if rn_include_radial else 2
            pair_dim = 2 * (filters + ncoord) + question_dim
            self.g_layers: list[Linear] = []
            widths = [self.G_WIDTH] * rn_g_layers
            prev = pair_dim
            for i, wdt in enumerate(widths):
                layer = Linear(rng, prev, wdt)
                self.g_layers.append(layer)
                self._register(f"g{i}", layer)
                prev = wdt
            f_in = prev
        else:  # MLP_ONLY; flatten size fixed at build time from the 75x75 geometry
            hw = 10 if cnn_h else 5
            f_in = filters * hw * hw + question_dim

        self.f1 = Linear(rng, f_in, self.F_WIDTH)
        self.f2 = Linear(rng, self.F_WIDTH, self.F_WIDTH)
        self.f_out = Linear(rng, self.F_WIDTH, NUM_ANSWERS)
        self._register("f1", self.f1)
        self._register("f2", self.f2)
        self._register("f_out", self.f_out)

    # -- pieces ------------------------------------------------------------

    def backbone(self, x: Tensor) -> Tensor:
        for conv, bn in zip(self.convs, self.bns):
            x = bn(T.relu(conv(x)), self.training)
        return x

    def _f_phi(self, x: Tensor) -> Tensor:
        return self.f_out(T.relu(self.f2(T.relu(self.f1(x)))))

    def forward(self, images: Tensor, questions: Tensor) -> Tensor:
        """images [N, 3, H, W], questions [N, question_dim] -> logits [N, 10]."""
        if questions.ndim != 2 or questions.shape[1] != self.question_dim:
            raise T.ShapeError(
                f"questions must be [N, {self.question_dim}], got {questions.shape}"
            )
        f = self.backbone(images)
        n, _, h, w = f.shape
        npos = h * w

        if self.head in (SocHead.MULTIRN, SocHead.MULTIRN_NO_BCN):
            q = T.expand_spatial(questions, h, w)
            if self.head is SocHead.MULTIRN:
                b = self.bcn.forward(f)
                g_in = T.concat_channels([f, b, q])
            else:
                g_in = T.concat_channels([f, q])
            g = T.relu(self.g2(T.relu(self.g1(g_in))))
            self.g_theta_evals += n * npos
            pooled = T.global_sum_pool(g)
            return self._f_phi(pooled)

        if self.head is SocHead.RN_PAIRWISE:
            ncoord = 3 if self.rn_include_radial else 2
            mode = CoordMode.CENTERED_XY_RADIAL if self.rn_include_radial else CoordMode.CENTERED_XY
            planes = make_planes(mode, h, w).planes
            c = Tensor(np.broadcast_to(planes[None], (n, ncoord, h, w)))
            obj = T.move_channels_last(T.concat_channels([f, c]))  # [N, npos, 24+ncoord]
            pairs = T.pairwise_concat(obj, questions)  # [N, npos^2, pair_dim]
            x = T.reshape(pairs, (n * npos * npos, pairs.shape[2]))
            for layer in self.g_layers:
                x = T.relu(layer(x))
            self.g_theta_evals += n * npos * npos
            summed = T.sum_rows(T.reshape(x, (n, npos * npos, self.G_WIDTH)))
            return self._f_phi(summed)

        # MLP_ONLY
        flat = T.concat_channels([T.flatten(f), questions])
        return self._f_phi(flat)


def multirn_forward(net: SortOfClevrNet, image: np.ndarray, question_vec: np.ndarray) -> np.ndarray:
    """Single-sample wrapper: [3, H, W] image + [question_dim] vector -> logits[10]."""
    logits = net.forward(Tensor(np.asarray(image)[None]), Tensor(np.asarray(question_vec)[None]))
    return logits.data[0]


rn_pairwise_forward = multirn_forward
