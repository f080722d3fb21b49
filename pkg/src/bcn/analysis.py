"""Analysis tools: activation maps, FLOPs/parameter accounting, reports.

FLOPs convention (fixed, documented): one multiply-accumulate counts as a
single FLOP, every bias add as one, and pooling / ReLU / batchnorm as one
FLOP per element per pass.  Section totals follow the four-way split
input convolution / broadcast module / relation sum / classifier head, and
each relation-sum entry contains only terms proportional to the number of
relation evaluations, so the object-count scaling ratios are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bcn_module import Pooling
from .imgio import to_uint8, write_pgm
from .models import ScaledMnistNet, SocHead, SortOfClevrNet
from .tensor import Tensor

SECTIONS = ["input_convolution", "bcn", "sum_g_theta", "f_phi"]
SECTION_LABELS = {
    "input_convolution": "Input Convolution",
    "bcn": "BCN",
    "sum_g_theta": "Sum g_theta",
    "f_phi": "f_phi",
}


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# activation maps

@dataclass
class ActivationMap:
    h: int
    w: int
    counts: np.ndarray  # [h, w] int64; counts.sum() == number of pooled channels
    normalized: np.ndarray  # [h, w] float in [0, 1]
    upsampled: np.ndarray | None = None  # input-resolution grayscale


def activation_map_from_argmax(argmax: np.ndarray, h: int, w: int, upsample_to=None) -> ActivationMap:
    counts = np.bincount(argmax.reshape(-1), minlength=h * w).reshape(h, w)
    peak = counts.max()
    normalized = counts / peak if peak > 0 else counts.astype(np.float64)
    upsampled = None
    if upsample_to is not None:
        ih, iw = upsample_to
        ys = (np.arange(ih) * h) // ih
        xs = (np.arange(iw) * w) // iw
        upsampled = normalized[ys[:, None], xs[None, :]]
    return ActivationMap(h=h, w=w, counts=counts, normalized=normalized, upsampled=upsampled)


def extract_activation_map(model, inputs) -> ActivationMap:
    """Run a forward pass and histogram the per-channel max-pool positions.

    ``inputs`` is the model's forward argument tuple (single sample, no
    batch axis).  The model must contain a max-pooling broadcast module.
    """
    bcn = getattr(model, "bcn", None)
    if bcn is None or bcn.config.pooling is not Pooling.MAX:
        raise AnalysisError("activation maps need a broadcast module with max pooling")
    model.eval()
    if isinstance(model, ScaledMnistNet):
        image = np.asarray(inputs)
        model.forward(Tensor(image[None]))
        in_res = image.shape[-2:]
    else:
        image, question = inputs
        image = np.asarray(image)
        model.forward(Tensor(image[None]), Tensor(np.asarray(question, dtype=np.float32)[None]))
        in_res = image.shape[-2:]
    h, w = bcn.last_spatial
    return activation_map_from_argmax(bcn.last_argmax, h, w, upsample_to=in_res)


# ---------------------------------------------------------------------------
# FLOPs accounting

@dataclass
class CostReport:
    flops: dict[str, int] = field(default_factory=lambda: {s: 0 for s in SECTIONS})
    params: dict[str, int] = field(default_factory=lambda: {s: 0 for s in SECTIONS})

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    def table(self) -> str:
        rows = [("Section", "FLOPs", "Params")]
        for s in SECTIONS:
            rows.append((SECTION_LABELS[s], _fmt(self.flops[s]), _fmt_count(self.params[s])))
        rows.append(("Total", _fmt(self.total_flops), _fmt_count(self.total_params)))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = []
        for i, r in enumerate(rows):
            lines.append("  ".join(c.ljust(widths[j]) for j, c in enumerate(r)).rstrip())
            if i == 0:
                lines.append("-" * (sum(widths) + 4))
        return "\n".join(lines)


def _fmt(v: int) -> str:
    if v >= 1e9:
        return f"{v / 1e9:.2f}G"
    if v >= 1e6:
        return f"{v / 1e6:.2f}M"
    if v >= 1e3:
        return f"{v / 1e3:.2f}K"
    return str(v)


_fmt_count = _fmt


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _conv_flops(cin: int, cout: int, k: int, positions: int) -> int:
    return (cin * k * k + 1) * cout * positions  # MACs + bias


def _linear_flops(din: int, dout: int) -> int:
    return (din + 1) * dout


def count_flops(model, input_shape) -> CostReport:
    """Analytic per-section FLOPs and parameter counts for a model forward.

    ``input_shape`` is the image batch shape (N, C, H, W); every entry
    scales linearly in N.
    """
    if isinstance(model, SortOfClevrNet):
        return _count_soc(model, input_shape)
    if isinstance(model, ScaledMnistNet):
        return _count_smnist(model, input_shape)
    raise AnalysisError(f"unsupported model type {type(model).__name__}")


def _psize(layer) -> int:
    return sum(p.size for _, p in layer.params(""))


def _count_soc(model: SortOfClevrNet, input_shape) -> CostReport:
    n, _, h, w = input_shape
    rep = CostReport()
    ch, cw = h, w
    cin = 3
    for conv, bn in zip(model.convs, model.bns):
        cout, _, k, _ = conv.weight.shape
        ch, cw = _conv_out(ch, k, conv.stride, conv.padding), _conv_out(cw, k, conv.stride, conv.padding)
        pos = ch * cw
        rep.flops["input_convolution"] += n * (_conv_flops(cin, cout, k, pos) + 2 * cout * pos)
        rep.params["input_convolution"] += _psize(conv) + _psize(bn)
        cin = cout
    npos = ch * cw

    if model.head is SocHead.MULTIRN:
        prev = cin + model.bcn.config.coord_mode.num_planes
        for wgt in model.bcn.config.layer_widths:
            rep.flops["bcn"] += n * (_conv_flops(prev, wgt, 1, npos) + wgt * npos)  # conv + relu
            prev = wgt
        rep.flops["bcn"] += n * 2 * prev * npos  # pool + expand passes
        rep.params["bcn"] += sum(p.size for _, p in model.bcn.params())

    if model.head in (SocHead.MULTIRN, SocHead.MULTIRN_NO_BCN):
        g_in = model.g1.weight.shape[1]
        gw = model.g1.weight.shape[0]
        # the entry conv of the relation stack reads the broadcast concat, so
        # it is billed to the broadcast section when one exists
        g1_section = "bcn" if model.head is SocHead.MULTIRN else "sum_g_theta"
        rep.flops["sum_g_theta"] += n * model.question_dim * npos  # question expand
        rep.flops[g1_section] += n * (_conv_flops(g_in, gw, 1, npos) + gw * npos)
        rep.params[g1_section] += _psize(model.g1)
        rep.flops["sum_g_theta"] += n * (_conv_flops(gw, gw, 1, npos) + gw * npos)
        rep.flops["sum_g_theta"] += n * gw * npos  # global sum pool
        rep.params["sum_g_theta"] += _psize(model.g2)
        f_in = gw
    elif model.head is SocHead.RN_PAIRWISE:
        pairs = npos * npos
        din = model.g_layers[0].weight.shape[1]
        rep.flops["sum_g_theta"] += n * pairs * din  # pair assembly pass
        for layer in model.g_layers:
            dout, din_l = layer.weight.shape
            rep.flops["sum_g_theta"] += n * pairs * (_linear_flops(din_l, dout) + dout)
            rep.params["sum_g_theta"] += _psize(layer)
        gw = model.g_layers[-1].weight.shape[0]
        rep.flops["sum_g_theta"] += n * pairs * gw  # pair sum
        f_in = gw
    else:
        f_in = model.f1.weight.shape[1]

    for layer in (model.f1, model.f2, model.f_out):
        dout, din_l = layer.weight.shape
        rep.flops["f_phi"] += n * (_linear_flops(din_l, dout) + dout)
        rep.params["f_phi"] += _psize(layer)
    return rep


def _count_smnist(model: ScaledMnistNet, input_shape) -> CostReport:
    n, _, h, w = input_shape
    rep = CostReport()
    ch, cw = h, w
    for i, (conv, bn) in enumerate(zip(model.convs, model.bns)):
        cout, cin, k, _ = conv.weight.shape
        ch, cw = _conv_out(ch, k, conv.stride, conv.padding), _conv_out(cw, k, conv.stride, conv.padding)
        pos = ch * cw
        rep.flops["input_convolution"] += n * (_conv_flops(cin, cout, k, pos) + 2 * cout * pos)
        rep.params["input_convolution"] += _psize(conv) + _psize(bn)
        if i == 1 and model.bcn is not None:
            prev = model.bcn.in_channels + model.bcn.config.coord_mode.num_planes
            for wgt in model.bcn.config.layer_widths:
                rep.flops["bcn"] += n * (_conv_flops(prev, wgt, 1, pos) + wgt * pos)
                prev = wgt
            if model.bcn.config.pooling is not Pooling.NONE:
                rep.flops["bcn"] += n * 2 * prev * pos
            merged = model.bcn.in_channels + model.bcn.config.out_channels
            red = model.bcn.config.reduce_to
            rep.flops["bcn"] += n * (_conv_flops(merged, red, 1, pos) + red * pos)
            rep.params["bcn"] += sum(p.size for _, p in model.bcn.params())
    pooled = model.convs[-1].weight.shape[0]
    rep.flops["f_phi"] += n * pooled * ch * cw  # global average pool
    for layer in (model.head_cls, model.head_ctr):
        dout, din_l = layer.weight.shape
        rep.flops["f_phi"] += n * _linear_flops(din_l, dout)
        rep.params["f_phi"] += _psize(layer)
    return rep


# ---------------------------------------------------------------------------
# reports

def render_report(out_dir, history=None, maps: dict[str, ActivationMap] | None = None, cost: CostReport | None = None) -> list[Path]:
    """Write metrics CSV, activation overlays (PGM) and the cost table."""
    from .training import CSV_HEADER

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if history is not None:
        path = out_dir / "metrics.csv"
        import csv

        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for rec in history:
                writer.writerow(rec.row())
        written.append(path)
    for name, amap in (maps or {}).items():
        path = out_dir / f"{name}.pgm"
        img = amap.upsampled if amap.upsampled is not None else amap.normalized
        write_pgm(path, to_uint8(img))
        written.append(path)
    if cost is not None:
        path = out_dir / "cost_table.txt"
        path.write_text(cost.table() + "\n", encoding="utf-8")
        written.append(path)
    return written
