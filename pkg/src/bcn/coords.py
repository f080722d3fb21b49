"""Normalized coordinate channel planes.

Three selectable plane stacks appended to feature maps as extra channels:

* ``TOPLEFT_XY``    -- x/y grow from zero at the top-left corner.
* ``CENTERED_XY``   -- x/y are zero at the center, antisymmetric about it.
* ``CENTERED_XY_RADIAL`` -- centered x/y plus the Euclidean radius plane.

All planes are normalized by the longer spatial axis, so the longer axis
spans its full range while the shorter axis is proportionally attenuated
(this is what copes with non-square aspect ratios).  The y plane follows
the row index: it increases downward.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .imgio import write_pgm


class CoordMode(Enum):
    NONE = "none"
    TOPLEFT_XY = "topleft_xy"
    CENTERED_XY = "centered_xy"
    CENTERED_XY_RADIAL = "centered_xy_radial"

    @property
    def num_planes(self) -> int:
        return {"none": 0, "topleft_xy": 2, "centered_xy": 2, "centered_xy_radial": 3}[self.value]


@dataclass(frozen=True)
class CoordinatePlanes:
    mode: CoordMode
    h: int
    w: int
    planes: np.ndarray  # [n_c, h, w] float32

    def export_pgm(self, prefix: str):
        names = {2: ("cx", "cy"), 3: ("cx", "cy", "cr")}.get(self.planes.shape[0], ())
        for plane, name in zip(self.planes, names):
            write_pgm(f"{prefix}_{name}.pgm", plane)


def make_planes(mode: CoordMode, h: int, w: int) -> CoordinatePlanes:
    """Build the coordinate plane stack for an h x w grid.

    With s = max(h, w) and d = max(s - 1, 1):
      centered: c_x[i,j] = (2j - (w-1)) / d,  c_y[i,j] = (2i - (h-1)) / d
      top-left: c_x[i,j] = j / d,             c_y[i,j] = i / d
    The radial plane is the unrescaled Euclidean norm of (c_x, c_y).
    """
    if h < 1 or w < 1:
        raise ValueError(f"plane dims must be positive, got {h}x{w}")
    mode = CoordMode(mode)
    d = np.float32(max(max(h, w) - 1, 1))
    jj = np.arange(w, dtype=np.float32)[None, :].repeat(h, axis=0)
    ii = np.arange(h, dtype=np.float32)[:, None].repeat(w, axis=1)

    if mode is CoordMode.NONE:
        planes = np.zeros((0, h, w), dtype=np.float32)
    elif mode is CoordMode.TOPLEFT_XY:
        planes = np.stack([jj / d, ii / d])
    else:
        cx = (2 * jj - np.float32(w - 1)) / d
        cy = (2 * ii - np.float32(h - 1)) / d
        if mode is CoordMode.CENTERED_XY:
            planes = np.stack([cx, cy])
        else:
            cr = np.sqrt(cx * cx + cy * cy)
            planes = np.stack([cx, cy, cr])
    return CoordinatePlanes(mode=mode, h=h, w=w, planes=np.ascontiguousarray(planes))


def coordinate_bias_map(
    mode: CoordMode, h: int, w: int, seed: int, num_kernels: int
) -> np.ndarray:
    """Mean absolute response of random 1x1 kernels over the plane stack.

    Each kernel is a Gaussian draw normalized to unit L1 mass, so ensembles
    over stacks with different channel counts spend the same total absolute
    weight.  The spread (max - min) of the returned [h, w] map measures how
    strongly a randomly initialized convolution is deflected by the
    coordinate channels alone.
    """
    mode = CoordMode(mode)
    if mode is CoordMode.NONE:
        raise ValueError("coordinate_bias_map needs a non-empty coordinate mode")
    if num_kernels < 1:
        raise ValueError(f"num_kernels must be >= 1, got {num_kernels}")
    planes = make_planes(mode, h, w).planes
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((num_kernels, planes.shape[0]))
    z /= np.abs(z).sum(axis=1, keepdims=True)
    responses = np.tensordot(z, planes, axes=(1, 0))  # [K, h, w]
    return np.abs(responses).mean(axis=0)


def deflection(bias_map: np.ndarray) -> float:
    """max - min of a coordinate bias map."""
    return float(bias_map.max() - bias_map.min())
