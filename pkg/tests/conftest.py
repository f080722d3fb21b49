"""Shared helpers: finite-difference gradient oracle and tiny fixtures."""

import numpy as np
import pytest

from bcn.tensor import Tape, Tensor, backward


def numeric_grad(loss_fn, tensor: Tensor, eps: float = 3e-3, coords=None) -> np.ndarray:
    """Central-difference gradient of a scalar loss w.r.t. one tensor.

    ``coords`` limits the check to a subset of flat indices; the returned
    array has one entry per checked coordinate.
    """
    flat = tensor.data.reshape(-1)
    coords = list(coords) if coords is not None else list(range(flat.size))
    out = np.zeros(len(coords), dtype=np.float64)
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(loss_fn().item())
        flat[i] = orig - eps
        lo = float(loss_fn().item())
        flat[i] = orig
        out[k] = (hi - lo) / (2 * eps)
    return out


def analytic_grad(loss_fn, tensor: Tensor) -> np.ndarray:
    tensor.grad = None
    with Tape() as tape:
        loss = loss_fn()
        backward(loss, tape)
    assert tensor.grad is not None, "no gradient reached the checked tensor"
    return tensor.grad.copy()


EPS_SWEEP_F32 = (1e-4, 3e-4, 1e-3, 3e-3)
EPS_SWEEP_F64 = (1e-7, 1e-6, 1e-5)


def check_gradients(loss_fn, tensors, rng, max_coords: int = 12, rtol: float = 1e-3):
    """Compare backprop against central differences on sampled coordinates.

    Uses a step-size sweep and keeps each coordinate's best agreement: a
    correct gradient matches finite differences as the step shrinks, while
    any single step size can land across a ReLU or argmax kink.  Relative
    error uses a small absolute floor so near-zero coordinates do not blow
    up the ratio.
    """
    for t in tensors:
        ag = analytic_grad(loss_fn, t).reshape(-1)
        size = t.data.size
        coords = sorted(rng.choice(size, size=min(max_coords, size), replace=False).tolist())
        aa = ag[coords]
        best = np.full(len(coords), np.inf)
        sweep = EPS_SWEEP_F64 if t.data.dtype == np.float64 else EPS_SWEEP_F32
        for eps in sweep:
            ng = numeric_grad(loss_fn, t, eps=eps, coords=coords)
            denom = np.maximum(np.maximum(np.abs(aa), np.abs(ng)), 1e-2)
            best = np.minimum(best, np.abs(aa - ng) / denom)
            if best.max() < rtol:
                break
        assert best.max() < rtol, f"gradient mismatch: rel err {best.max():.2e} at coords {coords}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
