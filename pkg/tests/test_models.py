"""Reference models: parameter counts, relation counters, oracles, gradients."""

import numpy as np
import pytest

import bcn.tensor as T
from bcn.coords import CoordMode, make_planes
from bcn.models import (
    NUM_ANSWERS,
    QUESTION_DIM,
    ScaledMnistNet,
    SmnistVariant,
    SocHead,
    SortOfClevrNet,
    param_count,
)
from bcn.tensor import Tape, Tensor, backward

from conftest import check_gradients


def within(value, reference, tol=0.10):
    return abs(value - reference) <= tol * reference


# ---------------------------------------------------------------------------
# parameter counts against the published table (+-10%)

@pytest.mark.parametrize(
    "kwargs,reference",
    [
        (dict(variant=SmnistVariant.BASELINE, depth=3), 11_200),
        (dict(variant=SmnistVariant.BASELINE, depth=4), 16_500),
        (dict(variant=SmnistVariant.BASELINE, depth=5), 21_900),
        (dict(variant=SmnistVariant.BASELINE, depth=5, filters=48), 85_200),
        (dict(variant=SmnistVariant.CCE_ONLY, depth=3), 11_900),
        (dict(variant=SmnistVariant.SKIP, depth=3), 29_000),
        (dict(variant=SmnistVariant.BCN_MAX, depth=3), 29_200),
        (dict(variant=SmnistVariant.BCN_AVG, depth=3), 29_200),
    ],
)
def test_smnist_param_counts(kwargs, reference):
    assert within(param_count(ScaledMnistNet(seed=0, **kwargs)), reference)


@pytest.mark.parametrize(
    "kwargs,reference",
    [
        (dict(head=SocHead.MULTIRN), 345_000),
        (dict(head=SocHead.RN_PAIRWISE), 365_000),
        (dict(head=SocHead.MULTIRN_NO_BCN), 224_000),
        (dict(head=SocHead.MLP_ONLY), 239_000),
    ],
)
def test_soc_param_counts(kwargs, reference):
    assert within(param_count(SortOfClevrNet(seed=0, **kwargs)), reference)


def test_multirn_param_count_exact():
    assert param_count(SortOfClevrNet(head=SocHead.MULTIRN, seed=0)) == 345_074


# ---------------------------------------------------------------------------
# relation evaluation counters

def test_g_theta_counter_linear_vs_quadratic():
    imgs = Tensor(np.random.default_rng(0).random((2, 3, 75, 75), dtype=np.float32))
    qs = np.zeros((2, QUESTION_DIM), dtype=np.float32)
    qs[:, [0, 6, 8]] = 1
    multi = SortOfClevrNet(head=SocHead.MULTIRN, seed=0).eval()
    multi.forward(imgs, Tensor(qs))
    assert multi.g_theta_evals == 2 * 25  # n positions per sample

    pair = SortOfClevrNet(head=SocHead.RN_PAIRWISE, seed=0).eval()
    pair.forward(imgs, Tensor(qs))
    assert pair.g_theta_evals == 2 * 25 * 25  # n^2 per sample


def test_cnn_h_quadruples_object_count():
    imgs = Tensor(np.random.default_rng(0).random((1, 3, 75, 75), dtype=np.float32))
    q = np.zeros((1, QUESTION_DIM), dtype=np.float32)
    q[:, [0, 6, 8]] = 1
    net = SortOfClevrNet(head=SocHead.MULTIRN, cnn_h=True, seed=0).eval()
    net.forward(imgs, Tensor(q))
    assert net.g_theta_evals == 100


# ---------------------------------------------------------------------------
# pairwise head against a double-loop oracle

def test_rn_pairwise_matches_double_loop_oracle():
    net = SortOfClevrNet(head=SocHead.RN_PAIRWISE, seed=3).eval()
    r = np.random.default_rng(4)
    img = r.random((1, 3, 75, 75), dtype=np.float32)
    q = np.zeros((1, QUESTION_DIM), dtype=np.float32)
    q[0, [2, 7, 9]] = 1
    logits = net.forward(Tensor(img), Tensor(q)).data[0]

    f = net.backbone(Tensor(img)).data[0]  # [24, 5, 5]
    planes = make_planes(CoordMode.CENTERED_XY, 5, 5).planes
    objs = np.concatenate([f, planes]).reshape(-1, 25).T.astype(np.float64)  # [25, 26]
    acc = np.zeros(net.G_WIDTH)
    for i in range(25):
        for j in range(25):
            v = np.concatenate([objs[i], objs[j], q[0]])
            for layer in net.g_layers:
                v = np.maximum(v @ layer.weight.data.T.astype(np.float64) + layer.bias.data, 0.0)
            acc += v
    v = np.maximum(acc @ net.f1.weight.data.T + net.f1.bias.data, 0.0)
    v = np.maximum(v @ net.f2.weight.data.T + net.f2.bias.data, 0.0)
    expect = v @ net.f_out.weight.data.T + net.f_out.bias.data
    np.testing.assert_allclose(logits, expect, rtol=1e-3, atol=1e-3)


def test_multirn_object_permutation_invariance():
    """Summing g over positions makes logits invariant to object order (no coords in g input beyond BCN planes)."""
    net = SortOfClevrNet(head=SocHead.MULTIRN_NO_BCN, seed=5).eval()
    r = np.random.default_rng(6)
    f = r.standard_normal((1, 24, 5, 5)).astype(np.float32)
    q = np.zeros((1, QUESTION_DIM), dtype=np.float32)
    q[0, [1, 6, 10]] = 1

    def from_features(feat):
        qx = T.expand_spatial(Tensor(q), 5, 5)
        g = T.relu(net.g2(T.relu(net.g1(T.concat_channels([Tensor(feat), qx])))))
        return net._f_phi(T.global_sum_pool(g)).data[0]

    base = from_features(f)
    perm = r.permutation(25)
    shuffled = np.ascontiguousarray(f.reshape(1, 24, 25)[:, :, perm].reshape(1, 24, 5, 5))
    np.testing.assert_allclose(from_features(shuffled), base, rtol=1e-4, atol=1e-4)


# ---------------------------------------------------------------------------
# shapes, state, variants

def test_smnist_forward_shapes():
    net = ScaledMnistNet(variant=SmnistVariant.BCN_MAX, seed=0).eval()
    x = Tensor(np.random.default_rng(0).random((2, 1, 128, 128), dtype=np.float32))
    logits, center = net.forward(x)
    assert logits.shape == (2, 10)
    assert center.shape == (2, 2)


def test_smnist_accepts_other_resolutions():
    """Pooled heads make the network resolution-agnostic (zero-shot eval)."""
    net = ScaledMnistNet(variant=SmnistVariant.BCN_MAX, seed=0).eval()
    x = Tensor(np.random.default_rng(0).random((2, 1, 192, 256), dtype=np.float32))
    logits, center = net.forward(x)
    assert logits.shape == (2, 10) and center.shape == (2, 2)


def test_soc_forward_shapes_all_heads():
    imgs = Tensor(np.random.default_rng(0).random((2, 3, 75, 75), dtype=np.float32))
    qs = np.zeros((2, QUESTION_DIM), dtype=np.float32)
    qs[:, [0, 6, 8]] = 1
    for head in SocHead:
        net = SortOfClevrNet(head=head, seed=0).eval()
        assert net.forward(imgs, Tensor(qs)).shape == (2, NUM_ANSWERS)


def test_question_shape_validated():
    net = SortOfClevrNet(seed=0).eval()
    imgs = Tensor(np.zeros((1, 3, 75, 75), dtype=np.float32))
    with pytest.raises(T.ShapeError):
        net.forward(imgs, Tensor(np.zeros((1, 7), dtype=np.float32)))


def test_depth_validated():
    with pytest.raises(ValueError):
        ScaledMnistNet(depth=6, seed=0)


def test_state_arrays_roundtrip():
    a = SortOfClevrNet(head=SocHead.MULTIRN, seed=1)
    b = SortOfClevrNet(head=SocHead.MULTIRN, seed=2)
    imgs = Tensor(np.random.default_rng(0).random((2, 3, 75, 75), dtype=np.float32))
    qs = np.zeros((2, QUESTION_DIM), dtype=np.float32)
    qs[:, [0, 6, 8]] = 1
    b.load_state_arrays(dict(a.state_arrays()))
    np.testing.assert_array_equal(
        a.eval().forward(imgs, Tensor(qs)).data, b.eval().forward(imgs, Tensor(qs)).data
    )


def test_state_arrays_shape_mismatch_rejected():
    a = SortOfClevrNet(head=SocHead.MULTIRN, seed=1)
    arrays = dict(a.state_arrays())
    name = next(iter(arrays))
    arrays[name] = np.zeros((1, 1), dtype=np.float32)
    with pytest.raises(ValueError):
        a.load_state_arrays(arrays)


def test_deterministic_init():
    a = ScaledMnistNet(variant=SmnistVariant.BCN_MAX, seed=7)
    b = ScaledMnistNet(variant=SmnistVariant.BCN_MAX, seed=7)
    for (na, pa), (nb, pb) in zip(a.params(), b.params()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


# ---------------------------------------------------------------------------
# miniature end-to-end gradient checks

def test_gradcheck_smnist_miniature(rng):
    # float64 storage keeps finite differences clear of forward rounding noise
    with T.precision(np.float64):
        net = ScaledMnistNet(variant=SmnistVariant.BCN_MAX, seed=13).train()
        x = Tensor(np.random.default_rng(14).random((2, 1, 16, 16)))
        labels = np.array([3, 7])
        ctr = Tensor(np.full((2, 2), 0.5))

        def fn():
            logits, pred = net.forward(x)
            return T.add(T.softmax_cross_entropy(logits, labels), T.mse(pred, ctr))

        picks = [net.convs[0].weight, net.bcn.weights[0], net.bcn.reduce_weight, net.head_ctr.weight]
        check_gradients(fn, picks, rng, max_coords=4)


def test_gradcheck_soc_miniature(rng):
    with T.precision(np.float64):
        net = SortOfClevrNet(head=SocHead.MULTIRN, seed=15).train()
        x = Tensor(np.random.default_rng(16).random((2, 3, 16, 16)))
        q = np.zeros((2, QUESTION_DIM))
        q[:, [0, 6, 8]] = 1
        labels = np.array([0, 2])

        fn = lambda: T.softmax_cross_entropy(net.forward(x, Tensor(q)), labels)
        picks = [net.convs[0].weight, net.bcn.weights[0], net.g1.weight, net.f_out.weight]
        check_gradients(fn, picks, rng, max_coords=4)
