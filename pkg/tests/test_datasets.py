"""Dataset generators, IDX and container formats, and validators."""

import struct

import numpy as np
import pytest

from bcn.datasets import (
    ANS_CIRCLE,
    ANS_NO,
    ANS_SQUARE,
    ANS_YES,
    DATA_MAGIC,
    DatasetError,
    MORE_CANVAS_H,
    MORE_CANVAS_W,
    SMNIST_CANVAS,
    SOC_OBJ,
    SOC_SIZE,
    SceneObject,
    answer_question,
    dataset_generator_info,
    digits_source,
    gen_more_scaled_mnist,
    gen_scaled_mnist,
    gen_sort_of_clevr,
    load_mnist_idx,
    read_dataset,
    resize_bilinear,
    rotate_bilinear,
    validate_scaled_mnist,
    validate_sort_of_clevr,
    write_dataset,
    write_mnist_idx,
)


@pytest.fixture(scope="module")
def source():
    return digits_source()


# ---------------------------------------------------------------------------
# IDX format


def test_idx_round_trip(tmp_path, source):
    images, labels = source
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_mnist_idx(images[:50], labels[:50], ip, lp)
    rimg, rlbl = load_mnist_idx(ip, lp)
    assert rimg.shape == (50, 1, 28, 28)
    # uint8 quantization is the only loss in the round trip
    assert np.abs(rimg[:, 0] - images[:50]).max() <= 0.5 / 255.0 + 1e-7
    assert np.array_equal(rlbl, labels[:50])


def test_idx_bad_image_magic(tmp_path, source):
    images, labels = source
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_mnist_idx(images[:3], labels[:3], ip, lp)
    blob = bytearray(ip.read_bytes())
    blob[0:4] = struct.pack(">I", 0xDEADBEEF)
    ip.write_bytes(bytes(blob))
    with pytest.raises(DatasetError, match="bad magic 0xdeadbeef at offset 0"):
        load_mnist_idx(ip, lp)


def test_idx_truncated_header(tmp_path):
    ip = tmp_path / "img.idx"
    ip.write_bytes(b"\x00\x00\x08")
    with pytest.raises(DatasetError, match="truncated header"):
        load_mnist_idx(ip, ip)


def test_idx_truncated_payload(tmp_path, source):
    images, labels = source
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    write_mnist_idx(images[:3], labels[:3], ip, lp)
    ip.write_bytes(ip.read_bytes()[:-10])
    with pytest.raises(DatasetError, match="truncated payload"):
        load_mnist_idx(ip, lp)


def test_idx_count_mismatch(tmp_path, source):
    images, labels = source
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lbl.idx"
    lp2 = tmp_path / "lbl2.idx"
    write_mnist_idx(images[:4], labels[:4], ip, lp)
    write_mnist_idx(images[:5], labels[:5], tmp_path / "img2.idx", lp2)
    with pytest.raises(DatasetError, match="does not match label count"):
        load_mnist_idx(ip, lp2)


# ---------------------------------------------------------------------------
# resampling helpers


def test_resize_identity():
    rng = np.random.default_rng(0)
    img = rng.random((13, 9)).astype(np.float32)
    assert np.allclose(resize_bilinear(img, 13, 9), img, atol=1e-6)


def test_resize_constant_preserved():
    img = np.full((8, 8), 0.7, dtype=np.float32)
    out = resize_bilinear(img, 30, 45)
    assert out.shape == (30, 45)
    assert np.allclose(out, 0.7, atol=1e-6)


def test_rotate_zero_is_identity():
    rng = np.random.default_rng(1)
    img = rng.random((10, 12)).astype(np.float32)
    assert np.array_equal(rotate_bilinear(img, 0.0), img)


def test_rotate_90_matches_numpy():
    rng = np.random.default_rng(2)
    img = rng.random((11, 11)).astype(np.float32)
    out = rotate_bilinear(img, 90.0)
    # 90 degrees with y pointing down is numpy's clockwise rotation
    assert out.shape == (11, 11)
    assert np.allclose(out, np.rot90(img, k=-1), atol=1e-5)


def test_rotate_preserves_mass_approximately():
    img = np.zeros((20, 20), dtype=np.float32)
    img[5:15, 5:15] = 1.0
    out = rotate_bilinear(img, 45.0)
    assert abs(out.sum() - img.sum()) / img.sum() < 0.05


# ---------------------------------------------------------------------------
# scaled digit canvases


def test_scaled_mnist_invariants(source):
    samples = gen_scaled_mnist(source, seed=7, count=40)
    assert len(samples) == 40
    for s in samples:
        assert s.image.shape == (1, SMNIST_CANVAS, SMNIST_CANVAS)
        assert s.image.dtype == np.float32
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
        assert 0 <= s.class_label <= 9
        left, top, w, h = s.box
        assert 28 <= w <= 105
        assert 0.8 * w - 1 <= h <= 1.2 * w + 1
        assert 0 <= left and left + w <= SMNIST_CANVAS
        assert 0 <= top and top + h <= SMNIST_CANVAS
        assert s.center[0] == pytest.approx((left + w / 2) / SMNIST_CANVAS)
        assert s.center[1] == pytest.approx((top + h / 2) / SMNIST_CANVAS)


def test_scaled_mnist_widths_span_range(source):
    widths = {s.box[2] for s in gen_scaled_mnist(source, seed=3, count=300)}
    assert min(widths) < 40 and max(widths) > 95


def test_scaled_mnist_per_sample_determinism(source):
    long = gen_scaled_mnist(source, seed=5, count=8)
    short = gen_scaled_mnist(source, seed=5, count=3)
    # sample i depends only on (seed, i), never on the requested count
    for a, b in zip(short, long):
        assert np.array_equal(a.image, b.image)
        assert a.class_label == b.class_label and a.box == b.box
    other_seed = gen_scaled_mnist(source, seed=6, count=3)
    assert not all(np.array_equal(a.image, b.image) for a, b in zip(short, other_seed))


def test_scaled_mnist_count_validation(source):
    with pytest.raises(DatasetError, match="count must be >= 1"):
        gen_scaled_mnist(source, seed=0, count=0)


def test_more_scaled_mnist_invariants(source):
    samples = gen_more_scaled_mnist(source, seed=9, count=30, rotation=0.0)
    for s in samples:
        assert s.image.shape == (1, MORE_CANVAS_H, MORE_CANVAS_W)
        left, top, w, h = s.box
        assert 28 <= w <= 160
        assert left + w <= MORE_CANVAS_W and top + h <= MORE_CANVAS_H
        assert s.center[0] == pytest.approx((left + w / 2) / MORE_CANVAS_W)
        assert s.center[1] == pytest.approx((top + h / 2) / MORE_CANVAS_H)


def test_more_scaled_mnist_rotation_variants(source):
    for rot in (10.0, 45.0):
        samples = gen_more_scaled_mnist(source, seed=2, count=10, rotation=rot)
        for s in samples:
            left, top, w, h = s.box
            assert left + w <= MORE_CANVAS_W and top + h <= MORE_CANVAS_H
            assert 0.0 <= s.image.min() and s.image.max() <= 1.0
    # rotation changes content versus the unrotated stream
    plain = gen_more_scaled_mnist(source, seed=2, count=3, rotation=0.0)
    rotated = gen_more_scaled_mnist(source, seed=2, count=3, rotation=45.0)
    assert any(a.image.shape != b.image.shape or not np.array_equal(a.image, b.image)
               for a, b in zip(plain, rotated))


def test_more_scaled_mnist_rejects_other_rotations(source):
    with pytest.raises(DatasetError, match="rotation must be 0, 10 or 45"):
        gen_more_scaled_mnist(source, seed=0, count=1, rotation=30.0)


# ---------------------------------------------------------------------------
# sort-of-clevr


def test_soc_scene_invariants():
    samples = gen_sort_of_clevr(seed=4, count=20)
    for s in samples:
        assert s.image.shape == (3, SOC_SIZE, SOC_SIZE)
        assert sorted(o.color for o in s.scene) == list(range(6))
        for a in range(6):
            for b in range(a + 1, 6):
                oa, ob = s.scene[a], s.scene[b]
                assert (abs(oa.center[0] - ob.center[0]) > SOC_OBJ
                        or abs(oa.center[1] - ob.center[1]) > SOC_OBJ)
        assert s.questions.shape == (20, 11) and s.answers.shape == (20,)
        # first ten non-relational, last ten relational, each vector 3-hot
        assert int(s.questions[:10, 6].sum()) == 10
        assert int(s.questions[10:, 7].sum()) == 10
        for q in s.questions:
            assert q.sum() == 3
            assert q[0:6].sum() == 1 and q[6:8].sum() == 1 and q[8:11].sum() == 1


def test_soc_answers_match_oracle():
    for s in gen_sort_of_clevr(seed=8, count=10):
        for q, a in zip(s.questions, s.answers):
            assert answer_question(s.scene, q) == a


def _fixed_scene():
    return [
        SceneObject(color=0, shape="square", center=(10, 10)),
        SceneObject(color=1, shape="circle", center=(60, 10)),
        SceneObject(color=2, shape="square", center=(10, 60)),
        SceneObject(color=3, shape="circle", center=(60, 60)),
        SceneObject(color=4, shape="circle", center=(37, 37)),
        SceneObject(color=5, shape="square", center=(22, 10)),
    ]


def _q(color, relational, subtype):
    q = np.zeros(11, dtype=np.uint8)
    q[color] = 1
    q[7 if relational else 6] = 1
    q[8 + subtype] = 1
    return q


def test_oracle_nonrelational():
    scene = _fixed_scene()
    assert answer_question(scene, _q(0, False, 0)) == ANS_SQUARE
    assert answer_question(scene, _q(1, False, 0)) == ANS_CIRCLE
    # left/top refer to position relative to the scene midline
    assert answer_question(scene, _q(0, False, 1)) == ANS_YES  # x=10 is left
    assert answer_question(scene, _q(1, False, 1)) == ANS_NO  # x=60 is right
    assert answer_question(scene, _q(0, False, 2)) == ANS_YES  # y=10 is top
    assert answer_question(scene, _q(3, False, 2)) == ANS_NO  # y=60 is bottom


def test_oracle_relational():
    scene = _fixed_scene()
    # nearest to color 0 at (10,10) is color 5 at (22,10), a square
    assert answer_question(scene, _q(0, True, 0)) == ANS_SQUARE
    # farthest from color 0 is color 3 at (60,60), a circle
    assert answer_question(scene, _q(0, True, 1)) == ANS_CIRCLE
    # count of shapes matching the target, target included: 3 squares
    assert answer_question(scene, _q(0, True, 2)) == 3 + 3
    assert answer_question(scene, _q(1, True, 2)) == 3 + 3


def test_soc_determinism():
    a = gen_sort_of_clevr(seed=12, count=4)
    b = gen_sort_of_clevr(seed=12, count=2)
    for x, y in zip(b, a):
        assert np.array_equal(x.image, y.image)
        assert np.array_equal(x.questions, y.questions)
        assert np.array_equal(x.answers, y.answers)


def test_soc_image_colors_present():
    s = gen_sort_of_clevr(seed=1, count=1)[0]
    for obj in s.scene:
        cx, cy = obj.center
        pixel = s.image[:, cy, cx]
        assert not np.allclose(pixel, 0.5)  # object covers its own center


# ---------------------------------------------------------------------------
# container format


def test_container_smnist_round_trip(tmp_path, source):
    samples = gen_scaled_mnist(source, seed=13, count=6)
    path = tmp_path / "d.bcndata"
    write_dataset(samples, path, generator={"task": "smnist", "seed": 13, "count": 6})
    back = read_dataset(path)
    assert len(back) == 6
    for a, b in zip(samples, back):
        assert np.array_equal(a.image, b.image)
        assert a.class_label == b.class_label
        assert a.box == b.box
        assert a.center == pytest.approx(b.center)
    assert dataset_generator_info(path) == {"task": "smnist", "seed": 13, "count": 6}


def test_container_soc_round_trip(tmp_path):
    samples = gen_sort_of_clevr(seed=14, count=3)
    path = tmp_path / "d.bcndata"
    write_dataset(samples, path)
    back = read_dataset(path)
    for a, b in zip(samples, back):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.questions, b.questions)
        assert np.array_equal(a.answers, b.answers)
        assert a.scene == b.scene
    validate_sort_of_clevr(back)


def test_container_write_is_byte_identical(tmp_path, source):
    samples = gen_scaled_mnist(source, seed=15, count=4)
    p1, p2 = tmp_path / "a", tmp_path / "b"
    write_dataset(samples, p1, generator={"seed": 15})
    write_dataset(samples, p2, generator={"seed": 15})
    assert p1.read_bytes() == p2.read_bytes()


def test_container_bad_magic(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(b"NOTDATA!" + b"\x00" * 16)
    with pytest.raises(DatasetError, match="bad magic"):
        read_dataset(path)


def test_container_truncation(tmp_path, source):
    samples = gen_scaled_mnist(source, seed=16, count=3)
    path = tmp_path / "d"
    write_dataset(samples, path)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(DatasetError, match="truncated block"):
        read_dataset(path)


def test_container_checksum_corruption(tmp_path, source):
    samples = gen_scaled_mnist(source, seed=17, count=3)
    path = tmp_path / "d"
    write_dataset(samples, path)
    blob = bytearray(path.read_bytes())
    blob[-5] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(DatasetError, match="checksum failure in block"):
        read_dataset(path)


def test_container_magic_constant():
    assert DATA_MAGIC == b"BCNDATA1"


# ---------------------------------------------------------------------------
# validators


def test_validator_smnist_clean(source):
    samples = gen_scaled_mnist(source, seed=18, count=25)
    assert validate_scaled_mnist(samples) == {"count": 25, "schema": "smnist"}


def test_validator_smnist_catches_bad_label(source):
    samples = gen_scaled_mnist(source, seed=18, count=3)
    samples[1].class_label = 12
    with pytest.raises(DatasetError, match="sample 1: label 12 out of range"):
        validate_scaled_mnist(samples)


def test_validator_smnist_catches_bad_center(source):
    samples = gen_scaled_mnist(source, seed=18, count=3)
    samples[2].center = (0.0, 0.0)
    with pytest.raises(DatasetError, match="sample 2: center"):
        validate_scaled_mnist(samples)


def test_validator_smnist_catches_out_of_range_pixels(source):
    samples = gen_scaled_mnist(source, seed=18, count=2)
    samples[0].image[0, 0, 0] = 1.5
    with pytest.raises(DatasetError, match="pixel values outside"):
        validate_scaled_mnist(samples)


def test_validator_soc_clean():
    samples = gen_sort_of_clevr(seed=19, count=10)
    assert validate_sort_of_clevr(samples) == {"count": 10, "schema": "soc"}


def test_validator_soc_catches_wrong_answer():
    samples = gen_sort_of_clevr(seed=19, count=2)
    samples[0].answers[4] = (samples[0].answers[4] + 1) % 10
    with pytest.raises(DatasetError, match="disagrees with geometry"):
        validate_sort_of_clevr(samples)


def test_validator_soc_catches_duplicate_color():
    samples = gen_sort_of_clevr(seed=19, count=1)
    samples[0].scene[0].color = samples[0].scene[1].color
    with pytest.raises(DatasetError, match="colors not unique"):
        validate_sort_of_clevr(samples)


def test_validator_soc_catches_malformed_question():
    samples = gen_sort_of_clevr(seed=19, count=1)
    samples[0].questions[3, 6] = 1
    samples[0].questions[3, 7] = 1
    with pytest.raises(DatasetError, match="malformed question|family split"):
        validate_sort_of_clevr(samples)
