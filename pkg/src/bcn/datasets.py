"""Dataset loaders and deterministic generators.

Every generated sample is fully determined by (seed, index): each index
draws from its own ``default_rng([seed, index])`` stream, so generation
order and parallelism cannot change content.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SMNIST_CANVAS = 128
MORE_CANVAS_H = 192
MORE_CANVAS_W = 256

SOC_SIZE = 75
SOC_COLORS = ["red", "green", "blue", "orange", "gray", "yellow"]
SOC_RGB = np.array(
    [[220, 40, 40], [40, 180, 60], [50, 70, 220], [235, 150, 40], [128, 128, 128], [235, 225, 50]],
    dtype=np.float32,
) / 255.0
SOC_BG = 0.5
SOC_OBJ = 10  # square side / circle diameter in pixels

# answer vocabulary
ANS_YES, ANS_NO, ANS_SQUARE, ANS_CIRCLE = 0, 1, 2, 3
ANSWER_NAMES = ["yes", "no", "square", "circle", "1", "2", "3", "4", "5", "6"]


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# IDX format

def load_mnist_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read big-endian IDX image/label files into ([N,1,28,28] in [0,1], [N])."""
    img_blob = Path(images_path).read_bytes()
    lbl_blob = Path(labels_path).read_bytes()
    if len(img_blob) < 16:
        raise DatasetError(f"{images_path}: truncated header at offset {len(img_blob)}")
    magic, n, rows, cols = struct.unpack(">IIII", img_blob[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(
            f"{images_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    expected = 16 + n * rows * cols
    if len(img_blob) < expected:
        raise DatasetError(
            f"{images_path}: truncated payload, expected {expected} bytes, got {len(img_blob)}"
        )
    if len(lbl_blob) < 8:
        raise DatasetError(f"{labels_path}: truncated header at offset {len(lbl_blob)}")
    lmagic, ln = struct.unpack(">II", lbl_blob[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise DatasetError(
            f"{labels_path}: bad magic 0x{lmagic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    if ln != n:
        raise DatasetError(f"image count {n} does not match label count {ln}")
    if len(lbl_blob) < 8 + n:
        raise DatasetError(f"{labels_path}: truncated payload at offset {len(lbl_blob)}")
    images = np.frombuffer(img_blob, dtype=np.uint8, count=n * rows * cols, offset=16)
    images = (images.astype(np.float32) / 255.0).reshape(n, 1, rows, cols)
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, count=n, offset=8).copy()
    return images, labels


def write_mnist_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write [N, h, w] float [0,1] or uint8 images and [N] labels as IDX files."""
    if images.ndim == 4:
        images = images[:, 0]
    if images.dtype != np.uint8:
        images = np.round(np.clip(images, 0, 1) * 255.0).astype(np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# resampling helpers

def resize_bilinear(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Half-pixel-centered bilinear resize of a [h, w] image."""
    h, w = img.shape
    ys = (np.arange(oh, dtype=np.float64) + 0.5) * h / oh - 0.5
    xs = (np.arange(ow, dtype=np.float64) + 0.5) * w / ow - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    im = img.astype(np.float64)
    top = im[y0[:, None], x0[None, :]] * (1 - fx) + im[y0[:, None], x1[None, :]] * fx
    bot = im[y1[:, None], x0[None, :]] * (1 - fx) + im[y1[:, None], x1[None, :]] * fx
    return (top * (1 - fy[:, 0])[:, None] + bot * fy[:, 0][:, None]).astype(np.float32)


def rotate_bilinear(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the patch center, zero fill, output enlarged to fit."""
    if degrees == 0.0:
        return img.astype(np.float32)
    h, w = img.shape
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    oh = int(np.ceil(abs(h * c) + abs(w * s)))
    ow = int(np.ceil(abs(w * c) + abs(h * s)))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ocy, ocx = (oh - 1) / 2.0, (ow - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(oh, dtype=np.float64), np.arange(ow, dtype=np.float64), indexing="ij")
    # inverse map: rotate output coords by -theta back into the source frame
    sy = (yy - ocy) * c - (xx - ocx) * s + cy
    sx = (yy - ocy) * s + (xx - ocx) * c + cx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    out = np.zeros((oh, ow), dtype=np.float64)
    im = img.astype(np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            yi = y0 + dy
            xi = x0 + dx
            wgt = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            out[valid] += wgt[valid] * im[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)][valid]
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# scaled digit canvases

@dataclass
class ScaledMnistSample:
    image: np.ndarray  # [1, H, W] float32 in [0, 1]
    class_label: int
    center: tuple[float, float]  # (cx, cy) normalized to [0, 1] per axis
    box: tuple[int, int, int, int] = (0, 0, 0, 0)  # left, top, width, height


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _place_digit(
    rng: np.random.Generator,
    src_img: np.ndarray,
    canvas_h: int,
    canvas_w: int,
    min_width: int,
    max_width: int,
    rotation: float,
) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    width = int(rng.integers(min_width, max_width + 1))
    aspect = float(rng.uniform(0.8, 1.2))
    height = max(1, min(int(round(width * aspect)), canvas_h))
    width = min(width, canvas_w)
    patch = resize_bilinear(src_img, height, width)
    if rotation:
        angle = float(rng.uniform(-rotation, rotation))
        for _ in range(8):
            rot = rotate_bilinear(patch, angle)
            if rot.shape[0] <= canvas_h and rot.shape[1] <= canvas_w:
                patch = rot
                break
            # rotated extent exceeds the canvas: shrink and retry
            height = max(1, int(height * 0.8))
            width = max(1, int(width * 0.8))
            patch = resize_bilinear(src_img, height, width)
        else:
            patch = resize_bilinear(src_img, canvas_h // 2, canvas_w // 2)
    ph, pw = patch.shape
    top = int(rng.integers(0, canvas_h - ph + 1))
    left = int(rng.integers(0, canvas_w - pw + 1))
    canvas = np.zeros((canvas_h, canvas_w), dtype=np.float32)
    canvas[top : top + ph, left : left + pw] = np.clip(patch, 0.0, 1.0)
    return canvas, (left, top, pw, ph)


def _gen_scaled(
    source: tuple[np.ndarray, np.ndarray],
    seed: int,
    count: int,
    canvas_h: int,
    canvas_w: int,
    max_width: int,
    rotation: float,
) -> list[ScaledMnistSample]:
    images, labels = source
    if images.ndim == 4:
        images = images[:, 0]
    n_src = len(images)
    if count < 1:
        raise DatasetError(f"count must be >= 1, got {count}")
    out = []
    for i in range(count):
        rng = _sample_rng(seed, i)
        src = int(rng.integers(0, n_src))
        canvas, box = _place_digit(rng, images[src], canvas_h, canvas_w, 28, max_width, rotation)
        left, top, pw, ph = box
        center = ((left + pw / 2.0) / canvas_w, (top + ph / 2.0) / canvas_h)
        out.append(
            ScaledMnistSample(
                image=canvas[None], class_label=int(labels[src]), center=center, box=box
            )
        )
    return out


def gen_scaled_mnist(source, seed: int, count: int) -> list[ScaledMnistSample]:
    """Digits rescaled to widths 28..105, aspect 0.8..1.2, placed on 128x128."""
    return _gen_scaled(source, seed, count, SMNIST_CANVAS, SMNIST_CANVAS, 105, 0.0)


def gen_more_scaled_mnist(source, seed: int, count: int, rotation: float = 0.0) -> list[ScaledMnistSample]:
    """Widths 28..160 on a 256x192 (w x h) canvas, optional +-rotation degrees."""
    if rotation not in (0.0, 10.0, 45.0):
        raise DatasetError(f"rotation must be 0, 10 or 45 degrees, got {rotation}")
    return _gen_scaled(source, seed, count, MORE_CANVAS_H, MORE_CANVAS_W, 160, rotation)


# ---------------------------------------------------------------------------
# sort-of-clevr

@dataclass
class SceneObject:
    color: int  # index into SOC_COLORS
    shape: str  # "square" | "circle"
    center: tuple[int, int]  # (cx, cy) pixel coordinates
    size: int = SOC_OBJ


@dataclass
class SortOfClevrSample:
    image: np.ndarray  # [3, 75, 75] float32 in [0, 1]
    questions: np.ndarray  # [20, 11] uint8
    answers: np.ndarray  # [20] uint8
    scene: list[SceneObject] = field(default_factory=list)


def _draw_scene(scene: list[SceneObject]) -> np.ndarray:
    img = np.full((SOC_SIZE, SOC_SIZE, 3), SOC_BG, dtype=np.float32)
    half = SOC_OBJ // 2
    yy, xx = np.mgrid[0:SOC_SIZE, 0:SOC_SIZE]
    for obj in scene:
        cx, cy = obj.center
        if obj.shape == "square":
            mask = (np.abs(xx - cx) <= half) & (np.abs(yy - cy) <= half)
        else:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= half * half
        img[mask] = SOC_RGB[obj.color]
    return np.moveaxis(img, 2, 0).copy()


def _place_objects(rng: np.random.Generator) -> list[SceneObject]:
    half = SOC_OBJ // 2
    lo, hi = half, SOC_SIZE - 1 - half
    for _ in range(200):
        centers: list[tuple[int, int]] = []
        ok = True
        for _ in range(len(SOC_COLORS)):
            placed = False
            for _ in range(100):
                cx = int(rng.integers(lo, hi + 1))
                cy = int(rng.integers(lo, hi + 1))
                if all(abs(cx - ox) > SOC_OBJ or abs(cy - oy) > SOC_OBJ for ox, oy in centers):
                    centers.append((cx, cy))
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if ok:
            shapes = ["square" if rng.random() < 0.5 else "circle" for _ in SOC_COLORS]
            return [
                SceneObject(color=c, shape=shapes[c], center=centers[c])
                for c in range(len(SOC_COLORS))
            ]
    raise DatasetError("could not place a non-overlapping scene after bounded retries")


def answer_question(scene: list[SceneObject], question: np.ndarray) -> int:
    """Ground-truth oracle: recompute the answer from scene geometry."""
    color = int(np.argmax(question[0:6]))
    relational = bool(question[7])
    subtype = int(np.argmax(question[8:11]))
    target = scene[color]
    cx, cy = target.center
    mid = (SOC_SIZE - 1) / 2.0
    shape_ans = ANS_SQUARE if target.shape == "square" else ANS_CIRCLE
    if not relational:
        if subtype == 0:
            return shape_ans
        if subtype == 1:
            return ANS_YES if cx < mid else ANS_NO
        return ANS_YES if cy < mid else ANS_NO
    others = [o for o in scene if o.color != color]
    dists = [np.hypot(o.center[0] - cx, o.center[1] - cy) for o in others]
    if subtype == 0:
        other = others[int(np.argmin(dists))]
        return ANS_SQUARE if other.shape == "square" else ANS_CIRCLE
    if subtype == 1:
        other = others[int(np.argmax(dists))]
        return ANS_SQUARE if other.shape == "square" else ANS_CIRCLE
    count = sum(1 for o in scene if o.shape == target.shape)  # target counts itself
    return 3 + count


def _encode_question(color: int, relational: bool, subtype: int) -> np.ndarray:
    q = np.zeros(11, dtype=np.uint8)
    q[color] = 1
    q[7 if relational else 6] = 1
    q[8 + subtype] = 1
    return q


def _pick_questions(rng: np.random.Generator, relational: bool) -> list[tuple[int, bool, int]]:
    combos = [(c, relational, s) for c in range(6) for s in range(3)]
    idx = rng.permutation(len(combos))[:10]
    return [combos[i] for i in idx]


def gen_sort_of_clevr(seed: int, count: int) -> list[SortOfClevrSample]:
    """Six uniquely colored shapes per 75x75 scene, 10+10 vectorized questions."""
    if count < 1:
        raise DatasetError(f"count must be >= 1, got {count}")
    out = []
    for i in range(count):
        rng = _sample_rng(seed, i)
        scene = _place_objects(rng)
        image = _draw_scene(scene)
        qs, ans = [], []
        for rel in (False, True):
            for color, relational, subtype in _pick_questions(rng, rel):
                q = _encode_question(color, relational, subtype)
                qs.append(q)
                ans.append(answer_question(scene, q))
        out.append(
            SortOfClevrSample(
                image=image,
                questions=np.stack(qs),
                answers=np.array(ans, dtype=np.uint8),
                scene=scene,
            )
        )
    return out


# ---------------------------------------------------------------------------
# container format

DATA_MAGIC = b"BCNDATA1"


def _sample_blocks(samples) -> tuple[str, dict[str, np.ndarray]]:
    first = samples[0]
    if isinstance(first, ScaledMnistSample):
        return "smnist", {
            "images": np.stack([s.image for s in samples]).astype(np.float32),
            "labels": np.array([s.class_label for s in samples], dtype=np.float32),
            "centers": np.array([s.center for s in samples], dtype=np.float32),
            "boxes": np.array([s.box for s in samples], dtype=np.float32),
        }
    if isinstance(first, SortOfClevrSample):
        return "soc", {
            "images": np.stack([s.image for s in samples]).astype(np.float32),
            "questions": np.stack([s.questions for s in samples]).astype(np.float32),
            "answers": np.stack([s.answers for s in samples]).astype(np.float32),
        }
    raise DatasetError(f"unknown sample type {type(first).__name__}")


def write_dataset(samples, path, generator: dict | None = None):
    """Write samples to a single-file container; round-trip is bit-exact."""
    schema, blocks = _sample_blocks(samples)
    header: dict = {
        "schema": schema,
        "count": len(samples),
        "generator": generator or {},
        "blocks": [],
    }
    payloads = []
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        raw = arr.tobytes()
        header["blocks"].append(
            {"name": name, "shape": list(arr.shape), "crc32": zlib.crc32(raw)}
        )
        payloads.append(raw)
    if schema == "soc":
        header["scenes"] = [
            [[o.color, o.shape, o.center[0], o.center[1], o.size] for o in s.scene]
            for s in samples
        ]
    hjson = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(DATA_MAGIC)
        f.write(struct.pack("<I", len(hjson)))
        f.write(hjson)
        for raw in payloads:
            f.write(raw)


def read_dataset(path):
    """Read a container back into a list of samples."""
    blob = Path(path).read_bytes()
    if blob[:8] != DATA_MAGIC:
        raise DatasetError(f"{path}: bad magic {blob[:8]!r}, expected {DATA_MAGIC!r}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    blocks: dict[str, np.ndarray] = {}
    for entry in header["blocks"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + nbytes > len(blob):
            raise DatasetError(
                f"{path}: truncated block {entry['name']}, expected {nbytes} bytes "
                f"at offset {offset}, file has {len(blob) - offset}"
            )
        raw = blob[offset : offset + nbytes]
        if zlib.crc32(raw) != entry["crc32"]:
            raise DatasetError(f"{path}: checksum failure in block {entry['name']}")
        blocks[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        offset += nbytes

    if header["schema"] == "smnist":
        return [
            ScaledMnistSample(
                image=blocks["images"][i],
                class_label=int(blocks["labels"][i]),
                center=tuple(blocks["centers"][i]),
                box=tuple(int(v) for v in blocks["boxes"][i]),
            )
            for i in range(header["count"])
        ]
    if header["schema"] == "soc":
        scenes = header.get("scenes", [])
        out = []
        for i in range(header["count"]):
            scene = [
                SceneObject(color=int(c), shape=sh, center=(int(x), int(y)), size=int(sz))
                for c, sh, x, y, sz in scenes[i]
            ] if scenes else []
            out.append(
                SortOfClevrSample(
                    image=blocks["images"][i],
                    questions=blocks["questions"][i].astype(np.uint8),
                    answers=blocks["answers"][i].astype(np.uint8),
                    scene=scene,
                )
            )
        return out
    raise DatasetError(f"{path}: unknown schema {header['schema']!r}")


def dataset_generator_info(path) -> dict:
    blob = Path(path).read_bytes()
    if blob[:8] != DATA_MAGIC:
        raise DatasetError(f"{path}: bad magic {blob[:8]!r}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    return header.get("generator", {})


# ---------------------------------------------------------------------------
# validators

def validate_scaled_mnist(samples, canvas_h=None, canvas_w=None) -> dict:
    """Full-scan invariant check; raises DatasetError on the first violation."""
    for i, s in enumerate(samples):
        ch = canvas_h or s.image.shape[1]
        cw = canvas_w or s.image.shape[2]
        if s.image.min() < 0.0 or s.image.max() > 1.0:
            raise DatasetError(f"sample {i}: pixel values outside [0, 1]")
        if not 0 <= s.class_label <= 9:
            raise DatasetError(f"sample {i}: label {s.class_label} out of range")
        left, top, w, h = s.box
        if left < 0 or top < 0 or left + w > cw or top + h > ch:
            raise DatasetError(f"sample {i}: box {s.box} exceeds {ch}x{cw} canvas")
        ecx, ecy = (left + w / 2.0) / cw, (top + h / 2.0) / ch
        if abs(s.center[0] - ecx) > 1 / 256 or abs(s.center[1] - ecy) > 1 / 256:
            raise DatasetError(f"sample {i}: center {s.center} != box center ({ecx}, {ecy})")
    return {"count": len(samples), "schema": "smnist"}


def validate_sort_of_clevr(samples) -> dict:
    for i, s in enumerate(samples):
        if s.image.min() < 0.0 or s.image.max() > 1.0:
            raise DatasetError(f"sample {i}: pixel values outside [0, 1]")
        colors = sorted(o.color for o in s.scene)
        if colors != list(range(6)):
            raise DatasetError(f"sample {i}: colors not unique: {colors}")
        for a, oa in enumerate(s.scene):
            for ob in s.scene[a + 1 :]:
                if (
                    abs(oa.center[0] - ob.center[0]) <= SOC_OBJ
                    and abs(oa.center[1] - ob.center[1]) <= SOC_OBJ
                ):
                    raise DatasetError(f"sample {i}: objects {oa} and {ob} overlap")
        if s.questions.shape != (20, 11) or s.answers.shape != (20,):
            raise DatasetError(f"sample {i}: bad question/answer shapes")
        if int(s.questions[:10, 6].sum()) != 10 or int(s.questions[10:, 7].sum()) != 10:
            raise DatasetError(f"sample {i}: family split is not 10 + 10")
        for q, a in zip(s.questions, s.answers):
            if q.sum() != 3 or q[0:6].sum() != 1 or q[6:8].sum() != 1 or q[8:11].sum() != 1:
                raise DatasetError(f"sample {i}: malformed question vector {q}")
            if answer_question(s.scene, q) != a:
                raise DatasetError(f"sample {i}: stored answer {a} disagrees with geometry")
    return {"count": len(samples), "schema": "soc"}


# ---------------------------------------------------------------------------
# bundled fallback digit source

def digits_source(upscale: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """Digit source built from scikit-learn's bundled 8x8 digits, upscaled.

    Stand-in for the usual 28x28 handwritten-digit corpus when that corpus
    is not available on disk; same value range and layout.
    """
    from sklearn.datasets import load_digits

    d = load_digits()
    images = np.stack(
        [resize_bilinear(img / 16.0, upscale, upscale) for img in d.images]
    ).astype(np.float32)
    return np.clip(images, 0.0, 1.0), d.target.astype(np.uint8)
