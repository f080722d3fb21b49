"""Experiment driver: schedules, hybrid loss, metrics, checkpointing.

Two optimization recipes are built in:
  SMNIST_SGD -- plain SGD, lr 0.01 / 0.001 / 0.0001 for 10 epochs each.
  SOC_ADAM   -- Adam, lr 0.001 for 20 epochs then 0.0001 for 30.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .datasets import ScaledMnistSample, SortOfClevrSample
from .models import ScaledMnistNet, SortOfClevrNet
from .optim import SGD, Adam
from .tensor import Tape, Tensor, backward

CSV_HEADER = ["epoch", "lr", "train_acc", "test_acc", "loc_err", "rel_acc", "nonrel_acc", "loss_ce", "loss_mse"]


class NanLossError(ArithmeticError):
    def __init__(self, epoch: int, batch_index: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


@dataclass
class Schedule:
    kind: str  # "smnist_sgd" | "soc_adam"
    segments: list[tuple[int, float]]

    @classmethod
    def smnist_sgd(cls):
        return cls("smnist_sgd", [(10, 0.01), (10, 0.001), (10, 0.0001)])

    @classmethod
    def soc_adam(cls):
        return cls("soc_adam", [(20, 0.001), (30, 0.0001)])

    @classmethod
    def named(cls, kind: str):
        if kind == "smnist_sgd":
            return cls.smnist_sgd()
        if kind == "soc_adam":
            return cls.soc_adam()
        raise ValueError(f"unknown schedule kind {kind!r}")

    @property
    def total_epochs(self) -> int:
        return sum(e for e, _ in self.segments)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch number."""
        done = 0
        for epochs, lr in self.segments:
            done += epochs
            if epoch <= done:
                return lr
        return self.segments[-1][1]


@dataclass
class MetricsRecord:
    epoch: int
    lr: float = 0.0
    train_acc: float = 0.0
    test_acc: float = 0.0
    loc_err: float = 0.0
    rel_acc: float = 0.0
    nonrel_acc: float = 0.0
    loss_ce: float = 0.0
    loss_mse: float = 0.0

    def row(self):
        return [
            str(self.epoch), f"{self.lr:.6g}", f"{self.train_acc:.6f}", f"{self.test_acc:.6f}",
            f"{self.loc_err:.6f}", f"{self.rel_acc:.6f}", f"{self.nonrel_acc:.6f}",
            f"{self.loss_ce:.6f}", f"{self.loss_mse:.6f}",
        ]


def hybrid_loss(class_logits, class_label, center_pred, center_target) -> Tensor:
    """Equal-weight sum of classification cross-entropy and center MSE."""
    ce = T.softmax_cross_entropy(class_logits, class_label)
    sq = T.mse(center_pred, center_target)
    return T.add(ce, sq)


# ---------------------------------------------------------------------------
# batched arrays

def smnist_arrays(samples: list[ScaledMnistSample]):
    images = np.stack([s.image for s in samples])
    labels = np.array([s.class_label for s in samples], dtype=np.int64)
    centers = np.array([s.center for s in samples], dtype=np.float32)
    return images, labels, centers


def soc_arrays(samples: list[SortOfClevrSample]):
    """Flatten scenes into (image_index, question, answer, is_relational) triples."""
    images = np.stack([s.image for s in samples])
    img_idx, questions, answers, rel = [], [], [], []
    for i, s in enumerate(samples):
        for q, a in zip(s.questions, s.answers):
            img_idx.append(i)
            questions.append(q)
            answers.append(a)
            rel.append(bool(q[7]))
    return (
        images,
        np.array(img_idx, dtype=np.int64),
        np.stack(questions).astype(np.float32),
        np.array(answers, dtype=np.int64),
        np.array(rel, dtype=bool),
    )


# ---------------------------------------------------------------------------
# evaluation

def evaluate_smnist(net: ScaledMnistNet, samples, batch_size: int = 128) -> MetricsRecord:
    images, labels, centers = smnist_arrays(samples)
    net.eval()
    correct = 0
    dist = 0.0
    for i in range(0, len(samples), batch_size):
        logits, pred_ctr = net.forward(Tensor(images[i : i + batch_size]))
        correct += int((logits.data.argmax(axis=1) == labels[i : i + batch_size]).sum())
        d = pred_ctr.data - centers[i : i + batch_size]
        dist += float(np.hypot(d[:, 0], d[:, 1]).sum())
    n = len(samples)
    return MetricsRecord(epoch=0, test_acc=correct / n, loc_err=dist / n)


def evaluate_soc(net: SortOfClevrNet, samples, batch_size: int = 128) -> MetricsRecord:
    images, img_idx, questions, answers, rel = soc_arrays(samples)
    net.eval()
    correct = np.zeros(len(answers), dtype=bool)
    for i in range(0, len(answers), batch_size):
        sl = slice(i, i + batch_size)
        logits = net.forward(Tensor(images[img_idx[sl]]), Tensor(questions[sl]))
        correct[sl] = logits.data.argmax(axis=1) == answers[sl]
    rec = MetricsRecord(epoch=0, test_acc=float(correct.mean()))
    if rel.any():
        rec.rel_acc = float(correct[rel].mean())
    if (~rel).any():
        rec.nonrel_acc = float(correct[~rel].mean())
    return rec


def evaluate(net, samples, task: str) -> MetricsRecord:
    if task == "smnist":
        if not isinstance(net, ScaledMnistNet) or (samples and not isinstance(samples[0], ScaledMnistSample)):
            raise ValueError("smnist evaluation needs a ScaledMnistNet and smnist samples")
        return evaluate_smnist(net, samples)
    if task == "soc":
        if not isinstance(net, SortOfClevrNet) or (samples and not isinstance(samples[0], SortOfClevrSample)):
            raise ValueError("soc evaluation needs a SortOfClevrNet and soc samples")
        return evaluate_soc(net, samples)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# experiment loop

@dataclass
class RunResult:
    history: list[MetricsRecord]
    checkpoint_path: Optional[Path]
    best_checkpoint_path: Optional[Path]


def _make_optimizer(schedule: Schedule, params):
    if schedule.kind == "smnist_sgd":
        return SGD(params, lr=schedule.segments[0][1])
    return Adam(params, lr=schedule.segments[0][1])


def _write_csv(path, history):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for rec in history:
            writer.writerow(rec.row())


def run_experiment(
    net,
    task: str,
    train_samples,
    test_samples,
    schedule: Schedule,
    out_dir,
    seed: int = 0,
    batch_size: int = 64,
    epochs: Optional[int] = None,
    stop_when: Optional[dict] = None,
    checkpoint_meta: Optional[dict] = None,
    log_every: Optional[int] = None,
) -> RunResult:
    """Train ``net`` on ``task`` data, logging per-epoch metrics to CSV.

    ``epochs`` caps the schedule; ``stop_when`` maps MetricsRecord fields to
    thresholds that end training early once all are reached.  Deterministic
    for a fixed seed: shuffling comes from its own named substream.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total_epochs = min(epochs, schedule.total_epochs) if epochs is not None else schedule.total_epochs
    optimizer = _make_optimizer(schedule, net.params())
    shuffle_rng = np.random.default_rng([seed, 0xC0FFEE])

    if task == "smnist":
        images, labels, centers = smnist_arrays(train_samples)
        n_train = len(train_samples)
    else:
        images, img_idx, questions, answers, _rel = soc_arrays(train_samples)
        n_train = len(answers)

    history: list[MetricsRecord] = []
    best_acc = -1.0
    ckpt = out_dir / "last.ckpt"
    best_ckpt = out_dir / "best.ckpt"
    meta = dict(checkpoint_meta or {})
    meta.update({"task": task, "schedule": schedule.kind, "seed": seed})

    def _save(path, epoch):
        arrays = net.state_arrays() + optimizer.state_arrays()
        save_checkpoint(path, arrays, {**meta, "epoch": epoch})

    if total_epochs == 0:
        rec = evaluate(net, test_samples, task)
        rec.epoch = 0
        rec.lr = schedule.lr_at(1)
        history.append(rec)
        _write_csv(out_dir / "metrics.csv", history)
        _save(ckpt, 0)
        return RunResult(history, ckpt, None)

    for epoch in range(1, total_epochs + 1):
        optimizer.lr = schedule.lr_at(epoch)
        order = shuffle_rng.permutation(n_train)
        net.train()
        hits = 0
        seen = 0
        ce_sum = 0.0
        mse_sum = 0.0
        nbatches = 0
        for bi, start in enumerate(range(0, n_train, batch_size)):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue  # batchnorm needs at least 2 samples
            optimizer.zero_grad()
            with Tape() as tape:
                if task == "smnist":
                    logits, pred_ctr = net.forward(Tensor(images[idx]))
                    ce = T.softmax_cross_entropy(logits, labels[idx])
                    sq = T.mse(pred_ctr, Tensor(centers[idx]))
                    loss = T.add(ce, sq)
                    mse_sum += sq.item()
                    hits += int((logits.data.argmax(axis=1) == labels[idx]).sum())
                else:
                    logits = net.forward(Tensor(images[img_idx[idx]]), Tensor(questions[idx]))
                    ce = T.softmax_cross_entropy(logits, answers[idx])
                    loss = ce
                    hits += int((logits.data.argmax(axis=1) == answers[idx]).sum())
                if not np.isfinite(loss.item()):
                    raise NanLossError(epoch, bi)
                backward(loss)
            optimizer.step()
            ce_sum += ce.item()
            seen += len(idx)
            nbatches += 1
            if log_every and bi % log_every == 0:
                print(f"epoch {epoch} batch {bi}: loss {loss.item():.4f}", flush=True)

        rec = evaluate(net, test_samples, task)
        rec.epoch = epoch
        rec.lr = optimizer.lr
        rec.train_acc = hits / max(seen, 1)
        rec.loss_ce = ce_sum / max(nbatches, 1)
        rec.loss_mse = mse_sum / max(nbatches, 1)
        history.append(rec)
        _write_csv(out_dir / "metrics.csv", history)
        _save(ckpt, epoch)
        if rec.test_acc > best_acc:
            best_acc = rec.test_acc
            _save(best_ckpt, epoch)
        if stop_when and all(getattr(rec, k) >= v for k, v in stop_when.items()):
            break

    return RunResult(history, ckpt, best_ckpt if best_acc >= 0 else None)


def load_net_checkpoint(path):
    """Rebuild the model a checkpoint was trained with and load its weights.

    Requires the checkpoint meta to embed the experiment config under the
    "config" key (the training command always writes it).
    """
    from .checkpoint import load_checkpoint
    from .config import parse_config

    arrays, meta = load_checkpoint(path)
    if "config" not in meta:
        raise ValueError(f"{path}: checkpoint meta has no embedded config")
    net = parse_config(meta["config"]).build_model()
    try:
        net.load_state_arrays(arrays)
    except KeyError as exc:
        raise ValueError(f"{path}: checkpoint is missing array {exc}") from exc
    net.eval()
    return net, meta
