"""Canonical desk-scale experiments with result caching.

Each named experiment fully determines its dataset, model, and schedule, so
a finished run directory can be reused instead of retraining.  ``ensure``
is the single entry point: it returns the cached history when the run is
complete and otherwise trains from scratch.  Data splits come from one
generator stream per task; train and test use disjoint index ranges.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .coords import CoordMode
from .models import ScaledMnistNet, SmnistVariant, SocHead, SortOfClevrNet
from .training import MetricsRecord, RunResult, Schedule, run_experiment

SMNIST_TRAIN = 10000
SMNIST_TEST = 2000
SMNIST_DATA_SEED = 11
SOC_TRAIN = 9800
SOC_TEST = 200
SOC_DATA_SEED = 21
MORE_TEST = 2000
MORE_DATA_SEED = 31


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    task: str  # "smnist" | "soc"
    epochs: int
    variant: SmnistVariant | None = None
    head: SocHead | None = None
    coord_mode: CoordMode = CoordMode.CENTERED_XY_RADIAL
    seed: int = 0

    def build_model(self):
        if self.task == "smnist":
            return ScaledMnistNet(variant=self.variant, coord_mode=self.coord_mode, seed=self.seed)
        return SortOfClevrNet(head=self.head, coord_mode=self.coord_mode, seed=self.seed)


EXPERIMENTS = {
    spec.name: spec
    for spec in [
        ExperimentSpec("smnist_baseline", "smnist", 15, variant=SmnistVariant.BASELINE),
        ExperimentSpec("smnist_bcn_max", "smnist", 15, variant=SmnistVariant.BCN_MAX),
        ExperimentSpec("soc_multirn_radial", "soc", 25, head=SocHead.MULTIRN,
                       coord_mode=CoordMode.CENTERED_XY_RADIAL),
        ExperimentSpec("soc_multirn_centered", "soc", 25, head=SocHead.MULTIRN,
                       coord_mode=CoordMode.CENTERED_XY),
        ExperimentSpec("soc_multirn_topleft", "soc", 25, head=SocHead.MULTIRN,
                       coord_mode=CoordMode.TOPLEFT_XY),
        ExperimentSpec("soc_multirn_nocoords", "soc", 25, head=SocHead.MULTIRN,
                       coord_mode=CoordMode.NONE),
        ExperimentSpec("soc_no_bcn", "soc", 25, head=SocHead.MULTIRN_NO_BCN),
    ]
}

_smnist_cache: dict[str, list] = {}
_soc_cache: dict[str, list] = {}


def smnist_split():
    """Shared scaled-digit split: one stream, disjoint train/test indices."""
    if not _smnist_cache:
        from .datasets import digits_source, gen_scaled_mnist

        total = gen_scaled_mnist(digits_source(), seed=SMNIST_DATA_SEED, count=SMNIST_TRAIN + SMNIST_TEST)
        _smnist_cache["train"] = total[:SMNIST_TRAIN]
        _smnist_cache["test"] = total[SMNIST_TRAIN:]
    return _smnist_cache["train"], _smnist_cache["test"]


def soc_split():
    if not _soc_cache:
        from .datasets import gen_sort_of_clevr

        total = gen_sort_of_clevr(seed=SOC_DATA_SEED, count=SOC_TRAIN + SOC_TEST)
        _soc_cache["train"] = total[:SOC_TRAIN]
        _soc_cache["test"] = total[SOC_TRAIN:]
    return _soc_cache["train"], _soc_cache["test"]


def more_scaled_test(rotation: float = 0.0):
    from .datasets import digits_source, gen_more_scaled_mnist

    return gen_more_scaled_mnist(
        digits_source(), seed=MORE_DATA_SEED, count=MORE_TEST, rotation=rotation
    )


def load_history(run_dir) -> list[MetricsRecord]:
    path = Path(run_dir) / "metrics.csv"
    history = []
    with open(path) as f:
        for row in csv.DictReader(f):
            history.append(MetricsRecord(
                epoch=int(row["epoch"]),
                lr=float(row["lr"]),
                train_acc=float(row["train_acc"]),
                test_acc=float(row["test_acc"]),
                loc_err=float(row["loc_err"]),
                rel_acc=float(row["rel_acc"]),
                nonrel_acc=float(row["nonrel_acc"]),
                loss_ce=float(row["loss_ce"]),
                loss_mse=float(row["loss_mse"]),
            ))
    return history


def is_complete(name: str, out_root="runs") -> bool:
    spec = EXPERIMENTS[name]
    run_dir = Path(out_root) / name
    if not (run_dir / "metrics.csv").exists() or not (run_dir / "last.ckpt").exists():
        return False
    try:
        history = load_history(run_dir)
    except (OSError, KeyError, ValueError):
        return False
    return bool(history) and history[-1].epoch >= spec.epochs


def ensure(name: str, out_root="runs", log_every=None) -> tuple[list[MetricsRecord], Path]:
    """Return the experiment's history, training it first if not cached."""
    spec = EXPERIMENTS[name]
    run_dir = Path(out_root) / name
    if is_complete(name, out_root):
        return load_history(run_dir), run_dir
    if spec.task == "smnist":
        train, test = smnist_split()
    else:
        train, test = soc_split()
    net = spec.build_model()
    result: RunResult = run_experiment(
        net,
        spec.task,
        train,
        test,
        Schedule.named("smnist_sgd" if spec.task == "smnist" else "soc_adam"),
        run_dir,
        seed=spec.seed,
        epochs=spec.epochs,
        log_every=log_every,
    )
    return result.history, run_dir


def load_net(name: str, out_root="runs", which="last"):
    """Rebuild a finished experiment's model from its checkpoint."""
    from .checkpoint import load_checkpoint

    spec = EXPERIMENTS[name]
    arrays, _meta = load_checkpoint(Path(out_root) / name / f"{which}.ckpt")
    net = spec.build_model()
    net.load_state_arrays(arrays)
    net.eval()
    return net
