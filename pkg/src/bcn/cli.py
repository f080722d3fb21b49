"""Command-line entry point for dataset generation, training, and analysis.

Exit codes: 0 ok, 2 usage or validation failure, 3 I/O failure, 4 numeric
failure (non-finite loss abort).  One command per process; commands never
share mutable state.  The env var BCN_THREADS bounds intra-op parallelism
and defaults to 1 so repeated runs are bit-identical.
"""

from __future__ import annotations

import os

# thread caps must be exported before numpy spins up its BLAS pools
_threads = os.environ.get("BCN_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import sys
from pathlib import Path

import click
import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class ValidationFailure(click.ClickException):
    exit_code = EXIT_USAGE


def _io_fail(msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(EXIT_IO)


@click.group()
def main():
    """Relational reasoning toolkit: broadcast networks on synthetic scenes."""


# ---------------------------------------------------------------------------
# gen

@main.command()
@click.option("--task", type=click.Choice(["smnist", "smnist-more", "soc"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--count", type=int, required=True)
@click.option("--rotation", type=click.Choice(["0", "10", "45"]), default=None)
@click.option("--mnist-images", type=click.Path(), default=None)
@click.option("--mnist-labels", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), required=True)
def gen(task, seed, count, rotation, mnist_images, mnist_labels, out):
    """Generate a dataset file and print its validator summary."""
    from . import datasets

    if count < 1:
        raise ValidationFailure("--count must be at least 1")
    if rotation is not None and task != "smnist-more":
        raise ValidationFailure("--rotation only applies to task smnist-more")
    generator = {"task": task, "seed": seed, "count": count}
    try:
        if task in ("smnist", "smnist-more"):
            if not mnist_images or not mnist_labels:
                raise ValidationFailure("--mnist-images and --mnist-labels are required for digit tasks")
            try:
                digits = datasets.load_mnist_idx(mnist_images, mnist_labels)
            except OSError as exc:
                _io_fail(str(exc))
            if task == "smnist":
                samples = datasets.gen_scaled_mnist(digits, seed=seed, count=count)
            else:
                rot = int(rotation) if rotation is not None else 0
                generator["rotation"] = rot
                samples = datasets.gen_more_scaled_mnist(digits, seed=seed, count=count, rotation=rot)
            report = datasets.validate_scaled_mnist(samples)
        else:
            samples = datasets.gen_sort_of_clevr(seed=seed, count=count)
            report = datasets.validate_sort_of_clevr(samples)
    except datasets.DatasetError as exc:
        raise ValidationFailure(str(exc))

    for key, value in sorted(report.items()):
        click.echo(f"{key}: {value} ok")
    try:
        datasets.write_dataset(samples, out, generator=generator)
    except OSError as exc:
        _io_fail(str(exc))
    click.echo(f"wrote {count} samples to {out}")


# ---------------------------------------------------------------------------
# train / eval

def _load_cfg(path):
    from .config import ConfigError, load_config

    try:
        return load_config(path)
    except OSError as exc:
        _io_fail(str(exc))
    except ConfigError as exc:
        raise ValidationFailure(str(exc))


def _load_data(path):
    from .datasets import DatasetError, read_dataset

    try:
        return read_dataset(path)
    except OSError as exc:
        _io_fail(str(exc))
    except DatasetError as exc:
        raise ValidationFailure(str(exc))


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def train(config_path, out_dir):
    """Train the configured model; writes metrics.csv and checkpoints."""
    from .config import serialize_config
    from .training import NanLossError, Schedule, run_experiment

    cfg = _load_cfg(config_path)
    if not cfg.data.train_path or not cfg.data.test_path:
        raise ValidationFailure("config must set data.train_path and data.test_path for training")
    train_samples = _load_data(cfg.data.train_path)
    test_samples = _load_data(cfg.data.test_path)
    net = cfg.build_model()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(serialize_config(cfg))
        result = run_experiment(
            net,
            cfg.task,
            train_samples,
            test_samples,
            Schedule.named(cfg.schedule),
            out,
            seed=cfg.seed,
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            checkpoint_meta={"config": serialize_config(cfg)},
        )
    except NanLossError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    except OSError as exc:
        _io_fail(str(exc))
    last = result.history[-1]
    click.echo(f"done: epoch {last.epoch} test_acc {last.test_acc:.4f}")


@main.command("eval")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--data", "data_path", type=click.Path(), required=True)
def eval_cmd(checkpoint, data_path):
    """Evaluate a checkpoint on a dataset file."""
    from .training import CSV_HEADER, evaluate, load_net_checkpoint

    samples = _load_data(data_path)
    try:
        net, meta = load_net_checkpoint(checkpoint)
    except OSError as exc:
        _io_fail(str(exc))
    except ValueError as exc:
        raise ValidationFailure(str(exc))
    task = meta.get("task")
    rec = evaluate(net, samples, task)
    click.echo(",".join(CSV_HEADER))
    click.echo(",".join(rec.row()))


# ---------------------------------------------------------------------------
# analysis

@main.command()
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--index", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def actmap(checkpoint, data_path, index, out_path):
    """Render a pooled-position activation map for one sample as a PGM."""
    from .analysis import AnalysisError, extract_activation_map
    from .datasets import ScaledMnistSample
    from .imgio import to_uint8, write_pgm
    from .training import load_net_checkpoint

    samples = _load_data(data_path)
    if not 0 <= index < len(samples):
        raise ValidationFailure(f"--index out of range (dataset has {len(samples)} samples)")
    try:
        net, _ = load_net_checkpoint(checkpoint)
    except OSError as exc:
        _io_fail(str(exc))
    except ValueError as exc:
        raise ValidationFailure(str(exc))
    sample = samples[index]
    if isinstance(sample, ScaledMnistSample):
        inputs = sample.image
    else:
        inputs = (sample.image, sample.questions[0])
    try:
        amap = extract_activation_map(net, inputs)
    except AnalysisError as exc:
        raise ValidationFailure(str(exc))
    try:
        write_pgm(out_path, to_uint8(amap.upsampled))
    except OSError as exc:
        _io_fail(str(exc))
    click.echo(f"wrote activation map to {out_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
def flops(config_path):
    """Print the per-section FLOPs and parameter table without training."""
    from .analysis import count_flops

    cfg = _load_cfg(config_path)
    net = cfg.build_model()
    if cfg.task == "smnist":
        shape = (1, 1, 128, 128)
    else:
        shape = (1, 3, 75, 75)
    click.echo(count_flops(net, shape).table())


@main.command()
@click.option("--mode", type=click.Choice(["none", "topleft_xy", "centered_xy", "centered_xy_radial"]), required=True)
@click.option("--h", type=int, required=True)
@click.option("--w", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--kernels", type=int, default=2048, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def coordmap(mode, h, w, seed, kernels, out_path):
    """Render the coordinate bias map for an embedding mode as a PGM."""
    from .coords import CoordMode, coordinate_bias_map, deflection
    from .imgio import to_uint8, write_pgm

    cmode = CoordMode[mode.upper()]
    if cmode is CoordMode.NONE:
        raise ValidationFailure("mode none has no coordinate planes to map")
    if h < 1 or w < 1:
        raise ValidationFailure("--h and --w must be positive")
    bias = coordinate_bias_map(cmode, h, w, seed=seed, num_kernels=kernels)
    try:
        write_pgm(out_path, to_uint8(bias))
    except OSError as exc:
        _io_fail(str(exc))
    click.echo(f"deflection {deflection(bias):.6f}")


if __name__ == "__main__":
    main()
