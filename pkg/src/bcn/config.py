"""Experiment configuration: a single TOML file drives every pipeline stage.

Parsing is fail-closed: unknown keys anywhere in the document are rejected
rather than ignored, so a typo can never silently fall back to a default.
All randomness derives from the one top-level seed through named sub-seeds
(data / init / shuffle), which makes any stage replayable in isolation.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

from .bcn_module import BcnConfig, Pooling
from .coords import CoordMode

TASKS = ("smnist", "soc")
SCHEDULES = ("smnist_sgd", "soc_adam")
SMNIST_VARIANTS = ("baseline", "cce_only", "skip", "bcn_avg", "bcn_max")
SOC_HEADS = ("multirn", "multirn_no_bcn", "rn_pairwise", "mlp_only")

_COORD_NAMES = {
    "none": CoordMode.NONE,
    "topleft_xy": CoordMode.TOPLEFT_XY,
    "centered_xy": CoordMode.CENTERED_XY,
    "centered_xy_radial": CoordMode.CENTERED_XY_RADIAL,
}
_POOL_NAMES = {"max": Pooling.MAX, "avg": Pooling.AVG, "none": Pooling.NONE}


class ConfigError(ValueError):
    """Raised for syntax errors, unknown keys, or out-of-domain values."""


@dataclass
class ModelSection:
    # smnist knobs
    variant: str = "baseline"
    depth: int = 3
    filters: int = 24
    # soc knobs
    head: str = "multirn"
    cnn_h: bool = False
    rn_include_radial: bool = False


@dataclass
class DataSection:
    seed: int = 0
    train_count: int = 10000
    test_count: int = 2000
    rotation: int = 0
    train_path: str = ""
    test_path: str = ""


@dataclass
class ExperimentConfig:
    task: str
    seed: int = 0
    batch_size: int = 64
    schedule: str = ""
    epochs: int | None = None
    out_dir: str = "runs/experiment"
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    bcn: BcnConfig | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not self.schedule:
            self.schedule = "smnist_sgd" if self.task == "smnist" else "soc_adam"
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.task == "smnist" and self.model.variant not in SMNIST_VARIANTS:
            raise ConfigError(f"model.variant must be one of {SMNIST_VARIANTS}")
        if self.task == "soc" and self.model.head not in SOC_HEADS:
            raise ConfigError(f"model.head must be one of {SOC_HEADS}")
        if self.data.rotation not in (0, 10, 45):
            raise ConfigError("data.rotation must be 0, 10, or 45")

    # sub-seed derivation: every consumer mixes the top seed with a fixed tag
    @property
    def data_seed(self) -> int:
        return self.data.seed

    @property
    def init_seed(self) -> int:
        return self.seed * 1000 + 1

    def build_model(self):
        from .models import ScaledMnistNet, SmnistVariant, SocHead, SortOfClevrNet

        coord = self.bcn.coord_mode if self.bcn is not None else CoordMode.CENTERED_XY_RADIAL
        if self.task == "smnist":
            return ScaledMnistNet(
                variant=SmnistVariant[self.model.variant.upper()],
                depth=self.model.depth,
                filters=self.model.filters,
                coord_mode=coord,
                seed=self.init_seed,
            )
        return SortOfClevrNet(
            head=SocHead[self.model.head.upper()],
            cnn_h=self.model.cnn_h,
            rn_include_radial=self.model.rn_include_radial,
            coord_mode=coord,
            seed=self.init_seed,
        )


def _take(table: dict, known: dict, where: str):
    """Pop only known keys; anything left over is an error."""
    out = {}
    for key, conv in known.items():
        if key in table:
            out[key] = conv(table.pop(key))
    if table:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(table))}")
    return out


def _bcn_from_table(table: dict) -> BcnConfig:
    fields = _take(
        table,
        {
            "widths": lambda v: [int(x) for x in v],
            "pooling": str,
            "coords": str,
            "reduce_to": int,
        },
        "[bcn]",
    )
    if "pooling" in fields:
        name = fields["pooling"]
        if name not in _POOL_NAMES:
            raise ConfigError(f"bcn.pooling must be one of {sorted(_POOL_NAMES)}")
        fields["pooling"] = _POOL_NAMES[name]
    if "coords" in fields:
        name = fields["coords"]
        if name not in _COORD_NAMES:
            raise ConfigError(f"bcn.coords must be one of {sorted(_COORD_NAMES)}")
        fields["coord_mode"] = _COORD_NAMES[name]
        del fields["coords"]
    if "widths" in fields:
        fields["layer_widths"] = fields.pop("widths")
    try:
        return BcnConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [bcn] section: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    model_tbl = doc.pop("model", {})
    data_tbl = doc.pop("data", {})
    bcn_tbl = doc.pop("bcn", None)
    top = _take(
        doc,
        {
            "task": str,
            "seed": int,
            "batch_size": int,
            "schedule": str,
            "epochs": int,
            "out_dir": str,
        },
        "top level",
    )
    if "task" not in top:
        raise ConfigError("missing required key: task")
    model = ModelSection(**_take(
        model_tbl,
        {
            "variant": str,
            "depth": int,
            "filters": int,
            "head": str,
            "cnn_h": bool,
            "rn_include_radial": bool,
        },
        "[model]",
    ))
    data = DataSection(**_take(
        data_tbl,
        {
            "seed": int,
            "train_count": int,
            "test_count": int,
            "rotation": int,
            "train_path": str,
            "test_path": str,
        },
        "[data]",
    ))
    bcn = _bcn_from_table(dict(bcn_tbl)) if bcn_tbl is not None else None
    return ExperimentConfig(model=model, data=data, bcn=bcn, **top)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return str(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize value of type {type(v).__name__}")


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    top = {
        "task": cfg.task,
        "seed": cfg.seed,
        "batch_size": cfg.batch_size,
        "schedule": cfg.schedule,
        "out_dir": cfg.out_dir,
    }
    if cfg.epochs is not None:
        top["epochs"] = cfg.epochs
    for k, v in top.items():
        lines.append(f"{k} = {_toml_value(v)}")
    lines.append("")
    lines.append("[model]")
    if cfg.task == "smnist":
        model = {"variant": cfg.model.variant, "depth": cfg.model.depth, "filters": cfg.model.filters}
    else:
        model = {
            "head": cfg.model.head,
            "cnn_h": cfg.model.cnn_h,
            "rn_include_radial": cfg.model.rn_include_radial,
        }
    for k, v in model.items():
        lines.append(f"{k} = {_toml_value(v)}")
    lines.append("")
    lines.append("[data]")
    data = {
        "seed": cfg.data.seed,
        "train_count": cfg.data.train_count,
        "test_count": cfg.data.test_count,
        "rotation": cfg.data.rotation,
        "train_path": cfg.data.train_path,
        "test_path": cfg.data.test_path,
    }
    for k, v in data.items():
        lines.append(f"{k} = {_toml_value(v)}")
    if cfg.bcn is not None:
        lines.append("")
        lines.append("[bcn]")
        lines.append(f"widths = {_toml_value(list(cfg.bcn.layer_widths))}")
        pool_name = {v: k for k, v in _POOL_NAMES.items()}[cfg.bcn.pooling]
        coord_name = {v: k for k, v in _COORD_NAMES.items()}[cfg.bcn.coord_mode]
        lines.append(f'pooling = "{pool_name}"')
        lines.append(f'coords = "{coord_name}"')
        if cfg.bcn.reduce_to is not None:
            lines.append(f"reduce_to = {cfg.bcn.reduce_to}")
    return "\n".join(lines) + "\n"
