"""Relational reasoning toolkit: broadcast networks on synthetic scenes.

The package bundles a small reverse-mode tensor core, coordinate channel
embeddings, the broadcast module built on them, reference models for the
scaled-digit and colored-shapes tasks, dataset generators, a deterministic
training harness, and analysis tools (activation maps, cost accounting).
"""

from .bcn_module import BcnConfig, BcnModule, Pooling
from .config import ExperimentConfig, load_config, parse_config, serialize_config
from .coords import CoordMode, coordinate_bias_map, deflection, make_planes
from .models import (
    ScaledMnistNet,
    SmnistVariant,
    SocHead,
    SortOfClevrNet,
    param_count,
)
from .tensor import Tape, Tensor, backward

__all__ = [
    "BcnConfig",
    "BcnModule",
    "Pooling",
    "CoordMode",
    "make_planes",
    "coordinate_bias_map",
    "deflection",
    "ScaledMnistNet",
    "SmnistVariant",
    "SortOfClevrNet",
    "SocHead",
    "param_count",
    "ExperimentConfig",
    "parse_config",
    "serialize_config",
    "load_config",
    "Tensor",
    "Tape",
    "backward",
]

__version__ = "0.1.0"
