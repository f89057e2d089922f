"""JSON (de)serialization for run configuration.

A training config file looks like:

    {
      "manifest": "corpus/manifest.json",
      "train":   { ... TrainConfig fields ... },
      "network": { ... NetworkConfig fields, "block": {...} }
    }

Missing fields fall back to the dataclass defaults; command-line flags
override file values.
"""

from __future__ import annotations

from dataclasses import asdict

from .blocks import ScaleBlockConfig
from .network import NetworkConfig
from .training import TrainConfig

__all__ = [
    "network_config_to_dict",
    "network_config_from_dict",
    "train_config_to_dict",
    "train_config_from_dict",
]


def network_config_to_dict(cfg: NetworkConfig) -> dict:
    data = asdict(cfg)
    data["backbone"] = [list(stage) for stage in cfg.backbone]
    return data


def network_config_from_dict(data: dict) -> NetworkConfig:
    data = dict(data)
    block = data.pop("block", {})
    if isinstance(block, dict):
        block = ScaleBlockConfig(**block)
    backbone = data.pop("backbone", None)
    if backbone is not None:
        data["backbone"] = tuple((int(ch), bool(pool)) for ch, pool in backbone)
    return NetworkConfig(block=block, **data)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def train_config_from_dict(data: dict) -> TrainConfig:
    return TrainConfig(**data)
