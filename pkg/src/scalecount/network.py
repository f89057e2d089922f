"""Density-regression network: backbone, dense-connected scale blocks, head.

The backbone is a small stack of 3x3 conv stages with optional 2x max
pooling; its output stride is 2 ** (number of pooled stages).  Scale blocks
then run in sequence.  With dense connections on, block l consumes the
channel concatenation of the backbone output and every previous block
output, so its input width is C_backbone + l * out_channels; with them off
each block sees only its predecessor.  The head is two 3x3 convolutions
(256 -> 128 -> 1) with a ReLU between and a clamp at zero on the way out,
since density cannot be negative.

Checkpoints are a small binary format: magic "SCSI", version u16, parameter
count u32, then per parameter name length u16, UTF-8 name, four u32 dims,
float32 little-endian data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, relu
from .blocks import (
    MixerDraw,
    ScaleBlockConfig,
    draw_alphas,
    scale_block_forward,
    scale_block_param_specs,
)
from .ops import ConvSpec, concat_channels, conv2d, max_pool2x2
from .rng import stream

__all__ = [
    "ConfigError",
    "CheckpointError",
    "NetworkConfig",
    "Model",
    "build_network",
    "forward",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
    "load_params_into",
]

HEAD_HIDDEN = 128
INIT_STD = 0.01
CHECKPOINT_MAGIC = b"SCSI"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """The architecture description is internally inconsistent."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or does not match the model."""


@dataclass(frozen=True)
class NetworkConfig:
    backbone: tuple[tuple[int, bool], ...] = ((32, True), (64, True), (128, False))
    in_channels: int = 1
    block_count: int = 6
    block: ScaleBlockConfig = field(default_factory=ScaleBlockConfig)
    dense: bool = True
    shared_mixer_draw: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.backbone:
            raise ConfigError("backbone needs at least one stage")
        if self.block_count < 1:
            raise ConfigError(f"block_count must be >= 1, got {self.block_count}")
        if self.block.out_channels != 2 * HEAD_HIDDEN:
            raise ConfigError(
                f"head expects {2 * HEAD_HIDDEN} input channels, "
                f"blocks produce {self.block.out_channels}"
            )

    @property
    def stride(self) -> int:
        return 2 ** sum(1 for _, pool in self.backbone if pool)

    @property
    def backbone_channels(self) -> int:
        return self.backbone[-1][0]

    def block_in_channels(self, index: int) -> int:
        if self.dense:
            return self.backbone_channels + index * self.block.out_channels
        return self.backbone_channels if index == 0 else self.block.out_channels

    @classmethod
    def toy(cls, **overrides) -> "NetworkConfig":
        """Desk-scale default: stride-4 three-stage backbone, 2 blocks, G=4."""
        base = dict(
            backbone=((16, True), (32, True), (64, False)),
            block_count=2,
            block=ScaleBlockConfig(groups=4),
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class Model:
    config: NetworkConfig
    params: dict[str, Tensor]
    phase: str = "eval"

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _conv_specs(cfg: NetworkConfig) -> dict[str, ConvSpec]:
    """Every convolution in the network, keyed by parameter-name prefix.

    Insertion order defines parameter order everywhere (init, checkpoints).
    """
    specs: dict[str, ConvSpec] = {}
    prev = cfg.in_channels
    for i, (channels, _pool) in enumerate(cfg.backbone):
        specs[f"backbone.{i}"] = ConvSpec(prev, channels, kernel_size=3)
        prev = channels
    for l in range(cfg.block_count):
        for name, spec in scale_block_param_specs(cfg.block, cfg.block_in_channels(l)).items():
            specs[f"block.{l}.{name}"] = spec
    specs["head.0"] = ConvSpec(cfg.block.out_channels, HEAD_HIDDEN, kernel_size=3)
    specs["head.1"] = ConvSpec(HEAD_HIDDEN, 1, kernel_size=3)
    return specs


def build_network(cfg: NetworkConfig, rng: np.random.Generator | None = None) -> Model:
    """Initialize all weights from N(0, 0.01^2) and all biases at zero."""
    if rng is None:
        rng = stream(cfg.seed, "init")
    params: dict[str, Tensor] = {}
    for prefix, spec in _conv_specs(cfg).items():
        params[f"{prefix}.weight"] = Tensor(rng.normal(0.0, INIT_STD, size=spec.weight_shape))
        params[f"{prefix}.bias"] = Tensor(np.zeros(spec.bias_shape))
    return Model(config=cfg, params=params)


def _block_params(model: Model, index: int) -> dict[str, Tensor]:
    prefix = f"block.{index}."
    return {name[len(prefix) :]: p for name, p in model.params.items() if name.startswith(prefix)}


def forward(
    model: Model,
    batch: Tensor | np.ndarray,
    phase: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Predict density maps of shape (n, 1, h / stride, w / stride).

    In the train phase one fresh MixerDraw per block is taken from ``rng``
    (a single shared draw if the config asks for it); evaluation is
    deterministic with every alpha at 0.5.
    """
    if phase not in ("train", "eval"):
        raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    cfg = model.config
    n, c, h, w = x.shape
    if c != cfg.in_channels:
        raise ShapeError(f"batch has {c} channels, network expects {cfg.in_channels}")
    if h % cfg.stride or w % cfg.stride:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by stride {cfg.stride}")

    if phase == "train" and cfg.shared_mixer_draw:
        shared = draw_alphas(rng, cfg.block, "train")
        draws: list[MixerDraw] = [shared] * cfg.block_count
    else:
        draws = [draw_alphas(rng, cfg.block, phase) for _ in range(cfg.block_count)]
    model.phase = phase

    params = model.params
    prev_c = cfg.in_channels
    for i, (channels, pool) in enumerate(cfg.backbone):
        spec = ConvSpec(prev_c, channels, kernel_size=3)
        x = relu(conv2d(x, params[f"backbone.{i}.weight"], params[f"backbone.{i}.bias"], spec))
        if pool:
            x = max_pool2x2(x)
        prev_c = channels

    feats = [x]
    for l in range(cfg.block_count):
        block_in = concat_channels(feats) if (cfg.dense and l > 0) else feats[-1]
        y = scale_block_forward(block_in, _block_params(model, l), cfg.block, draws[l])
        if cfg.dense:
            feats.append(y)
        else:
            feats = [y]

    out = relu(
        conv2d(
            feats[-1],
            params["head.0.weight"],
            params["head.0.bias"],
            ConvSpec(cfg.block.out_channels, HEAD_HIDDEN, kernel_size=3),
        )
    )
    out = conv2d(out, params["head.1.weight"], params["head.1.bias"], ConvSpec(HEAD_HIDDEN, 1, kernel_size=3))
    return relu(out)  # density is non-negative by definition


def param_count(model: Model) -> int:
    return sum(p.values.size for p in model.params.values())


def save_checkpoint(path, model: Model) -> None:
    """Write parameters as float32 in their build order."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(model.params)))
        for name, p in model.params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<4I", *p.shape))
            fh.write(np.ascontiguousarray(p.values, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint into float64 arrays, in file order."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 10
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        dims = struct.unpack_from("<4I", data, offset)
        offset += 16
        size = int(np.prod(dims))
        values = np.frombuffer(data, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        params[name] = values.astype(np.float64).reshape(dims)
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return params


def load_params_into(model: Model, path) -> Model:
    """Load a checkpoint whose names and shapes match the model exactly."""
    loaded = load_checkpoint(path)
    if set(loaded) != set(model.params):
        missing = sorted(set(model.params) - set(loaded))
        extra = sorted(set(loaded) - set(model.params))
        raise CheckpointError(
            f"checkpoint does not match architecture (missing={missing}, extra={extra})"
        )
    for name, values in loaded.items():
        if values.shape != model.params[name].shape:
            raise CheckpointError(
                f"parameter {name!r}: checkpoint shape {values.shape} != "
                f"model shape {model.params[name].shape}"
            )
        model.params[name].values = values
        model.params[name].zero_grad()
    return model
