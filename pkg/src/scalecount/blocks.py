"""Grouped dilated scale pyramid with stochastic convex mixing.

One block: a 1x1 entry projection widens the input to ``groups * group_width``
channels, which are split into equal groups.  Group 0 passes through untouched
(it keeps the high-frequency content); group i goes through a 3x3 convolution
with dilation rate i and a ReLU, so each group sees a different receptive
field.  The mixer then blends neighbouring scales recursively,

    m[0] = d[0],  m[1] = d[1],
    m[i] = a[i-1] * m[i-1] + (1 - a[i-1]) * d[i]   for i >= 2,

with coefficients a drawn fresh from U(0, 1) each training iteration and
pinned at their expectation 0.5 for evaluation.  The mixed groups are
concatenated, a 1x1 exit projection brings the width to ``out_channels``, and
a residual connection from the block input (1x1-projected when widths differ)
is added before the final ReLU.

With a single group the block degenerates to a plain
1x1 -> 3x3 -> 1x1 bottleneck: no split, no passthrough, no mixing.  That is
the "no intralayer pyramid" ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, relu
from .ops import ConvSpec, concat_channels, conv2d, convex_mix, slice_channels

__all__ = [
    "ScaleBlockConfig",
    "MixerDraw",
    "draw_alphas",
    "mix_scales",
    "mixer_expansion_coeffs",
    "pyramid_rates",
    "scale_block_param_specs",
    "pyramid_outputs",
    "scale_block_forward",
]

MIXER_MODES = ("stochastic", "fixed", "disabled")


@dataclass(frozen=True)
class ScaleBlockConfig:
    groups: int = 6
    group_width: int = 64
    out_channels: int = 256
    mixer_mode: str = "stochastic"
    fixed_alpha: float = 1.0  # used only when mixer_mode == "fixed"
    residual: bool = True

    def __post_init__(self) -> None:
        if self.groups < 1:
            raise ValueError(f"groups must be >= 1, got {self.groups}")
        if self.group_width < 1 or self.out_channels < 1:
            raise ValueError("group_width and out_channels must be positive")
        if self.mixer_mode not in MIXER_MODES:
            raise ValueError(f"mixer_mode must be one of {MIXER_MODES}, got {self.mixer_mode!r}")
        if not 0.0 <= self.fixed_alpha <= 1.0:
            raise ValueError(f"fixed_alpha must be in [0, 1], got {self.fixed_alpha}")

    @property
    def width(self) -> int:
        return self.groups * self.group_width

    @property
    def n_alphas(self) -> int:
        return max(self.groups - 2, 0)


@dataclass(frozen=True, eq=False)
class MixerDraw:
    """The mixing coefficients for one block in one iteration."""

    alphas: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.alphas, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"alphas must be a 1-D vector, got shape {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("alphas must lie in [0, 1]")
        object.__setattr__(self, "alphas", arr)

    def __len__(self) -> int:
        return self.alphas.size


def draw_alphas(
    rng: np.random.Generator | None, cfg: ScaleBlockConfig, phase: str
) -> MixerDraw:
    """Fresh uniforms for stochastic training; the constant vector otherwise.

    Evaluation always uses 0.5 (the expectation of U(0, 1)); fixed mode uses
    the configured constant in both phases.
    """
    if phase not in ("train", "eval"):
        raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")
    n = cfg.n_alphas
    if cfg.mixer_mode == "fixed":
        return MixerDraw(np.full(n, cfg.fixed_alpha))
    if cfg.mixer_mode == "stochastic" and phase == "train":
        if rng is None:
            raise ValueError("stochastic training draws need an rng")
        return MixerDraw(rng.uniform(0.0, 1.0, size=n))
    return MixerDraw(np.full(n, 0.5))


def mix_scales(d: list[Tensor], draw: MixerDraw) -> list[Tensor]:
    """Apply the recursive convex blend to a list of same-shape tensors."""
    if len(d) < 2:
        return list(d)
    if len(draw) != len(d) - 2:
        raise ValueError(f"draw has {len(draw)} alphas, need {len(d) - 2} for {len(d)} groups")
    mixed = [d[0], d[1]]
    for i in range(2, len(d)):
        mixed.append(convex_mix(mixed[i - 1], d[i], float(draw.alphas[i - 2])))
    return mixed


def mixer_expansion_coeffs(draw: MixerDraw, groups: int) -> np.ndarray:
    """Closed-form expansion of the mixer: matrix C with m[i] = sum_j C[i, j] d[j].

    Every row is a convex combination (non-negative, sums to 1), and rows
    i >= 1 place no weight on d[0].
    """
    if groups < 1:
        raise ValueError(f"groups must be >= 1, got {groups}")
    if len(draw) != max(groups - 2, 0):
        raise ValueError(f"draw has {len(draw)} alphas, need {max(groups - 2, 0)}")
    coeffs = np.zeros((groups, groups), dtype=np.float64)
    coeffs[0, 0] = 1.0
    if groups > 1:
        coeffs[1, 1] = 1.0
    for i in range(2, groups):
        a = float(draw.alphas[i - 2])
        coeffs[i] = a * coeffs[i - 1]
        coeffs[i, i] += 1.0 - a
    return coeffs


def pyramid_rates(groups: int) -> list[int]:
    """Dilation rates of the grouped convolutions.

    Groups 1..G-1 use rates 1..G-1 (group 0 is the passthrough).  The G=1
    degenerate block keeps a single rate-1 convolution instead.
    """
    if groups < 1:
        raise ValueError(f"groups must be >= 1, got {groups}")
    if groups == 1:
        return [1]
    return list(range(1, groups))


def scale_block_param_specs(cfg: ScaleBlockConfig, in_channels: int) -> dict[str, ConvSpec]:
    """Convolution specs of a block, keyed by parameter-name prefix."""
    specs: dict[str, ConvSpec] = {
        "entry": ConvSpec(in_channels, cfg.width, kernel_size=1)
    }
    for rate in pyramid_rates(cfg.groups):
        specs[f"pyramid.{rate}"] = ConvSpec(
            cfg.group_width, cfg.group_width, kernel_size=3, dilation=rate
        )
    specs["exit"] = ConvSpec(cfg.width, cfg.out_channels, kernel_size=1)
    if cfg.residual and in_channels != cfg.out_channels:
        specs["residual"] = ConvSpec(in_channels, cfg.out_channels, kernel_size=1)
    return specs


def _conv(x: Tensor, params: dict[str, Tensor], prefix: str, spec: ConvSpec) -> Tensor:
    return conv2d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], spec)


def pyramid_outputs(h: Tensor, params: dict[str, Tensor], cfg: ScaleBlockConfig) -> list[Tensor]:
    """Split the entry projection into groups and run the dilated pyramid."""
    gw = cfg.group_width
    if cfg.groups == 1:
        spec = ConvSpec(gw, gw, kernel_size=3, dilation=1)
        return [relu(_conv(h, params, "pyramid.1", spec))]
    parts = [slice_channels(h, i * gw, (i + 1) * gw) for i in range(cfg.groups)]
    outs = [parts[0]]
    for rate in pyramid_rates(cfg.groups):
        spec = ConvSpec(gw, gw, kernel_size=3, dilation=rate)
        outs.append(relu(_conv(parts[rate], params, f"pyramid.{rate}", spec)))
    return outs


def scale_block_forward(
    x: Tensor,
    params: dict[str, Tensor],
    cfg: ScaleBlockConfig,
    draw: MixerDraw | None,
) -> Tensor:
    """Full block: entry 1x1, pyramid, mixer, exit 1x1, residual, ReLU.

    The forward is pure given (x, params, draw); the block never touches an
    rng itself, so replaying the same draw reproduces the same output.
    """
    in_channels = x.shape[1]
    h = _conv(x, params, "entry", ConvSpec(in_channels, cfg.width, kernel_size=1))
    d = pyramid_outputs(h, params, cfg)
    if cfg.mixer_mode == "disabled" or len(d) < 2:
        mixed = d
    else:
        if draw is None:
            raise ValueError("a MixerDraw is required when the mixer is enabled")
        mixed = mix_scales(d, draw)
    y = _conv(
        concat_channels(mixed), params, "exit", ConvSpec(cfg.width, cfg.out_channels, kernel_size=1)
    )
    if cfg.residual:
        if in_channels == cfg.out_channels:
            res = x
        else:
            res = _conv(x, params, "residual", ConvSpec(in_channels, cfg.out_channels, kernel_size=1))
        y = add(y, res)
    return relu(y)
