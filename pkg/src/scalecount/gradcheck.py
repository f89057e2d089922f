"""Finite-difference verification battery for every differentiable op.

Each entry compares taped gradients against central differences
(eps = 1e-5, float64) and reports the worst relative error
|analytic - numeric| / max(1, |numeric|).  Ops must come in below 1e-4;
the full network end to end below 1e-3.  Inputs are nudged away from ReLU
kinks so the finite differences stay two-sided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, grad_check, mul, relu, scale, sub, sum_all
from .blocks import MixerDraw, ScaleBlockConfig, scale_block_forward, scale_block_param_specs
from .network import NetworkConfig, build_network, forward
from .ops import ConvSpec, concat_channels, conv2d, convex_mix, max_pool2x2, slice_channels, sum_pool
from .rng import stream
from .training import loss_integrated

__all__ = ["BatteryResult", "run_battery", "OP_TOLERANCE", "NETWORK_TOLERANCE"]

OP_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3
EPS = 1e-5


@dataclass(frozen=True)
class BatteryResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _away_from_zero(values: np.ndarray, margin: float = 0.25) -> np.ndarray:
    return values + margin * np.sign(values)


def _conv_params(rng, spec: ConvSpec) -> tuple[Tensor, Tensor]:
    weight = Tensor(rng.normal(0.0, 0.3, size=spec.weight_shape))
    bias = Tensor(rng.normal(0.0, 0.1, size=spec.bias_shape))
    return weight, bias


def run_battery(seed: int = 7) -> list[BatteryResult]:
    rng = stream(seed, "init")
    results: list[BatteryResult] = []

    def check(name, fn, x, tol=OP_TOLERANCE, max_coords=None, kink_aware=False):
        err = grad_check(
            fn, x, eps=EPS, max_coords=max_coords, rng=stream(seed, "init", 99),
            kink_aware=kink_aware,
        )
        results.append(BatteryResult(name, err, tol))

    def rand(shape, scale=1.0):
        return rng.normal(0.0, scale, size=shape)

    x_small = Tensor(rand((2, 3, 5, 5)))
    other = Tensor(rand((2, 3, 5, 5)))
    check("add", lambda t: sum_all(add(t, other)), x_small)
    check("sub", lambda t: sum_all(sub(t, other)), x_small)
    check("mul", lambda t: sum_all(mul(t, other)), x_small)
    check("scale", lambda t: sum_all(scale(t, -1.7)), x_small)
    check("relu", lambda t: sum_all(relu(t)), Tensor(_away_from_zero(rand((2, 3, 6, 6)))))

    pool_w = Tensor(rand((1, 2, 4, 4)))
    check(
        "max_pool2x2",
        lambda t: sum_all(mul(max_pool2x2(t), pool_w)),
        Tensor(rand((1, 2, 8, 8), scale=3.0)),
    )

    spec_d3 = ConvSpec(8, 8, kernel_size=3, dilation=3)
    w_d3, b_d3 = _conv_params(rng, spec_d3)
    conv_input = Tensor(rand((1, 8, 12, 12)))
    check(
        "conv2d_dilated3_relu",
        lambda t: sum_all(relu(conv2d(t, w_d3, b_d3, spec_d3))),
        Tensor(rand((1, 8, 12, 12))),
    )
    check(
        "conv2d_dilated3_weight",
        lambda t: sum_all(relu(conv2d(conv_input, t, b_d3, spec_d3))),
        w_d3,
    )

    spec_g2 = ConvSpec(8, 8, kernel_size=3, groups=2)
    w_g2, b_g2 = _conv_params(rng, spec_g2)
    check(
        "conv2d_grouped2",
        lambda t: sum_all(conv2d(t, w_g2, b_g2, spec_g2)),
        Tensor(rand((2, 8, 6, 6))),
    )

    check("convex_mix", lambda t: sum_all(mul(convex_mix(t, other, 0.3), other)), x_small)

    cat_w = Tensor(rand((2, 4, 5, 5)))
    check(
        "concat_slice",
        lambda t: sum_all(mul(slice_channels(concat_channels([t, other]), 1, 5), cat_w)),
        x_small,
    )

    pool4_w = Tensor(rand((1, 2, 4, 4)))
    check("sum_pool", lambda t: sum_all(mul(sum_pool(t, 2), pool4_w)), Tensor(rand((1, 2, 8, 8))))

    block_cfg = ScaleBlockConfig(groups=4, group_width=8, out_channels=16, mixer_mode="stochastic")
    block_params: dict[str, Tensor] = {}
    for prefix, spec in scale_block_param_specs(block_cfg, 6).items():
        w, b = _conv_params(rng, spec)
        block_params[f"{prefix}.weight"] = w
        block_params[f"{prefix}.bias"] = b
    draw = MixerDraw(rng.uniform(0.0, 1.0, size=block_cfg.n_alphas))
    block_x = Tensor(rand((1, 6, 6, 6)))
    check(
        "scale_block_G4",
        lambda t: sum_all(scale_block_forward(t, block_params, block_cfg, draw)),
        Tensor(rand((1, 6, 6, 6))),
    )
    for pname in ("entry.weight", "pyramid.2.weight", "exit.weight", "residual.weight"):

        def fn(t, _pname=pname):
            swapped = dict(block_params)
            swapped[_pname] = t
            return sum_all(scale_block_forward(block_x, swapped, block_cfg, draw))

        check(f"scale_block_G4[{pname}]", fn, block_params[pname], max_coords=64)

    net_cfg = NetworkConfig(
        backbone=((8, True),),
        block_count=1,
        block=ScaleBlockConfig(groups=3, group_width=16, out_channels=256),
    )
    model = build_network(net_cfg, rng=stream(seed, "init", 1))
    for p in model.params.values():
        p.values *= 6.0  # livelier activations than the 0.01-std init
    data_rng = stream(seed, "sampling")
    images = data_rng.uniform(0.0, 1.0, size=(2, 1, 16, 16))
    targets = data_rng.uniform(0.0, 0.2, size=(2, 1, 8, 8))

    def net_loss_wrt_input(t):
        return loss_integrated(forward(model, t, phase="eval"), targets)

    # The end-to-end checks run kink-aware: a probe step can cross a ReLU or
    # pooling kink somewhere in the network, where central differences do not
    # estimate any derivative (see grad_check).
    check(
        "network_input", net_loss_wrt_input, Tensor(images),
        tol=NETWORK_TOLERANCE, max_coords=96, kink_aware=True,
    )
    for pname in (
        "backbone.0.weight",
        "block.0.entry.weight",
        "block.0.pyramid.1.weight",
        "head.0.weight",
        "head.1.bias",
    ):

        def fn(t, _pname=pname):
            saved = model.params[_pname]
            model.params[_pname] = t
            try:
                return loss_integrated(forward(model, images, phase="eval"), targets)
            finally:
                model.params[_pname] = saved

        check(
            f"network[{pname}]", fn, model.params[pname],
            tol=NETWORK_TOLERANCE, max_coords=48, kink_aware=True,
        )
    return results
