"""Losses, Adam, and the patch-based training loop.

Two losses over a batch of N predicted patches:

  integrated   sum_i ||Y_i - GT_i||^2          (no averaging)
  averaged     (1 / 2N) * sum_i ||Y_i - GT_i||^2

They differ only by the constant 2N, but the integrated form keeps the raw
per-patch density magnitudes in the objective instead of washing them out,
which is the point of training on randomly cropped patch batches.

The loop per iteration: sample a patch batch, sum-pool the ground truth to
the network's output stride (count-preserving), draw fresh mixer
coefficients, forward in train phase, backward, Adam step.  Everything is
keyed off one seed through named rng streams, so runs are bit-reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ShapeError, Tape, Tensor, mul, scale, sub, sum_all
from .network import Model, NetworkConfig, build_network, forward, save_checkpoint
from .ops import sum_pool_grid
from .rng import stream
from .synth import Corpus, sample_patch_batch

__all__ = [
    "TrainConfig",
    "AdamState",
    "OptimizerError",
    "TrainingAborted",
    "loss_integrated",
    "loss_averaged",
    "adam_step",
    "train",
    "TrainResult",
    "write_metrics_csv",
]


class OptimizerError(RuntimeError):
    """A gradient buffer went non-finite."""


class TrainingAborted(RuntimeError):
    """Training stopped early; the last written checkpoint is retained."""

    def __init__(self, message: str, last_checkpoint: Path | None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    patch_size: int = 176
    iterations: int = 2000
    loss_mode: str = "integrated"  # or "averaged"
    flip: bool = True
    seed: int = 0
    checkpoint_every: int = 500
    # Ground-truth generation for the corpus (fixed sigma follows the
    # usual crowd-counting setting; adaptive uses beta and k).
    gt_mode: str = "fixed"
    gt_sigma: float = 15.0
    gt_beta: float = 0.3
    gt_k: int = 3

    def __post_init__(self) -> None:
        if self.loss_mode not in ("integrated", "averaged"):
            raise ValueError(f"loss_mode must be integrated|averaged, got {self.loss_mode!r}")
        if self.batch_size < 1 or self.patch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size and patch_size must be positive, iterations >= 0")

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        base = dict(batch_size=4, patch_size=48, gt_sigma=4.0)
        base.update(overrides)
        return cls(**base)


def _as_tensor(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=np.float64))


def loss_integrated(preds: Tensor, gts) -> Tensor:
    """Sum of squared errors over all patches and pixels."""
    target = _as_tensor(gts)
    if target.shape != preds.shape:
        raise ShapeError(f"loss: predictions {preds.shape} vs ground truth {target.shape}")
    residual = sub(preds, target)
    return sum_all(mul(residual, residual))


def loss_averaged(preds: Tensor, gts) -> Tensor:
    """Integrated loss divided by 2N."""
    n = preds.shape[0]
    return scale(loss_integrated(preds, gts), 1.0 / (2.0 * n))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """Standard bias-corrected Adam update, in place.

    Parameters with no gradient are left untouched (their moments still
    decay); any non-finite gradient aborts with the parameter's name.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        denom = v / bc2
        np.sqrt(denom, out=denom)
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= lr / bc1
        p.values -= denom


@dataclass
class MetricsRow:
    iteration: int
    loss: float | None
    val_mae: float | None
    val_mse: float | None


@dataclass
class TrainResult:
    model: Model
    metrics: list[MetricsRow]
    final_checkpoint: Path | None


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "loss", "val_mae", "val_mse"])
        for row in rows:
            writer.writerow(
                [
                    row.iteration,
                    "" if row.loss is None else repr(row.loss),
                    "" if row.val_mae is None else repr(row.val_mae),
                    "" if row.val_mse is None else repr(row.val_mse),
                ]
            )


def _validate(model: Model, val_items) -> tuple[float | None, float | None]:
    if not val_items:
        return None, None
    from .evaluation import evaluate  # local import; evaluation depends on network only

    report = evaluate(model, val_items)
    return report.mae, report.mse


def train(
    cfg: TrainConfig,
    net_cfg: NetworkConfig,
    corpus: Corpus,
    out_dir=None,
) -> TrainResult:
    """Train a freshly initialized network on the corpus train split.

    Logs validation MAE/MSE (whole val images, eval phase) at iteration 0 and
    every ``checkpoint_every`` iterations; writes ``metrics.csv``,
    intermediate checkpoints, and ``ckpt_final.ckpt`` when ``out_dir`` is
    given.  A non-finite loss aborts, keeping the last checkpoint.
    """
    stride = net_cfg.stride
    if cfg.patch_size % stride:
        raise ValueError(f"patch_size {cfg.patch_size} not divisible by stride {stride}")
    train_items = corpus.split("train")
    if not train_items:
        raise ValueError("corpus has no train split")
    corpus.ensure_density(cfg.gt_mode, sigma=cfg.gt_sigma, beta=cfg.gt_beta, k=cfg.gt_k)
    val_items = corpus.split("val")

    init_rng = stream(cfg.seed, "init")
    sample_rng = stream(cfg.seed, "sampling")
    mixer_rng = stream(cfg.seed, "mixer")
    model = build_network(net_cfg, rng=init_rng)
    adam = AdamState()

    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = None
    last_checkpoint: Path | None = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)

    rows: list[MetricsRow] = []
    val_mae, val_mse = _validate(model, val_items)
    rows.append(MetricsRow(0, None, val_mae, val_mse))

    def checkpoint(tag: str) -> None:
        nonlocal last_checkpoint
        if ckpt_dir is not None:
            path = ckpt_dir / f"ckpt_{tag}.ckpt"
            save_checkpoint(path, model)
            last_checkpoint = path

    checkpoint("000000")
    for it in range(1, cfg.iterations + 1):
        batch = sample_patch_batch(
            train_items, cfg.batch_size, cfg.patch_size, sample_rng, flip=cfg.flip
        )
        gt_small = sum_pool_grid(batch.gts, stride)
        with Tape() as tape:
            preds = forward(model, batch.images, phase="train", rng=mixer_rng)
            loss = (
                loss_integrated(preds, gt_small)
                if cfg.loss_mode == "integrated"
                else loss_averaged(preds, gt_small)
            )
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                if out is not None:
                    write_metrics_csv(out / "metrics.csv", rows)
                raise TrainingAborted(
                    f"non-finite loss {loss_value} at iteration {it}", last_checkpoint
                )
            tape.backward(loss)
        adam_step(model.params, adam, cfg.lr)
        model.zero_grads()

        is_milestone = cfg.checkpoint_every > 0 and it % cfg.checkpoint_every == 0
        if is_milestone or it == cfg.iterations:
            val_mae, val_mse = _validate(model, val_items)
            rows.append(MetricsRow(it, loss_value, val_mae, val_mse))
            checkpoint(f"{it:06d}")
        else:
            rows.append(MetricsRow(it, loss_value, None, None))

    final = None
    if out is not None:
        final = out / "ckpt_final.ckpt"
        save_checkpoint(final, model)
        write_metrics_csv(out / "metrics.csv", rows)
    return TrainResult(model=model, metrics=rows, final_checkpoint=final)
