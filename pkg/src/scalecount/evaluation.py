"""Whole-image counting metrics, resolution sweeps, and transfer evaluation.

The predicted count of an image is the integral (sum) of the predicted
density map.  MAE is the mean absolute count error.  MSE here follows the
crowd-counting convention: the root of the mean squared count error, so it
is an RMS value and always >= MAE.  True counts come from annotation point
counts, not density-map sums, which keeps discretization noise out of the
metric.

Report CSV: header ``image_id,true_count,pred_count``, one row per image,
then footer lines ``# MAE=<value>`` and ``# MSE=<value>``.  Sweep CSV:
``area_ratio,mae,mse`` with ratios in descending order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Model, forward
from .ops import bilinear_resize
from .synth import CorpusItem

__all__ = [
    "EvalRecord",
    "EvalReport",
    "predict_density",
    "predict_count",
    "evaluate",
    "scale_sweep",
    "cross_eval",
    "report_to_csv",
    "sweep_to_csv",
    "DEFAULT_AREA_RATIOS",
]

# Area ratios from full resolution down to 16% (0.4 linear scale per side).
DEFAULT_AREA_RATIOS = (1.00, 0.81, 0.64, 0.49, 0.36, 0.25, 0.16)


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    true_count: float
    pred_count: float


@dataclass
class EvalReport:
    records: list[EvalRecord]
    mae: float
    mse: float
    config: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _pad_to_stride(image: np.ndarray, stride: int) -> np.ndarray:
    h, w = image.shape
    ph = (-h) % stride
    pw = (-w) % stride
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw)))
    return image


def predict_density(model: Model, image: np.ndarray) -> np.ndarray:
    """Eval-phase density map for one 2-D image, zero-padded to the stride."""
    padded = _pad_to_stride(np.asarray(image, dtype=np.float64), model.config.stride)
    out = forward(model, padded[None, None], phase="eval")
    return out.values[0, 0]


def predict_count(model, image: np.ndarray) -> float:
    """Sum of the predicted density map.

    ``model`` is either a Model or any callable mapping a 2-D image to a 2-D
    density map, so count conservation can be checked against stubs.
    """
    if isinstance(model, Model):
        return float(predict_density(model, image).sum())
    return float(np.asarray(model(image)).sum())


def _aggregate(records: list[EvalRecord]) -> tuple[float, float]:
    if not records:
        return float("nan"), float("nan")
    errors = np.array([r.pred_count - r.true_count for r in records])
    return float(np.abs(errors).mean()), float(np.sqrt((errors ** 2).mean()))


def evaluate(model, items: list[CorpusItem], config: dict | None = None) -> EvalReport:
    """Count every annotated image in the split; skip unannotated ones."""
    if not items:
        raise ValueError("evaluate needs a nonempty split")
    records = []
    warnings = []
    for item in sorted(items, key=lambda it: it.image_id):
        if item.annotation is None:
            warnings.append(f"{item.image_id}: missing annotation, skipped")
            continue
        records.append(
            EvalRecord(
                image_id=item.image_id,
                true_count=float(item.annotation.count),
                pred_count=predict_count(model, item.image),
            )
        )
    mae, mse = _aggregate(records)
    return EvalReport(records=records, mae=mae, mse=mse, config=dict(config or {}), warnings=warnings)


def scale_sweep(
    model,
    items: list[CorpusItem],
    area_ratios=DEFAULT_AREA_RATIOS,
    config: dict | None = None,
) -> list[EvalReport]:
    """Re-evaluate after bilinear downsampling by each area ratio.

    The linear scale per side is sqrt(ratio); ratio 1.0 bypasses resampling
    entirely so its report is bit-identical to a plain evaluation.  Ratios
    whose resize would drop below the minimum size are skipped with a note.
    """
    ratios = sorted(set(float(r) for r in area_ratios), reverse=True)
    if any(not 0.0 < r <= 1.0 for r in ratios):
        raise ValueError(f"area ratios must lie in (0, 1], got {area_ratios}")
    reports = []
    for ratio in ratios:
        base = dict(config or {})
        base["area_ratio"] = ratio
        if ratio == 1.0:
            reports.append(evaluate(model, items, config=base))
            continue
        linear = float(np.sqrt(ratio))
        resized = []
        try:
            for item in items:
                if item.annotation is None:
                    resized.append(item)
                    continue
                resized.append(
                    CorpusItem(
                        image_id=item.image_id,
                        image=bilinear_resize(item.image, linear),
                        annotation=item.annotation,
                        split=item.split,
                    )
                )
        except ValueError as exc:
            note = EvalReport(
                records=[], mae=float("nan"), mse=float("nan"), config=base,
                warnings=[f"area ratio {ratio} skipped: {exc}"],
            )
            reports.append(note)
            continue
        reports.append(evaluate(model, resized, config=base))
    return reports


def cross_eval(model: Model, items: list[CorpusItem], corpus_id: str = "") -> EvalReport:
    """Evaluate on a foreign corpus without touching the parameters.

    Raises if any parameter changed during evaluation, which enforces the
    no-retraining contract.
    """
    before = {name: p.values.tobytes() for name, p in model.params.items()}
    report = evaluate(model, items, config={"corpus_id": corpus_id, "retrained": False})
    after = {name: p.values.tobytes() for name, p in model.params.items()}
    if before != after:
        raise RuntimeError("cross_eval mutated model parameters")
    return report


def report_to_csv(report: EvalReport) -> str:
    lines = ["image_id,true_count,pred_count"]
    for r in report.records:
        lines.append(f"{r.image_id},{r.true_count!r},{r.pred_count!r}")
    lines.append(f"# MAE={report.mae!r}")
    lines.append(f"# MSE={report.mse!r}")
    return "\n".join(lines) + "\n"


def sweep_to_csv(reports: list[EvalReport]) -> str:
    lines = ["area_ratio,mae,mse"]
    for rep in reports:
        lines.append(f"{rep.config.get('area_ratio')!r},{rep.mae!r},{rep.mse!r}")
    return "\n".join(lines) + "\n"
