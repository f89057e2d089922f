"""Counting metrics, report formats, sweeps, and transfer evaluation."""

import numpy as np
import pytest

from scalecount.blocks import ScaleBlockConfig
from scalecount.evaluation import (
    DEFAULT_AREA_RATIOS,
    EvalRecord,
    EvalReport,
    cross_eval,
    evaluate,
    predict_count,
    report_to_csv,
    scale_sweep,
    sweep_to_csv,
)
from scalecount.groundtruth import density_fixed
from scalecount.network import NetworkConfig, build_network
from scalecount.synth import CorpusItem, SceneParams, generate_corpus

TINY_NET = NetworkConfig(
    backbone=((8, True), (16, True)),
    block_count=1,
    block=ScaleBlockConfig(groups=3, group_width=8, out_channels=256),
)


@pytest.fixture(scope="module")
def eval_corpus():
    return generate_corpus(10, SceneParams(width=48, height=48, count_range=(3, 9)), seed=12)


@pytest.fixture(scope="module")
def model():
    m = build_network(TINY_NET, rng=np.random.default_rng(1))
    for p in m.params.values():
        p.values *= 25.0  # produce non-trivial counts
    return m


class TestPredictCount:
    def test_zero_head_weights_zero_count(self, eval_corpus):
        m = build_network(TINY_NET, rng=np.random.default_rng(2))
        m.params["head.1.weight"].values[:] = 0.0
        m.params["head.1.bias"].values[:] = 0.0
        assert predict_count(m, eval_corpus.items[0].image) == 0.0

    def test_repeat_calls_identical(self, model, eval_corpus):
        image = eval_corpus.items[0].image
        assert predict_count(model, image) == predict_count(model, image)

    def test_identity_stub_preserves_gt_count(self, rng):
        """Feeding a density map through an identity 'model' recovers the
        annotation count (ground-truth conservation oracle)."""
        corpus = generate_corpus(3, SceneParams(width=64, height=64, count_range=(5, 20)), seed=3)
        for item in corpus.items:
            dmap = density_fixed(item.annotation, sigma=3.0)
            assert abs(predict_count(lambda img: img, dmap) - item.annotation.count) < 1e-3

    def test_padding_to_stride(self, model, rng):
        # 45x43 pads to 48x44 with zeros; just needs to run and be finite
        count = predict_count(model, rng.uniform(size=(45, 43)))
        assert np.isfinite(count)


class TestEvaluate:
    def test_known_mae_mse(self):
        """Counts [10, 20] vs truth [12, 16]: MAE 3, MSE sqrt(10)."""
        records = [EvalRecord("a", 12.0, 10.0), EvalRecord("b", 16.0, 20.0)]
        from scalecount.evaluation import _aggregate

        mae, mse = _aggregate(records)
        assert mae == 3.0
        assert abs(mse - np.sqrt(10.0)) < 1e-12
        assert abs(mse - 3.1623) < 1e-4

    def test_perfect_predictor(self):
        """Items whose image IS their density map + identity predictor."""
        corpus = generate_corpus(4, SceneParams(width=40, height=40, count_range=(2, 9)), seed=8)
        items = [
            CorpusItem(
                image_id=it.image_id,
                image=density_fixed(it.annotation, sigma=2.0),
                annotation=it.annotation,
                split=it.split,
            )
            for it in corpus.items
        ]
        report = evaluate(lambda img: img, items)
        assert report.mae < 1e-3 and report.mse < 1e-3

    def test_constant_zero_on_equal_counts(self):
        items = []
        for i in range(2):
            ann_points = np.array([[float(j + 1), 5.0] for j in range(5)])
            from scalecount.groundtruth import Annotation

            items.append(
                CorpusItem(
                    image_id=f"img_{i}",
                    image=np.zeros((16, 16)),
                    annotation=Annotation(width=16, height=16, points=ann_points),
                    split="test",
                )
            )
        report = evaluate(lambda img: np.zeros_like(img), items)
        assert report.mae == 5.0 and report.mse == 5.0

    def test_missing_annotation_skipped_with_warning(self, eval_corpus, model):
        items = list(eval_corpus.items)
        items[0] = CorpusItem(
            image_id=items[0].image_id, image=items[0].image, annotation=None, split="test"
        )
        report = evaluate(model, items)
        assert len(report.records) == len(items) - 1
        assert any("missing annotation" in w for w in report.warnings)

    def test_records_sorted_by_image_id(self, model, eval_corpus):
        report = evaluate(model, list(reversed(eval_corpus.items)))
        ids = [r.image_id for r in report.records]
        assert ids == sorted(ids)

    def test_empty_split_rejected(self, model):
        with pytest.raises(ValueError):
            evaluate(model, [])

    def test_mse_at_least_mae_random(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 12))
            records = [
                EvalRecord(str(i), float(rng.uniform(0, 50)), float(rng.uniform(0, 50)))
                for i in range(n)
            ]
            from scalecount.evaluation import _aggregate

            mae, mse = _aggregate(records)
            assert mse >= mae >= 0.0


class TestReportCSV:
    def test_layout(self):
        report = EvalReport(
            records=[EvalRecord("x", 3.0, 4.5)], mae=1.5, mse=1.5, config={}, warnings=[]
        )
        text = report_to_csv(report)
        lines = text.splitlines()
        assert lines[0] == "image_id,true_count,pred_count"
        assert lines[1] == "x,3.0,4.5"
        assert lines[2] == "# MAE=1.5"
        assert lines[3] == "# MSE=1.5"


class TestScaleSweep:
    def test_ratio_one_bit_identical_to_evaluate(self, model, eval_corpus):
        plain = evaluate(model, eval_corpus.items)
        sweep = scale_sweep(model, eval_corpus.items, area_ratios=(1.0, 0.49))
        assert sweep[0].config["area_ratio"] == 1.0
        assert sweep[0].mae == plain.mae and sweep[0].mse == plain.mse
        for a, b in zip(sweep[0].records, plain.records):
            assert a == b

    def test_ratios_sorted_descending(self, model, eval_corpus):
        sweep = scale_sweep(model, eval_corpus.items, area_ratios=(0.25, 1.0, 0.49))
        assert [r.config["area_ratio"] for r in sweep] == [1.0, 0.49, 0.25]

    def test_default_ratios_span_paper_range(self):
        assert DEFAULT_AREA_RATIOS[0] == 1.0
        assert DEFAULT_AREA_RATIOS[-1] == 0.16
        assert list(DEFAULT_AREA_RATIOS) == sorted(DEFAULT_AREA_RATIOS, reverse=True)

    def test_tiny_images_skip_ratio_with_note(self, model):
        corpus = generate_corpus(2, SceneParams(width=24, height=24, count_range=(1, 3)), seed=5)
        sweep = scale_sweep(model, corpus.items, area_ratios=(1.0, 0.04))
        assert len(sweep) == 2
        assert sweep[1].warnings and "skipped" in sweep[1].warnings[0]
        assert np.isnan(sweep[1].mae)

    def test_sweep_csv(self, model, eval_corpus):
        sweep = scale_sweep(model, eval_corpus.items, area_ratios=(1.0, 0.49))
        lines = sweep_to_csv(sweep).splitlines()
        assert lines[0] == "area_ratio,mae,mse"
        assert lines[1].startswith("1.0,")


class TestCrossEval:
    def test_same_corpus_degenerate_case(self, model, eval_corpus):
        plain = evaluate(model, eval_corpus.items)
        crossed = cross_eval(model, eval_corpus.items, corpus_id="self")
        assert crossed.mae == plain.mae and crossed.mse == plain.mse
        assert crossed.config["corpus_id"] == "self"
        assert crossed.config["retrained"] is False

    def test_parameters_untouched(self, model, eval_corpus):
        before = {n: p.values.tobytes() for n, p in model.params.items()}
        cross_eval(model, eval_corpus.items, corpus_id="b")
        after = {n: p.values.tobytes() for n, p in model.params.items()}
        assert before == after

    def test_transfer_to_denser_corpus(self, model):
        dense = generate_corpus(
            4, SceneParams(width=48, height=48, count_range=(25, 40)), seed=6
        )
        report = cross_eval(model, dense.items, corpus_id="dense")
        assert np.isfinite(report.mae) and np.isfinite(report.mse)
