"""Network assembly, shapes, parameter accounting, checkpoints."""

import numpy as np
import pytest

from scalecount.blocks import ScaleBlockConfig
from scalecount.network import (
    CheckpointError,
    ConfigError,
    Model,
    NetworkConfig,
    build_network,
    forward,
    load_checkpoint,
    load_params_into,
    param_count,
    save_checkpoint,
)
from scalecount.autodiff import ShapeError
from scalecount.rng import stream

TINY = dict(backbone=((8, True), (16, True)), block_count=2,
            block=ScaleBlockConfig(groups=3, group_width=8, out_channels=256))


class TestConfig:
    def test_stride_counts_pools(self):
        assert NetworkConfig.toy().stride == 4
        assert NetworkConfig(backbone=((8, False),)).stride == 1

    def test_head_width_contract(self):
        with pytest.raises(ConfigError):
            NetworkConfig(block=ScaleBlockConfig(out_channels=128))

    def test_dense_channel_arithmetic(self):
        cfg = NetworkConfig(backbone=((32, True), (64, True), (128, False)))
        assert cfg.block_in_channels(0) == 128
        assert cfg.block_in_channels(3) == 128 + 3 * 256

    def test_non_dense_channels(self):
        cfg = NetworkConfig(dense=False)
        assert cfg.block_in_channels(0) == 128
        assert cfg.block_in_channels(1) == 256


class TestBuild:
    def test_same_seed_bit_identical(self):
        cfg = NetworkConfig(**TINY, seed=5)
        m1 = build_network(cfg)
        m2 = build_network(cfg)
        assert set(m1.params) == set(m2.params)
        for name in m1.params:
            assert m1.params[name].values.tobytes() == m2.params[name].values.tobytes()

    def test_init_distribution(self):
        cfg = NetworkConfig(**TINY, seed=1)
        model = build_network(cfg)
        weights = np.concatenate(
            [p.values.ravel() for n, p in model.params.items() if n.endswith("weight")]
        )
        assert abs(weights.std() - 0.01) < 0.002
        assert abs(weights.mean()) < 0.001
        for name, p in model.params.items():
            if name.endswith("bias"):
                np.testing.assert_array_equal(p.values, 0.0)

    def test_g1_builds_no_intra_variant(self):
        cfg = NetworkConfig(
            backbone=((8, True),), block_count=1, block=ScaleBlockConfig(groups=1)
        )
        model = build_network(cfg)
        pyramid = [n for n in model.params if "pyramid" in n and n.endswith("weight")]
        assert pyramid == ["block.0.pyramid.1.weight"]

    def test_conv_1x1_param_count(self):
        """64 -> 64 with bias: 64 * 64 + 64 = 4160."""
        cfg = NetworkConfig(backbone=((8, True),), block_count=1)
        model = build_network(cfg)
        w = 64 * 64 + 64
        assert w == 4160
        pyramid_w = model.params["block.0.pyramid.1.weight"].values.size
        assert pyramid_w == 64 * 64 * 9


class TestParamCount:
    @pytest.mark.parametrize("g_small,g_large", [(4, 6), (6, 8), (1, 2)])
    def test_monotone_in_groups(self, g_small, g_large):
        def count(groups):
            cfg = NetworkConfig.toy(block=ScaleBlockConfig(groups=groups))
            return param_count(build_network(cfg))

        assert count(g_large) > count(g_small)

    def test_invariant_to_mixer_mode(self):
        counts = []
        for mode in ("stochastic", "fixed", "disabled"):
            cfg = NetworkConfig.toy(block=ScaleBlockConfig(groups=4, mixer_mode=mode))
            counts.append(param_count(build_network(cfg)))
        assert counts[0] == counts[1] == counts[2]

    def test_exact_sum(self):
        model = build_network(NetworkConfig(**TINY))
        assert param_count(model) == sum(p.values.size for p in model.params.values())


class TestForward:
    def test_output_shape_stride4(self):
        model = build_network(NetworkConfig.toy(seed=3))
        out = forward(model, np.zeros((4, 1, 48, 48)), phase="eval")
        assert out.shape == (4, 1, 12, 12)

    def test_indivisible_dims_rejected(self):
        model = build_network(NetworkConfig.toy())
        with pytest.raises(ShapeError):
            forward(model, np.zeros((1, 1, 50, 50)), phase="eval")

    def test_eval_deterministic(self, rng):
        model = build_network(NetworkConfig.toy(seed=2))
        x = rng.uniform(size=(2, 1, 24, 24))
        out1 = forward(model, x, phase="eval")
        out2 = forward(model, x, phase="eval")
        assert out1.values.tobytes() == out2.values.tobytes()

    def test_output_nonnegative(self, rng):
        model = build_network(NetworkConfig.toy(seed=4))
        for p in model.params.values():
            p.values *= 20.0  # crank the scale so clamping actually matters
        out = forward(model, rng.uniform(size=(1, 1, 32, 32)), phase="eval")
        assert out.values.min() >= 0.0

    def test_train_phase_needs_rng(self):
        model = build_network(NetworkConfig.toy())
        with pytest.raises(ValueError):
            forward(model, np.zeros((1, 1, 16, 16)), phase="train", rng=None)

    def test_train_draws_consumed_per_block(self, rng):
        """Two train forwards with one rng stream differ (fresh draws)."""
        model = build_network(NetworkConfig.toy(seed=6))
        for p in model.params.values():
            p.values *= 30.0
        x = rng.uniform(size=(1, 1, 24, 24))
        mix = stream(0, "mixer")
        out1 = forward(model, x, phase="train", rng=mix)
        out2 = forward(model, x, phase="train", rng=mix)
        assert out1.values.tobytes() != out2.values.tobytes()

    def test_shared_draw_option(self, rng):
        cfg = NetworkConfig.toy(shared_mixer_draw=True, seed=6)
        model = build_network(cfg)
        x = rng.uniform(size=(1, 1, 16, 16))
        out = forward(model, x, phase="train", rng=stream(1, "mixer"))
        assert out.shape == (1, 1, 4, 4)

    @pytest.mark.parametrize(
        "variant",
        [
            dict(),
            dict(dense=False),
            dict(block=ScaleBlockConfig(groups=1)),
            dict(block=ScaleBlockConfig(groups=4, mixer_mode="disabled")),
            dict(block=ScaleBlockConfig(groups=4, mixer_mode="fixed", fixed_alpha=1.0)),
        ],
    )
    def test_ablation_variants_runnable(self, rng, variant):
        model = build_network(NetworkConfig.toy(**variant, seed=8))
        out = forward(model, rng.uniform(size=(1, 1, 16, 16)), phase="train", rng=stream(0, "mixer"))
        assert out.shape == (1, 1, 4, 4)
        assert np.all(np.isfinite(out.values))


class TestCheckpoint:
    def test_roundtrip_value_exact_at_f32(self, tmp_path):
        model = build_network(NetworkConfig(**TINY, seed=9))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(model.params)
        for name, values in loaded.items():
            expected = model.params[name].values.astype(np.float32).astype(np.float64)
            np.testing.assert_array_equal(values, expected)

    def test_header(self, tmp_path):
        model = build_network(NetworkConfig(backbone=((8, True),), block_count=1))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        raw = path.read_bytes()
        assert raw[:4] == b"SCSI"
        assert int.from_bytes(raw[4:6], "little") == 1
        assert int.from_bytes(raw[6:10], "little") == len(model.params)

    def test_load_into_model(self, tmp_path):
        cfg = NetworkConfig(**TINY, seed=10)
        m1 = build_network(cfg)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, m1)
        m2 = build_network(NetworkConfig(**TINY, seed=99))
        load_params_into(m2, path)
        for name in m1.params:
            np.testing.assert_array_equal(
                m2.params[name].values,
                m1.params[name].values.astype(np.float32).astype(np.float64),
            )

    def test_architecture_mismatch_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, build_network(NetworkConfig(**TINY)))
        other = build_network(NetworkConfig.toy())
        with pytest.raises(CheckpointError):
            load_params_into(other, path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_save_is_deterministic(self, tmp_path):
        cfg = NetworkConfig(**TINY, seed=11)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, build_network(cfg))
        save_checkpoint(p2, build_network(cfg))
        assert p1.read_bytes() == p2.read_bytes()
