import math

import numpy as np
import pytest

from spine3d import tensor_core as tc
from spine3d.euformer import (
    CmhaParams,
    EtbParams,
    EUFormerConfig,
    LeffParams,
    TrainConfig,
    TrainingPair,
    cmha_forward,
    discriminator_forward,
    downsample,
    etb_forward,
    flops_attention,
    generator_forward,
    init_discriminator_params,
    init_generator_params,
    leff_forward,
    loss_discriminator,
    loss_generator,
    loss_mse,
    loss_total,
    patch_grid,
    upsample,
)
from spine3d.euformer.checkpoint import Checkpoint, CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from spine3d.euformer.model import count_params
from spine3d.euformer.train import HISTORY_COLUMNS, Adam, augment, lr_at_epoch, train, write_history_csv
from spine3d.tensor_core import ShapeError, Tensor

from oracles import channel_attention_loops, conv_out, layer_norm_loops, leff_loops, unshuffle_loops


def _arrays(named):
    return {k: t.data for k, t in named.items()}


class TestCmha:
    def test_zero_value_branch_returns_input(self):
        rng = np.random.default_rng(0)
        p = CmhaParams.init(8, 2, rng)
        p.v_point = Tensor(np.zeros_like(p.v_point.data))
        x = rng.standard_normal((5, 3, 8))
        np.testing.assert_array_equal(cmha_forward(Tensor(x), p).data, x)

    def test_single_channel_is_value_plus_input(self):
        rng = np.random.default_rng(1)
        p = CmhaParams.init(1, 1, rng)
        x = rng.standard_normal((4, 4, 1))
        v = tc.conv2d(tc.conv2d(Tensor(x), p.v_point), p.v_depth, pad=1, groups=1).data
        np.testing.assert_allclose(cmha_forward(Tensor(x), p).data, v + x, rtol=1e-14)

    def test_uniform_attention_gives_channel_mean(self):
        rng = np.random.default_rng(2)
        c = 4
        p = CmhaParams.init(c, 1, rng)
        for b in "qk":
            setattr(p, f"{b}_point", Tensor(np.zeros((1, 1, c, c))))
        p.v_point = Tensor(np.eye(c).reshape(1, 1, c, c))
        delta = np.zeros((3, 3, 1, c))
        delta[1, 1] = 1.0
        p.v_depth = Tensor(delta)
        x = rng.standard_normal((2, 2, c))
        maps = []
        out = cmha_forward(Tensor(x), p, inspect=maps.append).data
        np.testing.assert_allclose(maps[0], np.full((1, 1, c, c), 1.0 / c), rtol=1e-14)
        np.testing.assert_allclose(out, x.mean(axis=-1, keepdims=True) + x, rtol=1e-13)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        p = CmhaParams.init(6, 3, rng)
        p.alpha = Tensor([0.7, 1.3, 2.0])
        x = rng.standard_normal((3, 2, 6))
        maps = []
        out = cmha_forward(Tensor(x), p, inspect=maps.append).data
        ref, ref_maps = channel_attention_loops(x, *(getattr(p, n).data for n in
                                                      ("q_point", "q_depth", "k_point", "k_depth", "v_point", "v_depth")),
                                                p.alpha.data, 3)
        np.testing.assert_allclose(out, ref, rtol=1e-11, atol=1e-12)
        np.testing.assert_allclose(maps[0][0], np.stack(ref_maps), rtol=1e-11, atol=1e-13)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        p = CmhaParams.init(8, 4, rng)
        maps = []
        cmha_forward(Tensor(rng.standard_normal((2, 6, 4, 8)) * 5), p, inspect=maps.append)
        assert maps[0].shape == (2, 4, 2, 2)
        np.testing.assert_allclose(maps[0].sum(axis=-1), 1.0, atol=1e-12)

    def test_alpha_starts_at_sqrt_head_width(self):
        p = CmhaParams.init(16, 4, np.random.default_rng(0))
        np.testing.assert_array_equal(p.alpha.data, [2.0, 2.0, 2.0, 2.0])

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            CmhaParams.init(6, 4, np.random.default_rng(0))


class TestLeff:
    def test_shape_preserved(self):
        rng = np.random.default_rng(5)
        for shape in [(1, 1, 1), (3, 5, 2), (2, 4, 6, 3)]:
            p = LeffParams.init(shape[-1], rng)
            assert leff_forward(Tensor(rng.standard_normal(shape)), p).shape == shape

    def test_zero_projection_is_identity(self):
        rng = np.random.default_rng(6)
        p = LeffParams.init(3, rng)
        p.project = Tensor(np.zeros_like(p.project.data))
        x = rng.standard_normal((4, 4, 3))
        np.testing.assert_array_equal(leff_forward(Tensor(x), p).data, x)

    def test_matches_hand_composition(self):
        rng = np.random.default_rng(7)
        p = LeffParams.init(2, rng)
        x = rng.standard_normal((2, 2, 2))
        ref = leff_loops(x, p.expand.data, p.depth.data, p.project.data)
        np.testing.assert_allclose(leff_forward(Tensor(x), p).data, ref, rtol=1e-12, atol=1e-13)


class TestEtb:
    def test_zero_sublayers_pass_input_through(self):
        rng = np.random.default_rng(8)
        p = EtbParams.init(4, 2, rng)
        p.attn.v_point = Tensor(np.zeros_like(p.attn.v_point.data))
        p.ffn.project = Tensor(np.zeros_like(p.ffn.project.data))
        x = rng.standard_normal((3, 5, 4))
        np.testing.assert_array_equal(etb_forward(Tensor(x), p).data, x)

    def test_matches_stage_by_stage(self):
        rng = np.random.default_rng(9)
        p = EtbParams.init(4, 2, rng)
        p.norm1_gamma = Tensor(rng.uniform(0.5, 1.5, 4))
        p.norm2_beta = Tensor(rng.standard_normal(4) * 0.1)
        x = rng.standard_normal((4, 2, 4))
        a = p.attn
        y, _ = channel_attention_loops(layer_norm_loops(x, p.norm1_gamma.data, p.norm1_beta.data),
                                       a.q_point.data, a.q_depth.data, a.k_point.data, a.k_depth.data,
                                       a.v_point.data, a.v_depth.data, a.alpha.data, 2, residual=x)
        z = leff_loops(layer_norm_loops(y, p.norm2_gamma.data, p.norm2_beta.data),
                       p.ffn.expand.data, p.ffn.depth.data, p.ffn.project.data, residual=y)
        np.testing.assert_allclose(etb_forward(Tensor(x), p).data, z, rtol=1e-10, atol=1e-11)


class TestResampling:
    def test_shapes(self):
        rng = np.random.default_rng(10)
        assert downsample(Tensor(rng.standard_normal((8, 8, 4))), Tensor(rng.standard_normal((3, 3, 4, 2)))).shape == (4, 4, 8)
        assert upsample(Tensor(rng.standard_normal((4, 4, 8))), Tensor(rng.standard_normal((3, 3, 8, 16)))).shape == (8, 8, 4)

    def test_delta_kernels_follow_unshuffle_map(self):
        # conv keeps channels 0 and 1 unchanged, then unshuffle rearranges them
        x = np.arange(4 * 6 * 4, dtype=float).reshape(4, 6, 4)
        w = np.zeros((3, 3, 4, 2))
        w[1, 1, 0, 0] = w[1, 1, 1, 1] = 1.0
        out = downsample(Tensor(x), Tensor(w)).data
        np.testing.assert_array_equal(out, unshuffle_loops(x[..., :2], 2))
        assert out[1, 2, 1 * 4 + 1 * 2 + 0] == x[3, 4, 1]

    def test_up_of_down_restores_dims(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((8, 4, 6)))
        d = downsample(x, Tensor(rng.standard_normal((3, 3, 6, 3))))
        assert upsample(d, Tensor(rng.standard_normal((3, 3, 12, 24)))).shape == x.shape

    def test_odd_size_rejected(self):
        with pytest.raises(ShapeError):
            downsample(Tensor(np.zeros((5, 4, 2))), Tensor(np.zeros((3, 3, 2, 1))))


class TestGenerator:
    config = EUFormerConfig(scales=2, base_channels=8)

    def test_output_range_and_shape(self):
        params = init_generator_params(self.config, seed=0)
        rgb = np.random.default_rng(12).uniform(size=(16, 8, 3))
        out = generator_forward(rgb, self.config, params).data
        assert out.shape == (16, 8, 1)
        assert np.all((out > 0) & (out < 1))

    def test_deterministic(self):
        params = init_generator_params(self.config, seed=1)
        rgb = np.random.default_rng(13).uniform(size=(2, 8, 8, 3))
        np.testing.assert_array_equal(generator_forward(rgb, self.config, params).data,
                                      generator_forward(rgb, self.config, params).data)

    def test_divisibility(self):
        cfg = EUFormerConfig(scales=3)
        with pytest.raises(ShapeError):
            generator_forward(np.zeros((18, 8, 3)), cfg, init_generator_params(cfg))

    def test_param_mismatch(self):
        params = init_generator_params(self.config)
        del params["out_proj"]
        with pytest.raises(ValueError, match="out_proj"):
            generator_forward(np.zeros((8, 8, 3)), self.config, params)

    def test_default_layout(self):
        cfg = EUFormerConfig()
        assert cfg.etbs_per_scale == (1, 2, 2)
        assert cfg.heads_per_scale == (1, 2, 4)
        assert [cfg.channels(i) for i in range(3)] == [16, 32, 64]
        names = init_generator_params(cfg).keys()
        assert sum(n.endswith("norm1_gamma") for n in names) == 1 + 2 + 2 + 1 + 2

    def test_separate_views(self):
        cfg = EUFormerConfig(scales=2, base_channels=8, separate_views=True)
        params = init_generator_params(cfg, seed=2)
        assert count_params(params) == 2 * count_params(init_generator_params(self.config, seed=2))
        rgb = np.random.default_rng(14).uniform(size=(8, 8, 3))
        pa = generator_forward(rgb, cfg, params, view="PA").data
        lat = generator_forward(rgb, cfg, params, view="LAT").data
        assert not np.array_equal(pa, lat)

    def test_config_round_trip(self):
        cfg = EUFormerConfig(scales=4, base_channels=4)
        assert EUFormerConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.heads_per_scale == (1, 2, 4, 8)


class TestDiscriminator:
    @pytest.mark.parametrize("h,w", [(320, 160), (64, 32), (128, 96)])
    def test_grid_recurrence(self, h, w):
        got = patch_grid(h, w)
        for _ in range(3):
            h, w = conv_out(h), conv_out(w)
        for _ in range(2):
            h, w = conv_out(h, stride=1), conv_out(w, stride=1)
        assert got == (h, w)

    def test_grid_frozen(self):
        assert patch_grid(320, 160) == (38, 18)
        assert patch_grid(64, 32) == (6, 2)

    def test_forward_grid_64x32(self):
        params = init_discriminator_params(seed=0, channels=(8, 16, 16, 16, 1))
        rng = np.random.default_rng(15)
        out = discriminator_forward(rng.uniform(size=(64, 32, 3)), rng.uniform(size=(64, 32, 1)), params)
        assert out.shape == (6, 2, 1)

    def test_zero_weights_give_half(self):
        params = {k: Tensor(np.zeros_like(v.data)) for k, v in init_discriminator_params(channels=(4, 4, 4, 4, 1)).items()}
        logits = discriminator_forward(np.ones((64, 32, 3)), np.ones((64, 32, 1)), params)
        np.testing.assert_array_equal(logits.data, 0.0)
        np.testing.assert_array_equal(tc.sigmoid(logits).data, 0.5)

    def test_spatial_mismatch(self):
        params = init_discriminator_params(channels=(4, 4, 4, 4, 1))
        with pytest.raises(ShapeError):
            discriminator_forward(np.zeros((64, 32, 3)), np.zeros((32, 32, 1)), params)


class TestLosses:
    def test_generator_loss_values(self):
        assert loss_generator([1 - 1e-7], [1.0]).item() == pytest.approx(1.0000000500000003e-07, rel=1e-6)
        assert loss_generator([0.5], [1.0]).item() == pytest.approx(0.6931471805599453, abs=1e-12)
        assert loss_generator([0.5, 0.5], [1.0, 0.0]).item() == pytest.approx(1.3862943611198906, abs=1e-12)

    def test_generator_loss_clamps(self):
        assert np.isfinite(loss_generator([0.0, 1.0], [1.0, 0.0]).item())

    def test_mse_values(self):
        gt = np.random.default_rng(16).uniform(size=(2, 4, 4, 1))
        assert loss_mse(gt, gt).item() == 0.0
        assert loss_mse(gt + 1.0, gt).item() == pytest.approx(1.0, abs=1e-12)
        assert loss_mse([0.5, 0.0], [0.0, 0.0]).item() == 0.125
        with pytest.raises(ShapeError):
            loss_mse(np.zeros(3), np.zeros(4))

    def test_total(self):
        assert loss_total(1.0, 0.0, 0.01) == 0.01
        assert loss_total(0.0, 0.0, 0.01) == 0.0
        assert loss_total(2.0, 0.5, 0.01) == pytest.approx(0.52, abs=1e-15)

    def test_discriminator_loss_at_chance(self):
        z = Tensor(np.zeros((2, 3, 2, 1)))
        assert loss_discriminator(z, z).item() == pytest.approx(math.log(2.0), abs=1e-12)


class TestFlops:
    def test_counting_formula(self):
        assert flops_attention(16, 16, 32, 1, "channel") == 524_288
        assert flops_attention(16, 16, 32, 1, "spatial") == 2 * 256 * 256 * 32

    def test_scaling(self):
        assert flops_attention(32, 16, 32, 2, "channel") == 2 * flops_attention(16, 16, 32, 2, "channel")
        assert flops_attention(32, 16, 32, 2, "spatial") == 4 * flops_attention(16, 16, 32, 2, "spatial")


class TestTraining:
    def test_lr_schedule(self):
        cfg = TrainConfig()
        assert [lr_at_epoch(cfg, e) for e in (0, 49, 50, 100)] == [1e-4, 1e-4, 1e-5, 1e-6]

    def test_adam_zero_lr_keeps_params(self):
        p = {"w": tc.parameter(np.ones(3))}
        Adam(p).step({"w": np.array([1.0, -2.0, 3.0])}, 0.0)
        np.testing.assert_array_equal(p["w"].data, np.ones(3))

    def test_adam_first_step_moves_by_lr(self):
        p = {"w": tc.parameter(np.zeros(2))}
        Adam(p).step({"w": np.array([0.3, -5.0])}, 1e-2)
        np.testing.assert_allclose(p["w"].data, [-1e-2, 1e-2], rtol=1e-6)

    def test_augment_applies_same_flip(self):
        rng = np.random.default_rng(17)
        rgb = rng.uniform(size=(8, 6, 3))
        cmap = np.zeros((8, 6, 1))
        cmap[:, 1] = 1.0
        cfg = TrainConfig(rotate=False)
        flipped = 0
        for _ in range(20):
            a, m = augment(rgb, cmap, rng, cfg)
            if m[0, 4, 0] == 1.0:
                flipped += 1
                np.testing.assert_array_equal(a, rgb[:, ::-1])
            else:
                np.testing.assert_array_equal(a, rgb)
        assert 0 < flipped < 20

    def test_zero_lr_run_is_static(self):
        gen_cfg = EUFormerConfig(scales=2, base_channels=4)
        rng = np.random.default_rng(18)
        pair = TrainingPair(rng.uniform(size=(64, 32, 3)), rng.uniform(size=(64, 32)), "PA")
        cfg = TrainConfig(learning_rate=0.0, steps=3, rotate=False, flip=False, float32=False,
                          disc_channels=(4, 4, 4, 4, 1))
        g0 = init_generator_params(gen_cfg, seed=cfg.seed)
        res = train([pair], gen_cfg, cfg, log_every=0)
        for k, v in g0.items():
            np.testing.assert_array_equal(res.generator[k].data, v.data)
        losses = res.history.column("loss_total")
        np.testing.assert_array_equal(losses, losses[0])

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train([], EUFormerConfig(), TrainConfig(steps=1))

    def test_history_csv(self, tmp_path):
        gen_cfg = EUFormerConfig(scales=2, base_channels=4)
        pair = TrainingPair(np.zeros((64, 32, 3)), np.zeros((64, 32)), "LAT")
        res = train([pair], gen_cfg, TrainConfig(steps=2, disc_channels=(4, 4, 4, 4, 1)), log_every=0)
        path = tmp_path / "h.csv"
        write_history_csv(res.history, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(HISTORY_COLUMNS)
        assert len(lines) == 3

    def test_pair_validation(self):
        with pytest.raises(ValueError):
            TrainingPair(np.zeros((8, 8, 3)), np.zeros((8, 4)))
        with pytest.raises(ValueError):
            TrainingPair(np.zeros((8, 8, 3)), np.zeros((8, 8)), "AP")


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = EUFormerConfig(scales=2, base_channels=4, separate_views=True)
        gen = init_generator_params(cfg, seed=3)
        disc = init_discriminator_params(seed=4, channels=(4, 4, 4, 4, 1))
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, Checkpoint(cfg, gen, disc, {"steps": 7}))
        back = load_checkpoint(path)
        assert back.config == cfg
        assert back.metadata == {"steps": 7}
        assert set(back.generator) == set(gen) and set(back.discriminator) == set(disc)
        for k in gen:
            np.testing.assert_array_equal(back.generator[k].data, gen[k].data)

    def test_layout(self):
        cfg = EUFormerConfig(scales=1, base_channels=2)
        gen = {"a": Tensor(np.array([1.0, -2.0])), "b": Tensor(np.arange(6.0).reshape(2, 3))}
        buf = to_bytes(Checkpoint(cfg, gen))
        assert buf[:8] == b"SPINE3D\0"
        assert int.from_bytes(buf[8:12], "little") == 1
        hlen = int.from_bytes(buf[12:20], "little")
        data = buf[20 + hlen:]
        assert len(data) == 8 * 8
        np.testing.assert_array_equal(np.frombuffer(data[16:], dtype="<f8"), np.arange(6.0))

    def test_bad_files(self):
        cfg = EUFormerConfig(scales=1, base_channels=2)
        buf = to_bytes(Checkpoint(cfg, {"a": Tensor(np.ones(4))}))
        with pytest.raises(CheckpointError):
            from_bytes(b"NOTACKPT" + buf[8:])
        with pytest.raises(CheckpointError):
            from_bytes(buf[:-8])
        with pytest.raises(CheckpointError):
            from_bytes(buf[:8] + (2).to_bytes(4, "little") + buf[12:])
