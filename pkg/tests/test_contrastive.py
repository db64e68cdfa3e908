import math

import numpy as np
import pytest
import torch

from wvssl.augment import AugPolicy, KIND_FLIP
from wvssl.checkpoint import (Checkpoint, load_checkpoint, save_checkpoint)
from wvssl.contrastive import (TrainConfig, cosine_similarity, embed_images,
                               epoch_batches, epoch_subsample,
                               init_train_state, learning_rate_at,
                               model_from_checkpoint, nt_xent_loss,
                               nt_xent_loss_and_grad, pretrain_on_arrays,
                               state_from_checkpoint, train_step)
from wvssl.encoder import EncoderConfig, build_encoder
from wvssl.errors import ConfigError, DataError, TrainingError

from oracles import nt_xent_reference

torch.set_num_threads(1)

TINY = EncoderConfig(input_side=32, stage_widths=(8, 16), blocks_per_stage=1,
                     projector_widths=(16, 8))


def tiny_state(seed=0, **kw):
    cfg = TrainConfig(epochs=4, batch_size=8, warmup_epochs=1, seed=seed,
                      subsample_fraction=1.0, **kw)
    return init_train_state(TINY, cfg)


def rand_images(n, side=32, seed=0):
    return np.random.default_rng(seed).random((n, side, side)).astype(np.float32)


class TestCosineSimilarity:
    def test_self_similarity_is_one(self):
        u = np.array([0.3, -2.0, 5.0])
        assert cosine_similarity(u, u) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_hand_arithmetic(self):
        got = cosine_similarity([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
        assert got == pytest.approx(32.0 / (math.sqrt(14.0) * math.sqrt(77.0)),
                                    abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(DataError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])


class TestNtXent:
    def test_single_pair_loss_is_exactly_zero(self):
        z = torch.tensor([[1.0, 2.0], [-0.3, 0.7]], dtype=torch.float64)
        assert float(nt_xent_loss(z, 0.5)) == 0.0

    def test_identical_embeddings_give_log3(self):
        for tau in (0.1, 0.5, 2.0):
            z = torch.full((4, 6), 0.37, dtype=torch.float64)
            assert float(nt_xent_loss(z, tau)) == pytest.approx(math.log(3.0),
                                                                abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    @pytest.mark.parametrize("tau", [0.1, 0.5, 1.0])
    def test_matches_direct_evaluation(self, n, tau):
        rng = np.random.default_rng(1000 * n + int(10 * tau))
        for _ in range(10):
            z = rng.normal(size=(2 * n, 5))
            got = float(nt_xent_loss(torch.tensor(z), tau))
            want = nt_xent_reference(z, tau)
            assert got == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(8, 4))
        a = float(nt_xent_loss(torch.tensor(z), 0.5))
        b = float(nt_xent_loss(torch.tensor(z * 13.7), 0.5))
        assert a == pytest.approx(b, rel=1e-12)

    def test_pair_swap_invariance(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(8, 4))
        swapped = z.reshape(4, 2, 4)[:, ::-1, :].reshape(8, 4)
        a = float(nt_xent_loss(torch.tensor(z), 0.5))
        b = float(nt_xent_loss(torch.tensor(swapped.copy()), 0.5))
        assert a == pytest.approx(b, rel=1e-12)

    def test_moving_toward_positive_decreases_pair_term(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(6, 8))
        z /= np.linalg.norm(z, axis=1, keepdims=True)

        def pair_term(zs, i, j, tau=0.5):
            num = math.exp(np.dot(zs[i], zs[j])
                           / (np.linalg.norm(zs[i]) * np.linalg.norm(zs[j])) / tau)
            den = sum(
                math.exp(np.dot(zs[i], zs[k])
                         / (np.linalg.norm(zs[i]) * np.linalg.norm(zs[k])) / tau)
                for k in range(len(zs)) if k != i)
            return -math.log(num / den)

        before = pair_term(z, 0, 1)
        omega = math.acos(float(np.clip(np.dot(z[0], z[1]), -1, 1)))
        t = 0.2  # slerp fraction toward the positive partner
        moved = z.copy()
        moved[0] = (math.sin((1 - t) * omega) * z[0]
                    + math.sin(t * omega) * z[1]) / math.sin(omega)
        after = pair_term(moved, 0, 1)
        assert after < before

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(6, 4))
        _, grad = nt_xent_loss_and_grad(z, 0.5)
        eps = 1e-6
        for i in range(6):
            for j in range(4):
                zp, zm = z.copy(), z.copy()
                zp[i, j] += eps
                zm[i, j] -= eps
                num = (nt_xent_reference(zp, 0.5)
                       - nt_xent_reference(zm, 0.5)) / (2 * eps)
                assert grad[i, j] == pytest.approx(num, rel=1e-5, abs=1e-8)

    def test_bad_inputs_rejected(self):
        z = torch.ones((4, 3), dtype=torch.float64)
        with pytest.raises(ConfigError):
            nt_xent_loss(z, 0.0)
        with pytest.raises(DataError):
            nt_xent_loss(torch.ones((3, 2), dtype=torch.float64), 0.5)
        zz = z.clone()
        zz[1] = 0.0
        with pytest.raises(DataError):
            nt_xent_loss(zz, 0.5)


class TestEncoder:
    def test_forward_shapes(self):
        model = build_encoder(TINY, seed=0)
        x = torch.rand(4, 3, 32, 32)
        h, z = model(x)
        assert h.shape == (4, 16)
        assert z.shape == (4, 8)

    def test_seeded_init_is_bit_stable(self):
        x = torch.rand(2, 3, 32, 32)
        a = build_encoder(TINY, seed=7)
        b = build_encoder(TINY, seed=7)
        a.eval(), b.eval()
        with torch.no_grad():
            ha, za = a(x)
            hb, zb = b(x)
        assert torch.equal(ha, hb) and torch.equal(za, zb)

    def test_shape_mismatch_rejected(self):
        model = build_encoder(TINY, seed=0)
        with pytest.raises(DataError):
            model(torch.rand(2, 3, 16, 16))
        with pytest.raises(DataError):
            model(torch.rand(2, 1, 32, 32))

    def test_single_linear_projector_is_homogeneous(self):
        cfg = EncoderConfig(input_side=32, stage_widths=(8, 16),
                            projector_widths=(8,))
        model = build_encoder(cfg, seed=1)
        model.eval()
        x = torch.rand(3, 3, 32, 32)
        with torch.no_grad():
            h, z = model(x)
            layer = model.projector[0]
            layer.weight.mul_(2.0)
            layer.bias.mul_(2.0)
            _, z2 = model(x)
        assert torch.allclose(z2, 2.0 * z, atol=1e-6)

    def test_zeroed_projector_flagged_degenerate(self):
        state = tiny_state()
        with torch.no_grad():
            last = state.model.projector[-1]
            last.weight.zero_()
            last.bias.zero_()
        imgs = rand_images(4)
        views = np.repeat(imgs[:, None], 3, axis=1)
        with pytest.raises(TrainingError):
            train_step(state, views, views)

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            EncoderConfig(stage_widths=(0, 8))
        with pytest.raises(ConfigError):
            EncoderConfig(stage_widths=(8,), projector_widths=(16,))
        with pytest.raises(ConfigError):
            EncoderConfig(projector_widths=(256, 1))


class TestTrainStep:
    def test_zero_lr_leaves_parameters_unchanged(self):
        state = tiny_state()
        state.config.base_lr = 0.0
        state.config.warmup_epochs = 0
        before = {k: v.clone() for k, v in state.model.state_dict().items()
                  if v.dtype.is_floating_point}
        imgs = rand_images(8)
        views = np.repeat(imgs[:, None], 3, axis=1)
        train_step(state, views, views)
        after = state.model.state_dict()
        for name, tensor in before.items():
            if "running" in name or "num_batches" in name:
                continue  # batch-norm statistics update regardless of lr
            assert torch.equal(tensor, after[name]), name

    def test_loss_decreases_on_fixed_batch(self):
        state = tiny_state()
        state.config.base_lr = 1e-3
        state.config.warmup_epochs = 0
        imgs = rand_images(8, seed=3)
        va = np.repeat(imgs[:, None], 3, axis=1)
        vb = va + np.float32(0.01)
        losses = [train_step(state, va, vb) for _ in range(50)]
        assert losses[-1] < losses[0]

    def test_same_seed_same_loss_curve(self):
        curves = []
        for _ in range(2):
            state = tiny_state(seed=5)
            state.config.base_lr = 0.05
            imgs = rand_images(8, seed=4)
            va = np.repeat(imgs[:, None], 3, axis=1)
            vb = np.ascontiguousarray(va[:, :, ::-1, :])
            curves.append([train_step(state, va, vb) for _ in range(10)])
        assert curves[0] == curves[1]


class TestSchedule:
    def test_full_fraction_visits_every_image(self):
        cfg = TrainConfig(epochs=2, batch_size=8, subsample_fraction=1.0, seed=0)
        for epoch in range(2):
            idx = epoch_subsample(100, cfg, epoch)
            assert np.array_equal(idx, np.arange(100))
            flat = np.concatenate(epoch_batches(100, cfg, epoch))
            assert sorted(flat.tolist()) == list(range(100))

    def test_fraction_and_redraw_schedule(self):
        cfg = TrainConfig(epochs=60, batch_size=8, subsample_fraction=0.3,
                          redraw_period=20, seed=1)
        first = epoch_subsample(100, cfg, 0)
        assert len(first) == 30
        assert np.array_equal(epoch_subsample(100, cfg, 19), first)
        second = epoch_subsample(100, cfg, 20)
        assert not np.array_equal(second, first)
        assert np.array_equal(epoch_subsample(100, cfg, 39), second)
        third = epoch_subsample(100, cfg, 40)
        assert not np.array_equal(third, second)

    def test_batches_drop_singletons(self):
        cfg = TrainConfig(epochs=1, batch_size=8, subsample_fraction=1.0, seed=2)
        batches = epoch_batches(17, cfg, 0)
        assert [len(b) for b in batches] == [8, 8]

    def test_warmup_and_cosine_shape(self):
        cfg = TrainConfig(epochs=20, batch_size=256, warmup_epochs=10, seed=0)
        assert learning_rate_at(cfg, 0.0) == 0.0
        assert learning_rate_at(cfg, 5.0) == pytest.approx(cfg.lr / 2)
        assert learning_rate_at(cfg, 10.0) == pytest.approx(cfg.lr)
        assert learning_rate_at(cfg, 20.0) == pytest.approx(0.0, abs=1e-12)
        assert cfg.lr == pytest.approx(0.3)


class TestCheckpointFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        ckpt = Checkpoint(
            config={"encoder": TINY.to_dict(), "note": 1},
            tensors={"a.weight": rng.random((3, 4)).astype(np.float32),
                     "b": rng.random(5).astype(np.float32)},
            optimizer={"momentum.a.weight": rng.random((3, 4)).astype(np.float32)},
            rng_state=b"\x01\x02\x03",
        )
        p = tmp_path / "model.wvck"
        save_checkpoint(p, ckpt)
        back = load_checkpoint(p)
        assert back.config == ckpt.config
        assert set(back.tensors) == set(ckpt.tensors)
        for k in ckpt.tensors:
            assert np.array_equal(back.tensors[k], ckpt.tensors[k])
        assert np.array_equal(back.optimizer["momentum.a.weight"],
                              ckpt.optimizer["momentum.a.weight"])
        assert back.rng_state == b"\x01\x02\x03"

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.wvck"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(DataError):
            load_checkpoint(p)

    def test_truncation_rejected(self, tmp_path):
        ckpt = Checkpoint(config={}, tensors={"w": np.zeros(4, np.float32)})
        p = tmp_path / "t.wvck"
        save_checkpoint(p, ckpt)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(DataError):
            load_checkpoint(p)


class TestPretrain:
    def pool(self):
        return [AugPolicy(KIND_FLIP, 1.0, {})]

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        imgs = rand_images(16, seed=7)
        enc = TINY
        cfg = TrainConfig(epochs=4, batch_size=8, warmup_epochs=1,
                          subsample_fraction=1.0, seed=11, checkpoint_period=2)
        full = tmp_path / "full.wvck"
        pretrain_on_arrays(imgs, self.pool(), cfg, enc, full)

        # same config, interrupted after epoch 2, then resumed to completion
        part = tmp_path / "part.wvck"
        pretrain_on_arrays(imgs, self.pool(), cfg, enc, part, stop_after=2)
        resumed = tmp_path / "resumed.wvck"
        pretrain_on_arrays(imgs, self.pool(), cfg, enc, resumed,
                           resume_from=part)
        assert resumed.read_bytes() == full.read_bytes()

    def test_resume_rejects_mismatched_config(self, tmp_path):
        imgs = rand_images(8, seed=7)
        cfg = TrainConfig(epochs=2, batch_size=4, warmup_epochs=0,
                          subsample_fraction=1.0, seed=1)
        part = tmp_path / "p.wvck"
        pretrain_on_arrays(imgs, self.pool(), cfg, TINY, part, stop_after=1)
        other = TrainConfig(epochs=2, batch_size=4, warmup_epochs=0,
                            subsample_fraction=1.0, seed=2)
        with pytest.raises(ConfigError):
            pretrain_on_arrays(imgs, self.pool(), other, TINY,
                               tmp_path / "q.wvck", resume_from=part)

    def test_same_seed_bitwise_identical_checkpoints(self, tmp_path):
        imgs = rand_images(12, seed=8)
        cfg = TrainConfig(epochs=2, batch_size=6, warmup_epochs=0,
                          subsample_fraction=1.0, seed=3)
        a = tmp_path / "a.wvck"
        b = tmp_path / "b.wvck"
        pretrain_on_arrays(imgs, self.pool(), cfg, TINY, a)
        pretrain_on_arrays(imgs, self.pool(), cfg, TINY, b)
        assert a.read_bytes() == b.read_bytes()

    def test_training_log_records(self, tmp_path):
        import json

        imgs = rand_images(8, seed=9)
        cfg = TrainConfig(epochs=2, batch_size=4, warmup_epochs=0,
                          subsample_fraction=1.0, seed=4)
        log = tmp_path / "train.log"
        pretrain_on_arrays(imgs, self.pool(), cfg, TINY, tmp_path / "m.wvck",
                           log_path=log)
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(records) == 4  # 2 epochs x 2 batches
        for rec in records:
            assert set(rec) == {"epoch", "step", "loss", "lr", "wall_time"}

    def test_too_few_images_rejected(self, tmp_path):
        with pytest.raises(DataError):
            pretrain_on_arrays(rand_images(1), self.pool(),
                               TrainConfig(epochs=1, batch_size=2, seed=0),
                               TINY, tmp_path / "x.wvck")


class TestEmbed:
    def test_duplicate_image_gives_identical_rows(self):
        model = build_encoder(TINY, seed=2)
        img = rand_images(1, seed=10)[0]
        batch = np.stack([img, img, rand_images(1, seed=11)[0]])
        emb = embed_images(model, batch, ["a", "b", "c"])
        assert np.array_equal(emb.rows[0], emb.rows[1])
        assert not np.array_equal(emb.rows[0], emb.rows[2])

    def test_spaces_differ_in_dimension(self):
        model = build_encoder(TINY, seed=2)
        imgs = rand_images(4, seed=12)
        h = embed_images(model, imgs, list("abcd"), space="backbone")
        z = embed_images(model, imgs, list("abcd"), space="projected")
        assert h.rows.shape == (4, 16)
        assert z.rows.shape == (4, 8)

    def test_shard_equivalence(self):
        model = build_encoder(TINY, seed=2)
        imgs = rand_images(23, seed=13)
        ids = [str(i) for i in range(23)]
        full = embed_images(model, imgs, ids)
        parts = [embed_images(model, imgs[:9], ids[:9]),
                 embed_images(model, imgs[9:], ids[9:])]
        cat = np.concatenate([p.rows for p in parts])
        assert np.array_equal(full.rows, cat)

    def test_checkpoint_round_trip_embeds_identically(self, tmp_path):
        imgs = rand_images(8, seed=14)
        cfg = TrainConfig(epochs=1, batch_size=4, warmup_epochs=0,
                          subsample_fraction=1.0, seed=6)
        path = tmp_path / "m.wvck"
        pretrain_on_arrays(imgs, [AugPolicy(KIND_FLIP, 1.0, {})], cfg, TINY, path)
        state = state_from_checkpoint(load_checkpoint(path))
        model, _ = model_from_checkpoint(path)
        a = embed_images(state.model, imgs, [str(i) for i in range(8)])
        b = embed_images(model, imgs, [str(i) for i in range(8)])
        assert np.array_equal(a.rows, b.rows)
