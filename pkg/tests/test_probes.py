import numpy as np
import pytest
import torch

from wvssl.contrastive import embed_images
from wvssl.encoder import EncoderConfig, build_encoder
from wvssl.errors import ConfigError
from wvssl.metrics import micro_auroc
from wvssl.probes import (FinetuneConfig, LinearProbe, MlpProbe, finetune,
                          knn_predict)

from oracles import knn_scores_reference

torch.set_num_threads(1)

TINY = EncoderConfig(input_side=32, stage_widths=(8, 16), blocks_per_stage=1,
                     projector_widths=(16, 8))


class TestKnnPredict:
    def test_exact_match_with_k1_returns_its_labels(self):
        rng = np.random.default_rng(0)
        train = rng.normal(size=(20, 6))
        labels = rng.integers(0, 2, (20, 3)).astype(float)
        scores = knn_predict(train, labels, train[7:8], k=1)
        assert np.array_equal(scores[0], labels[7])

    def test_identical_labels_give_constant_scores(self):
        rng = np.random.default_rng(1)
        train = rng.normal(size=(30, 4))
        labels = np.tile([1.0, 0.0], (30, 1))
        scores = knn_predict(train, labels, rng.normal(size=(5, 4)))
        assert np.allclose(scores, np.tile([1.0, 0.0], (5, 1)))

    def test_matches_exhaustive_sort_oracle(self):
        rng = np.random.default_rng(2)
        train = rng.normal(size=(50, 8))
        labels = rng.integers(0, 2, (50, 4)).astype(float)
        queries = rng.normal(size=(10, 8))
        got = knn_predict(train, labels, queries, k=15, tau=0.07)
        for qi in range(10):
            want = knn_scores_reference(train, labels, queries[qi], k=15, tau=0.07)
            assert np.max(np.abs(got[qi] - want)) < 1e-9

    def test_scores_within_unit_interval(self):
        rng = np.random.default_rng(3)
        train = rng.normal(size=(40, 5))
        labels = rng.integers(0, 2, (40, 2)).astype(float)
        scores = knn_predict(train, labels, rng.normal(size=(8, 5)))
        assert scores.min() >= 0.0 and scores.max() <= 1.0

    def test_invariant_to_uniform_embedding_rescale(self):
        rng = np.random.default_rng(4)
        train = rng.normal(size=(25, 6))
        labels = rng.integers(0, 2, (25, 3)).astype(float)
        q = rng.normal(size=(4, 6))
        a = knn_predict(train, labels, q)
        b = knn_predict(train * 9.5, labels, q * 0.2)
        assert np.allclose(a, b, atol=1e-12)

    def test_k_larger_than_train_rejected(self):
        with pytest.raises(ConfigError):
            knn_predict(np.ones((5, 2)), np.ones((5, 1)), np.ones((1, 2)), k=6)

    def test_depends_only_on_train_data(self):
        rng = np.random.default_rng(5)
        train = rng.normal(size=(20, 4))
        labels = rng.integers(0, 2, (20, 2)).astype(float)
        q = rng.normal(size=(6, 4))
        assert np.array_equal(knn_predict(train, labels, q),
                              knn_predict(train, labels, q))


class TestLinearProbe:
    def test_separable_classes_reach_perfect_auroc(self):
        rng = np.random.default_rng(6)
        x = np.concatenate([rng.normal(-2, 0.5, (50, 4)),
                            rng.normal(2, 0.5, (50, 4))])
        y = np.concatenate([np.zeros((50, 1)), np.ones((50, 1))])
        probe = LinearProbe(task="classification", seed=0).fit(x, y)
        assert micro_auroc(y, probe.predict(x)) == 1.0

    def test_zero_targets_give_zero_weights(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(30, 5))
        probe = LinearProbe(task="regression").fit(x, np.zeros(30))
        assert np.all(probe.predict(x) == 0.0)

    def test_recovers_exact_linear_relation(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(50, 1))
        probe = LinearProbe(task="regression").fit(x, 2.0 * x.ravel())
        pred = probe.predict(x)
        slope = np.polyfit(x.ravel(), pred, 1)[0]
        assert abs(slope - 2.0) < 1e-3

    def test_zero_variance_feature_is_regularized_not_fatal(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(40, 3))
        x[:, 1] = 5.0  # constant column
        y = x[:, 0] * 1.5 + 0.2
        probe = LinearProbe(task="regression").fit(x, y)
        pred = probe.predict(x)
        assert np.all(np.isfinite(pred))
        assert np.mean((pred - y) ** 2) < 1e-6

    def test_predict_before_fit_rejected(self):
        with pytest.raises(ConfigError):
            LinearProbe(task="regression").predict(np.ones((2, 3)))
        with pytest.raises(ConfigError):
            LinearProbe(task="classification").predict(np.ones((2, 3)))

    def test_unknown_task_rejected(self):
        with pytest.raises(ConfigError):
            LinearProbe(task="segmentation")


class TestMlpProbe:
    def test_constant_target_regression_converges(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(100, 8))
        probe = MlpProbe(task="regression", hidden=(32, 32), epochs=50,
                         seed=0).fit(x, np.full(100, 3.7))
        assert np.max(np.abs(probe.predict(x) - 3.7)) < 1e-2

    def test_xor_arrangement_is_separable(self):
        rng = np.random.default_rng(11)
        n = 200
        quad = rng.integers(0, 4, n)
        signs = np.where(np.stack([quad % 2, quad // 2], axis=1) == 1, 1.0, -1.0)
        x = rng.uniform(0.2, 0.8, (n, 2)) * signs
        y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(np.float64)[:, None]
        probe = MlpProbe(task="classification", hidden=(32, 32), epochs=200,
                         seed=0).fit(x, y)
        acc = np.mean((probe.predict(x) >= 0.5).astype(int) == y)
        assert acc > 0.95

    def test_loss_mostly_decreases(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(150, 6))
        y = (x[:, :1] + 0.5 * x[:, 1:2] > 0).astype(np.float64)
        probe = MlpProbe(task="classification", hidden=(32, 32), epochs=50,
                         seed=1).fit(x, y)
        drops = sum(b < a for a, b in zip(probe.history, probe.history[1:]))
        assert drops / (len(probe.history) - 1) >= 0.9

    def test_seeded_determinism(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(60, 4))
        y = rng.integers(0, 2, (60, 2)).astype(float)
        a = MlpProbe(task="classification", hidden=(16, 16), epochs=20,
                     seed=5).fit(x, y).predict(x)
        b = MlpProbe(task="classification", hidden=(16, 16), epochs=20,
                     seed=5).fit(x, y).predict(x)
        assert np.array_equal(a, b)

    def test_wrong_hidden_count_rejected(self):
        with pytest.raises(ConfigError):
            MlpProbe(hidden=(64,))


def quadrant_xor_images(n=160, side=32, seed=0):
    rng = np.random.default_rng(seed)
    imgs = np.zeros((n, side, side), dtype=np.float32)
    labels = np.zeros((n, 1), dtype=np.float64)
    half = side // 2
    for i in range(n):
        a, b = int(rng.integers(0, 2)), int(rng.integers(0, 2))
        img = np.full((side, side), rng.uniform(0.1, 0.2), dtype=np.float32)
        img[:half, :half] += 0.5 * a
        img[half:, half:] += 0.5 * b
        img += rng.normal(0, 0.03, (side, side)).astype(np.float32)
        imgs[i] = np.clip(img, 0.0, 1.0)
        labels[i, 0] = float(a ^ b)
    return imgs, labels


class TestFinetune:
    def test_zero_learning_rates_leave_parameters_unchanged(self):
        imgs, labels = quadrant_xor_images(16)
        model = build_encoder(TINY, seed=0)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        cfg = FinetuneConfig(task="classification", epochs=1, batch_size=8,
                             lr=0.0, weight_decay=0.0, seed=0)
        tuned = finetune(model, imgs, labels, cfg)
        after = tuned.encoder.state_dict()
        for name, tensor in before.items():
            if "running" in name or "num_batches" in name:
                continue
            assert torch.equal(tensor, after[name]), name
        # and the original model was not mutated at all
        for name, tensor in before.items():
            assert torch.equal(tensor, model.state_dict()[name])

    def test_beats_linear_probe_on_nonlinear_task(self):
        imgs, labels = quadrant_xor_images(160)
        model = build_encoder(TINY, seed=3)
        emb = embed_images(model, imgs, [str(i) for i in range(len(imgs))])
        lp = LinearProbe(task="classification", seed=0).fit(emb.rows, labels)
        lin = micro_auroc(labels, lp.predict(emb.rows))
        cfg = FinetuneConfig(task="classification", epochs=20, batch_size=64,
                             lr=0.05, seed=0)
        tuned = finetune(model, imgs, labels, cfg)
        ft = micro_auroc(labels, tuned.predict(imgs))
        assert ft >= lin

    def test_regression_outputs_always_positive(self):
        imgs, _ = quadrant_xor_images(32, seed=4)
        rng = np.random.default_rng(5)
        y = rng.uniform(0.5, 3.0, 32)
        model = build_encoder(TINY, seed=1)
        cfg = FinetuneConfig(task="regression", epochs=2, batch_size=16, seed=0)
        tuned = finetune(model, imgs, y, cfg)
        assert np.all(tuned.predict(imgs) > 0.0)

    def test_bad_dropout_rejected(self):
        with pytest.raises(ConfigError):
            FinetuneConfig(dropout=1.0)
