import math
from dataclasses import replace

import numpy as np
import pytest

from auadapt.dataset import Dataset, Dims
from auadapt.model import (AdamState, Batch, HeadParams, TrainConfig, adam_step, backward,
                           ce_loss, evaluate, forward, init_head, kl_loss, load_params, lr_at,
                           predict_probs, save_params, total_loss, train, triplet_loss)
from auadapt.synth import SynthConfig, generate
from auadapt.triplets import MiningConfig, mine_triplets
from auadapt.annotate import annotate_datasets
from auadapt.dataset import strip_hidden_labels

from oracles import max_rel_error, numeric_gradient, random_batch, random_params

SMALL = SynthConfig(n_classes=3, feature_dim=6, au_count=5, n_source=90, n_target=90,
                    seed=0)
QUICK = TrainConfig(epochs=4, batch_size=32, hidden_dim=12, seed=0)


class TestForward:
    def test_probs_are_a_distribution(self):
        rng = np.random.default_rng(0)
        params = random_params(rng, D=5, H=7, C=4)
        for _ in range(20):
            out = forward(params, rng.normal(size=5))
            assert out.probs.min() > 0
            assert abs(out.probs.sum() - 1.0) <= 1e-9

    def test_embedding_is_unit_norm(self):
        rng = np.random.default_rng(1)
        params = random_params(rng, D=5, H=7, C=4)
        out = forward(params, rng.normal(size=5))
        assert abs(np.linalg.norm(out.embedding) - 1.0) <= 1e-9

    def test_zero_hidden_gives_zero_embedding(self):
        params = HeadParams(np.zeros((4, 3)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))
        out = forward(params, [1.0, -2.0, 3.0])
        assert np.array_equal(out.embedding, np.zeros(4))

    def test_zero_params_give_uniform_probs(self):
        params = HeadParams(np.zeros((4, 3)), np.zeros(4), np.zeros((5, 4)), np.zeros(5))
        out = forward(params, [0.3, 0.1, -0.2])
        assert np.allclose(out.probs, 0.2)

    def test_feature_length_checked(self):
        params = HeadParams(np.zeros((4, 3)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))
        with pytest.raises(ValueError):
            forward(params, [1.0, 2.0])


class TestLosses:
    def test_ce_perfect_prediction(self):
        assert ce_loss([0.0, 1.0, 0.0], 1) == 0.0

    def test_ce_uniform_seven_classes(self):
        assert ce_loss(np.full(7, 1 / 7), 3) == pytest.approx(math.log(7), abs=1e-12)

    def test_ce_clamped_at_zero_probability(self):
        value = ce_loss([1.0, 0.0], 1)
        assert value == pytest.approx(-math.log(1e-12))
        assert math.isfinite(value)

    def test_ce_label_range(self):
        with pytest.raises(ValueError):
            ce_loss([0.5, 0.5], 2)

    def test_kl_identity(self):
        p = np.array([0.2, 0.3, 0.5])
        assert kl_loss(p, p) <= 1e-9

    def test_kl_known_value(self):
        # 0.5*ln(2) + 0.5*ln(2/3) = 0.143841...
        assert kl_loss([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.1438, abs=1e-3)

    def test_kl_one_hot_reduces_to_ce(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = rng.dirichlet(np.ones(5))
            label = int(rng.integers(5))
            onehot = np.zeros(5)
            onehot[label] = 1.0
            assert abs(kl_loss(onehot, p) - ce_loss(p, label)) <= 1e-9

    def test_kl_length_mismatch(self):
        with pytest.raises(ValueError):
            kl_loss([0.5, 0.5], [0.3, 0.3, 0.4])

    def test_triplet_satisfied_margin(self):
        a = np.array([1.0, 0.0])
        n = np.array([0.0, 1.0])  # distance sqrt(2)
        assert triplet_loss(a, a, n, 0.5) == 0.0

    def test_triplet_collapsed_embeddings(self):
        a = np.array([0.6, 0.8])
        assert triplet_loss(a, a, a, 0.5) == 0.5

    def test_triplet_known_value(self):
        value = triplet_loss([1.0, 0.0], [0.6, 0.8], [0.8, 0.6], 0.5)
        # dp = sqrt(0.8), dn = sqrt(0.4): 0.5 - (dn - dp) = 0.76197...
        assert value == pytest.approx(0.7619, abs=1e-3)

    def test_triplet_zero_when_gap_exceeds_margin(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = rng.normal(size=4)
            p = rng.normal(size=4)
            n = rng.normal(size=4)
            a, p, n = (v / np.linalg.norm(v) for v in (a, p, n))
            gamma = 0.5
            gap = np.linalg.norm(a - n) - np.linalg.norm(a - p)
            if gap >= gamma:
                assert triplet_loss(a, p, n, gamma) == 0.0


class TestTotalLoss:
    def test_beta_zero_is_pure_source_ce(self):
        rng = np.random.default_rng(4)
        batch = random_batch(rng, D=5, C=3)
        params = random_params(rng, D=5, H=6, C=3)
        bd = total_loss(batch, params, TrainConfig(beta=0.0))
        probs = np.stack([forward(params, x).probs for x in batch.src_X])
        expect = np.mean([ce_loss(p, y) for p, y in zip(probs, batch.src_y)])
        assert bd.L_c == pytest.approx(expect, rel=1e-12)

    def test_epsilon_zero_means_l_all_equals_l_c(self):
        rng = np.random.default_rng(5)
        batch = random_batch(rng, D=5, C=3)
        params = random_params(rng, D=5, H=6, C=3)
        bd = total_loss(batch, params, TrainConfig(epsilon=0.0))
        assert bd.L_all == bd.L_c
        assert bd.L_tri == 0.0

    def test_zero_params_single_source_sample(self):
        params = HeadParams(np.zeros((4, 3)), np.zeros(4), np.zeros((7, 4)), np.zeros(7))
        batch = Batch.empty(3, 7)
        batch.src_X = np.array([[0.5, -0.5, 1.0]])
        batch.src_y = np.array([2])
        bd = total_loss(batch, params, TrainConfig())
        assert bd.L_all == pytest.approx(math.log(7), abs=1e-12)

    def test_decomposition_identity(self):
        rng = np.random.default_rng(6)
        for eps in (0.0, 0.5, 1.0, 2.0):
            batch = random_batch(rng, D=4, C=3)
            params = random_params(rng, D=4, H=5, C=3)
            config = TrainConfig(epsilon=eps)
            bd = total_loss(batch, params, config)
            assert bd.L_all == bd.L_c + eps * bd.L_tri


class TestGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        for trial in range(6):
            D, H, C = 4 + trial % 3, 5, 3
            batch = random_batch(rng, D=D, C=C)
            learnable = trial % 2 == 0
            params = random_params(rng, D=D, H=H, C=C, learnable=learnable)
            config = TrainConfig(beta=0.7, epsilon=1.3, gamma_learnable=learnable)
            grads = backward(batch, params, config)
            ref = numeric_gradient(batch, params, config)
            for name in ("W1", "b1", "W2", "b2"):
                assert max_rel_error(getattr(grads, name), ref[name]) <= 1e-4
            if learnable:
                assert max_rel_error([grads.margin_raw], [ref["margin_raw"]]) <= 1e-4

    def test_reverse_kl_direction_gradient(self):
        rng = np.random.default_rng(8)
        batch = random_batch(rng, D=4, C=3, n_tri=0)
        params = random_params(rng, D=4, H=5, C=3)
        config = TrainConfig(kl_direction="pred||soft")
        grads = backward(batch, params, config)
        ref = numeric_gradient(batch, params, config)
        for name in ("W1", "b1", "W2", "b2"):
            assert max_rel_error(getattr(grads, name), ref[name]) <= 1e-4

    def test_epsilon_zero_ignores_triplet_inputs(self):
        rng = np.random.default_rng(9)
        batch = random_batch(rng, D=4, C=3)
        params = random_params(rng, D=4, H=5, C=3)
        config = TrainConfig(epsilon=0.0)
        g1 = backward(batch, params, config)
        batch.tri_anchor_X = rng.normal(size=batch.tri_anchor_X.shape)
        g2 = backward(batch, params, config)
        for name in ("W1", "b1", "W2", "b2"):
            assert np.array_equal(getattr(g1, name), getattr(g2, name))

    def test_margin_gradient_zero_when_all_hinges_inactive(self):
        D, H, C = 3, 4, 2
        params = HeadParams(np.eye(H, D), np.zeros(H), np.zeros((C, H)), np.zeros(C),
                            margin_raw=0.2)
        batch = Batch.empty(D, C)
        # orthogonal positive/negative placement: dn - dp = sqrt(2) > margin
        batch.tri_anchor_X = np.array([[1.0, 0.0, 0.0]])
        batch.tri_pos_X = np.array([[1.0, 0.0, 0.0]])
        batch.tri_neg_X = np.array([[0.0, 1.0, 0.0]])
        grads = backward(batch, params, TrainConfig(gamma_learnable=True))
        assert grads.margin_raw == 0.0


class TestAdam:
    def _params(self):
        rng = np.random.default_rng(10)
        return random_params(rng, D=3, H=4, C=2, learnable=True)

    def _zero_grads(self, params):
        from auadapt.model import HeadGrads
        return HeadGrads(np.zeros_like(params.W1), np.zeros_like(params.b1),
                         np.zeros_like(params.W2), np.zeros_like(params.b2), 0.0)

    def test_zero_gradient_leaves_params_unchanged(self):
        params = self._params()
        state = AdamState.for_params(params)
        new, _ = adam_step(params, self._zero_grads(params), state, 0.01)
        for name in ("W1", "b1", "W2", "b2"):
            assert np.array_equal(getattr(new, name), getattr(params, name))
        assert new.margin_raw == params.margin_raw

    def test_first_step_identity(self):
        params = self._params()
        state = AdamState.for_params(params)
        grads = self._zero_grads(params)
        g = np.random.default_rng(11).normal(size=params.W1.shape)
        grads.W1 = g
        new, _ = adam_step(params, grads, state, 0.01)
        expect = params.W1 - 0.01 * g / (np.abs(g) + 1e-8)
        assert np.allclose(new.W1, expect, atol=1e-12)

    def test_margin_clamped_nonnegative(self):
        params = self._params()
        params.margin_raw = 1e-5
        state = AdamState.for_params(params)
        grads = self._zero_grads(params)
        grads.margin_raw = 1.0
        new, state = adam_step(params, grads, state, 0.01)
        assert new.margin_raw == 0.0

    def test_repeated_runs_bitwise_identical(self):
        rng1 = np.random.default_rng(12)
        rng2 = np.random.default_rng(12)

        def run(rng):
            params = random_params(rng, D=3, H=4, C=2)
            state = AdamState.for_params(params)
            for _ in range(10):
                grads = self._zero_grads(params)
                grads.W1 = rng.normal(size=params.W1.shape)
                params, state = adam_step(params, grads, state, 0.005)
            return params

        a, b = run(rng1), run(rng2)
        assert a.W1.tobytes() == b.W1.tobytes()


class TestLrSchedule:
    def test_epoch_zero(self):
        assert lr_at(0, TrainConfig()) == 0.001

    def test_epoch_two(self):
        assert lr_at(2, TrainConfig()) == pytest.approx(0.00081, abs=1e-12)

    def test_constant_when_decay_is_one(self):
        config = TrainConfig(lr_decay=1.0)
        assert lr_at(17, config) == config.lr

    def test_exact_powers(self):
        config = TrainConfig()
        for e in range(40):
            assert abs(lr_at(e, config) - 0.001 * 0.9 ** e) <= 1e-12


class TestInit:
    def test_deterministic(self):
        a = init_head(Dims(32, 17, 7), 64, seed=3)
        b = init_head(Dims(32, 17, 7), 64, seed=3)
        assert a.W1.tobytes() == b.W1.tobytes()
        assert a.W2.tobytes() == b.W2.tobytes()

    def test_shapes(self):
        p = init_head(Dims(32, 17, 7), 64, seed=0)
        assert p.W1.shape == (64, 32)
        assert p.W2.shape == (7, 64)

    def test_biases_zero(self):
        p = init_head(Dims(8, 3, 4), 16, seed=1)
        assert not p.b1.any()
        assert not p.b2.any()

    def test_scale_respects_fan_in(self):
        p = init_head(Dims(16, 3, 4), 8, seed=2)
        assert np.abs(p.W1).max() <= 1 / math.sqrt(16)
        assert np.abs(p.W2).max() <= 1 / math.sqrt(8)

    def test_margin_only_in_learnable_mode(self):
        assert init_head(Dims(4, 3, 2), 4, 0).margin_raw is None
        assert init_head(Dims(4, 3, 2), 4, 0, learnable_margin=True).margin_raw == 0.5


class TestEvaluate:
    def test_perfect_classifier(self):
        source, target, _ = generate(SMALL)
        # few steps per epoch at this scale, so a larger lr is needed to converge
        params, _ = train(source, None, [], [], replace(QUICK, epochs=12, lr=0.01,
                                                        beta=0.0, epsilon=0.0))
        metrics = evaluate(params, source)
        assert metrics.accuracy == 1.0
        assert np.array_equal(np.diag(np.diag(metrics.confusion)), metrics.confusion)

    def test_uniform_model_predicts_class_zero(self):
        source, _, _ = generate(SMALL)
        params = HeadParams(np.zeros((4, 6)), np.zeros(4), np.zeros((3, 4)), np.zeros(3))
        metrics = evaluate(params, source)
        assert metrics.confusion[:, 0].sum() == len(source)

    def test_confusion_sums_to_n(self):
        source, _, _ = generate(SMALL)
        rng = np.random.default_rng(13)
        params = random_params(rng, D=6, H=5, C=3)
        metrics = evaluate(params, source)
        assert metrics.confusion.sum() == len(source)

    def test_empty_dataset_rejected(self):
        params = HeadParams(np.zeros((4, 6)), np.zeros(4), np.zeros((3, 4)), np.zeros(3))
        empty = Dataset((), Dims(6, 5, 3), ("a", "b", "c"))
        with pytest.raises(ValueError):
            evaluate(params, empty)


class TestParamsIO:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(14)
        for learnable in (False, True):
            params = random_params(rng, D=6, H=9, C=4, learnable=learnable)
            path = tmp_path / f"params_{learnable}.txt"
            save_params(params, path)
            loaded = load_params(path)
            for name in ("W1", "b1", "W2", "b2"):
                assert getattr(loaded, name).tobytes() == getattr(params, name).tobytes()
            assert loaded.margin_raw == params.margin_raw


class TestTrain:
    def _pools(self, config=None):
        source, target, _ = generate(SMALL)
        tgt = strip_hidden_labels(target)
        anns = annotate_datasets(source, tgt)
        tris = mine_triplets(source, tgt, MiningConfig(seed=0))
        return source, target, tgt, anns, tris

    def test_same_seed_is_bitwise_reproducible(self):
        source, target, tgt, anns, tris = self._pools()
        p1, h1 = train(source, tgt, anns, tris, QUICK)
        p2, h2 = train(source, tgt, anns, tris, QUICK)
        assert p1.W1.tobytes() == p2.W1.tobytes()
        assert p1.W2.tobytes() == p2.W2.tobytes()
        assert [r.L_all for r in h1.rows] == [r.L_all for r in h2.rows]

    def test_empty_source_rejected(self):
        source, target, tgt, anns, tris = self._pools()
        empty = Dataset((), source.dims, source.class_names)
        with pytest.raises(ValueError, match="empty source"):
            train(empty, tgt, [], [], QUICK)

    def test_source_only_training_ignores_target_data(self):
        source, target, tgt, anns, tris = self._pools()
        config = replace(QUICK, beta=0.0, epsilon=0.0)
        p1, _ = train(source, tgt, anns, tris, config)
        p2, _ = train(source, None, [], [], config)
        assert p1.W1.tobytes() == p2.W1.tobytes()
        assert p1.W2.tobytes() == p2.W2.tobytes()

    def test_hidden_label_permutation_does_not_change_params(self):
        from dataclasses import replace as dc_replace
        source, target, tgt_stripped, anns, tris = self._pools()
        rng = np.random.default_rng(15)
        hidden = [s.hidden_label for s in target.samples]
        permuted = tuple(dc_replace(s, hidden_label=h) for s, h in
                         zip(target.samples, [hidden[i] for i in rng.permutation(len(hidden))]))
        target_permuted = Dataset(permuted, target.dims, target.class_names)
        p1, _ = train(source, target, anns, tris, QUICK)
        p2, _ = train(source, target_permuted, anns, tris, QUICK)
        assert p1.W1.tobytes() == p2.W1.tobytes()
        assert p1.b1.tobytes() == p2.b1.tobytes()
        assert p1.W2.tobytes() == p2.W2.tobytes()
        assert p1.b2.tobytes() == p2.b2.tobytes()

    def test_history_lr_column(self):
        source, target, tgt, anns, tris = self._pools()
        _, history = train(source, tgt, anns, tris, QUICK)
        for row in history.rows:
            assert abs(row.lr - QUICK.lr * QUICK.lr_decay ** row.epoch) <= 1e-12

    def test_history_csv_roundtrip(self, tmp_path):
        from auadapt.model import TrainHistory
        source, target, tgt, anns, tris = self._pools()
        _, history = train(source, tgt, anns, tris, QUICK, eval_dataset=target)
        path = tmp_path / "history.csv"
        history.write_csv(path)
        loaded = TrainHistory.read_csv(path)
        assert len(loaded.rows) == len(history.rows)
        for a, b in zip(history.rows, loaded.rows):
            assert a.lr == b.lr
            assert a.L_all == b.L_all
            assert a.target_accuracy == b.target_accuracy

    def test_margin_monotone_under_active_hinges(self):
        source, target, tgt, anns, tris = self._pools()
        config = replace(QUICK, epochs=6, gamma_learnable=True)
        _, history = train(source, tgt, anns, tris, config)
        margins = [r.gamma_value for r in history.rows]
        assert margins[0] <= 0.5
        assert all(b <= a + 1e-12 for a, b in zip(margins, margins[1:]))
        assert all(m >= 0.0 for m in margins)

    def test_margin_frozen_without_triplet_term(self):
        source, target, tgt, anns, tris = self._pools()
        config = replace(QUICK, epsilon=0.0, gamma_learnable=True)
        _, history = train(source, tgt, anns, tris, config)
        assert all(r.gamma_value == 0.5 for r in history.rows)

    def test_predict_probs_matches_forward(self):
        source, _, _ = generate(SMALL)
        rng = np.random.default_rng(16)
        params = random_params(rng, D=6, H=5, C=3)
        probs = predict_probs(params, source)
        one = forward(params, source.samples[3].features).probs
        # batched BLAS and single-row paths may differ in the last ulp
        assert np.allclose(probs[3], one, rtol=1e-12, atol=0.0)
