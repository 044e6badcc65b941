import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sslscene import losses
from sslscene.losses import ContrastiveConfig, EmbeddingBatch, LossInputError

import oracles

TAU1 = ContrastiveConfig(temperature=1.0)


def random_batch(rng, n_pairs=None, dim=None):
    n_pairs = n_pairs or int(rng.integers(1, 9))
    dim = dim or int(rng.integers(2, 17))
    return EmbeddingBatch(rng.normal(size=(2 * n_pairs, dim)))


class TestCosine:
    def test_parallel(self):
        assert losses.cosine_sim([1, 0], [1, 0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert losses.cosine_sim([1, 0], [0, 1]) == pytest.approx(0.0)

    def test_analytic(self):
        assert losses.cosine_sim([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2))

    def test_zero_vector_guarded(self):
        assert losses.cosine_sim([0, 0], [1, 2]) == 0.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            u, v = rng.normal(size=(2, 5))
            assert losses.cosine_sim(u, v) == pytest.approx(oracles.cosine_oracle(u, v), rel=1e-12)


class TestNtXentAnchors:
    def test_single_pair_is_zero(self):
        # with only two views, the denominator equals the numerator
        rng = np.random.default_rng(5)
        for _ in range(10):
            batch = EmbeddingBatch(rng.normal(size=(2, 7)))
            assert abs(losses.nt_xent_batch(batch, TAU1)) < 1e-12

    def test_symmetric_two_pair_value(self):
        batch = EmbeddingBatch(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]))
        expected = math.log((math.e + 2.0) / math.e)  # ~0.5514
        assert losses.nt_xent_pair(batch, 0, 1, TAU1) == pytest.approx(expected, abs=1e-12)
        assert losses.nt_xent_batch(batch, TAU1) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.5514, abs=1e-4)

    def test_unregistered_pair_rejected(self):
        batch = EmbeddingBatch(np.eye(4))
        with pytest.raises(LossInputError):
            losses.nt_xent_pair(batch, 0, 2, TAU1)

    def test_non_negative(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            batch = random_batch(rng)
            assert losses.nt_xent_batch(batch, ContrastiveConfig(temperature=float(rng.uniform(0.05, 1)))) >= 0.0

    def test_temperature_monotone_at_optimum(self):
        batch = EmbeddingBatch(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]))
        values = [
            losses.nt_xent_pair(batch, 0, 1, ContrastiveConfig(temperature=t))
            for t in (1.0, 0.5, 0.1)
        ]
        assert values[0] > values[1] > values[2]


class TestNtXentOracleEquivalence:
    def test_hundred_random_batches(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            batch = random_batch(rng)
            tau = float(rng.uniform(0.05, 1.0))
            cfg = ContrastiveConfig(temperature=tau)
            want = oracles.nt_xent_batch_oracle(batch.vectors, tau)
            got = losses.nt_xent_batch(batch, cfg)
            assert got == pytest.approx(want, rel=1e-9)
            i = int(rng.integers(0, batch.vectors.shape[0]))
            j = int(batch.pair_of[i])
            assert losses.nt_xent_pair(batch, i, j, cfg) == pytest.approx(
                oracles.nt_xent_pair_oracle(batch.vectors, i, j, tau), rel=1e-9
            )

    def test_scale_invariance(self):
        rng = np.random.default_rng(7)
        cfg = ContrastiveConfig(temperature=0.3)
        for _ in range(20):
            batch = random_batch(rng)
            base = losses.nt_xent_batch(batch, cfg)
            for c in (0.01, 3.0, 250.0):
                scaled = EmbeddingBatch(batch.vectors * c)
                assert losses.nt_xent_batch(scaled, cfg) == pytest.approx(base, rel=1e-9, abs=1e-12)

    @given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_pair_permutation_equivariance(self, n_pairs, seed):
        rng = np.random.default_rng(seed)
        vectors = rng.normal(size=(2 * n_pairs, 5))
        cfg = ContrastiveConfig(temperature=0.4)
        base = losses.nt_xent_batch(EmbeddingBatch(vectors), cfg)
        perm = rng.permutation(n_pairs)
        shuffled = np.concatenate([vectors[2 * p : 2 * p + 2] for p in perm])
        assert losses.nt_xent_batch(EmbeddingBatch(shuffled), cfg) == pytest.approx(base, rel=1e-9)


class TestEmbeddingBatchValidation:
    def test_odd_count_rejected(self):
        with pytest.raises(LossInputError):
            EmbeddingBatch(np.ones((3, 2)))

    def test_nan_rejected(self):
        bad = np.ones((4, 2))
        bad[1, 1] = np.nan
        with pytest.raises(LossInputError):
            EmbeddingBatch(bad)

    def test_bad_pairing_rejected(self):
        with pytest.raises(LossInputError):
            EmbeddingBatch(np.ones((4, 2)), pair_of=np.array([0, 1, 2, 3]))


class TestJigsawLoss:
    def test_one_hot_rows_zero(self):
        probs = np.eye(9)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            # one-hot rows contain zeros off the true position only
            assert losses.jigsaw_loss(probs, np.arange(9)) == pytest.approx(0.0)

    def test_uniform_three_by_three(self):
        probs = np.full((9, 9), 1.0 / 9.0)
        assert losses.jigsaw_loss(probs, np.arange(9)) == pytest.approx(9 * math.log(9), rel=1e-9)

    def test_single_soft_patch(self):
        probs = np.eye(9)
        probs[4] = 0.1 / 8
        probs[4, 4] = 0.9  # keep row normalized
        probs[4] = np.where(np.arange(9) == 4, 0.1, 0.9 / 8)
        assert losses.jigsaw_loss(probs, np.arange(9)) == pytest.approx(-math.log(0.1), rel=1e-9)

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            probs = losses.softmax(rng.normal(size=(9, 9)))
            pos = rng.permutation(9)
            assert losses.jigsaw_loss(probs, pos) == pytest.approx(
                oracles.jigsaw_oracle(probs, pos), rel=1e-12
            )

    def test_unnormalized_rows_rejected(self):
        probs = np.full((4, 4), 0.3)
        with pytest.raises(LossInputError):
            losses.jigsaw_loss(probs, np.arange(4))

    def test_zero_probability_clamped_and_flagged(self):
        probs = np.eye(4)
        positions = np.array([1, 0, 2, 3])  # rows 0/1 have zero mass at the true cell
        with pytest.warns(RuntimeWarning):
            value = losses.jigsaw_loss(probs, positions)
        assert np.isfinite(value) and value > 0

    def test_per_patch_mean_option(self):
        probs = np.full((9, 9), 1.0 / 9.0)
        assert losses.jigsaw_loss(probs, np.arange(9), per_patch_mean=True) == pytest.approx(
            math.log(9)
        )


class TestInpaintLoss:
    def test_exact_zero(self):
        x = np.random.default_rng(0).random((3, 8, 8))
        assert losses.inpaint_loss(x, x) == 0.0

    def test_unit_offset(self):
        x = np.zeros((2, 4, 4))
        assert losses.inpaint_loss(x + 1.0, x, region="full") == pytest.approx(1.0)

    def test_quarter_diff(self):
        pred = np.array([[[1.0, 1.0], [0.0, 0.0]]])
        target = np.zeros((1, 2, 2))
        assert losses.inpaint_loss(pred, target, region="full") == pytest.approx(0.5)

    def test_masked_region(self):
        rng = np.random.default_rng(1)
        pred, target = rng.random((2, 3, 6, 6))
        mask = np.zeros((6, 6), bool)
        mask[1:3, 2:5] = True
        assert losses.inpaint_loss(pred, target, mask, region="masked") == pytest.approx(
            oracles.inpaint_oracle(pred, target, mask, region="masked"), rel=1e-12
        )

    def test_empty_mask_rejected(self):
        x = np.zeros((1, 4, 4))
        with pytest.raises(LossInputError):
            losses.inpaint_loss(x, x, np.zeros((4, 4), bool), region="masked")

    def test_shape_mismatch_rejected(self):
        with pytest.raises(LossInputError):
            losses.inpaint_loss(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


class TestGradCheck:
    def test_quadratic(self):
        fn = lambda x: (float((x**2).sum()), 2.0 * x)
        x = np.random.default_rng(0).normal(size=(5, 3))
        assert losses.grad_check(fn, x, eps=1e-5) <= 1e-7

    def test_wrong_gradient_detected(self):
        fn = lambda x: (float((x**2).sum()), 2.5 * x)
        x = np.random.default_rng(0).normal(size=4)
        assert losses.grad_check(fn, x) > 0.1

    def test_nt_xent_gradient(self):
        rng = np.random.default_rng(12)
        cfg = ContrastiveConfig(temperature=0.5)
        z = rng.normal(size=(8, 6))
        fn = lambda v: losses.nt_xent_batch_grad(EmbeddingBatch(v), cfg)
        assert losses.grad_check(fn, z, eps=1e-6) <= 1e-4

    def test_jigsaw_gradient_through_softmax(self):
        rng = np.random.default_rng(13)
        pos = rng.permutation(9)
        logits = rng.normal(size=(9, 9))
        fn = lambda l: losses.jigsaw_logits_grad(l, pos)
        assert losses.grad_check(fn, logits, eps=1e-6) <= 1e-4

    def test_inpaint_gradient(self):
        rng = np.random.default_rng(14)
        target = rng.random((2, 5, 5))
        mask = np.zeros((5, 5), bool)
        mask[1:4, 2:4] = True
        pred = rng.random((2, 5, 5))
        for region, m in (("full", None), ("masked", mask)):
            fn = lambda p: losses.inpaint_loss_grad(p, target, m, region=region)
            assert losses.grad_check(fn, pred, eps=1e-6) <= 1e-4


class TestConfigValidation:
    def test_bad_temperature(self):
        with pytest.raises(LossInputError):
            ContrastiveConfig(temperature=0.0)

    def test_bad_epsilon(self):
        with pytest.raises(LossInputError):
            ContrastiveConfig(epsilon=-1.0)
