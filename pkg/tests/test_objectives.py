import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bold_di.batch import BatchEmbeddings
from bold_di.encoder import flatten_params, init_params, num_params, unflatten_params
from bold_di.errors import InvalidInputError
from bold_di.objectives import (
    SimilarityConfig,
    batch_contrastive_loss,
    byol_loss,
    info_nce,
    momentum_update,
)

rng = np.random.default_rng(31)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_units(n, dim, seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


class TestInfoNCE:
    def test_uniform_similarities_give_log_k(self):
        z = unit(np.ones(4))
        negatives = [z.copy() for _ in range(5)]
        value = float(info_nce(z, [z.copy()], negatives, alpha=0.1))
        assert value == pytest.approx(np.log(6), abs=1e-9)

    def test_closed_form_three_way(self):
        anchor = np.array([1.0, 0.0, 0.0])
        value = float(
            info_nce(anchor, [anchor], [np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])], 1.0)
        )
        expected = -np.log(np.e / (np.e + 2.0))
        assert value == pytest.approx(expected, abs=1e-12)

    def test_matches_direct_summation_oracle(self):
        anchor = random_units(1, 6, 1)[0]
        pos = random_units(3, 6, 2)
        neg = random_units(5, 6, 3)
        value = float(info_nce(anchor, pos, neg, alpha=0.1))
        num = sum(np.exp(anchor @ p / 0.1) for p in pos)
        den = num + sum(np.exp(anchor @ n / 0.1) for n in neg)
        assert value == pytest.approx(-np.log(num / den), rel=1e-12)

    def test_negative_permutation_invariance(self):
        anchor = random_units(1, 4, 4)[0]
        pos = random_units(1, 4, 5)
        neg = random_units(6, 4, 6)
        v1 = float(info_nce(anchor, pos, neg, alpha=0.2))
        v2 = float(info_nce(anchor, pos, neg[::-1].copy(), alpha=0.2))
        assert v1 == pytest.approx(v2, rel=1e-12)

    def test_decreases_as_positive_similarity_rises(self):
        neg = random_units(4, 3, 7)
        anchor = unit([1.0, 0.0, 0.0])
        values = []
        for t in (0.0, 0.3, 0.6, 0.9):
            pos = unit([1.0, t, 0.0])  # rotating closer to the anchor changes sim
            sim = anchor @ pos
            values.append((sim, float(info_nce(anchor, [pos], neg, alpha=0.5))))
        values.sort()
        losses = [v for _, v in values]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_finite_for_small_alpha(self):
        anchor = random_units(1, 5, 8)[0]
        pos = random_units(2, 5, 9)
        neg = random_units(7, 5, 10)
        assert np.isfinite(float(info_nce(anchor, pos, neg, alpha=1e-3)))

    def test_empty_sets_rejected(self):
        anchor = unit(np.ones(3))
        with pytest.raises(InvalidInputError):
            info_nce(anchor, [], [anchor], 0.1)
        with pytest.raises(InvalidInputError):
            info_nce(anchor, [anchor], [], 0.1)

    def test_bad_alpha_rejected(self):
        anchor = unit(np.ones(3))
        with pytest.raises(InvalidInputError):
            info_nce(anchor, [anchor], [anchor], 0.0)


class TestByol:
    def test_identical_is_zero(self):
        z = unit([0.3, -0.4, 0.5])
        assert float(byol_loss(z, [z])) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_is_two(self):
        assert float(byol_loss(np.array([1.0, 0.0]), [np.array([0.0, 1.0])])) == pytest.approx(2.0)

    def test_antipodal_is_four(self):
        z = unit([1.0, 1.0])
        assert float(byol_loss(z, [-z])) == pytest.approx(4.0, abs=1e-12)

    def test_scale_invariance_through_cosine(self):
        p = np.array([0.2, 0.5, -0.1])
        t = np.array([0.4, -0.3, 0.8])
        v1 = float(byol_loss(p, [t]))
        v2 = float(byol_loss(3.0 * p, [0.5 * t]))
        assert v1 == pytest.approx(v2, rel=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(InvalidInputError):
            byol_loss(np.zeros(3), [unit(np.ones(3))])
        with pytest.raises(InvalidInputError):
            byol_loss(unit(np.ones(3)), [np.zeros(3)])


class TestMomentum:
    def test_gamma_one_keeps_target(self):
        a = init_params(np.random.default_rng(1), 4, 3)
        b = init_params(np.random.default_rng(2), 4, 3)
        out = momentum_update(a, b, 1.0)
        assert np.array_equal(flatten_params(out), flatten_params(a))

    def test_gamma_zero_copies_online(self):
        a = init_params(np.random.default_rng(3), 4, 3)
        b = init_params(np.random.default_rng(4), 4, 3)
        out = momentum_update(a, b, 0.0)
        assert np.array_equal(flatten_params(out), flatten_params(b))

    def test_midpoint_arithmetic(self):
        a = init_params(np.random.default_rng(5), 4, 3)
        zeros = unflatten_params(a, np.zeros(num_params(a)))
        twos = unflatten_params(a, np.full(num_params(a), 2.0))
        out = momentum_update(zeros, twos, 0.5)
        assert np.array_equal(flatten_params(out), np.ones(num_params(a)))

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=50, deadline=None)
    def test_affine_in_gamma(self, g1, g2):
        a = init_params(np.random.default_rng(6), 3, 2)
        b = init_params(np.random.default_rng(7), 3, 2)
        fa, fb = flatten_params(a), flatten_params(b)
        mid = momentum_update(a, b, (g1 + g2) / 2.0)
        v1 = momentum_update(a, b, g1)
        v2 = momentum_update(a, b, g2)
        avg = (flatten_params(v1) + flatten_params(v2)) / 2.0
        assert np.allclose(flatten_params(mid), avg, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        a = init_params(np.random.default_rng(8), 4, 3)
        b = init_params(np.random.default_rng(9), 4, 4)
        with pytest.raises(InvalidInputError):
            momentum_update(a, b, 0.5)

    def test_gamma_out_of_range_rejected(self):
        a = init_params(np.random.default_rng(8), 4, 3)
        with pytest.raises(InvalidInputError):
            momentum_update(a, a, 1.5)


class TestBatchLoss:
    def make_batch(self, n_videos=2, rho=2, dim=4, seed=11, **kw):
        z = random_units(n_videos * rho, dim, seed)
        video_ids = np.repeat(np.arange(n_videos), rho)
        view_ids = np.tile(np.arange(rho), n_videos)
        return BatchEmbeddings(views=z, video_ids=video_ids, view_ids=view_ids, **kw)

    def test_identical_embeddings_simclr_log3(self):
        z = unit(np.ones(4))
        batch = BatchEmbeddings(
            views=np.stack([z] * 4), video_ids=[0, 0, 1, 1], view_ids=[0, 1, 0, 1]
        )
        value = float(batch_contrastive_loss(batch, SimilarityConfig(variant="simclr", alpha=0.1)))
        assert value == pytest.approx(np.log(3.0), abs=1e-9)

    def test_simclr_matches_per_term_oracle(self):
        batch = self.make_batch(n_videos=3, rho=2, seed=12)
        cfg = SimilarityConfig(variant="simclr", alpha=0.1)
        value = float(batch_contrastive_loss(batch, cfg))
        terms = []
        for t in range(batch.n_views):
            pos = [batch.views[p] for p in batch.positive_indices(t)]
            neg = [batch.views[s] for s in batch.negative_indices(t)]
            terms.append(float(info_nce(batch.views[t], pos, neg, 0.1)))
        assert value == pytest.approx(np.mean(terms), rel=1e-12)

    def test_byol_predictions_equal_targets_zero(self):
        z = random_units(4, 4, 13)
        batch = BatchEmbeddings(
            views=z,
            video_ids=[0, 0, 1, 1],
            view_ids=[0, 1, 0, 1],
            targets=z.copy(),
            predictions=z.copy(),
        )
        # Positives of each anchor are the *other* views; make all views of a
        # video identical so prediction == target exactly.
        z2 = np.stack([z[0], z[0], z[2], z[2]])
        batch = BatchEmbeddings(
            views=z2, video_ids=[0, 0, 1, 1], view_ids=[0, 1, 0, 1], targets=z2, predictions=z2
        )
        value = float(batch_contrastive_loss(batch, SimilarityConfig(variant="byol")))
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_byol_matches_per_term_oracle(self):
        z = random_units(4, 4, 14)
        preds = random_units(4, 4, 15)
        batch = BatchEmbeddings(
            views=z, video_ids=[0, 0, 1, 1], view_ids=[0, 1, 0, 1], targets=z, predictions=preds
        )
        value = float(batch_contrastive_loss(batch, SimilarityConfig(variant="byol")))
        terms = [
            float(byol_loss(preds[t], [z[p] for p in batch.positive_indices(t)]))
            for t in range(4)
        ]
        assert value == pytest.approx(np.mean(terms), rel=1e-12)

    def test_moco_uses_queue_negatives(self):
        batch = self.make_batch(seed=16, targets=random_units(4, 4, 17), queue=random_units(9, 4, 18))
        cfg = SimilarityConfig(variant="moco", alpha=0.1)
        value = float(batch_contrastive_loss(batch, cfg))
        terms = []
        for t in range(batch.n_views):
            pos = [batch.targets[p] for p in batch.positive_indices(t)]
            terms.append(float(info_nce(batch.views[t], pos, batch.queue, 0.1)))
        assert value == pytest.approx(np.mean(terms), rel=1e-12)

    def test_moco_cold_queue_falls_back_to_batch(self):
        batch = self.make_batch(seed=19, targets=random_units(4, 4, 20), queue=None)
        cfg = SimilarityConfig(variant="moco", alpha=0.1)
        value = float(batch_contrastive_loss(batch, cfg))
        assert np.isfinite(value)

    def test_missing_positive_rejected(self):
        z = random_units(3, 4, 21)
        batch = BatchEmbeddings(views=z, video_ids=[0, 1, 2], view_ids=[0, 0, 0])
        with pytest.raises(InvalidInputError):
            batch_contrastive_loss(batch, SimilarityConfig(variant="simclr"))

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            SimilarityConfig(alpha=-1.0)
        with pytest.raises(InvalidInputError):
            SimilarityConfig(variant="swav")
        with pytest.raises(InvalidInputError):
            SimilarityConfig(similarity="l2")
