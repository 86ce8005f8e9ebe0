import numpy as np
import pytest

from bold_di.encoder import identity_params, init_params
from bold_di.errors import InvalidInputError
from bold_di.probes import (
    ProbeReport,
    append_report,
    clip_features,
    fit_multinomial,
    linear_probe,
    linear_probe_full,
    mean_only_features,
    order_discrimination_probe,
    params_id,
    static_degradation_probe,
    train_supervised,
)
from bold_di.synth import Clip, GeneratorConfig, generate_dataset, make_static_clip


def rotation_dataset(n=60, seed=2, **kw):
    base = dict(
        num_videos=n,
        frames=24,
        obs_dim=6,
        static_blocks=1,
        rotation_ranges=((0.3, 1.2),),
        decay_ranges=((0.4, 0.6),),
        label_mode="by_rotation_angle",
        num_classes=2,
        noise_std=0.01,
        seed=seed,
    )
    base.update(kw)
    return generate_dataset(GeneratorConfig(**base))


def synthetic_clips_from_embeddings(embeddings, labels):
    """Clips whose frames equal a fixed vector, so identity-encoder features
    reduce to that vector (displacements all zero)."""
    clips = []
    for i, (z, y) in enumerate(zip(embeddings, labels)):
        frames = np.tile(z, (3, 1))
        clips.append(Clip(frames=frames, video_id=i, label=int(y)))
    return clips


class TestFitMultinomial:
    def test_separable_reaches_perfect_train_accuracy(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(size=(40, 3)) + 4.0, rng.normal(size=(40, 3)) - 4.0])
        y = np.array([0] * 40 + [1] * 40)
        clf = fit_multinomial(x, y)
        assert clf.accuracy(x, y) == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(InvalidInputError):
            fit_multinomial(np.ones((10, 2)), np.zeros(10, dtype=int))

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 4))
        y = (x[:, 0] > 0).astype(int)
        w1 = fit_multinomial(x, y).weights
        w2 = fit_multinomial(x, y).weights
        assert np.array_equal(w1, w2)


class TestLinearProbe:
    def test_separable_embeddings_give_perfect_accuracy(self):
        rng = np.random.default_rng(3)
        z0 = rng.normal(size=(40, 5)) + np.array([6, 0, 0, 0, 0])
        z1 = rng.normal(size=(40, 5)) - np.array([6, 0, 0, 0, 0])
        clips = synthetic_clips_from_embeddings(
            np.concatenate([z0, z1]), [0] * 40 + [1] * 40
        )
        report = linear_probe(identity_params(5), clips, seed=0)
        assert report.accuracy == 1.0
        assert report.probe == "linear"

    def test_random_labels_near_chance(self):
        rng = np.random.default_rng(4)
        embeddings = rng.normal(size=(1000, 4))
        labels = rng.integers(0, 2, size=1000)
        clips = synthetic_clips_from_embeddings(embeddings, labels)
        report = linear_probe(identity_params(4), clips, seed=0)
        assert abs(report.accuracy - 0.5) <= 0.1
        assert report.n_samples == 200

    def test_deterministic_reports(self):
        clips = rotation_dataset()
        params = init_params(np.random.default_rng(5), 6, 4, hidden_dims=(8,))
        r1 = linear_probe(params, clips, seed=9)
        r2 = linear_probe(params, clips, seed=9)
        assert r1 == r2

    def test_single_class_rejected(self):
        clips = rotation_dataset(n=10, num_classes=2)
        for c in clips:
            c.label = 0
        params = init_params(np.random.default_rng(6), 6, 4, hidden_dims=(8,))
        with pytest.raises(InvalidInputError):
            linear_probe(params, clips, seed=0)

    def test_accuracy_bounds_enforced(self):
        with pytest.raises(InvalidInputError):
            ProbeReport(probe="x", accuracy=1.5, n_samples=1, seed=0, checkpoint="c")


class TestStaticDegradation:
    def test_constant_clips_identical_accuracies(self):
        # For constant clips, the static version equals the original.
        rng = np.random.default_rng(7)
        embeddings = rng.normal(size=(60, 4))
        labels = (embeddings[:, 0] > 0).astype(int)
        clips = synthetic_clips_from_embeddings(embeddings, labels)
        params = identity_params(4)
        _, clf, test_clips = linear_probe_full(params, clips, seed=0)
        acc_real, acc_static = static_degradation_probe(params, clf, test_clips)
        assert acc_real == acc_static

    def test_static_labels_survive_freezing(self):
        clips = rotation_dataset(n=80, label_mode="by_static_offset", static_offset_scale=1.0)
        params = init_params(np.random.default_rng(8), 6, 4, hidden_dims=(8,))
        _, clf, test_clips = linear_probe_full(params, clips, seed=0)
        acc_real, acc_static = static_degradation_probe(params, clf, test_clips)
        # Labels ride on the first frame's offset, so freezing barely hurts.
        assert acc_real > 0.6
        assert acc_static >= acc_real - 0.15


class TestOrderDiscrimination:
    def test_permutation_invariant_features_stay_at_chance(self):
        clips = rotation_dataset(n=100)
        params = init_params(np.random.default_rng(9), 6, 4, hidden_dims=(8,))
        report = order_discrimination_probe(
            params, clips, seed=0, feature_fn=mean_only_features
        )
        assert abs(report.accuracy - 0.5) <= 0.07

    def test_identity_encoder_separates_rotation_data(self):
        clips = rotation_dataset(n=100, noise_std=0.0)
        report = order_discrimination_probe(identity_params(6), clips, seed=0)
        assert report.accuracy >= 0.9

    def test_deterministic(self):
        clips = rotation_dataset(n=40)
        params = init_params(np.random.default_rng(10), 6, 4, hidden_dims=(8,))
        r1 = order_discrimination_probe(params, clips, seed=3)
        r2 = order_discrimination_probe(params, clips, seed=3)
        assert r1 == r2

    def test_balanced_sample_count(self):
        clips = rotation_dataset(n=50)
        params = init_params(np.random.default_rng(11), 6, 4, hidden_dims=(8,))
        report = order_discrimination_probe(params, clips, seed=0)
        assert report.n_samples == 2 * 10  # 20% of 50 clips, two samples each


class TestFeatures:
    def test_clip_features_shape(self):
        params = init_params(np.random.default_rng(12), 6, 4, hidden_dims=(8,))
        clips = rotation_dataset(n=4)
        feats = clip_features(params, clips[0].frames)
        assert feats.shape == (4 + clips[0].num_frames - 1,)

    def test_static_clip_has_zero_displacements(self):
        params = init_params(np.random.default_rng(13), 6, 4, hidden_dims=(8,))
        clips = rotation_dataset(n=4)
        static = make_static_clip(clips[0])
        feats = clip_features(params, static.frames)
        assert np.allclose(feats[4:], 0.0, atol=1e-12)

    def test_params_id_stable(self):
        params = init_params(np.random.default_rng(14), 6, 4, hidden_dims=(8,))
        assert params_id(params) == params_id(params)
        other = init_params(np.random.default_rng(15), 6, 4, hidden_dims=(8,))
        assert params_id(params) != params_id(other)


class TestSupervisedBaseline:
    def test_learns_rotation_labels_above_chance(self):
        clips = rotation_dataset(n=60, noise_std=0.0)
        params = train_supervised(clips, seed=0, embed_dim=4, hidden_dims=(8,), epochs=60)
        report = linear_probe(params, clips, seed=1)
        assert report.accuracy >= 0.75


class TestReportsCsv:
    def test_append_never_overwrites(self, tmp_path):
        path = tmp_path / "results.csv"
        r1 = ProbeReport("linear", 0.75, 100, 3, "ckpt-a")
        r2 = ProbeReport("order", 0.5, 40, 3, "ckpt-a")
        append_report(path, r1)
        append_report(path, r2)
        lines = path.read_text().splitlines()
        assert lines[0] == "probe,checkpoint,accuracy,n,seed"
        assert len(lines) == 3
        assert lines[1].startswith("linear,ckpt-a,0.75,100,3")
        assert lines[2].startswith("order,ckpt-a,0.5,40,3")
