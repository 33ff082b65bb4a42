import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alphagan.data import procedural_shapes, ring_mixture, ring_of_gaussians
from alphagan.evaluation import (
    METRICS_HEADER,
    MIN_CRITIC_SAMPLES,
    CriticConfig,
    MetricsReport,
    classifier_score,
    classifier_score_from_probs,
    code_stats,
    independent_critic_distance,
    latent_stats,
    matrix_csv,
    max_scales,
    mode_coverage,
    ms_ssim,
    sample_diversity,
    train_classifier,
)

SHAPES = procedural_shapes(n_per_split=(2000, 400, 400), seed=0)


def make_image(side=16, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / side
    return np.clip(0.5 + 0.4 * np.sin(6 * xx) * np.cos(4 * yy) + 0.05 * rng.standard_normal((side, side)), 0, 1)


class TestMsSsim:
    def test_self_similarity(self):
        img = make_image()
        assert abs(ms_ssim(img, img) - 1.0) < 1e-9

    def test_constant_images(self):
        c = np.full((16, 16), 0.3)
        assert abs(ms_ssim(c, c) - 1.0) < 1e-9

    def test_inverted(self):
        img = make_image()
        assert ms_ssim(img, 1.0 - img) < 0.3

    def test_scale_count(self):
        assert max_scales(16) == 2
        assert max_scales(8) == 1
        assert max_scales(256) == 5

    def test_range_and_degradation(self):
        img = make_image()
        rng = np.random.default_rng(1)
        values = [ms_ssim(img, np.clip(img + s * rng.standard_normal(img.shape), 0, 1)) for s in (0.02, 0.1, 0.3)]
        assert all(0 <= v <= 1 for v in values)
        assert values[0] > values[1] > values[2]

    def test_errors(self):
        with pytest.raises(ValueError):
            ms_ssim(np.zeros((16, 16)), np.zeros((16, 15)))
        with pytest.raises(ValueError):
            ms_ssim(np.zeros((4, 4)), np.zeros((4, 4)))
        with pytest.raises(ValueError):
            ms_ssim(np.zeros((16, 16)), np.zeros((16, 16)), scales=3)

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, (16, 16), elements=st.floats(0, 1)), arrays(np.float64, (16, 16), elements=st.floats(0, 1)))
    def test_symmetric(self, a, b):
        assert abs(ms_ssim(a, b) - ms_ssim(b, a)) <= 1e-12


class TestDiversity:
    def test_identical_set(self):
        images = np.repeat(SHAPES.test[:1], 20, axis=0)
        assert sample_diversity(images, 100, image_shape=(16, 16)) == pytest.approx(0.0, abs=1e-9)

    def test_noise_increases_diversity(self):
        data = SHAPES.test[:200]
        noisy = np.clip(data + 0.1 * np.random.default_rng(0).standard_normal(data.shape), -1, 1)
        assert sample_diversity(noisy, 2000, image_shape=(16, 16)) > sample_diversity(data, 2000, image_shape=(16, 16))

    def test_seeded(self):
        data = SHAPES.test[:100]
        assert sample_diversity(data, 300, 4, (16, 16)) == sample_diversity(data, 300, 4, (16, 16))
        assert sample_diversity(data, 300, 4, (16, 16)) != sample_diversity(data, 300, 5, (16, 16))

    def test_too_few_images(self):
        with pytest.raises(ValueError):
            sample_diversity(SHAPES.test[:1], 10)


class TestClassifierScore:
    def test_uniform(self):
        assert classifier_score_from_probs(np.full((5, 4), 0.25)) == pytest.approx(1.0, abs=1e-12)

    def test_one_hot_balanced(self):
        assert classifier_score_from_probs(np.eye(10)) == pytest.approx(10.0, abs=1e-4)

    def test_two_sample_case(self):
        probs = np.array([[0.9, 0.1], [0.1, 0.9]])
        kl = 0.9 * np.log(0.9 / 0.5) + 0.1 * np.log(0.1 / 0.5)
        np.testing.assert_allclose(kl, 0.3680642, rtol=1e-6)
        assert classifier_score_from_probs(probs) == pytest.approx(np.exp(kl), abs=1e-4)
        assert classifier_score_from_probs(probs) == pytest.approx(1.444935, abs=1e-4)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (6, 3), elements=st.floats(0.01, 1)), st.randoms(use_true_random=False))
    def test_bounds_and_order_invariance(self, raw, rnd):
        probs = raw / raw.sum(axis=1, keepdims=True)
        score = classifier_score_from_probs(probs)
        assert 1.0 <= score <= 3.0
        perm = list(range(6))
        rnd.shuffle(perm)
        assert classifier_score_from_probs(probs[perm]) == pytest.approx(score, rel=1e-12)

    def test_trained_classifier(self):
        result = train_classifier(SHAPES, seed=0)
        assert result.test_accuracy >= 0.97
        score = classifier_score(SHAPES.test, result.params)
        assert 3.0 < score <= 4.0
        with pytest.raises(ValueError):
            classifier_score(np.zeros((3, 5)), result.params)


class TestModeCoverage:
    mixture = ring_mixture()

    def test_means_replicated(self):
        assert mode_coverage(np.repeat(self.mixture.means, 10, axis=0), self.mixture) == (8, 1.0)

    def test_total_collapse(self):
        assert mode_coverage(np.repeat(self.mixture.means[:1], 50, axis=0), self.mixture) == (1, 1.0)

    def test_exact_draws(self):
        samples = self.mixture.sample(100000, np.random.default_rng(0))
        modes, hq = mode_coverage(samples, self.mixture)
        assert modes == 8
        assert abs(hq - (1 - np.exp(-4.5))) < 0.005

    def test_far_samples(self):
        assert mode_coverage(np.full((10, 2), 50.0), self.mixture) == (0, 0.0)

    def test_monotone_with_count_threshold(self):
        rng = np.random.default_rng(1)
        samples = self.mixture.sample(400, rng)
        covered = [mode_coverage(samples[:n], self.mixture, min_count=5)[0] for n in range(10, 401, 10)]
        assert all(b >= a for a, b in zip(covered, covered[1:]))

    def test_errors(self):
        with pytest.raises(ValueError):
            mode_coverage(np.zeros((0, 2)), self.mixture)
        with pytest.raises(ValueError):
            mode_coverage(np.zeros((3, 3)), self.mixture)


class TestLatentStats:
    def test_prior_codes(self):
        z = np.random.default_rng(0).standard_normal((20000, 4))
        means, cov = code_stats(z)
        bound = 4 / np.sqrt(20000)
        assert np.all(np.abs(means) < bound)
        assert np.all(np.abs(cov[~np.eye(4, dtype=bool)]) < bound)

    def test_duplicated_code(self):
        z = np.tile([[0.3, -1.7, 2.2]], (50, 1))
        _, cov = code_stats(z)
        np.testing.assert_array_equal(cov, np.zeros((3, 3)))

    def test_affine(self):
        a = np.array([[2.0, 0.0], [1.0, 0.5]])
        z = np.random.default_rng(1).standard_normal((100000, 2)) @ a.T
        _, cov = code_stats(z)
        np.testing.assert_allclose(cov, a @ a.T, atol=0.05)
        np.testing.assert_array_equal(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > -1e-8

    def test_latent_stats_with_callable(self):
        data = np.random.default_rng(2).standard_normal((300, 2))
        means, cov = latent_stats(lambda x: 2 * x, data, batch_size=64)
        np.testing.assert_allclose(means, 2 * data.mean(0))
        np.testing.assert_allclose(cov, 4 * np.cov(data.T))

    def test_matrix_csv(self):
        text = matrix_csv(np.array([[1.0, 0.5], [0.5, 2.0]]))
        assert text == "1.0,0.5\n0.5,2.0\n"


class TestCritic:
    ring = ring_of_gaussians(n_per_split=(10, 2000, 2000), seed=0)

    def test_far_distributions(self):
        a = np.random.default_rng(1).standard_normal((1024, 2)) - 5
        b = np.random.default_rng(2).standard_normal((1024, 2)) + 5
        result = independent_critic_distance(b, a, CriticConfig(steps=1500, curve_every=50))
        assert result.distance > 5
        assert result.neg_wasserstein == -result.distance
        assert len(result.validation_curve) == len(result.test_curve) == 30

    def test_same_distribution_null(self):
        result = independent_critic_distance(self.ring.test, self.ring.valid, CriticConfig(steps=1500, curve_every=100))
        assert abs(result.distance) < 0.05

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            independent_critic_distance(np.zeros((MIN_CRITIC_SAMPLES - 1, 2)), self.ring.valid)


class TestReport:
    def test_row(self):
        row = MetricsReport(diversity=0.25, modes_covered=8).row(100)
        assert list(row) == list(METRICS_HEADER)
        assert row["iter"] == 100 and row["diversity"] == 0.25 and row["modes_covered"] == 8
        assert row["neg_wasserstein"] is None
        assert METRICS_HEADER[0] == "iter"
