"""Sample-quality metrics: independent critic, MS-SSIM diversity, classifier score,
mode coverage and latent statistics."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .data import Dataset, GaussianMixtureSpec
from .losses import wgan_gp_losses
from .networks import MLPSpec, NetworkParams, Role, init_params, mlp_forward
from .optim import Adam

METRICS_HEADER = ("iter", "neg_wasserstein", "diversity", "classifier_score", "modes_covered", "hq_fraction")
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MIN_CRITIC_SAMPLES = 512


@dataclass
class MetricsReport:
    """One evaluation of a model. Metrics that were not requested stay ``None``."""

    neg_wasserstein: float | None = None
    diversity: float | None = None
    classifier_score: float | None = None
    modes_covered: int | None = None
    high_quality_fraction: float | None = None
    latent_means: np.ndarray | None = None
    latent_covariance: np.ndarray | None = None

    def row(self, iteration: int) -> dict:
        return {
            "iter": iteration,
            "neg_wasserstein": self.neg_wasserstein,
            "diversity": self.diversity,
            "classifier_score": self.classifier_score,
            "modes_covered": self.modes_covered,
            "hq_fraction": self.high_quality_fraction,
        }


# -- independent Wasserstein critic ---------------------------------------------------

@dataclass(frozen=True)
class CriticConfig:
    width: int = 64
    layers: int = 3
    steps: int = 5000
    batch_size: int = 64
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.9
    gp_coeff: float = 10.0
    test_fraction: float = 0.5
    curve_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.layers < 1 or self.steps < 0 or self.batch_size < 1:
            raise ValueError("critic width, layers and batch_size must be positive and steps non-negative")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.curve_every < 1:
            raise ValueError("curve_every must be >= 1")


@dataclass
class CriticResult:
    """``distance`` estimates W1(data, samples); ``neg_wasserstein`` is its negation."""

    distance: float
    neg_wasserstein: float
    validation_curve: np.ndarray
    test_curve: np.ndarray
    critic: NetworkParams = field(repr=False)


def _split(x: np.ndarray, test_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(x.shape[0])
    n_test = int(round(x.shape[0] * test_fraction))
    return x[perm[n_test:]], x[perm[:n_test]]


def _critic_gap(critic: NetworkParams, data: np.ndarray, samples: np.ndarray) -> float:
    return float(mlp_forward(critic, data).data.mean() - mlp_forward(critic, samples).data.mean())


def independent_critic_distance(
    samples: np.ndarray,
    held_out: np.ndarray,
    config: CriticConfig | None = None,
) -> CriticResult:
    """Train a fresh WGAN-GP critic between ``held_out`` data and frozen model samples.

    Both sets are split into a critic-training part and a test part. The
    returned distance is ``mean f(data) - mean f(samples)`` on the test parts.
    ``validation_curve`` holds that gap on each training minibatch and
    ``test_curve`` the gap on the test parts, every ``curve_every`` steps.
    """
    config = CriticConfig() if config is None else config
    samples = np.asarray(samples, dtype=np.float64)
    held_out = np.asarray(held_out, dtype=np.float64)
    if samples.ndim != 2 or held_out.ndim != 2 or samples.shape[1] != held_out.shape[1]:
        raise ValueError(f"samples {samples.shape} and held-out data {held_out.shape} must be [N, D] with equal D")
    if min(samples.shape[0], held_out.shape[0]) < MIN_CRITIC_SAMPLES:
        raise ValueError(f"need at least {MIN_CRITIC_SAMPLES} samples and held-out rows")
    rng = np.random.default_rng(config.seed)
    data_train, data_test = _split(held_out, config.test_fraction, rng)
    fake_train, fake_test = _split(samples, config.test_fraction, rng)
    spec = MLPSpec((held_out.shape[1], *[config.width] * config.layers, 1), "leaky_relu", init_scale=0.02)
    critic = init_params(spec, int(rng.integers(2**31)), Role.CRITIC)
    opt = Adam(critic, config.lr, config.beta1, config.beta2)
    validation, test = [], []
    for step in range(config.steps):
        real = data_train[rng.integers(0, data_train.shape[0], config.batch_size)]
        fake = fake_train[rng.integers(0, fake_train.shape[0], config.batch_size)]
        tape = Tape()
        watched = critic.attach(tape)
        terms, _ = wgan_gp_losses(watched, real, fake, config.gp_coeff, rng)
        ad.backward(terms.total)
        critic = opt.step(critic, watched.grads(), step)
        if step % config.curve_every == 0:
            validation.append(-terms.components["wasserstein"].item())
            test.append(_critic_gap(critic, data_test, fake_test))
    distance = _critic_gap(critic, data_test, fake_test)
    return CriticResult(distance, -distance, np.array(validation), np.array(test), critic)


# -- MS-SSIM --------------------------------------------------------------------------

def _gaussian_filter_matrix(size: int, window: int, sigma: float = 1.5) -> np.ndarray:
    """Matrix applying a normalised 1D Gaussian with 'valid' boundaries."""
    offsets = np.arange(window) - (window - 1) / 2.0
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    kernel /= kernel.sum()
    out = size - window + 1
    mat = np.zeros((out, size))
    for i in range(out):
        mat[i, i : i + window] = kernel
    return mat


def _filter(images: np.ndarray, window: int) -> Callable[[np.ndarray], np.ndarray]:
    rows = _gaussian_filter_matrix(images.shape[-2], window)
    cols = _gaussian_filter_matrix(images.shape[-1], window)
    return lambda a: rows @ a @ cols.T


def _downsample(images: np.ndarray) -> np.ndarray:
    h, w = images.shape[-2] // 2 * 2, images.shape[-1] // 2 * 2
    x = images[..., :h, :w]
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2])


def max_scales(side: int) -> int:
    """Largest scale count with ``side >= 2**(scales - 1) * 8``, capped at five."""
    scales = 0
    while scales < len(MS_SSIM_WEIGHTS) and side >= 2**scales * 8:
        scales += 1
    return scales


def ms_ssim_batch(a: np.ndarray, b: np.ndarray, scales: int | None = None) -> np.ndarray:
    """MS-SSIM of corresponding images in two ``[N, H, W]`` stacks with values in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ValueError(f"expected [N, H, W] image stacks, got {a.shape}")
    available = max_scales(min(a.shape[1:]))
    if available == 0:
        raise ValueError(f"images of shape {a.shape[1:]} are too small for MS-SSIM")
    scales = available if scales is None else int(scales)
    if not 1 <= scales <= available:
        raise ValueError(f"scales must lie in [1, {available}] for images of shape {a.shape[1:]}")
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights /= weights.sum()
    c1, c2 = 0.01**2, 0.03**2
    result = np.ones(a.shape[0])
    for s in range(scales):
        window = min(11, a.shape[1], a.shape[2])
        blur = _filter(a, window)
        mu_a, mu_b = blur(a), blur(b)
        var_a = blur(a * a) - mu_a * mu_a
        var_b = blur(b * b) - mu_b * mu_b
        cov = blur(a * b) - mu_a * mu_b
        cs = np.maximum(((2.0 * cov + c2) / (var_a + var_b + c2)).mean(axis=(1, 2)), 0.0)
        if s == scales - 1:
            lum = ((2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)).mean(axis=(1, 2))
            result *= np.maximum(lum, 0.0) ** weights[s] * cs ** weights[s]
        else:
            result *= cs ** weights[s]
            a, b = _downsample(a), _downsample(b)
    return np.clip(result, 0.0, 1.0)


def ms_ssim(img_a: np.ndarray, img_b: np.ndarray, scales: int | None = None) -> float:
    """Multi-scale structural similarity of two ``[H, W]`` images in [0, 1]."""
    img_a, img_b = np.asarray(img_a), np.asarray(img_b)
    if img_a.shape != img_b.shape:
        raise ValueError(f"image shapes differ: {img_a.shape} vs {img_b.shape}")
    if img_a.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img_a.shape}")
    return float(ms_ssim_batch(img_a[None], img_b[None], scales)[0])


def _random_pairs(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    total = n * (n - 1) // 2
    if count >= total:
        i, j = np.triu_indices(n, k=1)
        return np.stack([i, j], axis=1)
    seen: set[tuple[int, int]] = set()
    pairs = []
    while len(pairs) < count:
        i, j = (int(v) for v in rng.integers(0, n, size=2))
        key = (min(i, j), max(i, j))
        if i != j and key not in seen:
            seen.add(key)
            pairs.append(key)
    return np.array(pairs)


def sample_diversity(
    images: np.ndarray,
    pair_count: int = 2000,
    seed: int = 0,
    image_shape: Sequence[int] | None = None,
) -> float:
    """``1 - mean MS-SSIM`` over seeded random distinct pairs of images in [-1, 1].

    Flat rows are reshaped with ``image_shape``. When ``pair_count`` reaches
    the number of distinct pairs, every pair is used.
    """
    images = np.asarray(images, dtype=np.float64)
    if image_shape is not None:
        images = images.reshape((images.shape[0], *image_shape))
    if images.ndim != 3:
        raise ValueError(f"expected [N, H, W] images (or flat rows with image_shape), got {images.shape}")
    if images.shape[0] < 2:
        raise ValueError("diversity needs at least 2 images")
    if pair_count < 1:
        raise ValueError("pair_count must be >= 1")
    unit = np.clip((images + 1.0) / 2.0, 0.0, 1.0)
    pairs = _random_pairs(images.shape[0], pair_count, np.random.default_rng(seed))
    scores = ms_ssim_batch(unit[pairs[:, 0]], unit[pairs[:, 1]])
    return float(np.clip(1.0 - scores.mean(), 0.0, 1.0))


# -- classifier score -------------------------------------------------------------------

def classifier_score_from_probs(probs: np.ndarray) -> float:
    """``exp(mean_x KL(p(y|x) || p(y)))`` for rows of class probabilities."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError(f"expected [N, C] probabilities, got {p.shape}")
    if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("rows must be probability vectors")
    marginal = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    score = float(np.exp(terms.sum(axis=1).mean()))
    return float(np.clip(score, 1.0, p.shape[1]))


def classify(classifier: NetworkParams, samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != classifier.spec.input_dim:
        raise ValueError(
            f"classifier expects [N, {classifier.spec.input_dim}] inputs, got {samples.shape}"
        )
    return ad.softmax(mlp_forward(classifier, samples), axis=1).data


def classifier_score(samples: np.ndarray, classifier: NetworkParams) -> float:
    return classifier_score_from_probs(classify(classifier, samples))


@dataclass
class ClassifierResult:
    params: NetworkParams
    test_accuracy: float


def train_classifier(
    dataset: Dataset,
    hidden: Sequence[int] = (128,),
    steps: int = 1500,
    batch_size: int = 64,
    lr: float = 0.001,
    seed: int = 0,
) -> ClassifierResult:
    """Softmax MLP trained on the labelled train split; accuracy is measured on test."""
    if not dataset.labelled:
        raise ValueError("classifier training needs a labelled dataset")
    x, y = dataset.train, np.asarray(dataset.train_labels)
    n_classes = dataset.n_classes or int(y.max()) + 1
    spec = MLPSpec((dataset.dim, *hidden, n_classes), "relu", init_scale=0.05)
    rng = np.random.default_rng(seed)
    params = init_params(spec, int(rng.integers(2**31)), Role.CLASSIFIER)
    opt = Adam(params, lr, 0.9, 0.999)
    for step in range(steps):
        idx = rng.integers(0, x.shape[0], batch_size)
        onehot = np.eye(n_classes)[y[idx]]
        tape = Tape()
        watched = params.attach(tape)
        logp = ad.log_softmax(mlp_forward(watched, x[idx]), axis=1)
        loss = -ad.mean(ad.sum(ad.mul(logp, onehot), axis=1))
        ad.backward(loss)
        params = opt.step(params, watched.grads(), step)
    predictions = classify(params, dataset.test).argmax(axis=1)
    accuracy = float(np.mean(predictions == np.asarray(dataset.test_labels)))
    return ClassifierResult(params, accuracy)


# -- mode coverage ------------------------------------------------------------------------

def mode_coverage(
    samples: np.ndarray,
    mixture: GaussianMixtureSpec,
    sigma_radius: float = 3.0,
    min_fraction: float = 0.01,
    min_count: int | None = None,
) -> tuple[int, float]:
    """``(modes_covered, high_quality_fraction)`` for 2D samples.

    A sample is high quality if it lies within ``sigma_radius * sigma`` of
    some mode mean. A mode is covered when at least ``min_fraction`` of all
    samples (or ``min_count`` samples, if given) are that close to it.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError(f"expected [N, 2] points, got {samples.shape}")
    if samples.shape[0] == 0:
        raise ValueError("mode coverage needs at least one sample")
    radius = sigma_radius * mixture.sigma
    d2 = ((samples[:, None, :] - mixture.means[None, :, :]) ** 2).sum(axis=2)
    near = d2 <= radius * radius
    counts = near.sum(axis=0)
    threshold = min_fraction * samples.shape[0] if min_count is None else min_count
    covered = int(np.sum((counts >= threshold) & (counts > 0)))
    return covered, float(near.any(axis=1).mean())


# -- latent statistics -----------------------------------------------------------------------

def code_stats(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension means and the (exactly symmetric) sample covariance of codes."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] < 2:
        raise ValueError("latent statistics need at least 2 codes")
    shifted = codes - codes[0]
    offset = shifted.mean(axis=0)
    means = codes[0] + offset
    centred = shifted - offset
    cov = centred.T @ centred / (codes.shape[0] - 1)
    return means, 0.5 * (cov + cov.T)


def latent_stats(encode, data: np.ndarray, batch_size: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Code statistics of ``encode`` (a callable or a model with ``encode``) over ``data``."""
    fn = encode.encode if hasattr(encode, "encode") else encode
    data = np.asarray(data, dtype=np.float64)
    codes = np.concatenate([fn(data[i : i + batch_size]) for i in range(0, data.shape[0], batch_size)])
    return code_stats(codes)


def matrix_csv(matrix: np.ndarray) -> str:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    buf = io.StringIO()
    for row in matrix:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


# -- full battery --------------------------------------------------------------------------------

ALL_METRICS = ("neg_wasserstein", "diversity", "classifier_score", "modes", "latent")


def evaluate_model(
    model,
    dataset: Dataset,
    metrics: Sequence[str] = ALL_METRICS,
    n_samples: int = 2000,
    seed: int = 0,
    classifier: NetworkParams | None = None,
    critic_config: CriticConfig | None = None,
    pair_count: int = 2000,
) -> MetricsReport:
    """Run the requested metrics that apply to the model and dataset kind.

    Image-only metrics are skipped for point data and vice versa; latent
    statistics need a model with an encoder.
    """
    unknown = sorted(set(metrics) - set(ALL_METRICS))
    if unknown:
        raise ValueError(f"unknown metric(s): {', '.join(unknown)}")
    rng = np.random.default_rng(seed)
    samples = model.sample(n_samples, rng)
    report = MetricsReport()
    if "neg_wasserstein" in metrics:
        held_out = dataset.valid
        n = min(held_out.shape[0], samples.shape[0])
        config = critic_config or CriticConfig(seed=seed)
        report.neg_wasserstein = independent_critic_distance(samples[:n], held_out[:n], config).neg_wasserstein
    if dataset.kind == "images":
        if "diversity" in metrics:
            report.diversity = sample_diversity(samples, pair_count, seed, dataset.image_shape)
        if "classifier_score" in metrics:
            if classifier is None:
                classifier = train_classifier(dataset, seed=seed).params
            report.classifier_score = classifier_score(samples, classifier)
    if dataset.mixture is not None and "modes" in metrics:
        report.modes_covered, report.high_quality_fraction = mode_coverage(samples, dataset.mixture)
    if "latent" in metrics and getattr(model, "has_encoder", False):
        report.latent_means, report.latent_covariance = latent_stats(model, dataset.test)
    return report
