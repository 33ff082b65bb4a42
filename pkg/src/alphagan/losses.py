"""Training objectives and estimators expressed as tensor operations.

Every cross-entropy term is written with softplus on logits:
``-log D = softplus(-logit)`` and ``-log(1 - D) = softplus(logit)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, EXP_LIMIT, ShapeError, Tensor
from .networks import NetworkParams, critic_forward, input_gradient


@dataclass
class LossTerms:
    """A scalar objective with its named, already-weighted components.

    ``total`` is the plain sum of ``components``.
    """

    total: Tensor
    components: dict[str, Tensor] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        out = {k: v.item() for k, v in self.components.items()}
        out["total"] = self.total.item()
        return out


def _terms(**components: Tensor) -> LossTerms:
    total = None
    for value in components.values():
        total = value if total is None else ad.add(total, value)
    return LossTerms(total, dict(components))


def _nonempty(*tensors: Tensor) -> None:
    for t in tensors:
        if t.size == 0 or t.shape[0] == 0:
            raise ValueError("loss needs a non-empty batch")


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


# -- density ratios ------------------------------------------------------------

def density_ratio(d_logit) -> Tensor:
    """Log density ratio ``log(D / (1 - D))``, which is the logit itself."""
    return ad.as_tensor(d_logit)


def density_ratio_value(d_logit) -> np.ndarray:
    """The ratio ``D / (1 - D) = exp(logit)``."""
    logit = np.asarray(ad.as_tensor(d_logit).data)
    if np.any(logit > EXP_LIMIT):
        raise DomainError(f"density ratio overflows for logits above {EXP_LIMIT:g}")
    return np.exp(logit)


# -- GAN ------------------------------------------------------------------------

def gan_discriminator_loss(real_logits, fake_logits) -> LossTerms:
    real_logits, fake_logits = ad.as_tensor(real_logits), ad.as_tensor(fake_logits)
    _nonempty(real_logits, fake_logits)
    return _terms(
        real=ad.mean(ad.softplus(-real_logits)),
        fake=ad.mean(ad.softplus(fake_logits)),
    )


GENERATOR_VARIANTS = ("saturating", "alternative", "reverse_kl")


def gan_generator_loss(fake_logits, variant: str = "alternative") -> LossTerms:
    """``saturating``: E log(1-D); ``alternative``: E -log D; ``reverse_kl``: E[-log D + log(1-D)]."""
    fake_logits = ad.as_tensor(fake_logits)
    _nonempty(fake_logits)
    if variant == "saturating":
        value = -ad.mean(ad.softplus(fake_logits))
    elif variant == "alternative":
        value = ad.mean(ad.softplus(-fake_logits))
    elif variant == "reverse_kl":
        value = -ad.mean(fake_logits)
    else:
        raise ValueError(f"unknown generator loss variant {variant!r}")
    return _terms(adversarial=value)


# -- reconstruction and KL ------------------------------------------------------

def l1_reconstruction(x, x_hat, lam: float = 1.0) -> Tensor:
    """``lam`` times the batch mean of per-example L1 distances."""
    x, x_hat = ad.as_tensor(x), ad.as_tensor(x_hat)
    _same_shape(x, x_hat, "l1_reconstruction")
    if not lam > 0:
        raise ValueError("reconstruction weight must be positive")
    per_example = ad.sum(ad.abs(ad.sub(x, x_hat)), axis=1)
    return ad.scale(ad.mean(per_example), lam)


def kl_via_code_discriminator(code_logits) -> Tensor:
    """KL(q || prior) estimated as E[-logit], where C = p(code came from the prior)."""
    return -ad.mean(ad.as_tensor(code_logits))


def empirical_kl(codes, corrected: bool = True, per_dim: bool = False) -> Tensor:
    """Moment-matched KL between a batch of codes and N(0, I).

    Uses per-dimension sample means ``m`` and (unbiased) standard deviations
    ``s``: ``sum((s^2 + m^2)/2 - log s) - n/2``. With ``corrected=False`` the
    constant is ``+n/2`` instead. ``per_dim`` divides by the latent size.
    """
    codes = ad.as_tensor(codes)
    if codes.data.ndim != 2 or codes.shape[0] < 2:
        raise ShapeError(f"empirical_kl needs a [batch>=2, n] matrix, got {codes.shape}")
    batch, n = codes.shape
    m = ad.mean(codes, axis=0, keepdims=True)
    centred = ad.sub(codes, m)
    var = ad.scale(ad.sum(ad.mul(centred, centred), axis=0, keepdims=True), 1.0 / (batch - 1))
    if np.any(var.data <= 0):
        raise DomainError("empirical_kl: a latent dimension has zero sample variance")
    per = ad.sub(ad.scale(ad.add(var, ad.mul(m, m)), 0.5), ad.scale(ad.log(var), 0.5))
    const = -0.5 * n if corrected else 0.5 * n
    kl = ad.add(ad.sum(per), const)
    return ad.scale(kl, 1.0 / n) if per_dim else kl


def gaussian_kl(mu, log_sigma) -> Tensor:
    """Batch mean of KL(N(mu, sigma^2) || N(0, I)) in closed form."""
    mu, log_sigma = ad.as_tensor(mu), ad.as_tensor(log_sigma)
    _same_shape(mu, log_sigma, "gaussian_kl")
    var = ad.exp(ad.scale(log_sigma, 2.0))
    per = ad.sub(ad.scale(ad.add(ad.mul(mu, mu), ad.sub(var, 1.0)), 0.5), log_sigma)
    return ad.mean(ad.sum(per, axis=1))


def cosine_distance(a, b) -> Tensor:
    """Batch mean of ``1 - cos(a_i, b_i)``; zero-norm rows are an error."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    _same_shape(a, b, "cosine_distance")
    na, nb = ad.row_norm(a), ad.row_norm(b)
    if np.any(na.data == 0) or np.any(nb.data == 0):
        raise DomainError("cosine distance undefined for zero-norm vectors")
    cos = ad.div(ad.sum(ad.mul(a, b), axis=1, keepdims=True), ad.mul(na, nb))
    return ad.mean(ad.sub(1.0, cos))


# -- alpha-GAN ----------------------------------------------------------------

def alpha_gan_encoder_loss(x, x_hat, code_logits, lam: float) -> LossTerms:
    """Reconstruction plus ``R_C(z) = -log C + log(1 - C) = -logit`` on encoder codes."""
    return _terms(
        reconstruction=l1_reconstruction(x, x_hat, lam),
        kl=kl_via_code_discriminator(code_logits),
    )


def alpha_gan_generator_loss(x, x_hat, recon_logits, sample_logits, lam: float) -> LossTerms:
    recon_logits, sample_logits = ad.as_tensor(recon_logits), ad.as_tensor(sample_logits)
    _nonempty(recon_logits, sample_logits)
    return _terms(
        reconstruction=l1_reconstruction(x, x_hat, lam),
        adversarial_reconstruction=-ad.mean(recon_logits),
        adversarial_sample=-ad.mean(sample_logits),
    )


def alpha_gan_discriminator_loss(real_logits, recon_logits, sample_logits, real_weight: float = 1.0) -> LossTerms:
    """Real data as real; reconstructions and prior samples as fake.

    ``real_weight=2`` gives the doubled real term of the exact-expectation form.
    """
    real_logits = ad.as_tensor(real_logits)
    recon_logits, sample_logits = ad.as_tensor(recon_logits), ad.as_tensor(sample_logits)
    _nonempty(real_logits, recon_logits, sample_logits)
    return _terms(
        real=ad.scale(ad.mean(ad.softplus(-real_logits)), real_weight),
        reconstruction=ad.mean(ad.softplus(recon_logits)),
        sample=ad.mean(ad.softplus(sample_logits)),
    )


def code_discriminator_loss(prior_logits, posterior_logits) -> Tensor:
    prior_logits, posterior_logits = ad.as_tensor(prior_logits), ad.as_tensor(posterior_logits)
    _nonempty(prior_logits, posterior_logits)
    return ad.add(ad.mean(ad.softplus(-prior_logits)), ad.mean(ad.softplus(posterior_logits)))


# -- baselines ----------------------------------------------------------------

def gradient_penalty(critic: NetworkParams, points) -> Tensor:
    """Mean of ``(||grad_x f(x)|| - 1)^2`` over the rows of ``points``."""
    g = input_gradient(critic, points)
    deficit = ad.sub(ad.row_norm(g), 1.0)
    return ad.mean(ad.mul(deficit, deficit))


def interpolate(real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(0.0, 1.0, size=(real.shape[0], 1))
    return u * real + (1.0 - u) * fake


def wgan_gp_losses(
    critic: NetworkParams,
    real,
    fake,
    gp_coeff: float = 10.0,
    rng: np.random.Generator | None = None,
    interpolates: np.ndarray | None = None,
) -> tuple[LossTerms, LossTerms]:
    """Critic and generator objectives of WGAN-GP.

    The penalty is evaluated at ``u * real + (1 - u) * fake`` with one
    ``u ~ U(0, 1)`` per row, unless ``interpolates`` is given.
    """
    real, fake = ad.as_tensor(real), ad.as_tensor(fake)
    _same_shape(real, fake, "wgan_gp_losses")
    if gp_coeff < 0:
        raise ValueError("gp_coeff must be non-negative")
    if interpolates is None:
        rng = np.random.default_rng() if rng is None else rng
        interpolates = interpolate(real.data, fake.data, rng)
    f_real = ad.mean(critic_forward(critic, real))
    f_fake = ad.mean(critic_forward(critic, fake))
    critic_terms = _terms(
        wasserstein=ad.sub(f_fake, f_real),
        penalty=ad.scale(gradient_penalty(critic, interpolates), gp_coeff),
    )
    generator_terms = _terms(adversarial=-f_fake)
    return critic_terms, generator_terms


def vae_loss(x, mu, log_sigma, x_hat, lam: float) -> LossTerms:
    """Negative ELBO with a Laplace likelihood (up to its normaliser) and analytic KL.

    ``x_hat`` must be decoded from ``mu + exp(log_sigma) * eps``.
    """
    return _terms(
        reconstruction=l1_reconstruction(x, x_hat, lam),
        kl=gaussian_kl(mu, log_sigma),
    )


def age_losses(
    x,
    x_hat,
    codes_data,
    z_prior,
    codes_samples,
    w_data: float = 100.0,
    w_code: float = 10.0,
    per_dim: bool = True,
) -> tuple[LossTerms, LossTerms]:
    """Encoder and generator objectives of adversarial generator-encoders.

    The encoder pulls data codes toward the prior and pushes codes of
    generated samples away from it; the generator pulls them back and must
    reproduce its latent direction (cosine code reconstruction).
    """
    kl_data = empirical_kl(codes_data, per_dim=per_dim)
    kl_samples = empirical_kl(codes_samples, per_dim=per_dim)
    encoder = _terms(
        reconstruction=l1_reconstruction(x, x_hat, w_data),
        kl=kl_data,
        kl_samples=-kl_samples,
    )
    generator = _terms(
        code_reconstruction=ad.scale(cosine_distance(z_prior, codes_samples), w_code),
        kl=kl_samples,
    )
    return encoder, generator
