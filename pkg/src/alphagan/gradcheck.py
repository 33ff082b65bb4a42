"""Gradient-check suite over every primitive and every composite objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from .networks import MLPSpec, NetworkParams, Role, encoder_forward, mlp_forward

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4
PENALTY_TOL = 1e-3


@dataclass(frozen=True)
class GradCase:
    """``function`` maps the tensors drawn by ``make_points(rng)`` to a scalar."""

    name: str
    function: Callable[..., ad.Tensor]
    make_points: Callable[[np.random.Generator], list[np.ndarray]]
    tol: float
    kind: str = "primitive"


@dataclass(frozen=True)
class GradReport:
    name: str
    kind: str
    max_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error < self.tol)


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    x = rng.uniform(margin, 2.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _normal(*shape):
    return lambda rng: [rng.standard_normal(shape)]


def _weighted(op: Callable[..., ad.Tensor], weights_seed: int = 99) -> Callable[..., ad.Tensor]:
    """Reduce an op's output to a scalar with fixed random weights on every entry."""

    def fn(*args):
        out = op(*args)
        w = np.random.default_rng(weights_seed).standard_normal(out.shape)
        return ad.sum(ad.mul(out, w))

    return fn


def _net(sizes, hidden, output, tensors, role=Role.DISCRIMINATOR, noise_dim=0) -> NetworkParams:
    spec = MLPSpec(tuple(sizes), hidden, output)
    return NetworkParams(role, spec, tuple(tensors[0::2]), tuple(tensors[1::2]), noise_dim)


def _net_points(sizes, rng, scale=0.7) -> list[np.ndarray]:
    out = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        out += [rng.normal(0.0, scale, (a, b)), rng.normal(0.0, 0.3, b)]
    return out


def _primitive_cases() -> list[GradCase]:
    P = PRIMITIVE_TOL
    two = lambda rng: [rng.standard_normal((3, 2)), rng.standard_normal((3, 2))]  # noqa: E731
    cases = [
        ("add", ad.add, two),
        ("add_broadcast", ad.add, lambda rng: [rng.standard_normal((3, 2)), rng.standard_normal((1, 2))]),
        ("sub", ad.sub, two),
        ("mul", ad.mul, two),
        ("div", ad.div, lambda rng: [rng.standard_normal((3, 2)), _away_from_zero(rng, (3, 2), 0.5)]),
        ("scale", lambda x: ad.scale(x, -1.7), _normal(3, 2)),
        ("neg", ad.neg, _normal(3, 2)),
        ("matmul", ad.matmul, lambda rng: [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))]),
        ("add_bias", ad.add_bias, lambda rng: [rng.standard_normal((3, 2)), rng.standard_normal(2)]),
        ("linear", ad.linear,
         lambda rng: [rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)]),
        ("relu", ad.relu, lambda rng: [_away_from_zero(rng, (3, 4))]),
        ("leaky_relu", ad.leaky_relu, lambda rng: [_away_from_zero(rng, (3, 4))]),
        ("sigmoid", ad.sigmoid, lambda rng: [3 * rng.standard_normal((3, 4))]),
        ("tanh", ad.tanh, lambda rng: [rng.standard_normal((3, 4))]),
        ("softplus", ad.softplus, lambda rng: [3 * rng.standard_normal((3, 4))]),
        ("log", ad.log, lambda rng: [rng.uniform(0.2, 3.0, (3, 4))]),
        ("exp", ad.exp, lambda rng: [rng.standard_normal((3, 4))]),
        ("abs", ad.abs, lambda rng: [_away_from_zero(rng, (3, 4))]),
        ("sum", lambda x: ad.sum(x), _normal(3, 4)),
        ("sum_axis", lambda x: ad.sum(x, axis=0), _normal(3, 4)),
        ("mean", lambda x: ad.mean(x), _normal(3, 4)),
        ("mean_axis", lambda x: ad.mean(x, axis=1, keepdims=True), _normal(3, 4)),
        ("concat", lambda a, b: ad.concat([a, b], axis=1),
         lambda rng: [rng.standard_normal((3, 2)), rng.standard_normal((3, 1))]),
        ("slice_axis", lambda x: ad.slice_axis(x, 1, 3, axis=1), _normal(3, 4)),
        ("reshape", lambda x: ad.reshape(x, (2, 6)), _normal(3, 4)),
        ("transpose", ad.transpose, _normal(3, 4)),
        ("softmax", lambda x: ad.softmax(x, axis=1), _normal(3, 4)),
        ("log_softmax", lambda x: ad.log_softmax(x, axis=1), _normal(3, 4)),
        ("row_norm", ad.row_norm, _normal(3, 4)),
        ("project_unit_ball", ad.project_unit_ball, lambda rng: [0.8 * rng.standard_normal((4, 3))]),
    ]
    return [GradCase(name, _weighted(op), points, P) for name, op, points in cases]


def _composite_cases() -> list[GradCase]:
    C = COMPOSITE_TOL
    logits = lambda *shapes: lambda rng: [2 * rng.standard_normal(s) for s in shapes]  # noqa: E731
    x_pair = lambda rng: [rng.standard_normal((4, 3)), rng.standard_normal((4, 3)) + 0.5]  # noqa: E731

    disc_sizes = (2, 5, 1)

    def penalty(*tensors):
        critic = _net(disc_sizes, "tanh", "identity", list(tensors[:4]), Role.CRITIC)
        return L.gradient_penalty(critic, tensors[4])

    def penalty_leaky(*tensors):
        critic = _net(disc_sizes, "leaky_relu", "identity", list(tensors[:4]), Role.CRITIC)
        return L.gradient_penalty(critic, tensors[4])

    def wgan_critic_ex_penalty(*tensors):
        critic = _net(disc_sizes, "leaky_relu", "identity", list(tensors[:4]), Role.CRITIC)
        terms, _ = L.wgan_gp_losses(critic, tensors[4], tensors[5], gp_coeff=0.0,
                                    interpolates=np.zeros((3, 2)))
        return terms.total

    def wgan_generator(*tensors):
        critic = _net(disc_sizes, "leaky_relu", "identity", list(tensors[:4]), Role.CRITIC)
        _, gen = L.wgan_gp_losses(critic, np.zeros((3, 2)), tensors[4], interpolates=np.zeros((3, 2)))
        return gen.total

    net_pts = lambda extra: lambda rng: _net_points(disc_sizes, rng) + extra(rng)  # noqa: E731

    # alpha-GAN objectives through encoder E (3 -> 4 -> 2) and generator G (2 -> 4 -> 3)
    def alpha_parts(tensors):
        enc = _net((3, 4, 2), "tanh", "identity", list(tensors[0:4]), Role.ENCODER)
        gen = _net((2, 4, 3), "tanh", "identity", list(tensors[4:8]), Role.GENERATOR)
        disc = _net((3, 4, 1), "tanh", "identity", list(tensors[8:12]))
        code = _net((2, 4, 1), "tanh", "identity", list(tensors[12:16]), Role.CODE_DISCRIMINATOR)
        return enc, gen, disc, code, tensors[16], tensors[17]

    def alpha_points(rng):
        pts = []
        for sizes in ((3, 4, 2), (2, 4, 3), (3, 4, 1), (2, 4, 1)):
            pts += _net_points(sizes, rng)
        return pts + [rng.standard_normal((4, 3)), rng.standard_normal((4, 2))]

    def alpha_encoder(*tensors):
        enc, gen, _, code, x, _ = alpha_parts(tensors)
        z = encoder_forward(enc, x)
        return L.alpha_gan_encoder_loss(x, mlp_forward(gen, z), mlp_forward(code, z), 10.0).total

    def alpha_generator(*tensors):
        enc, gen, disc, _, x, zp = alpha_parts(tensors)
        x_hat = mlp_forward(gen, encoder_forward(enc, x))
        x_p = mlp_forward(gen, zp)
        return L.alpha_gan_generator_loss(x, x_hat, mlp_forward(disc, x_hat), mlp_forward(disc, x_p), 10.0).total

    def alpha_discriminator(*tensors):
        enc, gen, disc, _, x, zp = alpha_parts(tensors)
        x_hat = mlp_forward(gen, encoder_forward(enc, x))
        x_p = mlp_forward(gen, zp)
        return L.alpha_gan_discriminator_loss(
            mlp_forward(disc, x), mlp_forward(disc, x_hat), mlp_forward(disc, x_p), 2.0
        ).total

    def alpha_code(*tensors):
        enc, _, _, code, x, zp = alpha_parts(tensors)
        return L.code_discriminator_loss(mlp_forward(code, zp), mlp_forward(code, encoder_forward(enc, x)))

    def age_encoder(x, x_hat, codes, zp, codes_s):
        enc, _ = L.age_losses(x, x_hat, codes, zp, codes_s)
        return enc.total

    def age_generator(x, x_hat, codes, zp, codes_s):
        _, gen = L.age_losses(x, x_hat, codes, zp, codes_s)
        return gen.total

    def age_points(rng):
        return [rng.standard_normal((5, 3)), rng.standard_normal((5, 3)) + 0.5,
                rng.standard_normal((5, 2)), rng.standard_normal((5, 2)), rng.standard_normal((5, 2))]

    cases = [
        ("density_ratio", _weighted(L.density_ratio), logits((4, 1)), C),
        ("gan_discriminator_loss", lambda r, f: L.gan_discriminator_loss(r, f).total, logits((4, 1), (4, 1)), C),
        ("gan_generator_loss_saturating",
         lambda f: L.gan_generator_loss(f, "saturating").total, logits((4, 1)), C),
        ("gan_generator_loss_alternative",
         lambda f: L.gan_generator_loss(f, "alternative").total, logits((4, 1)), C),
        ("gan_generator_loss_reverse_kl",
         lambda f: L.gan_generator_loss(f, "reverse_kl").total, logits((4, 1)), C),
        ("l1_reconstruction", lambda x, y: L.l1_reconstruction(x, y, 3.0), x_pair, C),
        ("kl_via_code_discriminator", L.kl_via_code_discriminator, logits((4, 1)), C),
        ("empirical_kl", L.empirical_kl, _normal(6, 3), C),
        ("empirical_kl_per_dim", lambda z: L.empirical_kl(z, per_dim=True), _normal(6, 3), C),
        ("gaussian_kl", L.gaussian_kl, lambda rng: [rng.standard_normal((4, 3)), 0.5 * rng.standard_normal((4, 3))], C),
        ("cosine_distance", L.cosine_distance, x_pair, C),
        ("alpha_gan_encoder_loss", lambda x, xh, c: L.alpha_gan_encoder_loss(x, xh, c, 10.0).total,
         lambda rng: x_pair(rng) + [2 * rng.standard_normal((4, 1))], C),
        ("alpha_gan_generator_loss",
         lambda x, xh, r, s: L.alpha_gan_generator_loss(x, xh, r, s, 10.0).total,
         lambda rng: x_pair(rng) + [2 * rng.standard_normal((4, 1)), 2 * rng.standard_normal((4, 1))], C),
        ("alpha_gan_discriminator_loss",
         lambda a, b, c: L.alpha_gan_discriminator_loss(a, b, c).total, logits((4, 1), (4, 1), (4, 1)), C),
        ("code_discriminator_loss", L.code_discriminator_loss, logits((4, 1), (4, 1)), C),
        ("vae_loss", lambda x, mu, ls, xh: L.vae_loss(x, mu, ls, xh, 5.0).total,
         lambda rng: [rng.standard_normal((4, 3)), rng.standard_normal((4, 2)),
                      0.5 * rng.standard_normal((4, 2)), rng.standard_normal((4, 3)) + 0.5], C),
        ("age_encoder_loss", age_encoder, age_points, C),
        ("age_generator_loss", age_generator, age_points, C),
        ("alpha_gan_encoder_objective", alpha_encoder, alpha_points, C),
        ("alpha_gan_generator_objective", alpha_generator, alpha_points, C),
        ("alpha_gan_discriminator_objective", alpha_discriminator, alpha_points, C),
        ("alpha_gan_code_discriminator_objective", alpha_code, alpha_points, C),
        ("wgan_gp_critic_ex_penalty", wgan_critic_ex_penalty,
         net_pts(lambda rng: [rng.standard_normal((3, 2)), rng.standard_normal((3, 2))]), C),
        ("wgan_gp_generator", wgan_generator, net_pts(lambda rng: [rng.standard_normal((3, 2))]), C),
    ]
    out = [GradCase(name, fn, pts, tol, "composite") for name, fn, pts, tol in cases]
    out.append(GradCase("gradient_penalty", penalty, net_pts(lambda rng: [rng.standard_normal((3, 2))]),
                        PENALTY_TOL, "penalty"))
    out.append(GradCase("gradient_penalty_leaky", penalty_leaky,
                        net_pts(lambda rng: [rng.standard_normal((3, 2))]), PENALTY_TOL, "penalty"))
    return out


def default_cases() -> list[GradCase]:
    return _primitive_cases() + _composite_cases()


def run_suite(
    cases: list[GradCase] | None = None,
    n_points: int = 100,
    seed: int = 0,
    step: float = 1e-5,
) -> list[GradReport]:
    """Largest gradient-check error of each case over ``n_points`` seeded random points."""
    cases = default_cases() if cases is None else cases
    reports = []
    for index, case in enumerate(cases):
        rng = np.random.default_rng([seed, index])
        worst = 0.0
        for _ in range(n_points):
            worst = max(worst, ad.grad_check(case.function, case.make_points(rng), step))
        reports.append(GradReport(case.name, case.kind, worst, case.tol))
    return reports
