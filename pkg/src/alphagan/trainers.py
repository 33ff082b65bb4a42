"""Training loops: alpha-GAN and the GAN, WGAN-GP, AGE and VAE baselines.

Each trainer owns its networks and optimizers and draws every random number
from one generator seeded by ``config.seed``. One call to ``iterate()`` runs
one outer iteration of the algorithm's update schedule; every parameter
update is announced to ``listeners`` as ``listener(network_name, trainer)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tape, Tensor
from .config import TrainingConfig
from .data import Dataset
from .networks import (
    MLPSpec,
    NetworkParams,
    Role,
    code_discriminator_forward,
    critic_forward,
    discriminator_forward,
    encoder_forward,
    generator_forward,
    init_params,
)
from .optim import Adam, NumericalError

METRIC_COLUMNS = ("iter", "wall_ms", "loss_total", "loss_recon", "loss_adv", "loss_kl", "disc_loss", "code_disc_loss")

NETWORK_SETS = {
    "alpha_gan": ("generator", "encoder", "discriminator", "code_discriminator"),
    "gan": ("generator", "discriminator"),
    "wgan_gp": ("generator", "critic"),
    "age": ("generator", "encoder"),
    "vae": ("generator", "encoder"),
}


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss or gradient; carries the last good state."""

    def __init__(self, cause: NumericalError, last_good: TrainedModel, rows: list[dict]):
        super().__init__(str(cause))
        self.cause = cause
        self.last_good = last_good
        self.rows = rows


@dataclass
class TrainedModel:
    algorithm: str
    config: TrainingConfig
    networks: dict[str, NetworkParams]
    iteration: int = 0
    dataset_kind: str = "points2d"

    @property
    def has_encoder(self) -> bool:
        return "encoder" in self.networks

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.config.latent_dim))
        if self.algorithm == "age":
            z = sample_unit_ball(n, self.config.latent_dim, rng)
        return generator_forward(self.networks["generator"], z).data

    def encode(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        if not self.has_encoder:
            raise ValueError(f"{self.algorithm} models have no encoder")
        enc = self.networks["encoder"]
        if self.algorithm == "vae":
            out = encoder_forward(enc, x).data
            return out[:, : self.config.latent_dim]
        eps = None
        if enc.noise_dim:
            rng = np.random.default_rng(0) if rng is None else rng
            eps = rng.standard_normal((x.shape[0], enc.noise_dim))
        return encoder_forward(enc, x, eps, project=self.algorithm == "age").data

    def reconstruct(self, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        return generator_forward(self.networks["generator"], self.encode(x, rng)).data


@dataclass
class TrainResult:
    model: TrainedModel
    rows: list[dict] = field(default_factory=list)


def sample_unit_ball(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the unit ball in ``dim`` dimensions."""
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / dim)
    return direction * radius


def _finite(value: float, network: str, iteration: int) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {network} loss at iteration {iteration}", network, iteration)
    return value


class Trainer:
    algorithm = ""

    def __init__(self, config: TrainingConfig, dataset: Dataset):
        if config.algorithm != self.algorithm:
            raise ValueError(f"{type(self).__name__} needs algorithm={self.algorithm!r}, got {config.algorithm!r}")
        self.config = config
        self.dataset = dataset
        self.schedule = config.schedule()
        self.rng = np.random.default_rng(config.seed)
        self.iteration = 0
        self.listeners: list[Callable[[str, Trainer], None]] = []
        self.networks = self.build_networks()
        self.optimizers = {
            name: Adam(params, self.learning_rate(name), config.beta1, config.beta2, config.adam_eps)
            for name, params in self.networks.items()
        }
        eval_rng = np.random.default_rng([config.seed, 7919])
        pool = dataset.valid if dataset.valid.shape[0] else dataset.train
        idx = eval_rng.choice(pool.shape[0], size=min(config.eval_batch_size, pool.shape[0]), replace=False)
        self.eval_data = pool[np.sort(idx)]
        self.eval_prior = self.draw_prior(self.eval_data.shape[0], eval_rng)
        self.eval_rng_seed = [config.seed, 104729]
        self._batch = None

    # -- construction ---------------------------------------------------------

    def learning_rate(self, name: str) -> float:
        c = self.config
        return {
            "generator": c.lr_generator,
            "encoder": c.lr_encoder,
            "discriminator": c.lr_discriminator,
            "critic": c.lr_discriminator,
            "code_discriminator": c.lr_code_discriminator,
        }[name]

    def _spec(self, sizes, hidden: str, output: str = "identity") -> MLPSpec:
        return MLPSpec(tuple(sizes), hidden, output, self.config.init, self.config.weight_scale())

    def _hidden(self) -> list[int]:
        return [self.config.hidden_width] * self.config.hidden_layers

    def _seed(self, k: int) -> int:
        return int(np.random.SeedSequence([self.config.seed, k]).generate_state(1)[0])

    def make_generator(self) -> NetworkParams:
        out = "tanh" if self.dataset.kind == "images" else "identity"
        sizes = [self.config.latent_dim, *self._hidden(), self.dataset.dim]
        return init_params(self._spec(sizes, "relu", out), self._seed(1), Role.GENERATOR)

    def make_discriminator(self, role: Role = Role.DISCRIMINATOR) -> NetworkParams:
        sizes = [self.dataset.dim, *self._hidden(), 1]
        return init_params(self._spec(sizes, "leaky_relu"), self._seed(3), role)

    def build_networks(self) -> dict[str, NetworkParams]:
        raise NotImplementedError

    # -- sampling ---------------------------------------------------------------

    def draw_prior(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        return rng.standard_normal((n, self.config.latent_dim))

    def data_batch(self) -> np.ndarray:
        if self.config.fresh_batches or self._batch is None:
            train = self.dataset.train
            self._batch = train[self.rng.integers(0, train.shape[0], size=self.config.batch_size)]
        return self._batch

    def start_iteration(self) -> None:
        """Invalidate the shared batch when batches are reused within an iteration."""
        self._batch = None

    # -- updates ------------------------------------------------------------------

    def _update(self, name: str, objective: Callable[[dict[str, NetworkParams]], Tensor]) -> float:
        """Minimise ``objective`` with respect to the named network(s) only.

        ``name`` may list several networks separated by '+', updated jointly.
        """
        names = name.split("+")
        tape = Tape()
        nets = dict(self.networks)
        for n in names:
            nets[n] = self.networks[n].attach(tape)
        loss = objective(nets)
        value = _finite(loss.item(), name, self.iteration)
        ad.backward(loss)
        for n in names:
            grads = nets[n].grads()
            self.networks[n] = self.optimizers[n].step(self.networks[n], grads, self.iteration)
        for listener in self.listeners:
            listener(name, self)
        return value

    def iterate(self) -> None:
        raise NotImplementedError

    def evaluate(self) -> dict:
        raise NotImplementedError

    # -- driver -----------------------------------------------------------------

    def model(self) -> TrainedModel:
        return TrainedModel(self.algorithm, self.config, dict(self.networks), self.iteration, self.dataset.kind)

    def _row(self, started: float) -> dict:
        values = self.evaluate()
        for key, value in values.items():
            if value is not None:
                _finite(value, key, self.iteration)
        row = {c: None for c in METRIC_COLUMNS}
        row.update(values)
        row["iter"] = self.iteration
        if self.config.log_wall_time:
            row["wall_ms"] = int(round((time.perf_counter() - started) * 1000))
        return row

    def run(self, max_iter: int | None = None, on_eval: Callable[[TrainedModel, dict], None] | None = None) -> TrainResult:
        """Train for ``max_iter`` iterations, logging every ``eval_every`` (and at the start)."""
        max_iter = self.config.max_iter if max_iter is None else max_iter
        started = time.perf_counter()
        rows: list[dict] = []
        last_good = self.model()
        try:
            rows.append(self._row(started))
            if on_eval:
                on_eval(last_good, rows[-1])
            for _ in range(max_iter):
                self.start_iteration()
                self.iterate()
                self.iteration += 1
                if self.iteration % self.config.eval_every == 0:
                    rows.append(self._row(started))
                    last_good = self.model()
                    if on_eval:
                        on_eval(last_good, rows[-1])
        except NumericalError as exc:
            raise TrainingAborted(exc, last_good, rows) from exc
        return TrainResult(self.model(), rows)


# -- alpha-GAN ----------------------------------------------------------------------

class AlphaGANTrainer(Trainer):
    """Encoder, generator, data discriminator and code discriminator, updated in that order."""

    algorithm = "alpha_gan"

    def build_networks(self):
        c = self.config
        enc_sizes = [self.dataset.dim + c.encoder_noise_dim, *self._hidden(), c.latent_dim]
        code_sizes = [c.latent_dim, *[c.code_disc_width] * c.code_disc_layers, 1]
        return {
            "generator": self.make_generator(),
            "encoder": init_params(self._spec(enc_sizes, "relu"), self._seed(2), Role.ENCODER, c.encoder_noise_dim),
            "discriminator": self.make_discriminator(),
            "code_discriminator": init_params(
                self._spec(code_sizes, "leaky_relu"), self._seed(4), Role.CODE_DISCRIMINATOR
            ),
        }

    def _noise(self, n: int, rng=None):
        k = self.networks["encoder"].noise_dim
        if not k:
            return None
        return (self.rng if rng is None else rng).standard_normal((n, k))

    def encoder_objective(self, x, eps):
        def objective(nets):
            z_hat = encoder_forward(nets["encoder"], x, eps)
            x_hat = generator_forward(nets["generator"], z_hat)
            code_logits = code_discriminator_forward(nets["code_discriminator"], z_hat)
            return losses.alpha_gan_encoder_loss(x, x_hat, code_logits, self.config.recon_weight)
        return objective

    def generator_objective(self, x, eps, z):
        def objective(nets):
            z_hat = encoder_forward(nets["encoder"], x, eps)
            x_hat = generator_forward(nets["generator"], z_hat)
            samples = generator_forward(nets["generator"], z)
            return losses.alpha_gan_generator_loss(
                x,
                x_hat,
                discriminator_forward(nets["discriminator"], x_hat),
                discriminator_forward(nets["discriminator"], samples),
                self.config.recon_weight,
            )
        return objective

    def discriminator_objective(self, x, eps, z):
        def objective(nets):
            x_hat = generator_forward(nets["generator"], encoder_forward(nets["encoder"], x, eps))
            samples = generator_forward(nets["generator"], z)
            disc = nets["discriminator"]
            return losses.alpha_gan_discriminator_loss(
                discriminator_forward(disc, x),
                discriminator_forward(disc, x_hat),
                discriminator_forward(disc, samples),
                self.config.real_weight,
            )
        return objective

    def code_discriminator_objective(self, x, eps, z):
        def objective(nets):
            z_hat = encoder_forward(nets["encoder"], x, eps)
            code = nets["code_discriminator"]
            return losses.code_discriminator_loss(
                code_discriminator_forward(code, z), code_discriminator_forward(code, z_hat)
            )
        return objective

    def iterate(self):
        n = self.config.batch_size
        s = self.schedule
        for _ in range(s["encoder"]):
            x = self.data_batch()
            self._update("encoder", lambda nets: self.encoder_objective(x, self._noise(n))(nets).total)
        for _ in range(s["generator"]):
            x = self.data_batch()
            eps, z = self._noise(n), self.draw_prior(n)
            self._update("generator", lambda nets: self.generator_objective(x, eps, z)(nets).total)
        for _ in range(s["discriminator"]):
            x = self.data_batch()
            eps, z = self._noise(n), self.draw_prior(n)
            self._update("discriminator", lambda nets: self.discriminator_objective(x, eps, z)(nets).total)
        for _ in range(s["code_discriminator"]):
            x = self.data_batch()
            eps, z = self._noise(n), self.draw_prior(n)
            self._update("code_discriminator", self.code_discriminator_objective(x, eps, z))

    def evaluate(self):
        x, z = self.eval_data, self.eval_prior
        eps = self._noise(x.shape[0], np.random.default_rng(self.eval_rng_seed))
        nets = self.networks
        enc = self.encoder_objective(x, eps)(nets)
        gen = self.generator_objective(x, eps, z)(nets)
        disc = self.discriminator_objective(x, eps, z)(nets)
        code = self.code_discriminator_objective(x, eps, z)(nets)
        recon = gen.components["reconstruction"].item()
        adv = gen.components["adversarial_reconstruction"].item() + gen.components["adversarial_sample"].item()
        kl = enc.components["kl"].item()
        return {
            "loss_total": recon + adv + kl,
            "loss_recon": recon,
            "loss_adv": adv,
            "loss_kl": kl,
            "disc_loss": disc.total.item(),
            "code_disc_loss": code.item(),
        }


# -- GAN ------------------------------------------------------------------------------

class GANTrainer(Trainer):
    algorithm = "gan"

    def build_networks(self):
        return {"generator": self.make_generator(), "discriminator": self.make_discriminator()}

    def discriminator_objective(self, x, z):
        def objective(nets):
            fake = generator_forward(nets["generator"], z)
            disc = nets["discriminator"]
            return losses.gan_discriminator_loss(discriminator_forward(disc, x), discriminator_forward(disc, fake))
        return objective

    def generator_objective(self, z):
        def objective(nets):
            fake_logits = discriminator_forward(nets["discriminator"], generator_forward(nets["generator"], z))
            return losses.gan_generator_loss(fake_logits, self.config.gan_generator_loss)
        return objective

    def iterate(self):
        n = self.config.batch_size
        for _ in range(self.schedule["discriminator"]):
            x, z = self.data_batch(), self.draw_prior(n)
            self._update("discriminator", lambda nets: self.discriminator_objective(x, z)(nets).total)
        for _ in range(self.schedule["generator"]):
            z = self.draw_prior(n)
            self._update("generator", lambda nets: self.generator_objective(z)(nets).total)

    def evaluate(self):
        gen = self.generator_objective(self.eval_prior)(self.networks)
        disc = self.discriminator_objective(self.eval_data, self.eval_prior)(self.networks)
        return {"loss_total": gen.total.item(), "loss_adv": gen.total.item(), "disc_loss": disc.total.item()}


# -- WGAN-GP ----------------------------------------------------------------------------

class WGANGPTrainer(Trainer):
    algorithm = "wgan_gp"

    def build_networks(self):
        return {"generator": self.make_generator(), "critic": self.make_discriminator(Role.CRITIC)}

    def critic_objective(self, x, z, rng):
        def objective(nets):
            fake = generator_forward(nets["generator"], z)
            critic_terms, _ = losses.wgan_gp_losses(nets["critic"], x, fake, self.config.gp_coeff, rng)
            return critic_terms
        return objective

    def generator_objective(self, z):
        def objective(nets):
            return losses._terms(adversarial=-ad.mean(critic_forward(nets["critic"], generator_forward(nets["generator"], z))))
        return objective

    def iterate(self):
        n = self.config.batch_size
        for _ in range(self.schedule["discriminator"]):
            x, z = self.data_batch(), self.draw_prior(n)
            self._update("critic", lambda nets: self.critic_objective(x, z, self.rng)(nets).total)
        for _ in range(self.schedule["generator"]):
            z = self.draw_prior(n)
            self._update("generator", lambda nets: self.generator_objective(z)(nets).total)

    def evaluate(self):
        rng = np.random.default_rng(self.eval_rng_seed)
        gen = self.generator_objective(self.eval_prior)(self.networks)
        critic = self.critic_objective(self.eval_data, self.eval_prior, rng)(self.networks)
        return {"loss_total": gen.total.item(), "loss_adv": gen.total.item(), "disc_loss": critic.total.item()}


# -- AGE --------------------------------------------------------------------------------

class AGETrainer(Trainer):
    """Adversarial generator-encoder with a unit-ball latent prior."""

    algorithm = "age"

    def build_networks(self):
        c = self.config
        enc_sizes = [self.dataset.dim, *self._hidden(), c.latent_dim]
        return {
            "generator": self.make_generator(),
            "encoder": init_params(self._spec(enc_sizes, "leaky_relu"), self._seed(2), Role.ENCODER),
        }

    def draw_prior(self, n, rng=None):
        return sample_unit_ball(n, self.config.latent_dim, self.rng if rng is None else rng)

    def objectives(self, x, z):
        c = self.config

        def both(nets):
            enc, gen = nets["encoder"], nets["generator"]
            codes_data = encoder_forward(enc, x, project=True)
            x_hat = generator_forward(gen, codes_data)
            codes_samples = encoder_forward(enc, generator_forward(gen, z), project=True)
            return losses.age_losses(x, x_hat, codes_data, z, codes_samples, c.age_w_data, c.age_w_code, c.age_per_dim_kl)
        return both

    def iterate(self):
        n = self.config.batch_size
        for _ in range(self.schedule["encoder"]):
            x, z = self.data_batch(), self.draw_prior(n)
            self._update("encoder", lambda nets: self.objectives(x, z)(nets)[0].total)
        for _ in range(self.schedule["generator"]):
            x, z = self.data_batch(), self.draw_prior(n)
            self._update("generator", lambda nets: self.objectives(x, z)(nets)[1].total)

    def evaluate(self):
        enc, gen = self.objectives(self.eval_data, self.eval_prior)(self.networks)
        return {
            "loss_total": enc.total.item(),
            "loss_recon": enc.components["reconstruction"].item(),
            "loss_adv": gen.total.item(),
            "loss_kl": enc.components["kl"].item(),
        }


# -- VAE ----------------------------------------------------------------------------------

class VAETrainer(Trainer):
    """Gaussian encoder (mean and log std) trained jointly with the decoder."""

    algorithm = "vae"

    def build_networks(self):
        c = self.config
        enc_sizes = [self.dataset.dim, *self._hidden(), 2 * c.latent_dim]
        return {
            "generator": self.make_generator(),
            "encoder": init_params(self._spec(enc_sizes, "relu"), self._seed(2), Role.ENCODER),
        }

    def objective(self, x, eps):
        k = self.config.latent_dim

        def elbo(nets):
            stats = encoder_forward(nets["encoder"], x)
            mu, log_sigma = ad.slice_axis(stats, 0, k), ad.slice_axis(stats, k, 2 * k)
            z = ad.add(mu, ad.mul(ad.exp(log_sigma), eps))
            x_hat = generator_forward(nets["generator"], z)
            return losses.vae_loss(x, mu, log_sigma, x_hat, self.config.recon_weight)
        return elbo

    def iterate(self):
        n = self.config.batch_size
        for _ in range(self.schedule["generator"]):
            x, eps = self.data_batch(), self.draw_prior(n)
            self._update("encoder+generator", lambda nets: self.objective(x, eps)(nets).total)

    def evaluate(self):
        terms = self.objective(self.eval_data, self.eval_prior)(self.networks)
        return {
            "loss_total": terms.total.item(),
            "loss_recon": terms.components["reconstruction"].item(),
            "loss_kl": terms.components["kl"].item(),
        }


TRAINERS: dict[str, type[Trainer]] = {
    "alpha_gan": AlphaGANTrainer,
    "gan": GANTrainer,
    "wgan_gp": WGANGPTrainer,
    "age": AGETrainer,
    "vae": VAETrainer,
}


def make_trainer(config: TrainingConfig, dataset: Dataset) -> Trainer:
    return TRAINERS[config.algorithm](config, dataset)


def train(config: TrainingConfig, dataset: Dataset, on_eval=None) -> TrainResult:
    return make_trainer(config, dataset).run(on_eval=on_eval)


def train_alpha_gan(config: TrainingConfig, dataset: Dataset, on_eval=None) -> TrainResult:
    return AlphaGANTrainer(config, dataset).run(on_eval=on_eval)


def train_gan(config: TrainingConfig, dataset: Dataset, on_eval=None) -> TrainResult:
    return GANTrainer(config, dataset).run(on_eval=on_eval)


def train_wgan_gp(config: TrainingConfig, dataset: Dataset, on_eval=None) -> TrainResult:
    return WGANGPTrainer(config, dataset).run(on_eval=on_eval)


def train_age(config: TrainingConfig, dataset: Dataset, on_eval=None) -> TrainResult:
    return AGETrainer(config, dataset).run(on_eval=on_eval)


def train_vae(config: TrainingConfig, dataset: Dataset, on_eval=None) -> TrainResult:
    return VAETrainer(config, dataset).run(on_eval=on_eval)


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def rows_to_csv(rows: list[dict], columns=METRIC_COLUMNS) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"
