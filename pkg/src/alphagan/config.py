"""Training configuration shared by the trainers and the command line."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

ALGORITHMS = ("alpha_gan", "gan", "wgan_gp", "age", "vae")

# (generator, encoder, discriminator, code_discriminator) updates per iteration
DEFAULT_SCHEDULES = {
    "alpha_gan": (2, 2, 1, 1),
    "gan": (2, 0, 1, 0),
    "wgan_gp": (1, 0, 5, 0),
    "age": (2, 1, 0, 0),
    "vae": (1, 1, 0, 0),
}

# Weight init std when ``init_scale`` is left as None. The VAE has no
# adversary to break the symmetry of near-zero weights and stalls at 0.02.
DEFAULT_INIT_SCALES = {"alpha_gan": 0.02, "gan": 0.02, "wgan_gp": 0.02, "age": 0.02, "vae": 0.2}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class TrainingConfig:
    algorithm: str = "alpha_gan"
    seed: int = 0
    max_iter: int = 20000
    eval_every: int = 1000
    batch_size: int = 64
    eval_batch_size: int = 512
    latent_dim: int = 10

    lr_generator: float = 0.0005
    lr_encoder: float = 0.0005
    lr_discriminator: float = 0.0005
    lr_code_discriminator: float = 0.0005
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8

    # None picks the algorithm's default from DEFAULT_SCHEDULES
    generator_steps: int | None = None
    encoder_steps: int | None = None
    discriminator_steps: int | None = None
    code_discriminator_steps: int | None = None
    fresh_batches: bool = True

    recon_weight: float = 10.0
    real_weight: float = 1.0
    gan_generator_loss: str = "alternative"
    gp_coeff: float = 10.0
    age_w_data: float = 100.0
    age_w_code: float = 10.0
    age_per_dim_kl: bool = True

    hidden_width: int = 64
    hidden_layers: int = 2
    code_disc_width: int = 64
    code_disc_layers: int = 3
    # Gaussian noise inputs appended to the encoder input; 0 makes it deterministic
    encoder_noise_dim: int = 10
    init: str = "normal"
    init_scale: float | None = None

    log_wall_time: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}", "algorithm")
        for key in ("lr_generator", "lr_encoder", "lr_discriminator", "lr_code_discriminator"):
            value = getattr(self, key)
            if not isinstance(value, (int, float)) or not value >= 0:
                raise ConfigError(f"{key} must be a non-negative number, got {value!r}", key)
        for key in ("generator_steps", "encoder_steps", "discriminator_steps", "code_discriminator_steps"):
            value = getattr(self, key)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise ConfigError(f"{key} must be an integer >= 1, got {value!r}", key)
        positive_ints = ("max_iter", "eval_every", "batch_size", "eval_batch_size", "latent_dim",
                         "hidden_width", "hidden_layers", "code_disc_width", "code_disc_layers")
        for key in positive_ints:
            value = getattr(self, key)
            minimum = 0 if key == "max_iter" else 1
            if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
                raise ConfigError(f"{key} must be an integer >= {minimum}, got {value!r}", key)
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2", "batch_size")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer", "seed")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ConfigError("init_scale must be positive", "init_scale")
        for key in ("recon_weight", "age_w_data", "age_w_code", "adam_eps"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive", key)
        if self.gp_coeff < 0:
            raise ConfigError("gp_coeff must be non-negative", "gp_coeff")
        if self.real_weight <= 0:
            raise ConfigError("real_weight must be positive", "real_weight")
        for key in ("beta1", "beta2"):
            if not 0 <= getattr(self, key) < 1:
                raise ConfigError(f"{key} must lie in [0, 1)", key)
        if self.encoder_noise_dim < 0:
            raise ConfigError("encoder_noise_dim must be non-negative", "encoder_noise_dim")
        if self.init not in ("normal", "uniform"):
            raise ConfigError("init must be 'normal' or 'uniform'", "init")
        if self.gan_generator_loss not in ("saturating", "alternative", "reverse_kl"):
            raise ConfigError("unknown gan_generator_loss", "gan_generator_loss")

    def schedule(self) -> dict[str, int]:
        g, e, d, c = DEFAULT_SCHEDULES[self.algorithm]
        pick = lambda value, default: default if value is None else value  # noqa: E731
        return {
            "generator": pick(self.generator_steps, g),
            "encoder": pick(self.encoder_steps, e),
            "discriminator": pick(self.discriminator_steps, d),
            "code_discriminator": pick(self.code_discriminator_steps, c),
        }

    def weight_scale(self) -> float:
        return DEFAULT_INIT_SCALES[self.algorithm] if self.init_scale is None else self.init_scale

    def replace(self, **changes) -> TrainingConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> TrainingConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}", unknown[0])
        return cls(**values)

