"""Unconditional GAN over minority-class feature rows, and ratio-driven oversampling.

The generator maps standard-normal noise through a ReLU MLP with a ``tanh``
output, so it works in min-max ``[-1, 1]`` feature space; the fitted
:class:`~incident_detect.data.Normalizer` travels with the model and maps
generated rows back to original units.  The discriminator is a ReLU MLP
with a sigmoid output.

Training alternates ``d_steps_per_g_step`` discriminator updates with one
generator update.  Each side is updated only by its own optimizer, and the
other side's parameters are frozen while its loss is built.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_binary_labels, check_features
from .data import Normalizer, SampleTable
from .exceptions import (
    ConfigurationError,
    NonFiniteError,
    NumericDomainError,
    PreconditionError,
    TrainingDivergenceError,
)

LOSS_MODES = ("paper", "non_saturating")


@dataclass(frozen=True)
class GanConfig:
    noise_dim: int = 16
    gen_hidden: tuple = (64, 64)
    disc_hidden: tuple = (64, 32)
    batch_size: int = 64
    # one D step per G step oscillates and mode-collapses on small tabular data
    d_steps_per_g_step: int = 5
    epochs: int = 500
    lr: float = 2e-4
    seed: int = 0
    loss_mode: str = "paper"
    beta1: float = 0.5
    beta2: float = 0.999

    def __post_init__(self):
        object.__setattr__(self, "gen_hidden", tuple(int(w) for w in self.gen_hidden))
        object.__setattr__(self, "disc_hidden", tuple(int(w) for w in self.disc_hidden))
        if self.noise_dim < 1:
            raise ConfigurationError(f"noise_dim must be >= 1, got {self.noise_dim}")
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.batch_size}")
        if any(w < 1 for w in self.gen_hidden + self.disc_hidden):
            raise ConfigurationError("all hidden widths must be >= 1")
        if self.d_steps_per_g_step < 1 or self.epochs < 1:
            raise ConfigurationError("d_steps_per_g_step and epochs must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigurationError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")


Layers = list  # [(weight, bias), ...]


def _init_mlp(widths, rng: np.random.Generator) -> Layers:
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(1.0 / fan_in)
        w = ad.Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
        b = ad.Tensor(rng.uniform(-bound, bound, size=(fan_out,)), requires_grad=True)
        layers.append((w, b))
    return layers


def _mlp(x, layers: Layers, output: str) -> ad.Tensor:
    h = ad.as_tensor(x)
    for i, (w, b) in enumerate(layers):
        h = ad.add(ad.matmul(h, w), b)
        h = ad.activation(output if i == len(layers) - 1 else "relu", h)
    return h


def _flat(layers: Layers) -> list[ad.Tensor]:
    return [p for pair in layers for p in pair]


@dataclass
class GanModel:
    config: GanConfig
    n_features: int
    generator: Layers
    discriminator: Layers
    normalizer: Normalizer
    history: list = field(default_factory=list)

    @classmethod
    def initialize(cls, config: GanConfig, n_features: int, normalizer: Normalizer, rng) -> "GanModel":
        gen = _init_mlp((config.noise_dim, *config.gen_hidden, n_features), rng)
        disc = _init_mlp((n_features, *config.disc_hidden, 1), rng)
        return cls(config, n_features, gen, disc, normalizer)

    def generator_parameters(self) -> list[ad.Tensor]:
        return _flat(self.generator)

    def discriminator_parameters(self) -> list[ad.Tensor]:
        return _flat(self.discriminator)

    def generate_scaled(self, z) -> ad.Tensor:
        """Generator output in ``[-1, 1]`` feature space."""
        return _mlp(z, self.generator, "tanh")

    def discriminate(self, x) -> ad.Tensor:
        """Probability that each scaled row is real, shape ``(B,)``."""
        out = _mlp(x, self.discriminator, "sigmoid")
        return ad.reshape(out, (out.shape[0],))

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for prefix, layers in (("generator", self.generator), ("discriminator", self.discriminator)):
            for i, (w, b) in enumerate(layers):
                state[f"{prefix}.{i}.weight"] = w.data.copy()
                state[f"{prefix}.{i}.bias"] = b.data.copy()
        return state

    def load_state_dict(self, state: dict) -> None:
        own = self.state_dict()
        if set(own) != set(state):
            raise ConfigurationError("GAN checkpoint parameters do not match the config")
        for prefix, layers in (("generator", self.generator), ("discriminator", self.discriminator)):
            for i, (w, b) in enumerate(layers):
                w.data = np.asarray(state[f"{prefix}.{i}.weight"], dtype=np.float64).reshape(w.shape).copy()
                b.data = np.asarray(state[f"{prefix}.{i}.bias"], dtype=np.float64).reshape(b.shape).copy()


def sample_noise(count: int, noise_dim: int, rng: np.random.Generator) -> ad.Tensor:
    if count < 1:
        raise PreconditionError(f"noise count must be >= 1, got {count}")
    return ad.Tensor(rng.standard_normal((count, noise_dim)))


def _check_probabilities(t: ad.Tensor, name: str) -> None:
    if (t.data < 0).any() or (t.data > 1).any():
        raise NumericDomainError(f"{name} must lie in [0, 1]")


def discriminator_loss(d_real, d_fake) -> ad.Tensor:
    """Value to minimize: ``-(mean log D(x) + mean log(1 - D(G(z))))``.

    Its negation is the discriminator objective in the usual (maximized)
    sign, which is at most 0.
    """
    d_real, d_fake = ad.as_tensor(d_real), ad.as_tensor(d_fake)
    _check_probabilities(d_real, "d_real")
    _check_probabilities(d_fake, "d_fake")
    real_term = ad.mean(ad.log_op(d_real))
    fake_term = ad.mean(ad.log_op(ad.affine(d_fake, -1.0, 1.0)))
    return ad.affine(ad.add(real_term, fake_term), -1.0)


def generator_loss(d_fake, mode: str = "paper") -> ad.Tensor:
    """``mean log(1 - D(G(z)))`` (``paper``) or ``-mean log D(G(z))`` (``non_saturating``)."""
    d_fake = ad.as_tensor(d_fake)
    if mode not in LOSS_MODES:
        raise ConfigurationError(f"unknown generator loss mode {mode!r}")
    _check_probabilities(d_fake, "d_fake")
    if mode == "paper":
        return ad.mean(ad.log_op(ad.affine(d_fake, -1.0, 1.0)))
    return ad.affine(ad.mean(ad.log_op(d_fake)), -1.0)


def train_gan(
    minority,
    config: GanConfig = GanConfig(),
    normalizer: Normalizer | None = None,
    step_callback: Callable[[str, GanModel], None] | None = None,
) -> GanModel:
    """Fit a GAN to minority-class rows given in original feature units.

    ``normalizer`` defaults to a min-max scaler fitted on ``minority``.
    ``step_callback(side, model)`` runs after every ``"d"`` and ``"g"`` update.
    """
    X = check_features(minority)
    if len(X) < 2 * config.batch_size:
        raise ConfigurationError(
            f"GAN training needs at least {2 * config.batch_size} rows (2 x batch_size), got {len(X)}"
        )
    if normalizer is None:
        normalizer = Normalizer(mode="minmax").fit(X)
    scaled = normalizer.transform(X)
    rng = np.random.default_rng(config.seed)
    model = GanModel.initialize(config, X.shape[1], normalizer, rng)
    d_params = model.discriminator_parameters()
    g_params = model.generator_parameters()
    opt_d = ad.Adam(d_params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_g = ad.Adam(g_params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    m = config.batch_size
    n_batches = len(X) // m
    d_updates = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        sums = {"loss_d": 0.0, "loss_g": 0.0, "mean_d_real": 0.0, "mean_d_fake": 0.0}
        g_steps = 0
        try:
            for b in range(n_batches):
                real = ad.Tensor(scaled[order[b * m : (b + 1) * m]])
                with ad.frozen(g_params):
                    fake = model.generate_scaled(sample_noise(m, config.noise_dim, rng))
                d_real = model.discriminate(real)
                d_fake = model.discriminate(fake)
                loss_d = discriminator_loss(d_real, d_fake)
                opt_d.zero_grad()
                ad.backward(loss_d)
                opt_d.step()
                d_updates += 1
                sums["loss_d"] += -loss_d.item()
                sums["mean_d_real"] += float(d_real.data.mean())
                sums["mean_d_fake"] += float(d_fake.data.mean())
                if step_callback is not None:
                    step_callback("d", model)
                if d_updates % config.d_steps_per_g_step:
                    continue
                with ad.frozen(d_params):
                    d_gen = model.discriminate(model.generate_scaled(sample_noise(m, config.noise_dim, rng)))
                loss_g = generator_loss(d_gen, config.loss_mode)
                opt_g.zero_grad()
                ad.backward(loss_g)
                opt_g.step()
                g_steps += 1
                sums["loss_g"] += loss_g.item()
                if step_callback is not None:
                    step_callback("g", model)
        except NonFiniteError as exc:
            raise TrainingDivergenceError(f"GAN training diverged in epoch {epoch}: {exc}", epoch) from exc
        record = {
            "epoch": epoch,
            "loss_d": sums["loss_d"] / n_batches,
            "loss_g": sums["loss_g"] / g_steps if g_steps else None,
            "mean_d_real": sums["mean_d_real"] / n_batches,
            "mean_d_fake": sums["mean_d_fake"] / n_batches,
        }
        if not (math.isfinite(record["loss_d"]) and (record["loss_g"] is None or math.isfinite(record["loss_g"]))):
            raise TrainingDivergenceError(f"GAN training diverged in epoch {epoch}", epoch)
        model.history.append(record)
    return model


def generate(model: GanModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` synthetic rows in original feature units."""
    if count < 0:
        raise PreconditionError(f"count must be >= 0, got {count}")
    if count == 0:
        return np.empty((0, model.n_features))
    scaled = model.generate_scaled(sample_noise(count, model.config.noise_dim, rng)).data
    return model.normalizer.inverse_transform(scaled)


def parse_ratio(text) -> tuple[int, int]:
    """``"2:3"`` -> ``(2, 3)``; tuples pass through after validation."""
    if isinstance(text, str):
        parts = text.split(":")
        if len(parts) != 2:
            raise ConfigurationError(f"ratio must look like 'a:b', got {text!r}")
        try:
            inc, non = (int(p) for p in parts)
        except ValueError:
            raise ConfigurationError(f"ratio must hold integers, got {text!r}") from None
    else:
        inc, non = (int(v) for v in text)
    if non <= 0:
        raise ConfigurationError(f"ratio denominator must be positive, got {inc}:{non}")
    if inc <= 0:
        raise ConfigurationError(f"ratio numerator must be positive, got {inc}:{non}")
    return inc, non


def synthetic_row_count(n_incident: int, n_non_incident: int, ratio) -> int:
    """Rows to add so that incidents reach ``ceil(n_non * inc / non)``; 0 if already there."""
    inc, non = parse_ratio(ratio)
    target = -(-n_non_incident * inc // non)
    return max(0, target - n_incident)


def augment_to_ratio(table: SampleTable, model: GanModel, ratio, rng: np.random.Generator) -> SampleTable:
    """Append GAN rows (label 1, flagged synthetic) until the incident ratio is met.

    All existing rows are kept unchanged and in order; an already balanced
    table is returned as is.
    """
    if table.n_incident == 0 or table.n_non_incident == 0:
        raise ConfigurationError("augmentation needs both classes present")
    if model.n_features != table.n_features:
        raise ConfigurationError(f"GAN produces {model.n_features} features, table has {table.n_features}")
    k = synthetic_row_count(table.n_incident, table.n_non_incident, ratio)
    if k == 0:
        return table
    rows = generate(model, k, rng)
    extra = SampleTable(table.feature_names, rows, np.ones(k, dtype=np.int64), np.ones(k, dtype=np.int64))
    return table.append(extra)


class GANOversampler(BaseEstimator):
    """Scikit-learn style wrapper: ``fit`` on the minority class, then ``sample`` or ``fit_resample``."""

    def __init__(
        self,
        ratio="1:1",
        noise_dim=16,
        gen_hidden=(64, 64),
        disc_hidden=(64, 32),
        batch_size=64,
        d_steps_per_g_step=5,
        epochs=500,
        learning_rate=2e-4,
        beta1=0.5,
        loss_mode="paper",
        random_state=0,
    ):
        self.ratio = ratio
        self.noise_dim = noise_dim
        self.gen_hidden = gen_hidden
        self.disc_hidden = disc_hidden
        self.batch_size = batch_size
        self.d_steps_per_g_step = d_steps_per_g_step
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.loss_mode = loss_mode
        self.random_state = random_state

    def _config(self) -> GanConfig:
        return GanConfig(
            noise_dim=self.noise_dim,
            gen_hidden=self.gen_hidden,
            disc_hidden=self.disc_hidden,
            batch_size=self.batch_size,
            d_steps_per_g_step=self.d_steps_per_g_step,
            epochs=self.epochs,
            lr=self.learning_rate,
            beta1=self.beta1,
            seed=self.random_state,
            loss_mode=self.loss_mode,
        )

    def fit(self, X, y=None):
        """Fit on all rows of ``X``, or only on rows with ``y == 1`` when labels are given."""
        X = check_features(X)
        if y is not None:
            X = X[check_binary_labels(y, len(X)) == 1]
        self.model_ = train_gan(X, self._config())
        self.history_ = self.model_.history
        self.n_features_in_ = X.shape[1]
        return self

    def sample(self, n_samples, random_state=None):
        check_is_fitted(self, "model_")
        seed = self.random_state if random_state is None else random_state
        return generate(self.model_, int(n_samples), np.random.default_rng(seed))

    def fit_resample(self, X, y):
        X = check_features(X)
        y = check_binary_labels(y, len(X))
        self.fit(X, y)
        table = SampleTable(tuple(f"x{i}" for i in range(X.shape[1])), X, y)
        out = augment_to_ratio(table, self.model_, self.ratio, np.random.default_rng(self.random_state))
        self.synthetic_mask_ = out.synthetic.astype(bool)
        return out.features, out.labels


def config_to_dict(config: GanConfig) -> dict:
    payload = asdict(config)
    payload["gen_hidden"] = list(config.gen_hidden)
    payload["disc_hidden"] = list(config.disc_hidden)
    return payload
