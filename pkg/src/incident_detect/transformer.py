"""Transformer-encoder binary classifier for fixed-length feature vectors.

Each of the ``n_features`` columns becomes one token: the scalar feature
value times a learned embedding row, plus a sinusoidal positional row.  The
token sequence passes through post-norm encoder layers (multi-head
self-attention, then a ReLU feed-forward block), is mean-pooled, and a
linear + sigmoid head yields the incident probability.

A batch of ``B`` samples is carried as one ``(B * n_features, d_model)``
matrix; attention is computed block-wise per sample.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_binary_labels, check_features
from .exceptions import (
    ConfigurationError,
    DimensionError,
    NonFiniteError,
    TrainingDivergenceError,
)

_LAYER_PARAM_NAMES = (
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "ff_w1",
    "ff_b1",
    "ff_w2",
    "ff_b2",
    "ln1_gamma",
    "ln1_beta",
    "ln2_gamma",
    "ln2_beta",
)


@dataclass(frozen=True)
class TransformerConfig:
    n_features: int
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    pe_base: float = 100.0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.n_features < 1:
            raise ConfigurationError(f"n_features must be >= 1, got {self.n_features}")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigurationError(
                f"d_model ({self.d_model}) must be a positive multiple of n_heads ({self.n_heads})"
            )
        if self.n_layers < 0 or self.d_ff < 1:
            raise ConfigurationError("n_layers must be >= 0 and d_ff >= 1")
        if not self.pe_base > 1:
            raise ConfigurationError(f"pe_base must exceed 1, got {self.pe_base}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def positional_encoding(pos: int, dim: int, d_model: int, base: float = 100.0) -> float:
    """Sinusoidal position value: sine on even ``dim``, cosine on odd ``dim``."""
    if not 0 <= dim < d_model:
        raise IndexError(f"dim {dim} outside [0, {d_model})")
    i = dim // 2
    angle = pos / base ** (2 * i / d_model)
    return math.sin(angle) if dim % 2 == 0 else math.cos(angle)


def positional_table(length: int, d_model: int, base: float = 100.0) -> np.ndarray:
    table = np.empty((length, d_model))
    for pos in range(length):
        for dim in range(d_model):
            table[pos, dim] = positional_encoding(pos, dim, d_model, base)
    return table


@dataclass
class EncoderLayerParams:
    w_q: ad.Tensor
    w_k: ad.Tensor
    w_v: ad.Tensor
    w_o: ad.Tensor
    ff_w1: ad.Tensor
    ff_b1: ad.Tensor
    ff_w2: ad.Tensor
    ff_b2: ad.Tensor
    ln1_gamma: ad.Tensor
    ln1_beta: ad.Tensor
    ln2_gamma: ad.Tensor
    ln2_beta: ad.Tensor

    def parameters(self) -> list[ad.Tensor]:
        return [getattr(self, name) for name in _LAYER_PARAM_NAMES]


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> ad.Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _init_layer(cfg: TransformerConfig, rng: np.random.Generator) -> EncoderLayerParams:
    d, f = cfg.d_model, cfg.d_ff
    return EncoderLayerParams(
        w_q=_uniform(rng, d, (d, d)),
        w_k=_uniform(rng, d, (d, d)),
        w_v=_uniform(rng, d, (d, d)),
        w_o=_uniform(rng, d, (d, d)),
        ff_w1=_uniform(rng, d, (d, f)),
        ff_b1=_uniform(rng, d, (f,)),
        ff_w2=_uniform(rng, f, (f, d)),
        ff_b2=_uniform(rng, f, (d,)),
        ln1_gamma=ad.Tensor(np.ones(d), requires_grad=True),
        ln1_beta=ad.Tensor(np.zeros(d), requires_grad=True),
        ln2_gamma=ad.Tensor(np.ones(d), requires_grad=True),
        ln2_beta=ad.Tensor(np.zeros(d), requires_grad=True),
    )


@dataclass
class TransformerModel:
    config: TransformerConfig
    embedding: ad.Tensor
    layers: list[EncoderLayerParams]
    head_w: ad.Tensor
    head_b: ad.Tensor
    pe_table: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.pe_table is None:
            cfg = self.config
            self.pe_table = positional_table(cfg.n_features, cfg.d_model, cfg.pe_base)

    @classmethod
    def initialize(cls, config: TransformerConfig, rng: np.random.Generator) -> "TransformerModel":
        embedding = _uniform(rng, 1, (config.n_features, config.d_model))
        layers = [_init_layer(config, rng) for _ in range(config.n_layers)]
        head_w = _uniform(rng, config.d_model, (config.d_model, 1))
        head_b = _uniform(rng, config.d_model, (1,))
        return cls(config, embedding, layers, head_w, head_b)

    def named_parameters(self) -> dict[str, ad.Tensor]:
        params = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            for name in _LAYER_PARAM_NAMES:
                params[f"layers.{i}.{name}"] = getattr(layer, name)
        params["head_w"] = self.head_w
        params["head_b"] = self.head_b
        return params

    def parameters(self) -> list[ad.Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    @classmethod
    def from_state_dict(cls, config: TransformerConfig, state: dict) -> "TransformerModel":
        model = cls.initialize(config, np.random.default_rng(0))
        own = model.named_parameters()
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise ConfigurationError(f"checkpoint parameters do not match the config: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"parameter {name}: checkpoint shape {arr.shape}, expected {p.shape}")
            p.data = arr.copy()
        return model


def parameter_count(config: TransformerConfig) -> int:
    d, f, n = config.d_model, config.d_ff, config.n_features
    per_layer = 4 * d * d + d * f + f + f * d + d + 4 * d
    return n * d + config.n_layers * per_layer + d + 1


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def embed(x, model: TransformerModel) -> ad.Tensor:
    """Token ``t`` of each sample: ``x[t] * embedding[t] + PE[t]``; stacked per sample."""
    x = ad.as_tensor(x)
    n = model.config.n_features
    if x.data.ndim != 2 or x.shape[1] != n:
        raise DimensionError(f"expected {n} features per sample, got shape {x.shape}")
    tokens = ad.feature_tokens(x, model.embedding)
    return ad.add(tokens, np.tile(model.pe_table, (x.shape[0], 1)))


def attention_weights(q_j, k_j, length: int | None = None) -> ad.Tensor:
    """Row-softmax of scaled query-key scores within each length-``length`` sequence."""
    q_j, k_j = ad.as_tensor(q_j), ad.as_tensor(k_j)
    if q_j.data.ndim != 2 or q_j.shape != k_j.shape:
        raise DimensionError(f"query {q_j.shape} and key {k_j.shape} must share a shape")
    if length is None:
        length = q_j.shape[0]
    d_k = q_j.shape[1]
    scores = ad.group_scores(q_j, k_j, length)
    return ad.softmax_rows(ad.affine(scores, 1.0 / math.sqrt(d_k)))


def multi_head_attention(x, layer: EncoderLayerParams, cfg: TransformerConfig, length: int | None = None) -> ad.Tensor:
    x = ad.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != cfg.d_model:
        raise DimensionError(f"attention input has shape {x.shape}, expected (*, {cfg.d_model})")
    if length is None:
        length = x.shape[0]
    q = ad.matmul(x, layer.w_q)
    k = ad.matmul(x, layer.w_k)
    v = ad.matmul(x, layer.w_v)
    d_k = cfg.d_k
    heads = []
    for j in range(cfg.n_heads):
        lo, hi = j * d_k, (j + 1) * d_k
        weights = attention_weights(ad.slice_cols(q, lo, hi), ad.slice_cols(k, lo, hi), length)
        heads.append(ad.group_apply(weights, ad.slice_cols(v, lo, hi), length))
    return ad.matmul(ad.concat_cols(heads), layer.w_o)


def _norm(x: ad.Tensor, gamma: ad.Tensor, beta: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.mul(ad.layer_norm_rows(x), gamma), beta)


def _dropout(x: ad.Tensor, rate: float, rng: np.random.Generator | None) -> ad.Tensor:
    if rng is None or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, keep)


def feed_forward(x: ad.Tensor, layer: EncoderLayerParams) -> ad.Tensor:
    hidden = ad.relu(ad.add(ad.matmul(x, layer.ff_w1), layer.ff_b1))
    return ad.add(ad.matmul(hidden, layer.ff_w2), layer.ff_b2)


def encoder_forward(seq, model: TransformerModel, length: int | None = None, dropout_rng=None) -> ad.Tensor:
    """Post-norm encoder stack; ``dropout_rng`` enables dropout (training only)."""
    x = ad.as_tensor(seq)
    cfg = model.config
    rate = cfg.dropout_rate
    for layer in model.layers:
        attn = _dropout(multi_head_attention(x, layer, cfg, length), rate, dropout_rng)
        x = _norm(ad.add(x, attn), layer.ln1_gamma, layer.ln1_beta)
        ff = _dropout(feed_forward(x, layer), rate, dropout_rng)
        x = _norm(ad.add(x, ff), layer.ln2_gamma, layer.ln2_beta)
    return x


def classify_tensor(x, model: TransformerModel, dropout_rng=None) -> ad.Tensor:
    """Differentiable probabilities with shape ``(B, 1)``."""
    x = ad.as_tensor(x)
    n = model.config.n_features
    tokens = embed(x, model)
    encoded = encoder_forward(tokens, model, n, dropout_rng)
    pooled = ad.group_mean(encoded, n)
    return ad.sigmoid(ad.add(ad.matmul(pooled, model.head_w), model.head_b))


def classify(x, model: TransformerModel, chunk_size: int = 2048) -> np.ndarray:
    """Incident probabilities for every row of ``x``, shape ``(B,)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D feature matrix, got shape {x.shape}")
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], chunk_size):
        stop = start + chunk_size
        out[start:stop] = classify_tensor(x[start:stop], model).data[:, 0]
    return out


def bce_loss(p: ad.Tensor, y: np.ndarray) -> ad.Tensor:
    """Mean binary cross-entropy of probabilities ``p`` (B×1) against 0/1 labels."""
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    pos = ad.mul(ad.log_op(p), y)
    neg = ad.mul(ad.log_op(ad.affine(p, -1.0, 1.0)), 1.0 - y)
    return ad.affine(ad.mean(ad.add(pos, neg)), -1.0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_classifier(
    X,
    y,
    config: TransformerConfig,
    epochs: int = 30,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
) -> tuple[TransformerModel, list[float]]:
    """Fit a fresh model by Adam on shuffled mini-batches of mean BCE.

    Returns the model and the per-epoch mean training loss.
    """
    X = check_features(X, n_features=config.n_features)
    y = check_binary_labels(y, len(X))
    if len(np.unique(y)) < 2:
        raise ConfigurationError("training set must contain both classes")
    if epochs < 1 or batch_size < 1:
        raise ConfigurationError("epochs and batch_size must be positive")
    rng = np.random.default_rng(seed)
    model = TransformerModel.initialize(config, rng)
    opt = ad.Adam(model.parameters(), lr=lr)
    dropout_rng = rng if config.dropout_rate > 0 else None
    history: list[float] = []
    n = len(X)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                loss = bce_loss(classify_tensor(X[idx], model, dropout_rng), y[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteError("loss is not finite")
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
                total += value * len(idx)
        except NonFiniteError as exc:
            raise TrainingDivergenceError(f"classifier training diverged in epoch {epoch}: {exc}", epoch) from exc
        history.append(total / n)
    return model, history


class TransformerClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`train_classifier` and :func:`classify`.

    Expects already-scaled features and 0/1 labels.
    """

    def __init__(
        self,
        d_model=32,
        n_heads=4,
        n_layers=2,
        d_ff=64,
        pe_base=100.0,
        dropout_rate=0.0,
        epochs=30,
        batch_size=64,
        learning_rate=1e-3,
        threshold=0.5,
        random_state=0,
    ):
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.d_ff = d_ff
        self.pe_base = pe_base
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.threshold = threshold
        self.random_state = random_state

    def _config(self, n_features: int) -> TransformerConfig:
        return TransformerConfig(
            n_features=n_features,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ff=self.d_ff,
            pe_base=float(self.pe_base),
            dropout_rate=float(self.dropout_rate),
        )

    def fit(self, X, y):
        X = check_features(X)
        config = self._config(X.shape[1])
        self.model_, self.loss_history_ = train_classifier(
            X,
            y,
            config,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            seed=self.random_state,
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = classify(check_features(X, n_features=self.n_features_in_), self.model_)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return (self.decision_function(X) >= self.threshold).astype(int)

    @classmethod
    def from_model(cls, model: TransformerModel, **params) -> "TransformerClassifier":
        cfg = model.config
        clf = cls(
            d_model=cfg.d_model,
            n_heads=cfg.n_heads,
            n_layers=cfg.n_layers,
            d_ff=cfg.d_ff,
            pe_base=cfg.pe_base,
            dropout_rate=cfg.dropout_rate,
            **params,
        )
        clf.model_ = model
        clf.loss_history_ = []
        clf.classes_ = np.array([0, 1])
        clf.n_features_in_ = cfg.n_features
        return clf


def config_to_dict(config: TransformerConfig) -> dict:
    return asdict(config)
