"""Labeled tables, feature scaling, stratified splitting, CSV I/O and oracle data.

The oracle generator draws a two-class Gaussian dataset with known
parameters, standing in for loop-detector traffic data: the non-incident
class sits at free-flow values and the incident class is shifted by a
configurable number of standard deviations along a fixed direction (speed
down and occupancy up upstream of the incident, flow down downstream).
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_binary_labels, check_features
from .exceptions import ConfigurationError, DimensionError, InputError

SEED_STAGES = ("data", "split", "gan", "augment", "classifier", "evaluate")


def derive_seed(master_seed: int, stage: str) -> int:
    """Per-stage seed: the master seed mixed with the stage's index by ``SeedSequence``."""
    index = SEED_STAGES.index(stage)
    return int(np.random.SeedSequence([int(master_seed), index]).generate_state(1)[0])


def format_float(value: float) -> str:
    """Shortest decimal string that parses back to the same float64."""
    return repr(float(value))


class Normalizer(TransformerMixin, BaseEstimator):
    """Per-feature scaling to ``[-1, 1]`` (``minmax``) or to zero mean, unit SD (``zscore``).

    Constant features map to 0 and invert to the constant.
    """

    def __init__(self, mode="minmax"):
        self.mode = mode

    def fit(self, X, y=None):
        if self.mode not in ("minmax", "zscore"):
            raise ConfigurationError(f"unknown normalizer mode {self.mode!r}")
        X = check_features(X)
        if self.mode == "minmax":
            self.center_ = X.min(axis=0)
            self.scale_ = X.max(axis=0) - X.min(axis=0)
        else:
            self.center_ = X.mean(axis=0)
            self.scale_ = X.std(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def _degenerate(self):
        return self.scale_ == 0

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_features(X, n_features=self.n_features_in_, allow_empty=True)
        safe = np.where(self._degenerate(), 1.0, self.scale_)
        z = (X - self.center_) / safe
        if self.mode == "minmax":
            z = 2.0 * z - 1.0
        return np.where(self._degenerate(), 0.0, z)

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_features(X, n_features=self.n_features_in_, allow_empty=True)
        z = (X + 1.0) / 2.0 if self.mode == "minmax" else X
        return np.where(self._degenerate(), self.center_, self.center_ + z * self.scale_)

    def to_dict(self) -> dict:
        check_is_fitted(self, "scale_")
        return {"mode": self.mode, "center": self.center_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "Normalizer":
        norm = cls(mode=payload["mode"])
        norm.center_ = np.asarray(payload["center"], dtype=np.float64)
        norm.scale_ = np.asarray(payload["scale"], dtype=np.float64)
        norm.n_features_in_ = len(norm.center_)
        return norm


@dataclass(frozen=True, eq=False)
class SampleTable:
    """Feature matrix in original units with 0/1 labels and synthetic-row flags."""

    feature_names: tuple
    features: np.ndarray
    labels: np.ndarray
    synthetic: np.ndarray = None
    normalizer: Normalizer | None = None

    def __post_init__(self):
        features = check_features(self.features, allow_empty=True)
        if features.shape[1] != len(self.feature_names):
            raise DimensionError(
                f"{len(self.feature_names)} feature names for {features.shape[1]} feature columns"
            )
        labels = check_binary_labels(self.labels, len(features))
        synthetic = np.zeros(len(features), dtype=np.int64) if self.synthetic is None else self.synthetic
        synthetic = check_binary_labels(synthetic, len(features))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "synthetic", synthetic)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_incident(self) -> int:
        return int(self.labels.sum())

    @property
    def n_non_incident(self) -> int:
        return len(self) - self.n_incident

    def take(self, index) -> "SampleTable":
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            features=self.features[index],
            labels=self.labels[index],
            synthetic=self.synthetic[index],
        )

    def incidents(self) -> np.ndarray:
        return self.features[self.labels == 1]

    def real_rows(self) -> "SampleTable":
        return self.take(np.flatnonzero(self.synthetic == 0))

    def synthetic_rows(self) -> "SampleTable":
        return self.take(np.flatnonzero(self.synthetic == 1))

    def append(self, other: "SampleTable") -> "SampleTable":
        if other.feature_names != self.feature_names:
            raise DimensionError("cannot append tables with different feature columns")
        return replace(
            self,
            features=np.vstack([self.features, other.features]),
            labels=np.concatenate([self.labels, other.labels]),
            synthetic=np.concatenate([self.synthetic, other.synthetic]),
        )

    def equals(self, other: "SampleTable") -> bool:
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.synthetic, other.synthetic)
        )


def fit_normalizer(table: SampleTable, mode: str = "minmax") -> Normalizer:
    if len(table) == 0:
        raise InputError("cannot fit a normalizer on an empty table")
    return Normalizer(mode=mode).fit(table.features)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def split(table: SampleTable, spec: SplitSpec = SplitSpec()) -> tuple[SampleTable, SampleTable]:
    """Seeded train/test split; each class contributes ``ceil(fraction * count)`` training rows.

    Rows keep their original relative order inside each part.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        classes = np.unique(table.labels)
        if len(classes) < 2:
            raise ConfigurationError("stratified split needs both classes present")
        groups = [np.flatnonzero(table.labels == c) for c in (0, 1)]
    else:
        groups = [np.arange(len(table))]
    train_idx = []
    for group in groups:
        shuffled = rng.permutation(group)
        # round() absorbs float noise such as 0.7 * 10 = 7.000000000000001
        n_train = math.ceil(round(spec.train_fraction * len(group), 9))
        train_idx.append(shuffled[:n_train])
    train_idx = np.sort(np.concatenate(train_idx)) if train_idx else np.array([], dtype=np.int64)
    test_mask = np.ones(len(table), dtype=bool)
    test_mask[train_idx] = False
    return table.take(train_idx), table.take(np.flatnonzero(test_mask))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_csv(path, label_column: str = "label", synthetic_column: str = "synthetic") -> SampleTable:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise InputError(f"{path}: label column {label_column!r} not in header {header}")
        label_at = header.index(label_column)
        synth_at = header.index(synthetic_column) if synthetic_column in header else None
        feature_at = [i for i in range(len(header)) if i not in (label_at, synth_at)]
        rows, labels, flags = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {line_no} has {len(row)} cells, header has {len(header)}")
            values = []
            for i in feature_at:
                try:
                    values.append(float(row[i]))
                except ValueError:
                    raise InputError(
                        f"{path}: row {line_no}, column {header[i]!r}: cannot parse {row[i]!r} as a number"
                    ) from None
            rows.append(values)
            labels.append(_parse_flag(row[label_at], path, line_no, label_column))
            flags.append(0 if synth_at is None else _parse_flag(row[synth_at], path, line_no, synthetic_column))
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_at))
    if not np.isfinite(features).all():
        raise InputError(f"{path}: non-finite feature values")
    return SampleTable(tuple(header[i] for i in feature_at), features, np.array(labels), np.array(flags))


def _parse_flag(cell: str, path, line_no: int, column: str) -> int:
    cell = cell.strip()
    if cell in ("0", "1"):
        return int(cell)
    try:
        value = float(cell)
    except ValueError:
        value = None
    if value in (0.0, 1.0):
        return int(value)
    raise InputError(f"{path}: row {line_no}, column {column!r}: expected 0 or 1, got {cell!r}")


def table_to_csv_text(table: SampleTable, label_column: str = "label") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    with_flags = bool(table.synthetic.any())
    header = list(table.feature_names) + [label_column] + (["synthetic"] if with_flags else [])
    writer.writerow(header)
    for row, label, flag in zip(table.features, table.labels, table.synthetic):
        cells = [format_float(v) for v in row] + [str(int(label))]
        if with_flags:
            cells.append(str(int(flag)))
        writer.writerow(cells)
    return buf.getvalue()


def save_csv(table: SampleTable, path, label_column: str = "label") -> None:
    atomic_write_text(path, table_to_csv_text(table, label_column))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with tmp.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# oracle data
# ---------------------------------------------------------------------------

TRAFFIC_FEATURES = (
    "upstream_speed",
    "downstream_speed",
    "upstream_flow",
    "downstream_flow",
    "upstream_occupancy",
    "downstream_occupancy",
    "speed_difference",
)
_TRAFFIC_MEAN = (62.0, 60.0, 1500.0, 1480.0, 9.0, 10.0, 2.0)
_TRAFFIC_SD = (6.0, 6.0, 250.0, 250.0, 3.0, 3.0, 3.0)
# incident shift per unit of separation, in non-incident SDs
_TRAFFIC_DIRECTION = (-1.0, 0.5, -0.5, -1.0, 1.0, -0.5, -1.0)


@dataclass(frozen=True)
class OracleProfile:
    """Independent per-feature Gaussians for each class (row 0 non-incident, row 1 incident)."""

    feature_names: tuple
    means: tuple
    sds: tuple

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        sds = np.asarray(self.sds, dtype=np.float64)
        n = len(self.feature_names)
        if means.shape != (2, n) or sds.shape != (2, n):
            raise ConfigurationError(f"profile needs 2x{n} means and SDs, got {means.shape} and {sds.shape}")
        if not (sds > 0).all():
            raise ConfigurationError("profile standard deviations must be positive")
        if not np.isfinite(means).all():
            raise ConfigurationError("profile means must be finite")
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "means", tuple(map(tuple, means.tolist())))
        object.__setattr__(self, "sds", tuple(map(tuple, sds.tolist())))

    def draw(self, label: int, count: int, rng: np.random.Generator) -> np.ndarray:
        mean = np.asarray(self.means[label])
        sd = np.asarray(self.sds[label])
        return mean + sd * rng.standard_normal((count, len(self.feature_names)))

    def to_dict(self) -> dict:
        return {"feature_names": list(self.feature_names), "means": [list(m) for m in self.means], "sds": [list(s) for s in self.sds]}

    @classmethod
    def from_dict(cls, payload: dict) -> "OracleProfile":
        return cls(tuple(payload["feature_names"]), payload["means"], payload["sds"])


def shifted_profile(feature_names, mean, sd, direction, separation: float) -> OracleProfile:
    """Incident class = non-incident class moved ``separation * direction`` SDs."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    incident = mean + separation * np.asarray(direction, dtype=np.float64) * sd
    return OracleProfile(tuple(feature_names), [mean, incident], [sd, sd])


def traffic_profile(separation: float = 2.0) -> OracleProfile:
    """Seven loop-detector-like features; larger ``separation`` means less class overlap."""
    return shifted_profile(TRAFFIC_FEATURES, _TRAFFIC_MEAN, _TRAFFIC_SD, _TRAFFIC_DIRECTION, separation)


PROFILES = {
    "default": lambda: traffic_profile(2.0),
    "overlap": lambda: traffic_profile(0.5),
    "separated": lambda: traffic_profile(10.0),
}


def get_profile(name: str) -> OracleProfile:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def generate_oracle_dataset(
    profile: OracleProfile, n_incident: int, n_non_incident: int, seed: int = 0
) -> tuple[SampleTable, dict]:
    """Draw a shuffled labeled table from ``profile`` plus its ground-truth record."""
    if n_incident < 1 or n_non_incident < 1:
        raise ConfigurationError("oracle class counts must be positive")
    rng = np.random.default_rng(seed)
    non = profile.draw(0, n_non_incident, rng)
    inc = profile.draw(1, n_incident, rng)
    features = np.vstack([non, inc])
    labels = np.concatenate([np.zeros(n_non_incident, dtype=np.int64), np.ones(n_incident, dtype=np.int64)])
    order = rng.permutation(len(labels))
    table = SampleTable(profile.feature_names, features[order], labels[order])
    truth = {
        "profile": profile.to_dict(),
        "n_incident": int(n_incident),
        "n_non_incident": int(n_non_incident),
        "seed": int(seed),
        "generator": "numpy PCG64 (default_rng)",
    }
    return table, truth
