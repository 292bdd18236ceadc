"""Incident detection on tabular traffic features.

A GAN oversamples the minority (incident) class, a transformer encoder
classifies rows, and helpers report DR / FAR / CR / AUC plus real-versus-
synthetic distribution diagnostics.  Everything runs on a small numpy
reverse-mode autodiff engine (:mod:`incident_detect.autodiff`).
"""

__version__ = "0.1.0"

from .data import Normalizer, SampleTable, SplitSpec, derive_seed, generate_oracle_dataset, load_csv, split
from .diagnostics import compare
from .exceptions import (
    ConfigurationError,
    DimensionError,
    IncidentDetectError,
    InputError,
    NonFiniteError,
    NumericDomainError,
    PreconditionError,
    TrainingDivergenceError,
    UndefinedMetricError,
)
from .gan import GanConfig, GANOversampler, augment_to_ratio, train_gan
from .metrics import EvaluationReport, evaluate, roc_and_auc
from .transformer import TransformerClassifier, TransformerConfig, train_classifier

__all__ = [
    "__version__",
    "Normalizer",
    "SampleTable",
    "SplitSpec",
    "derive_seed",
    "generate_oracle_dataset",
    "load_csv",
    "split",
    "compare",
    "ConfigurationError",
    "DimensionError",
    "IncidentDetectError",
    "InputError",
    "NonFiniteError",
    "NumericDomainError",
    "PreconditionError",
    "TrainingDivergenceError",
    "UndefinedMetricError",
    "GanConfig",
    "GANOversampler",
    "augment_to_ratio",
    "train_gan",
    "EvaluationReport",
    "evaluate",
    "roc_and_auc",
    "TransformerClassifier",
    "TransformerConfig",
    "train_classifier",
]
