"""Detection metrics: confusion counts, DR / FAR / CR, ROC and AUC.

Two false-alarm rates are reported.  ``paper`` mode divides false
detections by correct detections (``fp / tp``) and can exceed 1;
``conventional`` mode is the usual false-positive rate ``fp / (fp + tn)``.
CR is overall accuracy.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_binary_labels
from .data import SampleTable, format_float
from .exceptions import InputError, UndefinedMetricError

FAR_MODES = ("paper", "conventional")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    @property
    def total(self) -> int:
        return self.positives + self.negatives


def _scores_and_labels(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if len(scores) != len(labels):
        raise InputError(f"{len(scores)} scores but {len(labels)} labels")
    if len(scores) == 0:
        raise InputError("no samples to evaluate")
    if not np.isfinite(scores).all():
        raise InputError("scores contain NaN or Inf")
    return scores, check_binary_labels(labels)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Tally predictions ``score >= threshold`` against the labels."""
    scores, labels = _scores_and_labels(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        threshold=float(threshold),
    )


def detection_rate(c: ConfusionCounts) -> float:
    if c.positives == 0:
        raise UndefinedMetricError("detection rate undefined: no incident samples")
    return c.tp / c.positives


def false_alarm_rate(c: ConfusionCounts, mode: str = "paper") -> float:
    if mode == "paper":
        if c.tp == 0:
            raise UndefinedMetricError("false alarm rate (paper mode, fp/tp) undefined: no correct detections")
        return c.fp / c.tp
    if mode == "conventional":
        if c.negatives == 0:
            raise UndefinedMetricError("false alarm rate (conventional mode, fp/(fp+tn)) undefined: no negatives")
        return c.fp / c.negatives
    raise ValueError(f"unknown FAR mode {mode!r}; choose from {FAR_MODES}")


def classification_rate(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise InputError("classification rate of an empty sample")
    return (c.tp + c.tn) / c.total


def roc_and_auc(scores, labels) -> tuple[list[tuple[float, float]], float]:
    """ROC points from descending distinct thresholds, and the trapezoidal AUC.

    Equal scores form a single step, so ties contribute half credit.
    """
    scores, labels = _scores_and_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC/AUC undefined: labels contain a single class")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    points = [(0.0, 0.0)]
    points += [(fp / n_neg, tp / n_pos) for tp, fp in zip(tps.tolist(), fps.tolist())]
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


@dataclass
class EvaluationReport:
    dr: float | None
    far_paper: float | None
    far_conventional: float | None
    cr: float | None
    auc: float | None
    roc_points: list = field(default_factory=list)
    counts: ConfusionCounts | None = None
    eval_wall_clock_seconds: float | None = None
    far_primary: str = "paper"
    undefined: list = field(default_factory=list)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["roc_points"] = [list(p) for p in self.roc_points]
        return payload

    def to_json(self, **extra) -> str:
        payload = {**extra, **self.to_dict()}
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_dict(cls, payload: dict) -> "EvaluationReport":
        known = {k: payload[k] for k in cls.__dataclass_fields__ if k in payload}
        if known.get("counts") is not None:
            known["counts"] = ConfusionCounts(**known["counts"])
        known["roc_points"] = [tuple(p) for p in known.get("roc_points", [])]
        return cls(**known)

    @property
    def far(self) -> float | None:
        return self.far_paper if self.far_primary == "paper" else self.far_conventional

    def roc_csv(self) -> str:
        lines = ["fpr,tpr"]
        lines += [f"{format_float(x)},{format_float(y)}" for x, y in self.roc_points]
        return "\n".join(lines) + "\n"


def report_from_scores(scores, labels, threshold: float = 0.5, far_primary: str = "paper") -> EvaluationReport:
    """All metrics for precomputed scores; undefined metrics become ``None``."""
    if far_primary not in FAR_MODES:
        raise ValueError(f"unknown FAR mode {far_primary!r}")
    counts = confusion(scores, labels, threshold)
    undefined = []

    def attempt(name, fn):
        try:
            return fn()
        except UndefinedMetricError:
            undefined.append(name)
            return None

    roc = attempt("auc", lambda: roc_and_auc(scores, labels))
    return EvaluationReport(
        dr=attempt("dr", lambda: detection_rate(counts)),
        far_paper=attempt("far_paper", lambda: false_alarm_rate(counts, "paper")),
        far_conventional=attempt("far_conventional", lambda: false_alarm_rate(counts, "conventional")),
        cr=classification_rate(counts),
        auc=None if roc is None else roc[1],
        roc_points=[] if roc is None else roc[0],
        counts=counts,
        far_primary=far_primary,
        undefined=undefined,
    )


def evaluate(scorer, test, threshold: float = 0.5, far_primary: str = "paper") -> EvaluationReport:
    """Score every row of ``test`` and assemble the report.

    ``scorer`` is either a callable mapping a feature matrix to incident
    probabilities or an estimator with ``predict_proba``.  ``test`` is a
    :class:`SampleTable` or an ``(X, y)`` pair.  Only the scoring pass is
    timed.
    """
    if isinstance(test, SampleTable):
        X, y = test.features, test.labels
    else:
        X, y = test
    if len(y) == 0:
        raise InputError("test set is empty")
    start = time.perf_counter()
    if hasattr(scorer, "predict_proba"):
        scores = np.asarray(scorer.predict_proba(X))[:, 1]
    else:
        scores = np.asarray(scorer(X), dtype=np.float64).reshape(-1)
    elapsed = time.perf_counter() - start
    report = report_from_scores(scores, y, threshold, far_primary)
    report.eval_wall_clock_seconds = elapsed
    return report
