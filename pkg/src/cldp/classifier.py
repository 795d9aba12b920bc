"""Nearest-neighbor classification under the chi-square histogram distance.

The distance is sum((T_n - M_n)^2 / (T_n + M_n)) with 0/0 terms contributing
zero; the predicted class is the label of the nearest model, ties broken by
the lowest model source index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .histogram import FeatureHistogram


def _bins_of(h):
    if isinstance(h, FeatureHistogram):
        return h.bins
    return np.asarray(h, dtype=np.float64)


def chi_square(t, m) -> float:
    """Chi-square distance between two histograms of equal length.

    Accepts FeatureHistogram or plain arrays; when both carry a scheme the
    schemes must agree. Terms with a zero denominator (both bins zero for
    non-negative histograms) contribute zero. The term list is reduced with
    an exactly rounded sum, so padding both inputs with zero bins or
    permuting bins in lockstep cannot change the value.
    """
    if isinstance(t, FeatureHistogram) and isinstance(m, FeatureHistogram):
        if t.scheme != m.scheme or t.P != m.P:
            raise ValueError(f"histogram schemes differ: {t.scheme}@{t.P} vs {m.scheme}@{m.P}")
    ta = _bins_of(t)
    ma = _bins_of(m)
    if ta.shape != ma.shape:
        raise ValueError(f"histogram lengths differ: {ta.shape} vs {ma.shape}")
    num = (ta - ma) ** 2
    den = ta + ma
    terms = np.divide(num, den, out=np.zeros_like(num), where=den != 0.0)
    return math.fsum(terms.tolist())


class ModelSet:
    """Training histograms stacked for fast nearest-neighbor queries.

    Every model keeps a source index (its position in the original training
    order) used for deterministic tie breaking even if the set is built from
    a permuted list.
    """

    def __init__(self, histograms, labels, source_indices=None):
        histograms = list(histograms)
        labels = [int(l) for l in labels]
        if not histograms:
            raise ValueError("model set needs at least one model")
        if len(histograms) != len(labels):
            raise ValueError("histogram and label counts differ")
        first = histograms[0]
        for h in histograms[1:]:
            if isinstance(h, FeatureHistogram) and isinstance(first, FeatureHistogram):
                if h.scheme != first.scheme or h.P != first.P:
                    raise ValueError("all models must share one scheme and P")
        if source_indices is None:
            source_indices = range(len(histograms))
        self.matrix = np.stack([_bins_of(h) for h in histograms])
        self.labels = np.asarray(labels, dtype=np.int64)
        self.source_indices = np.asarray(list(source_indices), dtype=np.int64)
        if len(self.source_indices) != len(histograms):
            raise ValueError("source index count differs from model count")
        self.scheme = first.scheme if isinstance(first, FeatureHistogram) else None
        self.P = first.P if isinstance(first, FeatureHistogram) else None
        self.R = first.R if isinstance(first, FeatureHistogram) else None

    def __len__(self):
        return self.matrix.shape[0]


def _distances_to_models(bins: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    num = (matrix - bins) ** 2
    den = matrix + bins
    terms = np.divide(num, den, out=np.zeros_like(num), where=den != 0.0)
    return terms.sum(axis=1)


def classify(t, models: ModelSet):
    """Return (label, source_index, distance) of the nearest model.

    Exact distance ties go to the model with the lowest source index.
    """
    bins = _bins_of(t)
    if bins.shape != models.matrix.shape[1:]:
        raise ValueError(
            f"test histogram length {bins.shape[0]} does not match models "
            f"({models.matrix.shape[1]})"
        )
    d = _distances_to_models(bins, models.matrix)
    best = d.min()
    candidates = np.flatnonzero(d == best)
    winner = candidates[np.argmin(models.source_indices[candidates])]
    return int(models.labels[winner]), int(models.source_indices[winner]), float(d[winner])


@dataclass(frozen=True)
class EvalReport:
    """Classification outcome of one suite run.

    labels gives the class order of per_class and of the confusion matrix
    rows (true) and columns (predicted). ties counts test samples whose
    minimum distance was shared by models of more than one class.
    """

    suite: str
    scheme: str
    P: int
    R: float
    accuracy: float
    labels: tuple
    per_class: tuple
    confusion: np.ndarray
    ties: int

    def to_json_dict(self) -> dict:
        return {
            "suite": self.suite,
            "scheme": self.scheme,
            "P": self.P,
            "R": self.R,
            "accuracy": self.accuracy,
            "per_class": list(self.per_class),
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "ties": self.ties,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [
            f"suite     {self.suite}",
            f"scheme    {self.scheme}  (P={self.P}, R={self.R:g})",
            f"accuracy  {100.0 * self.accuracy:.2f}%",
            f"ties      {self.ties}",
            "",
            "class  samples  accuracy",
        ]
        totals = self.confusion.sum(axis=1)
        for i, label in enumerate(self.labels):
            lines.append(
                f"{label:>5}  {int(totals[i]):>7}  {100.0 * self.per_class[i]:>7.2f}%"
            )
        return "\n".join(lines) + "\n"


def evaluate(tests, models: ModelSet, suite: str = "",
             scheme: str | None = None) -> EvalReport:
    """Classify (histogram, true_label) pairs and summarize the outcome.

    The result does not depend on test order, and only tie handling makes it
    depend on model order; the number of ambiguous ties is reported.
    """
    tests = list(tests)
    if not tests:
        raise ValueError("nothing to evaluate")
    labels = sorted(set(int(models.labels[i]) for i in range(len(models)))
                    | {int(lab) for _, lab in tests})
    index_of = {lab: i for i, lab in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    correct = 0
    ties = 0
    for hist, true_label in tests:
        bins = _bins_of(hist)
        d = _distances_to_models(bins, models.matrix)
        best = d.min()
        candidates = np.flatnonzero(d == best)
        winner = candidates[np.argmin(models.source_indices[candidates])]
        predicted = int(models.labels[winner])
        if len(set(models.labels[candidates].tolist())) > 1:
            ties += 1
        confusion[index_of[int(true_label)], index_of[predicted]] += 1
        if predicted == int(true_label):
            correct += 1
    totals = confusion.sum(axis=1)
    per_class = tuple(
        float(confusion[i, i]) / totals[i] if totals[i] else 0.0
        for i in range(len(labels))
    )
    confusion.flags.writeable = False
    if scheme is None:
        scheme = str(models.scheme) if models.scheme is not None else ""
    return EvalReport(
        suite=suite,
        scheme=scheme,
        P=int(models.P) if models.P is not None else 0,
        R=float(models.R) if models.R is not None else 0.0,
        accuracy=correct / len(tests),
        labels=tuple(labels),
        per_class=per_class,
        confusion=confusion,
        ties=ties,
    )
