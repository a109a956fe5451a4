"""Partition-quality and calibration metrics.

AMI follows the hypergeometric-expected-MI adjustment with arithmetic-mean
normalization; ARI is the Hubert-Arabie pair-counting adjustment. ECE bins
per-graph modal-K confidences into M equal intervals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import lgamma, log
from pathlib import Path

import numpy as np

from .graphs import canonicalize_labels

__all__ = [
    "ContingencyTable",
    "CalibrationReport",
    "contingency_table",
    "ami",
    "ari",
    "ece",
    "map_select",
    "uncertainty_stats",
    "write_metrics_csv",
]


@dataclass
class ContingencyTable:
    counts: np.ndarray   # R x C
    row_sums: np.ndarray
    col_sums: np.ndarray
    n: int


@dataclass
class CalibrationReport:
    n_bins: int
    counts: list
    accuracy: list
    confidence: list
    ece: float
    n: int = 0
    extras: dict = field(default_factory=dict)


def contingency_table(labels_a, labels_b) -> ContingencyTable:
    a = canonicalize_labels(labels_a)
    b = canonicalize_labels(labels_b)
    if len(a) != len(b):
        raise ValueError(f"labelings differ in length: {len(a)} vs {len(b)}")
    r, c = int(a.max()), int(b.max())
    counts = np.zeros((r, c), dtype=np.int64)
    np.add.at(counts, (a - 1, b - 1), 1)
    return ContingencyTable(counts, counts.sum(axis=1), counts.sum(axis=0), len(a))


def _entropy(margins: np.ndarray, n: int) -> float:
    p = margins[margins > 0] / n
    return float(-(p * np.log(p)).sum())


def _mutual_information(table: ContingencyTable) -> float:
    n = table.n
    mi = 0.0
    for i in range(table.counts.shape[0]):
        ai = table.row_sums[i]
        for j in range(table.counts.shape[1]):
            nij = table.counts[i, j]
            if nij > 0:
                mi += (nij / n) * log(n * nij / (ai * table.col_sums[j]))
    return mi


def _expected_mi(table: ContingencyTable) -> float:
    """E[MI] under the hypergeometric model of random labelings with fixed margins."""
    n = table.n
    lg = lgamma
    total = 0.0
    for ai in table.row_sums:
        for bj in table.col_sums:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                term = (nij / n) * log(n * nij / (ai * bj))
                lp = (
                    lg(ai + 1) + lg(bj + 1) + lg(n - ai + 1) + lg(n - bj + 1)
                    - lg(n + 1) - lg(nij + 1) - lg(ai - nij + 1)
                    - lg(bj - nij + 1) - lg(n - ai - bj + nij + 1)
                )
                total += term * np.exp(lp)
    return total


def _degenerate(labels_a, labels_b) -> float:
    same = np.array_equal(canonicalize_labels(labels_a), canonicalize_labels(labels_b))
    return 1.0 if same else 0.0


def ami(labels_a, labels_b) -> float:
    """Adjusted Mutual Information, clipped to [0, 1]."""
    table = contingency_table(labels_a, labels_b)
    h_a = _entropy(table.row_sums, table.n)
    h_b = _entropy(table.col_sums, table.n)
    mi = _mutual_information(table)
    emi = _expected_mi(table)
    denom = 0.5 * (h_a + h_b) - emi
    if abs(denom) < 1e-12:
        return _degenerate(labels_a, labels_b)
    return float(np.clip((mi - emi) / denom, 0.0, 1.0))


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand Index (Hubert-Arabie)."""
    table = contingency_table(labels_a, labels_b)

    def comb2(v):
        v = np.asarray(v, dtype=np.float64)
        return (v * (v - 1) / 2).sum()

    sum_nij = comb2(table.counts.ravel())
    sum_a = comb2(table.row_sums)
    sum_b = comb2(table.col_sums)
    pairs = table.n * (table.n - 1) / 2
    expected = sum_a * sum_b / pairs if pairs else 0.0
    denom = 0.5 * (sum_a + sum_b) - expected
    if abs(denom) < 1e-12:
        return _degenerate(labels_a, labels_b)
    return float((sum_nij - expected) / denom)


def ece(predicted_k_samples, true_k, n_bins: int = 10) -> CalibrationReport:
    """Expected calibration error of modal cluster-count predictions.

    For each graph the prediction is the modal K among its samples and the
    confidence the modal fraction; confidences are binned into n_bins equal
    intervals over (0, 1].
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    preds, confs = [], []
    for samples in predicted_k_samples:
        samples = list(samples)
        if not samples:
            raise ValueError("every graph needs at least one sample")
        values, counts = np.unique(samples, return_counts=True)
        best = counts.max()
        # deterministic tie-break: smallest K among the modes
        pred = int(values[counts == best].min())
        preds.append(pred)
        confs.append(best / len(samples))
    true_k = [int(k) for k in true_k]
    if len(true_k) != len(preds):
        raise ValueError("true_k and predicted_k_samples differ in length")
    n = len(preds)
    counts = [0] * n_bins
    acc = [0.0] * n_bins
    conf = [0.0] * n_bins
    for pred, cf, tk in zip(preds, confs, true_k):
        b = min(n_bins - 1, int(np.ceil(cf * n_bins)) - 1)
        counts[b] += 1
        acc[b] += 1.0 if pred == tk else 0.0
        conf[b] += cf
    value = 0.0
    for b in range(n_bins):
        if counts[b]:
            acc[b] /= counts[b]
            conf[b] /= counts[b]
            value += (counts[b] / n) * abs(acc[b] - conf[b])
    return CalibrationReport(n_bins, counts, acc, conf, float(value), n=n)


def map_select(samples):
    """Highest-scoring posterior sample; ties broken by first occurrence."""
    samples = list(samples)
    if not samples:
        raise ValueError("map_select needs at least one sample")
    best = samples[0]
    for s in samples[1:]:
        if s.score > best.score:
            best = s
    return best


def uncertainty_stats(samples):
    """Mean and population standard deviation of the inferred cluster count."""
    ks = np.array([s.n_clusters for s in samples], dtype=np.float64)
    if ks.size == 0:
        raise ValueError("need at least one sample")
    return float(ks.mean()), float(ks.std())


def write_metrics_csv(path, rows):
    """Rows of (graph_id, ami, ari, k_true, k_map, score)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["graph_id", "ami", "ari", "k_true", "k_map", "score"])
        for row in rows:
            w.writerow([row[0]] + [_fmt(v) for v in row[1:]])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return int(v)
    return repr(float(v))
