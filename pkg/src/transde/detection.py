"""Anomaly scoring, thresholding, point adjustment and evaluation metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from transde.data import TimeSeriesDataset, window_origins
from transde.errors import DataError

# anomaly rate (fraction) per benchmark, used as the default threshold ratio
BENCHMARK_ANOMALY_RATES = {"MSL": 0.0554, "SMAP": 0.1313, "PSM": 0.2776, "SMD": 0.0416, "SWaT": 0.1198}
DEFAULT_RATIO = 0.01


@dataclass
class AnomalyScoreSeries:
    scores: np.ndarray
    threshold: Optional[float] = None
    predictions: Optional[np.ndarray] = None
    point_adjusted: bool = False


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return asdict(self)


def _row_kl(p: np.ndarray, q: np.ndarray, eps: float) -> np.ndarray:
    return np.sum(p * (np.log(np.maximum(p, eps)) - np.log(np.maximum(q, eps))), axis=-1)


def score_window(intra, inter, epsilon: float = 1e-8) -> np.ndarray:
    """Per-timestamp score of one representation ``(C, 2, W, W)`` (or a batch ``(B, C, 2, W, W)``).

    Row ``t`` gets ``KL(intra_t || inter_t) + KL(inter_t || intra_t)``, averaged
    over channels and components.  Stop-gradient is meaningless here and
    therefore omitted.
    """
    intra = np.asarray(intra, dtype=np.float64)
    inter = np.asarray(inter, dtype=np.float64)
    if intra.shape != inter.shape:
        raise ValueError(f"shape mismatch: {intra.shape} vs {inter.shape}")
    per_row = _row_kl(intra, inter, epsilon) + _row_kl(inter, intra, epsilon)  # (..., C, 2, W)
    return per_row.mean(axis=(-3, -2))


def score_series(ds: TimeSeriesDataset, model, stride: Optional[int] = None,
                 batch_size: int = 64) -> AnomalyScoreSeries:
    """Score every timestamp of ``ds`` with a trained :class:`~transde.model.TransDe`.

    Windows start every ``stride`` steps (default: the window length) plus one
    window anchored at ``T - W`` when needed.  A timestamp covered by several
    windows keeps the score from the latest one.
    """
    if model.d is not None and ds.d != model.d:
        raise DataError(f"dimension mismatch: model expects d={model.d}, data has d={ds.d}")
    W = model.config.window
    stride = stride or W
    prepared = model.prepare(ds)
    origins = window_origins(ds.T, W, stride, cover_tail=True)
    scores = np.empty(ds.T)
    view = np.lib.stride_tricks.sliding_window_view(prepared.values, W, axis=0)
    for start in range(0, len(origins), batch_size):
        chunk = origins[start:start + batch_size]
        windows = np.ascontiguousarray(view[chunk].transpose(0, 2, 1))
        intra, inter = model.represent(model.components(windows))
        window_scores = score_window(intra, inter)
        # origins ascend, so later windows overwrite earlier ones
        for o, s in zip(chunk, window_scores):
            scores[o:o + W] = s
    return AnomalyScoreSeries(scores)


def threshold_from_ratio(scores, ratio: float) -> float:
    """``(1 - ratio)``-quantile of the scores with linear interpolation between order statistics."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("empty scores")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie strictly between 0 and 1")
    return float(np.quantile(scores, 1.0 - ratio, method="linear"))


def classify(scores, rho: float) -> np.ndarray:
    return (np.asarray(scores) >= rho).astype(np.int64)


def _segments(labels: np.ndarray):
    padded = np.concatenate([[0], labels, [0]])
    edges = np.flatnonzero(np.diff(padded))
    return edges.reshape(-1, 2)


def point_adjust(predictions, labels) -> np.ndarray:
    """Mark a whole labelled segment as detected when any point inside it is predicted."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    adjusted = predictions.copy()
    for start, end in _segments(labels):
        if adjusted[start:end].any():
            adjusted[start:end] = 1
    return adjusted


def metrics(predictions, labels) -> MetricsReport:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(precision, recall, f1, tp, fp, fn, tn)


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties get average ranks)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(scores, labels, ratio: float, adjust: bool) -> tuple:
    """Threshold at ``ratio``, optionally point-adjust, and score.  Returns ``(report, rho, preds)``."""
    rho = threshold_from_ratio(scores, ratio)
    preds = classify(scores, rho)
    if adjust:
        preds = point_adjust(preds, labels)
    return metrics(preds, labels), rho, preds
