"""Prediction-quality metrics over full predicted RUL sequences.

All error metrics pool every (unit, window) instance. The monotonicity ratio
is the fraction of instances whose prediction dropped relative to the
previous window of the same unit; the first window of each unit has no
predecessor and is excluded from both numerator and denominator. MAPE
excludes instances with true RUL below 1 (the label reaches 0 at failure);
the exclusion count is carried in every report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAPE_RULE = "instances with true RUL < 1 are excluded from MAPE only"


@dataclass(frozen=True)
class IntervalBucket:
    lo: float
    hi: float
    mae: float
    count: int


@dataclass(frozen=True)
class ClusteringDiagnostics:
    silhouette: float | None
    adjusted_rand: float | None

    def to_dict(self) -> dict:
        return {"silhouette": self.silhouette, "adjusted_rand": self.adjusted_rand}


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    mape: float
    mr: float
    n_instances: int
    n_mape_excluded: int
    interval_mae: tuple[IntervalBucket, ...]
    fold_stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "mape": self.mape,
            "mr": self.mr,
            "n_instances": self.n_instances,
            "n_mape_excluded": self.n_mape_excluded,
            "mape_rule": MAPE_RULE,
            "interval_mae": [
                {"lo": b.lo, "hi": b.hi, "mae": b.mae, "count": b.count}
                for b in self.interval_mae
            ],
            "fold_stats": self.fold_stats,
        }


def _flat(y_true, y_pred):
    yt = np.asarray(y_true, dtype=float).ravel()
    yp = np.asarray(y_pred, dtype=float).ravel()
    if yt.shape != yp.shape:
        raise ValueError("y_true and y_pred must have the same length")
    if yt.size == 0:
        raise ValueError("no instances")
    return yt, yp


def rmse(y_true, y_pred) -> float:
    yt, yp = _flat(y_true, y_pred)
    return float(np.sqrt(np.mean((yp - yt) ** 2)))


def mae(y_true, y_pred) -> float:
    yt, yp = _flat(y_true, y_pred)
    return float(np.mean(np.abs(yp - yt)))


def mape(y_true, y_pred) -> float:
    yt, yp = _flat(y_true, y_pred)
    keep = yt >= 1.0
    if not keep.any():
        raise ValueError("every instance has true RUL < 1; MAPE is undefined")
    return float(np.mean(np.abs(yp[keep] - yt[keep]) / yt[keep]))


def mr(sequences) -> float:
    """Monotonicity ratio over per-unit prediction sequences in cycle order."""
    neg = 0
    total = 0
    for seq in sequences:
        seq = np.asarray(seq, dtype=float).ravel()
        if seq.size < 2:
            continue
        diffs = np.diff(seq)
        neg += int((diffs < 0).sum())
        total += diffs.size
    if total == 0:
        raise ValueError("no consecutive prediction pairs; MR is undefined")
    return neg / total


def interval_mae(y_true, y_pred, interval_size=50) -> tuple[IntervalBucket, ...]:
    """MAE per true-RUL bucket [0, s), [s, 2s), ...; empty buckets are absent."""
    yt, yp = _flat(y_true, y_pred)
    bins = np.floor_divide(yt, interval_size).astype(int)
    buckets = []
    for b in np.unique(bins):
        mask = bins == b
        buckets.append(IntervalBucket(
            lo=float(b * interval_size),
            hi=float((b + 1) * interval_size),
            mae=float(np.mean(np.abs(yp[mask] - yt[mask]))),
            count=int(mask.sum()),
        ))
    return tuple(buckets)


def make_report(per_unit: dict, interval_size=50, fold_stats=None) -> MetricReport:
    """Build the full report from {unit_id: (y_true, y_pred)} in cycle order."""
    yt = np.concatenate([np.asarray(t, dtype=float).ravel() for t, _ in per_unit.values()])
    yp = np.concatenate([np.asarray(p, dtype=float).ravel() for _, p in per_unit.values()])
    n_excluded = int((yt < 1.0).sum())
    report = MetricReport(
        rmse=rmse(yt, yp),
        mae=mae(yt, yp),
        mape=mape(yt, yp),
        mr=mr([p for _, p in per_unit.values()]),
        n_instances=int(yt.size),
        n_mape_excluded=n_excluded,
        interval_mae=interval_mae(yt, yp, interval_size),
        fold_stats=dict(fold_stats or {}),
    )
    # power-mean inequality; a violation means a metric implementation bug
    assert report.rmse >= report.mae - 1e-12
    return report


def summarize_folds(reports) -> dict:
    """Mean and std of each scalar metric across cross-validation folds."""
    out = {}
    for name in ("rmse", "mae", "mape", "mr"):
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def clustering_diagnostics(labels, distance_matrix=None, reference=None) -> ClusteringDiagnostics:
    """Silhouette over a precomputed distance matrix plus adjusted Rand.

    Silhouette is absent (None) with fewer than two clusters; adjusted Rand
    is computed only when a reference labeling is supplied.
    """
    from sklearn.metrics import adjusted_rand_score, silhouette_score

    labels = np.asarray(labels)
    sil = None
    if distance_matrix is not None and np.unique(labels).size >= 2:
        sil = float(silhouette_score(np.asarray(distance_matrix), labels, metric="precomputed"))
    ari = None
    if reference is not None:
        ari = float(adjusted_rand_score(np.asarray(reference), labels))
    return ClusteringDiagnostics(silhouette=sil, adjusted_rand=ari)


def save_report_json(path, report: MetricReport) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    return path


def save_interval_csv(path, report: MetricReport) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rul_lo", "rul_hi", "mae", "count"])
        for b in report.interval_mae:
            writer.writerow([b.lo, b.hi, b.mae, b.count])
    return path
