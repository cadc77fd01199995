"""Held-out evaluation metrics for distance models.

Each trajectory contributes predictions d(s_j, s_T) for all frames before
the final (goal) frame. The pairwise metrics keep the linear denominator
sum(T_i - 1); a conventional pair-count normalization is exposed under a
distinct name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PredictionTable:
    rows: list  # one 1-D array of predictions per trajectory, length T_i - 1
    dt: float = 0.1

    def __post_init__(self):
        self.rows = [np.asarray(r, dtype=np.float64) for r in self.rows]
        for r in self.rows:
            if not np.all(np.isfinite(r)):
                raise ValueError("non-finite prediction")


@dataclass
class MetricsReport:
    spearman: float
    misclassification: float
    misclassification_pairnorm: float
    mse: float
    mean_error_steps: float
    mean_error_seconds: float
    hinge: float
    time_metrics_comparable: bool = True

    def as_dict(self):
        return {
            "spearman": self.spearman,
            "misclassification": self.misclassification,
            "misclassification_pairnorm": self.misclassification_pairnorm,
            "mse": self.mse,
            "mean_error_steps": self.mean_error_steps,
            "mean_error_seconds": self.mean_error_seconds,
            "hinge": self.hinge,
            "time_metrics_comparable": self.time_metrics_comparable,
        }


def _check_nonempty(preds):
    if not preds.rows:
        raise ValueError("empty prediction table")


def _frame_denominator(preds):
    return float(sum(len(r) for r in preds.rows))


def _pair_count(preds):
    return float(sum(len(r) * (len(r) - 1) // 2 for r in preds.rows))


def hinge_loss(preds):
    """Sum over j<k of max(0, d_k - d_j), divided by sum(T_i - 1)."""
    _check_nonempty(preds)
    total = 0.0
    for r in preds.rows:
        if len(r) < 2:
            raise ValueError("trajectory needs >= 2 predictions")
        diffs = r[None, :] - r[:, None]  # diffs[j, k] = d_k - d_j
        total += float(np.sum(np.maximum(0.0, np.triu(diffs, k=1))))
    return total / _frame_denominator(preds)


def misclassification_rate(preds):
    """Count of out-of-order pairs (d_k > d_j for j < k), divided by
    sum(T_i - 1). Ties are not violations (strict inequality)."""
    _check_nonempty(preds)
    total = 0.0
    for r in preds.rows:
        if len(r) < 2:
            raise ValueError("trajectory needs >= 2 predictions")
        diffs = r[None, :] - r[:, None]
        total += float(np.sum(np.triu(diffs, k=1) > 0.0))
    return total / _frame_denominator(preds)


def misclassification_rate_pairnorm(preds):
    """Same violation count, normalized by the number of pairs."""
    return misclassification_rate(preds) * _frame_denominator(preds) / _pair_count(preds)


def _average_ranks(values):
    """Ranks 1..n with ties resolved as the average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _spearman_single(preds_row):
    """Correlation of predicted distances with the ground-truth order:
    earlier frame => larger distance to the final goal. Constant
    predictions give 0 by convention."""
    n = len(preds_row)
    if n < 2:
        raise ValueError("trajectory needs >= 2 predictions")
    pred_ranks = _average_ranks(preds_row)
    target_ranks = np.arange(n, 0, -1, dtype=np.float64)  # descending in t
    ps = pred_ranks - pred_ranks.mean()
    ts = target_ranks - target_ranks.mean()
    denom = np.sqrt(np.sum(ps * ps) * np.sum(ts * ts))
    if denom == 0.0:
        return 0.0
    return float(np.sum(ps * ts) / denom)


def spearman(preds):
    """Per-trajectory Spearman against reversed time order, averaged."""
    _check_nonempty(preds)
    return float(np.mean([_spearman_single(r) for r in preds.rows]))


def per_trajectory_spearman(preds):
    _check_nonempty(preds)
    return [_spearman_single(r) for r in preds.rows]


def mse_and_mean_error(preds, targets):
    """targets: per-trajectory arrays of true step deltas, aligned with rows."""
    _check_nonempty(preds)
    if len(targets) != len(preds.rows):
        raise ValueError("targets misaligned with prediction rows")
    sq, ab, n = 0.0, 0.0, 0
    for r, t in zip(preds.rows, targets):
        t = np.asarray(t, dtype=np.float64)
        if t.shape != r.shape:
            raise ValueError("targets misaligned with prediction rows")
        sq += float(np.sum((r - t) ** 2))
        ab += float(np.sum(np.abs(r - t)))
        n += len(r)
    mse = sq / n
    mean_steps = ab / n
    return mse, mean_steps, mean_steps * preds.dt


def build_prediction_table(model, data):
    """Predictions against each trajectory's final frame, for frames 0..T-2."""
    rows = []
    for traj in data.trajectories:
        goal = traj.frames[-1]
        rows.append(np.array([model.distance(f, goal) for f in traj.frames[:-1]]))
    return PredictionTable(rows, dt=data.dt)


def evaluate(model, data, oracle_deltas=None, time_metrics_comparable=True):
    """Full MetricsReport for a model on a dataset; goal = final frame.

    oracle_deltas: per-trajectory true step counts aligned with the table
    rows. When omitted, the frame-index gap to the final frame is used.
    """
    if not data.trajectories:
        raise ValueError("empty dataset")
    table = build_prediction_table(model, data)
    return evaluate_table(table, oracle_deltas, time_metrics_comparable)


def evaluate_table(table, oracle_deltas=None, time_metrics_comparable=True):
    """MetricsReport from an existing PredictionTable (see evaluate)."""
    if oracle_deltas is None:
        oracle_deltas = [np.arange(len(r), 0, -1, dtype=np.float64)
                         for r in table.rows]
    mse, mean_steps, mean_seconds = mse_and_mean_error(table, oracle_deltas)
    return MetricsReport(
        spearman=spearman(table),
        misclassification=misclassification_rate(table),
        misclassification_pairnorm=misclassification_rate_pairnorm(table),
        mse=mse,
        mean_error_steps=mean_steps,
        mean_error_seconds=mean_seconds,
        hinge=hinge_loss(table),
        time_metrics_comparable=time_metrics_comparable,
    )
