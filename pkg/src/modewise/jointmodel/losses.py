"""Loss pieces of the joint objective, each with its analytic derivative.

The objective over a set of labeled windows is

    sum(ce) + rul_weight * sum(hs) + mono_weight * sum(mono penalty),

where the cross-entropy targets the discovered failure mode, the health-score
term is the asymmetric exponential RUL loss (late predictions cost more), and
the monotonicity penalty is a dead-band on the backward difference of
consecutive predictions of the same unit. With rul_weight = inf the
classification term is dropped and the RUL term enters with weight 1.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def loss_ce(probs, onehot, floor=PROB_FLOOR):
    """Per-sample cross-entropy against one-hot mode labels, and d/d(probs)."""
    probs = np.asarray(probs, dtype=float)
    onehot = np.asarray(onehot, dtype=float)
    floored = np.maximum(probs, floor)
    losses = -(onehot * np.log(floored)).sum(axis=-1)
    d_probs = np.where(probs >= floor, -onehot / floored, 0.0)
    return losses, d_probs


def loss_hs(pred, target):
    """Health-score RUL loss: exp(err/10)-1 late, exp(-err/13)-1 early."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    over = pred >= target
    up = np.exp((pred - target) / 10.0)
    down = np.exp((target - pred) / 13.0)
    losses = np.where(over, up - 1.0, down - 1.0)
    d_pred = np.where(over, up / 10.0, -down / 13.0)
    return losses, d_pred


def mono_pairs(unit_ids, end_cycles):
    """Indices (i-1, i) of rows that are consecutive windows of one unit.

    Rows must already be ordered unit-major with ascending end cycles; pairs
    whose end cycles differ by more than 1 are skipped.
    """
    unit_ids = np.asarray(unit_ids)
    end_cycles = np.asarray(end_cycles)
    same = unit_ids[1:] == unit_ids[:-1]
    adjacent = end_cycles[1:] - end_cycles[:-1] == 1
    idx = np.flatnonzero(same & adjacent) + 1
    return idx - 1, idx


def mono_penalty(pred, unit_ids, end_cycles, slope, tolerance):
    """Dead-band penalty max(0, |diff - slope| - tolerance) on each pair.

    Returns (per-pair penalties, d/d(pred), number of pairs). The derivative
    accumulates +-sign onto the two endpoints of each active pair.
    """
    pred = np.asarray(pred, dtype=float)
    prev_idx, cur_idx = mono_pairs(unit_ids, end_cycles)
    diffs = pred[cur_idx] - pred[prev_idx]
    dev = diffs - slope
    pen = np.maximum(0.0, np.abs(dev) - tolerance)
    d_pred = np.zeros_like(pred)
    active = pen > 0.0
    sign = np.sign(dev[active])
    np.add.at(d_pred, cur_idx[active], sign)
    np.add.at(d_pred, prev_idx[active], -sign)
    return pen, d_pred, int(cur_idx.size)


def combine_weights(rul_weight):
    """(ce_weight, rul_weight) pair; inf means the RUL-only baseline."""
    if rul_weight < 0:
        raise ValueError("rul_weight must be >= 0")
    if np.isinf(rul_weight):
        return 0.0, 1.0
    return 1.0, float(rul_weight)
