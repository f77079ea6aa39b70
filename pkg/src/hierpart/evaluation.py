"""Grounding latent labels by optimal assignment, and overall accuracy."""
from dataclasses import dataclass

import numpy as np

from .kernels import assign_min_cost


def contingency_table(pred, true, num_pred=None, num_true=None):
    """``counts[a, b]`` = number of points predicted ``a`` with truth ``b``."""
    pred, true = np.asarray(pred, dtype=np.int64), np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"label arrays differ in length: {pred.shape} vs {true.shape}")
    num_pred = int(pred.max(initial=-1)) + 1 if num_pred is None else num_pred
    num_true = int(true.max(initial=-1)) + 1 if num_true is None else num_true
    counts = np.zeros((max(num_pred, 1), max(num_true, 1)), dtype=np.int64)
    np.add.at(counts, (pred, true), 1)
    return counts


def _best_value(cost):
    if cost.shape[0] == 0:
        return 0.0
    cols = assign_min_cost(cost)
    return cost[np.arange(len(cols)), cols].sum()


def hungarian_match(table):
    """Assignment of predicted classes to true classes maximising agreement.

    Returns ``(mapping, agreement)`` where ``mapping[a]`` is the matched true
    class of predicted class ``a`` or ``-1``. Among optimal assignments the
    lexicographically smallest padded assignment vector is returned.
    """
    table = np.asarray(table)
    if table.ndim != 2 or table.size == 0:
        raise ValueError(f"contingency table must be a non-empty matrix, got shape {table.shape}")
    rp, rt = table.shape
    n = max(rp, rt)
    cost = np.zeros((n, n))
    cost[:rp, :rt] = -table
    best = _best_value(cost)

    rows, cols = list(range(n)), list(range(n))
    fixed = 0.0
    assignment = np.empty(n, dtype=np.int64)
    for r in range(n):
        rest_rows = rows[1:]
        for c in cols:
            rest_cols = [k for k in cols if k != c]
            sub = cost[np.ix_(rest_rows, rest_cols)]
            if fixed + cost[r, c] + _best_value(sub) == best:
                assignment[r] = c
                fixed += cost[r, c]
                cols = rest_cols
                break
        rows = rest_rows
    mapping = np.where(assignment[:rp] < rt, assignment[:rp], -1)
    agreement = int(sum(table[a, mapping[a]] for a in range(rp) if mapping[a] >= 0))
    return mapping, agreement


def matched_accuracy(pred, true, num_pred=None, num_true=None):
    """Fraction correct after relabelling predictions by the optimal matching."""
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"label arrays differ in length: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("no points to evaluate")
    _, agreement = hungarian_match(contingency_table(pred, true, num_pred, num_true))
    return agreement / pred.size


def matched_counts(pred, true, num_pred=None, num_true=None):
    _, agreement = hungarian_match(contingency_table(pred, true, num_pred, num_true))
    return agreement, len(pred)


@dataclass
class LevelMetrics:
    oa: float
    per_instance: list
    counts: list


def overall_accuracy(correct_total):
    """Pool ``(correct, total)`` pairs over instances."""
    correct_total = list(correct_total)
    if not correct_total:
        raise ValueError("need at least one instance")
    correct = sum(c for c, _ in correct_total)
    total = sum(t for _, t in correct_total)
    if total == 0:
        raise ValueError("zero points across all instances")
    per = [c / t if t else float("nan") for c, t in correct_total]
    return LevelMetrics(correct / total, per, [t for _, t in correct_total])


def top_level_counts(pred, true):
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"label arrays differ in length: {pred.shape} vs {true.shape}")
    return int((pred == true).sum()), len(pred)


def dataset_matched_counts(preds, trues, num_pred=None, num_true=None):
    """One matching over all instances pooled (analysis only)."""
    pred = np.concatenate(preds)
    true = np.concatenate(trues)
    return matched_counts(pred, true, num_pred, num_true)
