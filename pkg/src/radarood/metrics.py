"""Detection metrics over ID/OOD score sets.

Convention throughout: OOD is the positive class and higher scores mean more
OOD.  Each metric has a fast sorted implementation and a brute-force
O(n^2) reference (`*_bruteforce`) used to cross-check it; the fast path never
calls the reference.
"""

from __future__ import annotations

import numpy as np


def _validate(id_scores, ood_scores) -> tuple[np.ndarray, np.ndarray]:
    ids = np.asarray(id_scores, dtype=np.float64)
    oods = np.asarray(ood_scores, dtype=np.float64)
    if ids.size == 0 or oods.size == 0:
        raise ValueError("id_scores and ood_scores must both be non-empty")
    if not (np.isfinite(ids).all() and np.isfinite(oods).all()):
        raise ValueError("scores must be finite")
    return ids, oods


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mid-rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(id_scores, ood_scores) -> float:
    """P(ood > id) + 0.5 P(tie) via rank sums; O(n log n)."""
    ids, oods = _validate(id_scores, ood_scores)
    ranks = _average_ranks(np.concatenate([ids, oods]))
    n_i, n_o = len(ids), len(oods)
    rank_sum = ranks[n_i:].sum()
    return float((rank_sum - n_o * (n_o + 1) / 2.0) / (n_i * n_o))


def auroc_bruteforce(id_scores, ood_scores) -> float:
    """All-pairs counting reference."""
    ids, oods = _validate(id_scores, ood_scores)
    wins = 0.0
    for o in oods:
        for i in ids:
            if o > i:
                wins += 1.0
            elif o == i:
                wins += 0.5
    return wins / (len(ids) * len(oods))


def _pr_points(ids: np.ndarray, oods: np.ndarray):
    """(recall, precision) at every distinct threshold, recall ascending.

    Predicted positive means score >= threshold; thresholds sweep the distinct
    score values from high to low.
    """
    scores = np.concatenate([ids, oods])
    labels = np.concatenate([np.zeros(len(ids)), np.ones(len(oods))])
    order = np.argsort(-scores, kind="mergesort")
    scores, labels = scores[order], labels[order]
    tp = np.cumsum(labels)
    fp = np.cumsum(1.0 - labels)
    distinct = np.nonzero(np.diff(np.append(scores, -np.inf)))[0]
    recall = tp[distinct] / len(oods)
    precision = tp[distinct] / (tp[distinct] + fp[distinct])
    return recall, precision


def aupr(id_scores, ood_scores) -> float:
    """Area under precision-recall via step-wise sum: sum dR * P."""
    ids, oods = _validate(id_scores, ood_scores)
    recall, precision = _pr_points(ids, oods)
    prev_r = 0.0
    area = 0.0
    for r, p in zip(recall, precision):
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


def aupr_bruteforce(id_scores, ood_scores) -> float:
    """Threshold-enumeration reference: recount TP/FP from scratch per threshold."""
    ids, oods = _validate(id_scores, ood_scores)
    thresholds = sorted(set(np.concatenate([ids, oods])), reverse=True)
    prev_recall = 0.0
    area = 0.0
    for t in thresholds:
        tp = float((oods >= t).sum())
        fp = float((ids >= t).sum())
        recall = tp / len(oods)
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def fpr_at_tpr(id_scores, ood_scores, level: float) -> float:
    """FPR at the loosest threshold whose TPR reaches ``level``.

    Thresholds are the distinct scores (plus the trivial all-positive one);
    predicted positive means score >= threshold.  The largest threshold with
    TPR >= level is the operating point.
    """
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    ids, oods = _validate(id_scores, ood_scores)
    scores = np.concatenate([ids, oods])
    labels = np.concatenate([np.zeros(len(ids)), np.ones(len(oods))])
    order = np.argsort(-scores, kind="mergesort")
    scores, labels = scores[order], labels[order]
    tp = np.cumsum(labels)
    fp = np.cumsum(1.0 - labels)
    distinct = np.nonzero(np.diff(np.append(scores, -np.inf)))[0]
    tpr = tp[distinct] / len(oods)
    fpr = fp[distinct] / len(ids)
    hit = np.nonzero(tpr >= level)[0]
    # tpr reaches 1.0 at the lowest distinct threshold, so hit is never empty
    return float(fpr[hit[0]])


def fpr_at_tpr_bruteforce(id_scores, ood_scores, level: float) -> float:
    """Per-threshold recount reference for fpr_at_tpr."""
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    ids, oods = _validate(id_scores, ood_scores)
    best_threshold = None
    for t in sorted(set(np.concatenate([ids, oods])), reverse=True):
        tpr = float((oods >= t).sum()) / len(oods)
        if tpr >= level:
            best_threshold = t
            break
    if best_threshold is None:
        return 1.0
    return float((ids >= best_threshold).sum()) / len(ids)
