"""Ranking and classification metrics for embedding evaluation.

Link prediction scores node pairs by the inner product of their
embeddings; AUC and average precision are computed from ranks so any
strictly monotone rescaling of the scores leaves them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoredPairs:
    pairs: np.ndarray  # (m, 2) node indices
    scores: np.ndarray  # (m,)
    labels: np.ndarray  # (m,) in {0, 1}

    def __post_init__(self):
        if not (len(self.pairs) == len(self.scores) == len(self.labels)):
            raise ValueError("pairs, scores and labels must have equal length")


def link_scores(z, pos_pairs, neg_pairs=None):
    """Score pairs by inner products of their embedding rows.

    With ``neg_pairs`` given, positives are labelled 1 and negatives 0;
    otherwise all labels are 1.
    """
    z = np.asarray(z, dtype=np.float64)
    pos = np.asarray(pos_pairs, dtype=np.int64).reshape(-1, 2)
    if neg_pairs is None:
        pairs = pos
        labels = np.ones(len(pos), dtype=np.int64)
    else:
        neg = np.asarray(neg_pairs, dtype=np.int64).reshape(-1, 2)
        pairs = np.concatenate([pos, neg], axis=0)
        labels = np.concatenate([np.ones(len(pos), dtype=np.int64), np.zeros(len(neg), dtype=np.int64)])
    scores = np.einsum("ij,ij->i", z[pairs[:, 0]], z[pairs[:, 1]])
    return ScoredPairs(pairs=pairs, scores=scores, labels=labels)


def _average_ranks(scores):
    """1-based ranks, ties sharing the average rank of their group."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scored):
    """Probability that a random positive outscores a random negative,
    ties counted one half; computed from the rank statistic."""
    labels = np.asarray(scored.labels)
    num_pos = int(labels.sum())
    num_neg = len(labels) - num_pos
    if num_pos == 0 or num_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = _average_ranks(np.asarray(scored.scores, dtype=np.float64))
    pos_rank_sum = ranks[labels == 1].sum()
    return (pos_rank_sum - num_pos * (num_pos + 1) / 2.0) / (num_pos * num_neg)


def average_precision(scored):
    """Non-interpolated AP: sum of (recall step) * precision down the
    score-sorted list. Ties break by descending score then ascending index."""
    scores = np.asarray(scored.scores, dtype=np.float64)
    labels = np.asarray(scored.labels)
    num_pos = int(labels.sum())
    if num_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = labels[order] == 1
    cum_hits = np.cumsum(hits)
    precision = cum_hits / np.arange(1, len(scores) + 1)
    return float(precision[hits].sum() / num_pos)


def f1_scores(pred, truth, num_classes):
    """(micro, macro) F1 for single-label multiclass predictions.

    Micro counts globally (and therefore equals accuracy here); macro is
    the unweighted mean over all ``num_classes`` classes, a class absent
    from both prediction and truth contributing 0.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have the same length")
    tp = np.zeros(num_classes)
    fp = np.zeros(num_classes)
    fn = np.zeros(num_classes)
    for c in range(num_classes):
        tp[c] = np.sum((pred == c) & (truth == c))
        fp[c] = np.sum((pred == c) & (truth != c))
        fn[c] = np.sum((pred != c) & (truth == c))
    denom = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / denom if denom else 0.0
    per_class_denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, per_class_denom, out=np.zeros(num_classes), where=per_class_denom > 0)
    return float(micro), float(per_class.mean())
