"""Evaluation metrics for binary scorers, PU-flavored where needed."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .losses import bce


def accuracy(probs, labels):
    """Fraction of correct 0.5-threshold decisions; p == 0.5 counts as positive."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape or probs.ndim != 1 or probs.size == 0:
        raise ValueError(f"need matching non-empty 1-d arrays, got {probs.shape} / {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1")
    return float(np.mean((probs >= 0.5) == (labels == 1)))


def pu_auc(pos_scores, unl_scores):
    """Probability that a positive outranks an unlabeled sample (ties count half).

    Computed from tie-averaged ranks; this is exactly equal (not just close)
    to the mean over all positive/unlabeled pairs of
    ``1 if s_p > s_u else 0.5 if s_p == s_u else 0``.
    """
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    unl_scores = np.asarray(unl_scores, dtype=np.float64)
    if pos_scores.size == 0 or unl_scores.size == 0:
        raise ValueError("both score arrays must be non-empty")
    n_pos, n_unl = pos_scores.size, unl_scores.size
    scores = np.concatenate([pos_scores, unl_scores])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j < scores.size and scores[order[j]] == scores[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)  # mean of 1-based ranks i+1 .. j
        i = j
    pos_rank_sum = ranks[:n_pos].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_unl))


def ece(probs, labels, n_bins=10):
    """Expected calibration error over equal-width probability bins.

    Bins partition [0, 1] into ``n_bins`` slots (p == 1 falls in the last);
    empty bins are skipped; each occupied bin contributes its occupancy-
    weighted |mean label - mean probability|.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape or probs.ndim != 1 or probs.size == 0:
        raise ValueError(f"need matching non-empty 1-d arrays, got {probs.shape} / {labels.shape}")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueError("probs must lie in [0, 1]")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    which = np.minimum((probs * n_bins).astype(np.int64), n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        mask = which == b
        count = int(mask.sum())
        if count == 0:
            continue
        gap = abs(labels[mask].mean() - probs[mask].mean())
        total += (count / probs.size) * gap
    return float(total)


def nll(probs, labels):
    """Mean negative log-likelihood of 0/1 labels under predicted probabilities.

    Shares its definition (including the 1e-12 clamp) with the pseudo-label
    cross-entropy loss.
    """
    return bce(probs, np.asarray(labels, dtype=np.float64))


@dataclass
class EvalReport:
    """Held-out metrics of one trained model."""

    accuracy: float
    auc: float
    ece: float
    nll: float

    def to_dict(self):
        return asdict(self)


def evaluate(probs, labels, n_bins=10):
    """All four metrics at once against ground-truth 0/1 labels."""
    labels = np.asarray(labels)
    pos = probs[labels == 1]
    neg = probs[labels == 0]
    return EvalReport(
        accuracy=accuracy(probs, labels),
        auc=pu_auc(pos, neg),
        ece=ece(probs, labels, n_bins=n_bins),
        nll=nll(probs, labels),
    )
