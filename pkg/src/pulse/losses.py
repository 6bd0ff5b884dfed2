"""Risk estimators for learning from positive and unlabeled data.

All losses take raw scores (logits).  The base loss on a set of scores with
target side ``y in {+1, -1}`` is the mean sigmoid loss ``mean(sigmoid(-y*f))``;
the PU risks combine it over the positive and unlabeled sets using the class
prior ``pi``:

* unbiased risk:       ``pi*l(P,+1) + l(U,-1) - pi*l(P,-1)``
* non-negative risk:   ``pi*l(P,+1) + max(0, l(U,-1) - pi*l(P,-1))``

The non-negative variant clamps the estimated negative-class risk at zero and
propagates **no gradient** from the clamped branch.  Gradients here are always
with respect to the scores; backprop through the network happens elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .net import sigmoid

PROB_CLAMP = 1e-12


def _check_scores(scores, name):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError(f"{name} must be a 1-d score array, got shape {scores.shape}")
    if scores.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return scores


def sigmoid_loss(scores, y):
    """Mean sigmoid loss of ``scores`` against side ``y`` (+1 or -1)."""
    if y not in (1, -1):
        raise ValueError(f"y must be +1 or -1, got {y}")
    scores = _check_scores(scores, "scores")
    return float(np.mean(sigmoid(-y * scores)))

def sigmoid_loss_grad(scores, y):
    """d(sigmoid_loss)/d(scores)."""
    if y not in (1, -1):
        raise ValueError(f"y must be +1 or -1, got {y}")
    scores = _check_scores(scores, "scores")
    s = sigmoid(-y * scores)
    return (-y / scores.size) * s * (1.0 - s)


def upu_risk(scores_p, scores_u, prior):
    """Unbiased PU risk.  Can go negative when the model overfits P."""
    scores_p = _check_scores(scores_p, "scores_p")
    scores_u = _check_scores(scores_u, "scores_u")
    return (
        prior * sigmoid_loss(scores_p, 1)
        + sigmoid_loss(scores_u, -1)
        - prior * sigmoid_loss(scores_p, -1)
    )

def upu_risk_grad(scores_p, scores_u, prior):
    g_p = prior * (sigmoid_loss_grad(scores_p, 1) - sigmoid_loss_grad(scores_p, -1))
    g_u = sigmoid_loss_grad(scores_u, -1)
    return g_p, g_u


def nnpu_risk(scores_p, scores_u, prior):
    """Non-negative PU risk: the negative-class part is clamped at zero."""
    scores_p = _check_scores(scores_p, "scores_p")
    scores_u = _check_scores(scores_u, "scores_u")
    neg_part = sigmoid_loss(scores_u, -1) - prior * sigmoid_loss(scores_p, -1)
    return prior * sigmoid_loss(scores_p, 1) + max(0.0, neg_part)

def nnpu_risk_grad(scores_p, scores_u, prior):
    scores_p = _check_scores(scores_p, "scores_p")
    scores_u = _check_scores(scores_u, "scores_u")
    neg_part = sigmoid_loss(scores_u, -1) - prior * sigmoid_loss(scores_p, -1)
    if neg_part >= 0.0:
        return upu_risk_grad(scores_p, scores_u, prior)
    # clamped: only the labeled-positive term contributes
    g_p = prior * sigmoid_loss_grad(scores_p, 1)
    g_u = np.zeros_like(scores_u)
    return g_p, g_u


_PU_RISKS = {
    "upu": (upu_risk, upu_risk_grad),
    "nnpu": (nnpu_risk, nnpu_risk_grad),
}


def register_pu_risk(name, risk_fn, grad_fn):
    """Extension point: make a new PU risk selectable by name."""
    _PU_RISKS[name] = (risk_fn, grad_fn)


def get_pu_risk(kind):
    try:
        return _PU_RISKS[kind]
    except KeyError:
        known = ", ".join(sorted(_PU_RISKS))
        raise ConfigurationError(f"unknown PU risk '{kind}' (known: {known})") from None


def bce(probs, targets):
    """Mean binary cross-entropy between probabilities and soft targets.

    Log arguments are clamped at 1e-12.  This one definition backs both the
    pseudo-label loss and the NLL metric.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape or probs.ndim != 1:
        raise ValueError(f"mismatched shapes {probs.shape} vs {targets.shape}")
    if probs.size == 0:
        raise ValueError("probs must be non-empty")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)))


def pseudo_label_ce(pred_probs, targets):
    """Cross-entropy of predicted probabilities against (soft) pseudo-labels."""
    return bce(pred_probs, targets)

def pseudo_label_ce_grad(scores, targets):
    """Gradient of ``pseudo_label_ce(sigmoid(scores), targets)`` w.r.t. scores."""
    scores = _check_scores(scores, "scores")
    targets = np.asarray(targets, dtype=np.float64)
    return (sigmoid(scores) - targets) / scores.size


@dataclass(frozen=True)
class PuLossConfig:
    """Which PU risk to use, with what prior, and how to mix in pseudo-labels.

    ``lam`` weights the pseudo-label cross-entropy against the PU risk:
    ``lam * L_pl + (1 - lam) * L_pu``.  When there are no pseudo-labeled
    samples the combined loss is exactly the PU risk (coefficient 1, not
    ``1 - lam``).
    """

    prior: float
    kind: str = "nnpu"
    lam: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.prior < 1.0:
            raise ConfigurationError(f"prior must be in (0, 1), got {self.prior}")
        if not 0.0 < self.lam < 1.0:
            raise ConfigurationError(f"lam must be in (0, 1), got {self.lam}")
        get_pu_risk(self.kind)


def combined_loss(scores_p, scores_u, scores_l, targets_l, cfg):
    """Training objective on one batch; returns ``(value, parts)``.

    ``parts`` carries the raw PU risk and pseudo-label loss for logging.
    """
    risk_fn, _ = get_pu_risk(cfg.kind)
    l_pu = risk_fn(scores_p, scores_u, cfg.prior)
    scores_l = np.asarray(scores_l, dtype=np.float64)
    if scores_l.size == 0:
        return l_pu, {"pu": l_pu, "pl": 0.0}
    l_pl = pseudo_label_ce(sigmoid(scores_l), targets_l)
    return cfg.lam * l_pl + (1.0 - cfg.lam) * l_pu, {"pu": l_pu, "pl": l_pl}


def combined_loss_grad(scores_p, scores_u, scores_l, targets_l, cfg):
    """Gradients of :func:`combined_loss` w.r.t. the three score arrays."""
    _, grad_fn = get_pu_risk(cfg.kind)
    g_p, g_u = grad_fn(scores_p, scores_u, cfg.prior)
    scores_l = np.asarray(scores_l, dtype=np.float64)
    if scores_l.size == 0:
        return g_p, g_u, np.zeros(0)
    g_l = cfg.lam * pseudo_label_ce_grad(scores_l, targets_l)
    return (1.0 - cfg.lam) * g_p, (1.0 - cfg.lam) * g_u, g_l
