"""Ensembles and the decomposition of predictive uncertainty.

Given K member probabilities per sample, total uncertainty is the binary
entropy of the mean prediction, aleatoric uncertainty is the mean of the
member entropies, and epistemic uncertainty is their difference (the Jensen
gap).  All entropies are in nats, so values live in ``[0, ln 2]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .net import Mlp, ParamSnapshot, save_snapshot_file, load_snapshot_file, sigmoid

LOG_CLAMP = 1e-12

#: measures usable for ranking pseudo-label candidates
MEASURES = ("epistemic", "aleatoric", "total", "confidence")


def binary_entropy(p):
    """Entropy (nats) of Bernoulli(p), elementwise.

    Exactly zero for p in {0, 1}; interior values clamp the log argument at
    1e-12.
    """
    p = np.asarray(p, dtype=np.float64)
    pc = np.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    h = -(p * np.log(pc) + (1.0 - p) * np.log(1.0 - pc))
    return np.where(p * (1.0 - p) == 0.0, 0.0, h)


@dataclass
class UncertaintyReport:
    """Per-sample mean predictions and uncertainty split, lengths all n.

    ``epistemic`` is exactly zero wherever all members agree bitwise; away
    from that it is ``total - aleatoric`` and may carry float residue on the
    order of 1e-16 below zero.
    """

    p_mean: np.ndarray
    f_mean: np.ndarray
    aleatoric: np.ndarray
    total: np.ndarray
    epistemic: np.ndarray

    def __len__(self):
        return self.p_mean.shape[0]

    def measure(self, kind):
        """Selection measure by name; lower always means 'safer to label'.

        ``confidence`` is the distance of the mean prediction from certainty,
        ``0.5 - |p - 0.5|``, used by the plain confidence-ranked baseline.
        """
        if kind == "epistemic":
            return self.epistemic
        if kind == "aleatoric":
            return self.aleatoric
        if kind == "total":
            return self.total
        if kind == "confidence":
            return 0.5 - np.abs(self.p_mean - 0.5)
        raise ConfigurationError(f"unknown measure '{kind}' (known: {', '.join(MEASURES)})")


def decompose(probs, logits=None):
    """Split member predictions into aleatoric / epistemic / total parts.

    Parameters
    ----------
    probs : (n, K) array of member probabilities in [0, 1].
    logits : optional (n, K) array of member scores; when given, ``f_mean``
        is their member-mean, otherwise it is the log-odds of ``p_mean``.

    The result is invariant (bitwise) under permutations of the members:
    each row is sorted before reduction.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] < 1:
        raise ValueError(f"probs must be (n, K) with K >= 1, got {probs.shape}")
    if not np.all(np.isfinite(probs)) or probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueError("probs must be finite and within [0, 1]")

    ps = np.sort(probs, axis=1)
    agree = ps[:, 0] == ps[:, -1]

    p_mean = ps.mean(axis=1)
    p_mean[agree] = ps[agree, 0]
    total = binary_entropy(p_mean)
    aleatoric = binary_entropy(ps).mean(axis=1)
    aleatoric[agree] = total[agree]
    epistemic = total - aleatoric

    if logits is not None:
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != probs.shape:
            raise ValueError(f"logits shape {logits.shape} != probs shape {probs.shape}")
        f_mean = np.sort(logits, axis=1).mean(axis=1)
    else:
        pc = np.clip(p_mean, LOG_CLAMP, 1.0 - LOG_CLAMP)
        f_mean = np.log(pc) - np.log(1.0 - pc)
    return UncertaintyReport(p_mean, f_mean, aleatoric, total, epistemic)


@dataclass
class Ensemble:
    """A bag of identically shaped networks plus their remembered states.

    ``init_snapshots`` hold the shared starting point theta_0 each round of
    self-training can rewind to; ``best_snapshots`` track the
    validation-best parameters theta_star seen so far.
    """

    members: list
    init_snapshots: list
    best_snapshots: list = None
    best_score: float = -np.inf

    @classmethod
    def create(cls, layer_sizes, n_members, dropout_p, rngs):
        if n_members < 1:
            raise ConfigurationError(f"need at least one member, got {n_members}")
        if len(rngs) != n_members:
            raise ValueError("need one rng per member")
        members = [Mlp(layer_sizes, dropout_p=dropout_p, rng=r) for r in rngs]
        return cls(members=members, init_snapshots=[m.snapshot() for m in members])

    @property
    def k(self):
        return len(self.members)

    def restore_init(self):
        for m, snap in zip(self.members, self.init_snapshots):
            m.restore(snap)

    def reset_init(self, rngs):
        """Draw fresh starting weights (used by the fresh-reinit ablation)."""
        dropout_p = self.members[0].dropout_p
        sizes = self.members[0].layer_sizes
        self.members = [Mlp(sizes, dropout_p=dropout_p, rng=r) for r in rngs]
        self.init_snapshots = [m.snapshot() for m in self.members]

    def note_score(self, score):
        """Remember current weights as best if ``score`` strictly improves."""
        if score > self.best_score:
            self.best_score = score
            self.best_snapshots = [m.snapshot() for m in self.members]
            return True
        return False

    def restore_best(self):
        if self.best_snapshots is None:
            raise RuntimeError("no best snapshot recorded yet")
        for m, snap in zip(self.members, self.best_snapshots):
            m.restore(snap)

    def member_logits(self, x, chunk=4096):
        """(n, K) matrix of member scores, computed without dropout."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((x.shape[0], self.k))
        for start in range(0, x.shape[0], chunk):
            xb = x[start : start + chunk]
            for j, m in enumerate(self.members):
                out[start : start + xb.shape[0], j] = m.forward(xb)
        return out

    def predict_proba(self, x):
        """Mean member probability per sample (same reduction as decompose)."""
        logits = self.member_logits(x)
        return decompose(sigmoid(logits), logits).p_mean

    def save(self, path, *, feature_mean=0.0, feature_std=1.0, meta=None, best=True):
        models = self.members
        if best and self.best_snapshots is not None:
            models = []
            for m, snap in zip(self.members, self.best_snapshots):
                clone = Mlp(m.layer_sizes, dropout_p=m.dropout_p)
                clone.restore(snap)
                models.append(clone)
        save_snapshot_file(
            path, models, feature_mean=feature_mean, feature_std=feature_std, meta=meta
        )

    @classmethod
    def load(cls, path):
        models, header = load_snapshot_file(path)
        ens = cls(members=models, init_snapshots=[m.snapshot() for m in models])
        return ens, header


def predict_members(ensemble, x, *, estimator="ensemble", n_samples=None, rng=None):
    """Member predictions as ``(probs, logits)``, each of shape (n, K).

    ``estimator="ensemble"`` does one deterministic pass per member.
    ``estimator="mc_dropout"`` draws ``n_samples`` stochastic passes of the
    first member with dropout active (requires the member to have been built
    with ``dropout_p > 0`` and an ``rng``).
    """
    x = np.asarray(x, dtype=np.float64)
    if estimator == "ensemble":
        logits = ensemble.member_logits(x)
    elif estimator == "mc_dropout":
        model = ensemble.members[0]
        if model.dropout_p <= 0.0:
            raise ConfigurationError("mc_dropout needs a network with dropout_p > 0")
        if not n_samples or n_samples < 1:
            raise ConfigurationError(f"mc_dropout needs n_samples >= 1, got {n_samples}")
        if rng is None:
            raise ValueError("mc_dropout requires an rng")
        logits = np.empty((x.shape[0], n_samples))
        for j in range(n_samples):
            logits[:, j] = model.forward(x, dropout_active=True, rng=rng)
    else:
        raise ConfigurationError(
            f"unknown estimator '{estimator}' (known: ensemble, mc_dropout)"
        )
    return sigmoid(logits), logits
