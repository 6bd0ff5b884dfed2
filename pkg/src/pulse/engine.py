"""The uncertainty-aware self-training loop for PU data.

One *run* repeats up to ``max_iterations`` rounds of:

1. rewind the ensemble to its shared starting weights (or re-draw / keep
   them, per ``reinit_mode``) and train every member for
   ``epochs_per_iteration`` epochs on the current P/U/L partition, tracking
   the best validation score seen at any epoch;
2. predict the whole training set, decompose the ensemble disagreement into
   aleatoric/epistemic/total uncertainty;
3. promote the lowest-uncertainty unlabeled samples (capped by rank and by
   an absolute threshold, then class-balanced) into the pseudo-labeled set
   with their mean prediction as a soft label, and demote pseudo-labeled
   samples whose epistemic uncertainty grew past the removal threshold.

The run stops early after ``patience`` consecutive rounds without a new
validation best.  The final model is the validation-best ensemble.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import seeding
from .data import PUDataset, LABEL_MARGIN
from .errors import ConfigurationError, NumericFailure
from .losses import PuLossConfig, combined_loss, combined_loss_grad
from .metrics import accuracy, ece, pu_auc, nll, evaluate, EvalReport
from .net import AdamState, adam_step
from .uncertainty import Ensemble, decompose, predict_members

LN2 = float(np.log(2.0))

SELECTION_MODES = ("uncertainty", "confidence", "none")
BALANCE_MODES = ("equal", "prior_ratio", "none")
REINIT_MODES = ("same_weights", "fresh", "none")
ESTIMATORS = ("ensemble", "mc_dropout")
CRITERIA = ("pu_auc", "accuracy")


@dataclass(frozen=True)
class SelfTrainingConfig:
    """Knobs of the outer loop.  Defaults follow the recommended recipe.

    ``max_new_labels`` (the rank cap) may be 0 and ``assign_threshold`` may
    be 0.0; either degenerates the loop into plain PU training, which is a
    useful control.
    """

    selection: str = "uncertainty"
    uncertainty_kind: str = "epistemic"
    estimator: str = "ensemble"
    ensemble_size: int = 2
    max_new_labels: int = 1000
    assign_threshold: float = 0.05
    remove_threshold: float = 0.35
    target_ratio: float = 1.0
    balance_mode: str = "equal"
    reinit_mode: str = "same_weights"
    soft_labels: bool = True
    reassign_all: bool = False
    max_iterations: int = 15
    epochs_per_iteration: int = 50
    patience: int = 3

    def validate(self):
        if self.selection not in SELECTION_MODES:
            raise ConfigurationError(
                f"selection must be one of {SELECTION_MODES}, got '{self.selection}'"
            )
        if self.uncertainty_kind not in ("epistemic", "aleatoric", "total"):
            raise ConfigurationError(
                f"uncertainty_kind must be epistemic/aleatoric/total, got '{self.uncertainty_kind}'"
            )
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"estimator must be one of {ESTIMATORS}, got '{self.estimator}'")
        if self.ensemble_size < 1:
            raise ConfigurationError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if self.max_new_labels < 0:
            raise ConfigurationError(f"max_new_labels must be >= 0, got {self.max_new_labels}")
        if not 0.0 <= self.assign_threshold <= LN2:
            raise ConfigurationError(
                f"assign_threshold must be in [0, ln 2 = {LN2:.4f}], got {self.assign_threshold}"
            )
        if not 0.0 <= self.remove_threshold <= LN2:
            raise ConfigurationError(
                f"remove_threshold must be in [0, ln 2 = {LN2:.4f}], got {self.remove_threshold}"
            )
        if self.assign_threshold > self.remove_threshold:
            raise ConfigurationError(
                f"assign_threshold ({self.assign_threshold}) must not exceed "
                f"remove_threshold ({self.remove_threshold})"
            )
        if self.target_ratio <= 0:
            raise ConfigurationError(f"target_ratio must be > 0, got {self.target_ratio}")
        if self.balance_mode not in BALANCE_MODES:
            raise ConfigurationError(
                f"balance_mode must be one of {BALANCE_MODES}, got '{self.balance_mode}'"
            )
        if self.balance_mode == "equal" and self.target_ratio != 1.0:
            raise ConfigurationError(
                f"balance_mode 'equal' requires target_ratio 1, got {self.target_ratio}"
            )
        if self.reinit_mode not in REINIT_MODES:
            raise ConfigurationError(
                f"reinit_mode must be one of {REINIT_MODES}, got '{self.reinit_mode}'"
            )
        if self.max_iterations < 1:
            raise ConfigurationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.epochs_per_iteration < 1:
            raise ConfigurationError(
                f"epochs_per_iteration must be >= 1, got {self.epochs_per_iteration}"
            )
        if self.patience < 0:
            raise ConfigurationError(f"patience must be >= 0, got {self.patience}")


@dataclass(frozen=True)
class NetworkSettings:
    hidden_sizes: tuple = (300, 300, 300, 300)
    dropout_p: float = 0.0


@dataclass(frozen=True)
class OptimizerSettings:
    lr: float = 1e-3
    batch_size: int = 128
    weight_decay: float = 0.0
    lr_decay: float = 0.99


@dataclass(frozen=True)
class RunSettings:
    """Everything one training run needs besides data and a seed."""

    loss: PuLossConfig
    self_training: SelfTrainingConfig = SelfTrainingConfig()
    network: NetworkSettings = NetworkSettings()
    optimizer: OptimizerSettings = OptimizerSettings()
    criterion: str = "pu_auc"
    ece_bins: int = 10

    def validate(self):
        self.self_training.validate()
        if self.criterion not in CRITERIA:
            raise ConfigurationError(f"criterion must be one of {CRITERIA}, got '{self.criterion}'")
        if self.optimizer.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.optimizer.lr}")
        if self.optimizer.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.optimizer.batch_size}")
        if not 0.0 < self.optimizer.lr_decay <= 1.0:
            raise ConfigurationError(f"lr_decay must be in (0, 1], got {self.optimizer.lr_decay}")
        if self.optimizer.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.optimizer.weight_decay}")
        if any(h < 1 for h in self.network.hidden_sizes):
            raise ConfigurationError(f"hidden sizes must be positive, got {self.network.hidden_sizes}")
        if not 0.0 <= self.network.dropout_p < 1.0:
            raise ConfigurationError(f"dropout_p must be in [0, 1), got {self.network.dropout_p}")
        if self.self_training.estimator == "mc_dropout" and self.network.dropout_p <= 0.0:
            raise ConfigurationError("estimator mc_dropout requires dropout_p > 0")
        if self.ece_bins < 1:
            raise ConfigurationError(f"ece_bins must be >= 1, got {self.ece_bins}")


@dataclass
class EpochRow:
    iteration: int
    epoch: int
    loss: float
    loss_pu: float
    loss_pl: float
    lr: float
    val_score: float
    val_ece: float


@dataclass
class IterationOutcome:
    """What one self-training round did to the dataset."""

    iteration: int
    n_selected: int
    n_added: int
    n_removed: int
    n_p: int
    n_u: int
    n_l: int
    val_last: float
    val_best: float
    improved: bool
    pl_accuracy: float = None
    pl_nll: float = None

    def to_dict(self):
        return asdict(self)


EPOCH_FIELDS = (
    "iteration", "epoch", "loss", "loss_pu", "loss_pl", "lr", "val_score", "val_ece"
)


@dataclass
class RunLog:
    """Per-epoch and per-iteration training record.

    CSV/JSONL serialization uses ``repr`` for floats, so identical runs
    produce byte-identical files and parsing the files back recovers the
    exact values.
    """

    epochs: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    def epochs_to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(",".join(EPOCH_FIELDS) + "\n")
            for row in self.epochs:
                f.write(
                    f"{row.iteration},{row.epoch},{row.loss!r},{row.loss_pu!r},"
                    f"{row.loss_pl!r},{row.lr!r},{row.val_score!r},{row.val_ece!r}\n"
                )

    @staticmethod
    def epochs_from_csv(path):
        rows = []
        with open(path, newline="") as f:
            header = f.readline().strip().split(",")
            if tuple(header) != EPOCH_FIELDS:
                raise ValueError(f"{path}: unexpected columns {header}")
            for line in f:
                it, ep, *floats = line.strip().split(",")
                rows.append(EpochRow(int(it), int(ep), *[float(v) for v in floats]))
        return rows

    def iterations_to_jsonl(self, path):
        with open(path, "w") as f:
            for out in self.iterations:
                f.write(json.dumps(out.to_dict(), sort_keys=True) + "\n")

    @staticmethod
    def iterations_from_jsonl(path):
        outs = []
        with open(path) as f:
            for line in f:
                outs.append(IterationOutcome(**json.loads(line)))
        return outs


# -- selection primitives (pure functions over index + measure arrays) -------


def rank_and_select(candidates, measure, max_new, threshold):
    """Pick the lowest-``measure`` candidates, capped by rank and threshold.

    Candidates are ranked ascending by ``(measure, index)`` — ties broken by
    the smaller index — and kept while both rank <= ``max_new`` and measure
    <= ``threshold``.  ``max_new=None`` (or inf) disables the rank cap.
    Returns the kept ids sorted by index.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    measure = np.asarray(measure, dtype=np.float64)
    if candidates.size == 0:
        raise ValueError("rank_and_select needs a non-empty candidate set")
    if measure.shape != candidates.shape:
        raise ValueError(f"measure shape {measure.shape} != candidates shape {candidates.shape}")
    if max_new is None or max_new == np.inf:
        cap = candidates.size
    else:
        cap = min(int(max_new), candidates.size)
    order = np.lexsort((candidates, measure))
    top = order[:cap]
    kept = top[measure[top] <= threshold]
    return np.sort(candidates[kept])


def balance(selected, probs, measure, mode, prior=0.5, target_ratio=1.0):
    """Trim a selection so its positive/negative split hits a target ratio.

    Sides are decided by rounding ``probs`` (0.5 rounds up).  ``equal`` keeps
    ``min(n_pos, n_neg)`` per side, ``prior_ratio`` targets ``prior`` vs
    ``1 - prior``, ``none`` keeps everything.  Within a side the
    lowest-``measure`` entries survive (ties by index).  Returns ids sorted
    by index.
    """
    selected = np.asarray(selected, dtype=np.int64)
    if mode not in BALANCE_MODES:
        raise ConfigurationError(f"balance mode must be one of {BALANCE_MODES}, got '{mode}'")
    if selected.size == 0 or mode == "none":
        return np.sort(selected)
    probs = np.asarray(probs, dtype=np.float64)
    measure = np.asarray(measure, dtype=np.float64)
    if probs.shape != selected.shape or measure.shape != selected.shape:
        raise ValueError("probs and measure must align with selected")
    is_pos = probs >= 0.5
    pos_ids, pos_meas = selected[is_pos], measure[is_pos]
    neg_ids, neg_meas = selected[~is_pos], measure[~is_pos]
    n_pos, n_neg = pos_ids.size, neg_ids.size
    if mode == "equal":
        ratio = target_ratio
    else:
        ratio = prior / (1.0 - prior)
    # largest (k_pos, k_neg) with k_pos <= n_pos, k_neg <= n_neg, k_pos ~= ratio * k_neg
    if n_pos >= int(round(ratio * n_neg)):
        k_neg = n_neg
        k_pos = min(n_pos, int(round(ratio * n_neg)))
    else:
        k_pos = n_pos
        k_neg = min(n_neg, int(round(n_pos / ratio)))

    def best(ids, meas, k):
        if k <= 0:
            return np.zeros(0, dtype=np.int64)
        order = np.lexsort((ids, meas))
        return ids[order[:k]]

    kept = np.concatenate([best(pos_ids, pos_meas, k_pos), best(neg_ids, neg_meas, k_neg)])
    return np.sort(kept)


def select_for_removal(pseudo_ids, epistemic, threshold):
    """Pseudo-labeled ids whose epistemic uncertainty reached ``threshold``."""
    pseudo_ids = np.asarray(pseudo_ids, dtype=np.int64)
    epistemic = np.asarray(epistemic, dtype=np.float64)
    if epistemic.shape != pseudo_ids.shape:
        raise ValueError("epistemic must align with pseudo_ids")
    return np.sort(pseudo_ids[epistemic >= threshold])


def soft_label_values(p, soft):
    """Working label for newly pseudo-labeled samples, kept inside (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if not soft:
        p = (p >= 0.5).astype(np.float64)
    return np.clip(p, LABEL_MARGIN, 1.0 - LABEL_MARGIN)


def apply_label_updates(ds, added, removed, p_mean, *, soft=True, reassign_all=False):
    """One revision step: U -> L additions, L -> U removals, label refresh.

    ``added`` must come from U and ``removed`` from L.  With
    ``reassign_all``, samples staying in L get their label recomputed from
    the current ``p_mean`` too; otherwise they keep the value assigned when
    they first entered L.
    """
    added = np.asarray(added, dtype=np.int64)
    removed = np.asarray(removed, dtype=np.int64)
    if added.size and np.setdiff1d(added, ds.set_u).size:
        raise ValueError("added ids must be unlabeled")
    if removed.size and np.setdiff1d(removed, ds.set_l).size:
        raise ValueError("removed ids must be pseudo-labeled")
    labels = ds.labels.copy()
    staying = np.setdiff1d(ds.set_l, removed)
    new_l = np.union1d(staying, added)
    new_u = np.union1d(np.setdiff1d(ds.set_u, added), removed)
    if added.size:
        labels[added] = soft_label_values(p_mean[added], soft)
    if reassign_all and staying.size:
        labels[staying] = soft_label_values(p_mean[staying], soft)
    labels[removed] = 0.0
    return ds.revise(labels=labels, set_u=new_u, set_l=new_l)


def stratified_batches(ds, batch_size, rng):
    """Deterministic epoch partition keeping every batch mixed.

    Each of P, U, L is shuffled and dealt round-robin over
    ``ceil(n / batch_size)`` batches, so every batch sees the sets in their
    global proportions.  Batches left without any P (or U) sample borrow one
    (duplicated) so the PU risk stays defined everywhere.  Returns a list of
    ``(p_idx, u_idx, l_idx)`` triples.
    """
    n_batches = max(1, int(np.ceil(ds.n / batch_size)))
    shuf_p = ds.set_p[rng.permutation(ds.set_p.size)]
    shuf_u = ds.set_u[rng.permutation(ds.set_u.size)]
    shuf_l = ds.set_l[rng.permutation(ds.set_l.size)]
    batches = []
    for i in range(n_batches):
        p_i = shuf_p[i::n_batches]
        u_i = shuf_u[i::n_batches]
        l_i = shuf_l[i::n_batches]
        if p_i.size == 0 and shuf_p.size:
            p_i = shuf_p[i % shuf_p.size : i % shuf_p.size + 1]
        if u_i.size == 0 and shuf_u.size:
            u_i = shuf_u[i % shuf_u.size : i % shuf_u.size + 1]
        batches.append((p_i, u_i, l_i))
    return batches


# -- the run itself ----------------------------------------------------------


@dataclass
class RunResult:
    runlog: RunLog
    ensemble: Ensemble
    dataset: PUDataset
    val_best: float
    test_report: EvalReport = None
    pl_accuracy: float = None
    pl_nll: float = None


def _val_score(ensemble, val, criterion, ece_bins):
    """Validation criterion plus calibration gap, both against PU labels."""
    probs = ensemble.predict_proba(val.features)
    pu_binary = np.zeros(val.n, dtype=np.int64)
    pu_binary[val.set_p] = 1
    val_ece = ece(probs, pu_binary, n_bins=ece_bins)
    if criterion == "accuracy":
        return accuracy(probs, pu_binary), val_ece
    return pu_auc(probs[val.set_p], probs[val.set_u]), val_ece


def _train_one_iteration(ensemble, adams, ds, val, settings, seed, iteration, runlog):
    """Train all members for one round of epochs; returns True if the
    validation best improved at any epoch."""
    st = settings.self_training
    opt = settings.optimizer
    dropout_on = settings.network.dropout_p > 0.0
    improved = False
    for epoch in range(1, st.epochs_per_iteration + 1):
        batch_rng = seeding.stream(seed, "batches", iteration, epoch)
        lr_now = adams[0].current_lr()
        sum_loss = sum_pu = sum_pl = 0.0
        n_terms = 0
        for b_i, (p_idx, u_idx, l_idx) in enumerate(
            stratified_batches(ds, opt.batch_size, batch_rng)
        ):
            batch_idx = np.concatenate([p_idx, u_idx, l_idx])
            xb = ds.features[batch_idx]
            targets_l = ds.labels[l_idx]
            np_, nu = p_idx.size, u_idx.size
            for k, (model, adam) in enumerate(zip(ensemble.members, adams)):
                drop_rng = (
                    seeding.stream(seed, "dropout", k, iteration, epoch, b_i)
                    if dropout_on
                    else None
                )
                scores = model.forward(xb, dropout_active=dropout_on, rng=drop_rng, cache=True)
                value, parts = combined_loss(
                    scores[:np_], scores[np_ : np_ + nu], scores[np_ + nu :], targets_l,
                    settings.loss,
                )
                if not np.isfinite(value):
                    raise NumericFailure(
                        f"non-finite loss {value} (iteration {iteration}, epoch {epoch}, "
                        f"member {k}, batch {b_i})",
                        iteration=iteration, epoch=epoch, member=k,
                    )
                g_p, g_u, g_l = combined_loss_grad(
                    scores[:np_], scores[np_ : np_ + nu], scores[np_ + nu :], targets_l,
                    settings.loss,
                )
                adam_step(model, model.backward(np.concatenate([g_p, g_u, g_l])), adam)
                sum_loss += value
                sum_pu += parts["pu"]
                sum_pl += parts["pl"]
                n_terms += 1
        for adam in adams:
            adam.end_epoch()
        score, val_ece = _val_score(ensemble, val, settings.criterion, settings.ece_bins)
        if ensemble.note_score(score):
            improved = True
        runlog.epochs.append(
            EpochRow(iteration, epoch, sum_loss / n_terms, sum_pu / n_terms,
                     sum_pl / n_terms, lr_now, score, val_ece)
        )
    return improved


def _selection_round(ensemble, ds, settings, seed, iteration):
    """Predict the train set and compute this round's additions/removals."""
    st = settings.self_training
    mc_rng = seeding.stream(seed, "mc-dropout", iteration)
    probs, logits = predict_members(
        ensemble, ds.features,
        estimator=st.estimator, n_samples=st.ensemble_size, rng=mc_rng,
    )
    report = decompose(probs, logits)
    kind = "confidence" if st.selection == "confidence" else st.uncertainty_kind
    measure = report.measure(kind)

    if ds.n_u and st.max_new_labels:
        selected = rank_and_select(
            ds.set_u, measure[ds.set_u], st.max_new_labels, st.assign_threshold
        )
    else:
        selected = np.zeros(0, dtype=np.int64)
    added = balance(
        selected, report.p_mean[selected], measure[selected],
        st.balance_mode, prior=settings.loss.prior, target_ratio=st.target_ratio,
    )
    removed = (
        select_for_removal(ds.set_l, report.epistemic[ds.set_l], st.remove_threshold)
        if ds.n_l
        else np.zeros(0, dtype=np.int64)
    )
    return report, selected, added, removed


def run(train, val, settings, seed=0, *, test=None, run_dir=None, resume=False):
    """Execute one full self-training run; see the module docstring.

    ``test``, when given, is a ground-truth dataset evaluated once with the
    final (validation-best) ensemble.  ``run_dir`` enables per-iteration
    checkpoints; with ``resume=True`` an interrupted run picks up at the
    next iteration boundary.
    """
    settings.validate()
    st = settings.self_training
    n_members = 1 if st.estimator == "mc_dropout" else st.ensemble_size
    layer_sizes = (train.dim, *settings.network.hidden_sizes, 1)
    ensemble = Ensemble.create(
        layer_sizes, n_members, settings.network.dropout_p,
        [seeding.stream(seed, "init", k) for k in range(n_members)],
    )
    runlog = RunLog()
    ds = train
    stale = 0
    start_iteration = 1

    ckpt_path = os.path.join(run_dir, "checkpoint") if run_dir else None
    if resume and ckpt_path and os.path.exists(ckpt_path + ".json"):
        ds, runlog, stale, start_iteration = _load_checkpoint(ckpt_path, ensemble, train)

    for iteration in range(start_iteration, st.max_iterations + 1):
        if iteration > 1:
            if st.reinit_mode == "same_weights":
                ensemble.restore_init()
            elif st.reinit_mode == "fresh":
                ensemble.reset_init(
                    [seeding.stream(seed, "init", k, iteration) for k in range(n_members)]
                )
        adams = [
            AdamState(
                lr=settings.optimizer.lr,
                weight_decay=settings.optimizer.weight_decay,
                decay_gamma=settings.optimizer.lr_decay,
            )
            for _ in range(n_members)
        ]
        improved = _train_one_iteration(
            ensemble, adams, ds, val, settings, seed, iteration, runlog
        )

        report, selected, added, removed = _selection_round(
            ensemble, ds, settings, seed, iteration
        )
        pl_acc = pl_nll_val = None
        if st.selection != "none" and (added.size or removed.size):
            ds = apply_label_updates(
                ds, added, removed, report.p_mean,
                soft=st.soft_labels, reassign_all=st.reassign_all,
            )
            if added.size and ds.true_labels is not None:
                truth = ds.true_labels[added]
                pl_acc = accuracy(ds.labels[added], truth)
                pl_nll_val = nll(ds.labels[added], truth)

        stale = 0 if improved else stale + 1
        runlog.iterations.append(
            IterationOutcome(
                iteration=iteration,
                n_selected=int(selected.size),
                n_added=int(added.size) if st.selection != "none" else 0,
                n_removed=int(removed.size) if st.selection != "none" else 0,
                n_p=ds.n_p, n_u=ds.n_u, n_l=ds.n_l,
                val_last=runlog.epochs[-1].val_score,
                val_best=ensemble.best_score,
                improved=improved,
                pl_accuracy=pl_acc, pl_nll=pl_nll_val,
            )
        )
        if ckpt_path:
            _save_checkpoint(ckpt_path, ds, ensemble, runlog, stale, iteration + 1)
        if stale > 0 and stale >= st.patience:
            break

    ensemble.restore_best()
    test_report = None
    if test is not None:
        probs = ensemble.predict_proba(test.features)
        test_report = evaluate(probs, test.labels, n_bins=settings.ece_bins)
    pl_acc = pl_nll_val = None
    if ds.n_l and ds.true_labels is not None:
        truth = ds.true_labels[ds.set_l]
        pl_acc = accuracy(ds.labels[ds.set_l], truth)
        pl_nll_val = nll(ds.labels[ds.set_l], truth)
    return RunResult(
        runlog=runlog, ensemble=ensemble, dataset=ds,
        val_best=ensemble.best_score, test_report=test_report,
        pl_accuracy=pl_acc, pl_nll=pl_nll_val,
    )


def prior_grid_search(train, val, settings, grid, seed=0):
    """Score a grid of prior guesses by validation criterion; returns
    ``(best_prior, [(prior, score), ...])``.

    Each candidate gets a single plain PU training round (no self-training)
    from identical initial weights, so scores differ only through the prior.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ConfigurationError("prior grid must not be empty")
    for g in grid:
        if not 0.0 < g < 1.0:
            raise ConfigurationError(f"prior candidates must be in (0, 1), got {g}")
    scores = []
    for g in grid:
        probe = replace(
            settings,
            loss=replace(settings.loss, prior=g),
            self_training=replace(
                settings.self_training, selection="none", max_iterations=1
            ),
        )
        result = run(train, val, probe, seed=seed)
        scores.append((g, result.val_best))
    best = max(scores, key=lambda t: t[1])[0]
    return best, scores


# -- checkpointing -----------------------------------------------------------


def _save_checkpoint(prefix, ds, ensemble, runlog, stale, next_iteration):
    arrays = {
        "labels": ds.labels,
        "set_p": ds.set_p,
        "set_u": ds.set_u,
        "set_l": ds.set_l,
        "member_flats": np.stack([m.flat_params() for m in ensemble.members]),
        "init_flats": np.stack([s.values for s in ensemble.init_snapshots]),
    }
    if ensemble.best_snapshots is not None:
        arrays["best_flats"] = np.stack([s.values for s in ensemble.best_snapshots])
    np.savez(prefix + ".npz", **arrays)
    state = {
        "next_iteration": next_iteration,
        "stale": stale,
        "best_score": None if ensemble.best_score == -np.inf else ensemble.best_score,
        "epochs": [asdict(r) for r in runlog.epochs],
        "iterations": [r.to_dict() for r in runlog.iterations],
    }
    tmp = prefix + ".json.tmp"
    with open(tmp, "w") as f:
        json.dump(state, f)
    os.replace(tmp, prefix + ".json")


def _load_checkpoint(prefix, ensemble, train):
    with open(prefix + ".json") as f:
        state = json.load(f)
    arrays = np.load(prefix + ".npz")
    ds = train.revise(
        labels=arrays["labels"], set_u=arrays["set_u"], set_l=arrays["set_l"]
    )
    for m, flat in zip(ensemble.members, arrays["member_flats"]):
        m.set_flat_params(flat)
    ensemble.init_snapshots = [
        replace(s, values=flat)
        for s, flat in zip(ensemble.init_snapshots, arrays["init_flats"])
    ]
    if "best_flats" in arrays:
        ensemble.best_snapshots = [
            replace(s, values=flat)
            for s, flat in zip(ensemble.init_snapshots, arrays["best_flats"])
        ]
    if state["best_score"] is not None:
        ensemble.best_score = state["best_score"]
    runlog = RunLog(
        epochs=[EpochRow(**r) for r in state["epochs"]],
        iterations=[IterationOutcome(**r) for r in state["iterations"]],
    )
    return ds, runlog, state["stale"], state["next_iteration"]
