"""Datasets: construction, PU-ification, splitting, and file loaders.

Two containers cover the whole pipeline.  ``LabeledDataset`` is an ordinary
(features, class labels) pair.  ``PUDataset`` is the training view: every
sample is exactly one of labeled-positive (P), unlabeled (U), or
pseudo-labeled (L), with soft working labels — 1.0 on P, 0.0 on U, and a
value in (0, 1) on L.  Ground truth, when known, rides along in a separate
field that the training path never reads; it exists for evaluation and
diagnostics only.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DataFormatError

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

#: working labels on L are kept inside (0, 1) by this margin
LABEL_MARGIN = 1e-6


@dataclass(frozen=True)
class LabeledDataset:
    """Plain supervised dataset; labels are integer class ids."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {feats.shape}")
        if labs.shape != (feats.shape[0],):
            raise ValueError(f"labels shape {labs.shape} does not match {feats.shape[0]} rows")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class PUDataset:
    """Features plus a P/U/L partition and soft working labels.

    Invariants (checked on construction):

    * ``set_p``, ``set_u``, ``set_l`` are sorted, disjoint, and together
      cover every row exactly once;
    * ``labels`` is 1.0 on P, 0.0 on U, and strictly inside (0, 1) on L;
    * ``true_labels``, when present, is a 0/1 vector of the same length.

    Instances are immutable; label updates go through :meth:`revise`.
    """

    features: np.ndarray
    labels: np.ndarray
    set_p: np.ndarray
    set_u: np.ndarray
    set_l: np.ndarray
    true_labels: np.ndarray = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.float64)
        p = np.sort(np.asarray(self.set_p, dtype=np.int64))
        u = np.sort(np.asarray(self.set_u, dtype=np.int64))
        l = np.sort(np.asarray(self.set_l, dtype=np.int64))
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {feats.shape}")
        n = feats.shape[0]
        if labs.shape != (n,):
            raise ValueError(f"labels shape {labs.shape} does not match {n} rows")
        merged = np.concatenate([p, u, l])
        if merged.size != n or np.unique(merged).size != n or (
            n > 0 and (merged.min() < 0 or merged.max() >= n)
        ):
            raise ValueError("set_p/set_u/set_l must partition the row indices")
        if not (np.all(labs[p] == 1.0) and np.all(labs[u] == 0.0)):
            raise ValueError("labels must be 1.0 on P and 0.0 on U")
        if l.size and not np.all((labs[l] > 0.0) & (labs[l] < 1.0)):
            raise ValueError("labels on L must lie strictly inside (0, 1)")
        truth = self.true_labels
        if truth is not None:
            truth = np.asarray(truth, dtype=np.int64)
            if truth.shape != (n,) or not np.all((truth == 0) | (truth == 1)):
                raise ValueError("true_labels must be a 0/1 vector matching the rows")
        for arr in (feats, labs, p, u, l) + ((truth,) if truth is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "set_p", p)
        object.__setattr__(self, "set_u", u)
        object.__setattr__(self, "set_l", l)
        object.__setattr__(self, "true_labels", truth)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def n_p(self):
        return self.set_p.size

    @property
    def n_u(self):
        return self.set_u.size

    @property
    def n_l(self):
        return self.set_l.size

    def revise(self, *, labels, set_u, set_l):
        """New revision with updated working labels and U/L membership."""
        return replace(self, labels=labels, set_u=set_u, set_l=set_l)

    def subset(self, indices):
        """Re-indexed copy containing only ``indices`` (any order -> sorted)."""
        indices = np.sort(np.asarray(indices, dtype=np.int64))
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[indices] = np.arange(indices.size)

        def remap(s):
            kept = s[pos[s] >= 0]
            return pos[kept]

        return PUDataset(
            features=self.features[indices],
            labels=self.labels[indices],
            set_p=remap(self.set_p),
            set_u=remap(self.set_u),
            set_l=remap(self.set_l),
            true_labels=None if self.true_labels is None else self.true_labels[indices],
        )


@dataclass(frozen=True)
class SplitSpec:
    """How to carve a validation set out of a dataset.

    With ``matched=True`` (the default) a PU dataset is split so the
    validation labeled-positive fraction matches the training one:
    ``n_val_pos = round(validation_size * |P| / (n - validation_size))``.
    """

    validation_size: int
    seed: int = 0
    matched: bool = True


@dataclass(frozen=True)
class BiasSpec:
    """Non-uniform positive labeling: subgroup ids and per-subgroup weights."""

    subgroup_ids: np.ndarray
    weights: dict

    def __post_init__(self):
        ids = np.asarray(self.subgroup_ids, dtype=np.int64)
        object.__setattr__(self, "subgroup_ids", ids)
        w = {int(k): float(v) for k, v in self.weights.items()}
        if not w:
            raise ConfigurationError("bias weights must not be empty")
        if any(v < 0 for v in w.values()):
            raise ConfigurationError("bias weights must be non-negative")
        total = sum(w.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"bias weights must sum to 1, got {total}")
        object.__setattr__(self, "weights", w)


def make_gaussians(n, prior, separation, dim=2, seed=0):
    """Two spherical unit-variance Gaussian blobs along the first axis.

    Class 1 is centered at ``+separation/2`` on coordinate 0, class 0 at
    ``-separation/2``; remaining coordinates are pure noise.  The class-1
    count is ``round(n * prior)``.  The Bayes rule is the sign of the first
    coordinate, with accuracy ``Phi(separation / 2)``.
    """
    if n < 2:
        raise ConfigurationError(f"n must be >= 2, got {n}")
    if not 0.0 < prior < 1.0:
        raise ConfigurationError(f"prior must be in (0, 1), got {prior}")
    if separation < 0.0:
        raise ConfigurationError(f"separation must be >= 0, got {separation}")
    if dim < 1:
        raise ConfigurationError(f"dim must be >= 1, got {dim}")
    n_pos = int(round(n * prior))
    if n_pos == 0 or n_pos == n:
        raise ConfigurationError(f"prior {prior} leaves one class empty at n={n}")
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_pos]] = 1
    features = rng.standard_normal((n, dim))
    features[:, 0] += np.where(labels == 1, separation / 2.0, -separation / 2.0)
    return LabeledDataset(features, labels)


def binarize(ds, positive_classes):
    """Collapse a multiclass dataset to 0/1 labels."""
    wanted = sorted({int(c) for c in positive_classes})
    if not wanted:
        raise ConfigurationError("positive_classes must not be empty")
    present = set(np.unique(ds.labels).tolist())
    missing = [c for c in wanted if c not in present]
    if missing:
        raise ConfigurationError(
            f"positive classes {missing} do not occur in the data (present: {sorted(present)})"
        )
    labels = np.isin(ds.labels, wanted).astype(np.int64)
    if labels.min() == labels.max():
        raise ConfigurationError("binarization left one class empty")
    return LabeledDataset(ds.features, labels)


def pu_ify(ds, n_labeled, seed=0, bias=None):
    """Hide labels: keep ``n_labeled`` positives as P, everything else as U.

    With a :class:`BiasSpec`, labeled positives are drawn subgroup-first: a
    multinomial split of ``n_labeled`` over the subgroup weights, then
    uniform draws inside each subgroup (shortfalls from small subgroups are
    re-spread over the ones with capacity left).  Ground truth is retained
    on the result for evaluation.
    """
    if not np.all((ds.labels == 0) | (ds.labels == 1)):
        raise ConfigurationError("pu_ify needs binary labels; run binarize first")
    pos = np.flatnonzero(ds.labels == 1)
    if not 1 <= n_labeled <= pos.size:
        raise ConfigurationError(
            f"n_labeled must be in [1, {pos.size}] (number of positives), got {n_labeled}"
        )
    rng = np.random.default_rng(seed)
    if bias is None:
        chosen = rng.choice(pos, size=n_labeled, replace=False)
    else:
        if bias.subgroup_ids.shape != (ds.n,):
            raise ConfigurationError(
                f"subgroup_ids must have length {ds.n}, got {bias.subgroup_ids.shape}"
            )
        chosen = _biased_choice(pos, bias, n_labeled, rng)
    chosen = np.sort(chosen)
    labels = np.zeros(ds.n, dtype=np.float64)
    labels[chosen] = 1.0
    mask = np.zeros(ds.n, dtype=bool)
    mask[chosen] = True
    return PUDataset(
        features=ds.features,
        labels=labels,
        set_p=chosen,
        set_u=np.flatnonzero(~mask),
        set_l=np.zeros(0, dtype=np.int64),
        true_labels=ds.labels,
    )


def _biased_choice(pos, bias, n_labeled, rng):
    groups = sorted(bias.weights)
    by_group = {g: pos[bias.subgroup_ids[pos] == g] for g in groups}
    capacity = {g: by_group[g].size for g in groups}
    if sum(capacity.values()) < n_labeled:
        raise ConfigurationError(
            "bias weights cover too few positives "
            f"({sum(capacity.values())} available, {n_labeled} requested)"
        )
    chosen = []
    remaining = n_labeled
    weights = dict(bias.weights)
    while remaining > 0:
        live = [g for g in groups if capacity[g] > 0 and weights[g] > 0]
        if not live:
            # only zero-weight groups have room left; fall back to uniform
            pool = np.concatenate([by_group[g] for g in groups if capacity[g] > 0])
            chosen.append(rng.choice(pool, size=remaining, replace=False))
            break
        w = np.array([weights[g] for g in live])
        counts = rng.multinomial(remaining, w / w.sum())
        for g, want in zip(live, counts):
            take = min(int(want), capacity[g])
            if take == 0:
                continue
            picked = rng.choice(by_group[g], size=take, replace=False)
            chosen.append(picked)
            by_group[g] = np.setdiff1d(by_group[g], picked)
            capacity[g] -= take
            remaining -= take
    return np.concatenate(chosen)


def split(ds, spec):
    """Partition ``ds`` into (train, val) according to ``spec``.

    PU datasets with ``matched=True`` are split stratified by P/U so the
    validation P fraction mirrors the training one.  Splitting a PU dataset
    that already has pseudo-labels is refused.
    """
    v = int(spec.validation_size)
    if not 0 < v < ds.n:
        raise ConfigurationError(
            f"validation_size must be in (0, {ds.n}), got {spec.validation_size}"
        )
    rng = np.random.default_rng(spec.seed)
    if isinstance(ds, PUDataset) and spec.matched:
        if ds.n_l:
            raise ConfigurationError("cannot split a PU dataset that already has pseudo-labels")
        n_val_pos = int(round(v * ds.n_p / (ds.n - v)))
        n_val_unl = v - n_val_pos
        if n_val_pos > ds.n_p or n_val_unl > ds.n_u or n_val_unl < 0:
            raise ConfigurationError(
                f"matched split infeasible: needs {n_val_pos} P + {n_val_unl} U "
                f"from {ds.n_p} P / {ds.n_u} U"
            )
        val_p = rng.choice(ds.set_p, size=n_val_pos, replace=False) if n_val_pos else np.zeros(0, np.int64)
        val_u = rng.choice(ds.set_u, size=n_val_unl, replace=False)
        val_idx = np.sort(np.concatenate([val_p, val_u]).astype(np.int64))
    else:
        val_idx = np.sort(rng.permutation(ds.n)[:v])
    mask = np.zeros(ds.n, dtype=bool)
    mask[val_idx] = True
    train_idx = np.flatnonzero(~mask)
    return ds.subset(train_idx), ds.subset(val_idx)


def standardize(train, *others):
    """Center/scale all feature matrices by the train split's global stats.

    A single scalar mean and standard deviation are computed over every
    entry of ``train.features`` and applied to all datasets.  Returns the
    normalized datasets in the order given, followed by ``(mean, std)``.
    A zero spread is treated as 1 so constant features map to zero.
    """
    mean = float(train.features.mean())
    std = float(train.features.std())
    if std == 0.0:
        std = 1.0

    def apply(ds):
        feats = (ds.features - mean) / std
        return replace(ds, features=feats)

    out = [apply(d) for d in (train, *others)]
    return (*out, (mean, std))


# -- file formats ------------------------------------------------------------


def _read_be_u32(f, path):
    raw = f.read(4)
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated at byte offset {f.tell() - len(raw)}")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path):
    """Read an images/labels pair in the big-endian IDX format.

    Pixels come out as float64 in [0, 255], one flattened row per image.
    """
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad magic {magic} at byte offset 0 (expected {IDX_IMAGE_MAGIC})"
            )
        n = _read_be_u32(f, images_path)
        rows = _read_be_u32(f, images_path)
        cols = _read_be_u32(f, images_path)
        want = n * rows * cols
        raw = f.read(want)
        if len(raw) < want:
            raise DataFormatError(
                f"{images_path}: truncated image data at byte offset {16 + len(raw)} "
                f"(expected {want} bytes)"
            )
        if f.read(1):
            raise DataFormatError(f"{images_path}: trailing data after image block")
    features = np.frombuffer(raw, dtype=np.uint8).astype(np.float64).reshape(n, rows * cols)

    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad magic {magic} at byte offset 0 (expected {IDX_LABEL_MAGIC})"
            )
        n_labels = _read_be_u32(f, labels_path)
        raw = f.read(n_labels)
        if len(raw) < n_labels:
            raise DataFormatError(
                f"{labels_path}: truncated label data at byte offset {8 + len(raw)} "
                f"(expected {n_labels} bytes)"
            )
        if f.read(1):
            raise DataFormatError(f"{labels_path}: trailing data after label block")
    if n_labels != n:
        raise DataFormatError(
            f"{labels_path}: {n_labels} labels for {n} images in {images_path}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    return LabeledDataset(features, labels)


def load_csv(path):
    """Read a feature table with header ``f0,...,fK,label``."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        expected = [f"f{i}" for i in range(len(header) - 1)] + ["label"]
        if header != expected:
            raise DataFormatError(
                f"{path}: line 1: header must be f0,...,f{len(header) - 2},label, got {header}"
            )
        width = len(header)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(row)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            label = values[-1]
            if label != int(label):
                raise DataFormatError(
                    f"{path}: line {lineno}: label must be an integer, got {row[-1]}"
                )
            feats.append(values[:-1])
            labels.append(int(label))
    if not feats:
        raise DataFormatError(f"{path}: no data rows")
    return LabeledDataset(np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64))


def save_csv(path, ds):
    """Inverse of :func:`load_csv`, mainly for exporting small test sets."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"f{i}" for i in range(ds.dim)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
