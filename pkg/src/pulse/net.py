"""Fully connected binary scorer with hand-written backpropagation.

Everything runs in float64 on plain numpy arrays.  The network outputs one
raw score (logit) per input row; losses and probabilities live elsewhere.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, SnapshotShapeError

SNAPSHOT_MAGIC = b"PULSESNAP1\n"


def sigmoid(x):
    """Elementwise logistic function, stable for arbitrarily large |x|."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


@dataclass(frozen=True)
class ParamSnapshot:
    """Frozen copy of every parameter of one network, as a flat vector."""

    layer_sizes: tuple
    dropout_p: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.array(self.values, dtype=np.float64))
        self.values.setflags(write=False)


class _ForwardCache:
    __slots__ = ("inputs", "pre_acts", "masks")

    def __init__(self, inputs, pre_acts, masks):
        self.inputs = inputs        # activation entering each layer
        self.pre_acts = pre_acts    # pre-activation of each hidden layer
        self.masks = masks          # scaled dropout mask per hidden layer, or None


class Mlp:
    """Multilayer perceptron ``d -> hidden... -> 1`` with ReLU hidden units.

    Weights use He-uniform initialization (bound ``sqrt(6 / fan_in)``),
    biases start at zero.  Dropout, when enabled, is the inverted kind: kept
    activations are scaled by ``1 / (1 - p)`` at train time so evaluation
    needs no rescaling.
    """

    def __init__(self, layer_sizes, dropout_p=0.0, rng=None):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] != 1:
            raise ValueError(f"output layer must have size 1, got {sizes[-1]}")
        if not 0.0 <= dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {dropout_p}")
        if rng is None:
            rng = np.random.default_rng()
        self.layer_sizes = sizes
        self.dropout_p = float(dropout_p)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x, *, dropout_active=False, rng=None, cache=False):
        """Compute logits for a batch.

        Parameters
        ----------
        x : (n, d) array
        dropout_active : bool
            Draw and apply dropout masks (requires ``dropout_p > 0`` to have
            any effect, and ``rng`` to be supplied).
        rng : np.random.Generator
            Source for dropout masks; mandatory when dropout is active.
        cache : bool
            Remember intermediate activations so ``backward`` can run.

        Returns
        -------
        (n,) array of raw scores (logits).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"expected input of shape (n, {self.layer_sizes[0]}), got {x.shape}"
            )
        use_dropout = dropout_active and self.dropout_p > 0.0
        if use_dropout and rng is None:
            raise ValueError("dropout_active=True requires an rng")

        inputs, pre_acts, masks = [], [], []
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            if i == last:
                h = z
            else:
                pre_acts.append(z)
                h = np.maximum(z, 0.0)
                if use_dropout:
                    keep = rng.random(h.shape) >= self.dropout_p
                    mask = keep / (1.0 - self.dropout_p)
                    h = h * mask
                    masks.append(mask)
                else:
                    masks.append(None)
        self._cache = _ForwardCache(inputs, pre_acts, masks) if cache else None
        return h[:, 0]

    def backward(self, upstream):
        """Gradients of a scalar loss w.r.t. every parameter.

        ``upstream`` is dLoss/dlogits, shape (n,), for the batch of the most
        recent cached forward pass.  Returns ``(grads_w, grads_b)`` lists
        aligned with ``self.weights`` / ``self.biases``.
        """
        if self._cache is None:
            raise RuntimeError("backward() requires a prior forward(cache=True)")
        upstream = np.asarray(upstream, dtype=np.float64)
        c = self._cache
        if upstream.shape != (c.inputs[0].shape[0],):
            raise ValueError(
                f"upstream must have shape ({c.inputs[0].shape[0]},), got {upstream.shape}"
            )
        delta = upstream[:, None]
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        for i in reversed(range(self.n_layers)):
            grads_w[i] = c.inputs[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                da = delta @ self.weights[i].T
                if c.masks[i - 1] is not None:
                    da = da * c.masks[i - 1]
                delta = da * (c.pre_acts[i - 1] > 0.0)
        return grads_w, grads_b

    # -- flat parameter views ------------------------------------------------

    def flat_params(self):
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat_params(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise SnapshotShapeError(
                f"flat vector has {vec.shape} entries, network needs {self.n_params}"
            )
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = vec[pos : pos + b.size].copy()
            pos += b.size

    def flat_grads(self, grads):
        grads_w, grads_b = grads
        parts = []
        for gw, gb in zip(grads_w, grads_b):
            parts.append(gw.ravel())
            parts.append(gb.ravel())
        return np.concatenate(parts)

    def snapshot(self):
        return ParamSnapshot(self.layer_sizes, self.dropout_p, self.flat_params())

    def restore(self, snap):
        if tuple(snap.layer_sizes) != self.layer_sizes:
            raise SnapshotShapeError(
                f"snapshot is for layers {tuple(snap.layer_sizes)}, "
                f"network has {self.layer_sizes}"
            )
        self.set_flat_params(snap.values)


@dataclass
class AdamState:
    """State of one Adam optimizer over a flat parameter vector.

    The effective step size is ``lr * decay_gamma ** epochs_decayed``; call
    :meth:`end_epoch` once per epoch to advance the exponential schedule.
    Weight decay is the classic L2 form, added to the gradient before the
    moment updates.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_gamma: float = 1.0
    t: int = 0
    epochs_decayed: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def current_lr(self):
        return self.lr * self.decay_gamma**self.epochs_decayed

    def end_epoch(self):
        self.epochs_decayed += 1


def adam_step(model, grads, state):
    """Apply one Adam update to ``model`` in place."""
    g = model.flat_grads(grads)
    theta = model.flat_params()
    if state.weight_decay:
        g = g + state.weight_decay * theta
    if state.m is None:
        state.m = np.zeros_like(theta)
        state.v = np.zeros_like(theta)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    theta = theta - state.current_lr() * m_hat / (np.sqrt(v_hat) + state.eps)
    model.set_flat_params(theta)


# -- snapshot files ----------------------------------------------------------
#
# Layout: magic line, little-endian uint32 header length, JSON header, then
# ``members * params_per_member`` float64 values in little-endian order.


def save_snapshot_file(path, models, *, feature_mean=0.0, feature_std=1.0, meta=None):
    """Persist one or more identically shaped networks plus the input affine.

    The (mean, std) pair is the feature standardization that was applied
    before training; evaluation loads it back so raw inputs get the same
    transform.
    """
    if not models:
        raise ValueError("need at least one model to save")
    first = models[0]
    for m in models[1:]:
        if m.layer_sizes != first.layer_sizes:
            raise SnapshotShapeError("all saved members must share one architecture")
    header = {
        "layer_sizes": list(first.layer_sizes),
        "dropout_p": first.dropout_p,
        "members": len(models),
        "params_per_member": first.n_params,
        "dtype": "<f8",
        "feature_mean": float(feature_mean),
        "feature_std": float(feature_std),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for m in models:
            f.write(np.ascontiguousarray(m.flat_params(), dtype="<f8").tobytes())


def load_snapshot_file(path):
    """Load a snapshot file; returns ``(models, header_dict)``."""
    with open(path, "rb") as f:
        magic = f.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise DataFormatError(f"{path}: bad magic at byte offset 0")
        raw_len = f.read(4)
        if len(raw_len) < 4:
            raise DataFormatError(f"{path}: truncated header length at byte offset {len(SNAPSHOT_MAGIC)}")
        (hlen,) = struct.unpack("<I", raw_len)
        blob = f.read(hlen)
        if len(blob) < hlen:
            raise DataFormatError(
                f"{path}: truncated header at byte offset {len(SNAPSHOT_MAGIC) + 4 + len(blob)}"
            )
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: unreadable header ({exc})") from exc
        n_members = int(header["members"])
        per = int(header["params_per_member"])
        body = f.read(n_members * per * 8)
        expected = n_members * per * 8
        if len(body) < expected:
            raise DataFormatError(
                f"{path}: truncated parameters at byte offset "
                f"{len(SNAPSHOT_MAGIC) + 4 + hlen + len(body)} "
                f"(expected {expected} bytes)"
            )
        if f.read(1):
            raise DataFormatError(f"{path}: trailing data after parameter block")
    values = np.frombuffer(body, dtype="<f8").reshape(n_members, per)
    models = []
    for k in range(n_members):
        m = Mlp(header["layer_sizes"], dropout_p=header.get("dropout_p", 0.0))
        m.set_flat_params(values[k].astype(np.float64))
        models.append(m)
    return models, header
