"""Run configuration: a strict, file-loadable schema.

Configs are YAML or JSON documents validated into :class:`RunConfig`.
Unknown keys are rejected everywhere, and cross-field rules (threshold
ordering, split sizes, estimator requirements) are enforced at parse time so
a bad config never reaches the training loop.
"""

from __future__ import annotations

import json
import math
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import engine
from .errors import ConfigurationError
from .losses import PuLossConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GaussianSource(_Strict):
    """Synthetic two-blob data; a test split is generated separately."""

    kind: Literal["gaussians"] = "gaussians"
    n_samples: int = Field(gt=1)
    class_prior: float = Field(gt=0.0, lt=1.0, default=0.5)
    separation: float = Field(ge=0.0, default=4.0)
    dim: int = Field(ge=1, default=2)
    test_size: int = Field(ge=0, default=2000)


class IdxSource(_Strict):
    """Binary image/label files in the big-endian IDX layout."""

    kind: Literal["idx"] = "idx"
    images_path: str
    labels_path: str
    test_images_path: Optional[str] = None
    test_labels_path: Optional[str] = None
    positive_classes: list[int] = Field(min_length=1)
    subset: Optional[int] = Field(default=None, gt=0)
    bias_weights: Optional[dict[int, float]] = None


class CsvSource(_Strict):
    """A feature table with header ``f0,...,fK,label``."""

    kind: Literal["csv"] = "csv"
    path: str
    test_path: Optional[str] = None
    positive_classes: Optional[list[int]] = None
    subset: Optional[int] = Field(default=None, gt=0)


DataSource = Union[GaussianSource, IdxSource, CsvSource]


class DataSection(_Strict):
    source: DataSource = Field(discriminator="kind")
    n_labeled_positives: int = Field(gt=0)
    validation_size: int = Field(gt=0)


class NetworkSection(_Strict):
    hidden_sizes: list[int] = Field(default=[300, 300, 300, 300], min_length=1)
    dropout_p: float = Field(ge=0.0, lt=1.0, default=0.0)

    @model_validator(mode="after")
    def _positive_sizes(self):
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden_sizes}")
        return self


class OptimizerSection(_Strict):
    lr: float = Field(gt=0.0, default=1e-3)
    batch_size: int = Field(ge=2, default=128)
    weight_decay: float = Field(ge=0.0, default=0.0)
    lr_decay: float = Field(gt=0.0, le=1.0, default=0.99)


class LossSection(_Strict):
    kind: str = "nnpu"
    prior: float = Field(gt=0.0, lt=1.0)
    lam: float = Field(gt=0.0, lt=1.0, default=0.1)
    prior_grid: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check_grid(self):
        if self.prior_grid is not None:
            if not self.prior_grid:
                raise ValueError("prior_grid must not be empty when given")
            if any(not 0.0 < g < 1.0 for g in self.prior_grid):
                raise ValueError("prior_grid entries must be in (0, 1)")
        return self


_LN2 = math.log(2.0)


class SelfTrainingSection(_Strict):
    selection: Literal["uncertainty", "confidence", "none"] = "uncertainty"
    uncertainty_kind: Literal["epistemic", "aleatoric", "total"] = "epistemic"
    estimator: Literal["ensemble", "mc_dropout"] = "ensemble"
    ensemble_size: int = Field(ge=1, default=2)
    max_new_labels: int = Field(ge=0, default=1000)
    assign_threshold: float = Field(ge=0.0, le=_LN2, default=0.05)
    remove_threshold: float = Field(ge=0.0, le=_LN2, default=0.35)
    target_ratio: float = Field(gt=0.0, default=1.0)
    balance_mode: Literal["equal", "prior_ratio", "none"] = "equal"
    reinit_mode: Literal["same_weights", "fresh", "none"] = "same_weights"
    soft_labels: bool = True
    reassign_all: bool = False
    max_iterations: int = Field(ge=1, default=15)
    epochs_per_iteration: int = Field(ge=1, default=50)
    patience: int = Field(ge=0, default=3)

    @model_validator(mode="after")
    def _threshold_order(self):
        if self.assign_threshold > self.remove_threshold:
            raise ValueError(
                f"assign_threshold ({self.assign_threshold}) must not exceed "
                f"remove_threshold ({self.remove_threshold})"
            )
        return self


class EvalSection(_Strict):
    criterion: Literal["pu_auc", "accuracy"] = "pu_auc"
    ece_bins: int = Field(ge=1, default=10)
    dump_uncertainty: bool = False


class RunConfig(_Strict):
    """Top-level run description, one experiment per file."""

    name: str = "run"
    seeds: list[int] = Field(default=[0], min_length=1)
    output_dir: Optional[str] = None
    data: DataSection
    network: NetworkSection = NetworkSection()
    optimizer: OptimizerSection = OptimizerSection()
    loss: LossSection
    self_training: SelfTrainingSection = SelfTrainingSection()
    eval: EvalSection = EvalSection()

    @model_validator(mode="after")
    def _cross_checks(self):
        src = self.data.source
        if isinstance(src, GaussianSource) and self.data.validation_size >= src.n_samples:
            raise ValueError(
                f"validation_size ({self.data.validation_size}) must be smaller "
                f"than n_samples ({src.n_samples})"
            )
        if self.self_training.estimator == "mc_dropout" and self.network.dropout_p <= 0.0:
            raise ValueError("estimator mc_dropout requires network.dropout_p > 0")
        return self

    def to_settings(self) -> engine.RunSettings:
        """Convert the validated schema into the engine's plain settings."""
        return engine.RunSettings(
            loss=PuLossConfig(prior=self.loss.prior, kind=self.loss.kind, lam=self.loss.lam),
            self_training=engine.SelfTrainingConfig(
                selection=self.self_training.selection,
                uncertainty_kind=self.self_training.uncertainty_kind,
                estimator=self.self_training.estimator,
                ensemble_size=self.self_training.ensemble_size,
                max_new_labels=self.self_training.max_new_labels,
                assign_threshold=self.self_training.assign_threshold,
                remove_threshold=self.self_training.remove_threshold,
                target_ratio=self.self_training.target_ratio,
                balance_mode=self.self_training.balance_mode,
                reinit_mode=self.self_training.reinit_mode,
                soft_labels=self.self_training.soft_labels,
                reassign_all=self.self_training.reassign_all,
                max_iterations=self.self_training.max_iterations,
                epochs_per_iteration=self.self_training.epochs_per_iteration,
                patience=self.self_training.patience,
            ),
            network=engine.NetworkSettings(
                hidden_sizes=tuple(self.network.hidden_sizes),
                dropout_p=self.network.dropout_p,
            ),
            optimizer=engine.OptimizerSettings(
                lr=self.optimizer.lr,
                batch_size=self.optimizer.batch_size,
                weight_decay=self.optimizer.weight_decay,
                lr_decay=self.optimizer.lr_decay,
            ),
            criterion=self.eval.criterion,
            ece_bins=self.eval.ece_bins,
        )


def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{where}: {err['msg']}")
    return "; ".join(lines)


def validate_config_dict(raw: dict) -> RunConfig:
    """Validate an already-parsed mapping into a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config root must be a mapping, got {type(raw).__name__}")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc)) from exc


def parse_config(path: str) -> RunConfig:
    """Load and validate a YAML or JSON config file."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.endswith(".json"):
            raw = json.loads(text)
        else:
            raw = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"{path}: not valid YAML/JSON: {exc}") from exc
    return validate_config_dict(raw)


def set_by_path(raw: dict, dotted: str, value):
    """Set ``raw["a"]["b"] = value`` for ``dotted == "a.b"`` (for sweeps)."""
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = {}
            node[p] = nxt
        if not isinstance(nxt, dict):
            raise ConfigurationError(f"cannot descend into '{dotted}' at '{p}'")
        node = nxt
    node[parts[-1]] = value
    return raw
