"""Learning binary classifiers from positive and unlabeled data.

The package trains deep ensembles with non-negative PU risk estimation and
grows the labeled set by uncertainty-ranked pseudo-labeling: unlabeled
samples the ensemble agrees on are promoted to soft labels, pseudo-labels
the ensemble starts doubting are demoted back.  A small HTTP service and a
CLI wrap the experiment harness.
"""

__version__ = "0.1.0"

from .data import (
    BiasSpec,
    LabeledDataset,
    PUDataset,
    SplitSpec,
    binarize,
    load_csv,
    load_idx,
    save_csv,
    make_gaussians,
    pu_ify,
    split,
    standardize,
)
from .engine import (
    RunSettings,
    SelfTrainingConfig,
    NetworkSettings,
    OptimizerSettings,
    RunResult,
    prior_grid_search,
    run,
)
from .errors import (
    ConfigurationError,
    DataFormatError,
    NumericFailure,
    PulseError,
    SnapshotShapeError,
)
from .losses import PuLossConfig, nnpu_risk, pseudo_label_ce, sigmoid_loss, upu_risk
from .metrics import EvalReport, accuracy, ece, evaluate, nll, pu_auc
from .net import AdamState, Mlp, ParamSnapshot, adam_step, sigmoid
from .uncertainty import Ensemble, UncertaintyReport, decompose, predict_members

__all__ = [
    "AdamState",
    "BiasSpec",
    "ConfigurationError",
    "DataFormatError",
    "Ensemble",
    "EvalReport",
    "LabeledDataset",
    "Mlp",
    "NetworkSettings",
    "NumericFailure",
    "OptimizerSettings",
    "PUDataset",
    "ParamSnapshot",
    "PuLossConfig",
    "PulseError",
    "RunResult",
    "RunSettings",
    "SelfTrainingConfig",
    "SnapshotShapeError",
    "SplitSpec",
    "UncertaintyReport",
    "accuracy",
    "adam_step",
    "binarize",
    "decompose",
    "ece",
    "evaluate",
    "load_csv",
    "load_idx",
    "save_csv",
    "make_gaussians",
    "nll",
    "nnpu_risk",
    "predict_members",
    "prior_grid_search",
    "pseudo_label_ce",
    "pu_auc",
    "pu_ify",
    "run",
    "sigmoid",
    "sigmoid_loss",
    "split",
    "standardize",
    "upu_risk",
]
