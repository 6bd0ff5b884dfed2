import numpy as np
import pytest

from pulse import (
    NetworkSettings,
    OptimizerSettings,
    PuLossConfig,
    RunSettings,
    SelfTrainingConfig,
    SplitSpec,
    make_gaussians,
    pu_ify,
    split,
    standardize,
)


def gaussian_pu(n=600, n_labeled=40, val_size=200, seed=3, separation=4.0, prior=0.5,
                test_size=0):
    """Small standardized PU train/val (and optional test) splits for loop tests."""
    full = make_gaussians(n, prior, separation, 2, seed=seed)
    pu = pu_ify(full, n_labeled, seed=seed + 1)
    train, val = split(pu, SplitSpec(val_size, seed=seed + 2))
    if test_size:
        test = make_gaussians(test_size, prior, separation, 2, seed=seed + 7)
        return standardize(train, val, test)[:3]
    return standardize(train, val)[:2]


def tiny_settings(**overrides):
    """Fast-but-real settings for a small 2-d problem."""
    st = dict(
        selection="uncertainty",
        uncertainty_kind="epistemic",
        estimator="ensemble",
        ensemble_size=2,
        max_new_labels=50,
        assign_threshold=0.05,
        remove_threshold=0.35,
        target_ratio=1.0,
        balance_mode="equal",
        reinit_mode="same_weights",
        soft_labels=True,
        reassign_all=False,
        max_iterations=2,
        epochs_per_iteration=5,
        patience=3,
    )
    loss = dict(prior=0.5, kind="nnpu", lam=0.1)
    net = dict(hidden_sizes=(16, 16), dropout_p=0.0)
    opt = dict(lr=2e-3, batch_size=64, weight_decay=0.0, lr_decay=0.99)
    top = dict(criterion="pu_auc", ece_bins=10)
    for key, value in overrides.items():
        for section in (st, loss, net, opt, top):
            if key in section:
                section[key] = value
                break
        else:
            raise KeyError(key)
    return RunSettings(
        loss=PuLossConfig(**loss),
        self_training=SelfTrainingConfig(**st),
        network=NetworkSettings(**net),
        optimizer=OptimizerSettings(**opt),
        **top,
    )


def tiny_config_dict(**overrides):
    """A schema-valid config mapping that trains in well under a second."""
    raw = {
        "name": "tiny",
        "seeds": [0],
        "data": {
            "source": {"kind": "gaussians", "n_samples": 240, "test_size": 120},
            "n_labeled_positives": 20,
            "validation_size": 60,
        },
        "loss": {"prior": 0.5},
        "network": {"hidden_sizes": [8, 8]},
        "optimizer": {"batch_size": 64},
        "self_training": {
            "max_new_labels": 20,
            "max_iterations": 2,
            "epochs_per_iteration": 3,
        },
    }
    for key, value in overrides.items():
        section = raw
        *parents, leaf = key.split(".")
        for p in parents:
            section = section.setdefault(p, {})
        section[leaf] = value
    return raw


@pytest.fixture
def rng():
    return np.random.default_rng(42)
