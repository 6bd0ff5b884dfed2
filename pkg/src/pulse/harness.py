"""Experiment harness: configs in, artifact directories out.

An *experiment* is one config executed across its list of seeds.  Each seed
gets its own directory with the epoch log, iteration log, evaluation report,
and the final model snapshot; the experiment directory gets the across-seed
aggregate.  All per-seed randomness (data generation, PU-ification, splits,
training) descends from that seed alone, so any seed can be reproduced in
isolation.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import engine, seeding
from .config import RunConfig, GaussianSource, IdxSource, CsvSource, validate_config_dict, set_by_path
from .data import (
    BiasSpec,
    SplitSpec,
    binarize,
    load_csv,
    load_idx,
    make_gaussians,
    pu_ify,
    split,
    standardize,
)
from .errors import ConfigurationError
from .metrics import evaluate
from .uncertainty import Ensemble

OUTPUT_ROOT_ENV = "PULSE_OUTPUT_ROOT"


def _seed_int(seed, *path):
    return int(seeding.seed_sequence(seed, *path).generate_state(1)[0])


def _load_source(source, *, train=True):
    """Read the raw labeled data (and its original multiclass labels)."""
    if isinstance(source, GaussianSource):
        raise TypeError("gaussian sources are generated per seed, not loaded")
    if isinstance(source, IdxSource):
        if train:
            return load_idx(source.images_path, source.labels_path)
        if source.test_images_path is None:
            return None
        return load_idx(source.test_images_path, source.test_labels_path)
    if isinstance(source, CsvSource):
        if train:
            return load_csv(source.path)
        return load_csv(source.test_path) if source.test_path else None
    raise TypeError(f"unsupported source {type(source).__name__}")


def build_data(data_cfg, seed):
    """Materialize (train PU, val PU, test or None) for one seed.

    Features are standardized by the train split's global statistics; the
    (mean, std) pair is returned for snapshot export.
    """
    source = data_cfg.source
    if isinstance(source, GaussianSource):
        full = make_gaussians(
            source.n_samples, source.class_prior, source.separation, source.dim,
            seed=_seed_int(seed, "data"),
        )
        test = (
            make_gaussians(
                source.test_size, source.class_prior, source.separation, source.dim,
                seed=_seed_int(seed, "data", "test"),
            )
            if source.test_size
            else None
        )
        pu = pu_ify(full, data_cfg.n_labeled_positives, seed=_seed_int(seed, "pu"))
    else:
        raw = _load_source(source, train=True)
        if source.subset and source.subset < raw.n:
            rng = np.random.default_rng(_seed_int(seed, "subset"))
            raw = raw.subset(np.sort(rng.choice(raw.n, size=source.subset, replace=False)))
        binary = (
            binarize(raw, source.positive_classes)
            if source.positive_classes is not None
            else _require_binary(raw)
        )
        bias = None
        if isinstance(source, IdxSource) and source.bias_weights:
            bias = BiasSpec(subgroup_ids=raw.labels, weights=source.bias_weights)
        pu = pu_ify(binary, data_cfg.n_labeled_positives, seed=_seed_int(seed, "pu"), bias=bias)
        test_raw = _load_source(source, train=False)
        test = None
        if test_raw is not None:
            test = (
                binarize(test_raw, source.positive_classes)
                if source.positive_classes is not None
                else _require_binary(test_raw)
            )
    train, val = split(pu, SplitSpec(data_cfg.validation_size, seed=_seed_int(seed, "split")))
    if test is not None:
        train, val, test, stats = standardize(train, val, test)
    else:
        train, val, stats = standardize(train, val)
    return train, val, test, stats


def _require_binary(ds):
    if not np.all((ds.labels == 0) | (ds.labels == 1)):
        raise ConfigurationError(
            "data has non-binary labels; set positive_classes to binarize"
        )
    return ds


def resolve_output_root(config_output_dir=None, cli_output_dir=None):
    """Priority: explicit CLI/API value, then config, then env var, then ./runs."""
    return (
        cli_output_dir
        or config_output_dir
        or os.environ.get(OUTPUT_ROOT_ENV)
        or "runs"
    )


def _float_or_none(x):
    return None if x is None else float(x)


def run_one_seed(config: RunConfig, seed: int, seed_dir: str, resume: bool = False) -> dict:
    """Train one seed end-to-end and write its artifacts; returns a summary."""
    os.makedirs(seed_dir, exist_ok=True)
    settings = config.to_settings()
    train, val, test, stats = build_data(config.data, seed)
    if config.loss.prior_grid:
        best_prior, grid_scores = engine.prior_grid_search(
            train, val, settings, config.loss.prior_grid, seed=seed
        )
        settings = replace(settings, loss=replace(settings.loss, prior=best_prior))
        with open(os.path.join(seed_dir, "prior_search.json"), "w") as f:
            json.dump({"best_prior": best_prior, "scores": grid_scores}, f, indent=2)
    result = engine.run(
        train, val, settings, seed=seed, test=test, run_dir=seed_dir, resume=resume
    )
    result.runlog.epochs_to_csv(os.path.join(seed_dir, "epochs.csv"))
    result.runlog.iterations_to_jsonl(os.path.join(seed_dir, "iterations.jsonl"))
    _write_curves(result.runlog, os.path.join(seed_dir, "curves"))
    result.ensemble.save(
        os.path.join(seed_dir, "model.snapshot"),
        feature_mean=stats[0], feature_std=stats[1],
        meta={"seed": seed, "prior": settings.loss.prior, "name": config.name},
    )
    if config.eval.dump_uncertainty:
        _dump_uncertainty(result, os.path.join(seed_dir, "uncertainty.csv"))
    summary = {
        "seed": seed,
        "val_best": float(result.val_best),
        "n_pseudo_labeled": int(result.dataset.n_l),
        "iterations_run": len(result.runlog.iterations),
        "pl_accuracy": _float_or_none(result.pl_accuracy),
        "pl_nll": _float_or_none(result.pl_nll),
    }
    if result.test_report is not None:
        summary["test"] = result.test_report.to_dict()
    with open(os.path.join(seed_dir, "eval.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def _write_curves(runlog, curves_dir):
    """Plot-ready two-column files: one quantity against the global epoch."""
    os.makedirs(curves_dir, exist_ok=True)
    columns = {
        "loss.csv": ("loss", lambda r: r.loss),
        "val_score.csv": ("val_score", lambda r: r.val_score),
        "val_ece.csv": ("val_ece", lambda r: r.val_ece),
    }
    for fname, (label, pick) in columns.items():
        with open(os.path.join(curves_dir, fname), "w", newline="") as f:
            f.write(f"epoch,{label}\n")
            for i, row in enumerate(runlog.epochs, start=1):
                f.write(f"{i},{pick(row)!r}\n")


def _dump_uncertainty(result, path):
    from .uncertainty import decompose, predict_members

    ds = result.dataset
    probs, logits = predict_members(result.ensemble, ds.features)
    report = decompose(probs, logits)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "p_mean", "aleatoric", "epistemic", "total"])
        for i in range(ds.n):
            writer.writerow(
                [i, repr(report.p_mean[i]), repr(report.aleatoric[i]),
                 repr(report.epistemic[i]), repr(report.total[i])]
            )


def aggregate_seed_summaries(summaries: list[dict]) -> dict:
    """Mean and standard error (std/sqrt(n), ddof=1) per metric over seeds."""

    def stats(values):
        arr = np.array([v for v in values if v is not None], dtype=np.float64)
        if arr.size == 0:
            return None
        stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
        return {"mean": float(arr.mean()), "stderr": stderr, "values": arr.tolist()}

    out = {
        "n_seeds": len(summaries),
        "val_best": stats([s["val_best"] for s in summaries]),
        "pl_accuracy": stats([s.get("pl_accuracy") for s in summaries]),
        "n_pseudo_labeled": stats([s["n_pseudo_labeled"] for s in summaries]),
    }
    if any("test" in s for s in summaries):
        for metric in ("accuracy", "auc", "ece", "nll"):
            out[f"test_{metric}"] = stats(
                [s["test"][metric] for s in summaries if "test" in s]
            )
    return out


def run_experiment(
    config: RunConfig,
    *,
    output_dir: str = None,
    jobs: int = 1,
    seed_override: int = None,
    resume: bool = False,
) -> dict:
    """Run every seed of one config; returns the experiment summary."""
    root = resolve_output_root(config.output_dir, output_dir)
    exp_dir = os.path.join(root, config.name)
    os.makedirs(exp_dir, exist_ok=True)
    seeds = [seed_override] if seed_override is not None else list(config.seeds)

    def one(seed):
        return run_one_seed(config, seed, os.path.join(exp_dir, f"seed_{seed}"), resume=resume)

    if jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(one, seeds))
    else:
        summaries = [one(s) for s in seeds]

    experiment = {
        "name": config.name,
        "output_dir": exp_dir,
        "seeds": seeds,
        "per_seed": summaries,
        "aggregate": aggregate_seed_summaries(summaries),
    }
    with open(os.path.join(exp_dir, "experiment.json"), "w") as f:
        json.dump(experiment, f, indent=2, sort_keys=True)
    return experiment


def run_sweep(
    config: RunConfig, param: str, values: list, *, output_dir: str = None, jobs: int = 1
) -> dict:
    """Re-run the experiment once per value of one dotted config key.

    ``param`` addresses the config mapping (e.g. ``loss.prior`` or
    ``self_training.ensemble_size``); each run lands in its own
    subdirectory and the collected aggregates are tabulated in
    ``sweep.csv``.
    """
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    root = resolve_output_root(config.output_dir, output_dir)
    sweep_name = f"{config.name}-sweep-{param.replace('.', '-')}"
    sweep_dir = os.path.join(root, sweep_name)
    os.makedirs(sweep_dir, exist_ok=True)

    rows = []
    for value in values:
        raw = config.model_dump(exclude_none=True)
        set_by_path(raw, param, value)
        raw["name"] = f"{config.name}-{param.split('.')[-1]}-{value}"
        raw["output_dir"] = sweep_dir
        sub = validate_config_dict(raw)
        experiment = run_experiment(sub, jobs=jobs)
        rows.append({"value": value, "experiment": experiment})

    table_path = os.path.join(sweep_dir, "sweep.csv")
    metrics = sorted(
        {k for row in rows for k, v in row["experiment"]["aggregate"].items()
         if isinstance(v, dict) and v is not None}
    )
    with open(table_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([param] + [f"{m}_{s}" for m in metrics for s in ("mean", "stderr")])
        for row in rows:
            agg = row["experiment"]["aggregate"]
            line = [row["value"]]
            for m in metrics:
                cell = agg.get(m)
                line += [cell["mean"], cell["stderr"]] if cell else ["", ""]
            writer.writerow(line)
    summary = {"param": param, "output_dir": sweep_dir, "table": table_path, "runs": rows}
    with open(os.path.join(sweep_dir, "sweep.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def evaluate_snapshot(snapshot_path: str, data) -> dict:
    """Score a saved model on a ground-truth dataset.

    ``data`` is a :class:`~pulse.data.LabeledDataset` with binary labels.
    The snapshot's stored feature standardization is applied before
    prediction.
    """
    ensemble, header = Ensemble.load(snapshot_path)
    if data.dim != ensemble.members[0].layer_sizes[0]:
        raise ConfigurationError(
            f"snapshot expects {ensemble.members[0].layer_sizes[0]} features, "
            f"data has {data.dim}"
        )
    if not np.all((data.labels == 0) | (data.labels == 1)):
        raise ConfigurationError("evaluation data must have 0/1 labels")
    feats = (data.features - header["feature_mean"]) / header["feature_std"]
    probs = ensemble.predict_proba(feats)
    report = evaluate(probs, data.labels)
    return report.to_dict()
