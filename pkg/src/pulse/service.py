"""HTTP front of the toolkit: submit training jobs, poll them, evaluate.

Training and sweeps run as background jobs (threads) because they take
minutes; submission returns immediately with a job id to poll.  Evaluation
and config validation are synchronous.  The CLI talks to this app — either
over the network or mounted in-process.
"""

from __future__ import annotations

import threading
import traceback
import uuid
from datetime import datetime, timezone
from typing import Literal, Optional, Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .config import RunConfig, validate_config_dict
from .data import load_csv, load_idx, binarize
from .errors import ConfigurationError, DataFormatError, NumericFailure
from .harness import evaluate_snapshot, run_experiment, run_sweep


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig
    seed: Optional[int] = None
    jobs: int = Field(ge=1, default=1)
    resume: bool = False
    output_dir: Optional[str] = None


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig
    param: str
    values: list[Union[int, float, str]] = Field(min_length=1)
    jobs: int = Field(ge=1, default=1)
    output_dir: Optional[str] = None


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    snapshot_path: str
    csv_path: Optional[str] = None
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    positive_classes: Optional[list[int]] = None


class JobInfo(BaseModel):
    job_id: str
    kind: Literal["train", "sweep"]
    state: Literal["queued", "running", "succeeded", "failed"]
    submitted_at: str
    finished_at: Optional[str] = None
    error: Optional[str] = None
    error_kind: Optional[Literal["config", "data", "numeric", "internal"]] = None
    summary: Optional[dict] = None


class ValidationVerdict(BaseModel):
    valid: bool
    detail: Optional[str] = None


def _now():
    return datetime.now(timezone.utc).isoformat()


class JobManager:
    """In-memory registry of background jobs, one thread per job."""

    def __init__(self):
        self._jobs: dict[str, JobInfo] = {}
        self._lock = threading.Lock()

    def submit(self, kind, fn) -> JobInfo:
        job_id = uuid.uuid4().hex[:12]
        info = JobInfo(job_id=job_id, kind=kind, state="queued", submitted_at=_now())
        with self._lock:
            self._jobs[job_id] = info

        def worker():
            self._update(job_id, state="running")
            try:
                summary = fn()
            except (ConfigurationError,) as exc:
                self._update(job_id, state="failed", error=str(exc),
                             error_kind="config", finished_at=_now())
            except DataFormatError as exc:
                self._update(job_id, state="failed", error=str(exc),
                             error_kind="data", finished_at=_now())
            except NumericFailure as exc:
                self._update(job_id, state="failed", error=str(exc),
                             error_kind="numeric", finished_at=_now())
            except Exception:
                self._update(job_id, state="failed", error=traceback.format_exc(),
                             error_kind="internal", finished_at=_now())
            else:
                self._update(job_id, state="succeeded", summary=summary,
                             finished_at=_now())

        thread = threading.Thread(target=worker, name=f"job-{job_id}", daemon=True)
        thread.start()
        return info

    def _update(self, job_id, **changes):
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=changes)

    def get(self, job_id) -> JobInfo:
        with self._lock:
            info = self._jobs.get(job_id)
        if info is None:
            raise KeyError(job_id)
        return info

    def all(self) -> list[JobInfo]:
        with self._lock:
            return sorted(self._jobs.values(), key=lambda j: j.submitted_at)


def create_app() -> FastAPI:
    app = FastAPI(title="pulse", version=__version__)
    manager = JobManager()
    app.state.jobs = manager

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/config/validate", response_model=ValidationVerdict)
    def validate(raw: dict):
        try:
            validate_config_dict(raw)
        except ConfigurationError as exc:
            return ValidationVerdict(valid=False, detail=str(exc))
        return ValidationVerdict(valid=True)

    @app.post("/jobs/train", response_model=JobInfo, status_code=202)
    def submit_train(req: TrainRequest):
        return manager.submit(
            "train",
            lambda: run_experiment(
                req.config, output_dir=req.output_dir, jobs=req.jobs,
                seed_override=req.seed, resume=req.resume,
            ),
        )

    @app.post("/jobs/sweep", response_model=JobInfo, status_code=202)
    def submit_sweep(req: SweepRequest):
        return manager.submit(
            "sweep",
            lambda: run_sweep(
                req.config, req.param, req.values,
                output_dir=req.output_dir, jobs=req.jobs,
            ),
        )

    @app.get("/jobs", response_model=list[JobInfo])
    def list_jobs():
        return manager.all()

    @app.get("/jobs/{job_id}", response_model=JobInfo)
    def get_job(job_id: str):
        try:
            return manager.get(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}") from None

    @app.get("/jobs/{job_id}/result")
    def job_result(job_id: str):
        try:
            info = manager.get(job_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}") from None
        if info.state != "succeeded":
            raise HTTPException(
                status_code=409, detail=f"job {job_id} is {info.state}, no result available"
            )
        return info.summary

    @app.post("/eval")
    def eval_snapshot(req: EvalRequest):
        try:
            if req.csv_path:
                data = load_csv(req.csv_path)
            elif req.images_path and req.labels_path:
                data = load_idx(req.images_path, req.labels_path)
            else:
                raise ConfigurationError(
                    "eval needs csv_path or an images_path/labels_path pair"
                )
            if req.positive_classes is not None:
                data = binarize(data, req.positive_classes)
            return evaluate_snapshot(req.snapshot_path, data)
        except (ConfigurationError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=f"config: {exc}") from exc
        except DataFormatError as exc:
            raise HTTPException(status_code=400, detail=f"format: {exc}") from exc

    return app


app = create_app()
