"""HTTP service for running a live forced-choice study.

Serves candidate renderings frame by frame, records which one each user
picks, launches training jobs over the recorded choices, and exposes the
resulting models plus before/after previews.

Everything persists as plain files under one data directory:

    sessions/<session_id>/session.json   identity and seed
    sessions/<session_id>/manifest.json  scenario layout (pixels regenerate)
    sessions/<session_id>/choices.jsonl  append-only choice log
    models/<model_id>.json (+ .curves.csv)
    jobs/<job_id>.json

The choice log is the source of truth: a restarted server replays the
logs and resumes every session at the exact frame it stopped at.

Candidates are shown in a per-frame seeded random order so a picky pixel
position can't bias selections; the log always stores the canonical
candidate index, never the display position.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware

from .image import DisplayWindow, apply_window, save_image
from .loss import ChoiceRecord, LossVariant, read_choice_log
from .pyramid import DEFAULT_BOUNDS, PyramidParams, denoise
from .scenario import (
    DEFAULT_CENTER,
    DEFAULT_Q,
    DEFAULT_SPREAD,
    ParamSampler,
    ScenarioResolver,
    build_manifest,
    load_manifest,
    save_manifest,
)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

_SALT_DISPLAY = 29
IMAGE_SUFFIXES = (".png", ".pgm")

JOB_QUEUED = "queued"
JOB_RUNNING = "running"
JOB_DONE = "done"
JOB_FAILED = "failed"


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def display_permutation(session_key: str, seed: int, frame_index: int, q: int) -> np.ndarray:
    """Deterministic candidate display order for one (session, frame)."""
    ss = np.random.SeedSequence(
        [int(seed), _SALT_DISPLAY, int(frame_index), _stable_hash(session_key)]
    )
    return np.random.default_rng(ss).permutation(q)


class StudySession:
    """One user's pass over the scenario list, backed by files on disk."""

    def __init__(self, session_id: str, user_id: str, seed: int, directory: Path):
        self.session_id = session_id
        self.user_id = user_id
        self.seed = seed
        self.directory = directory
        self.manifest = None
        self.resolver = None
        self.records: list[ChoiceRecord] = []
        self.lock = threading.Lock()

    @property
    def cursor(self) -> int:
        return len(self.records)

    @property
    def total(self) -> int:
        return len(self.manifest.scenarios)

    @property
    def done(self) -> bool:
        return self.cursor >= self.total

    def progress(self) -> dict:
        return {"answered": self.cursor, "total": self.total}

    def frame_index(self, frame_id: str) -> int:
        for i, ref in enumerate(self.manifest.scenarios):
            if ref.frame_id == frame_id:
                return i
        raise KeyError(frame_id)

    def permutation(self, frame_index: int) -> np.ndarray:
        return display_permutation(
            self.session_id, self.seed, frame_index, self.manifest.q
        )

    def append_choice(self, record: ChoiceRecord) -> None:
        """Durably append one choice: written and fsynced before returning."""
        with open(self.directory / "choices.jsonl", "a", encoding="utf-8") as fh:
            fh.write(record.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.records.append(record)


@dataclass
class TrainingJob:
    """Status of one asynchronous training run."""

    job_id: str
    session_id: str
    variant: LossVariant
    status: str = JOB_QUEUED
    epoch: int = 0
    total_epochs: int = 0
    loss: float | None = None
    model_id: str | None = None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "session_id": self.session_id,
            "variant": self.variant.value,
            "status": self.status,
            "epoch": self.epoch,
            "total_epochs": self.total_epochs,
            "loss": self.loss,
            "model_id": self.model_id,
            "error": self.error,
        }


def _list_images(images_dir: Path) -> list[Path]:
    if not images_dir.is_dir():
        raise HTTPException(422, f"image directory {images_dir} does not exist")
    paths = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise HTTPException(422, f"no images found in {images_dir}")
    return paths


def _parse_sampler(config: dict) -> ParamSampler:
    center = DEFAULT_CENTER
    if "center_sigmas" in config or "center_epsilons" in config:
        center = PyramidParams(
            tuple(config.get("center_sigmas", DEFAULT_CENTER.sigmas)),
            tuple(config.get("center_epsilons", DEFAULT_CENTER.epsilons)),
        )
    spread = float(config.get("spread", DEFAULT_SPREAD))
    return ParamSampler(center=center, spread=spread, bounds=DEFAULT_BOUNDS)


def create_app(data_dir, master_seed: int = 0) -> FastAPI:
    """Build the study server rooted at `data_dir`.

    Existing sessions, models, and jobs found under the directory are
    loaded back; unfinished jobs from a previous process are marked
    failed (their worker thread is gone).
    """
    data_dir = Path(data_dir)
    sessions_dir = data_dir / "sessions"
    models_dir = data_dir / "models"
    jobs_dir = data_dir / "jobs"
    for d in (sessions_dir, models_dir, jobs_dir):
        d.mkdir(parents=True, exist_ok=True)

    app = FastAPI(title="prefdn study service")
    # The browser front-end may be statically hosted on a different origin.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, StudySession] = {}
    frame_owner: dict[str, str] = {}
    jobs: dict[str, TrainingJob] = {}
    registry_lock = threading.Lock()

    def _save_job(job: TrainingJob) -> None:
        path = jobs_dir / f"{job.job_id}.json"
        path.write_text(json.dumps(job.to_json_dict(), indent=2) + "\n", "utf-8")

    def _register(session: StudySession) -> None:
        sessions[session.session_id] = session
        for fid in session.manifest.frame_ids():
            frame_owner[fid] = session.session_id

    def _restore_state() -> None:
        for sdir in sorted(sessions_dir.iterdir()) if sessions_dir.is_dir() else []:
            meta_path = sdir / "session.json"
            manifest_path = sdir / "manifest.json"
            if not (meta_path.is_file() and manifest_path.is_file()):
                continue
            meta = json.loads(meta_path.read_text("utf-8"))
            session = StudySession(
                meta["session_id"], meta["user_id"], int(meta["seed"]), sdir
            )
            session.manifest = load_manifest(manifest_path)
            session.resolver = ScenarioResolver(session.manifest)
            log_path = sdir / "choices.jsonl"
            if log_path.is_file():
                session.records = read_choice_log(log_path)
            _register(session)
        for jpath in sorted(jobs_dir.glob("*.json")):
            obj = json.loads(jpath.read_text("utf-8"))
            job = TrainingJob(
                job_id=obj["job_id"],
                session_id=obj["session_id"],
                variant=LossVariant.parse(obj["variant"]),
                status=obj["status"],
                epoch=int(obj.get("epoch", 0)),
                total_epochs=int(obj.get("total_epochs", 0)),
                loss=obj.get("loss"),
                model_id=obj.get("model_id"),
                error=obj.get("error"),
            )
            if job.status in (JOB_QUEUED, JOB_RUNNING):
                job.status = JOB_FAILED
                job.error = "interrupted by server restart"
                _save_job(job)
            jobs[job.job_id] = job

    _restore_state()

    def _session_or_404(session_id: str) -> StudySession:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return session

    def _owner_of_frame(frame_id: str) -> StudySession:
        sid = frame_owner.get(frame_id)
        if sid is None:
            raise HTTPException(404, f"unknown frame {frame_id!r}")
        return sessions[sid]

    def _png(img) -> Response:
        return Response(content=save_image(img, "png-gray"), media_type="image/png")

    @app.post("/api/sessions")
    def create_session(payload: dict = Body(...)):
        user_id = payload.get("user_id")
        if not isinstance(user_id, str) or not user_id:
            raise HTTPException(422, "user_id (non-empty string) is required")
        config = payload.get("config") or {}
        if not isinstance(config, dict):
            raise HTTPException(422, "config must be an object")
        images_dir = Path(config.get("images_dir", data_dir / "images"))
        image_paths = [p.resolve() for p in _list_images(images_dir)]
        try:
            sampler = _parse_sampler(config)
            q = int(config.get("q", DEFAULT_Q))
            per_image = int(config.get("scenarios_per_image", 4))
            seed = int(config.get("seed", master_seed))
            session_id = uuid.uuid4().hex[:12]
            manifest = build_manifest(
                image_paths,
                per_image,
                sampler,
                q=q,
                master_seed=seed,
                frame_prefix=session_id,
            )
        except (ValueError, TypeError) as exc:
            raise HTTPException(422, str(exc)) from None
        sdir = sessions_dir / session_id
        sdir.mkdir(parents=True)
        session = StudySession(session_id, user_id, seed, sdir)
        session.manifest = manifest
        session.resolver = ScenarioResolver(manifest)
        save_manifest(manifest, sdir / "manifest.json")
        meta = {
            "session_id": session_id,
            "user_id": user_id,
            "seed": seed,
            "created_ts": time.time(),
        }
        (sdir / "session.json").write_text(json.dumps(meta, indent=2) + "\n", "utf-8")
        with registry_lock:
            _register(session)
        return {"session_id": session_id}

    @app.get("/api/sessions/{session_id}")
    def session_info(session_id: str):
        session = _session_or_404(session_id)
        return {
            "session_id": session.session_id,
            "user_id": session.user_id,
            "q": session.manifest.q,
            "progress": session.progress(),
            "done": session.done,
            "frame_ids": session.manifest.frame_ids(),
        }

    @app.get("/api/sessions/{session_id}/next")
    def next_frame(session_id: str):
        session = _session_or_404(session_id)
        with session.lock:
            if session.done:
                return {"done": True, "progress": session.progress()}
            index = session.cursor
            ref = session.manifest.scenarios[index]
            q = session.manifest.q
            urls = [f"/api/images/{ref.frame_id}/{pos}" for pos in range(q)]
            return {
                "frame_id": ref.frame_id,
                "images": urls,
                "progress": session.progress(),
            }

    @app.post("/api/sessions/{session_id}/choice")
    def record_choice(session_id: str, payload: dict = Body(...)):
        session = _session_or_404(session_id)
        frame_id = payload.get("frame_id")
        position = payload.get("position")
        if not isinstance(frame_id, str):
            raise HTTPException(422, "frame_id (string) is required")
        if not isinstance(position, int) or isinstance(position, bool):
            raise HTTPException(422, "position (integer) is required")
        with session.lock:
            if session.done:
                raise HTTPException(409, "session already complete")
            index = session.cursor
            current = session.manifest.scenarios[index]
            if frame_id != current.frame_id:
                raise HTTPException(
                    409,
                    f"frame {frame_id!r} is not the current frame "
                    f"({current.frame_id!r})",
                )
            q = session.manifest.q
            if not 0 <= position < q:
                raise HTTPException(422, f"position {position} outside [0, {q})")
            canonical = int(session.permutation(index)[position])
            record = ChoiceRecord(
                frame_id=frame_id,
                selected=canonical,
                num_candidates=q,
                timestamp=time.time(),
                user_id=session.user_id,
            )
            session.append_choice(record)
            return {"progress": session.progress()}

    @app.get("/api/images/{frame_id}/{position}")
    def candidate_image(frame_id: str, position: int):
        session = _owner_of_frame(frame_id)
        cset = session.resolver(frame_id)
        if not 0 <= position < cset.num_candidates:
            raise HTTPException(404, f"position {position} out of range")
        canonical = int(session.permutation(session.frame_index(frame_id))[position])
        return _png(cset.candidates[canonical])

    @app.get("/api/frames/{frame_id}")
    def frame_image(frame_id: str):
        session = _owner_of_frame(frame_id)
        return _png(session.resolver(frame_id).source)

    @app.post("/api/sessions/{session_id}/train")
    def start_training(session_id: str, payload: dict | None = Body(default=None)):
        session = _session_or_404(session_id)
        payload = payload or {}
        try:
            variant = LossVariant.parse(payload.get("variant", "hybrid"))
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from None
        overrides = payload.get("config") or {}
        if not isinstance(overrides, dict):
            raise HTTPException(422, "config must be an object")
        if not session.records:
            raise HTTPException(422, "session has no recorded choices yet")
        try:
            config = TrainConfig(
                epochs=int(overrides.get("epochs", TrainConfig.epochs)),
                lr=float(overrides.get("lr", TrainConfig.lr)),
                batch_size=int(overrides.get("batch_size", TrainConfig.batch_size)),
                variant=variant,
                seed=int(overrides.get("seed", session.seed)),
                log_every=1,
            )
        except Exception as exc:
            raise HTTPException(422, str(exc)) from None
        with registry_lock:
            for other in jobs.values():
                if other.session_id == session_id and other.status in (
                    JOB_QUEUED,
                    JOB_RUNNING,
                ):
                    raise HTTPException(
                        409, f"job {other.job_id} already running for this session"
                    )
            job = TrainingJob(
                job_id=uuid.uuid4().hex[:12],
                session_id=session_id,
                variant=variant,
                total_epochs=config.epochs,
            )
            jobs[job.job_id] = job
            _save_job(job)
        records = list(session.records)

        def work():
            job.status = JOB_RUNNING
            _save_job(job)

            def on_progress(epoch, loss):
                job.epoch = epoch
                job.loss = loss

            try:
                checkpoint = train(
                    records,
                    session.resolver,
                    config,
                    user_id=session.user_id,
                    progress=on_progress,
                )
                model_id = f"m{job.job_id}"
                save_checkpoint(checkpoint, models_dir / f"{model_id}.json")
                job.model_id = model_id
                job.status = JOB_DONE
            except Exception as exc:  # propagate as a failed job, not a crash
                job.status = JOB_FAILED
                job.error = f"{type(exc).__name__}: {exc}"
            _save_job(job)

        threading.Thread(target=work, name=f"train-{job.job_id}", daemon=True).start()
        return {"job_id": job.job_id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        out = {"status": job.status, "epoch": job.epoch, "loss": job.loss}
        if job.total_epochs:
            out["total_epochs"] = job.total_epochs
        if job.model_id is not None:
            out["model_id"] = job.model_id
        if job.error is not None:
            out["error"] = job.error
        return out

    def _model_path(model_id: str) -> Path:
        path = models_dir / f"{model_id}.json"
        if not path.is_file():
            raise HTTPException(404, f"unknown model {model_id!r}")
        return path

    @app.get("/api/models/{model_id}")
    def model_json(model_id: str):
        payload = json.loads(_model_path(model_id).read_text("utf-8"))
        payload["model_id"] = model_id
        return payload

    @app.get("/api/models/{model_id}/preview/{frame_id}")
    def model_preview(
        model_id: str,
        frame_id: str,
        wc: float | None = None,
        ww: float | None = None,
    ):
        checkpoint = load_checkpoint(_model_path(model_id))
        session = _owner_of_frame(frame_id)
        cset = session.resolver(frame_id)
        out = denoise(cset.source, checkpoint.params)
        if wc is not None or ww is not None:
            try:
                window = DisplayWindow(
                    center=0.5 if wc is None else float(wc),
                    width=1.0 if ww is None else float(ww),
                )
            except ValueError as exc:
                raise HTTPException(422, str(exc)) from None
            out = apply_window(out, window)
        return _png(out)

    return app
