"""HTTP interface for the interactive segmentation loop.

One job per slice-under-annotation.  State machine:

    created -> fields_ready -> (running <-> paused) -> converged | failed

Prompts are mutable in created, fields_ready and paused; an edit
recomputes the distance factor and bumps the job's field version, and a
subsequent run continues from the current phi rather than restarting.
Evolution runs on a background thread per job; readers always see the
fields of the latest completed iteration (phi rasters are immutable and
swapped by reference).  Jobs persist to one directory each, so a paused
job survives a restart bit-exactly.
"""
from __future__ import annotations

import io
import json
import logging
import os
import threading
import uuid
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field

from .edges import PromptSet
from .grid import CtSlice, ScalarField, read_image
from .knowledge import bone_gray_min, window_slice
from .levelset import EvolutionState, box_signed_distance, evolve, extract_contour, \
    extract_mask
from .pipeline import PipelineConfig, _plateau_callback, auto_init_box, \
    bridge_narrow_gaps, compute_fields, fill_inner_holes

logger = logging.getLogger(__name__)

SNAPSHOT_EVERY = 50  # contour capture cadence while running, iterations
PROMPT_STATES = ("created", "fields_ready", "paused")
PAUSE_JOIN_S = 30.0


class RunBody(BaseModel):
    iters: int = Field(gt=0)


def _unprocessable(field: str, msg: str):
    return HTTPException(422, detail=[{"loc": ["body", field], "msg": msg}])


def _png_rescaled(values: np.ndarray) -> bytes:
    """8-bit PNG bytes, min..max mapped linearly to 0..255."""
    lo, hi = float(values.min()), float(values.max())
    scaled = np.zeros_like(values) if hi == lo else (values - lo) * (255.0 / (hi - lo))
    buf = io.BytesIO()
    Image.fromarray(np.round(scaled).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def _png_mask(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def _polylines_doc(polys) -> list:
    return [np.asarray(p, dtype=float).tolist() for p in polys]


class Job:
    """A segmentation session: frozen slice + config, evolving phi."""

    def __init__(self, job_id: str, slice_id: str, cfg: PipelineConfig,
                 gray: ScalarField, job_dir: Path):
        self.id = job_id
        self.slice_id = slice_id
        self.cfg = cfg
        self.gray = gray
        self.dir = job_dir
        self.lock = threading.RLock()
        self.pause_requested = threading.Event()
        self.thread: threading.Thread | None = None
        self.state = "created"
        self.error: str | None = None
        self.field_version = 0
        self.convergence_iteration: int | None = None
        self.init_box: tuple | None = None
        self.snapshots: dict[int, list] = {}
        self.fields = None
        self.evo: EvolutionState | None = None

    # ------------------------------------------------------------ lifecycle

    def prepare(self) -> None:
        """created -> fields_ready: freeze the box, g and the distance factor."""
        threshold = self.cfg.init_threshold
        if threshold is None:
            threshold = bone_gray_min(self.cfg.bone_window)
        self.init_box = self.cfg.init_box or auto_init_box(
            self.gray, threshold, self.cfg.init_margin)
        phi0 = box_signed_distance(self.gray.shape, self.init_box)
        self.fields = compute_fields(self.gray, self.cfg, roi=phi0.values <= 0.0)
        self.evo = EvolutionState(phi=phi0, g=self.fields.g,
                                  params=self.cfg.evolution, beta=self.fields.beta)
        self.snapshots[0] = extract_contour(phi0)
        self.field_version = 1
        self.state = "fields_ready"

    def set_prompts(self, prompts: PromptSet) -> int:
        """Swap the prompt set and recompute the distance factor in place."""
        if self.cfg.mode == "classical":
            raise _unprocessable("strokes", "classical mode accepts no prompts")
        cfg = replace(self.cfg, prompts=prompts)
        roi = box_signed_distance(self.gray.shape, self.init_box).values <= 0.0
        fields = compute_fields(self.gray, cfg, roi=roi)
        self.cfg = cfg
        self.fields = fields
        self.evo = replace(self.evo, beta=fields.beta)
        self.field_version += 1
        if self.state == "created":
            self.state = "fields_ready"
        self.persist()
        return self.field_version

    def start_run(self, iters: int) -> int:
        target = self.evo.iteration + iters
        self.state = "running"
        self.pause_requested.clear()
        self.thread = threading.Thread(target=self._run_loop, args=(target,),
                                       daemon=True, name=f"figac-job-{self.id}")
        self.thread.start()
        return target

    def _run_loop(self, target: int) -> None:
        state = self.evo
        plateau_out = {"convergence_iteration": None}
        plateau = _plateau_callback(self.cfg.plateau, state.phi.values.size,
                                    plateau_out) if self.cfg.plateau.enabled else None

        def cb(s: EvolutionState):
            self.evo = s
            if s.iteration % SNAPSHOT_EVERY == 0 or s.iteration == target:
                contour = extract_contour(s.phi)
                with self.lock:
                    self.snapshots[s.iteration] = contour
                self._persist_snapshot(s.iteration, contour)
            keep_going = plateau is None or plateau(s) is not False
            return keep_going and not self.pause_requested.is_set()

        try:
            state = evolve(state, target - state.iteration, cb)
            with self.lock:
                self.evo = state
                if state.iteration not in self.snapshots:
                    contour = extract_contour(state.phi)
                    self.snapshots[state.iteration] = contour
                    self._persist_snapshot(state.iteration, contour)
                if plateau_out["convergence_iteration"] is not None:
                    self.convergence_iteration = plateau_out["convergence_iteration"]
                    self.state = "converged"
                else:
                    self.state = "paused"
                self.persist()
        except Exception as exc:
            logger.exception("job %s failed", self.id)
            with self.lock:
                self.error = str(exc)
                self.state = "failed"
                self.persist()

    def request_pause(self) -> None:
        self.pause_requested.set()

    # ---------------------------------------------------------------- views

    def latest_snapshot(self) -> tuple[int, list]:
        with self.lock:
            it = max(self.snapshots)
            return it, self.snapshots[it]

    def current_mask(self) -> np.ndarray:
        evo, fields, cfg = self.evo, self.fields, self.cfg
        mask = extract_mask(evo.phi)
        if cfg.postprocess.fill_holes:
            mask = fill_inner_holes(mask, fields.g, fields.beta, cfg.evolution,
                                    cfg.postprocess.hole_alpha, cfg.postprocess.hole_iters)
        if cfg.postprocess.bridge_gaps:
            mask = bridge_narrow_gaps(mask, self.gray, cfg.postprocess.gap_seeds,
                                      cfg.postprocess.gap_tol, cfg.postprocess.gap_window)
        return mask

    def to_state_doc(self) -> dict:
        return {"id": self.id, "slice_id": self.slice_id, "state": self.state,
                "iteration": self.evo.iteration if self.evo else 0,
                "field_version": self.field_version,
                "convergence_iteration": self.convergence_iteration,
                "error": self.error, "config": self.cfg.to_dict()}

    # ---------------------------------------------------------- persistence

    def persist(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.json").write_text(json.dumps(self.cfg.to_dict(), indent=2))
        meta = {"slice_id": self.slice_id, "state": self.state,
                "iteration": self.evo.iteration, "field_version": self.field_version,
                "convergence_iteration": self.convergence_iteration,
                "init_box": list(self.init_box), "error": self.error}
        (self.dir / "meta.json").write_text(json.dumps(meta, indent=2))
        np.save(self.dir / "phi.npy", self.evo.phi.values)

    def _persist_snapshot(self, iteration: int, contour: list) -> None:
        snap_dir = self.dir / "snapshots"
        snap_dir.mkdir(parents=True, exist_ok=True)
        doc = {"iteration": iteration, "polylines": _polylines_doc(contour)}
        (snap_dir / f"{iteration:07d}.json").write_text(json.dumps(doc))

    @classmethod
    def restore(cls, job_id: str, job_dir: Path, gray: ScalarField,
                cfg: PipelineConfig) -> "Job":
        meta = json.loads((job_dir / "meta.json").read_text())
        job = cls(job_id, meta["slice_id"], cfg, gray, job_dir)
        job.init_box = tuple(meta["init_box"])
        roi = box_signed_distance(gray.shape, job.init_box).values <= 0.0
        job.fields = compute_fields(gray, cfg, roi=roi)
        phi = ScalarField(np.load(job_dir / "phi.npy"))
        job.evo = EvolutionState(phi=phi, g=job.fields.g, params=cfg.evolution,
                                 beta=job.fields.beta, iteration=meta["iteration"])
        job.field_version = meta["field_version"]
        job.convergence_iteration = meta["convergence_iteration"]
        job.error = meta["error"]
        # A job cannot be running in a fresh process.
        job.state = "paused" if meta["state"] == "running" else meta["state"]
        for p in sorted((job_dir / "snapshots").glob("*.json")):
            doc = json.loads(p.read_text())
            job.snapshots[doc["iteration"]] = [np.asarray(q, dtype=float)
                                               for q in doc["polylines"]]
        return job


class JobRegistry:
    """Jobs in memory, mirrored to one directory per job."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        (self.data_dir / "slices").mkdir(parents=True, exist_ok=True)
        (self.data_dir / "jobs").mkdir(parents=True, exist_ok=True)
        self.jobs: dict[str, Job] = {}
        self.lock = threading.Lock()

    def slice_path(self, slice_id: str) -> Path:
        return self.data_dir / "slices" / f"{slice_id}.png"

    def load_gray(self, slice_id: str, cfg: PipelineConfig) -> ScalarField:
        image = read_image(self.slice_path(slice_id))
        if isinstance(image, CtSlice):
            return window_slice(image, cfg.window_width, cfg.window_level)
        return image

    def add_slice(self, data: bytes) -> str:
        slice_id = uuid.uuid4().hex[:12]
        self.slice_path(slice_id).write_bytes(data)
        return slice_id

    def create_job(self, slice_id: str, cfg: PipelineConfig) -> Job:
        job_id = uuid.uuid4().hex[:12]
        gray = self.load_gray(slice_id, cfg)
        job = Job(job_id, slice_id, cfg, gray, self.data_dir / "jobs" / job_id)
        job.prepare()
        job.persist()
        with self.lock:
            self.jobs[job_id] = job
        return job

    def get(self, job_id: str) -> Job:
        with self.lock:
            if job_id in self.jobs:
                return self.jobs[job_id]
        job_dir = self.data_dir / "jobs" / job_id
        if not (job_dir / "meta.json").exists():
            raise HTTPException(404, f"unknown job {job_id}")
        meta = json.loads((job_dir / "meta.json").read_text())
        cfg = PipelineConfig.from_dict(json.loads((job_dir / "config.json").read_text()))
        gray = self.load_gray(meta["slice_id"], cfg)
        job = Job.restore(job_id, job_dir, gray, cfg)
        with self.lock:
            self.jobs.setdefault(job_id, job)
            return self.jobs[job_id]


def create_app(data_dir=None) -> FastAPI:
    data_dir = Path(data_dir if data_dir is not None
                    else os.environ.get("FIGAC_DATA_DIR", "figac_data"))
    registry = JobRegistry(data_dir)
    app = FastAPI(title="figac service")
    app.state.registry = registry
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.post("/slices", status_code=201)
    async def post_slice(file: UploadFile):
        data = await file.read()
        try:
            Image.open(io.BytesIO(data)).verify()
        except (UnidentifiedImageError, OSError):
            raise _unprocessable("file", "not a decodable image")
        slice_id = registry.add_slice(data)
        try:
            read_image(registry.slice_path(slice_id))
        except ValueError as exc:
            registry.slice_path(slice_id).unlink()
            raise _unprocessable("file", str(exc))
        return {"slice_id": slice_id}

    @app.get("/slices/{slice_id}")
    def get_slice(slice_id: str):
        path = registry.slice_path(slice_id)
        if not path.exists():
            raise HTTPException(404, f"unknown slice {slice_id}")
        return Response(path.read_bytes(), media_type="image/png")

    @app.post("/jobs", status_code=201)
    async def post_job(request: Request):
        body = await request.json()
        if not isinstance(body, dict) or "slice_id" not in body:
            raise _unprocessable("slice_id", "required")
        slice_id = body["slice_id"]
        if not registry.slice_path(slice_id).exists():
            raise HTTPException(404, f"unknown slice {slice_id}")
        cfg_doc = body.get("config") or {}
        if not isinstance(cfg_doc, dict):
            raise _unprocessable("config", "must be a JSON object")
        try:
            cfg = PipelineConfig.from_dict(cfg_doc)
        except (ValueError, TypeError) as exc:
            raise _unprocessable("config", str(exc))
        try:
            job = registry.create_job(slice_id, cfg)
        except ValueError as exc:
            raise _unprocessable("config", str(exc))
        return job.to_state_doc()

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return registry.get(job_id).to_state_doc()

    @app.post("/jobs/{job_id}/prompts")
    async def post_prompts(job_id: str, request: Request):
        job = registry.get(job_id)
        body = await request.json()
        with job.lock:
            if job.state not in PROMPT_STATES:
                raise HTTPException(409, f"prompts are immutable in state '{job.state}'")
            try:
                prompts = PromptSet.from_json(json.dumps(body))
                version = job.set_prompts(prompts)
            except ValueError as exc:
                raise _unprocessable("strokes", str(exc))
        return {"field_version": version, "state": job.state}

    @app.post("/jobs/{job_id}/run", status_code=202)
    def post_run(job_id: str, body: RunBody):
        job = registry.get(job_id)
        with job.lock:
            if job.state not in ("fields_ready", "paused"):
                raise HTTPException(409, f"cannot run from state '{job.state}'")
            target = job.start_run(body.iters)
        return {"state": "running", "target_iteration": target}

    @app.post("/jobs/{job_id}/pause")
    def post_pause(job_id: str):
        job = registry.get(job_id)
        with job.lock:
            if job.state != "running":
                raise HTTPException(409, f"cannot pause from state '{job.state}'")
            job.request_pause()
            thread = job.thread
        thread.join(timeout=PAUSE_JOIN_S)
        if thread.is_alive():
            raise HTTPException(409, "job did not pause in time")
        return job.to_state_doc()

    @app.get("/jobs/{job_id}/contour")
    def get_contour(job_id: str, iter: str = "latest"):
        job = registry.get(job_id)
        if iter == "latest":
            iteration, polys = job.latest_snapshot()
        else:
            try:
                wanted = int(iter)
            except ValueError:
                raise _unprocessable("iter", "must be 'latest' or an integer")
            with job.lock:
                if wanted not in job.snapshots:
                    raise HTTPException(404, f"no snapshot at iteration {wanted}")
                iteration, polys = wanted, job.snapshots[wanted]
        return {"iteration": iteration, "polylines": _polylines_doc(polys)}

    @app.get("/jobs/{job_id}/fields/{name}")
    def get_field(job_id: str, name: str):
        job = registry.get(job_id)
        if name == "g":
            field = job.fields.g
        elif name == "beta":
            field = job.fields.beta
            if field is None:
                raise HTTPException(404, "job has no beta field (classical mode)")
        else:
            raise HTTPException(404, f"unknown field {name!r}, expected g or beta")
        return Response(_png_rescaled(field.values), media_type="image/png")

    @app.get("/jobs/{job_id}/mask")
    def get_mask(job_id: str):
        job = registry.get(job_id)
        return Response(_png_mask(job.current_mask()), media_type="image/png")

    return app


def main() -> int:
    import uvicorn

    logging.basicConfig(level=logging.INFO)
    port = int(os.environ.get("FIGAC_PORT", "8008"))
    uvicorn.run(create_app(), host="0.0.0.0", port=port)
    return 0


if __name__ == "__main__":
    import sys

    sys.exit(main())
