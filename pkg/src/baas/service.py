"""HTTP facade over a session directory for the review frontend.

Read endpoints are side-effect free; the only mutating endpoints are the
decision submission and asynchronous stage launches. Heavy compute runs in a
background thread with a polled status endpoint.
"""

from __future__ import annotations

import logging
import threading

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .io import ValidationError
from .metrics import format_report
from .session import (
    Session,
    StageOrderError,
    apply_supervision,
    decision_from_dict,
    decision_to_dict,
    run_stage,
)
from .types import TrackStatus

log = logging.getLogger(__name__)

LAUNCHABLE_STAGES = ("track", "finalize", "annotate", "evaluate")


def _scan_payload(scan):
    return {
        "k": scan.k,
        "t": scan.t,
        "ego": {"x": scan.ego.x, "y": scan.ego.y, "yaw": scan.ego.yaw,
                "v": scan.ego.v, "yaw_rate": scan.ego.yaw_rate},
        "detections": [{"id": d.det_id, "x": d.x, "y": d.y, "vr": d.vr}
                       for d in scan.detections],
    }


def _track_payload(track):
    m = track.state.mean
    length, width = track.extent.axes_lw()
    return {
        "track_id": track.track_id,
        "status": track.status.value,
        "x": m[0], "y": m[1], "vx": m[2], "vy": m[3],
        "length": length, "width": width,
        "angle": track.extent.principal_angle(),
        "birth_k": track.birth_k,
        "last_k": track.last_k,
    }


def _trajectory_payload(traj):
    return {
        "object_id": traj.object_id,
        "class": traj.cls.value,
        "length": traj.length,
        "width": traj.width,
        "source_track_ids": list(traj.source_track_ids),
        "states": [{"k": p.k, "x": p.x, "y": p.y, "vx": p.vx, "vy": p.vy,
                    "alpha": p.alpha, "length": p.length, "width": p.width}
                   for p in traj.points],
    }


class _StageRunner:
    """Serializes stage launches and tracks their completion state."""

    def __init__(self, session: Session):
        self.session = session
        self.lock = threading.Lock()
        self.status = {}  # stage -> {"state": ..., "error": ...}

    def launch(self, stage: str):
        with self.lock:
            current = self.status.get(stage, {}).get("state")
            if current == "running":
                raise HTTPException(409, f"stage {stage!r} is already running")
            self.status[stage] = {"state": "running", "error": None}
        thread = threading.Thread(target=self._run, args=(stage,), daemon=True)
        thread.start()

    def _run(self, stage: str):
        try:
            run_stage(self.session, stage)
        except Exception as exc:  # recorded for the status endpoint
            log.warning("stage %s failed: %s", stage, exc)
            with self.lock:
                self.status[stage] = {"state": "failed", "error": str(exc)}
        else:
            with self.lock:
                self.status[stage] = {"state": "complete", "error": None}

    def poll(self, stage: str) -> dict:
        with self.lock:
            return dict(self.status.get(stage, {"state": "idle", "error": None}))


def create_app(session: Session) -> FastAPI:
    app = FastAPI(title="auto-labeling session service")
    runner = _StageRunner(session)
    app.state.session = session
    app.state.runner = runner

    @app.exception_handler(ValidationError)
    def _validation_error(request, exc):
        return JSONResponse(status_code=400, content={"reason": str(exc)})

    @app.get("/manifest")
    def manifest():
        return {"manifest": session.manifest,
                "n_scans": len(session.recording().scans),
                "stages": session.stage_status()}

    @app.get("/scans")
    def scans(k0: int, k1: int):
        recording = session.recording()
        n = len(recording.scans)
        if not 0 <= k0 < k1 <= n:
            raise HTTPException(404, f"scan window [{k0}, {k1}) outside [0, {n})")
        hypotheses = (session.hypotheses()
                      if session.stage_complete("tracking") else None)
        trajs = (session.trajectories()
                 if session.stage_complete("finalization") else None)
        annotations = (session.annotations()
                       if session.stage_complete("annotation") else None)
        window = []
        for scan in recording.scans[k0:k1]:
            item = _scan_payload(scan)
            if hypotheses is not None:
                item["tracks"] = [
                    _track_payload(tr)
                    for _, tr in sorted(hypotheses.tracks_at(scan.k).items())]
                assoc = next((a for a in hypotheses.associations
                              if a.k == scan.k), None)
                if assoc is not None:
                    item["assignments"] = {
                        str(t): list(ids)
                        for t, ids in sorted(assoc.track_assignments.items())}
            if trajs is not None:
                item["objects"] = [
                    {"object_id": tr.object_id, "x": p.x, "y": p.y,
                     "alpha": p.alpha, "length": p.length, "width": p.width}
                    for tr in trajs
                    for p in [tr.point_at(scan.k)] if p is not None]
            if annotations is not None:
                item["annotations"] = [
                    {"det_id": r.det_id, "object_id": r.object_id,
                     "rho": r.rho, "region": r.region.value}
                    for r in annotations if r.k == scan.k]
            window.append(item)
        return {"k0": k0, "k1": k1, "scans": window}

    @app.get("/tracks/{track_id}")
    def track_history(track_id: int):
        if not session.stage_complete("tracking"):
            raise HTTPException(404, "tracking has not run yet")
        hypotheses = session.hypotheses()
        history = hypotheses.track_history(track_id)
        if not history:
            raise HTTPException(404, f"unknown track id {track_id}")
        return {"track_id": track_id,
                "history": [{"k": k, **_track_payload(tr)} for k, tr in history]}

    @app.post("/decision")
    def submit_decision(body: dict):
        try:
            decision = decision_from_dict(body)
            apply_supervision(session, decision)
        except (ValueError, KeyError) as exc:
            raise HTTPException(400, str(exc))
        return {"stored": decision_to_dict(decision)}

    @app.post("/stages/{stage}")
    def launch_stage(stage: str):
        if stage not in LAUNCHABLE_STAGES:
            raise HTTPException(400, f"unknown stage {stage!r}")
        try:
            _precheck_stage(session, stage)
        except StageOrderError as exc:
            raise HTTPException(409, str(exc))
        runner.launch(stage)
        return {"stage": stage, "launched": True}

    @app.get("/stages/{stage}")
    def stage_status(stage: str):
        if stage not in LAUNCHABLE_STAGES:
            raise HTTPException(400, f"unknown stage {stage!r}")
        status = runner.poll(stage)
        status["artifact_complete"] = session.stage_complete(
            {"track": "tracking", "finalize": "finalization",
             "annotate": "annotation", "evaluate": "evaluation"}[stage])
        return status

    @app.get("/report")
    def report():
        if not session.stage_complete("evaluation"):
            raise HTTPException(404, "no evaluation report yet")
        rows = session.report()
        return {"rows": rows, "table": format_report(rows)}

    return app


def _precheck_stage(session: Session, stage: str):
    """Fail fast on ordering errors before the background thread starts."""
    prerequisites = {
        "finalize": ("tracking", "supervision"),
        "annotate": ("tracking", "supervision", "finalization"),
        "evaluate": ("tracking", "supervision", "finalization", "annotation"),
    }
    for prereq in prerequisites.get(stage, ()):
        if not session.stage_complete(prereq):
            raise StageOrderError(
                f"stage {stage!r} requires completed {prereq!r}")
