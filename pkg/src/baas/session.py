"""Plain-directory session store orchestrating the pipeline stages.

A session is a directory of line-delimited artifacts plus a small JSON
manifest; every stage writes its artifact atomically, so the directory always
reloads to the last completed stage. Stages run strictly in order: tracking,
supervision, finalization, annotation, evaluation.
"""

from __future__ import annotations

import dataclasses
import fcntl
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

from .annotate import BorderFn, annotate_recording
from .io import (
    ManualLabelSet,
    Recording,
    ValidationError,
    _atomic_write,
    load_annotations,
    load_labels,
    load_recording,
    load_trajectories,
    save_annotations,
    save_labels,
    save_recording,
    save_trajectories,
)
from .metrics import (
    StepOutput,
    evaluate_steps,
    label_data_tracking,
    load_report,
    save_report,
)
from .smoother import FinalizeOptions, SupervisionDecision, finalize
from .tracker.config import TrackerConfig
from .tracker.eot import HypothesisSet, load_hypotheses, run_eot, save_hypotheses
from .types import ObjectClass, ObjectTrajectory, TrackStatus, TrajectoryPoint

log = logging.getLogger(__name__)

STAGE_ORDER = ("tracking", "supervision", "finalization", "annotation", "evaluation")

FILES = {
    "manifest": "manifest.json",
    "recording": "recording.jsonl",
    "labels": "labels.jsonl",
    "gt": "gt.jsonl",
    "history": "history.jsonl",
    "associations": "associations.jsonl",
    "decision": "decision.json",
    "trajectories": "trajectories.jsonl",
    "annotations": "annotations.jsonl",
    "report": "report.jsonl",
    "audit": "audit.jsonl",
    "lock": ".lock",
}

#: artifact whose presence marks a stage as complete
STAGE_ARTIFACT = {
    "tracking": "history",
    "supervision": "decision",
    "finalization": "trajectories",
    "annotation": "annotations",
    "evaluation": "report",
}


class StageOrderError(ValidationError):
    """A stage was requested before its prerequisite completed."""


def decision_to_dict(d: SupervisionDecision) -> dict:
    return {
        "accepted": list(d.accepted),
        "merge_groups": [list(g) for g in d.merge_groups],
        "classes": {str(k): v.value for k, v in d.classes.items()},
        "size_overrides": {str(k): list(v) for k, v in d.size_overrides.items()},
    }


def decision_from_dict(obj: dict) -> SupervisionDecision:
    return SupervisionDecision(
        accepted=tuple(obj.get("accepted", ())),
        merge_groups=tuple(tuple(g) for g in obj.get("merge_groups", ())),
        classes={int(k): ObjectClass(v) for k, v in obj.get("classes", {}).items()},
        size_overrides={int(k): tuple(v)
                        for k, v in obj.get("size_overrides", {}).items()})


@dataclass
class Session:
    """Handle on one session directory; all state lives on disk."""

    path: Path

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(cls, path, recording: Recording, labels: ManualLabelSet | None = None,
               gt=None, config: dict | None = None) -> "Session":
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        if (path / FILES["manifest"]).exists():
            raise ValidationError(f"session already exists at {path}")
        s = cls(path)
        save_recording(recording, s.file("recording"))
        if labels is not None:
            save_labels(labels, s.file("labels"))
        if gt:
            save_trajectories(gt, s.file("gt"))
        s._write_manifest({
            "session_id": path.name,
            "recording": FILES["recording"],
            "config": config or {},
            "created": time.time(),
        })
        return s

    @classmethod
    def load(cls, path) -> "Session":
        path = Path(path)
        if not (path / FILES["manifest"]).exists():
            raise ValidationError(f"no session manifest in {path}")
        return cls(path)

    def file(self, name: str) -> Path:
        return self.path / FILES[name]

    @property
    def manifest(self) -> dict:
        with open(self.file("manifest")) as fh:
            return json.load(fh)

    def _write_manifest(self, manifest: dict):
        _atomic_write(self.file("manifest"), json.dumps(manifest, indent=2) + "\n")

    def lock(self):
        """One writer per session: exclusive advisory lock, context manager."""
        return _SessionLock(self.file("lock"))

    # -- stage status ------------------------------------------------------

    def stage_complete(self, stage: str) -> bool:
        if stage not in STAGE_ARTIFACT:
            raise ValidationError(f"unknown stage {stage!r}")
        return self.file(STAGE_ARTIFACT[stage]).exists()

    def stage_status(self) -> dict:
        return {stage: self.stage_complete(stage) for stage in STAGE_ORDER}

    def _require(self, stage: str):
        if not self.stage_complete(stage):
            raise StageOrderError(f"stage {stage!r} has not completed yet")

    # -- artifact accessors ------------------------------------------------

    def recording(self) -> Recording:
        return load_recording(self.file("recording"))

    def labels(self) -> ManualLabelSet | None:
        p = self.file("labels")
        return load_labels(p) if p.exists() else None

    def ground_truth(self):
        p = self.file("gt")
        return load_trajectories(p) if p.exists() else None

    def hypotheses(self) -> HypothesisSet:
        self._require("tracking")
        return load_hypotheses(self.file("history"), self.file("associations"))

    def decision(self) -> SupervisionDecision:
        self._require("supervision")
        with open(self.file("decision")) as fh:
            return decision_from_dict(json.load(fh))

    def trajectories(self):
        self._require("finalization")
        return load_trajectories(self.file("trajectories"))

    def annotations(self):
        self._require("annotation")
        return load_annotations(self.file("annotations"))

    def report(self):
        self._require("evaluation")
        return load_report(self.file("report"))

    def audit_entries(self):
        p = self.file("audit")
        if not p.exists():
            return []
        with open(p) as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def append_audit(self, action: str, payload):
        entry = json.dumps({"ts": time.time(), "action": action, "payload": payload})
        with open(self.file("audit"), "a") as fh:
            fh.write(entry + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- configuration -----------------------------------------------------

    def tracker_config(self, overrides: dict | None = None) -> TrackerConfig:
        cfg = dict(self.manifest.get("config", {}).get("tracker", {}))
        cfg.update(overrides or {})
        if "models" in cfg:
            cfg["models"] = tuple(cfg["models"])
        if "transition" in cfg:
            cfg["transition"] = tuple(tuple(row) for row in cfg["transition"])
        return TrackerConfig(**cfg)

    def annotate_config(self, overrides: dict | None = None) -> dict:
        cfg = {"alpha": 0.95, "border_form": "constant", "border_params": [0.0]}
        cfg.update(self.manifest.get("config", {}).get("annotate", {}))
        cfg.update(overrides or {})
        return cfg

    def _snapshot_config(self, section: str, overrides: dict | None):
        """Persist effective config; reject changes once tracking has run."""
        manifest = self.manifest
        effective = dict(manifest.get("config", {}).get(section, {}))
        effective.update(overrides or {})
        if section == "tracker" and self.stage_complete("tracking"):
            frozen = manifest.get("config", {}).get(section, {})
            if effective != frozen:
                raise ValidationError(
                    "tracker config is immutable once tracking has run")
        manifest.setdefault("config", {})[section] = effective
        self._write_manifest(manifest)


class _SessionLock:
    def __init__(self, path):
        self.path = path
        self.fh = None

    def __enter__(self):
        self.fh = open(self.path, "w")
        fcntl.flock(self.fh, fcntl.LOCK_EX)
        return self

    def __exit__(self, *exc):
        fcntl.flock(self.fh, fcntl.LOCK_UN)
        self.fh.close()


# ---------------------------------------------------------------------------
# supervision


def apply_supervision(session: Session, decision: SupervisionDecision) -> Session:
    """Store a validated decision; any prior one is archived in the audit log
    and downstream artifacts are invalidated."""
    session._require("tracking")
    decision.validate_against(session.hypotheses())
    with session.lock():
        payload = decision_to_dict(decision)
        session.append_audit("decision", payload)
        _atomic_write(session.file("decision"), json.dumps(payload, indent=2) + "\n")
        for name in ("trajectories", "annotations", "report"):
            p = session.file(name)
            if p.exists():
                p.unlink()
    return session


def replay_audit(session: Session) -> SupervisionDecision | None:
    """Reconstruct the final decision from the append-only audit log."""
    decision = None
    for entry in session.audit_entries():
        if entry["action"] == "decision":
            decision = decision_from_dict(entry["payload"])
    return decision


# ---------------------------------------------------------------------------
# stage execution


def run_stage(session: Session, stage: str, overrides: dict | None = None) -> Session:
    """Run one pipeline stage, writing its artifact atomically."""
    runners = {
        "track": _run_tracking,
        "finalize": _run_finalization,
        "annotate": _run_annotation,
        "evaluate": _run_evaluation,
    }
    if stage not in runners:
        raise ValidationError(f"unknown stage {stage!r}; "
                              f"expected one of {sorted(runners)}")
    with session.lock():
        runners[stage](session, overrides)
        session.append_audit("stage", {"stage": stage})
    return session


def _run_tracking(session: Session, overrides):
    session._snapshot_config("tracker", overrides)
    cfg = session.tracker_config()
    hs = run_eot(session.recording(), cfg)
    save_hypotheses(hs, session.file("history"), session.file("associations"))


def _run_finalization(session: Session, overrides):
    session._require("tracking")
    if not session.stage_complete("supervision"):
        raise StageOrderError("finalization requires a submitted supervision decision")
    cfg = session.tracker_config()
    trajs = finalize(session.decision(), session.hypotheses(), session.recording(),
                     cfg, options=FinalizeOptions())
    save_trajectories(trajs, session.file("trajectories"))


def _run_annotation(session: Session, overrides):
    session._require("finalization")
    acfg = session.annotate_config(overrides)
    session._snapshot_config("annotate", overrides)
    border = BorderFn(acfg["border_form"], tuple(acfg["border_params"]))
    aset = annotate_recording(session.trajectories(), session.recording(),
                              alpha=acfg["alpha"], border=border)
    save_annotations(aset.records, session.file("annotations"))


def _run_evaluation(session: Session, overrides):
    session._require("annotation")
    labels = session.labels()
    if labels is None:
        raise ValidationError("evaluation requires manual labels in the session")
    recording = session.recording()
    cfg = session.tracker_config()
    acfg = session.annotate_config()
    border = BorderFn(acfg["border_form"], tuple(acfg["border_params"]))

    gt = session.ground_truth()
    if gt is None:
        gt, _ = label_data_tracking(recording, labels, cfg)

    steps = build_step_outputs(session, recording, cfg, acfg["alpha"], border)
    rows = evaluate_steps(recording, labels, steps, gt)
    save_report(rows, session.file("report"))


# ---------------------------------------------------------------------------
# staged outputs for evaluation


_STAGE_OPTIONS = {
    "smoothed-aligned": FinalizeOptions(smooth=True, align=True,
                                        fix_size=False, clamp=False),
}


def build_step_outputs(session: Session, recording: Recording, cfg: TrackerConfig,
                       alpha: float, border: BorderFn) -> list:
    """The five staged outputs scored by the evaluation report."""
    from .annotate import binary_labels

    hs = session.hypotheses()
    verified = filter_hypotheses(hs, confirmed_only=True)
    decision = session.decision()

    def labels_for(trajs):
        aset = annotate_recording(trajs, recording, alpha=alpha, border=border)
        return binary_labels(aset.records)

    steps = [
        StepOutput("all-hypotheses", hs,
                   labels_for(tracks_to_trajectories(hs, cfg))),
        StepOutput("verified-only", verified,
                   labels_for(tracks_to_trajectories(verified, cfg))),
    ]
    raw_merged = merged_raw_trajectories(decision, hs)
    steps.append(StepOutput("after-supervision", raw_merged,
                            labels_for(raw_merged)))
    for name, options in _STAGE_OPTIONS.items():
        trajs = finalize(decision, hs, recording, cfg, options=options)
        steps.append(StepOutput(name, trajs, labels_for(trajs)))
    final = session.trajectories()
    steps.append(StepOutput("final", final, labels_for(final)))
    return steps


def filter_hypotheses(hs: HypothesisSet, confirmed_only: bool) -> HypothesisSet:
    """Subset of tracks that reach verified status (full histories kept)."""
    if not confirmed_only:
        return hs
    keep = {tid for tid in hs.track_ids
            if any(tr.status is TrackStatus.VERIFIED
                   for _, tr in hs.track_history(tid))}
    out = HypothesisSet(failures=list(hs.failures))
    for k, per in hs.snapshots.items():
        snap = {tid: tr for tid, tr in per.items() if tid in keep}
        if snap:
            out.snapshots[k] = snap
    for assoc in hs.associations:
        out.associations.append(dataclasses.replace(
            assoc,
            track_assignments={t: ids for t, ids in assoc.track_assignments.items()
                               if t in keep}))
    return out


def merged_raw_trajectories(decision: SupervisionDecision,
                            hs: HypothesisSet) -> list:
    """Supervision applied to the forward tracker output, nothing else.

    Selection and merging only: per scan, each object takes the state and
    extent of whichever source track was updated there (ties: most assigned
    detections, then lowest track id). No re-filtering or smoothing, so birth
    transients and split-track re-initializations stay visible.
    """
    out = []
    for object_id, track_ids in decision.units():
        cls = decision.classes.get(object_id, ObjectClass.OTHER)
        per_scan = {}  # k -> (sort key, TrackHypothesis)
        for tid in track_ids:
            assigned = hs.assignments(tid)
            for k, tr in hs.track_history(tid):
                if tr.status is TrackStatus.DELETED:
                    continue
                key = (-len(assigned.get(k, ())), tid)
                if k not in per_scan or key < per_scan[k][0]:
                    per_scan[k] = (key, tr, len(assigned.get(k, ())))
        points = []
        for k in sorted(per_scan):
            _, tr, n_assigned = per_scan[k]
            m = tr.state.mean
            length, width = tr.extent.axes_lw()
            points.append(TrajectoryPoint(
                k, 0.0, m[0], m[1], m[2], m[3], tr.state.cov,
                tr.extent.principal_angle(), length, width, tr.extent.X,
                n_assigned))
        if points:
            out.append(ObjectTrajectory(object_id, cls, tuple(points),
                                        None, None, track_ids))
    return out


def tracks_to_trajectories(hs: HypothesisSet, cfg: TrackerConfig) -> list:
    """Raw per-track trajectories straight from the filter states.

    Used to annotate and score the pre-finalization stages: extent and
    orientation come unmodified from the running estimate.
    """
    out = []
    for tid in hs.track_ids:
        points = []
        for k, tr in hs.track_history(tid):
            if tr.status is TrackStatus.DELETED:
                continue
            m = tr.state.mean
            length, width = tr.extent.axes_lw()
            alpha = tr.extent.principal_angle()
            points.append(TrajectoryPoint(
                k, 0.0, m[0], m[1], m[2], m[3], tr.state.cov, alpha,
                length, width, tr.extent.X, dict(tr.assoc_counts).get(k, 0)))
        if points:
            out.append(ObjectTrajectory(tid, ObjectClass.OTHER, tuple(points),
                                        None, None, (tid,)))
    return out
