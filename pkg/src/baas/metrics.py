"""Tracking and annotation quality metrics.

Track-level scores follow the CLEAR conventions: a per-scan event log of
matches, misses, false tracks and identity switches feeds an accuracy score
and a mean matched-state error. Detection-level scores compare predicted
labels against the manual reference via a confusion matrix.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .io import ManualLabelSet, Recording, ValidationError, _atomic_write, _read_lines
from .tracker.config import TrackerConfig
from .tracker.eot import HypothesisSet, update_track
from .tracker.filter import NumericalFailure, init_state
from .tracker.eot import predict_track
from .types import ObjectTrajectory, TrackHypothesis, TrackStatus

log = logging.getLogger(__name__)

DEFAULT_GATE_DIST = 2.0


class UndefinedMetricError(ValueError):
    """A score's denominator is empty (no matches / no true positives)."""


@dataclass
class MatchEventLog:
    """Per-scan matching outcome between estimated and reference objects."""

    pairs: dict = field(default_factory=dict)  # k -> [(est_id, gt_id, err4), ...]
    fp: dict = field(default_factory=dict)
    fn: dict = field(default_factory=dict)
    mm: dict = field(default_factory=dict)
    tp: dict = field(default_factory=dict)

    def scans(self):
        return sorted(self.tp)

    def totals(self):
        return (sum(self.tp.values()), sum(self.fp.values()),
                sum(self.fn.values()), sum(self.mm.values()))


@dataclass(frozen=True)
class ConfusionCounts:
    """Detection-level confusion totals over a whole recording."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


# ---------------------------------------------------------------------------
# label data tracking


def label_data_tracking(recording: Recording, labels: ManualLabelSet,
                        cfg: TrackerConfig):
    """Re-run the filter with the association fixed by the manual labels.

    One track per labeled object; no gating or clustering is involved, so the
    result is the best object-state reconstruction the filter can produce from
    the reference clusters. Returns (hypotheses, missed_object_ids) where the
    second element lists objects that never produced a confirmable track.
    """
    scan_ks = {s.k for s in recording.scans}
    for k in labels.labels:
        if k not in scan_ks:
            raise ValidationError(f"labels reference scan {k} not in the recording")

    hs = HypothesisSet()
    per_object = {}  # object_id -> {k: (det_id, ...)}
    for k, pairs in labels.labels.items():
        for det_id, obj in pairs:
            if obj < 0:
                continue
            per_object.setdefault(obj, {}).setdefault(k, []).append(det_id)

    tracks = {}  # object_id -> TrackHypothesis
    hit_spans = {obj: 0 for obj in per_object}
    prev_t = None
    for scan in recording.scans:
        dt = 0.0 if prev_t is None else scan.t - prev_t
        prev_t = scan.t
        snap = {}
        for obj in sorted(per_object):
            ids = per_object[obj].get(scan.k)
            track = tracks.get(obj)
            if track is not None:
                track = predict_track(track, dt, cfg)
            if ids:
                dets = [scan.detection(i) for i in ids]
                try:
                    if track is None:
                        state, extent = init_state(dets, scan.ego, cfg)
                        track = TrackHypothesis(
                            obj + 1, state, extent, TrackStatus.INITIALIZED,
                            scan.k, scan.k, ((scan.k, len(dets)),))
                    else:
                        track = update_track(track, dets, scan, cfg)
                    hit_spans[obj] += 1
                except (NumericalFailure, ValueError) as exc:
                    log.warning("object %d scan %d: labeled update failed: %s",
                                obj, scan.k, exc)
            if track is not None:
                if hit_spans[obj] >= cfg.confirm_m \
                        and track.status is not TrackStatus.VERIFIED:
                    track = dataclasses.replace(track, status=TrackStatus.VERIFIED)
                tracks[obj] = track
                snap[track.track_id] = track
        if snap:
            hs.snapshots[scan.k] = snap

    missed = sorted(obj for obj in per_object if hit_spans[obj] < cfg.confirm_m)
    return hs, missed


# ---------------------------------------------------------------------------
# track matching


def _object_snapshots(source):
    """Normalize tracks/trajectories to {k: {id: (x, y, vx, vy)}}."""
    out = {}
    if isinstance(source, HypothesisSet):
        for k, per in source.snapshots.items():
            states = {}
            for tid, track in per.items():
                if track.status is TrackStatus.DELETED:
                    continue
                m = track.state.mean
                states[tid] = (m[0], m[1], m[2], m[3])
            out[k] = states
        return out
    for traj in source:
        if not isinstance(traj, ObjectTrajectory):
            raise TypeError(f"cannot interpret {type(traj).__name__} as objects")
        for p in traj.points:
            out.setdefault(p.k, {})[traj.object_id] = (p.x, p.y, p.vx, p.vy)
    return out


def match_tracks(est, gt, gate_dist: float = DEFAULT_GATE_DIST) -> MatchEventLog:
    """Scan-by-scan correspondence between estimated and reference objects.

    Pairings from the previous scan are kept while both sides stay within
    ``gate_dist`` of each other; the remainder are matched by minimal total
    position distance. A reference object that changes its estimated partner
    counts as a miss-match at that scan.
    """
    est_snap = _object_snapshots(est)
    gt_snap = _object_snapshots(gt)
    ks = sorted(set(est_snap) | set(gt_snap))
    logbook = MatchEventLog()
    prev_pair = {}  # gt_id -> est_id, kept across gaps

    for k in ks:
        ests = est_snap.get(k, {})
        gts = gt_snap.get(k, {})
        pairs = {}

        # carry over surviving pairings first
        for gid in sorted(gts):
            eid = prev_pair.get(gid)
            if eid is None or eid not in ests or eid in pairs.values():
                continue
            if _pos_dist(ests[eid], gts[gid]) <= gate_dist:
                pairs[gid] = eid

        free_g = [g for g in sorted(gts) if g not in pairs]
        free_e = [e for e in sorted(ests) if e not in pairs.values()]
        if free_g and free_e:
            cost = np.array([[_pos_dist(ests[e], gts[g]) for e in free_e]
                             for g in free_g])
            big = gate_dist * 1e6 + 1.0
            rows, cols = linear_sum_assignment(np.where(cost <= gate_dist, cost, big))
            for r, c in zip(rows, cols):
                if cost[r, c] <= gate_dist:
                    pairs[free_g[r]] = free_e[c]

        mm = 0
        entries = []
        for gid in sorted(pairs):
            eid = pairs[gid]
            if gid in prev_pair and prev_pair[gid] != eid:
                mm += 1
            prev_pair[gid] = eid
            err = np.array(ests[eid]) - np.array(gts[gid])
            entries.append((eid, gid, err))

        logbook.pairs[k] = entries
        logbook.tp[k] = len(entries)
        logbook.fn[k] = len(gts) - len(entries)
        logbook.fp[k] = len(ests) - len(entries)
        logbook.mm[k] = mm
    return logbook


def _pos_dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def mota(logbook: MatchEventLog) -> float:
    """Accuracy: 1 minus the error total relative to the match total."""
    tp, fp, fn, mm = logbook.totals()
    if tp == 0:
        raise UndefinedMetricError("no true positive matches; accuracy undefined")
    return 1.0 - (fp + fn + mm) / tp


def motp(logbook: MatchEventLog) -> float:
    """Precision: mean Euclidean norm of the 4D matched-state errors."""
    norms = [float(np.linalg.norm(err))
             for entries in logbook.pairs.values() for _, _, err in entries]
    if not norms:
        raise UndefinedMetricError("no matches; precision undefined")
    return float(sum(norms) / len(norms))


# ---------------------------------------------------------------------------
# detection-level feedback


def confusion(pred: dict, truth: ManualLabelSet, recording: Recording) -> ConfusionCounts:
    """Compare per-detection predicted labels against the manual reference.

    ``pred`` maps (k, det_id) -> object_id. A detection labeled on both sides
    with different objects counts as a false positive (miss-matches are folded
    into FP); clutter labels (negative ids) in the reference count as unlabeled.
    """
    tp = fp = fn = tn = 0
    for scan in recording.scans:
        truth_k = {d: o for d, o in truth.labels.get(scan.k, ()) if o >= 0}
        for det in scan.detections:
            p = pred.get((scan.k, det.det_id))
            t = truth_k.get(det.det_id)
            if p is None and t is None:
                tn += 1
            elif p is None:
                fn += 1
            elif t is None or p != t:
                fp += 1
            else:
                tp += 1
    return ConfusionCounts(tp, fp, fn, tn)


def precision_recall_f1(c: ConfusionCounts):
    """(precision, recall, F1); each is 0 when its denominator is empty."""
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def map_object_ids(pred: dict, truth: ManualLabelSet) -> dict:
    """Best one-to-one map from predicted object ids to reference object ids.

    Greedy by shared-detection count (ties: lower ids), so confusion counting
    can compare label sets whose object ids were assigned independently.
    """
    overlap = {}
    for (k, det_id), obj in pred.items():
        for d, t in truth.labels.get(k, ()):
            if d == det_id and t >= 0:
                overlap[(obj, t)] = overlap.get((obj, t), 0) + 1
    mapping = {}
    used = set()
    for (obj, t), n in sorted(overlap.items(), key=lambda it: (-it[1], it[0])):
        if obj in mapping or t in used:
            continue
        mapping[obj] = t
        used.add(t)
    return mapping


# ---------------------------------------------------------------------------
# staged evaluation


@dataclass
class StepOutput:
    """One pipeline stage's result, ready for scoring."""

    name: str
    objects: object  # HypothesisSet or list of ObjectTrajectory
    pred_labels: dict | None = None  # (k, det_id) -> object_id


def evaluate_steps(recording: Recording, labels: ManualLabelSet, steps,
                   gt, gate_dist: float = DEFAULT_GATE_DIST) -> list:
    """Score every pipeline stage against the reference objects.

    ``steps`` is an ordered list of StepOutput (None entries allowed for
    unavailable stages); ``gt`` is the reference HypothesisSet or trajectory
    list. Returns one row dict per step.
    """
    rows = []
    n_scans = max(len(recording.scans), 1)
    for step in steps:
        if step is None or step.objects is None:
            rows.append({"step": None, "available": False})
            continue
        row = {"step": step.name, "available": True}
        try:
            logbook = match_tracks(step.objects, gt, gate_dist)
            tp, fp, fn, mm = logbook.totals()
            row.update(mota=mota(logbook), motp=motp(logbook),
                       tp_per_scan=tp / n_scans, fp_per_scan=fp / n_scans,
                       fn_per_scan=fn / n_scans, mm_total=mm)
        except UndefinedMetricError as exc:
            row.update(mota=None, motp=None, note=str(exc))
        if step.pred_labels is not None:
            mapping = map_object_ids(step.pred_labels, labels)
            mapped = {key: mapping.get(obj, -1)
                      for key, obj in step.pred_labels.items()}
            c = confusion(mapped, labels, recording)
            p, r, f1 = precision_recall_f1(c)
            row.update(det_tp=c.tp, det_fp=c.fp, det_fn=c.fn, det_tn=c.tn,
                       precision=p, recall=r, f1=f1,
                       f1_arithmetic=(p + r) / 2 if c.tp else 0.0)
        rows.append(row)
    return rows


def save_report(rows, path):
    _atomic_write(path, "".join(json.dumps(row) + "\n" for row in rows))


def load_report(path):
    return [obj for _, obj in _read_lines(path)]


def format_report(rows) -> str:
    """Human-readable table of the per-step scores."""
    cols = ["step", "mota", "motp", "tp_per_scan", "fp_per_scan", "fn_per_scan",
            "precision", "recall", "f1"]
    lines = ["  ".join(f"{c:>12}" for c in cols)]
    for row in rows:
        if not row.get("available"):
            lines.append(f"{str(row.get('step')):>12}  (unavailable)")
            continue
        cells = []
        for c in cols:
            v = row.get(c)
            if isinstance(v, float):
                cells.append(f"{v:>12.4f}")
            else:
                cells.append(f"{str(v) if v is not None else '-':>12}")
        lines.append("  ".join(cells))
    return "\n".join(lines)
