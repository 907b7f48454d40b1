"""Track lifecycle management and the per-recording tracking loop."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ..io import Recording, _atomic_write, _read_lines
from ..types import Extent, KinematicState, RadarScan, TrackHypothesis, TrackStatus
from .cluster import ScanAssociation, adaptive_cluster
from .config import TrackerConfig
from .filter import (
    NumericalFailure,
    init_state,
    predict_extent,
    predict_state,
    update_state,
)

log = logging.getLogger(__name__)


def predict_track(track: TrackHypothesis, dt: float, cfg: TrackerConfig) -> TrackHypothesis:
    """Propagate a hypothesis by dt seconds; dt = 0 is the identity."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0.0:
        return track
    state, _ = predict_state(track.state, dt, cfg)
    extent = predict_extent(track.extent, dt, cfg)
    return dataclasses.replace(track, state=state, extent=extent)


def update_track(track: TrackHypothesis, assigned, scan: RadarScan,
                 cfg: TrackerConfig) -> TrackHypothesis:
    """Measurement update with the detections assigned to this track."""
    dets = list(assigned)
    if not dets:
        raise ValueError("update_track requires a non-empty assignment")
    state, extent = update_state(track.state, track.extent, dets, scan.ego, cfg)
    return dataclasses.replace(
        track, state=state, extent=extent, last_k=scan.k,
        assoc_counts=track.assoc_counts + ((scan.k, len(dets)),))


@dataclass
class HypothesisSet:
    """Full tracking output: per-scan snapshots of every hypothesis plus the
    detection associations, kept for supervision replay and annotation."""

    snapshots: dict = field(default_factory=dict)  # k -> {tid: TrackHypothesis}
    associations: list = field(default_factory=list)  # ScanAssociation per scan
    failures: list = field(default_factory=list)  # (k, tid, message)

    @property
    def track_ids(self):
        out = set()
        for per_scan in self.snapshots.values():
            out.update(per_scan.keys())
        return sorted(out)

    def track_history(self, tid: int):
        """[(k, TrackHypothesis), ...] ordered by scan."""
        return [(k, per[tid]) for k, per in sorted(self.snapshots.items()) if tid in per]

    def last_snapshot(self, tid: int) -> TrackHypothesis:
        hist = self.track_history(tid)
        if not hist:
            raise KeyError(tid)
        return hist[-1][1]

    def assignments(self, tid: int) -> dict:
        """k -> (det_id, ...) for one track over the whole run."""
        out = {}
        for assoc in self.associations:
            ids = assoc.track_assignments.get(tid)
            if ids:
                out[assoc.k] = ids
        return out

    def tracks_at(self, k: int) -> dict:
        return dict(self.snapshots.get(k, {}))


class _Lifecycle:
    """Hit/miss bookkeeping behind the M-of-N confirmation rule."""

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self.hits = {}  # tid -> list of bools, most recent last
        self.miss_streak = {}

    def born(self, tid):
        self.hits[tid] = [True]
        self.miss_streak[tid] = 0

    def observe(self, tid, hit: bool):
        self.hits.setdefault(tid, []).append(hit)
        if hit:
            self.miss_streak[tid] = 0
        else:
            self.miss_streak[tid] = self.miss_streak.get(tid, 0) + 1

    def should_promote(self, tid) -> bool:
        window = self.hits.get(tid, [])[-self.cfg.confirm_n:]
        return sum(window) >= self.cfg.confirm_m

    def should_delete(self, tid) -> bool:
        return self.miss_streak.get(tid, 0) >= self.cfg.n_miss


_PROMOTION = {
    TrackStatus.INITIALIZED: TrackStatus.UNCONFIDENT,
    TrackStatus.UNCONFIDENT: TrackStatus.VERIFIED,
    TrackStatus.VERIFIED: TrackStatus.VERIFIED,
}


def manage_tracks(tracks: dict, assoc: ScanAssociation, scan: RadarScan,
                  cfg: TrackerConfig, lifecycle: _Lifecycle, next_tid: int):
    """Apply births, promotions and deletions after the scan's updates.

    Returns (tracks, next_tid, births) where births maps each new track id to
    its founding detection cluster. Deleted tracks stay in the mapping, frozen.
    """
    out = {}
    births = {}
    for tid, track in tracks.items():
        if track.status is TrackStatus.DELETED:
            out[tid] = track
            continue
        hit = tid in assoc.track_assignments
        lifecycle.observe(tid, hit)
        if lifecycle.should_delete(tid):
            track = dataclasses.replace(track, status=TrackStatus.DELETED)
        elif hit and lifecycle.should_promote(tid):
            track = dataclasses.replace(track, status=_PROMOTION[track.status])
        out[tid] = track

    for cluster in assoc.leftover:
        dets = [scan.detection(i) for i in cluster]
        try:
            state, extent = init_state(dets, scan.ego, cfg)
        except Exception as exc:  # degenerate birth cluster: skip it
            log.warning("scan %d: birth from cluster %s failed: %s", scan.k, cluster, exc)
            continue
        tid = next_tid
        next_tid += 1
        out[tid] = TrackHypothesis(
            tid, state, extent, TrackStatus.INITIALIZED, scan.k, scan.k,
            ((scan.k, len(dets)),))
        lifecycle.born(tid)
        births[tid] = tuple(cluster)
    return out, next_tid, births


def run_eot(recording: Recording, cfg: TrackerConfig) -> HypothesisSet:
    """Run the full tracker over a recording, retaining everything."""
    result = HypothesisSet()
    tracks = {}
    lifecycle = _Lifecycle(cfg)
    next_tid = 1
    prev_t = None

    for scan in recording.scans:
        dt = 0.0 if prev_t is None else scan.t - prev_t
        prev_t = scan.t

        predicted = {}
        for tid, track in tracks.items():
            if track.status is TrackStatus.DELETED:
                continue
            try:
                predicted[tid] = predict_track(track, dt, cfg)
            except NumericalFailure as exc:
                result.failures.append((scan.k, tid, f"predict: {exc}"))
                tracks[tid] = dataclasses.replace(track, status=TrackStatus.DELETED)

        assoc = adaptive_cluster(scan, predicted, cfg)

        for tid, pred in predicted.items():
            ids = assoc.track_assignments.get(tid)
            if not ids:
                tracks[tid] = pred
                continue
            try:
                tracks[tid] = update_track(pred, [scan.detection(i) for i in ids], scan, cfg)
            except NumericalFailure as exc:
                result.failures.append((scan.k, tid, f"update: {exc}"))
                tracks[tid] = pred

        tracks, next_tid, births = manage_tracks(tracks, assoc, scan, cfg,
                                                 lifecycle, next_tid)
        # credit founding clusters to their new tracks so supervision replay
        # and annotation see the birth-scan detections as assigned
        result.associations.append(ScanAssociation(
            assoc.k,
            {**assoc.track_assignments, **births},
            tuple(c for c in assoc.leftover
                  if c not in set(births.values()))))

        snap = {}
        for tid, track in tracks.items():
            prev = result.snapshots.get(scan.k - 1, {}).get(tid)
            if track.status is TrackStatus.DELETED and prev is not None \
                    and prev.status is TrackStatus.DELETED:
                continue  # already frozen; no need to restate every scan
            snap[tid] = track
        result.snapshots[scan.k] = snap

    return result


# ---------------------------------------------------------------------------
# persistence


def save_hypotheses(hs: HypothesisSet, history_path, assoc_path):
    lines = []
    for k in sorted(hs.snapshots):
        for tid in sorted(hs.snapshots[k]):
            tr = hs.snapshots[k][tid]
            lines.append(json.dumps({
                "k": k, "track_id": tid, "status": tr.status.value,
                "birth_k": tr.birth_k, "last_k": tr.last_k,
                "mu": [float(v) for v in tr.state.mu],
                "means": [[float(v) for v in m] for m in tr.state.means],
                "covs": [[float(v) for v in c.ravel()] for c in tr.state.covs],
                "X": [float(v) for v in tr.extent.X.ravel()],
                "nu_rmm": tr.extent.nu_rmm,
                "assoc_count": dict(tr.assoc_counts).get(k, 0),
            }))
    _atomic_write(history_path, "\n".join(lines) + ("\n" if lines else ""))

    lines = []
    for assoc in hs.associations:
        lines.append(json.dumps({
            "k": assoc.k,
            "tracks": {str(t): list(ids) for t, ids in sorted(assoc.track_assignments.items())},
            "leftover": [list(c) for c in assoc.leftover],
        }))
    _atomic_write(assoc_path, "\n".join(lines) + ("\n" if lines else ""))


def load_hypotheses(history_path, assoc_path) -> HypothesisSet:
    hs = HypothesisSet()
    counts = {}  # tid -> ((k, n), ...) accumulated in scan order
    for _, obj in _read_lines(history_path):
        k, tid = int(obj["k"]), int(obj["track_id"])
        n_models = len(obj["means"])
        dim = len(obj["means"][0])
        state = KinematicState(
            tuple(np.array(m) for m in obj["means"]),
            tuple(np.array(c).reshape(dim, dim) for c in obj["covs"]),
            np.array(obj["mu"]))
        extent = Extent(np.array(obj["X"]).reshape(2, 2), float(obj["nu_rmm"]))
        prev = counts.get(tid, ())
        if int(obj["assoc_count"]) > 0:
            prev = prev + ((k, int(obj["assoc_count"])),)
        counts[tid] = prev
        track = TrackHypothesis(
            tid, state, extent, TrackStatus(obj["status"]),
            int(obj["birth_k"]), int(obj["last_k"]), prev)
        hs.snapshots.setdefault(k, {})[tid] = track
    for _, obj in _read_lines(assoc_path):
        hs.associations.append(ScanAssociation(
            int(obj["k"]),
            {int(t): tuple(ids) for t, ids in obj["tracks"].items()},
            tuple(tuple(c) for c in obj["leftover"])))
    return hs
