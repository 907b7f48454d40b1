"""Per-detection annotation against finalized object trajectories.

Every (detection, object) pair is scored by a squared gating distance between
the detection and the object's pseudo measurement. Pairs inside the chi-square
core gate get weight 1; a configurable border band beyond the gate assigns a
decaying weight, so downstream consumers can threshold the labels as needed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .io import ManualLabelSet, Recording, _range_rate
from .metrics import confusion, map_object_ids, precision_recall_f1
from .stats import DegenerateMatrixError, chi2_quantile, mahalanobis_sq
from .types import (
    AnnotationRecord,
    AnnotationRegion,
    Detection,
    EgoPose,
    ObjectTrajectory,
    RadarScan,
    TrajectoryPoint,
)

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.95
DEFAULT_Z_SCALE = 0.25
ETA_EPS = 1e-9

_BORDER_FORMS = ("constant", "speed", "area", "range")


@dataclass(frozen=True)
class BorderFn:
    """Parametric width of the border band beyond the core gate.

    ``constant`` ignores the features; the other forms add a linear term in
    one track feature (speed in m/s, extent area in m^2, or range in m).
    The result is clamped to be non-negative.
    """

    form: str = "constant"
    params: tuple = (0.0,)

    def __post_init__(self):
        if self.form not in _BORDER_FORMS:
            raise ValueError(f"unknown border form {self.form!r}")
        n = 1 if self.form == "constant" else 2
        if len(self.params) != n:
            raise ValueError(f"form {self.form!r} takes {n} parameter(s)")

    def __call__(self, features: dict) -> float:
        if self.form == "constant":
            value = self.params[0]
        else:
            value = self.params[0] + self.params[1] * features[self.form]
        return max(0.0, float(value))


def track_features(point: TrajectoryPoint, ego: EgoPose) -> dict:
    """Feature vector the border-width forms may condition on."""
    return {
        "speed": math.hypot(point.vx, point.vy),
        "area": point.length * point.width,
        "range": float(np.linalg.norm(
            np.array([point.x, point.y]) - ego.sensor_position())),
    }


def pseudo_measurement(traj: ObjectTrajectory, k: int, ego: EgoPose) -> np.ndarray:
    """Expected (x, y, vr) of the object at scan k, seen from the ego sensor."""
    point = traj.point_at(k)
    if point is None:
        raise ValueError(f"object {traj.object_id} has no state at scan {k}")
    pos = np.array([point.x, point.y])
    vel = np.array([point.vx, point.vy])
    return np.array([point.x, point.y, _range_rate(pos, vel, ego)])


def _gating_matrix(point: TrajectoryPoint, det: Detection, ego: EgoPose,
                   z_scale: float) -> np.ndarray:
    """3x3 innovation covariance: scaled extent plus noise over (x, y), and
    the state-propagated range-rate variance plus noise over vr."""
    s = np.zeros((3, 3))
    s[:2, :2] = z_scale * point.extent + det.noise[:2, :2]
    u = np.array([point.x, point.y]) - ego.sensor_position()
    rng = np.linalg.norm(u)
    u = u / rng if rng > 1e-9 else np.array([1.0, 0.0])
    s[2, 2] = float(u @ point.cov[2:, 2:] @ u) + det.noise[2, 2]
    return s


@dataclass(frozen=True)
class AnnotationSet:
    """All annotation records of one recording plus the thresholds used."""

    records: tuple
    alpha: float
    border: BorderFn
    z_scale: float = DEFAULT_Z_SCALE

    def scan_records(self, k: int):
        return [r for r in self.records if r.k == k]

    def per_scan_counts(self) -> dict:
        out = {}
        for r in self.records:
            out[r.k] = out.get(r.k, 0) + 1
        return out


def annotate_scan(trajs, scan: RadarScan, alpha: float = DEFAULT_ALPHA,
                  border: BorderFn = BorderFn(),
                  z_scale: float = DEFAULT_Z_SCALE) -> list:
    """Score every (detection, object) pair of one scan.

    Pairs with squared distance inside the chi-square gate become core records
    (weight 1); pairs within the border band get weight
    exp(-(d2 - gate)/eta), decaying from 1 at the core boundary.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    gate = chi2_quantile(3, alpha)
    records = []
    for traj in trajs:
        point = traj.point_at(scan.k)
        if point is None:
            continue
        zhat = pseudo_measurement(traj, scan.k, scan.ego)
        eta = border(track_features(point, scan.ego))
        for det in scan.detections:
            try:
                s = _gating_matrix(point, det, scan.ego, z_scale)
                d2 = mahalanobis_sq(det.z - zhat, s)
            except DegenerateMatrixError as exc:
                log.warning("scan %d det %d obj %d: degenerate gate: %s",
                            scan.k, det.det_id, traj.object_id, exc)
                continue
            if d2 <= gate:
                records.append(AnnotationRecord(
                    scan.k, det.det_id, traj.object_id, 1.0,
                    AnnotationRegion.CORE, d2))
            elif d2 <= gate + eta:
                rho = math.exp(-(d2 - gate) / max(eta, ETA_EPS))
                records.append(AnnotationRecord(
                    scan.k, det.det_id, traj.object_id, rho,
                    AnnotationRegion.BORDER, d2))
    return records


def annotate_recording(trajs, recording: Recording,
                       alpha: float = DEFAULT_ALPHA,
                       border: BorderFn = BorderFn(),
                       z_scale: float = DEFAULT_Z_SCALE) -> AnnotationSet:
    records = []
    for scan in recording.scans:
        records.extend(annotate_scan(trajs, scan, alpha, border, z_scale))
    return AnnotationSet(tuple(records), alpha, border, z_scale)


def binary_labels(records) -> dict:
    """Collapse weighted records to one object per detection.

    Maps (k, det_id) -> object_id of the highest-weight record; ties go to
    the smallest distance, then the lowest object id.
    """
    best = {}
    for r in records:
        key = (r.k, r.det_id)
        cur = best.get(key)
        if cur is None or (-r.rho, r.d2, r.object_id) < (-cur.rho, cur.d2, cur.object_id):
            best[key] = r
    return {key: r.object_id for key, r in best.items()}


def optimize_border(labeled: ManualLabelSet, trajs, recording: Recording,
                    candidates, alpha: float = DEFAULT_ALPHA,
                    z_scale: float = DEFAULT_Z_SCALE):
    """Pick the border function whose binary labels best match the reference.

    Scores each candidate's F1 against the manual labels; returns
    (best_candidate, table) where the table holds one row per candidate.
    Ties go to the candidate with the smaller mean band width.
    """
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    if not labeled.labels:
        raise ValueError("manual labels must be non-empty")

    table = []
    for cand in candidates:
        aset = annotate_recording(trajs, recording, alpha, cand, z_scale)
        pred = binary_labels(aset.records)
        mapping = map_object_ids(pred, labeled)
        mapped = {key: mapping.get(obj, -1) for key, obj in pred.items()}
        c = confusion(mapped, labeled, recording)
        p, r, f1 = precision_recall_f1(c)
        etas = [cand(track_features(pt, scan.ego))
                for scan in recording.scans
                for traj in trajs
                for pt in [traj.point_at(scan.k)] if pt is not None]
        mean_eta = sum(etas) / len(etas) if etas else cand.params[0]
        table.append({"border": cand, "precision": p, "recall": r,
                      "f1": f1, "mean_eta": mean_eta})
    best = max(enumerate(table), key=lambda it: (it[1]["f1"], -it[1]["mean_eta"], -it[0]))
    return best[1]["border"], table
