"""Adaptive clustering: joint gating-based association plus density
clustering of the leftover detections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..stats import DegenerateMatrixError, chi2_quantile
from ..types import RadarScan
from .config import TrackerConfig
from .filter import gate_distance_sq, gate_projection


@dataclass(frozen=True)
class ScanAssociation:
    """Per-scan partition of detections into track assignments and leftovers."""

    k: int
    track_assignments: dict = field(default_factory=dict)  # tid -> (det_id, ...)
    leftover: tuple = ()  # ((det_id, ...), ...)

    def __post_init__(self):
        assignments = {int(t): tuple(ids) for t, ids in self.track_assignments.items()}
        leftover = tuple(tuple(c) for c in self.leftover)
        seen = set()
        for ids in list(assignments.values()) + list(leftover):
            for i in ids:
                if i in seen:
                    raise ValueError(f"det_id {i} assigned more than once in scan {self.k}")
                seen.add(i)
        object.__setattr__(self, "track_assignments", assignments)
        object.__setattr__(self, "leftover", leftover)

    def all_assigned(self):
        out = set()
        for ids in self.track_assignments.values():
            out.update(ids)
        for c in self.leftover:
            out.update(c)
        return out


def density_clusters(points: np.ndarray, ids, eps: float, min_size: int):
    """Single-linkage components of the eps-neighborhood graph (DBSCAN with
    min_samples=1); components below min_size are dropped."""
    n = len(ids)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(points[i] - points[j]) <= eps:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(ids[i])
    clusters = [tuple(sorted(g)) for g in groups.values() if len(g) >= min_size]
    return sorted(clusters)


def adaptive_cluster(scan: RadarScan, predicted_tracks, cfg: TrackerConfig) -> ScanAssociation:
    """Associate detections to predicted tracks by the core gate; cluster the rest.

    A detection inside the gate of several tracks goes to the closest one by
    gating distance, ties to the lowest track id.
    """
    gate = chi2_quantile(3, cfg.alpha_gate)
    projections = {}
    for tid in sorted(predicted_tracks):
        tr = predicted_tracks[tid]
        try:
            zhat, s_ut, _ = gate_projection(tr.state, scan.ego)
        except Exception:
            continue  # numerically broken track cannot gate anything
        projections[tid] = (zhat, s_ut, tr.extent)

    assignments = {tid: [] for tid in projections}
    ungated_ids, ungated_pts = [], []
    for det in scan.detections:
        best = None
        for tid, (zhat, s_ut, extent) in projections.items():
            try:
                d2 = gate_distance_sq(zhat, s_ut, det, extent, cfg)
            except DegenerateMatrixError:
                continue
            if d2 <= gate and (best is None or d2 < best[0]):
                best = (d2, tid)
        if best is not None:
            assignments[best[1]].append(det.det_id)
        else:
            ungated_ids.append(det.det_id)
            ungated_pts.append(det.pos)

    min_size = 1 if cfg.low_confidence else cfg.min_cluster_size
    leftover = density_clusters(np.array(ungated_pts) if ungated_pts else np.empty((0, 2)),
                                ungated_ids, cfg.eps, min_size)
    return ScanAssociation(
        scan.k,
        {tid: tuple(ids) for tid, ids in assignments.items() if ids},
        tuple(leftover),
    )
