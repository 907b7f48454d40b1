"""File formats and synthetic scenario generation.

All artifacts are line-delimited JSON (UTF-8, one record per line) so they
stream, diff and round-trip exactly. Detections are stored already
ego-compensated into the world frame anchored at the recording's first ego
pose; range-rate stays the physical sensor-relative measurement.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .types import (
    AnnotationRecord,
    AnnotationRegion,
    Detection,
    EgoPose,
    ObjectClass,
    ObjectTrajectory,
    RadarScan,
    TrajectoryPoint,
)


class ParseError(ValueError):
    """File violates the record schema; carries the offending line number."""

    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


class ValidationError(ValueError):
    """Parsed records violate a cross-record invariant."""


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: str = "synthetic"
    sensor_count: int = 1
    scan_rate: float = 10.0


@dataclass(frozen=True)
class Recording:
    meta: RecordingMeta
    scans: tuple

    def __post_init__(self):
        scans = tuple(self.scans)
        for i, s in enumerate(scans):
            if s.k != i:
                raise ValidationError(f"scan indices must be contiguous from 0, got {s.k} at {i}")
        for a, b in zip(scans, scans[1:]):
            if b.t <= a.t:
                raise ValidationError(f"scan timestamps must be strictly increasing at k={b.k}")
        object.__setattr__(self, "scans", scans)

    def __len__(self):
        return len(self.scans)


@dataclass(frozen=True)
class ManualLabelSet:
    """Binary detection labels: each det_id maps to at most one object per scan."""

    labels: dict = field(default_factory=dict)  # k -> ((det_id, obj), ...)
    classes: dict = field(default_factory=dict)  # obj -> ObjectClass

    def __post_init__(self):
        labels = {}
        for k, pairs in self.labels.items():
            pairs = tuple((int(d), int(o)) for d, o in pairs)
            ids = [d for d, _ in pairs]
            if len(ids) != len(set(ids)):
                raise ValidationError(f"det_id labeled twice in scan {k}")
            labels[int(k)] = pairs
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "classes", dict(self.classes))

    def scan_labels(self, k: int) -> dict:
        return dict(self.labels.get(k, ()))

    def object_ids(self):
        out = set()
        for pairs in self.labels.values():
            out.update(o for _, o in pairs if o >= 0)
        return sorted(out)


# ---------------------------------------------------------------------------
# serialization


def _atomic_write(path, text: str):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield i, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, i, f"invalid JSON: {exc}") from exc


def save_recording(rec: Recording, path):
    lines = [json.dumps({
        "recording_id": rec.meta.recording_id,
        "sensor_count": rec.meta.sensor_count,
        "scan_rate": rec.meta.scan_rate,
    })]
    for s in rec.scans:
        lines.append(json.dumps({
            "k": s.k,
            "t": s.t,
            "ego": {"x": s.ego.x, "y": s.ego.y, "yaw": s.ego.yaw,
                    "v": s.ego.v, "yaw_rate": s.ego.yaw_rate},
            "detections": [
                {"id": d.det_id, "x": d.x, "y": d.y, "vr": d.vr,
                 "R": [float(v) for v in d.noise.ravel()]}
                for d in s.detections
            ],
        }))
    _atomic_write(path, "\n".join(lines) + "\n")


def load_recording(path) -> Recording:
    meta = RecordingMeta()
    scans = []
    for i, obj in _read_lines(path):
        if "recording_id" in obj:
            meta = RecordingMeta(obj["recording_id"], int(obj["sensor_count"]),
                                 float(obj["scan_rate"]))
            continue
        try:
            ego = EgoPose(**obj["ego"])
            dets = tuple(
                Detection(d["id"], d["x"], d["y"], d["vr"],
                          np.array(d["R"], dtype=float).reshape(3, 3))
                for d in obj["detections"]
            )
            scans.append(RadarScan(int(obj["k"]), float(obj["t"]), ego, dets))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, i, str(exc)) from exc
    return Recording(meta, tuple(scans))


def save_labels(ls: ManualLabelSet, path):
    lines = []
    classes_emitted = False
    for k in sorted(ls.labels):
        rec = {"k": k, "labels": [{"id": d, "obj": o} for d, o in ls.labels[k]]}
        if not classes_emitted:
            rec["classes"] = {str(o): c.value for o, c in sorted(ls.classes.items())}
            classes_emitted = True
        lines.append(json.dumps(rec))
    if not classes_emitted and ls.classes:
        lines.append(json.dumps({"k": -1, "labels": [],
                                 "classes": {str(o): c.value for o, c in sorted(ls.classes.items())}}))
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def load_labels(path) -> ManualLabelSet:
    labels = {}
    classes = {}
    for i, obj in _read_lines(path):
        try:
            k = int(obj["k"])
            pairs = tuple((int(p["id"]), int(p["obj"])) for p in obj["labels"])
            for o, c in obj.get("classes", {}).items():
                classes[int(o)] = ObjectClass(c)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, i, str(exc)) from exc
        if k < 0:
            continue
        if k in labels:
            raise ParseError(path, i, f"duplicate label record for scan {k}")
        labels[k] = pairs
    return ManualLabelSet(labels, classes)


def cross_check_labels(ls: ManualLabelSet, rec: Recording) -> list:
    """Warnings for labels referencing detections absent from the recording."""
    warnings = []
    by_k = {s.k: {d.det_id for d in s.detections} for s in rec.scans}
    for k, pairs in sorted(ls.labels.items()):
        known = by_k.get(k, set())
        for det_id, obj in pairs:
            if det_id not in known:
                warnings.append(f"scan {k}: label for unknown det_id {det_id} (object {obj})")
    return warnings


def save_trajectories(trajs, path):
    lines = []
    for tr in trajs:
        lines.append(json.dumps({
            "object_id": tr.object_id,
            "class": tr.cls.value,
            "k_start": tr.k_start if tr.points else -1,
            "k_end": tr.k_end if tr.points else -1,
            "l": tr.length,
            "w": tr.width,
            "source_track_ids": list(tr.source_track_ids),
            "states": [
                {"k": p.k, "t": p.t, "x": p.x, "y": p.y, "vx": p.vx, "vy": p.vy,
                 "P": [float(v) for v in p.cov.ravel()],
                 "alpha": p.alpha, "l": p.length, "w": p.width,
                 "X": [float(v) for v in p.extent.ravel()], "nu": p.nu}
                for p in tr.points
            ],
        }))
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def load_trajectories(path) -> list:
    out = []
    for i, obj in _read_lines(path):
        try:
            pts = tuple(
                TrajectoryPoint(
                    int(p["k"]), float(p["t"]), float(p["x"]), float(p["y"]),
                    float(p["vx"]), float(p["vy"]),
                    np.array(p["P"], dtype=float).reshape(4, 4),
                    float(p["alpha"]), float(p["l"]), float(p["w"]),
                    np.array(p["X"], dtype=float).reshape(2, 2), int(p["nu"]))
                for p in obj["states"]
            )
            out.append(ObjectTrajectory(
                int(obj["object_id"]), ObjectClass(obj["class"]), pts,
                obj["l"], obj["w"], tuple(obj["source_track_ids"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, i, str(exc)) from exc
    return out


def save_annotations(records, path):
    lines = [json.dumps({
        "k": r.k, "det_id": r.det_id, "object_id": r.object_id,
        "rho": r.rho, "region": r.region.value, "d2": r.d2,
    }) for r in records]
    _atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def load_annotations(path) -> list:
    out = []
    for i, obj in _read_lines(path):
        try:
            out.append(AnnotationRecord(
                int(obj["k"]), int(obj["det_id"]), int(obj["object_id"]),
                float(obj["rho"]), AnnotationRegion(obj["region"]), float(obj["d2"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, i, str(exc)) from exc
    return out


# ---------------------------------------------------------------------------
# synthetic scenarios


#: Representative footprint (length, width) per class for generated objects.
CLASS_FOOTPRINT = {
    ObjectClass.PEDESTRIAN: (0.6, 0.6),
    ObjectClass.PEDESTRIAN_GROUP: (2.5, 2.5),
    ObjectClass.CYCLIST: (1.8, 0.6),
    ObjectClass.CAR: (4.5, 1.8),
    ObjectClass.TRUCK: (8.0, 2.5),
    ObjectClass.OTHER: (2.0, 2.0),
}


@dataclass(frozen=True)
class ObjectScript:
    """Scripted ground-truth object: class, lifetime and a timed waypoint path."""

    cls: ObjectClass
    birth_t: float
    death_t: float
    waypoints: tuple  # ((t, x, y), ...), t strictly increasing
    lam: float = 4.0  # mean detections per scan
    size: tuple | None = None  # (l, w); class footprint when None

    def __post_init__(self):
        wps = tuple((float(t), float(x), float(y)) for t, x, y in self.waypoints)
        if len(wps) < 1:
            raise ValueError("at least one waypoint required")
        if any(a[0] >= b[0] for a, b in zip(wps, wps[1:])):
            raise ValueError("waypoint times must be strictly increasing")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.birth_t >= self.death_t:
            raise ValueError("birth_t must precede death_t")
        object.__setattr__(self, "waypoints", wps)

    def state_at(self, t: float):
        """(position, velocity) by linear interpolation along the waypoints."""
        wps = self.waypoints
        if len(wps) == 1 or t <= wps[0][0]:
            if len(wps) == 1:
                return np.array(wps[0][1:]), np.zeros(2)
            t = max(t, wps[0][0])
        if t >= wps[-1][0]:
            a, b = wps[-2], wps[-1]
        else:
            a = next(w for w, nxt in zip(wps, wps[1:]) if w[0] <= t < nxt[0])
            b = wps[wps.index(a) + 1]
        dt = b[0] - a[0]
        vel = np.array([(b[1] - a[1]) / dt, (b[2] - a[2]) / dt])
        tt = min(max(t, wps[0][0]), wps[-1][0])
        pos = np.array([a[1], a[2]]) + vel * (tt - a[0])
        return pos, vel

    def footprint(self):
        return self.size if self.size is not None else CLASS_FOOTPRINT[self.cls]


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    duration: float = 10.0
    scan_rate: float = 10.0
    objects: tuple = ()
    clutter_rate: float = 0.0  # mean clutter detections per scan
    sigma_pos: float = 0.15
    sigma_vr: float = 0.1
    fov_range: float = 150.0
    world_bounds: float = 200.0  # |x|,|y| limit for scripted paths
    ego_waypoints: tuple | None = None  # ((t, x, y), ...) or None for static ego

    def __post_init__(self):
        if self.clutter_rate < 0 or self.sigma_pos < 0 or self.sigma_vr < 0:
            raise ValueError("rates and noise levels must be non-negative")
        if self.scan_rate <= 0 or self.duration <= 0:
            raise ValueError("duration and scan rate must be positive")
        object.__setattr__(self, "objects", tuple(self.objects))


class ConfigError(ValueError):
    pass


def _ellipse_matrix(length, width, alpha):
    c, s = math.cos(alpha), math.sin(alpha)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([(length / 2) ** 2, (width / 2) ** 2]) @ rot.T


def _range_rate(pos, vel, ego: EgoPose):
    rel = pos - ego.sensor_position()
    rng = np.linalg.norm(rel)
    if rng < 1e-9:
        return 0.0
    u = rel / rng
    return float((vel - ego.sensor_velocity()) @ u)


def generate_scenario(cfg: SynthConfig):
    """Deterministic synthetic (Recording, ManualLabelSet, ground truth) triple."""
    rng = np.random.default_rng(cfg.seed)
    n_scans = int(round(cfg.duration * cfg.scan_rate))
    dt = 1.0 / cfg.scan_rate

    for script in cfg.objects:
        for _, x, y in script.waypoints:
            if abs(x) > cfg.world_bounds or abs(y) > cfg.world_bounds:
                raise ConfigError(f"waypoint ({x}, {y}) outside world bounds")

    ego_script = None
    if cfg.ego_waypoints is not None:
        ego_script = ObjectScript(ObjectClass.OTHER, -1.0, cfg.duration + 1.0,
                                  cfg.ego_waypoints, lam=1.0)

    r_floor = np.diag([max(cfg.sigma_pos, 0.05) ** 2,
                       max(cfg.sigma_pos, 0.05) ** 2,
                       max(cfg.sigma_vr, 0.05) ** 2])

    scans = []
    labels = {}
    classes = {}
    gt_points = {i: [] for i in range(len(cfg.objects))}
    gt_counts = {i: [] for i in range(len(cfg.objects))}

    for k in range(n_scans):
        t = k * dt
        if ego_script is not None:
            epos, evel = ego_script.state_at(t)
            yaw = math.atan2(evel[1], evel[0]) if np.linalg.norm(evel) > 1e-9 else 0.0
            ego = EgoPose(float(epos[0]), float(epos[1]), yaw,
                          float(np.linalg.norm(evel)), 0.0)
        else:
            ego = EgoPose(0.0, 0.0, 0.0, 0.0, 0.0)

        dets = []
        pairs = []
        det_id = 0
        for oid, script in enumerate(cfg.objects):
            if not (script.birth_t <= t <= script.death_t):
                continue
            pos, vel = script.state_at(t)
            if np.linalg.norm(pos - ego.sensor_position()) > cfg.fov_range:
                continue
            speed = np.linalg.norm(vel)
            alpha = math.atan2(vel[1], vel[0]) if speed > 1e-9 else 0.0
            length, width = script.footprint()
            n_det = int(rng.poisson(script.lam))
            for _ in range(n_det):
                # uniform draw over the extent ellipse
                phi = rng.uniform(0, 2 * math.pi)
                rad = math.sqrt(rng.uniform())
                local = np.array([rad * math.cos(phi) * length / 2,
                                  rad * math.sin(phi) * width / 2])
                c, s = math.cos(alpha), math.sin(alpha)
                offset = np.array([c * local[0] - s * local[1],
                                   s * local[0] + c * local[1]])
                p = pos + offset + rng.normal(0.0, cfg.sigma_pos, 2)
                vr = _range_rate(pos + offset, vel, ego) + rng.normal(0.0, cfg.sigma_vr)
                dets.append(Detection(det_id, float(p[0]), float(p[1]), float(vr), r_floor))
                pairs.append((det_id, oid))
                det_id += 1
            classes[oid] = script.cls
            gt_points[oid].append((k, t, pos, vel, alpha, length, width))
            gt_counts[oid].append(n_det)

        n_clutter = int(rng.poisson(cfg.clutter_rate))
        for _ in range(n_clutter):
            az = rng.uniform(-math.pi, math.pi)
            rng_m = cfg.fov_range * math.sqrt(rng.uniform())
            p = ego.sensor_position() + rng_m * np.array([math.cos(az), math.sin(az)])
            vr = _range_rate(p, np.zeros(2), ego) + rng.normal(0.0, cfg.sigma_vr)
            dets.append(Detection(det_id, float(p[0]), float(p[1]), float(vr), r_floor))
            pairs.append((det_id, -1))
            det_id += 1

        scans.append(RadarScan(k, t, ego, tuple(dets)))
        labels[k] = tuple(pairs)

    trajectories = []
    for oid, script in enumerate(cfg.objects):
        pts = []
        for (k, t, pos, vel, alpha, length, width), n_det in zip(gt_points[oid], gt_counts[oid]):
            pts.append(TrajectoryPoint(
                k, t, float(pos[0]), float(pos[1]), float(vel[0]), float(vel[1]),
                np.diag([1e-4] * 4), alpha, length, width,
                _ellipse_matrix(length, width, alpha), n_det))
        if not pts:
            continue
        fixed = script.cls not in (ObjectClass.PEDESTRIAN_GROUP, ObjectClass.OTHER)
        length, width = script.footprint()
        trajectories.append(ObjectTrajectory(
            oid, script.cls, tuple(pts),
            length if fixed else None, width if fixed else None, ()))

    rec = Recording(RecordingMeta("synthetic", 1, cfg.scan_rate), tuple(scans))
    return rec, ManualLabelSet(labels, classes), trajectories
