"""Domain types shared by every stage of the labeling pipeline.

All types are immutable after construction and validate their invariants
eagerly, so downstream code can assume well-formed values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .stats import DegenerateMatrixError, cholesky_spd, symmetrize


class ObjectClass(enum.Enum):
    PEDESTRIAN = "Pedestrian"
    PEDESTRIAN_GROUP = "PedestrianGroup"
    CYCLIST = "Cyclist"
    CAR = "Car"
    TRUCK = "Truck"
    OTHER = "Other"


#: Classes treated as rigid bodies oriented along their direction of motion.
RIGID_CLASSES = frozenset(
    {ObjectClass.CYCLIST, ObjectClass.CAR, ObjectClass.TRUCK}
)

#: Classes whose extent is kept per scan instead of being fixed.
VARIABLE_EXTENT_CLASSES = frozenset(
    {ObjectClass.PEDESTRIAN_GROUP, ObjectClass.OTHER}
)


class TrackStatus(enum.Enum):
    INITIALIZED = "initialized"
    UNCONFIDENT = "unconfident"
    VERIFIED = "verified"
    DELETED = "deleted"


_STATUS_ORDER = {
    TrackStatus.INITIALIZED: 0,
    TrackStatus.UNCONFIDENT: 1,
    TrackStatus.VERIFIED: 2,
}


def status_transition_ok(old: TrackStatus, new: TrackStatus) -> bool:
    """Lifecycle moves forward one level at a time; any status may be deleted."""
    if new is TrackStatus.DELETED:
        return True
    if old is TrackStatus.DELETED:
        return False
    return 0 <= _STATUS_ORDER[new] - _STATUS_ORDER[old] <= 1


def _frozen_array(a, shape) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("array has non-finite entries")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _frozen_spd(m, n: int) -> np.ndarray:
    arr = symmetrize(np.asarray(m, dtype=float))
    if arr.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got {arr.shape}")
    cholesky_spd(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Detection:
    """One radar return in the world frame: position, range-rate, noise."""

    det_id: int
    x: float
    y: float
    vr: float  # positive = receding from the sensor
    noise: np.ndarray  # 3x3 SPD covariance over (x, y, vr)

    def __post_init__(self):
        for v in (self.x, self.y, self.vr):
            if not math.isfinite(v):
                raise ValueError("detection coordinates must be finite")
        object.__setattr__(self, "noise", _frozen_spd(self.noise, 3))

    @property
    def z(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vr])

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class EgoPose:
    """Pose and motion of the recording vehicle in the world frame."""

    x: float
    y: float
    yaw: float  # radians, in (-pi, pi]
    v: float  # m/s along the heading
    yaw_rate: float  # rad/s
    sensor_offsets: tuple = ((0.0, 0.0, 0.0),)  # (dx, dy, boresight) per mount

    def __post_init__(self):
        vals = (self.x, self.y, self.yaw, self.v, self.yaw_rate)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("ego pose values must be finite")
        if not -math.pi < self.yaw <= math.pi:
            raise ValueError(f"yaw must lie in (-pi, pi], got {self.yaw}")
        object.__setattr__(self, "sensor_offsets", tuple(tuple(o) for o in self.sensor_offsets))

    @property
    def velocity(self) -> np.ndarray:
        return self.v * np.array([math.cos(self.yaw), math.sin(self.yaw)])

    def sensor_position(self, mount: int = 0) -> np.ndarray:
        dx, dy, _ = self.sensor_offsets[mount]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([self.x + c * dx - s * dy, self.y + s * dx + c * dy])

    def sensor_velocity(self, mount: int = 0) -> np.ndarray:
        # rigid-body velocity of the mount: v_ego + yaw_rate x lever arm
        lever = self.sensor_position(mount) - np.array([self.x, self.y])
        return self.velocity + self.yaw_rate * np.array([-lever[1], lever[0]])


@dataclass(frozen=True)
class RadarScan:
    """All detections of one sensor cycle plus the ego pose at scan time."""

    k: int
    t: float
    ego: EgoPose
    detections: tuple

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("scan index must be non-negative")
        if not math.isfinite(self.t):
            raise ValueError("scan time must be finite")
        dets = tuple(self.detections)
        ids = [d.det_id for d in dets]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate det_id in scan {self.k}")
        object.__setattr__(self, "detections", dets)

    def detection(self, det_id: int) -> Detection:
        for d in self.detections:
            if d.det_id == det_id:
                return d
        raise KeyError(det_id)


MU_TOL = 1e-9


@dataclass(frozen=True)
class KinematicState:
    """Bank of per-model states with mixing probabilities.

    Every model shares the leading (x, y, vx, vy) components; models may
    carry extra components (e.g. turn rate) beyond them.
    """

    means: tuple  # per-model 1D arrays
    covs: tuple  # per-model SPD matrices
    mu: np.ndarray  # model probabilities

    def __post_init__(self):
        means = tuple(_frozen_array(m, (np.asarray(m).shape[0],)) for m in self.means)
        covs = tuple(_frozen_spd(c, means[i].shape[0]) for i, c in enumerate(self.covs))
        mu = _frozen_array(self.mu, (len(means),))
        if np.any(mu < -MU_TOL) or np.any(mu > 1 + MU_TOL):
            raise ValueError("model probabilities must lie in [0, 1]")
        if abs(mu.sum() - 1.0) > MU_TOL:
            raise ValueError(f"model probabilities sum to {mu.sum()}, not 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "mu", mu)

    @property
    def mean(self) -> np.ndarray:
        """Probability-weighted combined (x, y, vx, vy)."""
        out = np.zeros(4)
        for w, m in zip(self.mu, self.means):
            out += w * m[:4]
        return out

    @property
    def cov(self) -> np.ndarray:
        """Combined 4x4 covariance including spread of the model means."""
        xbar = self.mean
        out = np.zeros((4, 4))
        for w, m, p in zip(self.mu, self.means, self.covs):
            d = m[:4] - xbar
            out += w * (p[:4, :4] + np.outer(d, d))
        return symmetrize(out, rtol=np.inf)

    @property
    def x(self) -> float:
        return float(self.mean[0])

    @property
    def y(self) -> float:
        return float(self.mean[1])

    @property
    def vx(self) -> float:
        return float(self.mean[2])

    @property
    def vy(self) -> float:
        return float(self.mean[3])


#: Upper bound on extent eigenvalues (m^2); semi-axis cap of 50 m.
EXTENT_MAX_EIGENVALUE = 2500.0


@dataclass(frozen=True)
class Extent:
    """Elliptical object extent as an SPD matrix with a confidence parameter."""

    X: np.ndarray  # 2x2 SPD, m^2
    nu_rmm: float  # degrees-of-freedom style confidence, > 3

    def __post_init__(self):
        x = _frozen_spd(self.X, 2)
        if self.nu_rmm <= 3.0:
            raise ValueError(f"nu_rmm must exceed 3, got {self.nu_rmm}")
        if np.linalg.eigvalsh(x).max() > EXTENT_MAX_EIGENVALUE:
            raise ValueError("extent eigenvalue exceeds the global bound")
        object.__setattr__(self, "X", x)

    def axes_lw(self) -> tuple:
        """Full length/width of the ellipse: 2*sqrt of the eigenvalues."""
        w = np.linalg.eigvalsh(self.X)
        return 2.0 * math.sqrt(w[1]), 2.0 * math.sqrt(w[0])

    def principal_angle(self) -> float:
        """Orientation of the major axis, in (-pi, pi]."""
        w, v = np.linalg.eigh(self.X)
        major = v[:, 1]
        return math.atan2(major[1], major[0])


@dataclass(frozen=True)
class TrackHypothesis:
    """One tracked object hypothesis at a given scan."""

    track_id: int
    state: KinematicState
    extent: Extent
    status: TrackStatus
    birth_k: int
    last_k: int
    assoc_counts: tuple = ()  # ((k, nu), ...) assigned-detection counts

    def __post_init__(self):
        if self.birth_k > self.last_k:
            raise ValueError("birth_k must not exceed last_k")
        object.__setattr__(self, "assoc_counts", tuple(tuple(kv) for kv in self.assoc_counts))


@dataclass(frozen=True)
class ClassBounds:
    """Per-class size limits plus the speed threshold for orientation alignment."""

    bounds: dict = field(default_factory=dict)  # class -> (lmin, lmax, wmin, wmax)
    eta_v: float = 1.0  # m/s

    DEFAULT = {
        ObjectClass.PEDESTRIAN: (0.3, 1.0, 0.3, 1.0),
        ObjectClass.CYCLIST: (1.2, 2.2, 0.3, 1.0),
        ObjectClass.CAR: (3.0, 5.5, 1.5, 2.2),
        ObjectClass.TRUCK: (5.0, 20.0, 2.0, 3.0),
    }

    def __post_init__(self):
        merged = dict(self.DEFAULT)
        merged.update(self.bounds)
        for cls, (lmin, lmax, wmin, wmax) in merged.items():
            if not (0 < lmin <= lmax and 0 < wmin <= wmax):
                raise ValueError(f"invalid size bounds for {cls}")
        object.__setattr__(self, "bounds", merged)

    def for_class(self, cls: ObjectClass) -> tuple:
        return self.bounds[cls]


@dataclass(frozen=True)
class TrajectoryPoint:
    """Smoothed per-scan sample of a finalized object."""

    k: int
    t: float
    x: float
    y: float
    vx: float
    vy: float
    cov: np.ndarray  # 4x4 over (x, y, vx, vy)
    alpha: float  # orientation, radians
    length: float
    width: float
    extent: np.ndarray  # 2x2 scan-time extent used for annotation
    nu: int  # assigned-detection count at this scan

    def __post_init__(self):
        object.__setattr__(self, "cov", _frozen_spd(self.cov, 4))
        object.__setattr__(self, "extent", _frozen_spd(self.extent, 2))


@dataclass(frozen=True)
class ObjectTrajectory:
    """Supervised, smoothed, finalized ground-truth object over its lifespan."""

    object_id: int
    cls: ObjectClass
    points: tuple  # TrajectoryPoint, ordered by k
    length: float | None  # fixed size; None for variable-extent classes
    width: float | None
    source_track_ids: tuple = ()

    def __post_init__(self):
        pts = tuple(self.points)
        if pts and any(a.k >= b.k for a, b in zip(pts, pts[1:])):
            raise ValueError("trajectory points must be strictly increasing in k")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "source_track_ids", tuple(self.source_track_ids))

    @property
    def k_start(self) -> int:
        return self.points[0].k

    @property
    def k_end(self) -> int:
        return self.points[-1].k

    def point_at(self, k: int) -> TrajectoryPoint | None:
        for p in self.points:
            if p.k == k:
                return p
        return None


class AnnotationRegion(enum.Enum):
    CORE = "core"
    BORDER = "border"


@dataclass(frozen=True)
class AnnotationRecord:
    """Per-detection label with its annotation weight."""

    k: int
    det_id: int
    object_id: int
    rho: float
    region: AnnotationRegion
    d2: float  # squared gating distance, used for tie-breaking

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.region is AnnotationRegion.CORE and self.rho != 1.0:
            raise ValueError("core records must carry rho = 1")
        if self.d2 < 0:
            raise ValueError("d2 must be non-negative")


__all__ = [
    "AnnotationRecord",
    "AnnotationRegion",
    "ClassBounds",
    "DegenerateMatrixError",
    "Detection",
    "EgoPose",
    "Extent",
    "EXTENT_MAX_EIGENVALUE",
    "KinematicState",
    "ObjectClass",
    "ObjectTrajectory",
    "RadarScan",
    "RIGID_CLASSES",
    "TrackHypothesis",
    "TrackStatus",
    "TrajectoryPoint",
    "VARIABLE_EXTENT_CLASSES",
    "status_transition_ok",
]
