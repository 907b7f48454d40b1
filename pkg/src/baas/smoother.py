"""Turn supervised track selections into finalized ground-truth trajectories.

Pipeline per object: merge the source tracks' measurement histories,
re-filter with fixed association, fixed-interval smooth, re-estimate the
extent along the smoothed centroids, then fix orientation and size per
class. Merging never fuses track states directly; states are recomputed
from the combined measurements.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .io import Recording
from .stats import DegenerateMatrixError, cholesky_spd, symmetrize
from .tracker.config import TrackerConfig
from .tracker.eot import HypothesisSet
from .tracker.filter import (
    NumericalFailure,
    init_state,
    predict_extent,
    predict_state,
    rmm_update,
    update_state,
)
from .types import (
    ClassBounds,
    Extent,
    KinematicState,
    ObjectClass,
    ObjectTrajectory,
    TrajectoryPoint,
    VARIABLE_EXTENT_CLASSES,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SupervisionDecision:
    """Human review outcome: which tracks are real and how they combine.

    Every accepted track and every merge group becomes one object; the
    object id is the smallest source track id, which also keys the class
    assignment and any per-object size-bound override.
    """

    accepted: tuple = ()  # individually accepted track ids
    merge_groups: tuple = ()  # ((tid, tid, ...), ...)
    classes: dict = field(default_factory=dict)  # object key -> ObjectClass
    size_overrides: dict = field(default_factory=dict)  # key -> (lmin, lmax, wmin, wmax)

    def __post_init__(self):
        accepted = tuple(int(t) for t in self.accepted)
        groups = tuple(tuple(sorted(int(t) for t in g)) for g in self.merge_groups)
        seen = set()
        for g in groups:
            if not g:
                raise ValueError("merge groups must not be empty")
            for t in g:
                if t in seen:
                    raise ValueError(f"track {t} appears in more than one merge group")
                seen.add(t)
        overlap = seen & set(accepted)
        if overlap:
            raise ValueError(f"tracks {sorted(overlap)} both accepted singly and merged")
        object.__setattr__(self, "accepted", accepted)
        object.__setattr__(self, "merge_groups", groups)
        object.__setattr__(self, "classes", {int(k): ObjectClass(v) if not isinstance(v, ObjectClass) else v
                                             for k, v in self.classes.items()})
        object.__setattr__(self, "size_overrides",
                           {int(k): tuple(v) for k, v in self.size_overrides.items()})

    def units(self):
        """[(object_id, (track_ids...)), ...] sorted by object id."""
        units = [(t, (t,)) for t in self.accepted]
        units += [(min(g), g) for g in self.merge_groups]
        return sorted(units)

    def all_track_ids(self):
        out = set(self.accepted)
        for g in self.merge_groups:
            out.update(g)
        return out

    def validate_against(self, hypotheses: HypothesisSet):
        known = set(hypotheses.track_ids)
        missing = sorted(self.all_track_ids() - known)
        if missing:
            raise ValueError(f"decision references unknown track ids {missing}")


def merge_tracks(group, hypotheses: HypothesisSet) -> dict:
    """Union of per-scan detection assignments over a merge group.

    Returns {k: (det_id, ...)}; temporal gaps simply have no entry and the
    re-filter coasts through them.
    """
    group = list(group)
    if not group:
        raise ValueError("merge group must not be empty")
    merged = {}
    for tid in group:
        for k, ids in hypotheses.assignments(tid).items():
            merged.setdefault(k, set()).update(ids)
    return {k: tuple(sorted(ids)) for k, ids in sorted(merged.items())}


@dataclass
class ScanEstimate:
    """Per-scan output of the re-filter / smoother for one object."""

    k: int
    t: float
    mean: np.ndarray  # combined (x, y, vx, vy)
    cov: np.ndarray  # combined 4x4
    extent_x: np.ndarray  # raw re-estimated 2x2 extent
    nu: int  # assigned-detection count
    filtered_mean: np.ndarray
    filtered_cov: np.ndarray
    fallback: bool = False  # smoothing failed here; filtered estimate used


def _combine(means, covs, mu):
    """Moment-match a model bank to a single Gaussian."""
    m = sum(w * mi for w, mi in zip(mu, means))
    p = np.zeros((len(m), len(m)))
    for w, mi, pi in zip(mu, means, covs):
        d = mi - m
        p += w * (pi + np.outer(d, d))
    return m, symmetrize(p, rtol=np.inf)


def _kim_smoothed_mu(mus, cfg: TrackerConfig):
    """Backward recursion for smoothed model probabilities."""
    tm = cfg.transition_matrix
    out = [None] * len(mus)
    out[-1] = mus[-1]
    for i in range(len(mus) - 2, -1, -1):
        d = np.maximum(tm.T @ mus[i], 1e-300)
        w = mus[i] * (tm @ (out[i + 1] / d))
        out[i] = w / w.sum()
    return out


def refilter_and_smooth(measurements: dict, recording: Recording,
                        cfg: TrackerConfig, smooth: bool = True) -> list:
    """Fixed-association forward filter plus fixed-interval smoothing.

    ``measurements`` maps scan index to the det_ids assigned at that scan.
    Returns a ScanEstimate per scan of the object's span, coasting gaps.
    """
    if not measurements:
        raise ValueError("measurement sequence must not be empty")
    ks = sorted(measurements)
    k0, k1 = ks[0], ks[-1]
    scans = {s.k: s for s in recording.scans}

    first = scans[k0]
    dets0 = [first.detection(i) for i in measurements[k0]]
    state, extent = init_state(dets0, first.ego, cfg)
    state, extent = update_state(state, extent, dets0, first.ego, cfg)

    n_m = cfg.n_models
    steps = []  # per scan: dict of filter bookkeeping
    steps.append({
        "k": k0, "t": first.t, "state": state, "extent": extent,
        "nu": len(dets0), "pred": None,
    })

    prev_t = first.t
    for k in range(k0 + 1, k1 + 1):
        scan = scans[k]
        dt = scan.t - prev_t
        prev_t = scan.t
        pred_state, info = predict_state(state, dt, cfg)
        extent = predict_extent(extent, dt, cfg)
        det_ids = measurements.get(k, ())
        if det_ids:
            dets = [scan.detection(i) for i in det_ids]
            try:
                state, extent = update_state(pred_state, extent, dets, scan.ego, cfg)
            except NumericalFailure as exc:
                log.warning("scan %d: refilter update failed (%s); coasting", k, exc)
                state = pred_state
                det_ids = ()
        else:
            state = pred_state
        steps.append({
            "k": k, "t": scan.t, "state": state, "extent": extent,
            "nu": len(det_ids), "pred": info,
        })

    mus = [st["state"].mu for st in steps]
    mu_s = _kim_smoothed_mu(mus, cfg) if smooth else mus
    f_comb = [_combine(st["state"].means, st["state"].covs, st["state"].mu)
              for st in steps]
    fallbacks = [False] * len(steps)
    if smooth and len(steps) > 1:
        # fixed-interval recursion on the moment-matched model mixture. The
        # mixture of the mixing-stage states with the predicted model weights
        # equals the filtered mixture exactly, so filtered moments pair
        # consistently with the mixture cross-covariance built below.
        sm = [None] * len(steps)
        sm[-1] = f_comb[-1]
        for i in range(len(steps) - 2, -1, -1):
            info = steps[i + 1]["pred"]
            m_f, p_f = f_comb[i]
            m_p = sum(w * m for w, m in zip(info.cbar, info.pred_means))
            p_p = np.zeros_like(p_f)
            cross = np.zeros_like(p_f)
            for w, a, mp, pp, cj in zip(info.cbar, info.mixed_means,
                                        info.pred_means, info.pred_covs, info.crosses):
                dp = mp - m_p
                p_p += w * (pp + np.outer(dp, dp))
                cross += w * (cj + np.outer(a - m_f, dp))
            try:
                gain = np.linalg.solve(p_p.T, cross.T).T
                m_s = m_f + gain @ (sm[i + 1][0] - m_p)
                p_s = symmetrize(p_f + gain @ (sm[i + 1][1] - p_p) @ gain.T,
                                 rtol=np.inf)
                cholesky_spd(p_s)
                sm[i] = (m_s, p_s)
            except (DegenerateMatrixError, np.linalg.LinAlgError):
                sm[i] = f_comb[i]
                fallbacks[i] = True
    else:
        sm = f_comb

    # re-estimate the extent along the smoothed centroids
    out = []
    extent = Extent(np.eye(2) * cfg.init_extent, cfg.nu_init)
    prev_t = steps[0]["t"]
    for i, st in enumerate(steps):
        m_s, p_s = sm[i]
        extent = predict_extent(extent, st["t"] - prev_t, cfg)
        prev_t = st["t"]
        if st["nu"] > 0:
            scan = scans[st["k"]]
            dets = [scan.detection(d) for d in measurements[st["k"]]]
            zs = np.array([d.z for d in dets])
            rbar = sum(d.noise for d in dets) / len(dets)
            try:
                extent = rmm_update(m_s[:2], p_s[:2, :2], extent, zs, rbar, cfg)
            except DegenerateMatrixError as exc:
                log.warning("scan %d: extent re-estimation failed: %s", st["k"], exc)
        out.append(ScanEstimate(
            st["k"], st["t"], m_s[:4], symmetrize(p_s[:4, :4], rtol=np.inf),
            extent.X, st["nu"],
            st["state"].mean, st["state"].cov, fallbacks[i]))
    return out


def align_orientation(vx: float, vy: float, eta_v: float, prev_alpha: float) -> float:
    """Heading of motion when fast enough; otherwise hold the previous angle."""
    if math.hypot(vx, vy) > eta_v:
        return math.atan2(vy, vx)
    return prev_alpha


def average_extent(per_scan_lw, nu) -> tuple:
    """Detection-count weighted average of per-scan (length, width)."""
    lw = list(per_scan_lw)
    counts = np.asarray(list(nu), dtype=float)
    if len(lw) == 0 or len(lw) != len(counts):
        raise ValueError("per_scan_lw and nu must be equal-length and non-empty")
    total = counts.sum()
    if total <= 0:
        raise ValueError("total detection count must be positive")
    w = counts / total
    length = float(sum(wi * l for wi, (l, _) in zip(w, lw)))
    width = float(sum(wi * ww for wi, (_, ww) in zip(w, lw)))
    return length, width


def clamp_extent(cls: ObjectClass, length: float, width: float,
                 bounds: ClassBounds) -> tuple:
    """Clamp a size into the class interval; variable-extent classes pass through."""
    if not isinstance(cls, ObjectClass):
        raise ValueError(f"unknown class {cls!r}")
    if cls in VARIABLE_EXTENT_CLASSES:
        return length, width
    lmin, lmax, wmin, wmax = bounds.for_class(cls)
    return min(max(length, lmin), lmax), min(max(width, wmin), wmax)


def _ellipse_from_lw(length, width, alpha):
    c, s = math.cos(alpha), math.sin(alpha)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([(length / 2) ** 2, (width / 2) ** 2]) @ rot.T


def _extent_lw_angle(x: np.ndarray):
    w, v = np.linalg.eigh(symmetrize(x, rtol=np.inf))
    length = 2.0 * math.sqrt(max(w[1], 1e-12))
    width = 2.0 * math.sqrt(max(w[0], 1e-12))
    angle = math.atan2(v[1, 1], v[0, 1])
    return length, width, angle


@dataclass(frozen=True)
class FinalizeOptions:
    """Which post-processing stages to apply; all on for the final output."""

    smooth: bool = True
    align: bool = True
    fix_size: bool = True
    clamp: bool = True


def finalize(decision: SupervisionDecision, hypotheses: HypothesisSet,
             recording: Recording, cfg: TrackerConfig,
             bounds: ClassBounds | None = None,
             options: FinalizeOptions = FinalizeOptions()) -> list:
    """One finalized ObjectTrajectory per accepted track or merge group."""
    decision.validate_against(hypotheses)
    bounds = bounds or ClassBounds()
    out = []
    for object_id, track_ids in decision.units():
        cls = decision.classes.get(object_id, ObjectClass.OTHER)
        obj_bounds = bounds
        if object_id in decision.size_overrides:
            obj_bounds = ClassBounds({cls: decision.size_overrides[object_id]},
                                     bounds.eta_v)
        measurements = merge_tracks(track_ids, hypotheses)
        if not measurements:
            log.warning("object %d has no assigned detections; skipped", object_id)
            continue
        estimates = refilter_and_smooth(measurements, recording, cfg,
                                        smooth=options.smooth)
        out.append(_build_trajectory(object_id, cls, track_ids, estimates,
                                     obj_bounds, options))
    return out


def _build_trajectory(object_id, cls, track_ids, estimates, bounds,
                      options: FinalizeOptions) -> ObjectTrajectory:
    raw = [_extent_lw_angle(e.extent_x) for e in estimates]
    rigid = cls not in VARIABLE_EXTENT_CLASSES and cls is not ObjectClass.PEDESTRIAN

    alphas = []
    if options.align and rigid:
        # initial orientation from the extent before the object moves fast enough
        prev = raw[0][2]
        for e in estimates:
            prev = align_orientation(e.mean[2], e.mean[3], bounds.eta_v, prev)
            alphas.append(prev)
    else:
        alphas = [a for _, _, a in raw]

    fixed_lw = None
    if options.fix_size and cls not in VARIABLE_EXTENT_CLASSES:
        lw = [(l, w) for l, w, _ in raw]
        counts = [max(e.nu, 0) for e in estimates]
        if sum(counts) == 0:
            counts = [1] * len(estimates)
        fixed_lw = average_extent(lw, counts)
        if options.clamp:
            fixed_lw = clamp_extent(cls, *fixed_lw, bounds)

    points = []
    for e, (l_raw, w_raw, _), alpha in zip(estimates, raw, alphas):
        length, width = fixed_lw if fixed_lw is not None else (l_raw, w_raw)
        if fixed_lw is not None or (options.align and rigid):
            extent = _ellipse_from_lw(length, width, alpha)
        else:
            extent = e.extent_x
        points.append(TrajectoryPoint(
            e.k, e.t, float(e.mean[0]), float(e.mean[1]),
            float(e.mean[2]), float(e.mean[3]), e.cov, float(alpha),
            length, width, extent, e.nu))

    fixed = fixed_lw if fixed_lw is not None else (None, None)
    return ObjectTrajectory(object_id, cls, tuple(points),
                            fixed[0], fixed[1], tuple(track_ids))
