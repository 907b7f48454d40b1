"""Unscented IMM filtering with a random-matrix extent update.

State per model is [x, y, vx, vy, omega]; the turn rate is carried by every
model so mixing never changes dimension. Motion models:

  cv  - constant velocity, turn rate held constant and unused
  ct  - coordinated turn driven by the turn-rate component
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..stats import DegenerateMatrixError, cholesky_spd, mahalanobis_sq, symmetrize
from ..types import Detection, EgoPose, Extent, KinematicState
from .config import TrackerConfig

STATE_DIM = 5


class NumericalFailure(RuntimeError):
    """A covariance lost positive definiteness during filtering."""


# ---------------------------------------------------------------------------
# motion models


def f_cv(x: np.ndarray, dt: float) -> np.ndarray:
    out = x.copy()
    out[0] += x[2] * dt
    out[1] += x[3] * dt
    return out


def f_ct(x: np.ndarray, dt: float) -> np.ndarray:
    w = x[4]
    if abs(w) < 1e-6:
        return f_cv(x, dt)
    swt, cwt = math.sin(w * dt), math.cos(w * dt)
    out = np.empty(STATE_DIM)
    out[0] = x[0] + (x[2] * swt - x[3] * (1 - cwt)) / w
    out[1] = x[1] + (x[2] * (1 - cwt) + x[3] * swt) / w
    out[2] = x[2] * cwt - x[3] * swt
    out[3] = x[2] * swt + x[3] * cwt
    out[4] = w
    return out


_MODEL_FN = {"cv": f_cv, "ct": f_ct}


def process_noise(model: str, dt: float, cfg: TrackerConfig) -> np.ndarray:
    sa = cfg.sigma_a_cv if model == "cv" else cfg.sigma_a_ct
    q = np.zeros((STATE_DIM, STATE_DIM))
    q2, q3, q4 = dt * dt, dt ** 3 / 2, dt ** 4 / 4
    for pos, vel in ((0, 2), (1, 3)):
        q[pos, pos] = sa * sa * q4
        q[pos, vel] = q[vel, pos] = sa * sa * q3
        q[vel, vel] = sa * sa * q2
    q[4, 4] = (cfg.sigma_omega ** 2 if model == "ct" else 1e-8) * dt
    return q


# ---------------------------------------------------------------------------
# unscented transform (symmetric 2n+1 set, kappa = 1 keeps weights positive)

_UT_KAPPA = 1.0


def sigma_points(mean: np.ndarray, cov: np.ndarray):
    n = mean.shape[0]
    lam = _UT_KAPPA
    try:
        chol = cholesky_spd((n + lam) * cov)
    except DegenerateMatrixError as exc:
        raise NumericalFailure(str(exc)) from exc
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    for i in range(n):
        pts[1 + i] = mean + chol[:, i]
        pts[1 + n + i] = mean - chol[:, i]
    w = np.full(2 * n + 1, 1.0 / (2 * (n + lam)))
    w[0] = lam / (n + lam)
    return pts, w


def ut_transform(pts_in, w, pts_out):
    """Mean/cov of transformed points plus input-output cross-covariance."""
    mean_in = w @ pts_in
    mean_out = w @ pts_out
    di = pts_in - mean_in
    do = pts_out - mean_out
    cov = (do.T * w) @ do
    cross = (di.T * w) @ do
    return mean_out, symmetrize(cov, rtol=np.inf), cross


# ---------------------------------------------------------------------------
# measurement model


def measure(x: np.ndarray, ego: EgoPose) -> np.ndarray:
    """(x, y, predicted range-rate) for a kinematic state."""
    rel = x[:2] - ego.sensor_position()
    rng = np.linalg.norm(rel)
    if rng < 1e-9:
        return np.array([x[0], x[1], 0.0])
    u = rel / rng
    vr = (x[2:4] - ego.sensor_velocity()) @ u
    return np.array([x[0], x[1], vr])


def predict_measurement(mean, cov, ego):
    """UT projection of a state Gaussian into (x, y, vr) measurement space."""
    pts, w = sigma_points(mean, cov)
    zs = np.array([measure(p, ego) for p in pts])
    return ut_transform(pts, w, zs)


def gating_noise(extent_x: np.ndarray, r: np.ndarray, z_scale: float) -> np.ndarray:
    """Extent-plus-sensor spread: blockdiag(z*X + R_pos, R_vr)."""
    y = np.zeros((3, 3))
    y[:2, :2] = z_scale * extent_x + r[:2, :2]
    y[2, 2] = r[2, 2]
    return y


# ---------------------------------------------------------------------------
# IMM steps


@dataclass
class PredictInfo:
    """Per-model bookkeeping of one prediction, consumed by the smoother."""

    mixed_means: list
    mixed_covs: list
    pred_means: list
    pred_covs: list
    crosses: list  # Cov(x_k, x_k+1 | k) per model
    cbar: np.ndarray


def imm_mix(state: KinematicState, cfg: TrackerConfig):
    tm = cfg.transition_matrix
    mu = state.mu
    cbar = tm.T @ mu
    cbar = np.maximum(cbar, 1e-300)
    mixed_means, mixed_covs = [], []
    for j in range(cfg.n_models):
        w = tm[:, j] * mu / cbar[j]
        m = sum(wi * mi for wi, mi in zip(w, state.means))
        p = np.zeros((STATE_DIM, STATE_DIM))
        for wi, mi, pi in zip(w, state.means, state.covs):
            d = mi - m
            p += wi * (pi + np.outer(d, d))
        mixed_means.append(m)
        mixed_covs.append(symmetrize(p, rtol=np.inf))
    return mixed_means, mixed_covs, cbar / cbar.sum()


def predict_state(state: KinematicState, dt: float, cfg: TrackerConfig):
    """IMM mixing followed by an unscented propagation of every model."""
    mixed_means, mixed_covs, cbar = imm_mix(state, cfg)
    pred_means, pred_covs, crosses = [], [], []
    for model, m, p in zip(cfg.models, mixed_means, mixed_covs):
        pts, w = sigma_points(m, p)
        fn = _MODEL_FN[model]
        out = np.array([fn(pt, dt) for pt in pts])
        m2, p2, cross = ut_transform(pts, w, out)
        p2 = p2 + process_noise(model, dt, cfg)
        pred_means.append(m2)
        pred_covs.append(symmetrize(p2, rtol=np.inf))
        crosses.append(cross)
    new_state = KinematicState(tuple(pred_means), tuple(pred_covs), cbar)
    info = PredictInfo(mixed_means, mixed_covs, pred_means, pred_covs, crosses, cbar)
    return new_state, info


def predict_extent(extent: Extent, dt: float, cfg: TrackerConfig) -> Extent:
    """Confidence decay leaving the expected extent unchanged."""
    decay = math.exp(-dt / cfg.tau_rmm)
    nu = 3.0 + (extent.nu_rmm - 3.0) * decay
    return Extent(extent.X, max(nu, 3.0 + 1e-6))


def _sqrt_spd(m: np.ndarray) -> np.ndarray:
    return cholesky_spd(m)


def _clip_extent(x: np.ndarray, cfg: TrackerConfig) -> np.ndarray:
    from ..types import EXTENT_MAX_EIGENVALUE

    w, v = np.linalg.eigh(symmetrize(x, rtol=np.inf))
    w = np.clip(w, cfg.extent_floor, EXTENT_MAX_EIGENVALUE)
    return symmetrize(v @ np.diag(w) @ v.T, rtol=np.inf)


def update_state(state: KinematicState, extent: Extent, detections,
                 ego: EgoPose, cfg: TrackerConfig):
    """Measurement update with a detection cluster.

    The cluster centroid updates each model's kinematics under the spread
    (z*X + R̄)/n; the positional scatter updates the extent.
    """
    dets = list(detections)
    if not dets:
        raise ValueError("update requires a non-empty detection cluster")
    n = len(dets)
    zs = np.array([d.z for d in dets])
    zbar = zs.mean(axis=0)
    rbar = sum(d.noise for d in dets) / n
    y3 = gating_noise(extent.X, rbar, cfg.z_scale)

    new_means, new_covs, logliks = [], [], []
    for m, p in zip(state.means, state.covs):
        zhat, s_ut, cross = predict_measurement(m, p, ego)
        s = symmetrize(s_ut + y3 / n, rtol=np.inf)
        try:
            chol = cholesky_spd(s)
        except DegenerateMatrixError as exc:
            raise NumericalFailure(f"singular innovation covariance: {exc}") from exc
        innov = zbar - zhat
        gain = np.linalg.solve(chol.T, np.linalg.solve(chol, cross.T)).T
        m2 = m + gain @ innov
        p2 = symmetrize(p - gain @ s @ gain.T, rtol=np.inf)
        try:
            cholesky_spd(p2)
        except DegenerateMatrixError as exc:
            raise NumericalFailure(f"updated covariance not SPD: {exc}") from exc
        sol = np.linalg.solve(chol, innov)
        loglik = -0.5 * (sol @ sol) - np.log(np.diag(chol)).sum() - 1.5 * np.log(2 * np.pi)
        new_means.append(m2)
        new_covs.append(p2)
        logliks.append(loglik)

    logliks = np.array(logliks)
    w = state.mu * np.exp(logliks - logliks.max())
    total = w.sum()
    mu = w / total if total > 0 else np.full(cfg.n_models, 1.0 / cfg.n_models)
    new_state = KinematicState(tuple(new_means), tuple(new_covs), mu)

    new_extent = update_extent(state, extent, zs, rbar, ego, cfg)
    return new_state, new_extent


def update_extent(pred_state: KinematicState, extent: Extent, zs: np.ndarray,
                  rbar: np.ndarray, ego: EgoPose, cfg: TrackerConfig) -> Extent:
    """Random-matrix extent update from the positional cluster scatter."""
    return rmm_update(pred_state.mean[:2], pred_state.cov[:2, :2],
                      extent, zs, rbar, cfg)


def rmm_update(pos_mean: np.ndarray, pos_cov: np.ndarray, extent: Extent,
               zs: np.ndarray, rbar: np.ndarray, cfg: TrackerConfig) -> Extent:
    """Extent update against an arbitrary positional prior (filtered or smoothed)."""
    n = zs.shape[0]
    pos = zs[:, :2]
    pbar = pos.mean(axis=0)
    scatter = (pos - pbar).T @ (pos - pbar)

    x = extent.X
    x_sqrt = _sqrt_spd(symmetrize(x, rtol=np.inf) + 1e-12 * np.eye(2))
    y2 = cfg.z_scale * x + rbar[:2, :2]
    s2 = symmetrize(pos_cov + y2 / n, rtol=np.inf)

    innov = pbar - pos_mean
    s2_chol = cholesky_spd(s2)
    y2_chol = cholesky_spd(y2)
    a = x_sqrt @ np.linalg.inv(s2_chol)
    n_hat = a @ np.outer(innov, innov) @ a.T
    b = x_sqrt @ np.linalg.inv(y2_chol)
    z_hat = b @ scatter @ b.T

    nu = extent.nu_rmm
    x_new = (nu * x + n_hat + z_hat) / (nu + n)
    return Extent(_clip_extent(x_new, cfg), nu + n)


def init_state(detections, ego: EgoPose, cfg: TrackerConfig):
    """Birth state and extent from a leftover detection cluster."""
    dets = list(detections)
    zs = np.array([d.z for d in dets])
    pbar = zs[:, :2].mean(axis=0)
    vrbar = zs[:, 2].mean()
    rel = pbar - ego.sensor_position()
    rng = np.linalg.norm(rel)
    u = rel / rng if rng > 1e-9 else np.zeros(2)
    # radial velocity is all the sensor observes at birth
    v0 = vrbar * u
    mean = np.array([pbar[0], pbar[1], v0[0], v0[1], 0.0])

    rbar = sum(d.noise for d in dets) / len(dets)
    sp2 = float(rbar[:2, :2].diagonal().mean())
    cov = np.diag([4 * sp2 + 0.25, 4 * sp2 + 0.25,
                   cfg.init_sigma_v ** 2, cfg.init_sigma_v ** 2,
                   cfg.init_sigma_omega ** 2])
    mu = np.full(cfg.n_models, 1.0 / cfg.n_models)
    state = KinematicState(tuple([mean] * cfg.n_models), tuple([cov] * cfg.n_models), mu)

    if len(dets) >= 2:
        scatter = (zs[:, :2] - pbar).T @ (zs[:, :2] - pbar) / len(dets)
        x0 = _clip_extent(scatter / cfg.z_scale, cfg)
    else:
        x0 = np.eye(2) * cfg.init_extent
    return state, Extent(x0, cfg.nu_init)


def gate_projection(state: KinematicState, ego: EgoPose):
    """Predicted measurement and its state-driven covariance for gating.

    Uses the model-combined 4D Gaussian; extent and sensor noise are added
    per detection by the caller.
    """
    return predict_measurement(state.mean, state.cov, ego)


def gate_distance_sq(zhat: np.ndarray, s_ut: np.ndarray, det: Detection,
                     extent: Extent, cfg: TrackerConfig) -> float:
    """Squared gating distance of one detection against a projected track."""
    y = gating_noise(extent.X, det.noise, cfg.z_scale)
    return mahalanobis_sq(det.z - zhat, s_ut + y)
