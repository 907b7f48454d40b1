"""Tracker configuration knobs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TrackerConfig:
    # IMM model bank; any subset of {"cv", "ct"} in order
    models: tuple = ("cv", "ct")
    transition: tuple = ((0.95, 0.05), (0.05, 0.95))
    sigma_a_cv: float = 1.0  # white-acceleration density, CV model
    sigma_a_ct: float = 2.0  # white-acceleration density, CT model
    sigma_omega: float = 0.3  # turn-rate process noise (rad/s per sqrt(s))

    # random-matrix extent
    z_scale: float = 0.25  # uniform-over-ellipse spread factor
    tau_rmm: float = 2.0  # extent forgetting time, seconds
    nu_init: float = 8.0
    extent_floor: float = 0.04  # m^2, minimum extent eigenvalue

    # adaptive clustering
    eps: float = 1.5  # leftover-cluster linkage radius, meters
    min_cluster_size: int = 1
    alpha_gate: float = 0.99

    # lifecycle
    confirm_m: int = 2
    confirm_n: int = 3
    n_miss: int = 3
    low_confidence: bool = True  # allow singleton clusters to seed tracks

    # track initialization
    init_sigma_v: float = 5.0
    init_sigma_omega: float = 0.3
    init_extent: float = 0.25  # m^2 isotropic extent for singleton births

    def __post_init__(self):
        models = tuple(self.models)
        if not models or any(m not in ("cv", "ct") for m in models):
            raise ValueError(f"unknown model set {models}")
        tm = np.asarray(self.transition, dtype=float)
        if len(models) == 1:
            tm = np.array([[1.0]])
        if tm.shape != (len(models), len(models)):
            raise ValueError("transition matrix shape must match the model set")
        if not np.allclose(tm.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("transition matrix rows must sum to 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.alpha_gate < 1.0:
            raise ValueError("alpha_gate must lie in (0, 1)")
        if self.min_cluster_size < 1 or self.confirm_m < 1 or self.confirm_n < self.confirm_m:
            raise ValueError("invalid lifecycle thresholds")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "transition", tuple(tuple(row) for row in tm))

    @property
    def transition_matrix(self) -> np.ndarray:
        return np.asarray(self.transition, dtype=float)

    @property
    def n_models(self) -> int:
        return len(self.models)
