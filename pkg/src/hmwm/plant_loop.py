"""LTI plant, steady-state Kalman controller and chi-square residual detector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    GaussianSpec,
    as_matrix,
    as_square,
    chi_square_quantile,
    is_controllable,
    is_observable,
    is_schur,
    kalman_steady_state,
    sample_gaussian,
)


@dataclass(frozen=True)
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Sigma_w: np.ndarray
    Sigma_v: np.ndarray
    noise_w: GaussianSpec = field(init=False, repr=False, compare=False)
    noise_v: GaussianSpec = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = as_square(self.A, "A_p")
        B = as_matrix(self.B, "B_p")
        C = as_matrix(self.C, "C_p")
        n = A.shape[0]
        if B.shape[0] != n or C.shape[1] != n:
            raise ValueError(f"inconsistent plant shapes A{A.shape} B{B.shape} C{C.shape}")
        Sw = as_square(self.Sigma_w, "Sigma_w")
        Sv = as_square(self.Sigma_v, "Sigma_v")
        if Sw.shape != (n, n) or Sv.shape != (C.shape[0],) * 2:
            raise ValueError("noise covariance shapes do not match the plant")
        if not is_controllable(A, B):
            raise ValueError("(A_p, B_p) is not controllable")
        if not is_observable(C, A):
            raise ValueError("(C_p, A_p) is not observable")
        for name, val in (("A", A), ("B", B), ("C", C)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "noise_w", GaussianSpec(np.zeros(n), Sw))
        object.__setattr__(self, "noise_v", GaussianSpec(np.zeros(C.shape[0]), Sv))
        object.__setattr__(self, "Sigma_w", self.noise_w.cov)
        object.__setattr__(self, "Sigma_v", self.noise_v.cov)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def scaled_noise(self, scale: float) -> "PlantModel":
        """Copy with both noise covariances multiplied by ``scale``."""
        return PlantModel(self.A, self.B, self.C, scale * self.Sigma_w, scale * self.Sigma_v)


@dataclass(frozen=True)
class ControllerConfig:
    """Controller and detector settings.

    ``L`` is the predictor-form observer gain of
    ``x_hat+ = A x_hat + B u + L (y - C x_hat)``.  ``Sigma_r`` and
    ``Sigma_e`` are the steady-state innovation and prior error covariances.
    """

    K: np.ndarray
    L: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    Sigma_r: np.ndarray
    Sigma_e: np.ndarray
    detector_alpha: float = 0.05

    @property
    def detector_dof(self) -> int:
        return self.Sigma_r.shape[0]

    @property
    def threshold(self) -> float:
        return chi_square_quantile(self.detector_dof, 1.0 - self.detector_alpha)


def make_controller(model: PlantModel, K, x_ref, u_ref, detector_alpha: float = 0.05,
                    L=None) -> ControllerConfig:
    """Build a controller, computing the Kalman gain unless ``L`` is supplied."""
    K = as_matrix(K, "K")
    if K.shape != (model.m, model.n):
        raise ValueError(f"K must be {model.m}x{model.n}")
    x_ref = np.asarray(x_ref, dtype=float).reshape(model.n)
    u_ref = np.asarray(u_ref, dtype=float).reshape(model.m)
    if not 0.0 < detector_alpha < 1.0:
        raise ValueError("detector_alpha must lie in (0, 1)")
    kf = kalman_steady_state(model.A, model.C, model.Sigma_w, model.Sigma_v)
    L = kf.predictor_gain if L is None else as_matrix(L, "L")
    if L.shape != (model.n, model.p):
        raise ValueError(f"L must be {model.n}x{model.p}")
    if not is_schur(model.A - model.B @ K):
        raise ValueError("A_p - B_p K is not Schur stable")
    if not is_schur(model.A - L @ model.C):
        raise ValueError("A_p - L C_p is not Schur stable")
    return ControllerConfig(K=K, L=L, x_ref=x_ref, u_ref=u_ref, Sigma_r=kf.innovation_cov,
                            Sigma_e=kf.error_cov, detector_alpha=detector_alpha)


def plant_step(model: PlantModel, x_p, u, rng: np.random.Generator):
    """Advance the plant one step; returns ``(x_p_next, y_p)``.

    Process noise is drawn before measurement noise, one draw each per call.
    """
    x_p = np.asarray(x_p, dtype=float)
    u = np.asarray(u, dtype=float)
    if x_p.shape != (model.n,) or u.shape != (model.m,):
        raise ValueError("plant_step dimension mismatch")
    w = sample_gaussian(model.noise_w, rng)
    v = sample_gaussian(model.noise_v, rng)
    return model.A @ x_p + model.B @ u + w, model.C @ x_p + v


def controller_step(cfg: ControllerConfig, model: PlantModel, x_hat, y_in):
    """Returns ``(x_hat_next, u, r)``; ``y_in`` is the remover output y_q."""
    x_hat = np.asarray(x_hat, dtype=float)
    y_in = np.asarray(y_in, dtype=float)
    if x_hat.shape != (model.n,) or y_in.shape != (model.p,):
        raise ValueError("controller_step dimension mismatch")
    r = y_in - model.C @ x_hat
    u = -cfg.K @ (x_hat - cfg.x_ref) + cfg.u_ref
    x_hat_next = model.A @ x_hat + model.B @ u + cfg.L @ r
    return x_hat_next, u, r


def detector_step(cfg: ControllerConfig, Sigma_r, r):
    """Chi-square test on one innovation; returns ``(statistic, alarm)``."""
    Sigma_r = as_square(Sigma_r, "Sigma_r")
    r = np.asarray(r, dtype=float)
    if r.shape != (Sigma_r.shape[0],):
        raise ValueError("residual dimension mismatch")
    try:
        chol = np.linalg.cholesky(Sigma_r)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Sigma_r is singular or indefinite") from exc
    z = np.linalg.solve(chol, r)
    stat = float(z @ z)
    thr = chi_square_quantile(Sigma_r.shape[0], 1.0 - cfg.detector_alpha)
    return stat, stat > thr
