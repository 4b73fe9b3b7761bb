"""Error-state EKF for radar-inertial odometry.

Only the attitude is carried as an error state: the filter vector is
``x = [p, v, b_a, b_w, dtheta]`` (15 entries, that block order) while the
nominal attitude quaternion ``q`` (world <- body) lives outside ``x``.
``dtheta`` is a world-frame tangent rotation, ``C_true = exp([dtheta]x) C(q)``,
and is folded back into ``q`` after every update.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.stats import chi2

from .egovel import EgovelEstimate
from .geom import IDENTITY_QUAT, PoseSE3, quat_conj, quat_exp, quat_mul, quat_normalize, quat_to_rotmat, skew

log = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.80511])

P_SL, V_SL, BA_SL, BW_SL, TH_SL = (slice(3 * i, 3 * i + 3) for i in range(5))
DIM = 15

# selects x, y, yaw out of an x/y/z/roll/pitch/yaw residual
SCANMATCH_CONSTRAINT = np.array(
    [
        [1.0, 0, 0, 0, 0, 0],
        [0, 1.0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 1.0],
    ]
)


def gravity() -> NDArray:
    return GRAVITY.copy()


@dataclass
class ImuSample:
    timestamp: float
    accel: NDArray
    gyro: NDArray

    def __post_init__(self):
        self.accel = np.asarray(self.accel, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)


@dataclass
class NoiseParams:
    """Process noise and initial uncertainty.

    ``sigma_a``/``sigma_w`` are continuous-time white-noise densities and
    ``sigma_ba``/``sigma_bw`` bias random-walk densities (Kalibr conventions).
    ``sigma_v``/``sigma_theta`` enter ``Q`` as ``sigma**2 * dt**q_power``;
    the default power 0 adds them once per propagation step.
    """

    sigma_v: float = 0.0
    sigma_theta: float = 0.0
    sigma_a: float = 0.02
    sigma_w: float = 0.002
    sigma_ba: float = 0.0005
    sigma_bw: float = 2e-5
    eta_ba: float = 0.02
    eta_bw: float = 0.002
    eta_theta: float = 0.01
    q_power: float = 0.0

    def __post_init__(self):
        for k, v in vars(self).items():
            if k != "q_power" and not v >= 0:
                raise ValueError(f"{k} must be >= 0, got {v}")


@dataclass
class EkfState:
    p: NDArray = field(default_factory=lambda: np.zeros(3))
    v: NDArray = field(default_factory=lambda: np.zeros(3))
    b_a: NDArray = field(default_factory=lambda: np.zeros(3))
    b_w: NDArray = field(default_factory=lambda: np.zeros(3))
    dtheta: NDArray = field(default_factory=lambda: np.zeros(3))
    q: NDArray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    P: NDArray = field(default_factory=lambda: np.zeros((DIM, DIM)))
    timestamp: float = 0.0

    @property
    def x(self) -> NDArray:
        return np.concatenate([self.p, self.v, self.b_a, self.b_w, self.dtheta])

    def with_x(self, x: NDArray, **kw) -> EkfState:
        return replace(
            self, p=x[P_SL].copy(), v=x[V_SL].copy(), b_a=x[BA_SL].copy(), b_w=x[BW_SL].copy(), dtheta=x[TH_SL].copy(), **kw
        )

    def copy(self) -> EkfState:
        return replace(self, **{k: np.array(getattr(self, k)) for k in ("p", "v", "b_a", "b_w", "dtheta", "q", "P")})

    @property
    def C(self) -> NDArray:
        """Nominal body -> world rotation."""
        return quat_to_rotmat(self.q)

    @property
    def pose(self) -> PoseSE3:
        return PoseSE3(self.p, self.q)


def init_filter(noise: NoiseParams) -> EkfState:
    P = np.zeros((DIM, DIM))
    P[BA_SL, BA_SL] = np.eye(3) * noise.eta_ba**2
    P[BW_SL, BW_SL] = np.eye(3) * noise.eta_bw**2
    # roll/pitch only: yaw is unobservable without a compass
    P[12, 12] = P[13, 13] = noise.eta_theta**2
    return EkfState(P=P)


_I3 = np.eye(3)


def transition_matrices(state: EkfState, imu: ImuSample, dt: float, noise: NoiseParams, C: NDArray | None = None):
    """``F``, ``N`` and ``Q`` of the linearized strapdown step."""
    if C is None:
        C = state.C
    f_w = C @ (imu.accel - state.b_a)
    Fx = skew(f_w) * dt
    Cdt = C * dt
    F = np.eye(DIM)
    F[P_SL, V_SL] = _I3 * dt
    F[P_SL, BA_SL] = -0.5 * dt * Cdt
    F[P_SL, TH_SL] = -0.5 * dt * Fx
    F[V_SL, BA_SL] = -Cdt
    F[V_SL, TH_SL] = -Fx
    F[TH_SL, BW_SL] = -Cdt

    # noise order: w_v, w_theta, w_a, w_w, w_ba, w_bw
    N = np.zeros((DIM, 18))
    N[P_SL, 6:9] = 0.5 * dt * Cdt
    N[V_SL, 6:9] = Cdt
    N[TH_SL, 9:12] = Cdt
    N[V_SL, 0:3] = _I3
    N[TH_SL, 3:6] = _I3
    N[BA_SL, 12:15] = _I3
    N[BW_SL, 15:18] = _I3

    qd = np.array(
        [
            noise.sigma_v**2 * dt**noise.q_power,
            noise.sigma_theta**2 * dt**noise.q_power,
            noise.sigma_a**2 / dt,
            noise.sigma_w**2 / dt,
            noise.sigma_ba**2 * dt,
            noise.sigma_bw**2 * dt,
        ]
    )
    Q = np.diag(np.repeat(qd, 3))
    return F, N, Q


def _process_noise(N: NDArray, Q: NDArray) -> NDArray:
    # Q is diagonal
    return (N * np.diag(Q)) @ N.T


def strapdown(state: EkfState, imu: ImuSample, dt: float, C: NDArray | None = None) -> tuple[NDArray, NDArray, NDArray]:
    """Nominal ``p, v, q`` after one first-order inertial step."""
    if C is None:
        C = state.C
    a_w = C @ (imu.accel - state.b_a) + GRAVITY
    p = state.p + state.v * dt + 0.5 * dt * dt * a_w
    v = state.v + a_w * dt
    q = quat_normalize(quat_mul(state.q, quat_exp(0.5 * dt * (imu.gyro - state.b_w))))
    return p, v, q


def propagate(state: EkfState, imu: ImuSample, dt: float, noise: NoiseParams) -> EkfState:
    if not (dt > 0 and math.isfinite(dt)) or not np.isfinite(imu.accel @ imu.accel + imu.gyro @ imu.gyro):
        log.warning("rejected IMU sample at t=%s (dt=%s)", imu.timestamp, dt)
        return state
    C = state.C
    F, N, Q = transition_matrices(state, imu, dt, noise, C)
    p, v, q = strapdown(state, imu, dt, C)
    P = F @ state.P @ F.T + _process_noise(N, Q)
    return replace(state, p=p, v=v, q=q, P=0.5 * (P + P.T), timestamp=state.timestamp + dt)


def error_state_reset(state: EkfState) -> EkfState:
    """Fold ``dtheta`` into ``q`` and rotate the attitude block of ``P``."""
    dq = quat_exp(0.5 * state.dtheta)
    G = np.eye(DIM)
    G[TH_SL, TH_SL] = quat_to_rotmat(dq)
    P = G @ state.P @ G.T
    return replace(state, q=quat_normalize(quat_mul(dq, state.q)), dtheta=np.zeros(3), P=0.5 * (P + P.T))


def kalman_update(
    state: EkfState, r: ArrayLike, H: ArrayLike, R: ArrayLike, gate: float | None = None
) -> EkfState:
    """Joseph-form update followed by the error reset.

    ``gate`` is a chi-square probability; an innovation whose Mahalanobis
    norm exceeds that quantile is rejected. A skipped update returns
    ``state`` itself, so callers can test ``new is state``.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = state.P
    S = H @ P @ H.T + R
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        log.warning("singular innovation covariance; update skipped")
        return state
    if not np.all(np.isfinite(S_inv)):
        log.warning("non-finite innovation covariance inverse; update skipped")
        return state
    if gate is not None:
        m2 = float(r @ S_inv @ r)
        if m2 > chi2.ppf(gate, len(r)):
            log.info("observation gated (mahalanobis^2 %.2f, dof %d)", m2, len(r))
            return state
    K = P @ H.T @ S_inv
    L = np.eye(DIM) - K @ H
    P_new = L @ P @ L.T + K @ R @ K.T
    new = state.with_x(state.x + K @ r, P=0.5 * (P_new + P_new.T))
    if np.any(new.dtheta != 0):
        new = error_state_reset(new)
    return new


def egovel_update(state: EkfState, est: EgovelEstimate, gate: float | None = 0.999) -> EkfState:
    """Body-frame velocity observation ``y = C^T v``."""
    Cwb = state.C.T
    r = est.v_body - Cwb @ state.v
    H = np.zeros((3, DIM))
    H[:, V_SL] = Cwb
    H[:, TH_SL] = Cwb @ skew(state.v)
    return kalman_update(state, r, H, est.cov, gate)


def scanmatch_residual(state: EkfState, keyframe: PoseSE3, matched: PoseSE3) -> tuple[NDArray, float]:
    """Residual ``[dp, dtheta]`` in the keyframe frame, plus ``dq_w``.

    ``matched`` is the registered pose of the body in the keyframe frame.
    """
    Ck = keyframe.R
    t_x = Ck.T @ (state.p - keyframe.t)
    q_x = quat_mul(quat_conj(keyframe.q), state.q)
    dp = matched.t - t_x
    dq = quat_normalize(quat_mul(matched.q, quat_conj(q_x)))
    return np.concatenate([dp, 2.0 / dq[0] * dq[1:]]), float(dq[0])


def scanmatch_update(
    state: EkfState,
    keyframe: PoseSE3,
    matched: PoseSE3,
    R: ArrayLike,
    gate: float | None = 0.999,
    min_dq_w: float = 0.1,
) -> EkfState:
    """Relative-pose observation against a keyframe, restricted to x, y and yaw.

    ``R`` is the 6×6 observation covariance over x/y/z/roll/pitch/yaw.
    """
    r, dq_w = scanmatch_residual(state, keyframe, matched)
    if abs(dq_w) <= min_dq_w:
        log.warning("scan match rejected: |dq_w| = %.3f", dq_w)
        return state
    Ckw = keyframe.R.T
    H = np.zeros((6, DIM))
    H[0:3, P_SL] = Ckw
    H[3:6, TH_SL] = Ckw
    Hc = SCANMATCH_CONSTRAINT
    return kalman_update(state, Hc @ r, Hc @ H, Hc @ np.asarray(R) @ Hc.T, gate)


def scanmatch_covariance(sigma_xy: float = 0.05, sigma_yaw: float = np.radians(1.0), sigma_other: float = 1.0) -> NDArray:
    return np.diag([sigma_xy**2, sigma_xy**2, sigma_other**2, sigma_other**2, sigma_other**2, sigma_yaw**2])
