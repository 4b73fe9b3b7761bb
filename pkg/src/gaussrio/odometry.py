"""End-to-end radar-inertial odometry loop.

IMU samples drive propagation; every radar scan is rotated into the body
frame, used for an egovelocity update, and its static points are registered
against the current keyframe's Gaussian model for a constrained relative-pose
update. Scans that move far enough from the keyframe become the next keyframe.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Trajectory
from .ekf import (
    EkfState,
    NoiseParams,
    egovel_update,
    init_filter,
    propagate,
    scanmatch_covariance,
    scanmatch_update,
)
from .egovel import EgovelocityError, RansacConfig, estimate_egovelocity
from .gaussian_model import DEFAULT_S_MIN, FitConfig, GaussianModel, ModelFitError, fit_model, init_model
from .geom import PoseSE3, pose_relative
from .scan_match import KeyframeCriteria, MatchConfig, keyframe_due, register_scan

log = logging.getLogger(__name__)


@dataclass
class OdometryConfig:
    seed: int = 0
    doppler_sign: float = 1.0
    # filter noise (see NoiseParams)
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
    # Gaussian modeling; n_gaussians = 0 picks min(points // 10, 150)
    n_gaussians: int = 0
    s_min: float = DEFAULT_S_MIN
    s_disc: float = DEFAULT_S_MIN
    # keyframe models are fitted longer and faster than the library default;
    # under-converged (fat) Gaussians bias registration
    fit_epochs: int = 300
    fit_lr_mu: float = 1e-2
    fit_lr_scale: float = 3e-2
    fit_lr_rot: float = 3e-2
    # scan matching
    scan_match: bool = True
    n_hypotheses: int = 16
    mahal_clamp: float = 4.0
    downsample_target: int = 512
    disp_x: float = 0.3
    disp_y: float = 0.3
    disp_z: float = 0.1
    disp_roll_deg: float = 0.5
    disp_pitch_deg: float = 0.5
    disp_yaw_deg: float = 2.0
    match_epochs: int = 50
    match_lr_translation: float = 0.05
    match_lr_rotation: float = 0.01
    sm_sigma_xy: float = 0.05
    sm_sigma_yaw_deg: float = 1.0
    min_scan_points: int = 10
    # keyframing
    kf_dist_max: float = 2.0
    kf_angle_max_deg: float = 15.0
    # egovelocity
    ransac_threshold: float = 0.15
    ransac_iterations: int = 100
    # chi-square gate probability for updates; 0 disables gating
    gate: float = 0.999

    def noise(self) -> NoiseParams:
        keys = ("sigma_v", "sigma_theta", "sigma_a", "sigma_w", "sigma_ba", "sigma_bw", "eta_ba", "eta_bw", "eta_theta", "q_power")
        return NoiseParams(**{k: getattr(self, k) for k in keys})

    def fit_config(self) -> FitConfig:
        return FitConfig(epochs=self.fit_epochs, lr_mu=self.fit_lr_mu, lr_scale=self.fit_lr_scale, lr_rot=self.fit_lr_rot)

    def match_config(self) -> MatchConfig:
        disp = (
            self.disp_x,
            self.disp_y,
            self.disp_z,
            np.radians(self.disp_roll_deg),
            np.radians(self.disp_pitch_deg),
            np.radians(self.disp_yaw_deg),
        )
        return MatchConfig(
            n_hypotheses=self.n_hypotheses,
            mahal_clamp=self.mahal_clamp,
            downsample_target=self.downsample_target,
            dispersion=disp,
            epochs=self.match_epochs,
            lr_translation=self.match_lr_translation,
            lr_rotation=self.match_lr_rotation,
        )

    def keyframe_criteria(self) -> KeyframeCriteria:
        return KeyframeCriteria(self.kf_dist_max, np.radians(self.kf_angle_max_deg))

    def ransac_config(self, seed: int) -> RansacConfig:
        return RansacConfig(threshold=self.ransac_threshold, iterations=self.ransac_iterations, seed=seed)


@dataclass
class Keyframe:
    pose: PoseSE3
    model: GaussianModel
    timestamp: float


@dataclass
class OdometryStats:
    scans: int = 0
    egovel_updates: int = 0
    egovel_failures: int = 0
    scanmatch_updates: int = 0
    scanmatch_rejections: int = 0
    keyframes: int = 0


@dataclass
class OdometryResult:
    trajectory: Trajectory
    keyframes: list[Keyframe]
    stats: OdometryStats


def make_keyframe(state: EkfState, cloud: np.ndarray, cfg: OdometryConfig, seed: int, t: float) -> Keyframe:
    n = cfg.n_gaussians or None
    model = init_model(cloud, n, cfg.s_min, cfg.s_disc, seed=seed)
    model = fit_model(model, cloud, cfg.fit_config()).model
    return Keyframe(state.pose, model, t)


def run_odometry(ds: Dataset, cfg: OdometryConfig | None = None) -> OdometryResult:
    cfg = cfg or OdometryConfig()
    ds.validate()
    if not ds.imu:
        raise ValueError("dataset has no IMU samples")
    noise = cfg.noise()
    gate = cfg.gate if cfg.gate > 0 else None
    match_cfg = cfg.match_config()
    crit = cfg.keyframe_criteria()
    R_sm = scanmatch_covariance(cfg.sm_sigma_xy, np.radians(cfg.sm_sigma_yaw_deg))

    state = init_filter(noise)
    state.timestamp = ds.imu[0].timestamp
    scans = [s for s in ds.scans if not s.empty]
    traj = Trajectory()
    keyframes: list[Keyframe] = []
    stats = OdometryStats()
    si = 0

    for k, imu in enumerate(ds.imu):
        if k > 0:
            prev = ds.imu[k - 1]
            state = propagate(state, prev, imu.timestamp - prev.timestamp, noise)
            state.timestamp = imu.timestamp
        t_next = ds.imu[k + 1].timestamp if k + 1 < len(ds.imu) else np.inf
        # scans are applied at the nearest propagated IMU time
        while si < len(scans) and scans[si].timestamp < 0.5 * (imu.timestamp + t_next):
            scan = scans[si]
            seed = cfg.seed * 1_000_003 + si
            state = _process_scan(state, scan, ds.C_rb, keyframes, cfg, match_cfg, crit, R_sm, gate, seed, stats)
            traj.append(scan.timestamp, state.pose)
            si += 1
    return OdometryResult(traj, keyframes, stats)


def _process_scan(state, scan, C_rb, keyframes, cfg, match_cfg, crit, R_sm, gate, seed, stats) -> EkfState:
    stats.scans += 1
    body = scan.rotated(C_rb)
    try:
        est = estimate_egovelocity(body, cfg.ransac_config(seed))
    except EgovelocityError as e:
        log.info("t=%.3f: egovelocity failed (%s); skipping scan", scan.timestamp, e)
        stats.egovel_failures += 1
        return state
    new = egovel_update(state, est, gate)
    stats.egovel_updates += new is not state
    state = new

    if not cfg.scan_match:
        return state
    cloud = body.positions[est.inlier_mask]
    if len(cloud) < cfg.min_scan_points:
        return state

    if keyframes:
        kf = keyframes[-1]
        center = pose_relative(kf.pose, state.pose)
        match = register_scan(kf.model, cloud, center, match_cfg, seed=seed)
        new = scanmatch_update(state, kf.pose, match.best, R_sm, gate)
        if new is state:
            stats.scanmatch_rejections += 1
        else:
            stats.scanmatch_updates += 1
        state = new
        if not keyframe_due(kf.pose, state.pose, crit):
            return state

    try:
        keyframes.append(make_keyframe(state, cloud, cfg, seed, scan.timestamp))
        stats.keyframes += 1
    except ModelFitError as e:
        log.warning("t=%.3f: keyframe model fit failed (%s); keeping previous keyframe", scan.timestamp, e)
    return state
