"""Synthetic radar-inertial datasets with planted ground truth.

The true trajectory is produced by integrating body-frame speed and yaw-rate
profiles with the same first-order strapdown step the filter uses, so a
noise-free IMU stream reproduces the ground truth exactly when propagated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .dataset import Dataset, Trajectory
from .ekf import GRAVITY, ImuSample
from .egovel import RadarScan
from .geom import PoseSE3, quat_exp, quat_mul, quat_normalize, quat_to_rotmat, rotvec_to_quat


@dataclass
class SynthConfig:
    scene: str = "corridor"  # corridor | room
    trajectory: str = "straight"  # stationary | straight | loop
    seed: int = 0
    duration: float = 30.0  # s; for straight runs ``distance`` ends the run instead
    distance: float = 20.0  # m, straight runs
    speed: float = 1.0  # m/s cruise speed
    radius: float = 8.0  # m, loop radius
    settle_time: float = 1.0  # s stationary at the start
    ramp_time: float = 2.0  # s to reach cruise speed
    imu_rate: float = 100.0
    radar_rate: float = 10.0
    points_per_scan: int = 1000
    radar_range: float = 40.0
    fov_azimuth_deg: float = 60.0  # half-angle
    fov_elevation_deg: float = 20.0  # half-angle
    surface_density: float = 20.0  # points per m^2 of scene surface
    sigma_position: float = 0.05
    sigma_doppler: float = 0.05
    outlier_fraction: float = 0.0
    imu_sigma_a: float = 0.0
    imu_sigma_w: float = 0.0
    imu_sigma_ba: float = 0.0
    imu_sigma_bw: float = 0.0
    imu_bias_a: float = 0.0  # std-dev of the initial accelerometer bias
    imu_bias_w: float = 0.0  # std-dev of the initial gyroscope bias
    calib_yaw_deg: float = 0.0  # radar mounting yaw relative to the body

    @classmethod
    def noiseless(cls, **kw) -> SynthConfig:
        return cls(sigma_position=0.0, sigma_doppler=0.0, **kw)

    @classmethod
    def noisy(cls, **kw) -> SynthConfig:
        base = dict(
            sigma_position=0.05,
            sigma_doppler=0.05,
            outlier_fraction=0.1,
            imu_sigma_a=0.02,
            imu_sigma_w=0.002,
            imu_sigma_ba=0.0005,
            imu_sigma_bw=2e-5,
            imu_bias_a=0.02,
            imu_bias_w=0.002,
        )
        base.update(kw)
        return cls(**base)


# -- scenes -------------------------------------------------------------------


def _rect(rng, density, origin, u, v):
    """Uniform samples on the parallelogram ``origin + a u + b v``, ``a, b in [0, 1]``."""
    origin, u, v = (np.asarray(x, dtype=float) for x in (origin, u, v))
    area = np.linalg.norm(np.cross(u, v))
    n = max(1, int(round(area * density)))
    ab = rng.uniform(size=(n, 2))
    return origin + ab[:, :1] * u + ab[:, 1:] * v


def _cylinder(rng, density, cx, cy, radius, z0, z1):
    n = max(1, int(round(2 * np.pi * radius * (z1 - z0) * density)))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([cx + radius * np.cos(a), cy + radius * np.sin(a), rng.uniform(z0, z1, n)])


def _box(rng, density, cx, cy, sx, sy, z0, z1):
    h = z1 - z0
    x0, y0 = cx - sx / 2, cy - sy / 2
    return np.vstack(
        [
            _rect(rng, density, [x0, y0, z0], [sx, 0, 0], [0, 0, h]),
            _rect(rng, density, [x0, y0 + sy, z0], [sx, 0, 0], [0, 0, h]),
            _rect(rng, density, [x0, y0, z0], [0, sy, 0], [0, 0, h]),
            _rect(rng, density, [x0 + sx, y0, z0], [0, sy, 0], [0, 0, h]),
            _rect(rng, density, [x0, y0, z1], [sx, 0, 0], [0, sy, 0]),
        ]
    )


def make_scene(name: str, rng: np.random.Generator, density: float = 20.0) -> NDArray:
    """Dense static surface points (walls, floor, ceiling, pillars, boxes) in the world frame."""
    floor, ceil = -1.0, 2.0
    h = ceil - floor
    parts = []
    if name == "corridor":
        # the end wall stays within radar range so the along-track direction is observable
        x0, x1, w = -10.0, 32.0, 3.0
        L = x1 - x0
        parts += [
            _rect(rng, density, [x0, -w, floor], [L, 0, 0], [0, 2 * w, 0]),
            _rect(rng, density * 0.5, [x0, -w, ceil], [L, 0, 0], [0, 2 * w, 0]),
            _rect(rng, density, [x0, -w, floor], [L, 0, 0], [0, 0, h]),
            _rect(rng, density, [x0, w, floor], [L, 0, 0], [0, 0, h]),
            _rect(rng, density, [x1, -w, floor], [0, 2 * w, 0], [0, 0, h]),
        ]
        for i, x in enumerate(np.arange(x0 + 2.0, x1, 2.5)):
            side = 1 if i % 2 else -1
            parts.append(_cylinder(rng, density, x, side * (w - 0.6), 0.25, floor, ceil))
        for i, x in enumerate(np.arange(x0 + 4.0, x1, 5.0)):
            side = -1 if i % 2 else 1
            parts.append(_box(rng, density, x, side * (w - 0.5), 1.0, 0.6, floor, floor + 0.8 + 0.4 * (i % 3)))
    elif name == "room":
        # 32 m square centred on (0, 8), the centre of the default loop
        half, cy0 = 16.0, 8.0
        L = 2 * half
        x0, y0 = -half, cy0 - half
        parts += [
            _rect(rng, density * 0.5, [x0, y0, floor], [L, 0, 0], [0, L, 0]),
            _rect(rng, density, [x0, y0, floor], [L, 0, 0], [0, 0, h]),
            _rect(rng, density, [x0, y0 + L, floor], [L, 0, 0], [0, 0, h]),
            _rect(rng, density, [x0, y0, floor], [0, L, 0], [0, 0, h]),
            _rect(rng, density, [x0 + L, y0, floor], [0, L, 0], [0, 0, h]),
        ]
        layout = np.random.default_rng(12345)
        placed = 0
        while placed < 40:
            cx, cy = layout.uniform(-half + 1, half - 1), layout.uniform(y0 + 1, y0 + L - 1)
            # keep a clear lane along the default loop
            if abs(np.hypot(cx, cy - cy0) - 8.0) < 1.5:
                continue
            if placed % 2:
                parts.append(_cylinder(rng, density, cx, cy, 0.3, floor, ceil))
            else:
                parts.append(_box(rng, density, cx, cy, 0.8 + 0.1 * (placed % 5), 0.6, floor, floor + 1.0 + 0.2 * (placed % 4)))
            placed += 1
    else:
        raise ValueError(f"unknown scene {name!r}")
    return np.vstack(parts)


# -- trajectory ---------------------------------------------------------------


def _speed_profile(cfg: SynthConfig):
    def speed(t: float) -> float:
        if cfg.trajectory == "stationary" or t < cfg.settle_time:
            return 0.0
        s = (t - cfg.settle_time) / cfg.ramp_time
        if s >= 1:
            return cfg.speed
        return cfg.speed * 0.5 * (1 - np.cos(np.pi * s))

    return speed


def _end_time(cfg: SynthConfig) -> float:
    if cfg.trajectory == "straight":
        ramp_dist = 0.5 * cfg.speed * cfg.ramp_time
        if cfg.distance <= ramp_dist:
            raise ValueError("distance shorter than the acceleration ramp")
        return cfg.settle_time + cfg.ramp_time + (cfg.distance - ramp_dist) / cfg.speed
    return cfg.duration


@dataclass
class TruthStep:
    t: float
    p: NDArray
    v: NDArray
    q: NDArray
    specific_force: NDArray
    rate: NDArray


def simulate_truth(cfg: SynthConfig) -> list[TruthStep]:
    """Discrete ground truth at IMU rate, with the body-frame inputs applied over each step."""
    dt = 1.0 / cfg.imu_rate
    n = int(round(_end_time(cfg) * cfg.imu_rate)) + 1
    speed = _speed_profile(cfg)
    yaw_rate = (lambda t: speed(t) / cfg.radius) if cfg.trajectory == "loop" else (lambda t: 0.0)
    p = np.zeros(3)
    q = np.array([1.0, 0.0, 0.0, 0.0])
    v = np.zeros(3)
    steps = []
    for k in range(n):
        t = k * dt
        w = np.array([0.0, 0.0, yaw_rate(t)])
        q_next = quat_normalize(quat_mul(q, quat_exp(0.5 * w * dt)))
        v_next = quat_to_rotmat(q_next) @ np.array([speed(t + dt), 0.0, 0.0])
        a_w = (v_next - v) / dt
        f_b = quat_to_rotmat(q).T @ (a_w - GRAVITY)
        steps.append(TruthStep(t, p.copy(), v.copy(), q.copy(), f_b, w))
        p = p + v * dt + 0.5 * a_w * dt**2
        v, q = v_next, q_next
    return steps


# -- sensors ------------------------------------------------------------------


def _radar_scan(
    cfg: SynthConfig, rng: np.random.Generator, scene: NDArray, step: TruthStep, C_rb: NDArray
) -> RadarScan:
    C_wb = quat_to_rotmat(step.q)
    body = (scene - step.p) @ C_wb  # C_wb^T (x - p)
    radar = body @ C_rb  # C_rb^T x_b
    rng_ = np.linalg.norm(radar, axis=1)
    az = np.degrees(np.arctan2(radar[:, 1], radar[:, 0]))
    el = np.degrees(np.arcsin(np.clip(radar[:, 2] / np.maximum(rng_, 1e-9), -1, 1)))
    vis = (rng_ > 0.5) & (rng_ < cfg.radar_range) & (np.abs(az) < cfg.fov_azimuth_deg) & (np.abs(el) < cfg.fov_elevation_deg)
    idx = np.flatnonzero(vis)
    if len(idx) > cfg.points_per_scan:
        idx = np.sort(rng.choice(idx, size=cfg.points_per_scan, replace=False))
    pts = radar[idx]
    dirs = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    v_r = C_rb.T @ (C_wb.T @ step.v)
    doppler = -dirs @ v_r
    m = len(pts)
    doppler = doppler + cfg.sigma_doppler * rng.normal(size=m)
    n_out = int(round(cfg.outlier_fraction * m))
    if n_out:
        out = rng.choice(m, size=n_out, replace=False)
        doppler[out] += rng.choice([-1.0, 1.0], size=n_out) * rng.uniform(1.0, 3.0, size=n_out)
    pts = pts + cfg.sigma_position * rng.normal(size=pts.shape)
    intensity = rng.uniform(0.0, 1.0, size=m)
    return RadarScan(step.t, pts, doppler, intensity)


def generate_synthetic(cfg: SynthConfig | None = None) -> Dataset:
    """Simulated IMU stream, radar scans and ground truth for one scene and trajectory."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    scene = make_scene(cfg.scene, np.random.default_rng([cfg.seed, 1]), cfg.surface_density)
    truth = simulate_truth(cfg)
    dt = 1.0 / cfg.imu_rate

    b_a = cfg.imu_bias_a * rng.normal(size=3)
    b_w = cfg.imu_bias_w * rng.normal(size=3)
    imu = []
    for st in truth:
        accel = st.specific_force + b_a + cfg.imu_sigma_a / np.sqrt(dt) * rng.normal(size=3)
        gyro = st.rate + b_w + cfg.imu_sigma_w / np.sqrt(dt) * rng.normal(size=3)
        imu.append(ImuSample(st.t, accel, gyro))
        b_a = b_a + cfg.imu_sigma_ba * np.sqrt(dt) * rng.normal(size=3)
        b_w = b_w + cfg.imu_sigma_bw * np.sqrt(dt) * rng.normal(size=3)

    C_rb = quat_to_rotmat(rotvec_to_quat([0.0, 0.0, np.radians(cfg.calib_yaw_deg)]))
    every = max(1, int(round(cfg.imu_rate / cfg.radar_rate)))
    radar_rng = np.random.default_rng([cfg.seed, 2])
    scans, gt = [], Trajectory()
    for k in range(every, len(truth), every):
        st = truth[k]
        scan = _radar_scan(cfg, radar_rng, scene, st, C_rb)
        if scan.empty:
            continue
        scans.append(scan)
        gt.append(st.t, PoseSE3(st.p, st.q))
    return Dataset(imu, scans, C_rb, gt)
