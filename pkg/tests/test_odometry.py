import numpy as np
import pytest

from gaussrio.dataset import Dataset, write_trajectory
from gaussrio.egovel import RadarScan
from gaussrio.geom import pose_relative
from gaussrio.odometry import OdometryConfig, run_odometry
from gaussrio.synth import SynthConfig, generate_synthetic

QUICK = dict(fit_epochs=40, match_epochs=15, n_hypotheses=4)


def quiet(**kw):
    return OdometryConfig(sigma_a=0, sigma_w=0, sigma_ba=0, sigma_bw=0, eta_ba=0, eta_bw=0, eta_theta=0, **kw)


def test_stationary_drift():
    ds = generate_synthetic(SynthConfig.noiseless(trajectory="stationary", duration=3.0))
    res = run_odometry(ds, OdometryConfig(**QUICK))
    assert np.linalg.norm(res.trajectory.poses[-1].t) < 1e-3
    assert res.stats.keyframes == 1


def test_one_pose_per_scan():
    ds = generate_synthetic(SynthConfig.noiseless(distance=5.0))
    ds.scans.insert(3, RadarScan(np.nan, np.zeros((0, 3)), np.zeros(0)))
    res = run_odometry(ds, OdometryConfig(scan_match=False))
    assert len(res.trajectory) == len(ds.scans) - 1
    assert res.trajectory.timestamps == [s.timestamp for s in ds.scans if not s.empty]
    assert res.stats.keyframes == 0 and res.stats.scanmatch_updates == 0


def test_egovelocity_failure_skips_scan():
    ds = generate_synthetic(SynthConfig.noiseless(distance=5.0))
    bad = ds.scans[5]
    ds.scans[5] = RadarScan(bad.timestamp, bad.positions[:2], bad.doppler[:2])
    res = run_odometry(ds, OdometryConfig(scan_match=False))
    assert res.stats.egovel_failures == 1
    assert res.stats.egovel_updates == len(ds.scans) - 1
    assert len(res.trajectory) == len(ds.scans)


def test_egovelocity_only_tracks_straight_run():
    ds = generate_synthetic(SynthConfig.noiseless(distance=10.0))
    res = run_odometry(ds, quiet(scan_match=False))
    err = np.linalg.norm(res.trajectory.poses[-1].t - ds.groundtruth.poses[-1].t)
    assert err < 0.05


def test_keyframe_pacing():
    cfg = SynthConfig.noiseless(distance=11.0, radar_rate=10.0)
    ds = generate_synthetic(cfg)
    res = run_odometry(ds, OdometryConfig(**QUICK))
    assert len(res.keyframes) >= 5
    step = cfg.speed / cfg.radar_rate
    for a, b in zip(res.keyframes, res.keyframes[1:]):
        d = np.linalg.norm(pose_relative(a.pose, b.pose).t)
        assert 2.0 <= d < 2.0 + step + 1e-6


def test_deterministic_output(tmp_path):
    ds = generate_synthetic(SynthConfig.noisy(distance=5.0, seed=3))
    for name in ("a", "b"):
        write_trajectory(run_odometry(ds, OdometryConfig(seed=7, **QUICK)).trajectory, tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_requires_imu():
    with pytest.raises(ValueError):
        run_odometry(Dataset([], []))
