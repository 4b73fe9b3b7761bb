import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaussrio.dataset import (
    Dataset,
    DatasetError,
    Trajectory,
    format_pose_line,
    load_dataset,
    read_trajectory,
    write_dataset,
    write_trajectory,
)
from gaussrio.ekf import ImuSample
from gaussrio.egovel import RadarScan
from gaussrio.geom import PoseSE3

from conftest import poses


def write_fixture(root, imu_times=(0.0, 0.01, 0.02), scans=2):
    (root / "scans").mkdir(parents=True)
    with open(root / "imu.csv", "w") as f:
        f.write("t,ax,ay,az,wx,wy,wz\n")
        for t in imu_times:
            f.write(f"{t},0,0,9.80511,0,0,0\n")
    for i in range(scans):
        with open(root / "scans" / f"{i}.csv", "w") as f:
            f.write("t,x,y,z,doppler,intensity\n")
            for j in range(4):
                f.write(f"{0.005 + 0.01 * i},{1 + j},{j % 2},0.5,-0.1,1\n")
    (root / "calib.txt").write_text("1 0 0\n0 1 0\n0 0 1\n")
    return root


def test_minimal_fixture(tmp_path):
    ds = load_dataset(write_fixture(tmp_path))
    assert len(ds.scans) == 2 and len(ds.imu) == 3
    assert ds.scans[1].timestamp == pytest.approx(0.015)
    assert ds.groundtruth is None and ds.empty_scans == []
    np.testing.assert_array_equal(ds.C_rb, np.eye(3))


def test_doppler_sign(tmp_path):
    ds = load_dataset(write_fixture(tmp_path), doppler_sign=-1.0)
    np.testing.assert_array_equal(ds.scans[0].doppler, 0.1)


def test_duplicate_imu_timestamp_names_line(tmp_path):
    root = write_fixture(tmp_path, imu_times=(0.0, 0.01, 0.01))
    with pytest.raises(DatasetError, match=r"imu\.csv:4"):
        load_dataset(root)


def test_malformed_row_names_line(tmp_path):
    root = write_fixture(tmp_path)
    with open(root / "imu.csv", "a") as f:
        f.write("0.03,0,zero,0,0,0,0\n")
    with pytest.raises(DatasetError, match=r"imu\.csv:5"):
        load_dataset(root)


@pytest.mark.parametrize("missing", ["imu.csv", "calib.txt"])
def test_missing_file(tmp_path, missing):
    root = write_fixture(tmp_path)
    (root / missing).unlink()
    with pytest.raises(DatasetError, match=missing):
        load_dataset(root)


def test_bad_calibration(tmp_path):
    root = write_fixture(tmp_path)
    (root / "calib.txt").write_text("2 0 0\n0 1 0\n0 0 1\n")
    with pytest.raises(DatasetError, match="rotation"):
        load_dataset(root)


def test_empty_scan_flagged(tmp_path, caplog):
    root = write_fixture(tmp_path, scans=3)
    (root / "scans" / "1.csv").write_text("t,x,y,z,doppler,intensity\n")
    with caplog.at_level(logging.WARNING):
        ds = load_dataset(root)
    assert ds.empty_scans == [1]
    assert ds.scans[1].empty and len(ds.scans) == 3
    assert "empty scan" in caplog.text


def test_scan_at_origin_rejected_with_file(tmp_path):
    root = write_fixture(tmp_path)
    with open(root / "scans" / "0.csv", "a") as f:
        f.write("0.005,0,0,0,0,1\n")
    with pytest.raises(DatasetError, match=r"0\.csv"):
        load_dataset(root)


def test_scan_time_must_increase(tmp_path):
    root = write_fixture(tmp_path)
    text = (root / "scans" / "0.csv").read_text().replace("0.005", "0.5")
    (root / "scans" / "0.csv").write_text(text)
    with pytest.raises(DatasetError, match=r"1\.csv"):
        load_dataset(root)


def test_identity_pose_line():
    assert format_pose_line(0.0, PoseSE3.identity()) == "0.000000000 0 0 0 0 0 0 1"


@given(st.lists(poses(), min_size=1, max_size=5))
@settings(deadline=None)
def test_round_trip(tmp_path_factory, ps):
    path = tmp_path_factory.mktemp("traj") / "t.txt"
    traj = Trajectory([1e3 + 0.1 * i for i in range(len(ps))], ps)
    write_trajectory(traj, path)
    back = read_trajectory(path)
    assert back.timestamps == pytest.approx(traj.timestamps, abs=1e-9)
    for a, b in zip(traj.poses, back.poses):
        # nine significant digits bound the relative error by 5e-9
        np.testing.assert_allclose(b.t, a.t, rtol=5e-9, atol=1e-12)
        np.testing.assert_allclose(b.q, a.q, rtol=5e-9, atol=1e-9)


def test_empty_trajectory_file(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        write_trajectory(Trajectory(), tmp_path / "e.txt")
    assert (tmp_path / "e.txt").read_text() == ""
    assert "empty" in caplog.text
    assert len(read_trajectory(tmp_path / "e.txt")) == 0


def test_read_trajectory_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 0 0 0 0 0 0 1\n1 2 3\n")
    with pytest.raises(DatasetError, match="bad.txt:2"):
        read_trajectory(p)
    p.write_text("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n")
    with pytest.raises(DatasetError, match="backwards"):
        read_trajectory(p)


def test_trajectory_must_ascend():
    with pytest.raises(ValueError):
        Trajectory([1.0, 0.0], [PoseSE3.identity()] * 2)
    t = Trajectory()
    t.append(1.0, PoseSE3.identity())
    with pytest.raises(ValueError):
        t.append(0.5, PoseSE3.identity())


def test_dataset_round_trip(tmp_path, rng):
    imu = [ImuSample(0.01 * k, rng.normal(size=3), rng.normal(size=3)) for k in range(5)]
    scans = [RadarScan(0.02 * (i + 1), rng.normal(size=(6, 3)) + 5, rng.normal(size=6), rng.uniform(size=6)) for i in range(3)]
    gt = Trajectory([0.0, 0.1], [PoseSE3.identity(), PoseSE3([1, 0, 0])])
    ds = Dataset(imu, scans, np.eye(3), gt)
    write_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    for a, b in zip(ds.imu, back.imu):
        np.testing.assert_array_equal(a.accel, b.accel)
        np.testing.assert_array_equal(a.gyro, b.gyro)
    for a, b in zip(ds.scans, back.scans):
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.doppler, b.doppler)
        assert a.timestamp == b.timestamp
    assert len(back.groundtruth) == 2
