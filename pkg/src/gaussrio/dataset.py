"""Dataset and trajectory containers and their on-disk formats.

Dataset directory layout::

    imu.csv          header ``t,ax,ay,az,wx,wy,wz`` (SI units)
    scans/<i>.csv    header ``t,x,y,z,doppler,intensity``; first row's t is the scan time
    calib.txt        radar -> body rotation, row-major 3x3
    groundtruth.txt  optional, trajectory layout below

Trajectory layout: one pose per line, ``timestamp tx ty tz qx qy qz qw``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .ekf import ImuSample
from .egovel import RadarScan
from .geom import PoseSE3

log = logging.getLogger(__name__)

IMU_HEADER = ["t", "ax", "ay", "az", "wx", "wy", "wz"]
SCAN_HEADER = ["t", "x", "y", "z", "doppler", "intensity"]


class DatasetError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass
class Trajectory:
    timestamps: list[float] = field(default_factory=list)
    poses: list[PoseSE3] = field(default_factory=list)

    def __post_init__(self):
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("trajectory timestamps must be ascending")

    def __len__(self) -> int:
        return len(self.poses)

    def append(self, t: float, pose: PoseSE3) -> None:
        if self.timestamps and t < self.timestamps[-1]:
            raise ValueError("trajectory timestamps must be ascending")
        self.timestamps.append(float(t))
        self.poses.append(pose)

    @property
    def times(self) -> NDArray:
        return np.asarray(self.timestamps, dtype=float)

    @property
    def positions(self) -> NDArray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)

    def transformed(self, T: PoseSE3) -> Trajectory:
        """Every pose left-multiplied by ``T``."""
        return Trajectory(list(self.timestamps), [T.compose(p) for p in self.poses])


@dataclass
class Dataset:
    imu: list[ImuSample]
    scans: list[RadarScan]
    C_rb: NDArray = field(default_factory=lambda: np.eye(3))
    groundtruth: Trajectory | None = None
    empty_scans: list[int] = field(default_factory=list)

    def validate(self) -> None:
        t_imu = np.array([s.timestamp for s in self.imu])
        if np.any(np.diff(t_imu) <= 0):
            raise DatasetError("IMU timestamps are not strictly increasing")
        t_scan = np.array([s.timestamp for s in self.scans if not s.empty])
        if np.any(np.diff(t_scan) <= 0):
            raise DatasetError("scan timestamps are not strictly increasing")


# -- trajectory files ---------------------------------------------------------


def format_pose_line(t: float, pose: PoseSE3) -> str:
    w, x, y, z = pose.q
    vals = [*pose.t, x, y, z, w]
    return f"{t:.9f} " + " ".join(f"{v + 0.0:.9g}" for v in vals)


def write_trajectory(traj: Trajectory, path: str | Path) -> None:
    if len(traj) == 0:
        log.warning("writing empty trajectory to %s", path)
    with open(path, "w") as f:
        for t, pose in zip(traj.timestamps, traj.poses):
            f.write(format_pose_line(t, pose) + "\n")


def read_trajectory(path: str | Path) -> Trajectory:
    traj = Trajectory()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DatasetError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                t, tx, ty, tz, qx, qy, qz, qw = map(float, parts)
            except ValueError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from None
            if traj.timestamps and t < traj.timestamps[-1]:
                raise DatasetError(f"{path}:{lineno}: timestamp {t} goes backwards")
            traj.append(t, PoseSE3([tx, ty, tz], [qw, qx, qy, qz]))
    return traj


# -- dataset directories ------------------------------------------------------


def _read_csv(path: Path, header: list[str]) -> NDArray:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            got = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file (missing header)") from None
        if got != header:
            raise DatasetError(f"{path}:1: expected header {','.join(header)}, got {','.join(got)}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from None
            if not all(np.isfinite(vals)):
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, len(header))


def read_scan(path: str | Path, doppler_sign: float = 1.0) -> RadarScan:
    """One scan file; a header-only file gives an empty scan with a NaN timestamp."""
    rows = _read_csv(Path(path), SCAN_HEADER)
    if len(rows) == 0:
        return RadarScan(np.nan, np.zeros((0, 3)), np.zeros(0))
    try:
        return RadarScan(rows[0, 0], rows[:, 1:4], doppler_sign * rows[:, 4], rows[:, 5])
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from None


def load_dataset(root: str | Path, doppler_sign: float = 1.0) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    for name in ("imu.csv", "calib.txt", "scans"):
        if not (root / name).exists():
            raise DatasetError(f"{root}: missing {name}")

    imu_rows = _read_csv(root / "imu.csv", IMU_HEADER)
    for i in range(1, len(imu_rows)):
        if imu_rows[i, 0] <= imu_rows[i - 1, 0]:
            raise DatasetError(f"{root / 'imu.csv'}:{i + 2}: timestamp {imu_rows[i, 0]!r} is not increasing")
    imu = [ImuSample(r[0], r[1:4], r[4:7]) for r in imu_rows]

    try:
        C = np.loadtxt(root / "calib.txt").reshape(3, 3)
    except ValueError as e:
        raise DatasetError(f"{root / 'calib.txt'}: expected a 3x3 matrix ({e})") from None
    if not np.allclose(C @ C.T, np.eye(3), atol=1e-6) or np.linalg.det(C) < 0:
        raise DatasetError(f"{root / 'calib.txt'}: not a rotation matrix")

    files = []
    for p in (root / "scans").glob("*.csv"):
        try:
            files.append((int(p.stem), p))
        except ValueError:
            raise DatasetError(f"{p}: scan file names must be integer indices") from None
    files.sort()
    scans, empty = [], []
    last_t = -np.inf
    for i, (_, p) in enumerate(files):
        scan = read_scan(p, doppler_sign)
        if scan.empty:
            log.warning("%s: empty scan", p)
            empty.append(i)
        elif scan.timestamp <= last_t:
            raise DatasetError(f"{p}:2: scan timestamp {scan.timestamp!r} is not after the previous scan")
        else:
            last_t = scan.timestamp
        scans.append(scan)

    gt = read_trajectory(root / "groundtruth.txt") if (root / "groundtruth.txt").exists() else None
    return Dataset(imu, scans, C, gt, empty)


def write_dataset(ds: Dataset, root: str | Path) -> None:
    root = Path(root)
    (root / "scans").mkdir(parents=True, exist_ok=True)
    fmt = "%.17g"
    with open(root / "imu.csv", "w") as f:
        f.write(",".join(IMU_HEADER) + "\n")
        for s in ds.imu:
            f.write(",".join(fmt % v for v in (s.timestamp, *s.accel, *s.gyro)) + "\n")
    width = max(6, len(str(len(ds.scans))))
    for i, scan in enumerate(ds.scans):
        with open(root / "scans" / f"{i:0{width}d}.csv", "w") as f:
            f.write(",".join(SCAN_HEADER) + "\n")
            for p, d, it in zip(scan.positions, scan.doppler, scan.intensity):
                f.write(",".join(fmt % v for v in (scan.timestamp, *p, d, it)) + "\n")
    with open(root / "calib.txt", "w") as f:
        for row in np.asarray(ds.C_rb):
            f.write(" ".join(fmt % v for v in row) + "\n")
    if ds.groundtruth is not None:
        write_trajectory(ds.groundtruth, root / "groundtruth.txt")

