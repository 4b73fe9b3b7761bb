"""Doppler egovelocity estimation with RANSAC over least squares.

Sign convention: positive Doppler means the target recedes from the sensor,
so a static point seen from a platform moving with velocity ``v`` reads
``-dir . v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray


class EgovelocityError(RuntimeError):
    """Too few points or degenerate geometry; the caller should skip the update."""


@dataclass
class RadarScan:
    timestamp: float
    positions: NDArray
    doppler: NDArray
    intensity: NDArray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.doppler = np.asarray(self.doppler, dtype=float).reshape(-1)
        if self.intensity is None:
            self.intensity = np.zeros(len(self.positions))
        self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
        if not (len(self.positions) == len(self.doppler) == len(self.intensity)):
            raise ValueError("scan columns have different lengths")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("scan positions must be finite")
        if np.any(np.all(self.positions == 0.0, axis=1)):
            raise ValueError("scan contains a point at the sensor origin")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def empty(self) -> bool:
        return len(self.positions) == 0

    def rotated(self, C: ArrayLike) -> RadarScan:
        """Scan with positions rotated by ``C`` (e.g. radar -> body)."""
        return RadarScan(self.timestamp, self.positions @ np.asarray(C).T, self.doppler.copy(), self.intensity.copy())

    def subset(self, mask: NDArray) -> RadarScan:
        return RadarScan(self.timestamp, self.positions[mask], self.doppler[mask], self.intensity[mask])


@dataclass
class RansacConfig:
    threshold: float = 0.15
    iterations: int = 100
    min_inliers: int = 3
    cov_floor: float = 1e-6
    seed: int = 0


@dataclass
class EgovelEstimate:
    v_body: NDArray
    cov: NDArray
    inlier_mask: NDArray

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_mask.sum())


def doppler_residual(point_dir: ArrayLike, doppler: ArrayLike, v: ArrayLike) -> NDArray | float:
    """``doppler + dir . v``; zero for a static point."""
    return np.asarray(doppler) + np.asarray(point_dir) @ np.asarray(v, dtype=float)


def _lsq(D: NDArray, y: NDArray) -> NDArray:
    return np.linalg.lstsq(D, -y, rcond=None)[0]


def estimate_egovelocity(scan: RadarScan, cfg: RansacConfig | None = None) -> EgovelEstimate:
    """Velocity of the sensor in the scan's frame from static (inlier) points."""
    cfg = cfg or RansacConfig()
    pts = scan.positions
    if len(pts) < 3:
        raise EgovelocityError(f"need at least 3 points, got {len(pts)}")
    D = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    y = scan.doppler
    if np.linalg.matrix_rank(D) < 3:
        raise EgovelocityError("point directions do not span 3D")

    rng = np.random.default_rng(cfg.seed)
    best_mask, best_count = None, -1
    for _ in range(cfg.iterations):
        idx = rng.choice(len(D), size=3, replace=False)
        A = D[idx]
        if abs(np.linalg.det(A)) < 1e-6:
            continue
        v = np.linalg.solve(A, -y[idx])
        mask = np.abs(doppler_residual(D, y, v)) < cfg.threshold
        count = int(mask.sum())
        if count > best_count:
            best_mask, best_count = mask, count
            if count == len(D):
                break
    if best_mask is None or best_count < cfg.min_inliers:
        raise EgovelocityError("RANSAC found no consensus set")

    mask = best_mask
    for _ in range(3):
        v = _lsq(D[mask], y[mask])
        new = np.abs(doppler_residual(D, y, v)) < cfg.threshold
        if new.sum() < 3 or np.array_equal(new, mask) or np.linalg.matrix_rank(D[new]) < 3:
            break
        mask = new
    if np.linalg.matrix_rank(D[mask]) < 3:
        raise EgovelocityError("inlier directions do not span 3D")
    v = _lsq(D[mask], y[mask])
    A = D[mask]
    r = doppler_residual(A, y[mask], v)
    dof = max(1, len(A) - 3)
    sigma2 = float(r @ r) / dof
    cov = sigma2 * np.linalg.inv(A.T @ A) + cfg.cov_floor * np.eye(3)
    return EgovelEstimate(v, 0.5 * (cov + cov.T), mask)
