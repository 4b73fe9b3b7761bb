"""Trajectory error metrics.

Relative errors follow the usual odometry protocol: for each start pose and
each segment length, the estimated and reference motions over that segment
are compared, translation error as a percentage of the length and rotation
error in degrees per metre. No alignment is applied to either metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .dataset import Trajectory
from .geom import pose_relative, rotation_angle

DEFAULT_LENGTHS = (10.0, 20.0, 40.0, 80.0)
MAX_TIME_GAP = 0.05


@dataclass
class SegmentErrors:
    length: float
    count: int
    t_rel_pct: float
    r_rel_deg_per_m: float
    # per-segment error translations (count x 3), expressed in the segment start frame
    axis_errors: NDArray = field(default_factory=lambda: np.zeros((0, 3)))


@dataclass
class RelativeErrors:
    segments: list[SegmentErrors]

    @property
    def t_rel_pct(self) -> float:
        vals = [s.t_rel_pct for s in self.segments if s.count]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def r_rel_deg_per_m(self) -> float:
        vals = [s.r_rel_deg_per_m for s in self.segments if s.count]
        return float(np.mean(vals)) if vals else float("nan")


def associate(est: Trajectory, ref: Trajectory, max_gap: float = MAX_TIME_GAP) -> tuple[NDArray, NDArray]:
    """Index pairs ``(i_est, i_ref)`` matching each estimate to its nearest reference time."""
    te, tr = est.times, ref.times
    if len(te) == 0 or len(tr) == 0:
        return np.zeros(0, int), np.zeros(0, int)
    j = np.clip(np.searchsorted(tr, te), 1, len(tr) - 1) if len(tr) > 1 else np.zeros(len(te), int)
    if len(tr) > 1:
        left_closer = np.abs(te - tr[j - 1]) <= np.abs(tr[j] - te)
        j = np.where(left_closer, j - 1, j)
    ok = np.abs(tr[j] - te) <= max_gap
    return np.flatnonzero(ok), j[ok]


def evaluate_relative_errors(
    est: Trajectory, ref: Trajectory, lengths=DEFAULT_LENGTHS, max_gap: float = MAX_TIME_GAP
) -> RelativeErrors:
    if len(ref) < 2:
        raise ValueError("reference trajectory needs at least 2 poses")
    ie, ir = associate(est, ref, max_gap)
    if len(ie) == 0:
        raise ValueError("trajectories do not overlap in time")
    E = [est.poses[i] for i in ie]
    G = [ref.poses[i] for i in ir]
    steps = np.linalg.norm(np.diff(np.array([g.t for g in G]), axis=0), axis=1)
    dist = np.concatenate([[0.0], np.cumsum(steps)])

    out = []
    for L in lengths:
        t_err, r_err, axes = [], [], []
        for i in range(len(G)):
            # tolerate cumulative-sum roundoff when a pose sits exactly L along
            j = int(np.searchsorted(dist, dist[i] + L * (1 - 1e-9), side="left"))
            if j >= len(G):
                break
            d_ref = pose_relative(G[i], G[j])
            d_est = pose_relative(E[i], E[j])
            err = pose_relative(d_ref, d_est)
            axes.append(err.t)
            t_err.append(np.linalg.norm(err.t))
            r_err.append(np.degrees(rotation_angle(err.q)))
        n = len(t_err)
        out.append(
            SegmentErrors(
                float(L),
                n,
                float(np.mean(t_err)) / L * 100 if n else float("nan"),
                float(np.mean(r_err)) / L if n else float("nan"),
                np.array(axes).reshape(-1, 3),
            )
        )
    return RelativeErrors(out)


def absolute_trajectory_error(est: Trajectory, ref: Trajectory, max_gap: float = MAX_TIME_GAP) -> float:
    """Position RMSE over associated poses, without alignment."""
    ie, ir = associate(est, ref, max_gap)
    if len(ie) == 0:
        raise ValueError("trajectories do not overlap in time")
    d = est.positions[ie] - ref.positions[ir]
    return float(np.sqrt(np.mean(np.sum(d**2, axis=1))))
