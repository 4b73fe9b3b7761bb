"""Multi-hypothesis registration of a point cloud against a Gaussian model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .gaussian_model import Adam, GaussianModel
from .geom import PoseSE3, pose_relative, quat_exp, quat_mul, quat_to_rotmat, quat_to_rotmat_batch, rotation_angle

log = logging.getLogger(__name__)


@dataclass
class MatchConfig:
    n_hypotheses: int = 16
    mahal_clamp: float = 4.0
    downsample_target: int = 512
    # std-devs for x, y, z (m) and roll, pitch, yaw (rad)
    dispersion: tuple[float, ...] = (0.3, 0.3, 0.1, np.radians(0.5), np.radians(0.5), np.radians(2.0))
    epochs: int = 50
    lr_translation: float = 0.05
    lr_rotation: float = 0.01
    # learning rates decay linearly to this fraction over the last half of the epochs
    lr_final_fraction: float = 0.01

    def __post_init__(self):
        if self.n_hypotheses < 1:
            raise ValueError("n_hypotheses must be >= 1")
        if self.mahal_clamp <= 0:
            raise ValueError("mahal_clamp must be > 0")
        if len(self.dispersion) != 6:
            raise ValueError("dispersion needs 6 entries (x, y, z, roll, pitch, yaw)")


@dataclass
class KeyframeCriteria:
    kf_dist_max: float = 2.0
    kf_angle_max: float = np.radians(15.0)

    def __post_init__(self):
        if self.kf_dist_max <= 0 or self.kf_angle_max <= 0:
            raise ValueError("keyframe thresholds must be > 0")


@dataclass
class PoseHypothesis:
    pose: PoseSE3
    loss: float = np.inf
    frozen: bool = False


@dataclass
class MatchResult:
    best: PoseSE3
    best_loss: float
    hypotheses: list[PoseHypothesis] = field(default_factory=list)


def sample_hypotheses(center: PoseSE3, cfg: MatchConfig, seed: int | np.random.Generator = 0) -> list[PoseHypothesis]:
    """``center`` itself followed by ``K - 1`` perturbed copies.

    Perturbations are drawn per axis: translation is added in the reference
    frame and roll/pitch/yaw form a tangent rotation composed on the left.
    """
    rng = np.random.default_rng(seed)
    sig = np.asarray(cfg.dispersion, dtype=float)
    out = [PoseHypothesis(center)]
    for _ in range(cfg.n_hypotheses - 1):
        e = rng.normal(size=6) * sig
        q = quat_mul(quat_exp(0.5 * e[3:]), center.q)
        out.append(PoseHypothesis(PoseSE3(center.t + e[:3], q)))
    return out


class _ModelTerms:
    """Per-model quantities reused by every nearest-Gaussian query."""

    def __init__(self, model: GaussianModel):
        self.A = model.whitening()
        Lam = np.transpose(self.A, (0, 2, 1)) @ self.A
        self.mu = model.mu
        self.Lmu = np.einsum("nij,nj->ni", Lam, self.mu)
        self.quad = np.stack(
            [Lam[:, 0, 0], Lam[:, 1, 1], Lam[:, 2, 2], 2 * Lam[:, 0, 1], 2 * Lam[:, 0, 2], 2 * Lam[:, 1, 2]], axis=0
        )
        self.const = (self.mu * self.Lmu).sum(axis=1)

    def nearest(self, x: NDArray) -> tuple[NDArray, NDArray]:
        """Index of the Mahalanobis-nearest Gaussian for each row of ``x`` and the whitened offsets."""
        # quadratic-form expansion: x'Λx - 2x'Λμ + μ'Λμ, evaluated as one matrix product
        feats = np.column_stack(
            [x[:, 0] ** 2, x[:, 1] ** 2, x[:, 2] ** 2, x[:, 0] * x[:, 1], x[:, 0] * x[:, 2], x[:, 1] * x[:, 2]]
        )
        d2 = feats @ self.quad - 2.0 * x @ self.Lmu.T + self.const[None, :]
        j = np.argmin(d2, axis=1)
        # exact offsets for the chosen pairs; the expansion above can lose digits
        p_hat = np.einsum("pij,pj->pi", self.A[j], x - self.mu[j])
        return j, p_hat


def _batch_loss_and_grad(terms: _ModelTerms, cloud: NDArray, R: NDArray, t: NDArray, mahal_clamp: float):
    """Loss and gradients for ``K`` poses at once; ``R`` is (K, 3, 3) and ``t`` (K, 3)."""
    K, M = len(t), len(cloud)
    rp = np.einsum("kij,pj->kpi", R, cloud)
    x = (rp + t[:, None, :]).reshape(-1, 3)
    j, p_hat = terms.nearest(x)
    d = np.linalg.norm(p_hat, axis=1)
    loss = np.minimum(d, mahal_clamp).reshape(K, M).mean(axis=1)
    active = (d < mahal_clamp) & (d > 1e-12)
    # d/dx |A (x - mu)| = A^T p_hat / |p_hat|
    gx = np.zeros_like(x)
    gx[active] = np.einsum("pji,pj->pi", terms.A[j[active]], p_hat[active]) / d[active, None]
    gx = gx.reshape(K, M, 3) / M
    g_t = gx.sum(axis=1)
    # left tangent perturbation: d x / d delta = -[R p]_x
    g_r = np.cross(rp, gx).sum(axis=1)
    return loss, g_t, g_r


def _loss_and_grad(model: GaussianModel, cloud: NDArray, R: NDArray, t: NDArray, mahal_clamp: float):
    loss, g_t, g_r = _batch_loss_and_grad(_ModelTerms(model), cloud, R[None], np.asarray(t, float)[None], mahal_clamp)
    return float(loss[0]), g_t[0], g_r[0]


def match_loss(model: GaussianModel, cloud: ArrayLike, pose: PoseSE3, mahal_clamp: float) -> tuple[float, NDArray]:
    """Mean clamped Mahalanobis distance of the transformed cloud.

    Returns the loss and its gradient with respect to ``[dt, dtheta]``, where
    ``dtheta`` perturbs the rotation on the left (``q <- exp(dtheta/2) ⊗ q``).
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    loss, g_t, g_r = _loss_and_grad(model, pts, quat_to_rotmat(pose.q), pose.t, mahal_clamp)
    return loss, np.concatenate([g_t, g_r])


def downsample(cloud: NDArray, target: int, rng: np.random.Generator) -> NDArray:
    if len(cloud) <= target:
        return cloud
    idx = np.sort(rng.choice(len(cloud), size=target, replace=False))
    return cloud[idx]


def register_scan(
    model: GaussianModel, cloud: ArrayLike, center: PoseSE3, cfg: MatchConfig | None = None, seed: int = 0
) -> MatchResult:
    """Optimize ``K`` pose hypotheses simultaneously and return the lowest-loss one."""
    cfg = cfg or MatchConfig()
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot register an empty cloud")
    rng = np.random.default_rng(seed)
    sub = downsample(pts, cfg.downsample_target, rng)
    hyps = sample_hypotheses(center, cfg, rng)
    K = len(hyps)
    t = np.array([h.pose.t for h in hyps])
    q = np.array([h.pose.q for h in hyps])
    frozen = np.zeros(K, dtype=bool)
    opts = [Adam({"t": cfg.lr_translation, "r": cfg.lr_rotation}) for _ in range(K)]

    terms = _ModelTerms(model)
    half = cfg.epochs // 2
    for epoch in range(cfg.epochs):
        if epoch < half:
            scale = 1.0
        else:
            frac = (epoch - half) / max(1, cfg.epochs - half - 1)
            scale = 1.0 + (cfg.lr_final_fraction - 1.0) * frac
        live = np.flatnonzero(~frozen)
        if len(live) == 0:
            break
        loss, g_t, g_r = _batch_loss_and_grad(terms, sub, quat_to_rotmat_batch(q[live]), t[live], cfg.mahal_clamp)
        for i, k in enumerate(live):
            if not (np.isfinite(loss[i]) and np.all(np.isfinite(g_t[i])) and np.all(np.isfinite(g_r[i]))):
                log.warning("hypothesis %d diverged at epoch %d; freezing", k, epoch)
                frozen[k] = True
                continue
            upd = opts[k].step({"t": g_t[i], "r": g_r[i]}, scale)
            t_new = t[k] + upd["t"]
            q_new = quat_mul(quat_exp(0.5 * upd["r"]), q[k])
            if np.all(np.isfinite(t_new)) and np.all(np.isfinite(q_new)):
                t[k], q[k] = t_new, q_new
            else:
                frozen[k] = True

    poses = [PoseSE3(t[k], q[k]) for k in range(K)]
    final, _, _ = _batch_loss_and_grad(
        terms, sub, np.array([p.R for p in poses]), np.array([p.t for p in poses]), cfg.mahal_clamp
    )
    out = [
        PoseHypothesis(p, float(f) if np.isfinite(f) else np.inf, bool(z)) for p, f, z in zip(poses, final, frozen)
    ]
    best = min(range(K), key=lambda k: out[k].loss)
    return MatchResult(out[best].pose, out[best].loss, out)


def keyframe_due(last_kf: PoseSE3, current: PoseSE3, crit: KeyframeCriteria) -> bool:
    rel = pose_relative(last_kf, current)
    # boundary is inclusive; the slack absorbs quaternion round-off
    eps = 1e-12
    return bool(
        np.linalg.norm(rel.t) >= crit.kf_dist_max - eps or rotation_angle(rel.q) >= crit.kf_angle_max - eps
    )
