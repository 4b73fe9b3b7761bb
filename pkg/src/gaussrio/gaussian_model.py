"""Gaussian summaries of point clouds.

A model is ``N`` freely positioned trivariate normals, each parametrized by a
center ``mu``, log-scales ``s`` (log of the square roots of the covariance
eigenvalues) and a raw rotation quaternion. During optimization the effective
parameters are ``max(s_min, s)`` and the normalized quaternion.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from .geom import quat_to_rotmat, quat_to_rotmat_batch

log = logging.getLogger(__name__)

RADAR_POINT_SIGMA = 0.05
DEFAULT_S_MIN = float(np.log(RADAR_POINT_SIGMA))
MAX_GAUSSIANS = 150


class ModelFitError(RuntimeError):
    """Raised when fitting produces a non-finite loss."""

    def __init__(self, message: str, gaussian: int | None = None):
        super().__init__(message)
        self.gaussian = gaussian


@dataclass
class Gaussian:
    mu: NDArray
    log_scales: NDArray
    rot: NDArray
    s_min: float = DEFAULT_S_MIN

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.log_scales = np.asarray(self.log_scales, dtype=float)
        self.rot = np.asarray(self.rot, dtype=float)

    @property
    def effective_log_scales(self) -> NDArray:
        return np.maximum(self.s_min, self.log_scales)

    @property
    def unit_rot(self) -> NDArray:
        return self.rot / np.linalg.norm(self.rot)


def covariance_of(g: Gaussian) -> NDArray:
    R = quat_to_rotmat(g.unit_rot)
    M = R * np.exp(g.effective_log_scales)
    return M @ M.T


def transform_to_local(g: Gaussian, p: ArrayLike) -> NDArray:
    """Map ``p`` into the Gaussian's whitened frame: ``S^-1 R^T (p - mu)``."""
    R = quat_to_rotmat(g.unit_rot)
    return np.exp(-g.effective_log_scales) * (R.T @ (np.asarray(p, dtype=float) - g.mu))


@dataclass
class GaussianModel:
    """``N`` Gaussians stored as stacked arrays (``mu``: N×3, ``log_scales``: N×3, ``rot``: N×4)."""

    mu: NDArray
    log_scales: NDArray
    rot: NDArray
    s_min: float = DEFAULT_S_MIN
    s_disc: float = DEFAULT_S_MIN

    def __post_init__(self):
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        self.log_scales = np.atleast_2d(np.asarray(self.log_scales, dtype=float))
        self.rot = np.atleast_2d(np.asarray(self.rot, dtype=float))
        if len(self.mu) == 0:
            raise ValueError("a Gaussian model needs at least one Gaussian")
        if not (self.mu.shape == self.log_scales.shape == (len(self.mu), 3)) or self.rot.shape != (len(self.mu), 4):
            raise ValueError("inconsistent Gaussian parameter shapes")

    def __len__(self) -> int:
        return len(self.mu)

    def __getitem__(self, j: int) -> Gaussian:
        return Gaussian(self.mu[j].copy(), self.log_scales[j].copy(), self.rot[j].copy(), self.s_min)

    @property
    def gaussians(self) -> list[Gaussian]:
        return [self[j] for j in range(len(self))]

    def copy(self) -> GaussianModel:
        return GaussianModel(self.mu.copy(), self.log_scales.copy(), self.rot.copy(), self.s_min, self.s_disc)

    @property
    def effective_log_scales(self) -> NDArray:
        return np.maximum(self.s_min, self.log_scales)

    def rotations(self) -> NDArray:
        return quat_to_rotmat_batch(self.rot)

    def whitening(self) -> NDArray:
        """Per-Gaussian ``S^-1 R^T`` matrices, shape ``(N, 3, 3)``."""
        return np.exp(-self.effective_log_scales)[:, :, None] * np.transpose(self.rotations(), (0, 2, 1))

    def precisions(self) -> NDArray:
        A = self.whitening()
        return np.transpose(A, (0, 2, 1)) @ A

    def covariances(self) -> NDArray:
        M = self.rotations() * np.exp(self.effective_log_scales)[:, None, :]
        return M @ np.transpose(M, (0, 2, 1))


@dataclass
class Assignment:
    labels: NDArray
    n_gaussians: int
    groups: list[NDArray] = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.n_gaussians + 1))
        self.groups = [order[bounds[j] : bounds[j + 1]] for j in range(self.n_gaussians)]

    @property
    def counts(self) -> NDArray:
        return np.bincount(self.labels, minlength=self.n_gaussians)


def default_gaussian_count(n_points: int) -> int:
    return max(1, min(n_points // 10, MAX_GAUSSIANS))


# -- Bisecting K-Means -------------------------------------------------------


def _two_means(pts: NDArray, rng: np.random.Generator, restarts: int, iters: int) -> tuple[NDArray, float]:
    best_labels, best_sse = None, np.inf
    for _ in range(restarts):
        i, j = rng.choice(len(pts), size=2, replace=False)
        centers = pts[[i, j]].copy()
        labels = np.zeros(len(pts), dtype=int)
        for _ in range(iters):
            new = np.argmin(cdist(pts, centers, "sqeuclidean"), axis=1)
            if np.all(new == 0) or np.all(new == 1):
                break
            for c in range(2):
                centers[c] = pts[new == c].mean(axis=0)
            if np.array_equal(new, labels):
                labels = new
                break
            labels = new
        if np.all(labels == labels[0]):
            continue
        sse = sum(((pts[labels == c] - pts[labels == c].mean(axis=0)) ** 2).sum() for c in range(2))
        if sse < best_sse:
            best_labels, best_sse = labels, sse
    if best_labels is None:
        # all restarts collapsed (duplicate points); split arbitrarily
        best_labels = np.zeros(len(pts), dtype=int)
        best_labels[len(pts) // 2 :] = 1
    return best_labels, best_sse


def bisecting_kmeans(
    points: ArrayLike, n_clusters: int, seed: int = 0, restarts: int = 10, iters: int = 20
) -> NDArray:
    """Cluster centroids obtained by repeatedly bisecting the cluster with the largest SSE."""
    pts = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    clusters = [np.arange(len(pts))]
    sse = [float(((pts - pts.mean(axis=0)) ** 2).sum())]
    while len(clusters) < n_clusters:
        order = np.argsort(sse)[::-1]
        k = next((k for k in order if len(clusters[k]) >= 2), None)
        if k is None:
            break
        idx = clusters.pop(k)
        sse.pop(k)
        labels, _ = _two_means(pts[idx], rng, restarts, iters)
        for c in range(2):
            sub = idx[labels == c]
            clusters.append(sub)
            sse.append(float(((pts[sub] - pts[sub].mean(axis=0)) ** 2).sum()))
    return np.array([pts[c].mean(axis=0) for c in clusters])


def init_model(
    cloud: ArrayLike,
    n_gaussians: int | None = None,
    s_min: float = DEFAULT_S_MIN,
    s_disc: float | None = None,
    seed: int = 0,
) -> GaussianModel:
    """Unit-scale, identity-rotation Gaussians centered on Bisecting K-Means centroids."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot initialize a Gaussian model from an empty cloud")
    if n_gaussians is None:
        n_gaussians = default_gaussian_count(len(pts))
    if n_gaussians < 1:
        raise ValueError("n_gaussians must be >= 1")
    if n_gaussians > len(pts):
        log.warning("requested %d Gaussians for %d points; using %d", n_gaussians, len(pts), len(pts))
        n_gaussians = len(pts)
    mu = bisecting_kmeans(pts, n_gaussians, seed=seed)
    n = len(mu)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianModel(mu, np.zeros((n, 3)), rot, s_min, s_min if s_disc is None else s_disc)


def assign_points(model: GaussianModel, cloud: ArrayLike) -> Assignment:
    """Nearest center by Euclidean distance; ties go to the lowest index."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return Assignment(np.argmin(cdist(pts, model.mu, "sqeuclidean"), axis=1), len(model))


# -- loss --------------------------------------------------------------------

# dR/dq_c of the unit-quaternion rotation polynomial, q = (w, x, y, z)
def _drot_dquat(q: NDArray) -> NDArray:
    w, x, y, z = q.T
    o = np.zeros_like(w)
    dw = np.stack([[o, -z, y], [z, o, -x], [-y, x, o]])
    dx = np.stack([[o, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = np.stack([[-2 * y, x, w], [x, o, z], [-w, z, -2 * y]])
    dz = np.stack([[-2 * z, -w, x], [w, -2 * z, y], [x, y, o]])
    # (4, 3, 3, N) -> (N, 4, 3, 3)
    return 2.0 * np.transpose(np.stack([dw, dx, dy, dz]), (3, 0, 1, 2))


@dataclass
class LossResult:
    loss: float
    per_gaussian: NDArray
    grad_mu: NDArray
    grad_log_scales: NDArray
    grad_rot: NDArray


def model_loss(model: GaussianModel, assignment: Assignment, cloud: ArrayLike) -> LossResult:
    """Mean over Gaussians of Mahalanobis, log-determinant and disc-prior terms, with gradients."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    N = len(model)
    labels = assignment.labels
    counts = np.bincount(labels, minlength=N).astype(float)
    occupied = counts > 0
    inv_n = np.where(occupied, 1.0 / np.maximum(counts, 1.0), 0.0)

    qn = np.linalg.norm(model.rot, axis=1)
    q = model.rot / qn[:, None]
    R = quat_to_rotmat_batch(q)
    s_hat = model.effective_log_scales
    inv_scale = np.exp(-s_hat)

    d = pts - model.mu[labels]
    u = np.einsum("pji,pj->pi", R[labels], d)  # R^T d
    p_hat = inv_scale[labels] * u
    w = inv_scale[labels] * p_hat  # S^-1 p_hat

    def per_gaussian_sum(values: NDArray) -> NDArray:
        flat = values.reshape(len(values), -1)
        out = np.zeros((N, flat.shape[1]))
        np.add.at(out, labels, flat)
        return out.reshape((N,) + values.shape[1:])

    sq = per_gaussian_sum((p_hat**2).sum(axis=1, keepdims=True))[:, 0]
    mahal = 0.5 * inv_n * sq
    kmin = np.argmin(s_hat, axis=1)
    excess = s_hat[np.arange(N), kmin] - model.s_disc
    disc = np.maximum(0.0, excess)
    per_gaussian = mahal + s_hat.sum(axis=1) + disc
    loss = float(per_gaussian.mean())

    g_mu = -inv_n[:, None] * np.einsum("nij,nj->ni", R, per_gaussian_sum(w))
    g_s = -inv_n[:, None] * per_gaussian_sum(p_hat**2) + 1.0
    g_s[np.arange(N), kmin] += (excess > 0).astype(float)
    g_s = np.where(model.log_scales >= model.s_min, g_s, 0.0)

    A = inv_n[:, None, None] * per_gaussian_sum(d[:, :, None] * w[:, None, :])
    g_q = np.einsum("nij,ncij->nc", A, _drot_dquat(q))
    # chain through q = q_raw / |q_raw|
    g_rot = (g_q - (g_q * q).sum(axis=1, keepdims=True) * q) / qn[:, None]

    return LossResult(loss, per_gaussian, g_mu / N, g_s / N, g_rot / N)


# -- fitting -----------------------------------------------------------------


class Adam:
    """Adam moments for a dict of named arrays."""

    def __init__(self, lrs: dict[str, float], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, NDArray] = {}
        self.v: dict[str, NDArray] = {}
        self.t = 0

    def step(self, grads: dict[str, NDArray], scale: float = 1.0) -> dict[str, NDArray]:
        self.t += 1
        out = {}
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mh = m / (1 - self.beta1**self.t)
            vh = v / (1 - self.beta2**self.t)
            out[k] = -scale * self.lrs[k] * mh / (np.sqrt(vh) + self.eps)
        return out


@dataclass
class FitConfig:
    epochs: int = 100
    lr_mu: float = 1e-2
    lr_scale: float = 1e-2
    lr_rot: float = 1e-2
    tol: float = 1e-6
    patience: int = 10


@dataclass
class FitResult:
    model: GaussianModel
    losses: list[float]


def fit_model(model: GaussianModel, cloud: ArrayLike, config: FitConfig | None = None) -> FitResult:
    """Gradient descent on :func:`model_loss`, re-assigning points every epoch.

    Stops after ``config.epochs`` or when the loss improved by less than
    ``config.tol`` over the last ``config.patience`` epochs.
    """
    cfg = config or FitConfig()
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    m = model.copy()
    opt = Adam({"mu": cfg.lr_mu, "s": cfg.lr_scale, "q": cfg.lr_rot})
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        res = model_loss(m, assign_points(m, pts), pts)
        if not np.isfinite(res.loss):
            bad = int(np.flatnonzero(~np.isfinite(res.per_gaussian))[0]) if not np.all(np.isfinite(res.per_gaussian)) else None
            raise ModelFitError(f"non-finite loss at epoch {epoch} (gaussian {bad})", bad)
        losses.append(res.loss)
        if len(losses) > cfg.patience and losses[-cfg.patience - 1] - losses[-1] < cfg.tol:
            break
        upd = opt.step({"mu": res.grad_mu, "s": res.grad_log_scales, "q": res.grad_rot})
        m.mu = m.mu + upd["mu"]
        # projecting onto the clamp keeps the effective scale equal to the raw one
        m.log_scales = np.maximum(m.s_min, m.log_scales + upd["s"])
        rot = m.rot + upd["q"]
        m.rot = rot / np.linalg.norm(rot, axis=1, keepdims=True)
    return FitResult(m, losses)


# -- debug dump --------------------------------------------------------------


def write_model(model: GaussianModel, path: str | Path) -> None:
    """One line per Gaussian: ``mu_x mu_y mu_z s1 s2 s3 qw qx qy qz``."""
    rows = np.hstack([model.mu, model.log_scales, model.rot / np.linalg.norm(model.rot, axis=1, keepdims=True)])
    with open(path, "w") as f:
        for r in rows:
            f.write(" ".join(f"{v:.9g}" for v in r) + "\n")


def read_model(path: str | Path, s_min: float = DEFAULT_S_MIN, s_disc: float | None = None) -> GaussianModel:
    rows = np.loadtxt(path, ndmin=2)
    if rows.shape[1] != 10:
        raise ValueError(f"{path}: expected 10 columns per Gaussian, got {rows.shape[1]}")
    return GaussianModel(rows[:, :3], rows[:, 3:6], rows[:, 6:], s_min, s_min if s_disc is None else s_disc)
