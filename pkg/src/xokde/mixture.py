"""Gaussian mixtures and the mixture-level algebra used by compression."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .gauss import (
    _CHUNK_ELEMENTS,
    LOG_2PI,
    GaussianComponent,
    SingularCovarianceError,
    factorize_stack,
    log_density_stack,
    mahalanobis_stack,
)

SIGMA_POINT_SPREAD = 3
SPLIT_OFFSET = 0.5
GOLDBERGER_MAX_ITER = 20


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


class Mixture:
    """Weighted Gaussian mixture stored as stacked arrays.

    ``weights`` has shape ``(K,)``, ``means`` ``(K, d)`` and ``covs`` either
    ``(K, d, d)`` or ``(K, d)`` for diagonal covariances. Arrays are read-only;
    every operation returns a new mixture, which keeps the lazily computed
    factorization cache coherent.
    """

    def __init__(self, weights, means, covs, diagonal: bool | None = None) -> None:
        self.weights = _frozen(np.reshape(weights, -1))
        means = np.asarray(means, dtype=float)
        K = self.weights.shape[0]
        d = means.shape[-1]
        self.means = _frozen(means.reshape(K, d))
        covs = np.asarray(covs, dtype=float)
        if diagonal is None:
            diagonal = covs.ndim == 2
        if diagonal:
            covs = covs.reshape(K, d)
        else:
            covs = covs.reshape(K, d, d)
        self.covs = _frozen(covs)
        self.diagonal = bool(diagonal)
        self._factor: tuple[np.ndarray, np.ndarray] | None = None

    @classmethod
    def empty(cls, d: int, diagonal: bool = False) -> Mixture:
        shape = (0, d) if diagonal else (0, d, d)
        return cls(np.zeros(0), np.zeros((0, d)), np.zeros(shape), diagonal)

    @classmethod
    def from_components(cls, comps) -> Mixture:
        comps = list(comps)
        if not comps:
            raise ValueError("need at least one component")
        return cls(
            [c.weight for c in comps],
            np.stack([c.mean for c in comps]),
            np.stack([c.cov for c in comps]),
            comps[0].diagonal,
        )

    @classmethod
    def single(cls, comp: GaussianComponent) -> Mixture:
        return cls.from_components([comp])

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def __getitem__(self, i: int) -> GaussianComponent:
        return GaussianComponent(self.weights[i], self.means[i].copy(), self.covs[i].copy())

    @property
    def components(self) -> list[GaussianComponent]:
        return [self[i] for i in range(len(self))]

    def __repr__(self) -> str:
        kind = "diag" if self.diagonal else "full"
        return f"Mixture(K={len(self)}, d={self.d}, {kind})"

    def _replace(self, weights=None, means=None, covs=None) -> Mixture:
        return Mixture(
            self.weights if weights is None else weights,
            self.means if means is None else means,
            self.covs if covs is None else covs,
            self.diagonal,
        )

    def normalized(self) -> Mixture:
        total = self.weights.sum()
        if not total > 0:
            raise ValueError("mixture has no weight to normalize")
        return self._replace(weights=self.weights / total)

    def subset(self, indices) -> Mixture:
        idx = np.asarray(indices, dtype=int)
        return self._replace(self.weights[idx], self.means[idx], self.covs[idx])

    def reweighted(self, weights) -> Mixture:
        return self._replace(weights=np.asarray(weights, dtype=float))

    def concat(self, other: Mixture) -> Mixture:
        if other.diagonal != self.diagonal or other.d != self.d:
            raise ValueError("incompatible mixtures")
        return Mixture(
            np.concatenate([self.weights, other.weights]),
            np.concatenate([self.means, other.means]),
            np.concatenate([self.covs, other.covs]),
            self.diagonal,
        )

    def convolve(self, bandwidth: np.ndarray) -> Mixture:
        """Convolve every component with a zero-mean Gaussian kernel."""
        return self._replace(covs=self.covs + np.asarray(bandwidth, dtype=float)[None])

    def transformed(self, transform) -> Mixture:
        """Apply a whitening transform (or anything with forward/forward_cov)."""
        return self._replace(
            means=transform.forward(self.means), covs=transform.forward_cov(self.covs)
        )

    def untransformed(self, transform) -> Mixture:
        return self._replace(
            means=transform.inverse(self.means), covs=transform.inverse_cov(self.covs)
        )

    def dirac_mask(self) -> np.ndarray:
        axes = (1,) if self.diagonal else (1, 2)
        return ~np.any(self.covs, axis=axes)

    def full_covs(self) -> np.ndarray:
        if not self.diagonal:
            return np.asarray(self.covs)
        K, d = self.covs.shape
        out = np.zeros((K, d, d))
        out[:, np.arange(d), np.arange(d)] = self.covs
        return out

    def factorization(self) -> tuple[np.ndarray, np.ndarray]:
        if self._factor is None:
            self._factor = factorize_stack(self.covs, self.diagonal)
        return self._factor

    def component_log_pdf(self, X) -> np.ndarray:
        """Log densities of every component at every point, shape ``(K, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        log_dets, inverses = self.factorization()
        return log_density_stack(X, self.means, log_dets, inverses, self.diagonal)

    def log_pdf(self, X) -> np.ndarray:
        """Log of the mixture density at each row of ``X``, via log-sum-exp."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        out = logsumexp(self.component_log_pdf(X) + log_w[:, None], axis=0)
        return float(out[0]) if single else out

    def mean_and_cov(self) -> tuple[np.ndarray, np.ndarray]:
        g = moment_match(self)
        return g.mean, g.cov


def moment_match(m: Mixture, indices=None) -> GaussianComponent:
    """Single Gaussian with the summed weight and the first two moments of a sub-mixture."""
    idx = np.arange(len(m)) if indices is None else np.asarray(indices, dtype=int)
    if idx.size == 0:
        raise ValueError("empty index set")
    if idx.size == 1:
        return m[int(idx[0])]
    w = m.weights[idx]
    total = w.sum()
    if not total > 0:
        raise ValueError("zero total weight: mean is undefined")
    p = w / total
    means = m.means[idx]
    mu = p @ means
    centered = means - mu
    if m.diagonal:
        cov = p @ (m.covs[idx] + centered * centered)
    else:
        cov = np.einsum("k,kij->ij", p, m.covs[idx]) + (centered.T * p) @ centered
        cov = 0.5 * (cov + cov.T)
    return GaussianComponent(total, mu, cov)


def whole_model_gaussian(m: Mixture) -> GaussianComponent:
    if len(m) == 0:
        raise ValueError("empty mixture")
    return moment_match(m)


class SigmaPointSet(NamedTuple):
    points: np.ndarray   # (2d+1, d); row 0 is the mean
    weights: np.ndarray  # (2d+1,)


def _sigma_weights(d: int) -> tuple[np.ndarray, float]:
    k = max(0, SIGMA_POINT_SPREAD - d)
    w = np.full(2 * d + 1, 1.0 / (2 * (d + k)))
    w[0] = k / (d + k)
    return w, math.sqrt(d + k)


def _sigma_stack(means: np.ndarray, covs: np.ndarray, diagonal: bool):
    K, d = means.shape
    weights, spread = _sigma_weights(d)
    if diagonal:
        cols = np.zeros((K, d, d))
        cols[:, np.arange(d), np.arange(d)] = np.sqrt(np.maximum(covs, 0.0))
    else:
        vals, vecs = np.linalg.eigh(covs)
        cols = vecs * np.sqrt(np.maximum(vals, 0.0))[:, None, :]
    # cols[k, :, j] is the j-th scaled axis; transpose to rows.
    offsets = spread * np.swapaxes(cols, 1, 2)
    pts = np.concatenate(
        [means[:, None, :], means[:, None, :] + offsets, means[:, None, :] - offsets], axis=1
    )
    return pts, weights


def sigma_points(g: GaussianComponent) -> SigmaPointSet:
    """Unscented-transform sigma points of a Gaussian (2d+1 points)."""
    pts, w = _sigma_stack(g.mean[None], g.cov[None], g.diagonal)
    return SigmaPointSet(pts[0], w)


def hellinger(p1: Mixture, p2: Mixture) -> float:
    """Unscented estimate of the Hellinger distance between two mixtures.

    Sigma points are drawn from the equal-weight combination of both mixtures,
    which serves as the importance density. All covariances must be positive
    definite (smooth Dirac components with a bandwidth first).
    """
    if p1.d != p2.d:
        raise ValueError("dimension mismatch")
    pc = p1.reweighted(0.5 * p1.weights).concat(p2.reweighted(0.5 * p2.weights))
    sw, spread = _sigma_weights(pc.d)
    if pc.diagonal:
        sd = np.sqrt(np.maximum(pc.covs, 0.0))
        l1 = _diag_sigma_log_pdf(p1, pc.means, sd, spread)
        l2 = _diag_sigma_log_pdf(p2, pc.means, sd, spread)
    else:
        pts, _ = _sigma_stack(pc.means, pc.covs, False)
        X = pts.reshape(-1, pc.d)
        l1 = p1.log_pdf(X).reshape(len(pc), -1)
        l2 = p2.log_pdf(X).reshape(len(pc), -1)
    point_w = pc.weights[:, None] * sw[None, :]
    lc = np.logaddexp(l1, l2) - math.log(2.0)
    with np.errstate(invalid="ignore", over="ignore"):
        g = (np.exp(0.5 * (l1 - lc)) - np.exp(0.5 * (l2 - lc))) ** 2
    # Zero-weight centre points (k = 0) drop out here as well.
    g = np.where(np.isfinite(lc) & (point_w > 0), g, 0.0)
    d2 = 0.5 * float(np.sum(point_w * g))
    return math.sqrt(min(max(d2, 0.0), 1.0))


def _diag_sigma_log_pdf(target: Mixture, centers: np.ndarray, sd: np.ndarray,
                        spread: float) -> np.ndarray:
    """Log density of a diagonal mixture at the sigma points of diagonal Gaussians.

    A sigma point moves its centre along one axis only, so its Mahalanobis
    distance to each target component is the centre's distance plus a
    single-coordinate correction. This avoids materializing the ``2d + 1``
    points per source. Output columns follow the sigma-point order.
    """
    n, d = centers.shape
    log_dets, inverses = target.factorization()
    with np.errstate(divide="ignore"):
        log_w = np.log(target.weights)
    maha = mahalanobis_stack(centers, target.means, inverses, True).T
    base = log_w[None, :] - 0.5 * (d * LOG_2PI + log_dets[None, :] + maha)
    out = np.empty((n, 2 * d + 1))
    out[:, 0] = logsumexp(base, axis=1)
    K = len(target)
    step = max(1, _CHUNK_ELEMENTS // max(1, K * d))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        s = spread * sd[lo:hi, None, :]
        lin = centers[lo:hi, None, :] - target.means[None, :, :]
        lin *= inverses[None]
        lin *= s
        quad = (-0.5 * s * s) * inverses[None]
        quad += base[lo:hi, :, None]
        out[lo:hi, 1:d + 1] = _lse_axis1(quad - lin)
        quad += lin
        out[lo:hi, d + 1:] = _lse_axis1(quad)
    return out


def _lse_axis1(a: np.ndarray) -> np.ndarray:
    """In-place log-sum-exp over axis 1 of a 3-d array (consumes ``a``)."""
    top = a.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    a -= safe[:, None, :]
    np.exp(a, out=a)
    with np.errstate(divide="ignore"):
        return np.log(a.sum(axis=1)) + safe


def principal_split(g: GaussianComponent, offset: float = SPLIT_OFFSET) -> Mixture:
    """Split a Gaussian in two along its largest principal axis, preserving moments."""
    if g.diagonal:
        j = int(np.argmax(g.cov))
        lam = g.cov[j]
        shift = np.zeros(g.d)
        shift[j] = offset * math.sqrt(lam)
        child = g.cov.copy()
        child[j] -= offset ** 2 * lam
    else:
        vals, vecs = np.linalg.eigh(g.cov)
        lam, u = vals[-1], vecs[:, -1]
        shift = offset * math.sqrt(max(lam, 0.0)) * u
        child = g.cov - offset ** 2 * lam * np.outer(u, u)
        child = 0.5 * (child + child.T)
    half = 0.5 * g.weight
    return Mixture(
        [half, half], np.stack([g.mean + shift, g.mean - shift]), np.stack([child, child]),
        g.diagonal,
    )


class PartitionAssignment(NamedTuple):
    first: np.ndarray
    second: np.ndarray


def _kl_to(m: Mixture, rep: GaussianComponent, log_dets: np.ndarray) -> np.ndarray:
    """KL(component_i || rep) for every component of ``m``."""
    rep_log_det, rep_inv = rep.factorization()
    if m.diagonal:
        trace = m.covs @ rep_inv
    else:
        trace = np.einsum("kij,ji->k", m.covs, rep_inv)
    maha = mahalanobis_stack(m.means, rep.mean[None], rep_inv[None], m.diagonal)[0]
    return 0.5 * (trace + maha - m.d + rep_log_det - log_dets)


def goldberger_split(m: Mixture, max_iterations: int = GOLDBERGER_MAX_ITER) -> PartitionAssignment:
    """Two-way clustering of mixture components (Goldberger-style K-means).

    Components are assigned to the representative with the smallest KL
    divergence; representatives are the moment-matched Gaussians of their
    clusters. Initial representatives come from a principal-axis split of the
    whole mixture. Every component must have a positive-definite covariance.
    """
    K = len(m)
    if K < 2:
        raise ValueError("need at least two components to split")
    log_dets, _ = m.factorization()
    reps = principal_split(moment_match(m)).components
    assign = None
    for _ in range(max_iterations):
        try:
            kl = np.stack([_kl_to(m, r, log_dets) for r in reps], axis=1)
        except SingularCovarianceError:
            break
        new = np.argmin(kl, axis=1)
        for empty in (0, 1):
            if not np.any(new == empty):
                survivor = 1 - empty
                new[int(np.argmax(kl[:, survivor]))] = empty
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        reps = [moment_match(m, np.flatnonzero(assign == j)) for j in (0, 1)]
    if assign is None:
        assign = np.zeros(K, dtype=int)
        assign[K // 2:] = 1
    return PartitionAssignment(np.flatnonzero(assign == 0), np.flatnonzero(assign == 1))

