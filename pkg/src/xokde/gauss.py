"""Gaussian component primitives.

Covariances are plain numpy arrays. A single covariance is either a
``(d, d)`` symmetric matrix (full) or a ``(d,)`` vector holding the diagonal.
Stacks of covariances carry an explicit ``diagonal`` flag since a ``(K, d)``
stack of diagonals and a ``(d, d)`` full matrix have the same rank.
"""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)

EIGENVALUE_THRESHOLD = 1e-9
CORRECTION_FRACTION = 0.01
DEGENERATE_FLOOR = 1e-9
LOG_2PI = math.log(2.0 * math.pi)

# Bound on K * n * d temporaries in the batched density evaluation.
_CHUNK_ELEMENTS = 1 << 22


class SingularCovarianceError(np.linalg.LinAlgError):
    """A covariance that should be positive definite is not."""


def is_diagonal(cov: np.ndarray) -> bool:
    return np.ndim(cov) == 1


def _corrected_spectrum(vals: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply the eigenvalue repair row-wise.

    Returns the new eigenvalues, a per-row "changed" mask and a per-row
    "all degenerate" mask.
    """
    vals = np.atleast_2d(vals)
    top = vals.max(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = np.where(top > 0, vals / np.where(top > 0, top, 1.0), -np.inf)
    degenerate = normalized < EIGENVALUE_THRESHOLD
    healthy = ~degenerate
    n_healthy = healthy.sum(axis=1)
    all_bad = n_healthy == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = CORRECTION_FRACTION * np.where(healthy, vals, 0.0).sum(axis=1) / n_healthy
    alpha = np.where(all_bad, DEGENERATE_FLOOR, alpha)
    new_vals = np.where(degenerate, alpha[:, None], vals)
    return new_vals, degenerate.any(axis=1), all_bad


def correct_covariances(covs: np.ndarray, diagonal: bool) -> tuple[np.ndarray, np.ndarray]:
    """Repair a stack of covariances; returns ``(corrected, all_degenerate_flags)``.

    Eigenvalues whose value relative to the largest is below 1e-9 are replaced
    by 1% of the mean of the remaining eigenvalues. If every eigenvalue is
    degenerate the floor ``DEGENERATE_FLOOR`` is used and the row is flagged.
    Rows that need no repair are returned bit-for-bit unchanged.
    """
    covs = np.asarray(covs, dtype=float)
    if diagonal:
        new_vals, changed, all_bad = _corrected_spectrum(covs.reshape(-1, covs.shape[-1]))
        out = np.where(changed[:, None], new_vals, covs.reshape(new_vals.shape))
        return out.reshape(covs.shape), all_bad

    stack = covs.reshape(-1, covs.shape[-1], covs.shape[-1])
    vals, vecs = np.linalg.eigh(stack)
    new_vals, changed, all_bad = _corrected_spectrum(vals)
    out = stack.copy()
    if changed.any():
        q = vecs[changed]
        rebuilt = (q * new_vals[changed][:, None, :]) @ np.swapaxes(q, -1, -2)
        out[changed] = 0.5 * (rebuilt + np.swapaxes(rebuilt, -1, -2))
    return out.reshape(covs.shape), all_bad


def correct_covariance(cov: np.ndarray, return_flag: bool = False):
    """Repair a (near-)singular covariance so that it is positive definite.

    >>> correct_covariance(np.diag([1.0, 0.0]))
    array([[1.  , 0.  ],
           [0.  , 0.01]])
    """
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance has non-finite entries")
    out, all_bad = correct_covariances(cov[None], is_diagonal(cov))
    if all_bad[0]:
        log.warning("all eigenvalues degenerate; flooring at %g", DEGENERATE_FLOOR)
    if return_flag:
        return out[0], bool(all_bad[0])
    return out[0]


def factorize_stack(covs: np.ndarray, diagonal: bool) -> tuple[np.ndarray, np.ndarray]:
    """Log-determinants and inverses of a stack of positive-definite covariances.

    The log-determinant is accumulated from the logs of the Cholesky pivots so
    that it never passes through a (possibly under/overflowing) determinant.
    """
    covs = np.asarray(covs, dtype=float)
    if diagonal:
        if not np.all(np.isfinite(covs)) or np.any(covs <= 0):
            raise SingularCovarianceError("diagonal covariance with non-positive entry")
        return np.log(covs).sum(axis=-1), 1.0 / covs
    try:
        chol = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(str(exc)) from None
    pivots = np.diagonal(chol, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(pivots)) or np.any(pivots <= 0):
        raise SingularCovarianceError("non-positive Cholesky pivot")
    log_dets = 2.0 * np.log(pivots).sum(axis=-1)
    chol_inv = np.linalg.inv(chol)
    inverses = np.swapaxes(chol_inv, -1, -2) @ chol_inv
    return log_dets, inverses


def factorize(cov: np.ndarray) -> tuple[float, np.ndarray]:
    """Return ``(log_det, inverse)`` of a single positive-definite covariance."""
    cov = np.asarray(cov, dtype=float)
    log_dets, inverses = factorize_stack(cov[None], is_diagonal(cov))
    return float(log_dets[0]), inverses[0]


def mahalanobis_stack(
    X: np.ndarray, means: np.ndarray, inverses: np.ndarray, diagonal: bool
) -> np.ndarray:
    """Squared Mahalanobis distances, shape ``(K, n)``, of n points to K components."""
    X = np.atleast_2d(X)
    K, d = means.shape
    n = X.shape[0]
    # Expanded quadratic forms turn the work into GEMMs; centering on the
    # component means keeps the cancellation error small.
    ref = means.mean(axis=0) if K else np.zeros(d)
    Xc = X - ref
    Mc = means - ref
    if diagonal:
        quad = (Xc * Xc) @ inverses.T
        cross = Xc @ (Mc * inverses).T
        const = np.sum(Mc * Mc * inverses, axis=1)
        return np.maximum(quad - 2.0 * cross + const, 0.0).T
    out = np.empty((K, n))
    flat = inverses.reshape(K, d * d)
    PM = np.einsum("kij,kj->ki", inverses, Mc)
    const = np.sum(Mc * PM, axis=1)
    step = max(1, _CHUNK_ELEMENTS // max(1, K + d * d))
    for start in range(0, n, step):
        xc = Xc[start:start + step]
        outer = (xc[:, :, None] * xc[:, None, :]).reshape(xc.shape[0], d * d)
        block = outer @ flat.T - 2.0 * (xc @ PM.T) + const
        out[:, start:start + step] = np.maximum(block, 0.0).T
    return out


def log_density_stack(
    X: np.ndarray, means: np.ndarray, log_dets: np.ndarray, inverses: np.ndarray,
    diagonal: bool,
) -> np.ndarray:
    """Per-component log densities, shape ``(K, n)``."""
    d = means.shape[1]
    maha = mahalanobis_stack(X, means, inverses, diagonal)
    return -0.5 * (d * LOG_2PI + log_dets[:, None] + maha)


class GaussianComponent:
    """A weighted Gaussian with a lazily filled factorization cache.

    Assigning a new covariance drops the cache; it is refilled on the next
    density evaluation.
    """

    def __init__(self, weight: float, mean, cov) -> None:
        self.weight = float(weight)
        self.mean = np.asarray(mean, dtype=float).reshape(-1)
        self._cov = np.asarray(cov, dtype=float)
        self._cache: tuple[float, np.ndarray] | None = None
        if self._cov.shape not in ((self.d,), (self.d, self.d)):
            raise ValueError(f"covariance shape {self._cov.shape} does not match d={self.d}")

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def diagonal(self) -> bool:
        return is_diagonal(self._cov)

    @property
    def cov(self) -> np.ndarray:
        return self._cov

    @cov.setter
    def cov(self, value) -> None:
        value = np.asarray(value, dtype=float)
        if value.shape != self._cov.shape:
            raise ValueError("covariance representation cannot change")
        self._cov = value
        self._cache = None

    @property
    def cache_valid(self) -> bool:
        return self._cache is not None

    @property
    def is_dirac(self) -> bool:
        return not np.any(self._cov)

    def full_cov(self) -> np.ndarray:
        return np.diag(self._cov) if self.diagonal else self._cov

    def factorization(self) -> tuple[float, np.ndarray]:
        if self._cache is None:
            self._cache = factorize(self._cov)
        return self._cache

    def copy(self) -> GaussianComponent:
        return GaussianComponent(self.weight, self.mean.copy(), self._cov.copy())

    def __repr__(self) -> str:
        kind = "diag" if self.diagonal else "full"
        return f"GaussianComponent(w={self.weight:.4g}, d={self.d}, {kind})"


def log_density(comp: GaussianComponent, x, extra_bandwidth=None):
    """Log of the normal density of ``comp`` (optionally convolved with a kernel).

    ``x`` may be a single point or an ``(n, d)`` array of points.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if extra_bandwidth is None:
        log_det, inv = comp.factorization()
    else:
        log_det, inv = factorize(comp.cov + np.asarray(extra_bandwidth, dtype=float))
    out = log_density_stack(
        x.reshape(-1, comp.d), comp.mean[None], np.array([log_det]), inv[None], comp.diagonal
    )[0]
    return float(out[0]) if single else out


class WhiteningTransform:
    """Affine map ``x -> diag(vals)^-1/2 vecs^T (x - center)``.

    For a diagonal reference the eigenvectors are the coordinate axes and the
    map stays axis-aligned, so diagonal covariances stay diagonal.
    """

    def __init__(self, center, eigenvectors, eigenvalues, diagonal: bool = False) -> None:
        self.center = np.asarray(center, dtype=float)
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)
        self.eigenvectors = None if diagonal else np.asarray(eigenvectors, dtype=float)
        self.diagonal = diagonal
        if np.any(self.eigenvalues <= 0):
            raise ValueError("whitening needs strictly positive eigenvalues")
        self._scale = 1.0 / np.sqrt(self.eigenvalues)
        self._unscale = np.sqrt(self.eigenvalues)

    @property
    def matrix(self) -> np.ndarray:
        """Forward linear part W, so that ``forward(x) = W (x - center)``."""
        if self.diagonal:
            return np.diag(self._scale)
        return self._scale[:, None] * self.eigenvectors.T

    @property
    def inverse_matrix(self) -> np.ndarray:
        if self.diagonal:
            return np.diag(self._unscale)
        return self.eigenvectors * self._unscale[None, :]

    @property
    def log_abs_det(self) -> float:
        """log |det W|."""
        return float(-0.5 * np.log(self.eigenvalues).sum())

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float) - self.center
        if self.diagonal:
            return x * self._scale
        return (x @ self.eigenvectors) * self._scale

    def inverse(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.diagonal:
            return w * self._unscale + self.center
        return (w * self._unscale) @ self.eigenvectors.T + self.center

    def forward_cov(self, covs: np.ndarray) -> np.ndarray:
        """Map one covariance or a stack of covariances into whitened space."""
        covs = np.asarray(covs, dtype=float)
        if self.diagonal:
            return covs * self._scale ** 2
        W = self.matrix
        return W @ covs @ W.T

    def inverse_cov(self, covs: np.ndarray) -> np.ndarray:
        covs = np.asarray(covs, dtype=float)
        if self.diagonal:
            return covs * self.eigenvalues
        V = self.inverse_matrix
        return V @ covs @ V.T


def whitening_from(mean, cov) -> WhiteningTransform:
    """Build the transform that maps N(mean, cov) to N(0, I).

    ``cov`` is repaired first, so a singular reference still yields a valid map.
    """
    cov = np.asarray(cov, dtype=float)
    if is_diagonal(cov):
        return WhiteningTransform(mean, None, correct_covariance(cov), diagonal=True)
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    new_vals, _, all_bad = _corrected_spectrum(vals)
    if all_bad[0]:
        log.warning("whitening reference is fully degenerate")
    return WhiteningTransform(mean, vecs, new_vals[0])
