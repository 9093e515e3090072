"""Plug-in bandwidth selection on whitened data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .gauss import LOG_2PI, WhiteningTransform, whitening_from
from .mixture import Mixture, whole_model_gaussian

log = logging.getLogger(__name__)

MIN_EFFECTIVE_SAMPLES = 2.0
EXACT_BRACKET = True


class BandwidthUnavailable(RuntimeError):
    """Raised when a bandwidth is requested from fewer than two effective samples."""


@dataclass
class BandwidthState:
    """Result of a bandwidth estimate.

    ``H`` is the kernel covariance in data space; ``white_H`` the same kernel
    in the whitened coordinates of ``transform`` (``beta**2 * I``, or ``I``
    when the fallback was taken).
    """

    H: np.ndarray
    white_H: np.ndarray
    transform: WhiteningTransform
    beta: float
    log_roughness: float
    fallback_used: bool = False
    stale: bool = False


def pilot_factor(n_eff: float, d: int) -> float:
    return (4.0 / ((d + 2) * n_eff)) ** (2.0 / (d + 4))


def pilot_bandwidth(cov_smp: np.ndarray, n_eff: float, d: int) -> np.ndarray:
    """Pilot bandwidth: the whole-model covariance shrunk with the sample count."""
    return np.asarray(cov_smp, dtype=float) * pilot_factor(n_eff, d)


_CHUNK_ELEMENTS = 1 << 22


def _apply(A: np.ndarray, v: np.ndarray, diagonal: bool) -> np.ndarray:
    return A * v if diagonal else (A @ v[..., None])[..., 0]


def _kernels(B: np.ndarray, F: np.ndarray | None, diagonal: bool):
    """Inverse, log-determinant and the two trace terms for a stack of ``B``."""
    if diagonal:
        A = 1.0 / B
        log_det_B = np.log(B).sum(axis=-1)
        FA = A if F is None else F * A
        return A, log_det_B, FA.sum(axis=-1), np.sum(FA * FA, axis=-1)
    chol = np.linalg.cholesky(B)
    log_det_B = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
    A = np.linalg.inv(B)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    FA = A if F is None else F @ A
    tr1 = np.trace(FA, axis1=-2, axis2=-1)
    tr2 = np.einsum("...ij,...ji->...", FA, FA)
    return A, log_det_B, tr1, tr2


def _bracket(maha, q2, q3, tr1, tr2):
    if EXACT_BRACKET:
        return (q2 - tr1) ** 2 - 4.0 * q3 + 2.0 * tr2
    return 2.0 * tr2 * (1.0 - 2.0 * maha) + tr1 ** 2 * (1.0 - maha) ** 2


def _terms(A, log_det_B, tr1, tr2, delta, F, diagonal):
    """Log Gaussian factor and bracket for pair differences ``delta``."""
    d = delta.shape[-1]
    u = _apply(A, delta, diagonal)
    maha = np.sum(delta * u, axis=-1)
    Fu = u if F is None else _apply(F, u, diagonal)
    q2 = np.sum(u * Fu, axis=-1)
    q3 = np.sum(Fu * _apply(A, Fu, diagonal), axis=-1)
    log_phi = -0.5 * (d * LOG_2PI + log_det_B + maha)
    return log_phi, _bracket(maha, q2, q3, tr1, tr2)


class _LogSum:
    """Running max-shifted sum of ``coef * exp(log_phi)``."""

    def __init__(self) -> None:
        self.shift = -math.inf
        self.total = 0.0

    def add(self, log_phi: np.ndarray, coef: np.ndarray) -> None:
        if log_phi.size == 0:
            return
        top = float(log_phi.max())
        if not math.isfinite(top):
            return
        if top > self.shift:
            if math.isfinite(self.shift):
                self.total *= math.exp(self.shift - top)
            self.shift = top
        self.total += float(np.sum(coef * np.exp(log_phi - self.shift)))

    def log(self) -> float:
        if not self.total > 0 or not math.isfinite(self.total):
            return -math.inf
        return self.shift + math.log(self.total)


def _dirac_pairs(acc, X, w, G, F, diagonal):
    # Every Dirac pair shares B = 2G, so the quadratic forms reduce to Gram
    # matrices of M1 = A, M2 = AFA and M3 = AFAFA.
    n, d = X.shape
    A, log_det_B, tr1, tr2 = _kernels(2.0 * G, F, diagonal)
    if diagonal:
        AF = A if F is None else A * F
        mats = (A, AF * A, AF * AF * A)
        proj = [X * M for M in mats]
    else:
        AF = A if F is None else A @ F
        mats = (A, AF @ A, AF @ AF @ A)
        proj = [X @ M for M in mats]
    self_q = [np.sum(X * P, axis=1) for P in proj]
    step = max(1, _CHUNK_ELEMENTS // max(1, n))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        maha, q2, q3 = (
            np.maximum(s[lo:hi, None] + s[None, :] - 2.0 * (P[lo:hi] @ X.T), 0.0)
            for s, P in zip(self_q, proj)
        )
        log_phi = -0.5 * (d * LOG_2PI + log_det_B + maha)
        acc.add(log_phi, np.outer(w[lo:hi], w) * _bracket(maha, q2, q3, tr1, tr2))


def _mixed_pairs(acc, X, w, means, covs, cw, G, F, diagonal):
    # Dirac i against smoothed component j; each unordered pair counted twice.
    n, d = X.shape
    per = d if diagonal else d * d
    step = max(1, _CHUNK_ELEMENTS // max(1, n * per))
    for lo in range(0, means.shape[0], step):
        hi = min(means.shape[0], lo + step)
        A, log_det_B, tr1, tr2 = _kernels(2.0 * G + covs[lo:hi], F, diagonal)
        delta = X[:, None, :] - means[None, lo:hi, :]
        log_phi, br = _terms(A[None], log_det_B, tr1, tr2, delta, F, diagonal)
        acc.add(log_phi, 2.0 * np.outer(w, cw[lo:hi]) * br)


def _component_pairs(acc, means, covs, cw, G, F, diagonal):
    K, d = means.shape
    ii, jj = np.triu_indices(K)
    per = d if diagonal else d * d
    step = max(1, _CHUNK_ELEMENTS // max(1, 4 * per))
    for lo in range(0, ii.size, step):
        a, b = ii[lo:lo + step], jj[lo:lo + step]
        B = covs[a] + covs[b] + 2.0 * G
        A, log_det_B, tr1, tr2 = _kernels(B, F, diagonal)
        log_phi, br = _terms(A, log_det_B, tr1, tr2, means[a] - means[b], F, diagonal)
        acc.add(log_phi, cw[a] * cw[b] * np.where(a == b, 1.0, 2.0) * br)


def log_roughness(m: Mixture, G: np.ndarray, F: np.ndarray | None = None) -> float:
    """Log of the roughness estimate, ``-inf`` when the estimate is not positive.

    ``F=None`` is the whitened fast path (structure equal to the identity).
    Pairs are summed in three blocks (Dirac/Dirac, Dirac/component,
    component/component) so large sample sets never materialize per-pair
    matrices. The sum is max-shifted so high-dimensional terms do not underflow.
    """
    G = np.asarray(G, dtype=float)
    F = None if F is None else np.asarray(F, dtype=float)
    diagonal = m.diagonal
    dirac = m.dirac_mask()
    means = np.asarray(m.means)
    covs = np.asarray(m.covs)
    w = np.asarray(m.weights)
    # Center first; pair differences are unchanged and the Gram terms lose
    # less precision.
    if len(m):
        means = means - means.mean(axis=0)
    X, wd = means[dirac], w[dirac]
    rest = ~dirac
    acc = _LogSum()
    if X.shape[0]:
        _dirac_pairs(acc, X, wd, G, F, diagonal)
    if rest.any():
        cm, cc, cw = means[rest], covs[rest], w[rest]
        if X.shape[0]:
            _mixed_pairs(acc, X, wd, cm, cc, cw, G, F, diagonal)
        _component_pairs(acc, cm, cc, cw, G, F, diagonal)
    return acc.log()


def roughness(m: Mixture, F: np.ndarray | None, G: np.ndarray) -> float:
    """Roughness estimate of the pilot-smoothed mixture for bandwidth structure F.

    Pairs use the symmetric kernel ``A_ij = (G + S_i + G + S_j)^-1``. The
    traces are taken as ``tr(F A)`` and ``tr((F A)^2)``, which is the form
    that stays consistent under a change of coordinates.
    """
    return math.exp(log_roughness(m, G, F))


def optimal_scale(d: int, n_eff: float, R: float) -> float:
    """Optimal bandwidth scale for identity structure; 0 when ``R`` is 0."""
    if R <= 0:
        return 0.0
    return math.exp(_log_optimal_scale(d, n_eff, math.log(R)))


def _log_optimal_scale(d: int, n_eff: float, log_r: float) -> float:
    return -(math.log(d) + 0.5 * d * math.log(4.0 * math.pi) + math.log(n_eff) + log_r) / (d + 4)


def estimate_bandwidth(m: Mixture, n_eff: float) -> BandwidthState:
    """Whiten, estimate an isotropic bandwidth, and map it back to data space.

    Falls back to the whitened identity when the optimal scale is zero or not
    finite.
    """
    if n_eff < MIN_EFFECTIVE_SAMPLES:
        raise BandwidthUnavailable(
            f"bandwidth needs at least {MIN_EFFECTIVE_SAMPLES:g} effective samples, have {n_eff:g}"
        )
    m = m.normalized()
    d = m.d
    whole = whole_model_gaussian(m)
    transform = whitening_from(whole.mean, whole.cov)
    white = m.transformed(transform)
    eye = np.ones(d) if m.diagonal else np.eye(d)

    G = pilot_bandwidth(eye, n_eff, d)
    log_r = log_roughness(white, G)
    beta = 0.0
    if math.isfinite(log_r):
        beta = math.exp(_log_optimal_scale(d, n_eff, log_r))
    fallback = not (math.isfinite(beta) and beta > 0)
    if fallback:
        log.warning("optimal bandwidth scale is %r; using whitened identity", beta)
        white_H = eye
    else:
        white_H = beta ** 2 * eye
    H = transform.inverse_cov(white_H)
    if not m.diagonal:
        H = 0.5 * (H + H.T)
    return BandwidthState(H, white_H, transform, beta, log_r, fallback_used=fallback)
