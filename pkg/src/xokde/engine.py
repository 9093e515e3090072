"""Online kernel density estimator with a two-level sample model."""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bandwidth import MIN_EFFECTIVE_SAMPLES, BandwidthState, BandwidthUnavailable, estimate_bandwidth
from .gauss import SingularCovarianceError, correct_covariances
from .mixture import Mixture, goldberger_split, hellinger, moment_match, principal_split

log = logging.getLogger(__name__)

FORMAT_NAME = "xokde.sample-model"
FORMAT_VERSION = 1
DEFAULT_DTH = 0.02


class CompressionBoundError(AssertionError):
    """A compression leaf exceeded the local error threshold."""


@dataclass
class CompressionTrigger:
    """Fires when the sample mixture has grown enough since the last compression."""

    floor: int = 10
    growth_factor: float = 1.5
    k_last: int = 0

    def fires(self, k: int) -> bool:
        return k >= max(self.floor, math.ceil(self.growth_factor * self.k_last))


@dataclass
class CompressionRecord:
    before: int
    after: int
    leaf_errors: list[float] = field(default_factory=list)
    revitalized: int = 0


def local_error(sub: Mixture, H: np.ndarray) -> float:
    """Hellinger distance between the KDE of a sub-mixture and of its moment-matched Gaussian."""
    sub = sub.normalized()
    if len(sub) == 1:
        return 0.0
    merged = moment_match(sub)
    merged.weight = 1.0
    return hellinger(sub.convolve(H), Mixture.single(merged).convolve(H))


def _dirac(x: np.ndarray, diagonal: bool) -> Mixture:
    d = x.shape[0]
    cov = np.zeros((1, d)) if diagonal else np.zeros((1, d, d))
    return Mixture([1.0], x[None], cov, diagonal)


class SampleModel:
    """Online multivariate KDE.

    Samples are stored as Dirac components of a sample mixture, each paired
    with a detailed model of at most two components. The bandwidth and the
    per-component factorizations are computed lazily, on the first likelihood
    query or compression after a change.

    Parameters
    ----------
    d : int
        Dimension of the observations.
    diagonal : bool
        Use diagonal covariances throughout.
    forgetting : float
        Discount in (0, 1] applied to accumulated evidence per new sample.
    dth : float
        Local clustering error threshold for compression.
    trigger : CompressionTrigger, optional
    revitalize : bool
        Check detailed models for over-compression after each compression.
    eager : bool
        Recompute bandwidth and caches after every sample (testing aid).
    """

    def __init__(
        self,
        d: int,
        diagonal: bool = False,
        forgetting: float = 1.0,
        dth: float = DEFAULT_DTH,
        trigger: CompressionTrigger | None = None,
        revitalize: bool = True,
        eager: bool = False,
        check_bounds: bool = False,
        record_history: bool = False,
    ) -> None:
        if d < 1:
            raise ValueError("dimension must be positive")
        if not 0.0 < forgetting <= 1.0:
            raise ValueError("forgetting factor must lie in (0, 1]")
        if not dth > 0:
            raise ValueError("dth must be positive")
        self.d = int(d)
        self.diagonal = bool(diagonal)
        self.forgetting = float(forgetting)
        self.dth = float(dth)
        self.trigger = trigger if trigger is not None else CompressionTrigger()
        self.revitalize_after_compress = revitalize
        self.eager = eager
        self.check_bounds = check_bounds
        self.n_eff = 0.0
        self._mixture = Mixture.empty(self.d, self.diagonal)
        self.detailed: list[Mixture] = []
        self._bandwidth: BandwidthState | None = None
        self._kde: Mixture | None = None
        self.last_compression: CompressionRecord | None = None
        self.history: list[CompressionRecord] | None = [] if record_history else None

    def __len__(self) -> int:
        return len(self._mixture)

    def __repr__(self) -> str:
        kind = "diag" if self.diagonal else "full"
        return f"SampleModel(d={self.d}, K={len(self)}, n_eff={self.n_eff:.4g}, {kind})"

    @property
    def mixture(self) -> Mixture:
        return self._mixture

    @property
    def bandwidth_stale(self) -> bool:
        return self._bandwidth is None or self._bandwidth.stale

    def _set_model(self, mixture: Mixture, detailed: list[Mixture]) -> None:
        self._mixture = mixture
        self.detailed = detailed
        if self._bandwidth is not None:
            self._bandwidth.stale = True
        self._kde = None

    # -- updates ---------------------------------------------------------

    def add_sample(self, x) -> None:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.d:
            raise ValueError(f"expected a {self.d}-vector, got length {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("sample has non-finite entries")
        discounted = self.n_eff * self.forgetting
        weights = np.append(self._mixture.weights * (discounted / (discounted + 1.0)),
                            1.0 / (discounted + 1.0))
        weights /= weights.sum()
        point = _dirac(x, self.diagonal)
        self._set_model(self._mixture.concat(point).reweighted(weights), self.detailed + [point])
        self.n_eff = discounted + 1.0
        if self.trigger.fires(len(self)) and self.n_eff >= MIN_EFFECTIVE_SAMPLES:
            self.compress()
        if self.eager and self.n_eff >= MIN_EFFECTIVE_SAMPLES:
            self.kde().factorization()

    def add_samples(self, X) -> None:
        for x in np.atleast_2d(np.asarray(X, dtype=float)):
            self.add_sample(x)

    # -- bandwidth and likelihood ----------------------------------------

    @property
    def bandwidth(self) -> BandwidthState:
        if self.bandwidth_stale:
            self._bandwidth = estimate_bandwidth(self._mixture, self.n_eff)
            self._kde = None
        return self._bandwidth

    def kde(self) -> Mixture:
        """The sample mixture convolved with the current bandwidth."""
        if self._kde is None or self.bandwidth_stale:
            kde = self._mixture.convolve(self.bandwidth.H)
            try:
                kde.factorization()
            except SingularCovarianceError:
                covs, _ = correct_covariances(kde.covs, kde.diagonal)
                kde = Mixture(kde.weights, kde.means, covs, kde.diagonal)
                kde.factorization()
            self._kde = kde
        return self._kde

    def log_likelihood(self, X):
        """Log KDE density at one point or at each row of an ``(n, d)`` array."""
        return self.kde().log_pdf(X)

    # -- compression -----------------------------------------------------

    def _partition(self, white: Mixture, white_H: np.ndarray):
        def error(idx):
            return 0.0 if len(idx) == 1 else local_error(white.subset(idx), white_H)

        everything = np.arange(len(white))
        heap = [(-error(everything), 0, everything)]
        counter = 1
        leaves = []
        while heap:
            neg_err, _, idx = heapq.heappop(heap)
            if -neg_err <= self.dth:
                leaves.append((idx, -neg_err))
                continue
            split = goldberger_split(white.subset(idx).convolve(white_H))
            for part in split:
                child = idx[part]
                heapq.heappush(heap, (-error(child), counter, child))
                counter += 1
        return leaves

    def _merge_detailed(self, leaf: np.ndarray, bw: BandwidthState) -> Mixture:
        parts = [self.detailed[i].reweighted(self.detailed[i].weights * self._mixture.weights[i])
                 for i in leaf]
        ext = parts[0]
        for p in parts[1:]:
            ext = ext.concat(p)
        ext = ext.normalized()
        if len(ext) <= 2:
            return ext
        smoothed = ext.transformed(bw.transform).convolve(bw.white_H)
        halves = goldberger_split(smoothed)
        return Mixture.from_components([moment_match(ext, h) for h in halves]).normalized()

    def compress(self) -> None:
        """Hierarchically merge components while every cluster stays within ``dth``."""
        before = len(self)
        if before <= 1:
            return
        bw = self.bandwidth
        white = self._mixture.transformed(bw.transform)
        leaves = self._partition(white, bw.white_H)
        errors = [e for _, e in leaves]
        if self.check_bounds and max(errors) > self.dth:
            raise CompressionBoundError(f"leaf error {max(errors):.4g} > {self.dth:.4g}")

        # Leaves keep the order of their first member.
        leaves.sort(key=lambda item: int(item[0].min()))
        comps, detailed = [], []
        for idx, _ in leaves:
            if len(idx) == 1:
                i = int(idx[0])
                comps.append(self._mixture[i])
                detailed.append(self.detailed[i])
            else:
                comps.append(moment_match(self._mixture, idx))
                detailed.append(self._merge_detailed(idx, bw))
        merged = Mixture.from_components(comps)
        self._set_model(merged.normalized(), detailed)

        record = CompressionRecord(before, len(self), errors)
        if self.revitalize_after_compress:
            record.revitalized = self.revitalize(bw)
        record.after = len(self)
        self.trigger.k_last = len(self)
        self.last_compression = record
        if self.history is not None:
            self.history.append(record)
        log.debug("compressed %d -> %d components", before, record.after)

    def revitalize(self, bw: BandwidthState | None = None) -> int:
        """Split components whose detailed model disagrees with them by more than ``dth``.

        Returns the number of components that were replaced.
        """
        if bw is None:
            bw = self.bandwidth
        T, white_H = bw.transform, bw.white_H
        comps, detailed = [], []
        replaced = 0
        for i in range(len(self)):
            comp = self._mixture[i]
            q = self.detailed[i]
            if len(q) < 2:
                comps.append(comp)
                detailed.append(q)
                continue
            unit = comp.copy()
            unit.weight = 1.0
            err = hellinger(q.transformed(T).convolve(white_H),
                            Mixture.single(unit).transformed(T).convolve(white_H))
            if err <= self.dth:
                comps.append(comp)
                detailed.append(q)
                continue
            replaced += 1
            for child in q.components:
                if child.is_dirac:
                    child_detail = _dirac(child.mean, self.diagonal)
                else:
                    white_child = Mixture.single(child).transformed(T)[0]
                    white_child.weight = 1.0
                    child_detail = principal_split(white_child).untransformed(T)
                child.weight *= comp.weight
                comps.append(child)
                detailed.append(child_detail)
        if replaced:
            self._set_model(Mixture.from_components(comps).normalized(), detailed)
        return replaced

    # -- introspection and persistence -----------------------------------

    def footprint_scalars(self) -> int:
        """Number of stored scalars (components, detailed models, caches)."""
        d = self.d
        cov_size = d if self.diagonal else d * d
        per_comp = 1 + d + cov_size
        total = len(self) * per_comp + sum(len(q) for q in self.detailed) * per_comp
        if self._kde is not None and self._kde._factor is not None:
            total += len(self) * (1 + cov_size)
        return total

    def to_dict(self) -> dict:
        def pack(m: Mixture) -> dict:
            return {"weights": m.weights.tolist(), "means": m.means.tolist(), "covs": m.covs.tolist()}

        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "d": self.d,
            "covariance": "diagonal" if self.diagonal else "full",
            "forgetting": self.forgetting,
            "dth": self.dth,
            "n_eff": self.n_eff,
            "revitalize": self.revitalize_after_compress,
            "trigger": {
                "floor": self.trigger.floor,
                "growth_factor": self.trigger.growth_factor,
                "k_last": self.trigger.k_last,
            },
            "mixture": pack(self._mixture),
            "detailed": [pack(q) for q in self.detailed],
        }

    @classmethod
    def from_dict(cls, data: dict) -> SampleModel:
        if data.get("format") != FORMAT_NAME:
            raise ValueError("not a serialized sample model")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {data.get('version')!r}")
        diagonal = data["covariance"] == "diagonal"
        d = int(data["d"])
        model = cls(
            d,
            diagonal=diagonal,
            forgetting=data["forgetting"],
            dth=data["dth"],
            trigger=CompressionTrigger(**data["trigger"]),
            revitalize=data["revitalize"],
        )

        def unpack(p: dict) -> Mixture:
            K = len(p["weights"])
            shape = (K, d) if diagonal else (K, d, d)
            return Mixture(p["weights"], np.reshape(p["means"], (K, d)),
                           np.reshape(p["covs"], shape), diagonal)

        model.n_eff = float(data["n_eff"])
        model._mixture = unpack(data["mixture"])
        model.detailed = [unpack(q) for q in data["detailed"]]
        if len(model.detailed) != len(model._mixture):
            raise ValueError("detailed model count does not match the sample mixture")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> SampleModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


__all__ = [
    "BandwidthUnavailable",
    "CompressionBoundError",
    "CompressionRecord",
    "CompressionTrigger",
    "SampleModel",
    "local_error",
]
