"""Gaussian kernel density estimation and plug-in KL divergence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .cohort import Cohort, CohortError, HorizonSample

DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)

# upper bound on the size of one (query block x support x dim) difference tensor
_BLOCK_ELEMENTS = 1 << 21


def scott_bandwidth(points) -> float:
    """Scott's rule ``n ** (-1 / (D + 4))`` for unit-scale data."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n, dim = points.shape
    if n < 2:
        raise ValueError("Scott bandwidth needs at least 2 points")
    return float(n ** (-1.0 / (dim + 4)))


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Isotropic Gaussian KDE on standardized coordinates.

    Queries are given in raw coordinates; they are mapped through
    ``(z - center) / scale`` before the kernel sum, and the returned density
    includes the Jacobian ``1 / prod(scale)`` so it is a density in raw units.
    With the default unit standardization the two coincide.
    """

    support_points: np.ndarray
    bandwidth: float
    center: np.ndarray
    scale: np.ndarray

    @property
    def dimension(self) -> int:
        return self.support_points.shape[1]

    @property
    def n(self) -> int:
        return self.support_points.shape[0]

    def standardize(self, z) -> np.ndarray:
        return (np.asarray(z, dtype=float) - self.center) / self.scale

    def log_density(self, query) -> np.ndarray:
        """Unfloored log density at each row of ``query``."""
        q = np.asarray(query, dtype=float)
        if q.ndim == 1:
            q = q[None, :] if self.dimension > 1 or q.size == 1 else q[:, None]
        if q.shape[1] != self.dimension:
            raise ValueError(f"query dimension {q.shape[1]} != density dimension {self.dimension}")
        q = self.standardize(q)
        s = self.support_points
        b = self.bandwidth
        dim = self.dimension
        const = (
            -math.log(self.n)
            - 0.5 * dim * math.log(2.0 * math.pi)
            - dim * math.log(b)
            - float(np.sum(np.log(self.scale)))
        )
        rows = max(1, _BLOCK_ELEMENTS // max(1, s.shape[0] * dim))
        out = np.empty(q.shape[0])
        for start in range(0, q.shape[0], rows):
            block = q[start : start + rows]
            sq = np.zeros((block.shape[0], s.shape[0]))
            for j in range(dim):
                diff = block[:, j, None] - s[None, :, j]
                sq += diff * diff
            out[start : start + rows] = logsumexp(sq * (-0.5 / (b * b)), axis=1)
        return out + const


def fit_kde(points, bandwidth: float | None = None, center=None, scale=None) -> DensityEstimate:
    """Build a KDE over ``points`` (n x D).

    ``center``/``scale`` default to the identity transform. ``bandwidth``
    defaults to Scott's rule on the support size.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, dim = pts.shape
    if n < 1 or dim < 1:
        raise ValueError("KDE needs at least one point and one dimension")
    if not np.all(np.isfinite(pts)):
        raise ValueError("KDE support contains non-finite values")
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(dim)
    scale = np.ones(dim) if scale is None else np.asarray(scale, dtype=float).reshape(dim)
    if np.any(scale <= 0):
        raise ValueError("standardization scale must be positive")
    b = scott_bandwidth(pts) if bandwidth is None else float(bandwidth)
    if not b > 0:
        raise ValueError("bandwidth must be positive")
    support = (pts - center) / scale
    support.setflags(write=False)
    return DensityEstimate(support, b, center, scale)


def standardization(points) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and sample sd; zero-spread columns get scale 1."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    mu = pts.mean(axis=0)
    sd = pts.std(axis=0, ddof=1) if pts.shape[0] > 1 else np.ones(pts.shape[1])
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def kde_density(estimate: DensityEstimate, query) -> float:
    """Density of ``estimate`` at a single point."""
    q = np.asarray(query, dtype=float).reshape(-1)
    if q.size != estimate.dimension:
        raise ValueError(f"query dimension {q.size} != density dimension {estimate.dimension}")
    return float(np.exp(estimate.log_density(q[None, :])[0]))


def floored_log_density(estimate: DensityEstimate, query) -> tuple[np.ndarray, int]:
    logd = estimate.log_density(query)
    hits = logd < LOG_DENSITY_FLOOR
    return np.where(hits, LOG_DENSITY_FLOOR, logd), int(np.count_nonzero(hits))


@dataclass(frozen=True)
class KlReport:
    value: float
    n_source: int
    n_target: int
    bandwidth: float
    floor_hits: int

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "n_source": self.n_source,
            "n_target": self.n_target,
            "bandwidth": self.bandwidth,
            "floor_hits": self.floor_hits,
        }


def kl_from_samples(source, target, bandwidth: float | str | None = "auto") -> KlReport:
    """Plug-in ``KL(source || target)`` between two point clouds.

    Both samples are standardized with the source mean/sd and smoothed with
    one shared bandwidth (Scott's rule on the source size when ``auto``).
    The expectation is the average over the source points.
    """
    a = np.asarray(source, dtype=float)
    b = np.asarray(target, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("empty sample")
    if a.shape[1] != b.shape[1]:
        raise ValueError("source and target dimensions differ")
    center, scale = standardization(a)
    bw = scott_bandwidth(a) if bandwidth in (None, "auto") else float(bandwidth)
    p_src = fit_kde(a, bw, center, scale)
    p_tgt = fit_kde(b, bw, center, scale)
    log_p, hits_p = floored_log_density(p_src, a)
    log_q, hits_q = floored_log_density(p_tgt, a)
    value = float(np.mean(log_p - log_q))
    return KlReport(value, a.shape[0], b.shape[0], bw, hits_p + hits_q)


def kl_divergence(
    source: tuple[Cohort, HorizonSample],
    target: tuple[Cohort, HorizonSample],
    bandwidth: float | str | None = "auto",
) -> KlReport:
    """KL divergence between two cohorts on ``z = [x, y]``.

    ``source`` and ``target`` are ``(cohort, horizon_sample)`` pairs; the
    cohorts must share covariate names.
    """
    (ca, sa), (cb, sb) = source, target
    if tuple(ca.covariate_names) != tuple(cb.covariate_names):
        raise CohortError(
            f"covariate names differ between {ca.name!r} and {cb.name!r}: "
            f"{list(ca.covariate_names)} vs {list(cb.covariate_names)}"
        )
    if sa.n == 0 or sb.n == 0:
        raise CohortError("empty horizon sample")
    return kl_from_samples(sa.z, sb.z, bandwidth)
