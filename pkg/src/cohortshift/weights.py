"""Importance weights that move a training cohort toward a meta-analysis population.

Concept weights compare the training cohort's distribution of predicted
risk with a normal approximation of the meta-analysis recurrence
distribution, stratum by stratum. Covariate weights are KDE density ratios
between a simulated meta-analysis covariate sample and the training
covariates. Joint weights are their product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .cohort import CohortError, MetaSummary
from .density import fit_kde, scott_bandwidth, standardization

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-6
WEIGHT_CAP = 1e6
EIGEN_FLOOR = 1e-8
KINDS = ("none", "concept", "covariate", "joint")


class WeightError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Strata:
    boundaries: np.ndarray
    assignment: np.ndarray
    q_train: np.ndarray
    q_meta: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.boundaries) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.m)

    def summary(self) -> dict:
        out = {
            "m": self.m,
            "boundaries": [float(b) for b in self.boundaries],
            "counts": [int(c) for c in self.counts],
            "q_train": [float(q) for q in self.q_train],
        }
        if self.q_meta is not None:
            out["q_meta"] = [float(q) for q in self.q_meta]
        return out


@dataclass(frozen=True, eq=False)
class WeightSet:
    kind: str
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise WeightError(f"unknown weight kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise WeightError("weights must be a non-empty vector")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise WeightError("weights must be finite and positive")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def _normalized(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    return raw / np.mean(raw)


def unit_weights(n: int) -> WeightSet:
    return WeightSet("none", np.ones(n), {})


# ---------------------------------------------------------------------------
# concept weights


def stratify(risks, m: int = 8) -> Strata:
    """Equal-count risk strata from the empirical quantiles of ``risks``.

    Patient i falls in stratum k when ``l_k < risk_i <= u_k``; the first
    stratum is closed at 0.
    """
    risks = np.asarray(risks, dtype=float)
    n = risks.size
    if m < 2:
        raise WeightError("need at least 2 strata")
    if m > n:
        raise WeightError(f"{m} strata requested for {n} patients")
    if not np.all(np.isfinite(risks)) or np.any(risks < 0) or np.any(risks > 1):
        raise WeightError("risks must lie in [0, 1]")
    inner = np.quantile(risks, np.arange(1, m) / m)
    bounds = np.concatenate([[0.0], np.clip(inner, 0.0, 1.0), [1.0]])
    if np.any(np.diff(bounds) <= 0):
        raise WeightError("degenerate risk distribution: strata boundaries collapse")
    assignment = np.searchsorted(bounds[1:-1], risks, side="left")
    counts = np.bincount(assignment, minlength=m)
    if np.any(counts == 0):
        raise WeightError("degenerate risk distribution: empty stratum")
    return Strata(bounds, assignment, counts / n)


def meta_strata_mass(meta: MetaSummary, strata: Strata) -> np.ndarray:
    """Normal-approximation mass of each stratum, renormalized over [0, 1]."""
    if not meta.outcome_sd > 0:
        raise WeightError("outcome sd must be positive")
    cdf = norm.cdf(strata.boundaries, loc=meta.outcome_mean, scale=meta.outcome_sd)
    mass = np.diff(cdf)
    total = mass.sum()
    if not total > 0:
        raise WeightError("meta outcome distribution puts no mass on [0, 1]")
    return mass / total


def concept_weights(risks, strata: Strata, meta: MetaSummary) -> WeightSet:
    """Per-patient ratio of meta to training stratum mass, mean 1."""
    risks = np.asarray(risks, dtype=float)
    if risks.size != strata.assignment.size:
        raise WeightError("risks and strata disagree in length")
    q_meta = meta_strata_mass(meta, strata)
    if np.any(strata.q_train <= 0):
        raise WeightError("empty training stratum")
    ratio = q_meta / strata.q_train
    floored = int(np.count_nonzero(ratio < WEIGHT_FLOOR))
    ratio = np.clip(ratio, WEIGHT_FLOOR, WEIGHT_CAP)
    raw = ratio[strata.assignment]
    full = Strata(strata.boundaries, strata.assignment, strata.q_train, q_meta)
    prov = {"strata": full.summary(), "stratum_weights": [float(r) for r in ratio], "floored_strata": floored}
    return WeightSet("concept", _normalized(raw), prov)


# ---------------------------------------------------------------------------
# covariate weights


def meta_covariance(meta_sd, train_cov) -> tuple[np.ndarray, bool]:
    """Meta-population covariance with train off-diagonals and meta variances.

    Returns the (possibly repaired) matrix and whether eigenvalue clipping
    was needed to make it positive definite.
    """
    sd = np.asarray(meta_sd, dtype=float)
    cov = np.array(train_cov, dtype=float, copy=True).reshape(sd.size, sd.size)
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise WeightError("training covariance is not symmetric")
    cov = 0.5 * (cov + cov.T)
    np.fill_diagonal(cov, sd**2)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() >= EIGEN_FLOOR:
        return cov, False
    vals = np.maximum(vals, EIGEN_FLOOR)
    repaired = (vecs * vals) @ vecs.T
    repaired = 0.5 * (repaired + repaired.T)
    # re-clip once in case rounding pushed an eigenvalue back under the floor
    vals2, vecs2 = np.linalg.eigh(repaired)
    if vals2.min() < EIGEN_FLOOR:
        repaired = (vecs2 * np.maximum(vals2, EIGEN_FLOOR)) @ vecs2.T
        repaired = 0.5 * (repaired + repaired.T)
    return repaired, True


def _rng(seed, *key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


def simulate_meta_covariates(
    meta: MetaSummary,
    train_cov,
    n_meta: int,
    seed: int,
    covariate_names=None,
) -> tuple[np.ndarray, dict]:
    """Draw ``n_meta`` covariate vectors for the meta-analysis population.

    Returns the sample and a provenance dict that records whether the
    covariance needed repair.
    """
    train_cov = np.atleast_2d(np.asarray(train_cov, dtype=float))
    d = train_cov.shape[0]
    if covariate_names is None:
        names = [s.name for s in meta.covariate_stats]
    else:
        names = list(covariate_names)
    if len(names) != d:
        raise CohortError(f"meta summary covers {len(names)} covariates, training covariance is {d}x{d}")
    mu, sd = meta.covariate_arrays(names)
    cov, repaired = meta_covariance(sd, train_cov)
    if repaired:
        logger.warning("meta covariance was not positive definite; eigenvalues clipped at %g", EIGEN_FLOOR)
    if n_meta < 2:
        raise WeightError("n_meta must be at least 2")
    sample = _rng(seed, 0x4D455441).multivariate_normal(mu, cov, size=n_meta, method="cholesky")
    prov = {
        "n_meta": int(n_meta),
        "seed": int(seed),
        "covariance_repaired": bool(repaired),
        "min_eigenvalue": float(np.linalg.eigvalsh(cov).min()),
        "covariance": cov.tolist(),
    }
    return sample, prov


def covariate_weights(train_X, meta_sample, bandwidth: float | str | None = "auto") -> WeightSet:
    """KDE density ratio ``p_meta(x_i) / p_train(x_i)`` on the training rows."""
    train_X = np.asarray(train_X, dtype=float)
    meta_sample = np.asarray(meta_sample, dtype=float)
    if train_X.ndim == 1:
        train_X = train_X[:, None]
    if meta_sample.ndim == 1:
        meta_sample = meta_sample[:, None]
    if train_X.shape[1] != meta_sample.shape[1]:
        raise WeightError(
            f"dimension mismatch: training has {train_X.shape[1]} covariates, meta sample {meta_sample.shape[1]}"
        )
    if meta_sample.shape[0] < 2:
        raise WeightError("meta sample needs at least 2 points")
    center, scale = standardization(train_X)
    bw = scott_bandwidth(train_X) if bandwidth in (None, "auto") else float(bandwidth)
    log_train = fit_kde(train_X, bw, center, scale).log_density(train_X)
    log_meta = fit_kde(meta_sample, bw, center, scale).log_density(train_X)
    ratio = np.exp(np.clip(log_meta - log_train, np.log(WEIGHT_FLOOR), np.log(WEIGHT_CAP)))
    capped = int(np.count_nonzero(log_meta - log_train > np.log(WEIGHT_CAP)))
    floored = int(np.count_nonzero(log_meta - log_train < np.log(WEIGHT_FLOOR)))
    prov = {"bandwidth": bw, "n_meta": int(meta_sample.shape[0]), "capped": capped, "floored": floored}
    return WeightSet("covariate", _normalized(ratio), prov)


def joint_weights(concept: WeightSet, covariate: WeightSet) -> WeightSet:
    if concept.kind != "concept" or covariate.kind != "covariate":
        raise WeightError(f"joint weights need concept and covariate sets, got {concept.kind} and {covariate.kind}")
    if len(concept) != len(covariate):
        raise WeightError(f"length mismatch: {len(concept)} vs {len(covariate)}")
    prov = {"concept": concept.provenance, "covariate": covariate.provenance}
    return WeightSet("joint", _normalized(concept.values * covariate.values), prov)


def default_n_meta(n_train: int) -> int:
    return max(10 * n_train, 5000)
