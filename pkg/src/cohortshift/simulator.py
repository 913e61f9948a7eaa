"""Synthetic multi-institution cohorts with known ground truth.

Event times follow a Weibull proportional-hazards model

    S(t | x) = exp(-(t / scale) ** shape * exp(eta(x)))

with ``eta(x) = x @ (beta + delta) + curvature @ x**2`` plus a log hazard
multiplier for carriers of an optional unobserved factor. Covariate shift is
set through the covariate mean/covariance, concept shift through ``delta``,
the baseline scale, or the hidden-factor prevalence.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import multivariate_normal

from .cohort import Cohort


class SpecError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CohortSpec:
    name: str
    n: int
    covariate_mean: np.ndarray
    covariate_cov: np.ndarray
    hazard_coefficients: np.ndarray
    weibull_shape: float = 1.0
    weibull_scale: float = 100.0
    censoring: tuple[float, float] = (60.0, 120.0)
    concept_shift: np.ndarray | None = None
    hidden_factor: tuple[float, float] | None = None
    curvature: np.ndarray | None = None
    covariate_names: tuple[str, ...] | None = None
    treatment_rate: float = 0.0

    def __post_init__(self):
        mean = np.asarray(self.covariate_mean, dtype=float).reshape(-1)
        d = mean.size
        cov = np.asarray(self.covariate_cov, dtype=float).reshape(d, d)
        beta = np.asarray(self.hazard_coefficients, dtype=float).reshape(d)
        delta = np.zeros(d) if self.concept_shift is None else np.asarray(self.concept_shift, dtype=float).reshape(d)
        curv = np.zeros(d) if self.curvature is None else np.asarray(self.curvature, dtype=float).reshape(d)
        names = tuple(self.covariate_names) if self.covariate_names else tuple(f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise SpecError(f"spec {self.name!r}: {len(names)} names for {d} covariates")
        if self.n < 50:
            raise SpecError(f"spec {self.name!r}: n must be at least 50")
        c_min, c_max = (float(c) for c in self.censoring)
        if not (c_max > c_min > 0):
            raise SpecError(f"spec {self.name!r}: censoring window must satisfy c_max > c_min > 0")
        if not (self.weibull_shape > 0 and self.weibull_scale > 0):
            raise SpecError(f"spec {self.name!r}: Weibull parameters must be positive")
        if not np.allclose(cov, cov.T):
            raise SpecError(f"spec {self.name!r}: covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise SpecError(f"spec {self.name!r}: covariance is not positive definite")
        if self.hidden_factor is not None:
            prev, mult = (float(v) for v in self.hidden_factor)
            if not (0.0 <= prev <= 1.0 and mult > 0):
                raise SpecError(f"spec {self.name!r}: hidden factor needs prevalence in [0,1] and positive multiplier")
            object.__setattr__(self, "hidden_factor", (prev, mult))
        if not 0.0 <= self.treatment_rate <= 1.0:
            raise SpecError("treatment_rate must lie in [0, 1]")
        for attr, value in (
            ("covariate_mean", mean),
            ("covariate_cov", cov),
            ("hazard_coefficients", beta),
            ("concept_shift", delta),
            ("curvature", curv),
        ):
            value.setflags(write=False)
            object.__setattr__(self, attr, value)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "censoring", (c_min, c_max))

    @property
    def d(self) -> int:
        return self.covariate_mean.size

    def linear_predictor(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ (self.hazard_coefficients + self.concept_shift) + (X * X) @ self.curvature

    def risk(self, X, horizon: float = 60.0, hidden=None) -> np.ndarray:
        """P(T <= horizon | x), marginal over the hidden factor unless ``hidden`` is given."""
        H = (horizon / self.weibull_scale) ** self.weibull_shape * np.exp(self.linear_predictor(X))
        base = -np.expm1(-H)
        if self.hidden_factor is None:
            return base
        prev, mult = self.hidden_factor
        carrier = -np.expm1(-H * mult)
        if hidden is not None:
            return np.where(np.asarray(hidden, dtype=bool), carrier, base)
        return prev * carrier + (1.0 - prev) * base

    def covariate_density(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.atleast_1d(multivariate_normal(self.covariate_mean, self.covariate_cov).pdf(X))

    def covariate_logpdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.atleast_1d(multivariate_normal(self.covariate_mean, self.covariate_cov).logpdf(X))

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "n": int(self.n),
            "covariate_names": list(self.covariate_names),
            "covariate_mean": self.covariate_mean.tolist(),
            "covariate_cov": self.covariate_cov.tolist(),
            "hazard_coefficients": self.hazard_coefficients.tolist(),
            "weibull_shape": self.weibull_shape,
            "weibull_scale": self.weibull_scale,
            "censoring": list(self.censoring),
            "concept_shift": self.concept_shift.tolist(),
            "curvature": self.curvature.tolist(),
            "hidden_factor": list(self.hidden_factor) if self.hidden_factor else None,
            "treatment_rate": self.treatment_rate,
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CohortSpec":
        doc = dict(doc)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown cohort spec fields {sorted(unknown)}")
        if doc.get("hidden_factor") is not None:
            doc["hidden_factor"] = tuple(doc["hidden_factor"])
        if "censoring" in doc:
            doc["censoring"] = tuple(doc["censoring"])
        return cls(**doc)

    def replace(self, **changes) -> "CohortSpec":
        doc = self.to_dict()
        doc.update(changes)
        return CohortSpec.from_dict(doc)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    horizon: float
    risk: np.ndarray
    density: np.ndarray
    hidden: np.ndarray
    event_time: np.ndarray = field(repr=False)


def name_key(name: str) -> int:
    """Stable 32-bit key for a cohort name (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")


def stream(seed: int, name: str, purpose: int, replicate: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, replicate, cohort name, purpose)."""
    ss = np.random.SeedSequence([int(seed), int(replicate), name_key(name), int(purpose)])
    return np.random.Generator(np.random.Philox(ss))


_COVARIATES, _EVENT, _CENSOR, _HIDDEN, _TREAT = range(5)


def simulate_cohort(spec: CohortSpec, seed: int, horizon: float = 60.0, replicate: int = 0) -> tuple[Cohort, GroundTruth]:
    """Draw a cohort from ``spec``.

    Each random quantity comes from its own stream keyed by the seed, the
    replicate index and the cohort name, so patient ``i`` keeps its draws
    when other cohorts are added or ``n`` grows.
    """
    n, d = spec.n, spec.d
    L = np.linalg.cholesky(spec.covariate_cov)
    Z = stream(seed, spec.name, _COVARIATES, replicate).standard_normal((n, d))
    X = spec.covariate_mean + Z @ L.T
    if spec.hidden_factor is not None:
        hidden = stream(seed, spec.name, _HIDDEN, replicate).random(n) < spec.hidden_factor[0]
        log_mult = math.log(spec.hidden_factor[1])
    else:
        hidden = np.zeros(n, dtype=bool)
        log_mult = 0.0
    eta = spec.linear_predictor(X) + log_mult * hidden
    U = stream(seed, spec.name, _EVENT, replicate).random(n)
    # inverse of S(t) = exp(-(t/scale)^shape * exp(eta)); 1 - U keeps log finite
    event_time = spec.weibull_scale * (-np.log1p(-U) * np.exp(-eta)) ** (1.0 / spec.weibull_shape)
    c_min, c_max = spec.censoring
    C = stream(seed, spec.name, _CENSOR, replicate).uniform(c_min, c_max, n)
    time = np.minimum(event_time, C)
    event = event_time <= C
    treat = stream(seed, spec.name, _TREAT, replicate).random(n) < spec.treatment_rate
    width = len(str(n))
    cohort = Cohort(
        name=spec.name,
        covariate_names=spec.covariate_names,
        ids=[f"{spec.name}-{i:0{width}d}" for i in range(n)],
        X=X,
        time=time,
        event=event,
        treatment=treat,
    )
    truth = GroundTruth(
        horizon=float(horizon),
        risk=spec.risk(X, horizon),
        density=spec.covariate_density(X),
        hidden=hidden,
        event_time=event_time,
    )
    return cohort, truth


def true_density_ratio(spec_a: CohortSpec, spec_b: CohortSpec, x, y=None, horizon: float = 60.0):
    """Exact ``p_b / p_a`` at ``x`` (and binary horizon outcome ``y`` if given).

    ``spec_a`` plays the training distribution and ``spec_b`` the target.
    """
    for s in (spec_a, spec_b):
        if np.linalg.eigvalsh(s.covariate_cov).min() <= 0:
            raise SpecError(f"spec {s.name!r} has a singular covariance")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and spec_a.d > 1 or x.ndim == 0
    X = x.reshape(-1, spec_a.d)
    log_ratio = spec_b.covariate_logpdf(X) - spec_a.covariate_logpdf(X)
    ratio = np.exp(log_ratio)
    if y is not None:
        y = np.asarray(y).reshape(-1).astype(bool)
        ra = spec_a.risk(X, horizon)
        rb = spec_b.risk(X, horizon)
        ratio = ratio * np.where(y, rb / ra, (1.0 - rb) / (1.0 - ra))
    return float(ratio[0]) if single else ratio


def scenario_suite(config=None, seed: int = 0, workers: int = 1):
    """Run the pairwise train/evaluate grid; see :func:`cohortshift.suite.scenario_suite`."""
    from .suite import scenario_suite as _run

    return _run(config, seed, workers)
