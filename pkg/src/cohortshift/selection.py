"""Pick a published model for a target cohort from outcome summaries alone."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import Cohort, CohortError, derive_horizon_outcomes
from .evaluation import calibration
from .survival import CoxModel, FitReport, km_estimate


@dataclass(frozen=True, eq=False)
class ModelCard:
    model: CoxModel
    training_cohort_name: str
    km_at_horizon: float
    n_train: int
    weighting_kind: str = "none"
    horizon: float = 60.0

    def __post_init__(self):
        if not 0.0 <= self.km_at_horizon <= 1.0:
            raise ValueError(f"km_at_horizon {self.km_at_horizon} outside [0, 1]")

    def predict(self, X) -> np.ndarray:
        return self.model.predict_risk(X, self.horizon)

    def to_dict(self) -> dict:
        m = self.model
        doc = {
            "coefficients": {c: float(b) for c, b in zip(m.covariate_names, m.coefficients)},
            "baseline": [[float(t), float(h)] for t, h in zip(m.baseline_times, m.baseline_cum_hazard)],
            "covariate_means": {c: float(v) for c, v in zip(m.covariate_names, m.covariate_means)},
            "training": {
                "cohort_name": self.training_cohort_name,
                "n": int(self.n_train),
                "km_at_horizon": float(self.km_at_horizon),
                "weighting_kind": self.weighting_kind,
                "horizon": float(self.horizon),
            },
        }
        if m.fit_report is not None:
            r = m.fit_report
            doc["fit"] = {
                "iterations": r.iterations,
                "gradient_norm": r.gradient_norm,
                "log_partial_likelihood": r.log_partial_likelihood,
                "converged": r.converged,
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelCard":
        try:
            coefs = doc["coefficients"]
            names = tuple(coefs)
            means = doc["covariate_means"]
            baseline = np.asarray(doc["baseline"], dtype=float).reshape(-1, 2)
            training = doc["training"]
            fit = doc.get("fit")
            model = CoxModel(
                covariate_names=names,
                coefficients=np.array([coefs[c] for c in names], dtype=float),
                covariate_means=np.array([means[c] for c in names], dtype=float),
                baseline_times=baseline[:, 0].copy(),
                baseline_cum_hazard=baseline[:, 1].copy(),
                fit_report=FitReport(**fit) if fit else None,
            )
            return cls(
                model=model,
                training_cohort_name=str(training["cohort_name"]),
                km_at_horizon=float(training["km_at_horizon"]),
                n_train=int(training["n"]),
                weighting_kind=str(training.get("weighting_kind", "none")),
                horizon=float(training.get("horizon", 60.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed model card: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelCard":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def load_registry(directory) -> list[ModelCard]:
    """All ``*.json`` model cards in ``directory``, in file-name order."""
    paths = sorted(p for p in Path(directory).glob("*.json") if p.name != "manifest.json")
    if not paths:
        raise FileNotFoundError(f"no model cards in {directory}")
    return [ModelCard.load(p) for p in paths]


def cohort_distance(km_train, km_test) -> float:
    """Euclidean distance between outcome summaries (scalars or vectors)."""
    a = np.atleast_1d(np.asarray(km_train, dtype=float))
    b = np.atleast_1d(np.asarray(km_test, dtype=float))
    if a.shape != b.shape:
        raise ValueError("summaries differ in shape")
    for v in (a, b):
        if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise ValueError(f"summary {v.tolist()} outside [0, 1]")
    if a.size == 1:
        return abs(float(a[0]) - float(b[0]))
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class RankingEntry:
    card: ModelCard
    distance: float
    ici: float | None = None


@dataclass(frozen=True)
class SelectionRanking:
    target_name: str
    target_km: float
    horizon: float
    entries: tuple[RankingEntry, ...]

    def rows(self) -> list[dict]:
        out = []
        for rank, e in enumerate(self.entries, start=1):
            out.append(
                {
                    "rank": rank,
                    "model": e.card.training_cohort_name,
                    "weighting": e.card.weighting_kind,
                    "n_train": e.card.n_train,
                    "km_train": e.card.km_at_horizon,
                    "km_target": self.target_km,
                    "distance": e.distance,
                    "ici": e.ici,
                }
            )
        return out


def rank_models(
    cards: Sequence[ModelCard], target: Cohort, horizon: float = 60.0, audit: bool = False
) -> SelectionRanking:
    """Order candidate models by distance between training and target KM summaries.

    Ties go to the larger training cohort, then to the lexicographically
    smaller cohort name (then weighting kind). With ``audit`` each card's
    ICI on the target's horizon sample is attached for comparison.
    """
    if not cards:
        raise ValueError("no candidate model cards")
    if horizon > float(target.time.max()):
        raise CohortError(
            f"horizon {horizon} is beyond all follow-up in target {target.name!r} (max {target.time.max():g})"
        )
    _, km_target = km_estimate(target, horizon)
    sample = derive_horizon_outcomes(target, horizon) if audit else None
    scored = []
    for card in cards:
        dist = cohort_distance(card.km_at_horizon, km_target)
        score = None
        if audit:
            X = sample.X[:, target.column_index(card.model.covariate_names)]
            score = calibration(card.model.predict_risk(X, horizon), sample.y).ici
        scored.append(RankingEntry(card, dist, score))
    scored.sort(key=lambda e: (e.distance, -e.card.n_train, e.card.training_cohort_name, e.card.weighting_kind))
    return SelectionRanking(target.name, km_target, float(horizon), tuple(scored))
