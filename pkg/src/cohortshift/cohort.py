"""Patient cohorts, meta-analysis summaries and horizon outcomes.

A :class:`Cohort` stores its records column-wise (numpy arrays) so that
fitting and density estimation can work on whole matrices; individual
:class:`PatientRecord` objects are materialized on demand.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("id", "time", "event", "treatment")


class CohortError(ValueError):
    """Invalid cohort or meta-analysis input."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PatientRecord:
    id: str
    covariates: tuple[float, ...]
    time: float
    event: bool
    treatment: bool = False


@dataclass(frozen=True, eq=False)
class Cohort:
    """A named set of patients with right-censored follow-up.

    Parameters
    ----------
    name : str
        Cohort label, unique within a multi-cohort analysis.
    covariate_names : sequence of str
        Names of the ``d`` covariate columns.
    ids : sequence of str
    X : array of shape (n, d)
    time : array of shape (n,)
        Follow-up in months, finite and strictly positive.
    event : array of shape (n,)
        True when recurrence was observed at ``time``.
    treatment : array of shape (n,), optional
    """

    name: str
    covariate_names: tuple[str, ...]
    ids: tuple[str, ...]
    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    treatment: np.ndarray = None

    def __post_init__(self):
        names = tuple(str(c) for c in self.covariate_names)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, len(names)) if names else X.reshape(-1, 0)
        n = X.shape[0]
        if X.shape[1] != len(names):
            raise CohortError(
                f"cohort {self.name!r}: {X.shape[1]} covariate columns but "
                f"{len(names)} covariate names"
            )
        if len(set(names)) != len(names):
            raise CohortError(f"cohort {self.name!r}: duplicate covariate names")
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event).reshape(-1)
        treatment = (
            np.zeros(n, dtype=bool)
            if self.treatment is None
            else np.asarray(self.treatment).reshape(-1)
        )
        ids = tuple(str(i) for i in self.ids)
        for label, arr in (("ids", ids), ("time", time), ("event", event), ("treatment", treatment)):
            if len(arr) != n:
                raise CohortError(f"cohort {self.name!r}: {label} has length {len(arr)}, expected {n}")
        if n == 0:
            raise CohortError(f"cohort {self.name!r} has no records")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            k = int(np.flatnonzero(~(np.isfinite(time) & (time > 0)))[0])
            raise CohortError(f"nonpositive or non-finite time at row {k + 1}")
        if not np.all(np.isfinite(X)):
            k = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
            raise CohortError(f"missing or non-finite covariate at row {k + 1}")
        if event.dtype != bool:
            if not np.all(np.isin(event, (0, 1))):
                raise CohortError("event flags must be 0 or 1")
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "X", _frozen(X, float))
        object.__setattr__(self, "time", _frozen(time, float))
        object.__setattr__(self, "event", _frozen(event, bool))
        object.__setattr__(self, "treatment", _frozen(treatment, bool))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def records(self) -> list[PatientRecord]:
        return [
            PatientRecord(
                id=self.ids[i],
                covariates=tuple(float(v) for v in self.X[i]),
                time=float(self.time[i]),
                event=bool(self.event[i]),
                treatment=bool(self.treatment[i]),
            )
            for i in range(self.n)
        ]

    @classmethod
    def from_records(
        cls, name: str, covariate_names: Sequence[str], records: Iterable[PatientRecord]
    ) -> "Cohort":
        records = list(records)
        d = len(covariate_names)
        for r in records:
            if len(r.covariates) != d:
                raise CohortError(f"record {r.id!r} has {len(r.covariates)} covariates, expected {d}")
        return cls(
            name=name,
            covariate_names=tuple(covariate_names),
            ids=[r.id for r in records],
            X=np.array([r.covariates for r in records], dtype=float).reshape(len(records), d),
            time=[r.time for r in records],
            event=[bool(r.event) for r in records],
            treatment=[bool(r.treatment) for r in records],
        )

    def subset(self, mask_or_index, name: str | None = None) -> "Cohort":
        idx = np.arange(self.n)[mask_or_index]
        return Cohort(
            name=name or self.name,
            covariate_names=self.covariate_names,
            ids=[self.ids[i] for i in idx],
            X=self.X[idx],
            time=self.time[idx],
            event=self.event[idx],
            treatment=self.treatment[idx],
        )

    def column_index(self, names: Sequence[str]) -> list[int]:
        lookup = {c: j for j, c in enumerate(self.covariate_names)}
        missing = [c for c in names if c not in lookup]
        if missing:
            raise CohortError(f"cohort {self.name!r} lacks covariates {missing}")
        return [lookup[c] for c in names]


@dataclass(frozen=True, eq=False)
class HorizonSample:
    """Binary horizon outcomes for the horizon-determinate patients.

    ``index`` maps each entry back to its row in the source cohort.
    """

    horizon: float
    X: np.ndarray
    y: np.ndarray
    index: np.ndarray
    excluded_count: int

    @property
    def entries(self) -> list[tuple[tuple[float, ...], int]]:
        return [(tuple(float(v) for v in x), int(v)) for x, v in zip(self.X, self.y)]

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def z(self) -> np.ndarray:
        """Covariates with the outcome appended as a final real column."""
        return np.column_stack([self.X, self.y.astype(float)])

    @property
    def prevalence(self) -> float:
        return float(np.mean(self.y))


def derive_horizon_outcomes(
    cohort: Cohort, horizon: float = 60.0, policy: str = "exclude_censored"
) -> HorizonSample:
    """Dichotomize follow-up at ``horizon`` months.

    A patient is a case (y = 1) when the event occurred at or before the
    horizon, and a control (y = 0) when known event-free through the horizon.
    Patients censored before the horizon are excluded and counted.
    """
    if not horizon > 0:
        raise CohortError("horizon must be positive")
    if policy != "exclude_censored":
        raise CohortError(f"unknown censoring policy {policy!r}")
    case = cohort.event & (cohort.time <= horizon)
    control = cohort.time >= horizon
    control &= ~case
    keep = case | control
    if not np.any(keep):
        raise CohortError(
            f"no horizon-determinate patients in cohort {cohort.name!r} at horizon {horizon}"
        )
    idx = np.flatnonzero(keep)
    y = case[idx].astype(np.int64)
    X = cohort.X[idx]
    for a in (X, y, idx):
        a.setflags(write=False)
    return HorizonSample(
        horizon=float(horizon), X=X, y=y, index=idx, excluded_count=int(cohort.n - len(idx))
    )


@dataclass(frozen=True)
class CovariateStat:
    name: str
    mean: float
    sd: float


@dataclass(frozen=True)
class MetaSummary:
    """Aggregate outcome and covariate statistics from a meta-analysis."""

    outcome_mean: float
    outcome_sd: float
    covariate_stats: tuple[CovariateStat, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not (0.0 <= self.outcome_mean <= 1.0):
            raise CohortError(f"outcome mean {self.outcome_mean} outside [0, 1]")
        if not self.outcome_sd > 0:
            raise CohortError(f"outcome sd must be positive, got {self.outcome_sd}")
        stats = tuple(
            s if isinstance(s, CovariateStat) else CovariateStat(*s) for s in self.covariate_stats
        )
        for s in stats:
            if not s.sd > 0:
                raise CohortError(f"covariate {s.name!r} has nonpositive sd {s.sd}")
            if not math.isfinite(s.mean):
                raise CohortError(f"covariate {s.name!r} has non-finite mean")
        names = [s.name for s in stats]
        if len(set(names)) != len(names):
            raise CohortError("duplicate covariate names in meta summary")
        object.__setattr__(self, "covariate_stats", stats)

    def covariate_arrays(self, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Means and sds ordered as ``names``; every name must be present."""
        lookup = {s.name: s for s in self.covariate_stats}
        missing = [c for c in names if c not in lookup]
        if missing:
            raise CohortError(f"meta summary lacks covariates {missing}")
        return (
            np.array([lookup[c].mean for c in names], dtype=float),
            np.array([lookup[c].sd for c in names], dtype=float),
        )

    def to_dict(self) -> dict:
        return {
            "outcome": {"mean": self.outcome_mean, "sd": self.outcome_sd},
            "covariates": [{"name": s.name, "mean": s.mean, "sd": s.sd} for s in self.covariate_stats],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MetaSummary":
        try:
            outcome = doc["outcome"]
            mean, sd = float(outcome["mean"]), float(outcome["sd"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CohortError(f"malformed meta summary: {exc}") from None
        covs = []
        for entry in doc.get("covariates", []) or []:
            try:
                covs.append(CovariateStat(str(entry["name"]), float(entry["mean"]), float(entry["sd"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise CohortError(f"malformed covariate entry {entry!r}: {exc}") from None
        return cls(mean, sd, tuple(covs))


def load_meta_summary(path) -> MetaSummary:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CohortError(f"{path}: not valid JSON ({exc})") from None
    return MetaSummary.from_dict(doc)


def save_meta_summary(meta: MetaSummary, path) -> None:
    Path(path).write_text(json.dumps(meta.to_dict(), indent=2) + "\n", encoding="utf-8")


def _parse_flag(raw: str, column: str, row: int) -> bool:
    try:
        value = float(raw)
    except ValueError:
        value = math.nan
    if value == 0.0:
        return False
    if value == 1.0:
        return True
    raise CohortError(f"unknown {column} code {raw!r} at row {row}")


def load_cohort(
    path,
    schema: Mapping[str, str] | None = None,
    *,
    name: str | None = None,
    covariates: Sequence[str] | None = None,
    missing: str = "error",
) -> Cohort:
    """Read a cohort CSV.

    Parameters
    ----------
    path : path-like
        CSV with header ``id,time,event,treatment,<covariates...>``.
    schema : mapping, optional
        Maps the logical columns ``id``, ``time``, ``event``, ``treatment``
        to header names in the file.
    name : str, optional
        Cohort name; defaults to the file stem.
    covariates : sequence of str, optional
        Covariate columns to keep; default is every non-required column
        in header order.
    missing : {"error", "drop"}
        Rows with an empty covariate either abort loading or are dropped
        with a logged warning.
    """
    path = Path(path)
    schema = {c: c for c in REQUIRED_COLUMNS} | dict(schema or {})
    if missing not in ("error", "drop"):
        raise CohortError(f"unknown missing-value policy {missing!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CohortError(f"{path}: empty file") from None
        pos = {h: j for j, h in enumerate(header)}
        for logical in REQUIRED_COLUMNS:
            if schema[logical] not in pos:
                raise CohortError(f"{path}: missing column {schema[logical]!r}")
        reserved = {schema[c] for c in REQUIRED_COLUMNS}
        cov_names = list(covariates) if covariates is not None else [h for h in header if h not in reserved]
        for c in cov_names:
            if c not in pos:
                raise CohortError(f"{path}: missing column {c!r}")
        if not cov_names:
            raise CohortError(f"{path}: no covariate columns")

        ids, times, events, treats, rows = [], [], [], [], []
        dropped = 0
        for k, raw in enumerate(reader, start=1):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(header):
                raise CohortError(f"{path}: row {k} has {len(raw)} fields, expected {len(header)}")
            cells = [cell.strip() for cell in raw]
            x = []
            skip = False
            for c in cov_names:
                cell = cells[pos[c]]
                if cell == "" or cell.lower() in ("na", "nan"):
                    if missing == "drop":
                        skip = True
                        break
                    raise CohortError(f"{path}: missing value for {c!r} at row {k}")
                try:
                    x.append(float(cell))
                except ValueError:
                    raise CohortError(f"{path}: non-numeric covariate {c!r} at row {k}: {cell!r}") from None
            if skip:
                dropped += 1
                continue
            try:
                t = float(cells[pos[schema["time"]]])
            except ValueError:
                raise CohortError(f"{path}: non-numeric time at row {k}") from None
            if not (math.isfinite(t) and t > 0):
                raise CohortError(f"nonpositive time at row {k}")
            ids.append(cells[pos[schema["id"]]])
            times.append(t)
            events.append(_parse_flag(cells[pos[schema["event"]]], "event", k))
            treats.append(_parse_flag(cells[pos[schema["treatment"]]], "treatment", k))
            rows.append(x)
    if dropped:
        logger.warning("%s: dropped %d rows with missing covariates", path, dropped)
    if not rows:
        raise CohortError(f"{path}: no records")
    return Cohort(
        name=name or path.stem,
        covariate_names=tuple(cov_names),
        ids=ids,
        X=np.array(rows, dtype=float),
        time=times,
        event=events,
        treatment=treats,
    )


def save_cohort(cohort: Cohort, path) -> None:
    """Write ``cohort`` as CSV; reals use the shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*REQUIRED_COLUMNS, *cohort.covariate_names])
        for i in range(cohort.n):
            w.writerow(
                [
                    cohort.ids[i],
                    repr(float(cohort.time[i])),
                    int(cohort.event[i]),
                    int(cohort.treatment[i]),
                    *(repr(float(v)) for v in cohort.X[i]),
                ]
            )
