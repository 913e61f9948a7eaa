"""Pairwise train/evaluate experiment over a set of simulated cohorts.

For every replicate and every training cohort the suite fits an unweighted
Cox model plus concept- and joint-weighted refits, then evaluates each model
in every other cohort: KL divergence between the cohorts, KM outcome
distance, ICI, Harrell's C and a decision curve.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import Cohort, CovariateStat, MetaSummary, derive_horizon_outcomes, save_cohort
from .density import kl_from_samples
from .evaluation import calibration, decision_curve, spearman, wilcoxon_signed_rank
from .selection import ModelCard, cohort_distance
from .simulator import CohortSpec, GroundTruth, name_key, simulate_cohort
from .survival import fit_cox, harrell_c, km_estimate
from .weights import (
    concept_weights,
    covariate_weights,
    default_n_meta,
    joint_weights,
    simulate_meta_covariates,
    stratify,
)

logger = logging.getLogger(__name__)

WEIGHTINGS = ("none", "concept", "joint")

_COV = [[1.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.0]]


def graded_shift_config(n: int = 800, replicates: int = 1) -> dict:
    """Five cohorts with graded covariate and outcome shift.

    Covariate means move along the first two covariates, baseline hazard
    scale falls in step, and a convex term in the first covariate makes the
    Cox model misspecified. 5-year event-free survival spans roughly
    0.25 to 0.7.
    """
    shifts = [-1.0, -0.5, 0.0, 0.5, 1.0]
    scales = [130.0, 115.0, 100.0, 88.0, 78.0]
    names = ["alpha", "bravo", "charlie", "delta", "echo"]
    cohorts = [
        {
            "name": name,
            "n": n,
            "covariate_names": ["x1", "x2", "x3"],
            "covariate_mean": [s, 0.5 * s, 0.0],
            "covariate_cov": _COV,
            "hazard_coefficients": [0.6, 0.4, 0.3],
            "curvature": [0.2, 0.0, 0.0],
            "weibull_shape": 1.2,
            "weibull_scale": scale,
            "censoring": [50.0, 150.0],
        }
        for name, s, scale in zip(names, shifts, scales)
    ]
    return {
        "horizon": 60.0,
        "strata": 8,
        "bandwidth": "auto",
        "replicates": replicates,
        "weightings": list(WEIGHTINGS),
        "meta": "pooled",
        "n_meta": None,
        "cohorts": cohorts,
    }


def null_config(n: int = 3000) -> dict:
    """Five cohorts drawn from one distribution."""
    cfg = graded_shift_config(n)
    base = cfg["cohorts"][2]
    cfg["cohorts"] = [dict(base, name=f"null{k}") for k in range(5)]
    return cfg


def validate_config(config: dict) -> dict:
    cfg = copy.deepcopy(config)
    defaults = graded_shift_config()
    for key in ("horizon", "strata", "bandwidth", "replicates", "weightings", "meta", "n_meta"):
        cfg.setdefault(key, defaults[key])
    if "cohorts" not in cfg or len(cfg["cohorts"]) < 3:
        raise ValueError("suite needs at least 3 cohort specs")
    names = [c["name"] for c in cfg["cohorts"]]
    if len(set(names)) != len(names):
        raise ValueError("cohort names must be unique")
    unknown = set(cfg["weightings"]) - set(WEIGHTINGS)
    if unknown or "none" not in cfg["weightings"]:
        raise ValueError(f"weightings must include 'none' and be drawn from {WEIGHTINGS}")
    for c in cfg["cohorts"]:
        CohortSpec.from_dict(c)
    return cfg


@dataclass
class SuiteBundle:
    config: dict
    seed: int
    tables: dict[str, list[dict]] = field(default_factory=dict)
    cohorts: dict[tuple[int, str], Cohort] = field(default_factory=dict)
    cards: dict[tuple[int, str, str], ModelCard] = field(default_factory=dict)
    meta: dict[int, MetaSummary] = field(default_factory=dict)
    weight_provenance: dict[tuple[int, str], dict] = field(default_factory=dict)


def pooled_meta(cohorts: list[Cohort], truths: list[GroundTruth]) -> MetaSummary:
    """Meta summary of the pooled population: true-risk mean/sd and covariate mean/sd."""
    risk = np.concatenate([t.risk for t in truths])
    X = np.vstack([c.X for c in cohorts])
    stats = tuple(
        CovariateStat(name, float(X[:, j].mean()), float(X[:, j].std(ddof=1)))
        for j, name in enumerate(cohorts[0].covariate_names)
    )
    return MetaSummary(float(risk.mean()), float(risk.std(ddof=1)), stats)


def _derived_seed(seed: int, replicate: int, name: str) -> int:
    ss = np.random.SeedSequence([int(seed), int(replicate), name_key(name), 0x5745])
    return int(ss.generate_state(1)[0])


def fit_weighted_models(train: Cohort, meta: MetaSummary, cfg: dict, seed: int):
    """Unweighted model plus each requested weighted refit.

    Returns ``(models, weight_sets)`` keyed by weighting kind.
    """
    horizon = float(cfg["horizon"])
    models = {"none": fit_cox(train)}
    weight_sets = {}
    want = set(cfg["weightings"])
    if want & {"concept", "joint"}:
        risks = models["none"].predict_risk(train.X, horizon)
        strata = stratify(risks, int(cfg["strata"]))
        cw = concept_weights(risks, strata, meta)
        weight_sets["concept"] = cw
        if "concept" in want:
            models["concept"] = fit_cox(train, cw)
        if "joint" in want:
            n_meta = cfg.get("n_meta") or default_n_meta(train.n)
            sample, _ = simulate_meta_covariates(
                meta, np.cov(train.X, rowvar=False), int(n_meta), seed, train.covariate_names
            )
            cov_w = covariate_weights(train.X, sample, cfg["bandwidth"])
            jw = joint_weights(cw, cov_w)
            weight_sets["joint"] = jw
            models["joint"] = fit_cox(train, jw)
    return models, weight_sets


def _train_task(args):
    replicate, train_name, cohorts, meta, cfg, seed = args
    horizon = float(cfg["horizon"])
    bandwidth = cfg["bandwidth"]
    train = cohorts[train_name]
    models, weight_sets = fit_weighted_models(train, meta, cfg, _derived_seed(seed, replicate, train_name))
    km_train = km_estimate(train, horizon)[1]
    train_sample = derive_horizon_outcomes(train, horizon)
    cards = {
        kind: ModelCard(model, train_name, km_train, train.n, kind, horizon) for kind, model in models.items()
    }
    cells, curves, dca = [], [], []
    for test_name, test in cohorts.items():
        if test_name == train_name:
            continue
        sample = derive_horizon_outcomes(test, horizon)
        kl = kl_from_samples(train_sample.z, sample.z, bandwidth)
        km_test = km_estimate(test, horizon)[1]
        dist = cohort_distance(km_train, km_test)
        for kind in cfg["weightings"]:
            model = models[kind]
            preds = model.predict_risk(sample.X, horizon)
            cal = calibration(preds, sample.y)
            conc = harrell_c(model.predict_risk(test.X, horizon), test)
            nb = decision_curve(preds, sample.y)
            cells.append(
                {
                    "replicate": replicate,
                    "train": train_name,
                    "test": test_name,
                    "weighting": kind,
                    "kl": kl.value,
                    "kl_floor_hits": kl.floor_hits,
                    "distance": dist,
                    "km_train": km_train,
                    "km_test": km_test,
                    "ici": cal.ici,
                    "c_index": conc.c_index,
                    "n_test": sample.n,
                    "excluded": sample.excluded_count,
                    "mean_pred": float(preds.mean()),
                    "prevalence": sample.prevalence,
                    "max_net_benefit": nb.max_net_benefit,
                    "winning_range": ";".join(f"{lo:g}-{hi:g}" for lo, hi in nb.winning_range),
                }
            )
            if kind == "none":
                for p, o in cal.curve:
                    curves.append(
                        {"replicate": replicate, "train": train_name, "test": test_name, "predicted": float(p), "observed": float(o)}
                    )
                for t, m, a, z in nb.rows():
                    dca.append(
                        {
                            "replicate": replicate,
                            "train": train_name,
                            "test": test_name,
                            "threshold": t,
                            "nb_model": m,
                            "nb_treat_all": a,
                            "nb_treat_none": z,
                        }
                    )
    prov = {kind: ws.provenance.get("strata", {}) for kind, ws in weight_sets.items() if kind == "concept"}
    return replicate, train_name, cards, cells, curves, dca, prov


def _summarize_cells(cells: list[dict], names: list[str], replicates: int, weightings) -> dict[str, list[dict]]:
    kl_ici = [
        {k: c[k] for k in ("replicate", "train", "test", "kl", "ici", "c_index", "distance")}
        for c in cells
        if c["weighting"] == "none"
    ]
    weighting = []
    for r in range(replicates):
        for train in names:
            for kind in weightings:
                rows = [c for c in cells if c["replicate"] == r and c["train"] == train and c["weighting"] == kind]
                icis = [c["ici"] for c in rows]
                cs = [c["c_index"] for c in rows]
                weighting.append(
                    {
                        "replicate": r,
                        "train": train,
                        "weighting": kind,
                        "mean_ici": float(np.mean(icis)),
                        "min_ici": float(np.min(icis)),
                        "max_ici": float(np.max(icis)),
                        "mean_c_index": float(np.mean(cs)),
                    }
                )
    selection = []
    for r in range(replicates):
        for target in names:
            rows = [c for c in cells if c["replicate"] == r and c["test"] == target and c["weighting"] == "none"]
            by_dist = sorted(rows, key=lambda c: (c["distance"], c["train"]))
            by_ici = sorted(rows, key=lambda c: (c["ici"], c["train"]))
            for c in rows:
                selection.append(
                    {
                        "replicate": r,
                        "target": target,
                        "train": c["train"],
                        "distance": c["distance"],
                        "ici": c["ici"],
                        "distance_rank": by_dist.index(c) + 1,
                        "ici_rank": by_ici.index(c) + 1,
                    }
                )
    return {"kl_ici": kl_ici, "weighting": weighting, "selection": selection}


def scenario_suite(config: dict | None = None, seed: int = 0, workers: int = 1) -> SuiteBundle:
    """Run the full pairwise grid for every replicate.

    Results do not depend on ``workers``: every cell is a pure function of
    its inputs and tables are assembled in a fixed order.
    """
    cfg = validate_config(config or graded_shift_config())
    horizon = float(cfg["horizon"])
    specs = [CohortSpec.from_dict(c) for c in cfg["cohorts"]]
    names = [s.name for s in specs]
    replicates = int(cfg["replicates"])
    bundle = SuiteBundle(config=cfg, seed=int(seed))
    tasks = []
    cohort_rows = []
    for r in range(replicates):
        cohorts, truths = {}, []
        for spec in specs:
            cohort, truth = simulate_cohort(spec, seed, horizon, replicate=r)
            cohorts[spec.name] = cohort
            truths.append(truth)
            bundle.cohorts[(r, spec.name)] = cohort
            sample = derive_horizon_outcomes(cohort, horizon)
            cohort_rows.append(
                {
                    "replicate": r,
                    "cohort": spec.name,
                    "n": cohort.n,
                    "events": int(cohort.event.sum()),
                    "km_at_horizon": km_estimate(cohort, horizon)[1],
                    "true_mean_risk": float(truth.risk.mean()),
                    "horizon_prevalence": sample.prevalence,
                    "excluded": sample.excluded_count,
                }
            )
        if cfg["meta"] == "pooled":
            meta = pooled_meta(list(cohorts.values()), truths)
        else:
            meta = MetaSummary.from_dict(cfg["meta"])
        bundle.meta[r] = meta
        for name in names:
            tasks.append((r, name, cohorts, meta, cfg, int(seed)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_task, tasks))
    else:
        results = [_train_task(t) for t in tasks]

    cells, curves, dca = [], [], []
    for r, name, cards, c, cv, dc, prov in results:
        for kind, card in cards.items():
            bundle.cards[(r, name, kind)] = card
        bundle.weight_provenance[(r, name)] = prov
        cells.extend(c)
        curves.extend(cv)
        dca.extend(dc)
    bundle.tables["cohorts"] = cohort_rows
    bundle.tables["cells"] = cells
    bundle.tables.update(_summarize_cells(cells, names, replicates, cfg["weightings"]))
    bundle.tables["calibration_curves"] = curves
    bundle.tables["dca_curves"] = dca
    return bundle


# ---------------------------------------------------------------------------
# statistics over a bundle


def suite_statistics(tables: dict[str, list[dict]]) -> dict:
    """Correlation, weighting and selection summaries used by the report."""
    kl_ici = tables["kl_ici"]
    replicates = sorted({row["replicate"] for row in kl_ici})
    out: dict = {"replicates": len(replicates), "per_replicate": []}
    for r in replicates:
        rows = [row for row in kl_ici if row["replicate"] == r]
        rho_kl, p_kl = spearman([row["kl"] for row in rows], [row["ici"] for row in rows])
        rho_d, p_d = spearman([row["distance"] for row in rows], [row["ici"] for row in rows])
        sel = [row for row in tables["selection"] if row["replicate"] == r]
        targets = sorted({row["target"] for row in sel})
        top = {}
        for t in targets:
            cand = [row for row in sel if row["target"] == t and row["distance_rank"] == 1]
            top[t] = cand[0]["ici_rank"]
        out["per_replicate"].append(
            {
                "replicate": r,
                "spearman_kl_ici": rho_kl,
                "p_kl_ici": p_kl,
                "spearman_distance_ici": rho_d,
                "p_distance_ici": p_d,
                "selected_ici_rank": top,
                "selection_top2_all_targets": all(v <= 2 for v in top.values()),
            }
        )
    w = tables["weighting"]
    kinds = sorted({row["weighting"] for row in w}, key=WEIGHTINGS.index)
    base = {(row["replicate"], row["train"]): row for row in w if row["weighting"] == "none"}
    comparisons = {}
    for kind in kinds:
        if kind == "none":
            continue
        pairs = [(row, base[(row["replicate"], row["train"])]) for row in w if row["weighting"] == kind]
        weighted = np.array([a["mean_ici"] for a, _ in pairs])
        unweighted = np.array([b["mean_ici"] for _, b in pairs])
        entry = {
            "pairs": len(pairs),
            "median_ici_weighted": float(np.median(weighted)),
            "median_ici_unweighted": float(np.median(unweighted)),
            "fraction_improved": float(np.mean(weighted < unweighted)),
            "mean_c_weighted": float(np.mean([a["mean_c_index"] for a, _ in pairs])),
            "mean_c_unweighted": float(np.mean([b["mean_c_index"] for _, b in pairs])),
        }
        try:
            stat, p = wilcoxon_signed_rank(weighted, unweighted)
        except ValueError:
            stat, p = float("nan"), float("nan")
        entry["wilcoxon_statistic"] = stat
        entry["wilcoxon_p"] = p
        comparisons[kind] = entry
    out["weighting"] = comparisons
    return out


# ---------------------------------------------------------------------------
# bundle I/O

TABLES = ("cohorts", "cells", "kl_ici", "weighting", "selection", "calibration_curves", "dca_curves")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_table(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.writer(fh, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])


def read_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k, v in row.items():
            if k in ("train", "test", "target", "cohort", "weighting", "winning_range"):
                continue
            try:
                row[k] = int(v)
            except ValueError:
                try:
                    row[k] = float(v)
                except ValueError:
                    pass
    return rows


def write_bundle(bundle: SuiteBundle, out_dir) -> list[Path]:
    """Write cohorts, model cards, result tables and a JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (r, name), cohort in sorted(bundle.cohorts.items()):
        d = out / "cohorts" / f"r{r:02d}"
        d.mkdir(parents=True, exist_ok=True)
        save_cohort(cohort, d / f"{name}.csv")
        written.append(d / f"{name}.csv")
    for (r, name, kind), card in sorted(bundle.cards.items()):
        d = out / "models" / f"r{r:02d}"
        d.mkdir(parents=True, exist_ok=True)
        card.save(d / f"{name}__{kind}.json")
        written.append(d / f"{name}__{kind}.json")
    tables = out / "tables"
    tables.mkdir(exist_ok=True)
    for key in TABLES:
        write_table(bundle.tables[key], tables / f"{key}.csv")
        written.append(tables / f"{key}.csv")
    summary = {
        "seed": bundle.seed,
        "config": bundle.config,
        "meta": {str(r): m.to_dict() for r, m in sorted(bundle.meta.items())},
        "strata": {f"r{r:02d}/{name}": prov for (r, name), prov in sorted(bundle.weight_provenance.items())},
        "statistics": suite_statistics(bundle.tables),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    written.append(out / "summary.json")
    return written


def load_bundle_tables(bundle_dir) -> dict[str, list[dict]]:
    tables = Path(bundle_dir) / "tables"
    missing = [k for k in TABLES if not (tables / f"{k}.csv").is_file()]
    if missing:
        raise FileNotFoundError(f"incomplete bundle {bundle_dir}: missing tables {missing}")
    return {k: read_table(tables / f"{k}.csv") for k in TABLES}
