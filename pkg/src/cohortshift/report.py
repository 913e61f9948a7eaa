"""Render a suite bundle into per-figure CSV tables and SVG plots.

Bars average over replicates; curve plots use replicate 0.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .suite import load_bundle_tables, write_table
from .svg import bar_chart, line_chart, scatter


def _mean_by(rows, keys, value):
    acc = defaultdict(list)
    order = []
    for row in rows:
        k = tuple(row[c] for c in keys)
        if k not in acc:
            order.append(k)
        acc[k].append(row[value])
    return order, {k: float(np.mean(v)) for k, v in acc.items()}


def _write(path: Path, text: str, written: list):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    written.append(path)


def cmd_report(bundle_dir, out_dir) -> list[Path]:
    """Write report figures for the bundle in ``bundle_dir`` to ``out_dir``."""
    tables = load_bundle_tables(bundle_dir)
    empty = [k for k, rows in tables.items() if not rows]
    if empty:
        raise ValueError(f"incomplete bundle {bundle_dir}: empty tables {empty}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    # KL vs ICI, one panel per training cohort
    order, kl = _mean_by(tables["kl_ici"], ("train", "test"), "kl")
    _, ici = _mean_by(tables["kl_ici"], ("train", "test"), "ici")
    scatter_rows = [{"kl": kl[k], "ici": ici[k], "train": k[0], "test": k[1]} for k in order]
    write_table(scatter_rows, out / "kl_ici_scatter.csv")
    written.append(out / "kl_ici_scatter.csv")
    trains = list(dict.fromkeys(k[0] for k in order))
    for train in trains:
        tests = [k[1] for k in order if k[0] == train]
        svg = bar_chart(
            f"Trained on {train}",
            tests,
            {"KL": [kl[(train, t)] for t in tests], "ICI": [ici[(train, t)] for t in tests]},
            xlabel="test cohort",
        )
        _write(out / "kl_ici" / f"{train}.svg", svg, written)
    _write(
        out / "kl_ici_scatter.svg",
        scatter("KL divergence vs ICI", [r["kl"] for r in scatter_rows], [r["ici"] for r in scatter_rows], "KL", "ICI"),
        written,
    )

    # ICI and C-index by weighting strategy
    w_order, w_ici = _mean_by(tables["weighting"], ("train", "weighting"), "mean_ici")
    _, w_c = _mean_by(tables["weighting"], ("train", "weighting"), "mean_c_index")
    kinds = list(dict.fromkeys(k[1] for k in w_order))
    wtrains = list(dict.fromkeys(k[0] for k in w_order))
    rows = [{"train": k[0], "weighting": k[1], "mean_ici": w_ici[k], "mean_c_index": w_c[k]} for k in w_order]
    write_table(rows, out / "weighting.csv")
    written.append(out / "weighting.csv")
    _write(
        out / "ici_by_weighting.svg",
        bar_chart("Average external ICI", wtrains, {k: [w_ici[(t, k)] for t in wtrains] for k in kinds}, "ICI", "training cohort"),
        written,
    )
    _write(
        out / "cindex_by_weighting.svg",
        bar_chart("Average external C-index", wtrains, {k: [w_c[(t, k)] for t in wtrains] for k in kinds}, "C-index", "training cohort"),
        written,
    )

    # distance vs ICI, one panel per target
    s_order, dist = _mean_by(tables["selection"], ("target", "train"), "distance")
    _, s_ici = _mean_by(tables["selection"], ("target", "train"), "ici")
    rows = [{"distance": dist[k], "ici": s_ici[k], "target": k[0], "train": k[1]} for k in s_order]
    write_table(rows, out / "distance_ici.csv")
    written.append(out / "distance_ici.csv")
    for target in dict.fromkeys(k[0] for k in s_order):
        trs = [k[1] for k in s_order if k[0] == target]
        svg = bar_chart(
            f"Tested on {target}",
            trs,
            {"distance": [dist[(target, t)] for t in trs], "ICI": [s_ici[(target, t)] for t in trs]},
            xlabel="training cohort",
        )
        _write(out / "distance_ici" / f"{target}.svg", svg, written)

    # decision and calibration curves, replicate 0
    first = min(r["replicate"] for r in tables["dca_curves"])
    dca = defaultdict(list)
    for r in tables["dca_curves"]:
        if r["replicate"] == first:
            dca[(r["train"], r["test"])].append(r)
    for (train, test), rs in dca.items():
        t = [r["threshold"] for r in rs]
        svg = line_chart(
            f"{train} model on {test}",
            {
                "model": (t, [r["nb_model"] for r in rs]),
                "treat all": (t, [r["nb_treat_all"] for r in rs]),
                "treat none": (t, [r["nb_treat_none"] for r in rs]),
            },
            "threshold probability",
            "net benefit",
            xlim=(0.0, 1.0),
            ylim=(-0.1, max(max(r["nb_model"] for r in rs), max(r["nb_treat_all"] for r in rs), 0.05) * 1.1),
        )
        _write(out / "dca" / f"{train}__on__{test}.svg", svg, written)
    cal = defaultdict(list)
    for r in tables["calibration_curves"]:
        if r["replicate"] == first:
            cal[(r["train"], r["test"])].append(r)
    for (train, test), rs in cal.items():
        svg = line_chart(
            f"Calibration: {train} model on {test}",
            {"smoothed": ([r["predicted"] for r in rs], [r["observed"] for r in rs])},
            "predicted risk",
            "observed risk",
            xlim=(0.0, 1.0),
            ylim=(0.0, 1.0),
            diagonal=True,
        )
        _write(out / "calibration" / f"{train}__on__{test}.svg", svg, written)
    return written
