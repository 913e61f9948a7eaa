"""``cohortshift`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import CohortError, derive_horizon_outcomes, load_cohort, load_meta_summary, save_cohort, save_meta_summary
from .density import kl_divergence
from .evaluation import calibration, decision_curve
from .report import cmd_report as render_report
from .selection import ModelCard, load_registry, rank_models
from .simulator import CohortSpec, SpecError, simulate_cohort
from .suite import graded_shift_config, pooled_meta, scenario_suite, validate_config, write_bundle, write_table
from .survival import FitError, fit_cox, harrell_c, km_estimate
from .svg import line_chart
from .weights import (
    WeightError,
    concept_weights,
    covariate_weights,
    default_n_meta,
    joint_weights,
    simulate_meta_covariates,
    stratify,
)

logger = logging.getLogger("cohortshift")

ERROR_MODULES = (
    (CohortError, "cohort_model"),
    (FitError, "survival"),
    (WeightError, "shift_weights"),
    (SpecError, "simulator"),
    (FileNotFoundError, "io"),
    (ValueError, "input"),
)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Run record written once per output directory as ``manifest.json``."""

    def __init__(self, argv, args):
        self.argv = list(argv)
        self.config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        self.started = datetime.now(timezone.utc).isoformat()
        self.inputs: dict[str, str] = {}
        self.extra: dict = {}

    def add_input(self, path):
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = sha256(p)
        elif p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    self.inputs[str(f)] = sha256(f)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        outputs = {
            str(f.relative_to(out)): sha256(f)
            for f in sorted(out.rglob("*"))
            if f.is_file() and f.name != "manifest.json"
        }
        doc = {
            "tool": "cohortshift",
            "version": __version__,
            "command": self.argv,
            "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in self.config.items()},
            "seed": self.config.get("seed"),
            "inputs": self.inputs,
            "outputs": outputs,
            **self.extra,
            "started_at": self.started,
            "finished_at": datetime.now(timezone.utc).isoformat(),
        }
        path = out / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, default=str) + "\n", encoding="utf-8")
        return path


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in r.values()])
    return buf.getvalue()


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bandwidth(value):
    return "auto" if value in (None, "auto") else float(value)


def _load_config(path):
    if path is None:
        return graded_shift_config()
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, manifest):
    cfg = validate_config(_load_config(args.config))
    if args.config:
        manifest.add_input(args.config)
    out = _out_dir(args)
    if out is None:
        raise ValueError("simulate needs --out")
    specs = [CohortSpec.from_dict(c) for c in cfg["cohorts"]]
    cohorts, truths = [], []
    for spec in specs:
        cohort, truth = simulate_cohort(spec, args.seed, args.horizon)
        save_cohort(cohort, out / f"{spec.name}.csv")
        rows = [
            {"id": i, "true_risk": float(r), "density": float(d), "hidden": int(h)}
            for i, r, d, h in zip(cohort.ids, truth.risk, truth.density, truth.hidden)
        ]
        (out / "truth").mkdir(exist_ok=True)
        write_table(rows, out / "truth" / f"{spec.name}.csv")
        cohorts.append(cohort)
        truths.append(truth)
    save_meta_summary(pooled_meta(cohorts, truths), out / "meta.json")
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    manifest.write(out)


def _kl_matrix(directory: Path, horizon: float, bandwidth):
    paths = sorted(p for p in directory.glob("*.csv"))
    if len(paths) < 2:
        raise ValueError(f"need at least two cohort CSVs in {directory}")
    loaded = [(c, derive_horizon_outcomes(c, horizon)) for c in (load_cohort(p) for p in paths)]
    names = [c.name for c, _ in loaded]
    lines = [",".join(["source", *names])]
    for a in loaded:
        vals = [repr(kl_divergence(a, b, bandwidth).value) for b in loaded]
        lines.append(",".join([a[0].name, *vals]))
    return "\n".join(lines) + "\n"


def cmd_kl(args, manifest):
    out = _out_dir(args)
    bw = _bandwidth(args.bandwidth)
    if args.matrix:
        text = _kl_matrix(Path(args.matrix), args.horizon, bw)
        manifest.add_input(args.matrix)
        sys.stdout.write(text)
        if out:
            (out / "kl_matrix.csv").write_text(text, encoding="utf-8")
    else:
        if not (args.a and args.b):
            raise ValueError("kl needs --a and --b, or --matrix")
        a, b = load_cohort(args.a), load_cohort(args.b)
        manifest.add_input(args.a)
        manifest.add_input(args.b)
        report = kl_divergence((a, derive_horizon_outcomes(a, args.horizon)), (b, derive_horizon_outcomes(b, args.horizon)), bw)
        _emit(report.to_dict())
        if out:
            (out / "kl.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    if out:
        manifest.write(out)


def compute_weights(cohort, meta, weighting: str, strata: int, seed: int, horizon: float, bandwidth="auto", n_meta=None):
    """Weights for ``cohort`` plus the unweighted stratifying model."""
    base = fit_cox(cohort)
    if weighting == "none":
        return None, base
    if meta is None:
        raise WeightError(f"weighting {weighting!r} needs --meta")
    if weighting in ("concept", "joint"):
        risks = base.predict_risk(cohort.X, horizon)
        cw = concept_weights(risks, stratify(risks, strata), meta)
        if weighting == "concept":
            return cw, base
    sample, prov = simulate_meta_covariates(
        meta, np.cov(cohort.X, rowvar=False), n_meta or default_n_meta(cohort.n), seed, cohort.covariate_names
    )
    cov_w = covariate_weights(cohort.X, sample, bandwidth)
    cov_w.provenance["meta_sample"] = prov
    if weighting == "covariate":
        return cov_w, base
    return joint_weights(cw, cov_w), base


def cmd_weights(args, manifest):
    cohort = load_cohort(args.cohort)
    meta = load_meta_summary(args.meta) if args.meta else None
    manifest.add_input(args.cohort)
    if args.meta:
        manifest.add_input(args.meta)
    ws, _ = compute_weights(cohort, meta, args.weighting, args.strata, args.seed, args.horizon, _bandwidth(args.bandwidth), args.n_meta)
    rows = [{"id": i, "weight": float(w)} for i, w in zip(cohort.ids, ws.values)]
    out = _out_dir(args)
    if out is None:
        sys.stdout.write(_rows_csv(rows))
        return
    write_table(rows, out / "weights.csv")
    prov = {"kind": ws.kind, "n": len(ws), **ws.provenance}
    (out / "provenance.json").write_text(json.dumps(prov, indent=2) + "\n", encoding="utf-8")
    manifest.write(out)


def train_card(cohort, meta, weighting, strata, seed, horizon, bandwidth="auto", n_meta=None) -> ModelCard:
    ws, base = compute_weights(cohort, meta, weighting, strata, seed, horizon, bandwidth, n_meta)
    model = base if ws is None else fit_cox(cohort, ws)
    km = km_estimate(cohort, horizon)[1]
    return ModelCard(model, cohort.name, km, cohort.n, weighting, horizon)


def cmd_train(args, manifest):
    cohort = load_cohort(args.cohort)
    meta = load_meta_summary(args.meta) if args.meta else None
    manifest.add_input(args.cohort)
    if args.meta:
        manifest.add_input(args.meta)
    card = train_card(cohort, meta, args.weighting, args.strata, args.seed, args.horizon, _bandwidth(args.bandwidth), args.n_meta)
    out = _out_dir(args)
    if out is None:
        _emit(card.to_dict())
        return
    card.save(out / f"{cohort.name}__{args.weighting}.json")
    manifest.write(out)


def _card_and_sample(args):
    card = ModelCard.load(args.model)
    cohort = load_cohort(args.cohort)
    sample = derive_horizon_outcomes(cohort, args.horizon)
    cols = cohort.column_index(card.model.covariate_names)
    return card, cohort, sample, cols


def cmd_evaluate(args, manifest):
    card, cohort, sample, cols = _card_and_sample(args)
    manifest.add_input(args.model)
    manifest.add_input(args.cohort)
    preds = card.model.predict_risk(sample.X[:, cols], args.horizon)
    cal = calibration(preds, sample.y)
    conc = harrell_c(card.model.predict_risk(cohort.X[:, cols], args.horizon), cohort)
    metrics = {"ici": cal.ici, "c_index": conc.c_index, "n": sample.n, "excluded": sample.excluded_count}
    _emit(metrics)
    if args.curves:
        curves = Path(args.curves)
        curves.mkdir(parents=True, exist_ok=True)
        write_table([{"predicted": float(p), "observed": float(o)} for p, o in cal.curve], curves / "calibration.csv")
        nb = decision_curve(preds, sample.y)
        write_table(
            [{"threshold": t, "nb_model": m, "nb_treat_all": a, "nb_treat_none": z} for t, m, a, z in nb.rows()],
            curves / "dca.csv",
        )
        (curves / "calibration.svg").write_text(
            line_chart(
                f"Calibration on {cohort.name}",
                {"smoothed": (list(cal.curve[:, 0]), list(cal.curve[:, 1]))},
                "predicted risk",
                "observed risk",
                xlim=(0, 1),
                ylim=(0, 1),
                diagonal=True,
            ),
            encoding="utf-8",
        )
        (curves / "dca.svg").write_text(_dca_svg(nb, cohort.name), encoding="utf-8")
        (curves / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")
        manifest.write(curves)


def _dca_svg(nb, name):
    t = list(nb.thresholds)
    top = max(float(np.max(nb.nb_model)), float(np.max(nb.nb_treat_all)), 0.05) * 1.1
    return line_chart(
        f"Decision curve on {name}",
        {"model": (t, list(nb.nb_model)), "treat all": (t, list(nb.nb_treat_all)), "treat none": (t, list(nb.nb_treat_none))},
        "threshold probability",
        "net benefit",
        xlim=(0, 1),
        ylim=(-0.1, top),
    )


def cmd_dca(args, manifest):
    card, cohort, sample, cols = _card_and_sample(args)
    manifest.add_input(args.model)
    manifest.add_input(args.cohort)
    preds = card.model.predict_risk(sample.X[:, cols], args.horizon)
    nb = decision_curve(preds, sample.y, emphasis=tuple(args.emphasis))
    rows = [{"threshold": t, "nb_model": m, "nb_treat_all": a, "nb_treat_none": z} for t, m, a, z in nb.rows()]
    summary = {
        "prevalence": nb.prevalence,
        "max_net_benefit": nb.max_net_benefit,
        "winning_range": [list(r) for r in nb.winning_range],
        "emphasis": list(nb.emphasis),
        "n": sample.n,
        "excluded": sample.excluded_count,
    }
    out = _out_dir(args)
    if out is None:
        sys.stdout.write(_rows_csv(rows))
        return
    write_table(rows, out / "dca.csv")
    (out / "dca.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    (out / "dca.svg").write_text(_dca_svg(nb, cohort.name), encoding="utf-8")
    manifest.write(out)


def cmd_select(args, manifest):
    cards = load_registry(args.registry)
    target = load_cohort(args.target)
    manifest.add_input(args.registry)
    manifest.add_input(args.target)
    ranking = rank_models(cards, target, args.horizon, audit=args.audit)
    rows = ranking.rows()
    doc = {"target": ranking.target_name, "km_target": ranking.target_km, "horizon": ranking.horizon, "ranking": rows}
    sys.stdout.write(_rows_csv(rows))
    _emit(doc)
    out = _out_dir(args)
    if out:
        (out / "ranking.csv").write_text(_rows_csv(rows), encoding="utf-8")
        (out / "ranking.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        manifest.write(out)


def cmd_suite(args, manifest):
    cfg = _load_config(args.config)
    if args.config:
        manifest.add_input(args.config)
    if args.replicates is not None:
        cfg["replicates"] = args.replicates
    cfg.setdefault("horizon", args.horizon)
    out = _out_dir(args)
    if out is None:
        raise ValueError("suite needs --out")
    bundle = scenario_suite(cfg, seed=args.seed, workers=args.workers)
    write_bundle(bundle, out)
    manifest.write(out)


def cmd_report(args, manifest):
    out = _out_dir(args)
    if out is None:
        raise ValueError("report needs --out")
    manifest.add_input(Path(args.bundle) / "tables")
    render_report(args.bundle, out)
    manifest.write(out)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--horizon", type=float, default=60.0, help="outcome horizon in months")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cohortshift", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic cohorts")
    p.add_argument("--config", help="experiment config JSON (default: graded-shift suite)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("kl", parents=[common], help="KL divergence between cohorts")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--matrix", help="directory of cohort CSVs")
    p.add_argument("--bandwidth", default="auto")
    p.set_defaults(func=cmd_kl)

    weight_kinds = ["none", "concept", "covariate", "joint"]
    for name, func, kinds, default in (
        ("weights", cmd_weights, weight_kinds[1:], "concept"),
        ("train", cmd_train, weight_kinds, "none"),
    ):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--cohort", required=True)
        p.add_argument("--meta")
        p.add_argument("--weighting", choices=kinds, default=default)
        p.add_argument("--strata", type=int, default=8)
        p.add_argument("--bandwidth", default="auto")
        p.add_argument("--n-meta", type=int, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", parents=[common], help="ICI and C-index of a model card on a cohort")
    p.add_argument("--model", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--curves", help="directory for calibration/DCA CSVs and SVGs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dca", parents=[common], help="decision curve of a model card on a cohort")
    p.add_argument("--model", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--emphasis", type=float, nargs=2, default=[0.10, 0.70])
    p.set_defaults(func=cmd_dca)

    p = sub.add_parser("select", parents=[common], help="rank registry models for a target cohort")
    p.add_argument("--registry", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--audit", action="store_true")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("suite", parents=[common], help="run the pairwise experiment grid")
    p.add_argument("--config")
    p.add_argument("--replicates", type=int, default=None)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("report", parents=[common], help="render figures from a suite bundle")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    manifest = Manifest(["cohortshift", *argv], args)
    try:
        args.func(args, manifest)
    except Exception as exc:  # noqa: BLE001 - mapped to a structured message and exit code
        module = next((m for cls, m in ERROR_MODULES if isinstance(exc, cls)), "internal")
        sys.stderr.write(f"error [{module}] {args.command}: {exc}\n")
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
