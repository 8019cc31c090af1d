"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline``.

Every stage writes its reports into the output directory together with a
``manifest.json`` recording the config snapshot, seeds, package versions,
input digests, timings and output digests.  Report digests never include
timings, so two runs with the same config and inputs have equal digests.

Exit codes: 0 success, 1 internal error, 2 bad input or config.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from datetime import date
from pathlib import Path

import numpy as np

from dealscope import __version__
from dealscope.config import Config, ConfigError

log = logging.getLogger("dealscope")

SOURCE_FILES = ("deals.csv", "companies.csv", "financials.csv", "officers.csv")
EXIT_OK, EXIT_INTERNAL, EXIT_BAD_INPUT = 0, 1, 2


class StageError(Exception):
    """A stage failed; ``code`` is the exit status to report."""

    def __init__(self, stage: str, message: str, code: int = EXIT_BAD_INPUT):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.code = code


# -- manifest ---------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {"dealscope": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": sys.version.split()[0]}


class Run:
    """Collects what one stage read and wrote."""

    def __init__(self, stage: str, cfg: Config, out: Path):
        self.stage = stage
        self.cfg = cfg
        self.out = out
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.seeds: dict[str, int] = {"root": cfg.get("seed")}
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    def need(self, path, what: str) -> Path:
        p = Path(path)
        if not p.is_file():
            raise StageError(self.stage, f"missing input file {what}: {p}")
        self.inputs[str(p)] = sha256_file(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        self.outputs.append(path)
        return path

    def write_json(self, name: str, payload) -> Path:
        return self.write_text(name, json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def wrote(self, path) -> Path:
        path = Path(path)
        self.outputs.append(path)
        return path

    def manifest(self, status: str = "ok", error: str | None = None) -> dict:
        digests = {str(p.relative_to(self.out)): sha256_file(p) for p in sorted(set(self.outputs))
                   if p.is_file() and p.suffix != ".png"}
        combined = hashlib.sha256(json.dumps(digests, sort_keys=True).encode()).hexdigest()
        payload = {
            "stage": self.stage,
            "status": status,
            "config": self.cfg.snapshot(),
            "config_source": self.cfg.source,
            "seeds": self.seeds,
            "versions": _versions(),
            "inputs": self.inputs,
            "outputs": sorted(str(p.relative_to(self.out)) for p in set(self.outputs)),
            "report_digests": digests,
            "report_digest": combined,
            "timings": {k: round(v, 3) for k, v in self.timings.items()},
            **self.extra,
        }
        if error:
            payload["error"] = error
        return payload

    def finish(self, status: str = "ok", error: str | None = None) -> dict:
        payload = self.manifest(status, error)
        (self.out / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True,
                                                           default=_jsonable) + "\n", encoding="utf-8")
        return payload


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (date, Path)):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


class _Timer:
    def __init__(self, run: Run, key: str):
        self.run, self.key = run, key

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        self.run.timings[self.key] = time.perf_counter() - self.start


# -- stages ---------------------------------------------------------------------------

def stage_synth(cfg: Config, out: Path) -> dict:
    from dealscope.seeding import derive_seed
    from dealscope.synth import GeneratorConfig

    run = Run("synth", cfg, out)
    settings = dict(cfg.get("synth"))
    settings.setdefault("seed", derive_seed(cfg.get("seed"), "synth") % (2**31))
    try:
        gen = GeneratorConfig.from_dict(settings)
        gen.validate()
    except (TypeError, ValueError) as exc:
        raise StageError("synth", f"invalid synth config: {exc}") from None
    from dealscope.synth import generate

    run.seeds["synth"] = gen.seed
    with _Timer(run, "generate"):
        paths, truth = generate(gen, out)
    for p in paths.values():
        run.wrote(p)
    run.extra["calibration"] = truth.calibration
    run.finish()
    return {"paths": paths, "truth": truth}


def _data_dir(run: Run) -> Path:
    d = run.cfg.get("data.dir")
    if not d:
        raise StageError(run.stage, "no input directory; pass --data or set data.dir")
    d = Path(d)
    for name in SOURCE_FILES:
        run.need(d / name, name)
    return d


def _load_store(run: Run):
    from dealscope import ingest

    d = _data_dir(run)
    store = ingest.load_directory(d)
    if store.errors:
        ingest.write_error_log(store.errors, run.out / "rejected_rows.jsonl")
        run.wrote(run.out / "rejected_rows.jsonl")
    store = ingest.remove_institutional_officers(store)
    store, dropped = ingest.collapse_holding_duplicates(store)
    run.extra["ingest"] = {**store.counts(), "holding_duplicates_dropped": len(dropped)}
    return d, store


def write_matches(path, results) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["deal_name", "company_id", "ratio", "tier", "city_agreed", "reason"])
        for m in results:
            out.writerow([m.deal_name, m.company_id or "", f"{m.ratio:.6f}", m.tier.value,
                          int(m.city_agreed), m.reason])


def read_matches(path):
    from dealscope.linkage import MatchResult, MatchTier

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"deal_name", "company_id", "ratio", "tier"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            out.append(MatchResult(row["deal_name"], row["company_id"] or None, float(row["ratio"]),
                                   MatchTier(row["tier"]), row.get("city_agreed") == "1",
                                   row.get("reason", "")))
    return out


def stage_link(cfg: Config, out: Path) -> dict:
    from dealscope.linkage import match_deals

    run = Run("link", cfg, out)
    with _Timer(run, "load"):
        data_dir, store = _load_store(run)
    with _Timer(run, "match"):
        results, funnel = match_deals(store.deals, store.companies.values(),
                                      hi=cfg.get("linkage.hi"), lo=cfg.get("linkage.lo"))
    write_matches(run.wrote(out / "matches.csv"), results)
    run.write_json("funnel.json", funnel.to_dict())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["filtering", "observations", "percentage"])
    for r in funnel.rows():
        w.writerow([r["filtering"], r["observations"], "" if r["percentage"] is None else r["percentage"]])
    run.write_text("funnel.csv", buf.getvalue())
    truth_path = data_dir / "ground_truth.json"
    if truth_path.is_file():
        from dealscope.synth import GroundTruth, verify_against_truth

        truth = GroundTruth.load(run.need(truth_path, "ground_truth.json"))
        from dealscope import ingest

        names = [d.deal_name for d in ingest.load_directory(data_dir).deals]
        report = verify_against_truth(results, names, truth, store=store)
        run.write_json("linkage_truth.json", report.to_dict())
    run.finish()
    return {"results": results, "funnel": funnel, "store": store}


def _iso(value, key: str):
    if value in (None, "", "auto"):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"config key {key!r} must be an ISO date, got {value!r}") from None


def stage_features(cfg: Config, out: Path, store=None, results=None) -> dict:
    from dealscope.features import ImputationPolicy, assemble_dataset, describe_columns, latest_period_end

    run = Run("features", cfg, out)
    if store is None:
        _, store = _load_store(run)
    if results is None:
        path = cfg.get("inputs.matches") or out / "matches.csv"
        results = read_matches(run.need(path, "matches"))
    snapshot = _iso(cfg.get("features.snapshot_date"), "features.snapshot_date") or latest_period_end(store)
    window = _iso(cfg.get("features.window_start"), "features.window_start")
    if window == "auto":
        window = date.fromordinal(snapshot.toordinal() + 1)
    policy = ImputationPolicy(cfg.get("features.imputation"), cfg.get("features.missing_indicators"))
    with _Timer(run, "assemble"):
        data, imputer, report = assemble_dataset(store, results, policy, snapshot, window,
                                                 cfg.get("features.trim_fraction"))
    data.to_csv(run.wrote(out / "dataset.csv"))
    run.write_json("dataset.json", {
        "columns": describe_columns(),
        "imputation": imputer.to_dict(),
        "snapshot_date": snapshot.isoformat(),
        "window_start": window.isoformat() if window else None,
        "rows": data.n_rows,
        "positives": data.n_positive,
        "matched_records": report.matched_records,
        "dropped_records": report.dropped,
        "excluded_companies": report.excluded_companies,
    })
    run.finish()
    return {"dataset": data, "imputer": imputer, "report": report}


def _dataset(run: Run, data):
    from dealscope.dataset import Dataset

    if data is not None:
        return data
    path = run.cfg.get("inputs.dataset") or run.out / "dataset.csv"
    try:
        return Dataset.from_csv(run.need(path, "dataset"))
    except ValueError as exc:
        raise StageError(run.stage, f"unreadable dataset {path}: {exc}") from None


def stage_train(cfg: Config, out: Path, data=None) -> dict:
    from dealscope.evaluation import metrics, stratified_holdout
    from dealscope.features import Imputer, ImputationPolicy
    from dealscope.explain import default_background
    from dealscope.models import ModelSpec, export_tree, fit
    from dealscope.sampling import SamplerSpec, apply_sampler
    from dealscope.seeding import derive_seed

    run = Run("train", cfg, out)
    data = _dataset(run, data)
    kind = str(cfg.get("train.model")).upper()
    sampler = cfg.get("sampling.kind")
    feature_set = cfg.get("train.features")
    seed = cfg.get("seed")
    subset = data.select(feature_set)
    rest, holdout = stratified_holdout(subset.y, cfg.get("evaluation.holdout_fraction"),
                                       derive_seed(seed, "holdout"))
    policy = ImputationPolicy(cfg.get("features.imputation"), cfg.get("features.missing_indicators"))
    train_raw = subset.take(rest)
    imputer = Imputer.fit(train_raw, policy)
    train = imputer.transform(train_raw)
    real_rows = train.X
    labels = (kind, sampler, feature_set, "refit")
    if sampler != "none":
        spec = SamplerSpec(sampler, cfg.get("sampling.k_neighbors"), cfg.get("sampling.target_ratio"),
                           derive_seed(seed, "sampler", *labels), cfg.get("sampling.standardize"))
        run.seeds["sampler"] = spec.seed
        train = apply_sampler(train, spec)
    mspec = ModelSpec(kind, dict(cfg.get("models").get(kind, {})), derive_seed(seed, "model", *labels))
    run.seeds["model"] = mspec.seed
    with _Timer(run, "fit"):
        artifact = fit(mspec, train, threads=cfg.get("threads"))
    artifact.save(run.wrote(out / "model.json"))
    held = imputer.transform(subset.take(holdout))
    held.to_csv(run.wrote(out / "holdout.csv"))
    bg_seed = derive_seed(seed, "background")
    run.seeds["background"] = bg_seed
    bg = default_background(real_rows, bg_seed, cfg.get("explain.background_rows"))
    _write_matrix(run.wrote(out / "background.csv"), bg, train.feature_names)
    run.write_json("imputer.json", imputer.to_dict())
    row = metrics(artifact.predict_proba(held.X), held.y, cfg.get("evaluation.threshold"))
    run.write_json("holdout_metrics.json", row.values())
    if artifact.lr_fit is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "coefficient", "standard_error", "t_statistic", "p_value"])
        for r in artifact.lr_fit.rows():
            w.writerow([r["feature"], *(f"{r[k]:.6g}" for k in ("coefficient", "standard_error",
                                                                  "t_statistic", "p_value"))])
        run.write_text("lr_coefficients.csv", buf.getvalue())
    if kind in ("DT", "RF", "XGB"):
        run.write_text("tree0.dot", export_tree(artifact, 0))
    run.finish()
    return {"artifact": artifact, "holdout": held, "background": bg}


def _write_matrix(path, X, names) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names))
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def _read_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        rows = [[float(v) for v in rec] for rec in reader]
    return names, np.array(rows, dtype=float).reshape(len(rows), len(names))


def _grid_config(cfg: Config):
    from dealscope.evaluation import GridConfig

    ev = cfg.get("evaluation")
    hyper = {k.upper(): v for k, v in cfg.get("models").items()}
    return GridConfig(models=list(ev["models"]), samplers=list(ev["samplers"]),
                      feature_sets=list(ev["feature_sets"]), k=ev["k"],
                      holdout_fraction=ev["holdout_fraction"], threshold=ev["threshold"],
                      cross_validate=ev["cross_validate"], k_neighbors=cfg.get("sampling.k_neighbors"),
                      target_ratio=cfg.get("sampling.target_ratio"),
                      imputation=cfg.get("features.imputation"),
                      missing_indicators=cfg.get("features.missing_indicators"),
                      hyperparameters=hyper)


def stage_evaluate(cfg: Config, out: Path, data=None) -> dict:
    from dealscope import evaluation as ev
    from dealscope.seeding import derive_seed

    run = Run("evaluate", cfg, out)
    data = _dataset(run, data)
    grid_cfg = _grid_config(cfg)
    seed = cfg.get("seed")
    repeats = cfg.get("evaluation.repeats")
    grids = []

    def progress(cell):
        log.info("%s/%s/%s %s in %.1fs", cell.model, cell.sampler, cell.features, cell.status, cell.seconds)

    with _Timer(run, "grid"):
        for r in range(repeats):
            s = seed if r == 0 else derive_seed(seed, "repeat", r) % (2**31)
            run.seeds[f"repeat{r}"] = s
            grids.append(ev.run_protocol(data, grid_cfg, seed=s, threads=cfg.get("threads"),
                                         progress=progress))
    grid = grids[0]
    run.write_text("cells.csv", ev.cells_csv(grid))
    run.write_text("holdout_table.csv", ev.holdout_table(grid))
    run.write_text("model_sampler.csv", ev.model_sampler_table(grid))
    run.write_text("features_sampler.csv", ev.features_sampler_table(grid))
    run.write_json("grid.json", grid.manifest(timings=False))
    if repeats > 1:
        run.write_text("repeats.csv", ev.repeats_csv(grids))
    run.extra["cell_seconds"] = {"/".join(c.key): round(c.seconds, 3) for c in grid.cells}
    if cfg.get("report.figures") and "all" in grid_cfg.feature_sets:
        from dealscope import plotting

        plotting.f1_heatmap(grid, run.wrote(out / "f1_heatmap.png"))
    failed = [c for c in grid.cells if c.status != "ok"]
    run.finish("partial" if failed else "ok")
    return {"grid": grid, "grids": grids}


def stage_explain(cfg: Config, out: Path, artifact=None, holdout=None, background=None) -> dict:
    from dealscope import explain as ex
    from dealscope.dataset import Dataset
    from dealscope.models import ModelArtifact

    run = Run("explain", cfg, out)
    if artifact is None:
        path = cfg.get("inputs.artifact") or out / "model.json"
        try:
            artifact = ModelArtifact.load(run.need(path, "model artifact"))
        except (KeyError, ValueError) as exc:
            raise StageError("explain", f"unreadable model artifact {path}: {exc}") from None
    if holdout is None:
        path = cfg.get("inputs.holdout") or out / "holdout.csv"
        holdout = Dataset.from_csv(run.need(path, "hold-out data"))
    if list(holdout.feature_names) != list(artifact.feature_names):
        raise StageError("explain", "hold-out columns do not match the model's feature schema")
    perturbation = cfg.get("explain.perturbation")
    if perturbation == "interventional" and background is None:
        path = cfg.get("inputs.background") or out / "background.csv"
        names, background = _read_matrix(run.need(path, "background"))
        if names != list(artifact.feature_names):
            raise StageError("explain", "background columns do not match the model's feature schema")
    if artifact.kind not in ("DT", "RF", "XGB"):
        raise StageError("explain", f"tree attributions need a DT, RF or XGB model, not {artifact.kind}")
    X = holdout.X
    with _Timer(run, "shap"):
        shap = ex.shap_tree(artifact, X, perturbation=perturbation, background=background,
                            instances=list(holdout.ids))
    ranking = ex.global_importance(shap)
    run.write_text("importance.json", ex.importance_json(ranking) + "\n")
    ex.write_phi_csv(run.wrote(out / "phi.csv"), shap, holdout.ids)
    partner = None
    inter = None
    if cfg.get("explain.interactions"):
        rows = min(len(X), cfg.get("explain.interaction_rows"))
        with _Timer(run, "interactions"):
            inter = ex.shap_interactions(artifact, X[:rows])
        partner = ex.interaction_partner(inter)
        ex.write_interactions_csv(run.wrote(out / "interactions.csv"), inter, holdout.ids[:rows])
    ex.write_dependence_csv(run.wrote(out / "dependence.csv"), X, shap, partner)
    residual = np.abs(shap.base_value + shap.phi.sum(axis=1) - artifact.raw_score(X))
    run.extra["local_accuracy_max_error"] = float(residual.max()) if len(residual) else 0.0
    if cfg.get("report.figures"):
        from dealscope import plotting

        plotting.importance_bar(ranking, run.wrote(out / "importance.png"))
        names = list(artifact.feature_names)
        for r in ranking[:3]:
            j = names.index(r.feature)
            pv = pn = None
            if partner is not None:
                pv, pn = X[:, partner[j]], names[partner[j]]
            plotting.dependence_scatter(X[:, j], shap.phi[:, j], r.feature,
                                        run.wrote(out / f"dependence_{r.feature}.png"), pv, pn)
    run.finish()
    return {"shap": shap, "ranking": ranking, "interactions": inter}


def stage_stats(cfg: Config, out: Path, store=None, data=None) -> dict:
    from dealscope.evaluation import descriptive_stats, stats_csv

    run = Run("stats", cfg, out)
    if store is None:
        _, store = _load_store(run)
    run.write_text("stats_registry.csv", stats_csv(descriptive_stats(store)))
    values = [d.deal_value.amount for d in store.deals if d.deal_value.amount is not None]
    from dealscope.evaluation import summarize

    deal = summarize("deal_value", values)
    undisclosed = sum(1 for d in store.deals if d.deal_value.amount is None)
    run.write_json("deal_values.json", {"summary": deal.__dict__, "undisclosed": undisclosed,
                                        "deals": len(store.deals)})
    if cfg.get("stats.dataset"):
        if data is None:
            path = cfg.get("inputs.dataset") or out / "dataset.csv"
            if Path(path).is_file():
                data = _dataset(run, None)
        if data is not None:
            run.write_text("stats_dataset.csv", stats_csv(descriptive_stats(data)))
    run.finish()
    return {}


def stage_pipeline(cfg: Config, out: Path) -> dict:
    """synth (when no input directory is configured) -> link -> features -> stats -> evaluate -> train -> explain."""
    out.mkdir(parents=True, exist_ok=True)
    stages = []
    if not cfg.get("data.dir"):
        stage_synth(cfg, out / "data")
        cfg.set("data.dir", str(out / "data"))
        stages.append("synth")
    link = stage_link(cfg, out / "link")
    stages.append("link")
    feats = stage_features(cfg, out / "features", store=link["store"], results=link["results"])
    stages.append("features")
    stage_stats(cfg, out / "stats", store=link["store"], data=feats["dataset"])
    stages.append("stats")
    stage_evaluate(cfg, out / "evaluate", data=feats["dataset"])
    stages.append("evaluate")
    trained = stage_train(cfg, out / "train", data=feats["dataset"])
    stages.append("train")
    if trained["artifact"].kind in ("DT", "RF", "XGB"):
        stage_explain(cfg, out / "explain", trained["artifact"], trained["holdout"], trained["background"])
        stages.append("explain")
    digests = {}
    for stage in stages:
        sub = "data" if stage == "synth" else stage
        with open(out / sub / "manifest.json", encoding="utf-8") as fh:
            digests[stage] = json.load(fh)["report_digest"]
    summary = {"stages": stages, "report_digests": digests,
               "report_digest": hashlib.sha256(json.dumps(digests, sort_keys=True).encode()).hexdigest(),
               "config": cfg.snapshot(), "versions": _versions()}
    (out / "manifest.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


STAGES = {
    "synth": stage_synth,
    "link": stage_link,
    "features": stage_features,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "explain": stage_explain,
    "stats": stage_stats,
    "pipeline": stage_pipeline,
}


# -- argument parsing -----------------------------------------------------------------

def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS,
                   help="YAML config file (default: $DEALSCOPE_CONFIG)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed [seed]")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads [threads]")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory [out]")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


# flag dest -> config key
FLAG_KEYS = {
    "seed": "seed", "threads": "threads", "out": "out",
    "data": "data.dir",
    "n_companies": "synth.n_companies", "positive_rate": "synth.positive_rate",
    "hi": "linkage.hi", "lo": "linkage.lo",
    "matches": "inputs.matches", "snapshot_date": "features.snapshot_date",
    "window_start": "features.window_start", "trim_fraction": "features.trim_fraction",
    "dataset": "inputs.dataset", "model_kind": "train.model", "sampler": "sampling.kind",
    "features": "train.features", "k_neighbors": "sampling.k_neighbors",
    "grid": "inputs.grid", "k": "evaluation.k", "repeats": "evaluation.repeats",
    "holdout_only": "evaluation.cross_validate",
    "model": "inputs.artifact", "holdout": "inputs.holdout", "background": "inputs.background",
    "perturbation": "explain.perturbation", "no_figures": "report.figures",
}


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="dealscope", parents=[common],
                                     description="Private-equity target screening pipeline.")
    parser.add_argument("--version", action="version", version=f"dealscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--n-companies", type=int)
    p.add_argument("--positive-rate", type=float)

    p = sub.add_parser("link", parents=[common], help="match deal names to registry companies")
    p.add_argument("--data", help="directory with the four source CSVs [data.dir]")
    p.add_argument("--hi", type=float)
    p.add_argument("--lo", type=float)

    p = sub.add_parser("features", parents=[common], help="assemble the company feature table")
    p.add_argument("--data")
    p.add_argument("--matches", help="matches CSV from the link stage [inputs.matches]")
    p.add_argument("--snapshot-date")
    p.add_argument("--window-start")
    p.add_argument("--trim-fraction", type=float)

    p = sub.add_parser("train", parents=[common], help="fit one model on the non-hold-out rows")
    p.add_argument("--dataset")
    p.add_argument("--model", dest="model_kind", type=str.upper)
    p.add_argument("--sampler", choices=["none", "undersample", "oversample", "smote"])
    p.add_argument("--features", choices=["financial", "director", "all"])
    p.add_argument("--k-neighbors", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="run the model x sampler x feature-set grid")
    p.add_argument("--dataset")
    p.add_argument("--grid", help="YAML file with an 'evaluation' subtree [inputs.grid]")
    p.add_argument("--k", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--holdout-only", action="store_true", default=None,
                   help="skip cross-validation [evaluation.cross_validate: false]")
    p.add_argument("--no-figures", action="store_true", default=None)

    p = sub.add_parser("explain", parents=[common], help="SHAP attributions for a tree model")
    p.add_argument("--model", help="model artifact JSON [inputs.artifact]")
    p.add_argument("--data", dest="holdout", help="imputed rows to explain [inputs.holdout]")
    p.add_argument("--background")
    p.add_argument("--perturbation", choices=["path", "interventional"])
    p.add_argument("--no-figures", action="store_true", default=None)

    p = sub.add_parser("stats", parents=[common], help="descriptive statistics")
    p.add_argument("--data")
    p.add_argument("--dataset")

    p = sub.add_parser("pipeline", parents=[common], help="run every stage")
    p.add_argument("--data")
    p.add_argument("--no-figures", action="store_true", default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    cfg = Config.load(getattr(args, "config", None))
    overrides = {}
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest == "holdout_only":
            value = not value
        elif dest == "no_figures":
            value = not value
        overrides[key] = value
    grid_file = overrides.pop("inputs.grid", None) or cfg.get("inputs.grid")
    if grid_file:
        grid = Config.load(grid_file)
        cfg.tree["evaluation"] = grid.tree["evaluation"]
        cfg.tree["inputs"]["grid"] = str(grid_file)
    cfg.override(overrides)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"dealscope {stage}: config error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        print(f"dealscope {stage}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    out = Path(cfg.get("out"))
    try:
        result = STAGES[stage](cfg, out)
    except StageError as exc:
        _label_partial(out, stage, str(exc))
        print(f"dealscope {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        _label_partial(out, stage, str(exc))
        print(f"dealscope {stage}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        log.exception("internal error")
        _label_partial(out, stage, f"internal error: {exc}")
        print(f"dealscope {stage}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if stage == "pipeline":
        print(f"report digest {result['report_digest']}")
    return EXIT_OK


def _label_partial(out: Path, stage: str, message: str) -> None:
    """Mark an output directory whose stage did not finish."""
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "FAILED.json").write_text(json.dumps({"stage": stage, "error": message}, indent=2) + "\n",
                                         encoding="utf-8")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
