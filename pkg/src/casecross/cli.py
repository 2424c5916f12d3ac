"""Command-line front end: ``casecross {simulate,fit,evaluate,experiment}``.

Layout on disk::

    sim/rep_0001/data.csv, truth.json              sim/manifest.json
    fit/rep_0001/fit.json, draws.csv, curves.csv   fit/manifest.json
    report/coverage.csv, bias.csv, width.csv, summary.csv, *.svg, manifest.json

Everything except ``manifest.json`` (which carries wall-clock timestamps)
is byte-identical across reruns with the same config and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import shutil
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as cio
from .evaluation import ReplicationCurve, coverage_report, erl_envelope, tidy_csv
from .frames import CalendarMask, build_design
from .inference import FitOptions, InferenceError, fit
from .latent import ModelSpec
from .likelihood import DailySeries
from .plots import line_plot
from .simgen import (ExposureCurveSpec, ExposureSeriesSpec, GenConfig, Truth, TrendSpec, generate_series,
                     replication_seeds)

log = logging.getLogger("casecross")
SCHEMA_VERSION = 1
DESIGNS = ("time-stratified", "uni", "bidir")
MANIFEST = "manifest.json"


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- configs

def _check_fields(d: dict, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise CliError(f"{where}: unknown field(s) {unknown}")


def _dataclass_from(cls, d, where):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise CliError(f"{where}: expected an object")
    names = [f.name for f in dataclasses.fields(cls)]
    _check_fields(d, names, where)
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{where}: {exc}") from exc


@dataclasses.dataclass
class SimulateConfig:
    replications: int = 1
    T: int = 2016
    sigma0: object = "none"
    seed: int = 1
    start_date: str = "2000-01-02"  # a Sunday
    dow_effects: tuple | None = None
    trend: TrendSpec = dataclasses.field(default_factory=TrendSpec)
    exposure: ExposureSeriesSpec = dataclasses.field(default_factory=ExposureSeriesSpec)
    curve: ExposureCurveSpec = dataclasses.field(default_factory=ExposureCurveSpec)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulateConfig":
        d = dict(d)
        _check_version(d, "simulate config")
        _check_fields(d, [f.name for f in dataclasses.fields(cls)], "simulate config")
        d["trend"] = _dataclass_from(TrendSpec, d.get("trend"), "simulate config field 'trend'")
        d["exposure"] = _dataclass_from(ExposureSeriesSpec, d.get("exposure"), "simulate config field 'exposure'")
        d["curve"] = _dataclass_from(ExposureCurveSpec, d.get("curve"), "simulate config field 'curve'")
        cfg = cls(**d)
        if not isinstance(cfg.replications, int) or cfg.replications < 1:
            raise CliError("simulate config field 'replications' must be a positive integer")
        if not isinstance(cfg.T, int) or cfg.T < 1:
            raise CliError("simulate config field 'T' must be a positive integer")
        try:
            dt.date.fromisoformat(cfg.start_date)
        except (TypeError, ValueError):
            raise CliError(f"simulate config field 'start_date' is not an ISO date: {cfg.start_date!r}")
        try:
            cfg.gen_config(cfg.seed)
        except ValueError as exc:
            field = "sigma0" if "sigma0" in str(exc) else "dow_effects" if "dow" in str(exc) else "T"
            raise CliError(f"simulate config field {field!r}: {exc}") from exc
        return cfg

    @property
    def day1_weekday(self) -> int:
        return dt.date.fromisoformat(self.start_date).isoweekday() % 7

    def gen_config(self, seed) -> GenConfig:
        kw = {} if self.dow_effects is None else {"dow_effects": tuple(self.dow_effects)}
        return GenConfig(T=self.T, sigma0=self.sigma0, exposure=self.exposure, seed=seed,
                         day1_weekday=self.day1_weekday, **kw)


@dataclasses.dataclass
class FitConfig:
    model: ModelSpec
    design: str = "time-stratified"
    control_days: int = 3
    drop_partial: bool = False
    options: FitOptions = dataclasses.field(default_factory=FitOptions)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        _check_version(d, "fit config")
        _check_fields(d, [f.name for f in dataclasses.fields(cls)], "fit config")
        if "model" not in d:
            raise CliError("fit config: missing field 'model'")
        try:
            d["model"] = ModelSpec.from_dict(d["model"])
        except (TypeError, ValueError) as exc:
            raise CliError(f"fit config field 'model': {exc}") from exc
        d["options"] = _dataclass_from(FitOptions, d.get("options"), "fit config field 'options'")
        cfg = cls(**d)
        if cfg.design not in DESIGNS:
            raise CliError(f"fit config field 'design' must be one of {list(DESIGNS)}, got {cfg.design!r}")
        return cfg

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "model": self.model.to_dict(), "design": self.design,
                "control_days": self.control_days, "drop_partial": self.drop_partial,
                "options": dataclasses.asdict(self.options)}


def _check_version(d, where):
    v = d.pop("schema_version", None)
    if v != SCHEMA_VERSION:
        raise CliError(f"{where}: field 'schema_version' must be {SCHEMA_VERSION}, got {v!r}")


def _load_json(path, where):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {where} {path}: {exc}", 4) from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CliError(f"{where} {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"{where} {path} must hold a JSON object")
    return data, raw


# ---------------------------------------------------------------- output plumbing

def _prepare_output(out: Path, overwrite: bool):
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise CliError(f"output directory {out} is not empty; pass --overwrite", 4)
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _write_files(out: Path, files: dict) -> list:
    written = []
    for rel, text in sorted(files.items()):
        p = out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        written.append(rel)
    return written


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _rep_name(i: int) -> str:
    return f"rep_{i:04d}"


# ---------------------------------------------------------------- simulate

def _simulate_one(args):
    cfg, rep, seed = args
    series, truth = generate_series(cfg.gen_config(seed), cfg.trend, cfg.curve)
    series.start_date = dt.date.fromisoformat(cfg.start_date)
    d = truth.to_dict()
    d.update(replication=rep, seed=seed)
    name = _rep_name(rep)
    return {f"{name}/data.csv": cio.write_series_csv(series), f"{name}/truth.json": cio.dumps(d)}


def cmd_simulate(args) -> int:
    started = cio.now()
    raw_cfg, raw = _load_json(args.config, "simulate config")
    cfg = SimulateConfig.from_dict(raw_cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.output)
    seeds = replication_seeds(cfg.seed, cfg.replications)
    try:
        results = _map(_simulate_one, [(cfg, i + 1, s) for i, s in enumerate(seeds)], args.jobs)
    except ValueError as exc:
        raise CliError(f"simulation failed: {exc}", 3) from exc
    _prepare_output(out, args.overwrite)
    files = {}
    for r in results:
        files.update(r)
    written = _write_files(out, files)
    resolved = {"schema_version": SCHEMA_VERSION, **dataclasses.asdict(cfg)}
    resolved["sigma0"] = cfg.gen_config(0).sigma0
    _write_manifest(out, "simulate", cio.config_hash(raw), cfg.seed, written, started,
                    extra={"config": resolved})
    print(f"simulated {cfg.replications} replication(s) of T={cfg.T} into {out}")
    return 0


def _write_manifest(out, command, cfg_hash, seed, outputs, started, inputs=None, extra=None):
    m = cio.manifest(command, cfg_hash, seed, list(outputs) + [MANIFEST], started, inputs, extra)
    (out / MANIFEST).write_text(cio.dumps(m))


# ---------------------------------------------------------------- fit

def _find_datasets(path: Path) -> list:
    """(replication id, csv path) pairs from a CSV file or a simulate directory."""
    if path.is_file():
        name = path.parent.name
        rep = int(name[4:]) if name.startswith("rep_") and name[4:].isdigit() else 1
        return [(rep, path)]
    if not path.is_dir():
        raise CliError(f"data path {path} does not exist", 4)
    found = sorted(path.glob("rep_*/data.csv"))
    if not found:
        found = sorted(path.glob("*.csv"))
        return [(i + 1, p) for i, p in enumerate(found)]
    return [(int(p.parent.name[4:]), p) for p in found]


def _fit_one(args):
    cfg, rep, data_path, holidays = args
    series = cio.read_series_csv(data_path)
    mask = None
    if holidays is not None:
        mask = CalendarMask.from_file(holidays, series.T, series.start_date)
    frames = build_design(cfg.design, series.T, cfg.control_days, mask,
                          day1_weekday=int(series.weekday[0]), drop_partial=cfg.drop_partial)
    # days outside every frame (holidays, dropped partial windows) leave the analysis
    unframed = frames.day_to_frame_array() < 0
    if unframed.any():
        Y = np.where(unframed, 0, series.Y)
        series = DailySeries(Y, series.covariates, series.weekday, series.start_date)
    opts = dataclasses.replace(cfg.options, seed=int(np.random.SeedSequence([cfg.options.seed, rep])
                                                     .generate_state(1)[0]))
    res = fit(series, frames, cfg.model, opts)
    log.info("%s rep %d: %s", data_path, rep, ", ".join(f"{k} {v:.2f}s" for k, v in res.timings.items()))
    return rep, _fit_files(res, cfg, rep, frames, int(unframed.sum()))


def _fit_files(res, cfg: FitConfig, rep: int, frames, n_unframed: int) -> dict:
    name = _rep_name(rep)
    hp = res.hyper
    st = res.structure
    nd = st.n_dense
    # posterior draws of the dense latent block
    header = ["draw", "node"] + st.names[:nd]
    rows = [[i + 1, int(res.draws.node[i]) + 1] + list(res.draws.W[i, :nd]) for i in range(len(res.draws.node))]
    draws_csv = cio.curve_table_csv(rows, header)

    crow, curves_meta = [], []
    for cs, cm in zip(res.curves, st.curves):
        env = erl_envelope(cs.draws, res.options.level)
        expo = cm.exposure()
        for g in range(len(cs.grid)):
            crow.append([cs.name, cs.grid[g], expo[g], int(cs.counts[g]), cs.median[g], cs.lower[g],
                         cs.upper[g], env.lower[g], env.upper[g]])
        curves_meta.append({"name": cs.name, "reference": cm.reference, "transform": cm.transform,
                            "reference_exposure": float(cm.exposure(np.array([cm.reference]))[0]),
                            "n_grid": len(cs.grid), "ordering": env.ordering})
    curves_csv = cio.curve_table_csv(
        crow, ["curve", "grid", "exposure", "count", "median", "lower", "upper", "env_lower", "env_upper"])

    doc = {
        "replication": rep,
        "config": cfg.to_dict(),
        "n_frames": frames.n_frames,
        "design_kind": frames.design_kind,
        "unframed_days": n_unframed,
        "seed": res.options.seed,
        "theta_names": res.theta_names,
        "theta_summary": res.theta_summary,
        "hyper": {"theta_hat": hp.theta_hat, "hessian": hp.H, "L": hp.L, "nodes": hp.nodes,
                  "log_values": hp.log_values, "masses": hp.masses, "log_norm": hp.log_norm, "k": hp.k},
        "fixed": res.fixed,
        "curves": curves_meta,
    }
    if "theta0" in res.theta_summary:
        t0 = res.theta_summary["theta0"]
        doc["sigma0_summary"] = {"median": t0["sigma_median"], "lower": t0["sigma_lower"],
                                 "upper": t0["sigma_upper"]}
    if res.z_summary is not None:
        doc["z_summary"] = res.z_summary
    return {f"{name}/fit.json": cio.dumps(doc), f"{name}/draws.csv": draws_csv, f"{name}/curves.csv": curves_csv}


def _load_fit_config(args) -> tuple:
    raw_cfg, raw = _load_json(args.config, "fit config")
    cfg = FitConfig.from_dict(raw_cfg)
    if args.design is not None:
        cfg.design = args.design
    if args.control_days is not None:
        cfg.control_days = args.control_days
    if args.overdispersion is not None:
        cfg.model.overdispersion = args.overdispersion == "on"
    if args.seed is not None:
        cfg.options.seed = args.seed
    if cfg.design == "bidir" and cfg.control_days % 2:
        raise CliError("--control-days must be even for the bidir design")
    return cfg, raw


def _run_fits(cfg: FitConfig, data: Path, holidays, jobs) -> dict:
    datasets = _find_datasets(data)
    if not datasets:
        raise CliError(f"no datasets found under {data}", 4)
    header = cio.read_series_csv(datasets[0][1])
    missing = [c for c in _required_columns(cfg.model) if c not in header.covariates]
    if missing:
        raise CliError(f"data column mismatch: model needs {missing}, {datasets[0][1]} has "
                       f"{sorted(header.covariates)}", 2)
    try:
        results = _map(_fit_one, [(cfg, rep, p, holidays) for rep, p in datasets], jobs)
    except InferenceError as exc:
        raise CliError(f"fit failed at stage '{exc.stage}': {exc}", 3) from exc
    files = {}
    for _, f in results:
        files.update(f)
    return files


def _required_columns(model: ModelSpec) -> list:
    return (list(model.fixed_effects) + [r.covariate for r in model.rw2]
            + [b.covariate for b in model.basis_effects])


def _input_manifest(path: Path):
    d = path if path.is_dir() else path.parent
    m = d / MANIFEST
    entry = {"path": str(path)}
    if m.is_file():
        entry["manifest"] = json.loads(m.read_text())
    return entry


def cmd_fit(args) -> int:
    started = cio.now()
    cfg, raw = _load_fit_config(args)
    data = Path(args.data)
    files = _run_fits(cfg, data, args.exclude_holidays, args.jobs)
    out = Path(args.output)
    _prepare_output(out, args.overwrite)
    written = _write_files(out, files)
    _write_manifest(out, "fit", cio.config_hash(raw), cfg.options.seed, written, started,
                    inputs=[_input_manifest(data)], extra={"config": cfg.to_dict()})
    n = sum(1 for k in files if k.endswith("fit.json"))
    print(f"fitted {n} dataset(s) ({cfg.design}, {cfg.control_days} control days, overdispersion "
          f"{'on' if cfg.model.overdispersion else 'off'}) into {out}")
    return 0


# ---------------------------------------------------------------- evaluate

def _load_replications(fit_dir: Path, truth_dir: Path, level: float | None) -> dict:
    fits = sorted(fit_dir.glob("rep_*/curves.csv"))
    if not fits:
        raise CliError(f"no fitted replications under {fit_dir}", 4)
    truths = sorted(truth_dir.glob("rep_*/truth.json"))
    if not truths:
        raise CliError(f"no truth files under {truth_dir}", 4)
    fit_ids = [p.parent.name for p in fits]
    truth_ids = {p.parent.name for p in truths}
    missing = [r for r in fit_ids if r not in truth_ids]
    if missing:
        raise CliError(f"replications {missing[:5]} of {fit_dir} have no truth in {truth_dir}", 4)
    if len(fit_ids) != len(truth_ids):
        log.warning("%s holds %d fits but %s holds %d truths; evaluating the %d matched",
                    fit_dir, len(fit_ids), truth_dir, len(truth_ids), len(fit_ids))
    by_curve = {}
    for p in fits:
        doc = json.loads((p.parent / "fit.json").read_text())
        truth = Truth.from_dict(json.loads((truth_dir / p.parent.name / "truth.json").read_text()))
        cols = cio.read_csv_columns(p)
        for meta in doc["curves"]:
            sel = cols["curve"] == meta["name"]
            expo = cols["exposure"][sel]
            tv = truth.curve(expo) - truth.curve(np.array([meta["reference_exposure"]]))[0]
            rc = ReplicationCurve(cols["grid"][sel], cols["count"][sel].astype(int), tv, cols["median"][sel],
                                  cols["lower"][sel], cols["upper"][sel], cols["env_lower"][sel],
                                  cols["env_upper"][sel])
            by_curve.setdefault(meta["name"], []).append(rc)
    return by_curve


def cmd_evaluate(args) -> int:
    started = cio.now()
    truth_dir = Path(args.truth)
    fit_dirs = [Path(f) for f in args.fits]
    for d in fit_dirs + [truth_dir]:
        if not d.is_dir():
            raise CliError(f"input directory {d} does not exist", 4)
    labels = args.labels or [d.name for d in fit_dirs]
    if len(labels) != len(fit_dirs):
        raise CliError("--labels needs one label per fit directory")
    reports = []
    for label, d in zip(labels, fit_dirs):
        for curve, reps in _load_replications(d, truth_dir, None).items():
            scenario = label if curve == "pm" else f"{label}:{curve}"
            if len(reps) == 1:
                log.warning("%s: a single replication gives degenerate coverage (0 or 1 per point)", scenario)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    rep = coverage_report(reps, min_count=args.min_count)
                except ValueError as exc:
                    raise CliError(f"{scenario}: {exc}", 4) from exc
            truth_curve = np.mean([r.truth for r in reps], axis=0)
            median = np.mean([r.median for r in reps], axis=0)
            reports.append((scenario, rep, truth_curve, median))

    out = Path(args.output)
    _prepare_output(out, args.overwrite)
    files = {}
    metrics = {"coverage": ("count", "pointwise_coverage", "envelope_pointwise_coverage"),
               "bias": ("bias",), "width": ("width",)}
    for fname, keep in metrics.items():
        rows = [r for sc, rep, _, _ in reports for r in rep.to_rows(sc) if r[1] in keep]
        files[f"{fname}.csv"] = tidy_csv(rows)
    srows = []
    for sc, rep, _, _ in reports:
        for k, v in rep.summary().items():
            srows.append([sc, k, "" if v is None else v])
    files["summary.csv"] = cio.curve_table_csv(srows, ["scenario", "metric", "value"])
    files.update(_plots(reports, args.min_count))
    written = _write_files(out, files)
    inputs = [_input_manifest(d) for d in fit_dirs] + [_input_manifest(truth_dir)]
    # content-based: upstream config hashes rather than paths
    upstream = [i.get("manifest", {}).get("config_hash") for i in inputs]
    cfg_hash = cio.config_hash(json.dumps({"labels": labels, "min_count": args.min_count, "inputs": upstream},
                                          sort_keys=True).encode())
    _write_manifest(out, "evaluate", cfg_hash, None, written, started, inputs=inputs)
    _print_summary(reports)
    return 0


def _plots(reports, min_count) -> dict:
    files = {}
    panels = {
        "coverage": ("pointwise coverage", lambda r: r.pointwise_coverage, [0.8]),
        "bias": ("bias of posterior median", lambda r: r.bias, [0.0]),
        "width": ("mean interval width", lambda r: r.width, []),
    }
    for name, (ylabel, get, hl) in panels.items():
        series = []
        for sc, rep, _, _ in reports:
            keep = rep.counts >= 1
            series.append({"x": rep.grid[keep], "y": get(rep)[keep], "label": sc})
        files[f"{name}.svg"] = line_plot(series, title=ylabel, xlabel="exposure (model scale)",
                                         ylabel=ylabel, hlines=hl,
                                         ylim=(0.0, 1.0) if name == "coverage" else None)
    series = []
    for i, (sc, rep, truth, median) in enumerate(reports):
        if i == 0:
            series.append({"x": rep.grid, "y": truth, "label": "truth", "color": "#000000"})
        series.append({"x": rep.grid, "y": median, "label": f"{sc} median", "dash": "5 3"})
    files["curves.svg"] = line_plot(series, title="exposure-response", xlabel="exposure (model scale)",
                                    ylabel="log relative risk")
    return files


def _print_summary(reports):
    head = f"{'scenario':<28}{'reps':>6}{'bins>=min':>10}{'coverage':>10}{'|bias|':>10}{'width':>10}{'joint':>8}"
    print(head)
    print("-" * len(head))
    for sc, rep, _, _ in reports:
        s = rep.summary()

        def f(v, w=10):
            return f"{v:>{w}.3f}" if v is not None else f"{'-':>{w}}"

        print(f"{sc[:27]:<28}{s['n_replications']:>6}{s['n_grid_restricted']:>10}"
              f"{f(s['mean_pointwise_coverage_restricted'])}{f(s['mean_abs_bias_restricted'])}"
              f"{f(s['mean_width_restricted'])}{f(s['joint_coverage_restricted'], 8)}")


# ---------------------------------------------------------------- experiment

def cmd_experiment(args) -> int:
    """simulate + one fit per model + evaluate, from one config file.

    Config: ``{"schema_version": 1, "simulate": {...}, "fits": {"name": {...}}, "min_count": 20}``.
    """
    started = cio.now()
    raw_cfg, raw = _load_json(args.config, "experiment config")
    d = dict(raw_cfg)
    _check_version(d, "experiment config")
    _check_fields(d, ["simulate", "fits", "min_count"], "experiment config")
    if "simulate" not in d or "fits" not in d or not d["fits"]:
        raise CliError("experiment config needs 'simulate' and a non-empty 'fits' object")
    sim = SimulateConfig.from_dict(dict(d["simulate"], schema_version=SCHEMA_VERSION))
    fits = {name: FitConfig.from_dict(dict(f, schema_version=SCHEMA_VERSION)) for name, f in d["fits"].items()}
    out = Path(args.output)
    _prepare_output(out, args.overwrite)
    tmp_cfg = out / "configs"
    tmp_cfg.mkdir()
    (tmp_cfg / "simulate.json").write_text(cio.dumps({"schema_version": 1, **d["simulate"]}))
    common = dict(seed=args.seed, jobs=args.jobs, overwrite=True)
    cmd_simulate(argparse.Namespace(config=tmp_cfg / "simulate.json", output=out / "data", **common))
    for name, fc in fits.items():
        path = tmp_cfg / f"fit_{name}.json"
        path.write_text(cio.dumps(fc.to_dict()))
        cmd_fit(argparse.Namespace(config=path, data=out / "data", output=out / "fits" / name, design=args.design,
                                   control_days=args.control_days, overdispersion=args.overdispersion,
                                   exclude_holidays=args.exclude_holidays, **common))
    cmd_evaluate(argparse.Namespace(fits=[out / "fits" / n for n in fits], truth=out / "data", labels=list(fits),
                                    output=out / "report", min_count=d.get("min_count", 20), overwrite=True))
    outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
    _write_manifest(out, "experiment", cio.config_hash(raw), args.seed, outputs, started)
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="casecross", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log stage timings and diagnostics")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--output", required=True, help="output directory")
        sp.add_argument("--overwrite", action="store_true", help="replace an existing non-empty output directory")

    def runopts(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--jobs", type=int, default=1, help="replications processed in parallel")

    def fitopts(sp):
        sp.add_argument("--design", choices=DESIGNS, default=None)
        sp.add_argument("--control-days", type=int, default=None)
        sp.add_argument("--overdispersion", choices=("on", "off"), default=None)
        sp.add_argument("--exclude-holidays", default=None, metavar="PATH",
                        help="JSON list of day indices or ISO dates to drop before building frames")

    s = sub.add_parser("simulate", help="generate replication datasets and their truth")
    common(s)
    runopts(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model to one dataset or a directory of replications")
    f.add_argument("data", help="data CSV or simulate output directory")
    common(f)
    runopts(f)
    fitopts(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="coverage, bias and width of fitted curves against the truth")
    e.add_argument("fits", nargs="+", help="fit output directories (one scenario each)")
    e.add_argument("--truth", required=True, help="simulate output directory")
    e.add_argument("--labels", nargs="+", default=None, help="scenario labels (default: directory names)")
    e.add_argument("--min-count", type=int, default=20, help="observations per bin for restricted summaries")
    common(e, config=False)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="simulate, fit every model and evaluate in one go")
    common(x)
    runopts(x)
    fitopts(x)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"casecross {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
