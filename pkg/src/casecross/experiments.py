"""In-process simulation studies: simulate, fit several models, evaluate.

The CLI writes every intermediate file; this module keeps everything in
memory, which is what the experiment scripts and the acceptance checks
need when running hundreds of replications.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .evaluation import ReplicationCurve, coverage_report
from .frames import build_design
from .inference import FitOptions, fit
from .latent import BasisEffectSpec, ModelSpec, Rw2EffectSpec
from .likelihood import DailySeries
from .simgen import ExposureCurveSpec, ExposureSeriesSpec, GenConfig, TrendSpec, generate_series, replication_seeds

log = logging.getLogger(__name__)


@dataclass
class ModelRun:
    """One fitted model within a study."""

    model: ModelSpec
    design: str = "time-stratified"
    control_days: int = 3
    options: FitOptions = field(default_factory=FitOptions)
    envelope: bool = True


@dataclass
class StudyConfig:
    replications: int = 200
    T: int = 2016
    sigma0: float | str = 0.0
    trend: str = "smooth"
    seed: int = 1
    min_count: int = 20
    exposure: ExposureSeriesSpec = field(default_factory=ExposureSeriesSpec)

    def gen_config(self, seed) -> GenConfig:
        return GenConfig(T=self.T, sigma0=self.sigma0, seed=seed, exposure=self.exposure)


def spline_model(overdispersion: bool, reference: float = 20.0) -> ModelSpec:
    """The true exposure basis entered as fixed effects."""
    return ModelSpec(basis_effects=[BasisEffectSpec("pm", reference=reference)], overdispersion=overdispersion)


def rw2_model(overdispersion: bool, bin_width: float = 2.5, reference: float = 20.0,
              sd_prior_median: float = 4e-4) -> ModelSpec:
    return ModelSpec(rw2=[Rw2EffectSpec("pm", bin_width=bin_width, reference=reference,
                                        sd_prior_median=sd_prior_median)],
                     overdispersion=overdispersion)


def fit_curve(series: DailySeries, truth, run: ModelRun, seed: int) -> ReplicationCurve:
    """Fit one model to one dataset and summarise its first exposure curve."""
    frames = build_design(run.design, series.T, run.control_days, day1_weekday=int(series.weekday[0]))
    unframed = frames.day_to_frame_array() < 0
    if unframed.any():
        series = DailySeries(np.where(unframed, 0, series.Y), series.covariates, series.weekday,
                             series.start_date)
    opts = dataclasses.replace(run.options, seed=seed)
    res = fit(series, frames, run.model, opts)
    cs, cm = res.curves[0], res.structure.curves[0]
    expo = cm.exposure()
    ref = cm.exposure(np.array([cm.reference]))
    tv = truth.curve(expo) - truth.curve(ref)[0]
    return ReplicationCurve.from_draws(cs.draws, cs.grid, cs.counts, tv, opts.level, envelope=run.envelope)


def _one_replication(args):
    cfg, runs, rep, seed = args
    series, truth = generate_series(cfg.gen_config(seed), TrendSpec(kind=cfg.trend), ExposureCurveSpec())
    fit_seed = int(np.random.SeedSequence([cfg.seed, rep]).generate_state(1)[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {name: fit_curve(series, truth, run, fit_seed) for name, run in runs.items()}


def run_study(cfg: StudyConfig, runs: dict, jobs: int = 1) -> dict:
    """Returns {model name: CoverageReport} over ``cfg.replications`` datasets."""
    seeds = replication_seeds(cfg.seed, cfg.replications)
    items = [(cfg, runs, i + 1, s) for i, s in enumerate(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_one_replication, items))
    else:
        results = [_one_replication(it) for it in items]
    out = {}
    for name in runs:
        reps = [r[name] for r in results]
        # grids are fixed by the shared exposure series, so replications line up
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out[name] = coverage_report(reps, min_count=cfg.min_count)
    return out
