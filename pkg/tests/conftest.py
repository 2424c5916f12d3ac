import numpy as np
import pytest

from casecross.frames import build_time_stratified
from casecross.latent import ModelSpec, Rw2EffectSpec, build_structure
from casecross.likelihood import ConditionalPoisson, DailySeries


def random_stratified(rng, T=50, window=28, rate=3.0):
    frames = build_time_stratified(T, window)
    eta = rng.normal(0, 0.5, T)
    Y = rng.poisson(rate * np.exp(eta))
    return Y, eta, frames


def toy_series(rng, T=50, rate=5.0):
    pm = rng.gamma(4.0, 4.0, T)
    Y = rng.poisson(rate * np.exp(0.02 * (pm - 16)))
    return DailySeries(Y, {"pm": pm, "temp": rng.normal(0, 1, T)})


def toy_model(overdispersion=True, bin_width=4.0):
    return ModelSpec(fixed_effects=["temp"],
                     rw2=[Rw2EffectSpec("pm", bin_width=bin_width, reference=16.0, sd_prior_median=0.1)],
                     overdispersion=overdispersion)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def toy(rng):
    """(likelihood, structure, series, frames) for a T=50 overdispersed model."""
    series = toy_series(rng)
    frames = build_time_stratified(series.T, 28)
    st = build_structure(series, toy_model())
    return ConditionalPoisson(series.Y, frames), st, series, frames
