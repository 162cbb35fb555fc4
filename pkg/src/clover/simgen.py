"""Synthetic benchmark generators with known conditional laws.

Each setting fixes the joint law of (X, Y): features are i.i.d. uniform per
coordinate and the target depends only on the mean of the first `p`
coordinates. The conditional law at any x is exposed directly, which makes
conditional-coverage evaluation and Monte Carlo oracle cutoffs possible.

Gaussian parameters follow the (mean, variance) convention throughout.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .data import Dataset, empirical_quantile
from .rng import RngStream

SETTING_KEYS = (
    "homosc",
    "heterosc",
    "asym",
    "asym2",
    "t_residuals",
    "noncorr_heterosc",
    "laplace_beta",
    "mixture_constvar",
)

_UNIVARIATE = ("laplace_beta", "mixture_constvar")

# Laplace scale matching the mean absolute deviation of Beta(2, 2) about its
# mean: 2 a^a b^b / (B(a, b) (a+b)^(a+b+1)) = 3/16 at a = b = 2. Both regions
# then share one conditional mean absolute deviation while their conditional
# residual quantiles differ.
_LAPLACE_SCALE = 0.1875


@dataclass(frozen=True)
class SimSetting:
    """One synthetic data-generating process.

    `p` of the `d` features drive the target; the two univariate settings
    fix d = p = 1 with their own feature ranges. `gamma` shapes the skewed
    noise settings; `s` is the mixture setting's constant conditional
    standard deviation. The conditional variance of the mixture equals s^2
    at every x whenever s exceeds the mean range; smaller s strengthens the
    drift of the upper residual quantiles (the component means separate),
    at the price of mild bimodality for x above s/sqrt(2).
    """

    kind: str
    d: int = 20
    p: int = 1
    gamma: float = 0.6
    s: float = 1.05

    def __post_init__(self):
        if self.kind not in SETTING_KEYS:
            raise ValueError(f"unknown setting: {self.kind!r}")
        if self.kind in _UNIVARIATE:
            if self.d != 1 or self.p != 1:
                raise ValueError(f"{self.kind} is univariate (d = p = 1)")
        elif not (1 <= self.p <= self.d):
            raise ValueError("need 1 <= p <= d")
        if self.kind == "mixture_constvar" and self.s <= 1.0:
            raise ValueError("mixture spread s must exceed the mean range")

    @property
    def feature_range(self) -> tuple[float, float]:
        if self.kind == "laplace_beta":
            return (0.0, 2.0)
        if self.kind == "mixture_constvar":
            return (0.0, 1.0)
        return (-1.5, 1.5)


def get_setting(key: str, p: int = 1, d: int = 20) -> SimSetting:
    """Look up a setting by its registry key."""
    if key not in SETTING_KEYS:
        raise ValueError(f"unknown setting: {key!r} (known: {', '.join(SETTING_KEYS)})")
    if key in _UNIVARIATE:
        return SimSetting(kind=key, d=1, p=1)
    gamma = 1.5 if key == "asym2" else 0.6
    return SimSetting(kind=key, d=d, p=p, gamma=gamma)


def _relevant_mean(setting: SimSetting, X: np.ndarray) -> np.ndarray:
    return X[:, : setting.p].mean(axis=1)


def _draw_targets(setting: SimSetting, X: np.ndarray, g: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    xb = _relevant_mean(setting, X)
    kind = setting.kind
    if kind == "homosc":
        return 2.0 * xb + g.standard_normal(n)
    if kind == "heterosc":
        sd = np.sqrt(0.25 + 2.0 * np.abs(xb))
        return 2.0 * xb + sd * g.standard_normal(n)
    if kind in ("asym", "asym2"):
        a = 1.0 + setting.gamma * np.abs(xb)
        return 2.0 * xb + g.gamma(shape=a, scale=1.0 / a)
    if kind == "t_residuals":
        return 2.0 * xb + g.standard_t(4, n)
    if kind == "noncorr_heterosc":
        sd = np.sqrt(0.25 + np.abs(2.0 * xb))
        return 1.0 + sd * g.standard_normal(n)
    if kind == "laplace_beta":
        x = X[:, 0]
        laplace = g.laplace(0.0, _LAPLACE_SCALE, n)
        beta = g.beta(2.0, 2.0, n)
        return np.where(x < 1.0, laplace, beta)
    if kind == "mixture_constvar":
        x = X[:, 0]
        sign = g.integers(0, 2, n) * 2 - 1
        sd = np.sqrt(setting.s**2 - x**2)
        return sign * x + sd * g.standard_normal(n)
    raise AssertionError(kind)


def true_mean(setting: SimSetting, X) -> np.ndarray:
    """The exact regression function E[Y | X = x] of the setting."""
    X = np.atleast_2d(np.asarray(X, np.float64))
    xb = _relevant_mean(setting, X)
    kind = setting.kind
    if kind in ("homosc", "heterosc", "t_residuals"):
        return 2.0 * xb
    if kind in ("asym", "asym2"):
        return 2.0 * xb + 1.0  # skewed noise has mean one
    if kind == "noncorr_heterosc":
        return np.ones(X.shape[0])
    if kind == "laplace_beta":
        return np.where(X[:, 0] < 1.0, 0.0, 0.5)
    if kind == "mixture_constvar":
        return np.zeros(X.shape[0])
    raise AssertionError(kind)


@dataclass(frozen=True)
class TrueMeanPredictor:
    """Perfect base predictor: predicts the exact conditional mean."""

    setting: SimSetting

    def predict(self, X) -> np.ndarray:
        return true_mean(self.setting, X)


def sample(setting: SimSetting, n: int, rng: RngStream) -> Dataset:
    """Draw n i.i.d. (x, y) pairs from the setting."""
    g = rng.generator()
    lo, hi = setting.feature_range
    X = g.uniform(lo, hi, size=(n, setting.d))
    y = _draw_targets(setting, X, g)
    return Dataset(features=X, targets=y)


def conditional_sample(setting: SimSetting, x, b_y: int, rng: RngStream) -> np.ndarray:
    """b_y i.i.d. draws from Y | X = x."""
    x = np.asarray(x, np.float64).ravel()
    if x.shape[0] != setting.d:
        raise ValueError(f"expected {setting.d} features, got {x.shape[0]}")
    X = np.tile(x, (b_y, 1))
    return _draw_targets(setting, X, rng.generator())


def make_conditional_sampler(setting: SimSetting):
    """Sampler with the (x, b_y, rng) signature the metrics expect."""
    return functools.partial(conditional_sample, setting)


def oracle_cutoff(
    setting: SimSetting, x, alpha: float, predictor, b_y: int = 100_000, rng: RngStream | None = None
) -> float:
    """Monte Carlo stand-in for the ideal cutoff at x: the empirical
    (1 - alpha)-quantile of |Y - mu(x)| over b_y conditional draws."""
    rng = rng or RngStream(0)
    x = np.asarray(x, np.float64).ravel()
    draws = conditional_sample(setting, x, b_y, rng)
    mu = float(np.asarray(predictor.predict(x.reshape(1, -1)))[0])
    return empirical_quantile(np.abs(draws - mu), 1.0 - alpha)
