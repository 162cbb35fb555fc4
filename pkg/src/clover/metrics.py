"""Coverage and sharpness diagnostics for prediction intervals.

Marginal coverage and the interval score need only intervals and labels;
conditional coverage deviation additionally needs a sampler for the true
conditional law, so it is available on synthetic data only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import Intervals
from .rng import RngStream


@dataclass(frozen=True)
class MetricReport:
    """Per-evaluation metric bundle.

    `smis` is the mean interval score over the full test set and is infinite
    as soon as one interval is; `smis_finite` and `n_infinite` split that out
    so a single unbounded interval cannot silently dominate the mean.
    `ccad` is None when no conditional sampler is available (real data).
    """

    amc: float
    smis: float
    smis_finite: float
    n_infinite: int
    mean_width: float
    n_test: int
    ccad: float | None = None


def marginal_coverage(intervals: Intervals, y_test) -> float:
    """Fraction of test labels inside their closed intervals; whole-line
    intervals count as covering."""
    return float(np.mean(intervals.contains(y_test)))


def interval_score(lower, upper, y, alpha: float):
    """Length plus 2/alpha times the shortfall below or overshoot above.

    Vectorizes over arrays; an infinite interval scores +inf.
    """
    lower = np.asarray(lower, np.float64)
    upper = np.asarray(upper, np.float64)
    y = np.asarray(y, np.float64)
    length = upper - lower
    below = np.where(y < lower, lower - y, 0.0)
    above = np.where(y > upper, y - upper, 0.0)
    score = length + (2.0 / alpha) * (below + above)
    return score if score.ndim else float(score)


def smis(intervals: Intervals, y_test, alpha: float) -> float:
    """Mean interval score over the test set (infinite if any interval is)."""
    return float(np.mean(interval_score(intervals.lower, intervals.upper, y_test, alpha)))


def smis_finite(intervals: Intervals, y_test, alpha: float) -> tuple[float, int]:
    """Mean interval score over the finite intervals plus the infinite count."""
    finite = ~intervals.infinite
    n_inf = int(np.sum(~finite))
    if not finite.any():
        return float("nan"), n_inf
    value = float(
        np.mean(
            interval_score(
                intervals.lower[finite],
                intervals.upper[finite],
                np.asarray(y_test, np.float64)[finite],
                alpha,
            )
        )
    )
    return value, n_inf


def ccad(
    interval_fn,
    conditional_sampler,
    X_test,
    alpha: float,
    b_y: int = 1000,
    rng: RngStream | None = None,
) -> float:
    """Mean absolute deviation of Monte Carlo conditional coverage from 1 - alpha.

    For each test point, `b_y` draws from the true conditional law of the
    label are checked against the interval; per-point draws use substream i
    of `rng` so the result is independent of evaluation order.
    """
    if b_y < 1:
        raise ValueError("b_y must be at least 1")
    X_test = np.atleast_2d(np.asarray(X_test, np.float64))
    rng = rng or RngStream(0)
    iv = interval_fn(X_test)
    target = 1.0 - alpha
    deviations = np.empty(X_test.shape[0])
    for i in range(X_test.shape[0]):
        draws = np.asarray(conditional_sampler(X_test[i], b_y, rng.child(i)), np.float64)
        delta = np.mean((draws >= iv.lower[i]) & (draws <= iv.upper[i]))
        deviations[i] = abs(delta - target)
    return float(np.mean(deviations))


def evaluate_intervals(
    intervals: Intervals,
    y_test,
    alpha: float,
    conditional_sampler=None,
    X_test=None,
    b_y: int = 1000,
    rng: RngStream | None = None,
) -> MetricReport:
    """Bundle AMC, interval-score, width, and (when possible) conditional
    coverage deviation for one method's intervals."""
    finite = ~intervals.infinite
    width = float(np.mean(intervals.width[finite])) if finite.any() else float("nan")
    value, n_inf = smis_finite(intervals, y_test, alpha)
    ccad_value = None
    if conditional_sampler is not None:
        if X_test is None:
            raise ValueError("conditional coverage needs the test features")
        ccad_value = ccad(
            lambda _: intervals, conditional_sampler, X_test, alpha, b_y=b_y, rng=rng
        )
    return MetricReport(
        amc=marginal_coverage(intervals, y_test),
        smis=smis(intervals, y_test, alpha),
        smis_finite=value,
        n_infinite=n_inf,
        mean_width=width,
        n_test=len(intervals),
        ccad=ccad_value,
    )
