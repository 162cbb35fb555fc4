"""Interval calibrators around an arbitrary point regressor.

All calibrators consume a fitted base predictor plus a calibration set and
produce a cutoff function t(x); the prediction interval at x is
mu(x) +/- t(x), optionally rescaled by a spread estimate for the weighted
score. The hierarchy:

* global split calibration: one cutoff from all calibration scores;
* weighted split: same, on spread-normalized scores;
* binned split: difficulty values grouped into quantile bins, one cutoff
  per bin;
* tree-local calibration: a regression tree fit on conformity scores
  partitions the feature space and each leaf gets its own cutoff;
* forest-local calibration: a bootstrap ensemble of such trees whose leaf
  cutoffs are averaged.

Cutoffs always use the finite-sample corrected quantile level
(1 + 1/m)(1 - alpha); an empty cell, or a corrected level above one, yields
an infinite cutoff, which propagates as a whole-line interval rather than
an error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import empirical_quantile
from .forest import ForestParams, RandomForest, fit_forest, prediction_variance
from .rng import RngStream
from .tree import RegressionTree, TreeParams, fit_tree, select_pruned_tree

SCORE_KINDS = ("regression_residual", "weighted_residual")

# Corrected levels within this slack of 1 are treated as exactly 1 (the
# sample maximum); anything larger is an infinite cutoff.
_LEVEL_EPS = 1e-9


@dataclass(frozen=True)
class Intervals:
    """A batch of prediction intervals, stored as parallel arrays.

    Infinite half-widths mark whole-line intervals; they count as covering
    everywhere and are flagged through `infinite` rather than raised.
    """

    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def infinite(self) -> np.ndarray:
        return ~np.isfinite(self.upper - self.lower)

    def contains(self, y) -> np.ndarray:
        """Closed-interval membership; boundary points count as covered."""
        y = np.asarray(y, np.float64)
        return (y >= self.lower) & (y <= self.upper)

    def __len__(self) -> int:
        return self.center.shape[0]


def compute_scores(predictor, X, y, kind: str = "regression_residual", mad_predictor=None) -> np.ndarray:
    """Conformity scores of (X, y) under the fitted predictor.

    regression_residual: |y - mu(x)|; weighted_residual divides by the
    spread estimate rho(x), which must be strictly positive.
    """
    if kind not in SCORE_KINDS:
        raise ValueError(f"unknown score kind: {kind!r}")
    X = np.asarray(X, np.float64)
    y = np.asarray(y, np.float64).ravel()
    residuals = np.abs(y - np.asarray(predictor.predict(X), np.float64))
    if kind == "regression_residual":
        return residuals
    if mad_predictor is None:
        raise ValueError("weighted_residual requires a fitted spread predictor")
    rho = np.asarray(mad_predictor.predict(X), np.float64)
    if np.any(rho <= 0):
        raise ValueError("degenerate MAD: spread estimate must be positive")
    return residuals / rho


def conformal_cutoff(scores, alpha: float) -> float:
    """Split-calibration cutoff: the empirical (1 + 1/m)(1 - alpha)-quantile.

    Returns +inf when the score set is empty or the corrected level exceeds
    one, i.e. when the cell is too small to certify 1 - alpha coverage.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    s = np.asarray(scores, np.float64).ravel()
    m = s.size
    if m == 0:
        return float("inf")
    level = (1.0 + 1.0 / m) * (1.0 - alpha)
    if level > 1.0 + _LEVEL_EPS:
        return float("inf")
    return empirical_quantile(s, min(level, 1.0))


# ---------------------------------------------------------------------------
# feature augmentation


class VarianceAugmentor:
    """Appends the base forest's per-tree prediction variance as a column."""

    name = "variance"

    def __init__(self, forest: RandomForest):
        self.forest = forest

    def __call__(self, X) -> np.ndarray:
        return prediction_variance(self.forest, X)


class MadAugmentor:
    """Appends the estimated residual spread rho(x) as a column."""

    name = "mad"

    def __init__(self, mad_forest: RandomForest):
        self.mad_forest = mad_forest

    def __call__(self, X) -> np.ndarray:
        return np.asarray(self.mad_forest.predict(X), np.float64)


def augment_features(X, augmentors=()) -> np.ndarray:
    """Append one column per augmentor; with none, X is returned unchanged."""
    X = np.asarray(X, np.float64)
    if not augmentors:
        return X
    cols = [np.asarray(a(X), np.float64).reshape(X.shape[0], 1) for a in augmentors]
    return np.hstack([X] + cols)


# ---------------------------------------------------------------------------
# calibrator models


@dataclass(frozen=True)
class RegSplitModel:
    """One global cutoff for every x."""

    alpha: float
    cutoff_value: float
    n_cal: int

    def cutoff(self, X) -> np.ndarray:
        n = np.asarray(X).shape[0]
        return np.full(n, self.cutoff_value)


@dataclass(frozen=True)
class WeightedSplitModel:
    """Global cutoff on spread-normalized scores; the interval half-width is
    cutoff * rho(x)."""

    alpha: float
    cutoff_value: float
    n_cal: int
    mad_predictor: object

    def cutoff(self, X) -> np.ndarray:
        n = np.asarray(X).shape[0]
        return np.full(n, self.cutoff_value)


@dataclass(frozen=True)
class MondrianModel:
    """Difficulty values binned at quantile edges, one cutoff per bin.

    `difficulty` is any callable mapping X to per-row difficulty values;
    new points beyond the last edge clamp into the last bin.
    """

    alpha: float
    edges: np.ndarray
    cutoffs: np.ndarray
    counts: np.ndarray
    difficulty: object

    def bin_of(self, values) -> np.ndarray:
        values = np.asarray(values, np.float64)
        idx = np.searchsorted(self.edges, values, side="left")
        return np.minimum(idx, len(self.edges) - 1)

    def cutoff(self, X) -> np.ndarray:
        values = np.asarray(self.difficulty(np.asarray(X, np.float64)), np.float64)
        return self.cutoffs[self.bin_of(values)]


@dataclass(frozen=True)
class CutoffTable:
    """Per-leaf cutoffs over a tree's partition; +inf marks empty cells."""

    cutoffs: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if np.any((self.counts == 0) & np.isfinite(self.cutoffs)):
            raise ValueError("empty cells must carry infinite cutoffs")


@dataclass(frozen=True)
class LocartModel:
    """A score tree partition with one conformal cutoff per leaf."""

    tree: RegressionTree
    table: CutoffTable
    alpha: float
    augmentors: tuple = ()

    def cutoff(self, X) -> np.ndarray:
        Xa = augment_features(np.asarray(X, np.float64), self.augmentors)
        return self.table.cutoffs[self.tree.apply(Xa)]


@dataclass(frozen=True)
class LoforestModel:
    """Bootstrap ensemble of score trees; the cutoff is the per-tree mean.

    A tree whose cell at x cannot certify the corrected level (too few
    cutoff rows, hence an infinite cell cutoff) abstains from the average;
    the interval is the whole line only when every tree abstains. With a
    single tree this reduces exactly to the tree-local cutoff, infinite
    cells included.
    """

    trees: tuple
    tables: tuple
    alpha: float
    augmentors: tuple = ()
    score_kind: str = "regression_residual"
    mad_predictor: object = None

    def cutoff(self, X) -> np.ndarray:
        Xa = augment_features(np.asarray(X, np.float64), self.augmentors)
        total = np.zeros(Xa.shape[0])
        n_finite = np.zeros(Xa.shape[0])
        for tree, table in zip(self.trees, self.tables):
            c = table.cutoffs[tree.apply(Xa)]
            finite = np.isfinite(c)
            total += np.where(finite, c, 0.0)
            n_finite += finite
        with np.errstate(invalid="ignore"):
            return np.where(n_finite > 0, total / n_finite, np.inf)


def _leaf_cutoffs(tree: RegressionTree, X_cut: np.ndarray, scores: np.ndarray, alpha: float) -> CutoffTable:
    """Conformal cutoff of the cutoff-set scores falling into each leaf."""
    n_leaves = tree.n_leaves
    cutoffs = np.full(n_leaves, np.inf)
    counts = np.zeros(n_leaves, np.int64)
    if X_cut.shape[0]:
        leaves = tree.apply(X_cut)
        order = np.argsort(leaves, kind="stable")
        counts = np.bincount(leaves, minlength=n_leaves).astype(np.int64)
        stop = np.cumsum(counts)
        start = stop - counts
        sorted_scores = scores[order]
        for leaf in range(n_leaves):
            if counts[leaf]:
                cutoffs[leaf] = conformal_cutoff(sorted_scores[start[leaf]:stop[leaf]], alpha)
    return CutoffTable(cutoffs=cutoffs, counts=counts)


def _inner_split(n: int, inner_split: bool, inner_fraction: float, rng: RngStream):
    if not inner_split:
        idx = np.arange(n)
        return idx, idx
    perm = rng.generator().permutation(n)
    n_part = int(np.floor(inner_fraction * n + 1e-9))
    return perm[:n_part], perm[n_part:]


# ---------------------------------------------------------------------------
# fitting


def fit_reg_split(predictor, X_cal, y_cal, alpha: float) -> RegSplitModel:
    """Global split calibration: one cutoff from all calibration scores."""
    scores = compute_scores(predictor, X_cal, y_cal)
    return RegSplitModel(alpha=alpha, cutoff_value=conformal_cutoff(scores, alpha), n_cal=scores.size)


def fit_weighted_reg_split(predictor, mad_predictor, X_cal, y_cal, alpha: float) -> WeightedSplitModel:
    """Global calibration on spread-normalized scores."""
    scores = compute_scores(predictor, X_cal, y_cal, "weighted_residual", mad_predictor)
    return WeightedSplitModel(
        alpha=alpha,
        cutoff_value=conformal_cutoff(scores, alpha),
        n_cal=scores.size,
        mad_predictor=mad_predictor,
    )


def fit_mondrian(predictor, difficulty, X_cal, y_cal, alpha: float, k: int = 30) -> MondrianModel:
    """Bin calibration difficulty into k quantile groups and calibrate each.

    `difficulty` maps X to per-row difficulty values (typically the base
    forest's prediction variance). Duplicate quantile edges collapse bins.
    """
    if k < 1:
        raise ValueError("bin count must be at least 1")
    X_cal = np.asarray(X_cal, np.float64)
    scores = compute_scores(predictor, X_cal, y_cal)
    values = np.asarray(difficulty(X_cal), np.float64)
    edges = np.unique([empirical_quantile(values, i / k) for i in range(1, k + 1)])
    idx = np.minimum(np.searchsorted(edges, values, side="left"), len(edges) - 1)
    cutoffs = np.empty(len(edges))
    counts = np.zeros(len(edges), np.int64)
    for b in range(len(edges)):
        sel = scores[idx == b]
        counts[b] = sel.size
        cutoffs[b] = conformal_cutoff(sel, alpha)
    return MondrianModel(
        alpha=alpha, edges=edges, cutoffs=cutoffs, counts=counts, difficulty=difficulty
    )


def fit_locart(
    predictor,
    X_cal,
    y_cal,
    alpha: float,
    tree_params: TreeParams | None = None,
    *,
    inner_split: bool = False,
    inner_fraction: float = 0.5,
    post_prune: bool = True,
    prune_holdout: float = 0.25,
    augmentors=(),
    rng: RngStream | None = None,
) -> LocartModel:
    """Tree-local calibration.

    Scores the calibration set, fits a regression tree of scores on the
    (optionally augmented) features, optionally post-prunes it against a
    held-out share of the partitioning rows, then fills each leaf with the
    conformal cutoff of the cutoff-set scores routed to it. By default the
    partitioning and cutoff sets are both the full calibration set.
    """
    rng = rng or RngStream(0)
    X_cal = np.asarray(X_cal, np.float64)
    scores = compute_scores(predictor, X_cal, y_cal)
    Xa = augment_features(X_cal, augmentors)
    part, cut = _inner_split(scores.size, inner_split, inner_fraction, rng.child(0))
    params = tree_params or TreeParams()
    X_part, s_part = Xa[part], scores[part]
    n_hold = int(np.floor(prune_holdout * part.size)) if post_prune else 0
    if n_hold > 0:
        perm = rng.child(1).generator().permutation(part.size)
        hold, grow = perm[:n_hold], perm[n_hold:]
        tree = fit_tree(X_part[grow], s_part[grow], params)
        tree = select_pruned_tree(tree, X_part[hold], s_part[hold])
    else:
        tree = fit_tree(X_part, s_part, params)
    table = _leaf_cutoffs(tree, Xa[cut], scores[cut], alpha)
    return LocartModel(tree=tree, table=table, alpha=alpha, augmentors=tuple(augmentors))


def locart_cutoff(model: LocartModel, X) -> np.ndarray:
    """Cutoff table lookup at the leaf containing each row."""
    return model.cutoff(np.atleast_2d(np.asarray(X, np.float64)))


def fit_loforest(
    predictor,
    X_cal,
    y_cal,
    alpha: float,
    forest_params: ForestParams | None = None,
    *,
    inner_split: bool = False,
    inner_fraction: float = 0.5,
    augmentors=(),
    score_kind: str = "regression_residual",
    mad_predictor=None,
    rng: RngStream | None = None,
) -> LoforestModel:
    """Forest-local calibration.

    Fits `n_estimators` trees on bootstrap resamples of the partitioning
    scores (pre-pruning only; post-pruning would shrink the diversity the
    ensemble relies on) and fills every tree's leaves from the full cutoff
    set.
    """
    rng = rng or RngStream(0)
    X_cal = np.asarray(X_cal, np.float64)
    scores = compute_scores(predictor, X_cal, y_cal, score_kind, mad_predictor)
    Xa = augment_features(X_cal, augmentors)
    part, cut = _inner_split(scores.size, inner_split, inner_fraction, rng.child(0))
    params = forest_params or ForestParams(tree=TreeParams())
    X_part, s_part = Xa[part], scores[part]
    X_cut, s_cut = Xa[cut], scores[cut]
    n = part.size
    trees = []
    tables = []
    for b in range(params.n_estimators):
        if params.bootstrap:
            idx = rng.child(2 + b).generator().integers(0, n, size=n)
        else:
            idx = np.arange(n)
        tree = fit_tree(X_part[idx], s_part[idx], params.tree)
        trees.append(tree)
        tables.append(_leaf_cutoffs(tree, X_cut, s_cut, alpha))
    return LoforestModel(
        trees=tuple(trees),
        tables=tuple(tables),
        alpha=alpha,
        augmentors=tuple(augmentors),
        score_kind=score_kind,
        mad_predictor=mad_predictor,
    )


def loforest_cutoff(model: LoforestModel, X) -> np.ndarray:
    """Mean of the per-tree leaf cutoffs; any infinite contribution makes the
    interval the whole line (reported as an infinite half-width)."""
    return model.cutoff(np.atleast_2d(np.asarray(X, np.float64)))


def predict_interval(model, predictor, X, mad_predictor=None) -> Intervals:
    """Prediction intervals mu(x) +/- t(x) (times rho(x) for weighted scores).

    `mad_predictor` overrides the spread predictor stored on weighted
    models; whole-line intervals surface through `Intervals.infinite`.
    """
    X = np.atleast_2d(np.asarray(X, np.float64))
    center = np.asarray(predictor.predict(X), np.float64)
    t = model.cutoff(X)
    mad = mad_predictor
    if mad is None:
        if isinstance(model, WeightedSplitModel):
            mad = model.mad_predictor
        elif isinstance(model, LoforestModel) and model.score_kind == "weighted_residual":
            mad = model.mad_predictor
    if mad is not None:
        rho = np.asarray(mad.predict(X), np.float64)
        half = np.where(np.isinf(t), np.inf, t * rho)
    else:
        half = t
    return Intervals(center=center, lower=center - half, upper=center + half)
