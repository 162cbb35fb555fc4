"""Bootstrap ensembles of regression trees.

Serves both as the experiments' base regressor and as the difficulty
estimator (per-tree prediction variance) consumed by binned and augmented
calibrators. Randomness enters only through the bootstrap resample of each
tree; every feature is a split candidate at every node.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream
from .tree import (
    RegressionTree,
    TreeParams,
    _feature_order,
    _fit_weighted,
    tree_from_dict,
    tree_to_dict,
)

_FOREST_SCHEMA = "clover-forest/1"


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    tree: TreeParams = field(default_factory=lambda: TreeParams(min_samples_split=2))
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be at least 1")


class RandomForest:
    """A bagged list of trees; immutable and shareable once fitted."""

    __slots__ = ("trees", "bootstrap_indices", "params", "n_features")

    def __init__(self, trees, bootstrap_indices, params, n_features):
        self.trees = list(trees)
        self.bootstrap_indices = list(bootstrap_indices)
        self.params = params
        self.n_features = int(n_features)

    def tree_predictions(self, X) -> np.ndarray:
        """Per-tree predictions, shape (n_estimators, n_rows)."""
        X = np.ascontiguousarray(np.asarray(X, np.float64))
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)

    def prediction_variance(self, X) -> np.ndarray:
        """Population variance of the per-tree predictions at each row."""
        return self.tree_predictions(X).var(axis=0)


def fit_forest(X, y, params: ForestParams | None = None, rng: RngStream | None = None) -> RandomForest:
    """Fit `n_estimators` trees on independent bootstrap resamples of (X, y).

    Deterministic given `rng`; tree b draws its resample from child stream b.
    """
    X = np.ascontiguousarray(np.asarray(X, np.float64))
    y = np.asarray(y, np.float64).ravel()
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y row counts differ")
    params = params or ForestParams()
    rng = rng or RngStream(0)
    n = X.shape[0]
    full_order = _feature_order(X)  # shared: every resample reorders the same rows
    trees = []
    indices = []
    for b in range(params.n_estimators):
        if params.bootstrap:
            idx = rng.child(b).generator().integers(0, n, size=n)
            weights = np.bincount(idx, minlength=n).astype(np.int64)
        else:
            idx = np.arange(n)
            weights = np.ones(n, np.int64)
        trees.append(_fit_weighted(X, y, weights, params.tree, full_order))
        indices.append(idx)
    return RandomForest(trees, indices, params, X.shape[1])


def predict_forest(forest: RandomForest, X) -> np.ndarray:
    """Arithmetic mean of the per-tree predictions."""
    return forest.predict(X)


def prediction_variance(forest: RandomForest, X) -> np.ndarray:
    """Population variance of per-tree predictions; zero for a single tree."""
    return forest.prediction_variance(X)


def forest_to_dict(forest: RandomForest) -> dict:
    return {
        "schema": _FOREST_SCHEMA,
        "n_features": forest.n_features,
        "params": {
            "n_estimators": forest.params.n_estimators,
            "bootstrap": forest.params.bootstrap,
            "tree": {
                "min_samples_split": forest.params.tree.min_samples_split,
                "min_samples_leaf": forest.params.tree.min_samples_leaf,
                "max_depth": forest.params.tree.max_depth,
            },
        },
        "bootstrap_indices": [idx.tolist() for idx in forest.bootstrap_indices],
        "trees": [tree_to_dict(t) for t in forest.trees],
    }


def forest_from_dict(obj: dict) -> RandomForest:
    if obj.get("schema") != _FOREST_SCHEMA:
        raise ValueError(f"unsupported forest schema: {obj.get('schema')!r}")
    p = obj["params"]
    params = ForestParams(
        n_estimators=p["n_estimators"],
        tree=TreeParams(**p["tree"]),
        bootstrap=p["bootstrap"],
    )
    trees = [tree_from_dict(t) for t in obj["trees"]]
    indices = [np.asarray(i, np.int64) for i in obj["bootstrap_indices"]]
    return RandomForest(trees, indices, params, obj["n_features"])


def forest_to_json(forest: RandomForest) -> str:
    return json.dumps(forest_to_dict(forest), sort_keys=True, separators=(",", ":"))


def forest_from_json(text: str) -> RandomForest:
    return forest_from_dict(json.loads(text))
