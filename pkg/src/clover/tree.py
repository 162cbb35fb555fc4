"""CART regression trees grown by greedy variance reduction.

Trees are stored as parallel node arrays (feature, threshold, child links,
per-node sample statistics), which keeps fitting and prediction in tight
numba loops and maps directly onto the JSON persistence schema. Growth is
fully deterministic: threshold candidates are midpoints between consecutive
distinct feature values, and ties are broken toward the smallest error sum,
then the lowest feature index, then the smallest threshold.

Post-pruning follows minimal cost-complexity pruning: the internal node with
the smallest per-leaf error increase is collapsed repeatedly, yielding a
nested path of subtrees from the full tree down to the root-only tree.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numba import njit

_UNBOUNDED = 1 << 30
# A candidate split must beat the parent error sum by more than this relative
# slack to count as a strict improvement.
_GAIN_EPS = 1e-12

_TREE_SCHEMA = "clover-tree/1"


@dataclass(frozen=True)
class TreeParams:
    """Pre-pruning controls. `max_depth=None` means unbounded growth."""

    min_samples_split: int = 100
    min_samples_leaf: int = 1
    max_depth: int | None = None

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")


@dataclass(frozen=True)
class SplitRule:
    feature: int
    threshold: float


@njit(cache=True)
def _feature_order(X):
    n, d = X.shape
    order = np.empty((d, n), np.int64)
    for j in range(d):
        order[j] = np.argsort(X[:, j])
    return order


@njit(cache=True)
def _grow(X, y, w, full_order, min_split, min_leaf, max_depth):
    """Grow a tree depth-first, returning parallel node arrays.

    `w` holds integer row multiplicities (a bootstrap resample as counts;
    all ones for a plain fit); sample-size limits apply to multiset counts.
    One row ordering per feature, kept sorted inside every node segment
    together with its feature values, targets, and weights, makes each
    node's split search a sequential scan per feature.
    """
    n, d = X.shape
    # distinct rows actually present
    n_eff = 0
    n_total = 0
    for r in range(n):
        if w[r] > 0:
            n_eff += 1
            n_total += w[r]
    max_nodes = 2 * n_total + 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.full(max_nodes, np.nan, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    count = np.zeros(max_nodes, np.int64)
    mean = np.zeros(max_nodes, np.float64)
    sse = np.zeros(max_nodes, np.float64)

    order = np.empty((d, n_eff), np.int64)
    values = np.empty((d, n_eff), np.float64)
    ys = np.empty((d, n_eff), np.float64)
    ws = np.empty((d, n_eff), np.float64)
    for j in range(d):
        k = 0
        for i in range(n):
            r = full_order[j, i]
            if w[r] > 0:
                order[j, k] = r
                values[j, k] = X[r, j]
                ys[j, k] = y[r]
                ws[j, k] = w[r]
                k += 1
    lo = np.empty(n_eff, np.int64)
    lv = np.empty(n_eff, np.float64)
    ly = np.empty(n_eff, np.float64)
    lw = np.empty(n_eff, np.float64)
    ro = np.empty(n_eff, np.int64)
    rv = np.empty(n_eff, np.float64)
    ry = np.empty(n_eff, np.float64)
    rw = np.empty(n_eff, np.float64)
    goes_left = np.empty(n, np.bool_)

    # stack rows: node id, segment start, segment end, depth
    stack = np.empty((max_nodes, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_eff
    stack[0, 3] = 0
    top = 0
    n_nodes = 1

    while top >= 0:
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        top -= 1

        total = 0.0
        m = 0.0
        y_min = np.inf
        y_max = -np.inf
        for i in range(start, end):
            v = ys[0, i]
            total += ws[0, i] * v
            m += ws[0, i]
            if v < y_min:
                y_min = v
            if v > y_max:
                y_max = v
        mu = total / m
        q = 0.0
        for i in range(start, end):
            dv = ys[0, i] - mu
            q += ws[0, i] * dv * dv
        count[node] = np.int64(m)
        mean[node] = mu
        sse[node] = q

        if m < min_split or depth >= max_depth or y_min == y_max:
            continue

        # Minimizing the children error sum is equivalent to maximizing
        # (sum_L)^2/n_L + (sum_R)^2/n_R; scan order fixes the tie-break.
        best_term = -np.inf
        best_f = -1
        best_thr = 0.0
        best_pos = 0
        for j in range(d):
            run = 0.0
            nl = 0.0
            for i in range(start, end - 1):
                run += ws[j, i] * ys[j, i]
                nl += ws[j, i]
                nr = m - nl
                if nr < min_leaf:
                    break
                if nl < min_leaf:
                    continue
                xv = values[j, i]
                xn = values[j, i + 1]
                if xn <= xv:
                    continue
                rest = total - run
                term = run * run / nl + rest * rest / nr
                if term > best_term:
                    best_term = term
                    best_f = j
                    best_thr = 0.5 * (xv + xn)
                    best_pos = i + 1 - start
        if best_f < 0:
            continue

        # Verify strict improvement with exact two-pass child error sums.
        split_at = start + best_pos
        sl = 0.0
        nl = 0.0
        for i in range(start, split_at):
            sl += ws[best_f, i] * ys[best_f, i]
            nl += ws[best_f, i]
        ml = sl / nl
        mr = (total - sl) / (m - nl)
        ql = 0.0
        for i in range(start, split_at):
            dv = ys[best_f, i] - ml
            ql += ws[best_f, i] * dv * dv
        qr = 0.0
        for i in range(split_at, end):
            dv = ys[best_f, i] - mr
            qr += ws[best_f, i] * dv * dv
        if not ql + qr < q * (1.0 - _GAIN_EPS):
            continue

        for i in range(start, end):
            goes_left[order[best_f, i]] = i < split_at
        for j in range(d):
            a = 0
            b = 0
            for i in range(start, end):
                row = order[j, i]
                if goes_left[row]:
                    lo[a] = row
                    lv[a] = values[j, i]
                    ly[a] = ys[j, i]
                    lw[a] = ws[j, i]
                    a += 1
                else:
                    ro[b] = row
                    rv[b] = values[j, i]
                    ry[b] = ys[j, i]
                    rw[b] = ws[j, i]
                    b += 1
            for i2 in range(a):
                order[j, start + i2] = lo[i2]
                values[j, start + i2] = lv[i2]
                ys[j, start + i2] = ly[i2]
                ws[j, start + i2] = lw[i2]
            for i2 in range(b):
                order[j, start + a + i2] = ro[i2]
                values[j, start + a + i2] = rv[i2]
                ys[j, start + a + i2] = ry[i2]
                ws[j, start + a + i2] = rw[i2]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lid
        right[node] = rid
        top += 1
        stack[top, 0] = rid
        stack[top, 1] = split_at
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lid
        stack[top, 1] = start
        stack[top, 2] = split_at
        stack[top, 3] = depth + 1

    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        count[:n_nodes],
        mean[:n_nodes],
        sse[:n_nodes],
    )


@njit(cache=True)
def _apply_rows(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


class RegressionTree:
    """A fitted tree over a fixed feature dimension.

    Immutable after fitting; prediction and leaf assignment are lock-free.
    Leaves carry dense ids 0..L-1 in node order, so the leaf set is a
    partition of the feature space addressable by a small integer.
    """

    __slots__ = (
        "feature",
        "threshold",
        "left",
        "right",
        "count",
        "mean",
        "sse",
        "leaf_id",
        "params",
        "n_features",
        "_path_cache",
    )

    def __init__(self, feature, threshold, left, right, count, mean, sse, params, n_features):
        self.feature = np.asarray(feature, np.int64)
        self.threshold = np.asarray(threshold, np.float64)
        self.left = np.asarray(left, np.int64)
        self.right = np.asarray(right, np.int64)
        self.count = np.asarray(count, np.int64)
        self.mean = np.asarray(mean, np.float64)
        self.sse = np.asarray(sse, np.float64)
        self.params = params
        self.n_features = int(n_features)
        leaf_id = np.full(self.feature.shape[0], -1, np.int64)
        leaf_id[self.feature < 0] = np.arange(int((self.feature < 0).sum()))
        self.leaf_id = leaf_id
        self._path_cache = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def pruning_path(self) -> tuple[tuple[float, int], ...]:
        """(effective_alpha, leaf_count) pairs along the cost-complexity path."""
        return tuple((alpha, sub.n_leaves) for alpha, sub in pruning_path(self))

    def _check_dim(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.asarray(X, np.float64))
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"dimension mismatch: tree expects {self.n_features} features, "
                f"got shape {X.shape}"
            )
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf id of each row."""
        X = self._check_dim(X)
        nodes = _apply_rows(self.feature, self.threshold, self.left, self.right, X)
        return self.leaf_id[nodes]

    def predict(self, X) -> np.ndarray:
        """Mean response of the leaf each row falls into."""
        X = self._check_dim(X)
        nodes = _apply_rows(self.feature, self.threshold, self.left, self.right, X)
        return self.mean[nodes]


def _two_pass_sse(y: np.ndarray) -> float:
    if y.size == 0:
        return 0.0
    mu = y.mean()
    return float(((y - mu) ** 2).sum())


def _fit_weighted(X, y, weights, params: TreeParams, full_order=None) -> RegressionTree:
    """Weighted growth: `weights` are integer row multiplicities, so a
    bootstrap resample fits without materializing duplicate rows.
    `full_order` (per-feature argsort of X) may be shared across trees."""
    if full_order is None:
        full_order = _feature_order(X)
    depth = _UNBOUNDED if params.max_depth is None else params.max_depth
    arrays = _grow(
        X, y, weights, full_order, params.min_samples_split, params.min_samples_leaf, depth
    )
    return RegressionTree(*arrays, params=params, n_features=X.shape[1])


def fit_tree(X, y, params: TreeParams | None = None, rng=None) -> RegressionTree:
    """Grow a tree by recursive best splits until no admissible split strictly
    reduces the error sum or a pre-pruning limit is hit. Growth is
    deterministic; `rng` is accepted for interface symmetry and unused.
    """
    X = np.ascontiguousarray(np.asarray(X, np.float64))
    y = np.asarray(y, np.float64).ravel()
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y row counts differ")
    params = params or TreeParams()
    return _fit_weighted(X, y, np.ones(X.shape[0], np.int64), params)


def best_split(X, y, min_samples_leaf: int = 1):
    """Best (feature, threshold) pair for one node, or None.

    Minimizes the summed squared error of the two children over all
    midpoints between consecutive distinct feature values, subject to both
    children holding at least `min_samples_leaf` rows. Returns
    (SplitRule, children error sum); None when no admissible split strictly
    reduces the node error sum.
    """
    X = np.ascontiguousarray(np.asarray(X, np.float64))
    y = np.asarray(y, np.float64).ravel()
    if X.shape[0] < 2:
        return None
    arrays = _grow(
        X, y, np.ones(X.shape[0], np.int64), _feature_order(X), 2, min_samples_leaf, 1
    )
    feature = arrays[0]
    if feature[0] < 0:
        return None
    rule = SplitRule(int(feature[0]), float(arrays[1][0]))
    mask = X[:, rule.feature] <= rule.threshold
    child_sse = _two_pass_sse(y[mask]) + _two_pass_sse(y[~mask])
    if not child_sse < _two_pass_sse(y) * (1.0 - _GAIN_EPS):
        return None
    return rule, child_sse


def _realize_subtree(tree: RegressionTree, collapsed: set[int]) -> RegressionTree:
    """Materialize the subtree obtained by turning `collapsed` nodes into leaves."""
    feature, threshold, left, right = [], [], [], []
    count, mean, sse = [], [], []
    stack = [(0, -1, False)]  # (old node, new parent, is_left)
    while stack:
        old, parent, is_left = stack.pop()
        new = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = new
            else:
                right[parent] = new
        is_leaf = tree.feature[old] < 0 or old in collapsed
        feature.append(-1 if is_leaf else int(tree.feature[old]))
        threshold.append(np.nan if is_leaf else float(tree.threshold[old]))
        left.append(-1)
        right.append(-1)
        count.append(int(tree.count[old]))
        mean.append(float(tree.mean[old]))
        sse.append(float(tree.sse[old]))
        if not is_leaf:
            stack.append((int(tree.right[old]), new, False))
            stack.append((int(tree.left[old]), new, True))
    return RegressionTree(
        np.asarray(feature),
        np.asarray(threshold),
        np.asarray(left),
        np.asarray(right),
        np.asarray(count),
        np.asarray(mean),
        np.asarray(sse),
        params=tree.params,
        n_features=tree.n_features,
    )


def pruning_path(tree: RegressionTree) -> list[tuple[float, RegressionTree]]:
    """Minimal cost-complexity pruning sequence.

    Repeatedly collapses the internal node(s) with the smallest per-leaf
    error increase g(t) = (sse(t) - subtree_sse(t)) / (subtree_leaves(t) - 1)
    until only the root remains. Returns (effective_alpha, subtree) pairs
    with strictly increasing alphas, starting at (0, full tree).
    """
    if tree._path_cache is not None:
        return list(tree._path_cache)
    path: list[tuple[float, RegressionTree]] = [(0.0, tree)]
    if tree.n_nodes == 1:
        tree._path_cache = tuple(path)
        return path

    n_nodes = tree.n_nodes
    collapsed: set[int] = set()

    while 0 not in collapsed:
        # bottom-up subtree stats over the current (partially collapsed) tree
        sub_sse = np.zeros(n_nodes)
        sub_leaves = np.zeros(n_nodes, np.int64)
        for t in range(n_nodes - 1, -1, -1):
            if tree.feature[t] < 0 or t in collapsed:
                sub_sse[t] = tree.sse[t]
                sub_leaves[t] = 1
            else:
                l, r = tree.left[t], tree.right[t]
                sub_sse[t] = sub_sse[l] + sub_sse[r]
                sub_leaves[t] = sub_leaves[l] + sub_leaves[r]
        # reachability: skip nodes hidden under an already collapsed ancestor
        reachable = np.zeros(n_nodes, np.bool_)
        reachable[0] = True
        for t in range(n_nodes):
            if reachable[t] and tree.feature[t] >= 0 and t not in collapsed:
                reachable[tree.left[t]] = True
                reachable[tree.right[t]] = True

        g_min = np.inf
        argmin: list[int] = []
        for t in range(n_nodes):
            if not reachable[t] or tree.feature[t] < 0 or t in collapsed:
                continue
            g = (tree.sse[t] - sub_sse[t]) / (sub_leaves[t] - 1)
            if g < g_min:
                g_min = g
                argmin = [t]
            elif g == g_min:
                argmin.append(t)
        collapsed.update(argmin)
        subtree = _realize_subtree(tree, collapsed)
        if g_min <= path[-1][0]:
            # equal alphas merge: at a given penalty the most-pruned tree wins
            path[-1] = (path[-1][0], subtree)
        else:
            path.append((float(g_min), subtree))
    tree._path_cache = tuple(path)
    return path


def select_pruned_tree(tree: RegressionTree, X_val, y_val) -> RegressionTree:
    """Subtree on the pruning path with the smallest validation MSE.

    Ties go to the smaller subtree.
    """
    X_val = np.asarray(X_val, np.float64)
    y_val = np.asarray(y_val, np.float64).ravel()
    if y_val.size == 0:
        raise ValueError("empty validation set")
    best = None
    best_mse = np.inf
    for _, sub in pruning_path(tree):
        mse = float(np.mean((sub.predict(X_val) - y_val) ** 2))
        if mse <= best_mse:
            best, best_mse = sub, mse
    return best


def assign_leaf(tree: RegressionTree, x) -> int:
    """Leaf id of a single feature vector (threshold boundary routes left)."""
    return int(tree.apply(np.atleast_2d(np.asarray(x, np.float64)))[0])


def predict_tree(tree: RegressionTree, x) -> float:
    """Mean response of the leaf containing `x`."""
    return float(tree.predict(np.atleast_2d(np.asarray(x, np.float64)))[0])


def tree_to_dict(tree: RegressionTree) -> dict:
    parent = np.full(tree.n_nodes, -1, np.int64)
    for t in range(tree.n_nodes):
        if tree.feature[t] >= 0:
            parent[tree.left[t]] = t
            parent[tree.right[t]] = t
    nodes = []
    for t in range(tree.n_nodes):
        node = {
            "id": t,
            "parent": int(parent[t]),
            "n": int(tree.count[t]),
            "mean": float(tree.mean[t]),
            "sse": float(tree.sse[t]),
        }
        if tree.feature[t] >= 0:
            node["kind"] = "split"
            node["feature"] = int(tree.feature[t])
            node["threshold"] = float(tree.threshold[t])
            node["left"] = int(tree.left[t])
            node["right"] = int(tree.right[t])
        else:
            node["kind"] = "leaf"
            node["leaf"] = int(tree.leaf_id[t])
        nodes.append(node)
    return {
        "schema": _TREE_SCHEMA,
        "n_features": tree.n_features,
        "params": {
            "min_samples_split": tree.params.min_samples_split,
            "min_samples_leaf": tree.params.min_samples_leaf,
            "max_depth": tree.params.max_depth,
        },
        "nodes": nodes,
    }


def tree_from_dict(obj: dict) -> RegressionTree:
    if obj.get("schema") != _TREE_SCHEMA:
        raise ValueError(f"unsupported tree schema: {obj.get('schema')!r}")
    nodes = obj["nodes"]
    n = len(nodes)
    feature = np.full(n, -1, np.int64)
    threshold = np.full(n, np.nan)
    left = np.full(n, -1, np.int64)
    right = np.full(n, -1, np.int64)
    count = np.zeros(n, np.int64)
    mean = np.zeros(n)
    sse = np.zeros(n)
    for node in nodes:
        t = node["id"]
        count[t] = node["n"]
        mean[t] = node["mean"]
        sse[t] = node["sse"]
        if node["kind"] == "split":
            feature[t] = node["feature"]
            threshold[t] = node["threshold"]
            left[t] = node["left"]
            right[t] = node["right"]
    params = TreeParams(**obj["params"])
    return RegressionTree(
        feature, threshold, left, right, count, mean, sse,
        params=params, n_features=obj["n_features"],
    )


def tree_to_json(tree: RegressionTree) -> str:
    """Serialize to the documented node-list schema; byte-stable per fit."""
    return json.dumps(tree_to_dict(tree), sort_keys=True, separators=(",", ":"))


def tree_from_json(text: str) -> RegressionTree:
    return tree_from_dict(json.loads(text))
