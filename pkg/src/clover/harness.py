"""Experiment harness: replicated benchmarking of interval calibrators.

A flat config describes the data source (synthetic setting or CSV), the
methods to compare, sizes, and hyperparameters. Each replication derives
its own random substream from (seed, replication index), so reports are
byte-identical across runs and worker counts; wall-time fields are the one
exception and can be zeroed through report canonicalization.
"""
from __future__ import annotations

import concurrent.futures
import csv
import functools
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .conformal import (
    Intervals,
    LocartModel,
    LoforestModel,
    MadAugmentor,
    MondrianModel,
    RegSplitModel,
    VarianceAugmentor,
    WeightedSplitModel,
    CutoffTable,
    fit_locart,
    fit_loforest,
    fit_mondrian,
    fit_reg_split,
    fit_weighted_reg_split,
    predict_interval,
)
from .data import Dataset, load_csv, split_indices
from .forest import (
    ForestParams,
    RandomForest,
    fit_forest,
    forest_from_dict,
    forest_to_dict,
)
from .metrics import evaluate_intervals
from .rng import RngStream
from .simgen import get_setting, make_conditional_sampler, sample
from .tree import TreeParams, tree_from_dict, tree_to_dict

REPORT_SCHEMA = "clover-report/1"
MODEL_SCHEMA = "clover-model/1"

# canonical method keys, in reporting order
METHOD_KEYS = (
    "reg-split",
    "weighted-split",
    "mondrian",
    "locart",
    "a-locart",
    "loforest",
    "a-loforest",
    "w-loforest",
)

_ALIASES = {
    "w-reg-split": "weighted-split",
    "weighted-reg-split": "weighted-split",
    "regsplit": "reg-split",
}

# fixed substream ids, so adding or reordering methods never shifts streams
_STREAM_TRAIN, _STREAM_CAL, _STREAM_TEST = 0, 1, 2
_STREAM_BASE, _STREAM_MAD, _STREAM_CCAD, _STREAM_SPLIT = 3, 4, 5, 6
_METHOD_STREAM = {key: 10 + i for i, key in enumerate(METHOD_KEYS)}


def canonical_method(key: str) -> str:
    key = key.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in METHOD_KEYS:
        raise ValueError(f"unknown method key: {key!r} (known: {', '.join(METHOD_KEYS)})")
    return key


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; see README for the key-by-key schema."""

    setting: str | None = "heterosc"
    dataset: str | None = None
    target: str | None = None
    p: int = 1
    d: int = 20
    n_train: int = 2000
    n_cal: int = 2000
    n_test: int = 2000
    alpha: float = 0.1
    replications: int = 20
    methods: tuple[str, ...] = ("reg-split", "locart", "loforest")
    seed: int = 0
    base_trees: int = 100
    loforest_trees: int = 100
    min_samples_split: int = 100
    mondrian_bins: int = 30
    inner_split: bool = False
    inner_fraction: float = 0.5
    augmentation: tuple[str, ...] = ("variance",)
    ccad: bool = True
    b_y: int = 1000
    workers: int = 1

    def __post_init__(self):
        if (self.setting is None) == (self.dataset is None):
            raise ValueError("exactly one of setting/dataset must be given")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.setting is not None and min(self.n_train, self.n_cal, self.n_test) < 1:
            raise ValueError("sample sizes must be positive")
        methods = tuple(canonical_method(m) for m in _as_tuple(self.methods))
        if not methods:
            raise ValueError("at least one method is required")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "augmentation", _as_tuple(self.augmentation))
        for name in self.augmentation:
            if name not in ("variance", "mad"):
                raise ValueError(f"unknown augmentation statistic: {name!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        out["augmentation"] = list(self.augmentation)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def _as_tuple(value) -> tuple[str, ...]:
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return tuple(value)


@functools.lru_cache(maxsize=8)
def _load_dataset(path: str, target: str | None) -> Dataset:
    return load_csv(path, target=target)


class _CachedForest:
    """Read-through cache of per-tree predictions, keyed by array identity.

    Safe only while the cached arrays stay alive (the replication context
    holds them); avoids re-applying the base forest once per method.
    """

    __slots__ = ("forest", "_memo")

    def __init__(self, forest: RandomForest):
        self.forest = forest
        self._memo: dict = {}

    def tree_predictions(self, X) -> np.ndarray:
        key = id(X)
        hit = self._memo.get(key)
        if hit is None:
            hit = self.forest.tree_predictions(X)
            self._memo[key] = hit
        return hit

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)

    def prediction_variance(self, X) -> np.ndarray:
        return self.tree_predictions(X).var(axis=0)


class _Replication:
    """Everything one replication shares across methods."""

    def __init__(self, config: ExperimentConfig, rep: RngStream, train: Dataset, cal: Dataset, test: Dataset | None, setting=None):
        self.config = config
        self.rep = rep
        self.setting = setting
        self.X_train, self.y_train = train.features, train.targets
        self.X_cal, self.y_cal = cal.features, cal.targets
        self.X_test = test.features if test is not None else None
        self.y_test = test.targets if test is not None else None
        self.base_raw = fit_forest(
            self.X_train,
            self.y_train,
            ForestParams(n_estimators=config.base_trees),
            rep.child(_STREAM_BASE),
        )
        self.base = _CachedForest(self.base_raw)
        self._mad: _CachedForest | None = None

    @classmethod
    def for_replication(cls, config: ExperimentConfig, rep: RngStream) -> "_Replication":
        if config.setting is not None:
            setting = get_setting(config.setting, p=config.p, d=config.d)
            train = sample(setting, config.n_train, rep.child(_STREAM_TRAIN))
            cal = sample(setting, config.n_cal, rep.child(_STREAM_CAL))
            test = sample(setting, config.n_test, rep.child(_STREAM_TEST))
            return cls(config, rep, train, cal, test, setting=setting)
        data = _load_dataset(config.dataset, config.target)
        split, test_idx = split_indices(data.n, (0.4, 0.4, 0.2), rng=rep.child(_STREAM_SPLIT))
        return cls(
            config,
            rep,
            data.subset(split.train),
            data.subset(split.cal),
            data.subset(test_idx),
        )

    def mad_forest(self) -> _CachedForest:
        """Spread model: forest on the in-sample absolute residuals."""
        if self._mad is None:
            residuals = np.abs(self.y_train - self.base.predict(self.X_train))
            self._mad = _CachedForest(
                fit_forest(
                    self.X_train,
                    residuals,
                    ForestParams(n_estimators=self.config.base_trees),
                    self.rep.child(_STREAM_MAD),
                )
            )
        return self._mad

    def augmentors(self) -> tuple:
        out = []
        for name in self.config.augmentation:
            if name == "variance":
                out.append(VarianceAugmentor(self.base))
            else:
                out.append(MadAugmentor(self.mad_forest()))
        return tuple(out)

    def tree_params(self) -> TreeParams:
        return TreeParams(min_samples_split=self.config.min_samples_split)

    def loforest_params(self) -> ForestParams:
        return ForestParams(
            n_estimators=self.config.loforest_trees, tree=self.tree_params()
        )


def _fit_calibrator(key: str, ctx: _Replication, rng: RngStream):
    cfg = ctx.config
    if key == "reg-split":
        return fit_reg_split(ctx.base, ctx.X_cal, ctx.y_cal, cfg.alpha)
    if key == "weighted-split":
        return fit_weighted_reg_split(
            ctx.base, ctx.mad_forest(), ctx.X_cal, ctx.y_cal, cfg.alpha
        )
    if key == "mondrian":
        return fit_mondrian(
            ctx.base,
            VarianceAugmentor(ctx.base),
            ctx.X_cal,
            ctx.y_cal,
            cfg.alpha,
            k=cfg.mondrian_bins,
        )
    if key in ("locart", "a-locart"):
        return fit_locart(
            ctx.base,
            ctx.X_cal,
            ctx.y_cal,
            cfg.alpha,
            ctx.tree_params(),
            inner_split=cfg.inner_split,
            inner_fraction=cfg.inner_fraction,
            augmentors=ctx.augmentors() if key == "a-locart" else (),
            rng=rng,
        )
    if key in ("loforest", "a-loforest", "w-loforest"):
        weighted = key == "w-loforest"
        return fit_loforest(
            ctx.base,
            ctx.X_cal,
            ctx.y_cal,
            cfg.alpha,
            ctx.loforest_params(),
            inner_split=cfg.inner_split,
            inner_fraction=cfg.inner_fraction,
            augmentors=ctx.augmentors() if key == "a-loforest" else (),
            score_kind="weighted_residual" if weighted else "regression_residual",
            mad_predictor=ctx.mad_forest() if weighted else None,
            rng=rng,
        )
    raise AssertionError(key)


def _sanitize(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def _replicate(config: ExperimentConfig, r: int) -> list[dict]:
    rep = RngStream(config.seed).child(r)
    ctx = _Replication.for_replication(config, rep)
    sampler = make_conditional_sampler(ctx.setting) if ctx.setting is not None else None
    rows = []
    for key in config.methods:
        rng_m = rep.child(_METHOD_STREAM[key])
        t0 = time.perf_counter()
        model = _fit_calibrator(key, ctx, rng_m)
        fit_time = time.perf_counter() - t0
        t0 = time.perf_counter()
        iv = predict_interval(model, ctx.base, ctx.X_test)
        predict_time = time.perf_counter() - t0
        report = evaluate_intervals(
            iv,
            ctx.y_test,
            config.alpha,
            conditional_sampler=sampler if config.ccad else None,
            X_test=ctx.X_test,
            b_y=config.b_y,
            rng=rep.child(_STREAM_CCAD),
        )
        n_leaves = None
        if isinstance(model, LocartModel):
            n_leaves = model.tree.n_leaves
        rows.append(
            {
                "method": key,
                "replication": r,
                "amc": _sanitize(report.amc),
                "smis": _sanitize(report.smis),
                "smis_finite": _sanitize(report.smis_finite),
                "n_infinite": report.n_infinite,
                "has_infinite": report.n_infinite > 0,
                "ccad": _sanitize(report.ccad),
                "mean_width": _sanitize(report.mean_width),
                "n_leaves": n_leaves,
                "fit_time_s": fit_time,
                "predict_time_s": predict_time,
            }
        )
    return rows


def _replicate_task(config_dict: dict, r: int) -> list[dict]:
    return _replicate(ExperimentConfig.from_dict(config_dict), r)


_AGGREGATE_FIELDS = ("amc", "smis_finite", "ccad", "mean_width", "n_infinite")


def aggregate_rows(rows: list[dict], methods) -> dict:
    """Per-method mean and twice the standard error across replications."""
    out: dict = {}
    for key in methods:
        per_method = [row for row in rows if row["method"] == key]
        stats = {}
        for name in _AGGREGATE_FIELDS:
            values = [row[name] for row in per_method if row[name] is not None]
            if not values:
                stats[name] = {"mean": None, "two_se": None, "n": 0}
                continue
            arr = np.asarray(values, np.float64)
            se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
            stats[name] = {"mean": float(arr.mean()), "two_se": 2.0 * se, "n": arr.size}
        out[key] = stats
    return out


@dataclass(frozen=True)
class ExperimentReport:
    """Per-replication metric rows plus per-method aggregates."""

    config: dict
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def to_dict(self, canonical: bool = False) -> dict:
        rows = self.rows
        if canonical:
            rows = [dict(row, fit_time_s=0.0, predict_time_s=0.0) for row in rows]
        return {
            "schema": REPORT_SCHEMA,
            "config": self.config,
            "rows": rows,
            "aggregates": self.aggregates,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentReport":
        if obj.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema: {obj.get('schema')!r}")
        return cls(config=obj["config"], rows=obj["rows"], aggregates=obj["aggregates"])


def _worker_cap(requested: int) -> int:
    cap = os.environ.get("CLOVER_THREADS")
    if cap:
        return max(1, min(requested, int(cap)))
    return max(1, requested)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentReport:
    """Run every (method, replication) cell of the config.

    Replications execute independently on substreams of (seed, r); with
    `workers` > 1 they run in separate processes, and the merged report is
    byte-identical to the single-process one apart from wall times.
    """
    workers = _worker_cap(config.workers if workers is None else workers)
    reps = range(config.replications)
    if workers > 1:
        config_dict = config.to_dict()
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_replicate_task, [config_dict] * len(reps), reps))
    else:
        chunks = [_replicate(config, r) for r in reps]
    rows = [row for chunk in chunks for row in chunk]
    order = {key: i for i, key in enumerate(config.methods)}
    rows.sort(key=lambda row: (row["replication"], order[row["method"]]))
    return ExperimentReport(
        config=config.to_dict(),
        rows=rows,
        aggregates=aggregate_rows(rows, config.methods),
    )


_CSV_COLUMNS = (
    "method",
    "replication",
    "amc",
    "smis",
    "smis_finite",
    "n_infinite",
    "has_infinite",
    "ccad",
    "mean_width",
    "n_leaves",
    "fit_time_s",
    "predict_time_s",
)


def write_report(report: ExperimentReport, path, format: str = "json", canonical: bool = False) -> None:
    """Persist a report as schema-tagged JSON or flat per-replication CSV."""
    if format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(canonical), fh, sort_keys=True, indent=2)
            fh.write("\n")
    elif format == "csv":
        rows = report.to_dict(canonical)["rows"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            for row in rows:
                writer.writerow(
                    ["" if row[c] is None else row[c] for c in _CSV_COLUMNS]
                )
    else:
        raise ValueError(f"unknown report format: {format!r}")


def read_report(path) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# calibrated model bundles (fit once, predict anywhere)


@dataclass(frozen=True)
class CalibratedModel:
    """A fitted calibrator bundled with everything prediction needs."""

    method: str
    alpha: float
    base_forest: RandomForest
    calibrator: object
    mad_forest: RandomForest | None
    augmentation: tuple[str, ...]
    feature_names: tuple[str, ...]
    target_name: str

    def intervals(self, X) -> Intervals:
        return predict_interval(self.calibrator, self.base_forest, X)

    def cutoff(self, X) -> np.ndarray:
        return self.calibrator.cutoff(np.atleast_2d(np.asarray(X, np.float64)))


def calibrate_from_data(
    train: Dataset,
    cal: Dataset,
    method: str,
    alpha: float = 0.1,
    seed: int = 0,
    **hyper,
) -> CalibratedModel:
    """Fit a base forest on `train` and one calibrator on `cal`."""
    if train.d != cal.d:
        raise ValueError("train and calibration sets have different widths")
    key = canonical_method(method)
    config = ExperimentConfig(
        setting=None,
        dataset="<in-memory>",
        alpha=alpha,
        seed=seed,
        methods=(key,),
        **hyper,
    )
    rep = RngStream(seed).child(0)
    ctx = _Replication(config, rep, train, cal, test=None)
    calibrator = _fit_calibrator(key, ctx, rep.child(_METHOD_STREAM[key]))
    needs_mad = key in ("weighted-split", "w-loforest") or (
        key in ("a-locart", "a-loforest") and "mad" in config.augmentation
    )
    return CalibratedModel(
        method=key,
        alpha=alpha,
        base_forest=ctx.base_raw,
        calibrator=calibrator,
        mad_forest=ctx._mad.forest if needs_mad and ctx._mad is not None else None,
        augmentation=config.augmentation,
        feature_names=train.feature_names,
        target_name=train.target_name,
    )


def _enc(value: float):
    return None if math.isinf(value) else float(value)


def _dec(value) -> float:
    return float("inf") if value is None else float(value)


def _table_to_dict(table: CutoffTable) -> dict:
    return {
        "cutoffs": [_enc(c) for c in table.cutoffs],
        "counts": [int(c) for c in table.counts],
    }


def _table_from_dict(obj: dict) -> CutoffTable:
    return CutoffTable(
        cutoffs=np.asarray([_dec(c) for c in obj["cutoffs"]], np.float64),
        counts=np.asarray(obj["counts"], np.int64),
    )


def _calibrator_to_dict(calibrator) -> dict:
    if isinstance(calibrator, RegSplitModel):
        return {
            "type": "reg-split",
            "cutoff": _enc(calibrator.cutoff_value),
            "n_cal": calibrator.n_cal,
        }
    if isinstance(calibrator, WeightedSplitModel):
        return {
            "type": "weighted-split",
            "cutoff": _enc(calibrator.cutoff_value),
            "n_cal": calibrator.n_cal,
        }
    if isinstance(calibrator, MondrianModel):
        return {
            "type": "mondrian",
            "edges": [float(e) for e in calibrator.edges],
            "cutoffs": [_enc(c) for c in calibrator.cutoffs],
            "counts": [int(c) for c in calibrator.counts],
        }
    if isinstance(calibrator, LocartModel):
        return {
            "type": "locart",
            "tree": tree_to_dict(calibrator.tree),
            "table": _table_to_dict(calibrator.table),
        }
    if isinstance(calibrator, LoforestModel):
        return {
            "type": "loforest",
            "score_kind": calibrator.score_kind,
            "trees": [tree_to_dict(t) for t in calibrator.trees],
            "tables": [_table_to_dict(t) for t in calibrator.tables],
        }
    raise TypeError(f"cannot serialize calibrator of type {type(calibrator).__name__}")


def _calibrator_from_dict(obj, alpha, base_forest, mad_forest, augmentors):
    kind = obj["type"]
    if kind == "reg-split":
        return RegSplitModel(alpha=alpha, cutoff_value=_dec(obj["cutoff"]), n_cal=obj["n_cal"])
    if kind == "weighted-split":
        return WeightedSplitModel(
            alpha=alpha,
            cutoff_value=_dec(obj["cutoff"]),
            n_cal=obj["n_cal"],
            mad_predictor=mad_forest,
        )
    if kind == "mondrian":
        return MondrianModel(
            alpha=alpha,
            edges=np.asarray(obj["edges"], np.float64),
            cutoffs=np.asarray([_dec(c) for c in obj["cutoffs"]], np.float64),
            counts=np.asarray(obj["counts"], np.int64),
            difficulty=VarianceAugmentor(base_forest),
        )
    if kind == "locart":
        return LocartModel(
            tree=tree_from_dict(obj["tree"]),
            table=_table_from_dict(obj["table"]),
            alpha=alpha,
            augmentors=augmentors,
        )
    if kind == "loforest":
        return LoforestModel(
            trees=tuple(tree_from_dict(t) for t in obj["trees"]),
            tables=tuple(_table_from_dict(t) for t in obj["tables"]),
            alpha=alpha,
            augmentors=augmentors,
            score_kind=obj["score_kind"],
            mad_predictor=mad_forest,
        )
    raise ValueError(f"unknown calibrator type: {kind!r}")


def save_model(model: CalibratedModel, path) -> None:
    """Write a calibrated model bundle as schema-tagged JSON."""
    payload = {
        "schema": MODEL_SCHEMA,
        "method": model.method,
        "alpha": model.alpha,
        "augmentation": list(model.augmentation),
        "feature_names": list(model.feature_names),
        "target_name": model.target_name,
        "base_forest": forest_to_dict(model.base_forest),
        "mad_forest": None if model.mad_forest is None else forest_to_dict(model.mad_forest),
        "calibrator": _calibrator_to_dict(model.calibrator),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> CalibratedModel:
    """Load a model bundle; the loaded calibrator reproduces the saved
    cutoffs exactly."""
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"invalid model file {path}: {exc.msg} at byte {exc.pos}") from None
    if payload.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema: {payload.get('schema')!r}")
    base = forest_from_dict(payload["base_forest"])
    mad = None if payload["mad_forest"] is None else forest_from_dict(payload["mad_forest"])
    augmentors = []
    for name in payload["augmentation"]:
        if name == "variance":
            augmentors.append(VarianceAugmentor(base))
        elif name == "mad":
            augmentors.append(MadAugmentor(mad))
    key = payload["method"]
    uses_augmentation = key in ("a-locart", "a-loforest")
    calibrator = _calibrator_from_dict(
        payload["calibrator"],
        payload["alpha"],
        base,
        mad,
        tuple(augmentors) if uses_augmentation else (),
    )
    return CalibratedModel(
        method=key,
        alpha=payload["alpha"],
        base_forest=base,
        calibrator=calibrator,
        mad_forest=mad,
        augmentation=tuple(payload["augmentation"]),
        feature_names=tuple(payload["feature_names"]),
        target_name=payload["target_name"],
    )
