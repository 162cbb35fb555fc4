"""clover: adaptive prediction intervals from conformity-score trees and forests."""

from .conformal import (
    Intervals,
    LocartModel,
    LoforestModel,
    MadAugmentor,
    MondrianModel,
    RegSplitModel,
    VarianceAugmentor,
    WeightedSplitModel,
    augment_features,
    compute_scores,
    conformal_cutoff,
    fit_locart,
    fit_loforest,
    fit_mondrian,
    fit_reg_split,
    fit_weighted_reg_split,
    locart_cutoff,
    loforest_cutoff,
    predict_interval,
)
from .data import Dataset, IndexSplit, empirical_quantile, load_csv, save_csv, split_indices
from .forest import ForestParams, RandomForest, fit_forest, predict_forest, prediction_variance
from .harness import (
    CalibratedModel,
    ExperimentConfig,
    ExperimentReport,
    calibrate_from_data,
    load_model,
    read_report,
    run_experiment,
    save_model,
    write_report,
)
from .metrics import MetricReport, ccad, interval_score, marginal_coverage, smis, smis_finite
from .rng import RngStream
from .simgen import (
    SETTING_KEYS,
    SimSetting,
    TrueMeanPredictor,
    conditional_sample,
    get_setting,
    make_conditional_sampler,
    oracle_cutoff,
    sample,
    true_mean,
)
from .tree import (
    RegressionTree,
    SplitRule,
    TreeParams,
    assign_leaf,
    best_split,
    fit_tree,
    predict_tree,
    pruning_path,
    select_pruned_tree,
    tree_from_json,
    tree_to_json,
)

__version__ = "0.1.0"
