import numpy as np
import pytest

from clover import (
    ForestParams,
    RngStream,
    TreeParams,
    augment_features,
    compute_scores,
    conformal_cutoff,
    fit_locart,
    fit_loforest,
    fit_mondrian,
    fit_reg_split,
    fit_weighted_reg_split,
    fit_tree,
    locart_cutoff,
    loforest_cutoff,
    predict_interval,
)
from clover.conformal import CutoffTable, LocartModel, LoforestModel, _leaf_cutoffs
from oracles import ConstantPredictor, OraclePredictor, conformal_cutoff_oracle

ALPHA = 0.1


def two_cluster_calibration():
    """x = 0 carries scores 1..19, x = 1 carries scores 11..29 (predictor 0)."""
    X = np.concatenate([np.zeros(19), np.ones(19)]).reshape(-1, 1)
    y = np.concatenate([np.arange(1.0, 20.0), np.arange(11.0, 30.0)])
    return X, y


class TestComputeScores:
    def test_perfect_predictor_gives_zero(self):
        g = RngStream(0).generator()
        X = g.uniform(0, 1, (20, 2))
        y = g.standard_normal(20)
        s = compute_scores(OraclePredictor(lambda Z: y), X, y)
        assert np.all(s == 0.0)

    def test_absolute_residual(self):
        s = compute_scores(ConstantPredictor(0.0), np.zeros((2, 1)), np.array([1.0, -2.0]))
        assert np.array_equal(s, [1.0, 2.0])

    def test_unit_spread_matches_plain(self):
        g = RngStream(1).generator()
        X = g.uniform(0, 1, (15, 2))
        y = g.standard_normal(15)
        plain = compute_scores(ConstantPredictor(0.3), X, y)
        weighted = compute_scores(
            ConstantPredictor(0.3), X, y, "weighted_residual", ConstantPredictor(1.0)
        )
        assert np.array_equal(plain, weighted)

    def test_degenerate_spread(self):
        with pytest.raises(ValueError, match="degenerate MAD"):
            compute_scores(
                ConstantPredictor(0.0),
                np.zeros((2, 1)),
                np.ones(2),
                "weighted_residual",
                ConstantPredictor(0.0),
            )

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown score kind"):
            compute_scores(ConstantPredictor(0.0), np.zeros((1, 1)), np.zeros(1), "huh")


class TestConformalCutoff:
    def test_nineteen_scores(self):
        assert conformal_cutoff(np.arange(1.0, 20.0), ALPHA) == 18.0

    def test_single_score_is_infinite(self):
        assert conformal_cutoff([5.0], ALPHA) == np.inf

    def test_hundred_scores(self):
        assert conformal_cutoff(np.arange(1.0, 101.0), ALPHA) == 91.0

    def test_empty_is_infinite(self):
        assert conformal_cutoff([], ALPHA) == np.inf

    def test_level_exactly_one_is_sample_max(self):
        # nine scores at alpha = 0.1: corrected level is exactly 1
        assert conformal_cutoff(np.arange(1.0, 10.0), 0.1) == 9.0

    def test_invalid_alpha(self):
        with pytest.raises(ValueError, match="alpha"):
            conformal_cutoff([1.0], 0.0)

    def test_matches_rank_enumeration_oracle(self):
        g = RngStream(21).generator()
        for _ in range(500):
            m = int(g.integers(1, 300))
            scores = g.exponential(2.0, m)
            alpha = float(g.uniform(0.01, 0.5))
            assert conformal_cutoff(scores, alpha) == conformal_cutoff_oracle(scores, alpha)

    def test_permutation_invariant(self):
        g = RngStream(22).generator()
        scores = g.exponential(1.0, 57)
        assert conformal_cutoff(scores, ALPHA) == conformal_cutoff(
            g.permutation(scores), ALPHA
        )


class TestRegSplit:
    def test_zero_scores_give_degenerate_intervals(self):
        X = np.zeros((25, 1))
        y = np.full(25, 2.0)
        model = fit_reg_split(ConstantPredictor(2.0), X, y, ALPHA)
        iv = predict_interval(model, ConstantPredictor(2.0), np.zeros((3, 1)))
        assert np.all(iv.lower == 2.0) and np.all(iv.upper == 2.0)

    def test_half_width_from_scores(self):
        X, y = np.zeros((19, 1)), np.arange(1.0, 20.0)
        model = fit_reg_split(ConstantPredictor(0.0), X, y, ALPHA)
        assert model.cutoff_value == 18.0
        iv = predict_interval(model, ConstantPredictor(5.0), np.zeros((1, 1)))
        assert (iv.lower[0], iv.center[0], iv.upper[0]) == (-13.0, 5.0, 23.0)


class TestWeightedRegSplit:
    def test_unit_spread_reduces_to_plain(self):
        g = RngStream(3).generator()
        X = g.uniform(0, 1, (40, 2))
        y = g.standard_normal(40)
        plain = fit_reg_split(ConstantPredictor(0.0), X, y, ALPHA)
        weighted = fit_weighted_reg_split(
            ConstantPredictor(0.0), ConstantPredictor(1.0), X, y, ALPHA
        )
        assert weighted.cutoff_value == plain.cutoff_value
        probes = g.uniform(0, 1, (10, 2))
        a = predict_interval(plain, ConstantPredictor(0.0), probes)
        b = predict_interval(weighted, ConstantPredictor(0.0), probes)
        assert np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper)

    def test_constant_spread_rescaling_leaves_widths_invariant(self):
        # dividing scores by rho and re-scaling the interval by rho cancel,
        # so a constant spread estimate acts like no normalization at all
        g = RngStream(4).generator()
        X = g.uniform(0, 1, (40, 2))
        y = g.standard_normal(40)
        one = fit_weighted_reg_split(ConstantPredictor(0.0), ConstantPredictor(1.0), X, y, ALPHA)
        two = fit_weighted_reg_split(ConstantPredictor(0.0), ConstantPredictor(2.0), X, y, ALPHA)
        assert two.cutoff_value == one.cutoff_value / 2
        probes = g.uniform(0, 1, (10, 2))
        w1 = predict_interval(one, ConstantPredictor(0.0), probes).width
        w2 = predict_interval(two, ConstantPredictor(0.0), probes).width
        assert np.allclose(w2, w1)

    def test_nonconstant_spread_shapes_widths(self):
        g = RngStream(4, 1).generator()
        X = g.uniform(0, 1, (60, 2))
        y = g.standard_normal(60)
        rho = OraclePredictor(lambda Z: 1.0 + Z[:, 0])
        model = fit_weighted_reg_split(ConstantPredictor(0.0), rho, X, y, ALPHA)
        lo = predict_interval(model, ConstantPredictor(0.0), np.array([[0.0, 0.5]]))
        hi = predict_interval(model, ConstantPredictor(0.0), np.array([[1.0, 0.5]]))
        assert np.allclose(hi.width, 2 * lo.width)


class TestMondrian:
    def test_single_bin_reduces_to_reg_split(self):
        g = RngStream(5).generator()
        X = g.uniform(0, 1, (60, 2))
        y = g.standard_normal(60)
        plain = fit_reg_split(ConstantPredictor(0.0), X, y, ALPHA)
        binned = fit_mondrian(
            ConstantPredictor(0.0), lambda Z: Z[:, 0], X, y, ALPHA, k=1
        )
        probes = g.uniform(0, 1, (100, 2))
        assert np.array_equal(binned.cutoff(probes), plain.cutoff(probes))

    def test_constant_difficulty_collapses_bins(self):
        g = RngStream(6).generator()
        X = g.uniform(0, 1, (60, 2))
        y = g.standard_normal(60)
        plain = fit_reg_split(ConstantPredictor(0.0), X, y, ALPHA)
        binned = fit_mondrian(
            ConstantPredictor(0.0), lambda Z: np.full(Z.shape[0], 3.3), X, y, ALPHA, k=30
        )
        assert len(binned.edges) == 1
        probes = g.uniform(0, 1, (100, 2))
        assert np.array_equal(binned.cutoff(probes), plain.cutoff(probes))

    def test_two_separated_clusters(self):
        X, y = two_cluster_calibration()
        model = fit_mondrian(ConstantPredictor(0.0), lambda Z: Z[:, 0], X, y, ALPHA, k=2)
        # hand partition: difficulty 0 cluster scores 1..19, cluster 1 scores 11..29
        assert model.cutoff(np.array([[0.0]]))[0] == conformal_cutoff(np.arange(1.0, 20.0), ALPHA)
        assert model.cutoff(np.array([[1.0]]))[0] == conformal_cutoff(np.arange(11.0, 30.0), ALPHA)
        # beyond the last edge clamps into the last bin
        assert model.cutoff(np.array([[99.0]]))[0] == model.cutoff(np.array([[1.0]]))[0]

    def test_rejects_bad_bin_count(self):
        with pytest.raises(ValueError, match="bin count"):
            fit_mondrian(ConstantPredictor(0.0), lambda Z: Z[:, 0], np.zeros((5, 1)), np.zeros(5), ALPHA, k=0)


class TestLocart:
    def test_single_leaf_reduces_to_reg_split(self):
        g = RngStream(7).generator()
        X = g.uniform(0, 1, (50, 2))
        y = g.standard_normal(50)
        plain = fit_reg_split(ConstantPredictor(0.0), X, y, ALPHA)
        model = fit_locart(
            ConstantPredictor(0.0), X, y, ALPHA, TreeParams(min_samples_split=1000)
        )
        assert model.tree.n_leaves == 1
        probes = g.uniform(0, 1, (100, 2))
        assert np.array_equal(model.cutoff(probes), plain.cutoff(probes))

    def test_two_leaf_cutoffs(self):
        X, y = two_cluster_calibration()
        model = fit_locart(
            ConstantPredictor(0.0), X, y, ALPHA,
            TreeParams(min_samples_split=2), post_prune=False,
        )
        assert model.tree.n_leaves == 2
        assert locart_cutoff(model, np.array([[0.0]]))[0] == 18.0
        assert locart_cutoff(model, np.array([[1.0]]))[0] == 28.0

    def test_empty_leaf_gets_infinite_cutoff(self):
        X, y = two_cluster_calibration()
        tree = fit_tree(X, compute_scores(ConstantPredictor(0.0), X, y), TreeParams(min_samples_split=2))
        # cutoff rows only reach the left leaf; the right one stays empty
        table = _leaf_cutoffs(tree, X[:19], np.arange(1.0, 20.0), ALPHA)
        assert table.cutoffs[tree.apply(np.array([[0.0]]))[0]] == 18.0
        assert table.cutoffs[tree.apply(np.array([[1.0]]))[0]] == np.inf
        model = LocartModel(tree=tree, table=table, alpha=ALPHA)
        iv = predict_interval(model, ConstantPredictor(0.0), np.array([[1.0]]))
        assert iv.infinite[0] and iv.contains(np.array([1e12]))[0]

    def test_inner_split_uses_disjoint_rows(self):
        g = RngStream(8).generator()
        X = g.uniform(0, 1, (400, 2))
        y = g.standard_normal(400)
        model = fit_locart(
            ConstantPredictor(0.0), X, y, ALPHA, TreeParams(min_samples_split=50),
            inner_split=True, rng=RngStream(9),
        )
        assert int(model.table.counts.sum()) == 200


class TestLoforest:
    def test_single_tree_reduces_to_locart(self):
        g = RngStream(10).generator()
        X = g.uniform(0, 1, (300, 2))
        y = g.standard_normal(300)
        locart = fit_locart(
            ConstantPredictor(0.0), X, y, ALPHA,
            TreeParams(min_samples_split=50), post_prune=False, rng=RngStream(11),
        )
        loforest = fit_loforest(
            ConstantPredictor(0.0), X, y, ALPHA,
            ForestParams(n_estimators=1, tree=TreeParams(min_samples_split=50), bootstrap=False),
            rng=RngStream(11),
        )
        probes = g.uniform(0, 1, (100, 2))
        assert np.array_equal(loforest_cutoff(loforest, probes), locart_cutoff(locart, probes))

    def test_single_leaf_trees_reduce_to_reg_split(self):
        g = RngStream(12).generator()
        X = g.uniform(0, 1, (60, 2))
        y = g.standard_normal(60)
        plain = fit_reg_split(ConstantPredictor(0.0), X, y, ALPHA)
        model = fit_loforest(
            ConstantPredictor(0.0), X, y, ALPHA,
            ForestParams(n_estimators=5, tree=TreeParams(min_samples_split=1000)),
            rng=RngStream(13),
        )
        probes = g.uniform(0, 1, (50, 2))
        assert np.allclose(loforest_cutoff(model, probes), plain.cutoff(probes))

    def test_deterministic(self):
        g = RngStream(14).generator()
        X = g.uniform(0, 1, (200, 2))
        y = g.standard_normal(200)
        probes = g.uniform(0, 1, (50, 2))
        a = fit_loforest(ConstantPredictor(0.0), X, y, ALPHA, rng=RngStream(15))
        b = fit_loforest(ConstantPredictor(0.0), X, y, ALPHA, rng=RngStream(15))
        assert np.array_equal(loforest_cutoff(a, probes), loforest_cutoff(b, probes))

    def test_mean_of_two_trees(self):
        leaf_tree = fit_tree(np.zeros((1, 1)), np.zeros(1), TreeParams(min_samples_split=2))
        model = LoforestModel(
            trees=(leaf_tree, leaf_tree),
            tables=(
                CutoffTable(np.array([2.0]), np.array([5])),
                CutoffTable(np.array([4.0]), np.array([5])),
            ),
            alpha=ALPHA,
        )
        assert loforest_cutoff(model, np.array([[7.0]]))[0] == 3.0

    def test_uncertifiable_cells_abstain(self):
        leaf_tree = fit_tree(np.zeros((1, 1)), np.zeros(1), TreeParams(min_samples_split=2))
        model = LoforestModel(
            trees=(leaf_tree, leaf_tree, leaf_tree),
            tables=(
                CutoffTable(np.array([2.0]), np.array([20])),
                CutoffTable(np.array([np.inf]), np.array([0])),
                CutoffTable(np.array([4.0]), np.array([20])),
            ),
            alpha=ALPHA,
        )
        assert loforest_cutoff(model, np.array([[0.0]]))[0] == 3.0
        all_out = LoforestModel(
            trees=(leaf_tree,),
            tables=(CutoffTable(np.array([np.inf]), np.array([0])),),
            alpha=ALPHA,
        )
        assert loforest_cutoff(all_out, np.array([[0.0]]))[0] == np.inf

    def test_tree_order_invariant(self):
        g = RngStream(16).generator()
        X = g.uniform(0, 1, (200, 2))
        y = g.standard_normal(200)
        model = fit_loforest(ConstantPredictor(0.0), X, y, ALPHA,
                             ForestParams(n_estimators=6, tree=TreeParams(min_samples_split=40)),
                             rng=RngStream(17))
        flipped = LoforestModel(
            trees=tuple(reversed(model.trees)),
            tables=tuple(reversed(model.tables)),
            alpha=model.alpha,
        )
        probes = g.uniform(0, 1, (40, 2))
        assert np.allclose(loforest_cutoff(model, probes), loforest_cutoff(flipped, probes))

    def test_weighted_scores_with_unit_spread_match_plain(self):
        g = RngStream(18).generator()
        X = g.uniform(0, 1, (300, 2))
        y = g.standard_normal(300)
        plain = fit_loforest(ConstantPredictor(0.0), X, y, ALPHA, rng=RngStream(19))
        weighted = fit_loforest(
            ConstantPredictor(0.0), X, y, ALPHA,
            score_kind="weighted_residual", mad_predictor=ConstantPredictor(1.0),
            rng=RngStream(19),
        )
        probes = g.uniform(0, 1, (60, 2))
        assert np.array_equal(loforest_cutoff(plain, probes), loforest_cutoff(weighted, probes))
        a = predict_interval(plain, ConstantPredictor(0.0), probes)
        b = predict_interval(weighted, ConstantPredictor(0.0), probes)
        assert np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper)


class TestAugmentation:
    def test_empty_list_is_identity(self):
        X = np.ones((4, 2))
        assert augment_features(X, ()) is X

    def test_appends_column(self):
        X = RngStream(20).generator().uniform(0, 1, (30, 3))
        out = augment_features(X, (lambda Z: Z[:, 0] * 2,))
        assert out.shape == (30, 4)
        assert np.array_equal(out[:, :3], X)
        assert np.array_equal(out[:, 3], X[:, 0] * 2)

    def test_constant_column_never_splits(self):
        g = RngStream(23).generator()
        X = g.uniform(0, 1, (200, 2))
        y = g.standard_normal(200)
        plain = fit_tree(X, y, TreeParams(min_samples_split=20))
        augmented = fit_tree(
            augment_features(X, (lambda Z: np.full(Z.shape[0], 9.9),)),
            y,
            TreeParams(min_samples_split=20),
        )
        assert not np.any(augmented.feature == 2)
        assert augmented.n_leaves == plain.n_leaves


class TestIntervalNesting:
    def test_lower_alpha_contains_higher(self):
        g = RngStream(24).generator()
        X = g.uniform(0, 1, (400, 2))
        y = g.standard_normal(400)
        probes = g.uniform(0, 1, (60, 2))
        predictor = ConstantPredictor(0.0)
        fits = {
            "reg-split": lambda a: fit_reg_split(predictor, X, y, a),
            "mondrian": lambda a: fit_mondrian(predictor, lambda Z: Z[:, 0], X, y, a, k=4),
            "locart": lambda a: fit_locart(
                predictor, X, y, a, TreeParams(min_samples_split=80), rng=RngStream(1)
            ),
            "loforest": lambda a: fit_loforest(
                predictor, X, y, a,
                ForestParams(n_estimators=10, tree=TreeParams(min_samples_split=80)),
                rng=RngStream(1),
            ),
        }
        for name, fit in fits.items():
            tight = predict_interval(fit(0.2), predictor, probes)
            wide = predict_interval(fit(0.05), predictor, probes)
            assert np.all(wide.lower <= tight.lower), name
            assert np.all(wide.upper >= tight.upper), name
