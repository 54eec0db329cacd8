"""Metric, folding, trimming, grids, sweeps, and the CV driver."""

from __future__ import annotations

import math

import numpy as np
import pytest

from mivarsel.dataset import Dataset
from mivarsel.errors import DataError, NumericalError
from mivarsel.evaluation import (
    ComponentSweep,
    CvReport,
    LinearSweep,
    LssvmSweep,
    MetaGrid,
    RbfnSweep,
    TestSetGuard,
    cross_validate,
    default_centroid_counts,
    default_component_counts,
    default_gamma_values,
    default_sigma_values,
    default_wsf_values,
    grid_csv,
    kfold_split,
    load_report,
    median_pairwise_distance,
    nmse,
    pooled_target_variance,
    save_report,
    trim_outliers,
)
from mivarsel.models import fit_linear, fit_lssvm, fit_rbfn, predict_linear


class TestNmse:
    def test_perfect_predictions_score_zero(self):
        assert nmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 5.0) == 0.0

    def test_hand_computed_residuals(self):
        # residuals (1, -1): mean square 1, over normalizer 2.
        assert nmse([1.0, 0.0], [0.0, 1.0], 2.0) == 0.5

    def test_mean_predictor_scores_near_one(self):
        y = np.random.default_rng(0).normal(size=40)
        score = nmse(np.full(40, y.mean()), y, y.var(ddof=1))
        assert score == pytest.approx(39 / 40, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="equal non-empty"):
            nmse([1.0], [1.0, 2.0], 1.0)
        with pytest.raises(ValueError, match="equal non-empty"):
            nmse([], [], 1.0)
        with pytest.raises(ValueError, match="positive"):
            nmse([1.0], [1.0], 0.0)

    def test_pooled_variance_uses_all_samples(self):
        a = Dataset(np.zeros((3, 1)), np.array([1.0, 2.0, 3.0]))
        b = Dataset(np.zeros((2, 1)), np.array([10.0, 20.0]))
        pooled = np.array([1.0, 2.0, 3.0, 10.0, 20.0])
        assert pooled_target_variance(a, b) == pooled.var(ddof=1)

    def test_pooled_variance_rejects_constant_target(self):
        a = Dataset(np.zeros((3, 1)), np.full(3, 2.0))
        with pytest.raises(DataError, match="variance"):
            pooled_target_variance(a, a)


class TestKfoldSplit:
    def test_172_in_4_gives_equal_folds(self):
        folds = kfold_split(172, 4, 0)
        assert [len(f) for f in folds] == [43, 43, 43, 43]
        assert sorted(np.concatenate(folds).tolist()) == list(range(172))

    def test_149_in_3_gives_50_50_49(self):
        assert [len(f) for f in kfold_split(149, 3, 7)] == [50, 50, 49]

    def test_leave_one_out_structure(self):
        folds = kfold_split(6, 6, 1)
        assert [len(f) for f in folds] == [1] * 6
        assert sorted(int(f[0]) for f in folds) == list(range(6))

    def test_deterministic_and_seed_sensitive(self):
        a = kfold_split(50, 5, 3)
        b = kfold_split(50, 5, 3)
        c = kfold_split(50, 5, 4)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_folds_are_sorted(self):
        for f in kfold_split(30, 4, 9):
            assert np.array_equal(f, np.sort(f))

    def test_validation(self):
        with pytest.raises(ValueError, match="folds"):
            kfold_split(5, 6, 0)
        with pytest.raises(ValueError, match="at least 2"):
            kfold_split(5, 1, 0)


class TestTrimOutliers:
    def test_single_gross_outlier_dropped(self):
        e = np.random.default_rng(0).normal(size=100)
        e[17] = 50.0
        kept = trim_outliers(e)
        assert sorted(set(range(100)) - set(kept.tolist())) == [17]

    def test_two_planted_outliers_dropped(self):
        e = np.random.default_rng(0).normal(size=200)
        e[3] = 40.0
        e[150] = -35.0
        kept = trim_outliers(e)
        assert sorted(set(range(200)) - set(kept.tolist())) == [3, 150]

    def test_equal_errors_all_kept(self):
        assert len(trim_outliers(np.ones(50))) == 50

    def test_drop_budget_one_percent(self):
        rng = np.random.default_rng(1)
        for n in (43, 100, 200):
            for _ in range(20):
                kept = trim_outliers(rng.normal(size=n))
                assert n - len(kept) <= math.ceil(0.01 * n)

    def test_kept_indices_sorted_and_in_range(self):
        kept = trim_outliers(np.random.default_rng(2).normal(size=60))
        assert np.array_equal(kept, np.sort(kept))
        assert kept.min() >= 0 and kept.max() < 60

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            trim_outliers([])


class TestTestSetGuard:
    def test_single_read_allowed(self):
        d = Dataset(np.zeros((4, 2)), np.arange(4.0))
        guard = TestSetGuard(d)
        assert guard.take() is d
        assert guard.reads == 1

    def test_second_read_raises(self):
        guard = TestSetGuard(Dataset(np.zeros((4, 2)), np.arange(4.0)))
        guard.take()
        with pytest.raises(DataError, match="more than once"):
            guard.take()


class TestMetaGrid:
    def test_point_order_first_axis_slowest(self):
        g = MetaGrid("demo", (("a", (1.0, 2.0)), ("b", (10.0, 20.0, 30.0))))
        pts = g.points()
        assert len(g) == 6
        assert pts[0] == {"a": 1.0, "b": 10.0}
        assert pts[1] == {"a": 1.0, "b": 20.0}
        assert pts[3] == {"a": 2.0, "b": 10.0}

    def test_round_trip(self):
        g = MetaGrid("demo", (("a", (1.0, 2.0)),))
        assert MetaGrid.from_dict(g.to_dict()) == g

    def test_validation(self):
        with pytest.raises(ValueError, match="at least one axis"):
            MetaGrid("demo", ())
        with pytest.raises(ValueError, match="duplicate"):
            MetaGrid("demo", (("a", (1.0,)), ("a", (2.0,))))
        with pytest.raises(ValueError, match="no candidate"):
            MetaGrid("demo", (("a", ()),))


class TestGridBuilders:
    def test_median_pairwise_distance_hand_example(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
        # pair distances: 5, 10, 5
        assert median_pairwise_distance(x) == 5.0

    def test_component_counts_cap_at_fold_rank(self):
        assert default_component_counts(172, 102, 4) == tuple(range(1, 103))
        # 20 samples in 4 folds: learning folds of 15 rows support 14.
        assert default_component_counts(20, 50, 4) == tuple(range(1, 15))

    def test_centroid_counts(self):
        assert default_centroid_counts(172, 4) == tuple(range(1, 31))
        assert default_centroid_counts(20, 4) == tuple(range(1, 16))

    def test_wsf_axis(self):
        w = default_wsf_values()
        assert len(w) == 15
        assert w[0] == pytest.approx(0.1) and w[-1] == pytest.approx(10.0)

    def test_sigma_axis_anchored_to_data_scale(self):
        x = np.random.default_rng(0).normal(size=(25, 3))
        scale = median_pairwise_distance(x)
        s = default_sigma_values(x)
        assert len(s) == 100
        assert s[0] == pytest.approx(0.01 * scale)
        assert s[-1] == pytest.approx(100.0 * scale)

    def test_gamma_axis(self):
        g = default_gamma_values()
        assert len(g) == 300
        assert g[0] == pytest.approx(1e-3) and g[-1] == pytest.approx(1e6)


def _split_linear(seed=2, n=100, n_test=20, m=3, noise=0.01):
    rng = np.random.default_rng(seed)
    w = np.linspace(1.0, -2.0, m)
    x = rng.normal(size=(n, m))
    y = x @ w + noise * rng.normal(size=n)
    xt = rng.normal(size=(n_test, m))
    yt = xt @ w + noise * rng.normal(size=n_test)
    return Dataset(x, y), Dataset(xt, yt)


class TestSweepsAgainstCanonicalFits:
    def test_linear_sweep_matches_direct_fit(self):
        train, test = _split_linear()
        learn, valid = train.take_rows(np.arange(70)), train.take_rows(np.arange(70, 100))
        nl, nv, msg = LinearSweep().evaluate_fold(learn, valid, 2.0, False, False)
        m = fit_linear(learn)
        assert msg == {}
        assert nl[0] == np.mean((predict_linear(m, learn.X) - learn.y) ** 2) / 2.0
        assert nv[0] == np.mean((predict_linear(m, valid.X) - valid.y) ** 2) / 2.0

    @pytest.mark.parametrize("projection", ["pca", "pls"])
    def test_component_sweep_matches_per_count_fits(self, projection):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 8))
        y = x @ rng.normal(size=8) + 0.05 * rng.normal(size=50)
        d = Dataset(x, y)
        learn, valid = d.take_rows(np.arange(35)), d.take_rows(np.arange(35, 50))
        sweep = ComponentSweep(projection, range(1, 9))
        nl, nv, msg = sweep.evaluate_fold(learn, valid, 1.0, False, False)
        assert msg == {}
        for i, params in enumerate(sweep.grid.points()):
            m = sweep.fit(learn, params)
            el = np.mean((m.predict(learn.X) - learn.y) ** 2)
            ev = np.mean((m.predict(valid.X) - valid.y) ** 2)
            assert nl[i] == pytest.approx(el, rel=1e-10, abs=1e-14)
            assert nv[i] == pytest.approx(ev, rel=1e-10, abs=1e-14)

    def test_component_sweep_flags_counts_beyond_rank(self):
        rng = np.random.default_rng(3)
        t = rng.normal(size=(30, 4))
        x = np.hstack([t, t @ rng.normal(size=(4, 4))])  # rank 4 in 8 columns
        d = Dataset(x, t[:, 0])
        sweep = ComponentSweep("pca", range(1, 8))
        nl, nv, msg = sweep.evaluate_fold(
            d.take_rows(np.arange(20)), d.take_rows(np.arange(20, 30)), 1.0, False, False
        )
        assert np.all(np.isfinite(nl[:4])) and np.all(np.isnan(nl[4:]))
        assert set(msg) == {4, 5, 6}
        assert all("usable components" in m for m in msg.values())

    def test_rbfn_sweep_bitwise_equals_plain_fit(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(40, 2))
        y = np.sin(2 * x[:, 0]) + 0.1 * rng.normal(size=40)
        d = Dataset(x, y)
        learn, valid = d.take_rows(np.arange(30)), d.take_rows(np.arange(30, 40))
        sweep = RbfnSweep((1, 3, 5), (0.5, 1.0, 2.0), seed=9)
        nl, nv, msg = sweep.evaluate_fold(learn, valid, 1.0, False, False)
        assert msg == {}
        for i, params in enumerate(sweep.grid.points()):
            m = fit_rbfn(learn, params["centroids"], params["wsf"], seed=9)
            assert nl[i] == np.mean((m.predict(learn.X) - learn.y) ** 2)
            assert nv[i] == np.mean((m.predict(valid.X) - valid.y) ** 2)

    def test_lssvm_sweep_matches_dense_solver(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(60, 3))
        y = np.sin(x[:, 0]) + 0.1 * rng.normal(size=60)
        d = Dataset(x, y)
        learn, valid = d.take_rows(np.arange(40)), d.take_rows(np.arange(40, 60))
        sweep = LssvmSweep((0.5, 2.0), (1.0, 1e3, 1e6))
        nl, nv, msg = sweep.evaluate_fold(learn, valid, 1.0, False, False)
        assert msg == {}
        for i, params in enumerate(sweep.grid.points()):
            m = fit_lssvm(learn, params["sigma"], params["gamma"])
            el = np.mean((m.predict(learn.X) - learn.y) ** 2)
            ev = np.mean((m.predict(valid.X) - valid.y) ** 2)
            assert nl[i] == pytest.approx(el, rel=1e-6)
            assert nv[i] == pytest.approx(ev, rel=1e-6)


class TestCrossValidate:
    def test_single_point_grid_is_plain_fold_evaluation(self):
        train, test = _split_linear()
        var_y = pooled_target_variance(train, test)
        report, model = cross_validate(train, test, LinearSweep(), 4, 0, var_y)
        assert report.winner_index == 0
        assert len(report.rows) == 1
        assert report.winner_fold_nmse_v == report.rows[0].nmse_v
        # refit on all training rows beats noise level comfortably
        assert report.nmse_t < 1e-3
        assert report.test_reads == 1

    def test_linear_data_identified_by_component_search(self):
        train, test = _split_linear(seed=7, m=5, noise=0.0)
        var_y = pooled_target_variance(train, test)
        sweep = ComponentSweep("pls", range(1, 6))
        report, model = cross_validate(train, test, sweep, 4, 0, var_y)
        assert report.mean_nmse_v < 1e-20
        assert report.nmse_t < 1e-20

    def test_noise_never_selects_interpolating_rbfn(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(40, 2))
        y = rng.normal(size=40)
        train, test = Dataset(x[:32], y[:32]), Dataset(x[32:], y[32:])
        var_y = pooled_target_variance(train, test)
        sweep = RbfnSweep(range(1, 11), (0.5, 1.0, 2.0), seed=0)
        report, _ = cross_validate(train, test, sweep, 4, 0, var_y)
        assert report.winner_params["centroids"] < 10

    def test_exact_tie_prefers_earlier_grid_point(self):
        train, test = _split_linear(seed=8, n=40, n_test=10)
        var_y = pooled_target_variance(train, test)
        # duplicated wsf values make grid points 0 and 1 identical
        sweep = RbfnSweep((2,), (1.0, 1.0), seed=0)
        report, _ = cross_validate(train, test, sweep, 4, 0, var_y)
        assert report.rows[0].nmse_v == report.rows[1].nmse_v
        assert report.winner_index == 0

    def test_partial_grid_failures_recorded_not_fatal(self):
        rng = np.random.default_rng(9)
        t = rng.normal(size=(40, 3))
        x = np.hstack([t, t @ rng.normal(size=(3, 3))])  # rank 3 in 6 columns
        y = t[:, 0] + 0.01 * rng.normal(size=40)
        train = Dataset(x[:30], y[:30])
        test = Dataset(x[30:], y[30:])
        var_y = pooled_target_variance(train, test)
        sweep = ComponentSweep("pca", range(1, 7))
        report, _ = cross_validate(train, test, sweep, 3, 0, var_y)
        assert report.winner_params["components"] <= 3
        failed = [r for r in report.rows if r.error is not None]
        assert len(failed) == 3
        assert all(math.isnan(r.nmse_v[0]) for r in failed)

    def test_all_failures_raise(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(30, 3))
        x[:, 1] = 5.0  # constant column breaks scaled projections
        d = Dataset(x, x[:, 0])
        sweep = ComponentSweep("pca", (1, 2), scale=True)
        with pytest.raises(NumericalError, match="every grid point failed"):
            cross_validate(d, d, sweep, 3, 0, 1.0)

    def test_worker_count_never_changes_the_report(self):
        train, test = _split_linear(seed=11, n=60, n_test=12)
        var_y = pooled_target_variance(train, test)
        sweep = ComponentSweep("pca", range(1, 4))
        r1, _ = cross_validate(train, test, sweep, 4, 5, var_y, workers=1)
        r3, _ = cross_validate(train, test, sweep, 4, 5, var_y, workers=3)
        assert r1.to_dict() == r3.to_dict()

    def test_external_guard_is_honored(self):
        train, test = _split_linear(seed=12, n=40, n_test=8)
        var_y = pooled_target_variance(train, test)
        guard = TestSetGuard(test)
        report, _ = cross_validate(train, guard, LinearSweep(), 4, 0, var_y)
        assert guard.reads == 1 and report.test_reads == 1
        with pytest.raises(DataError):
            guard.take()

    def test_planted_training_outliers_get_trimmed(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(100, 3))
        y = x @ np.array([1.0, 2.0, -1.0]) + 0.01 * rng.normal(size=100)
        y[10] += 40.0
        y[60] -= 35.0
        xt = rng.normal(size=(20, 3))
        train = Dataset(x, y)
        test = Dataset(xt, xt @ np.array([1.0, 2.0, -1.0]))
        var_y = pooled_target_variance(train, test)
        # seed 0 places rows 10 and 60 into different validation folds
        report, _ = cross_validate(train, test, LinearSweep(), 4, 0, var_y)
        dropped = {i for fold in report.trimmed_per_fold for i in fold}
        assert {10, 60} <= dropped

    def test_trimmed_indices_lie_in_their_folds(self):
        train, test = _split_linear(seed=13, n=80, n_test=16)
        var_y = pooled_target_variance(train, test)
        report, _ = cross_validate(train, test, LinearSweep(), 4, 1, var_y)
        assert sorted(i for f in report.folds for i in f) == list(range(80))
        for fold, dropped in zip(report.folds, report.trimmed_per_fold):
            assert set(dropped) <= set(fold)

    def test_trimming_can_be_disabled(self):
        train, test = _split_linear(seed=14, n=50, n_test=10)
        var_y = pooled_target_variance(train, test)
        report, _ = cross_validate(
            train, test, LinearSweep(), 4, 0, var_y, trim_valid=False
        )
        assert all(len(t) == 0 for t in report.trimmed_per_fold)

    def test_winner_fold_scores_match_canonical_refits(self):
        train, test = _split_linear(seed=15, n=60, n_test=12)
        var_y = pooled_target_variance(train, test)
        sweep = RbfnSweep((2, 4), (1.0, 2.0), seed=1)
        report, _ = cross_validate(train, test, sweep, 3, 2, var_y)
        # the sweep's own matrix row for the winner agrees with the refit
        row = report.rows[report.winner_index]
        assert report.winner_fold_nmse_v == pytest.approx(row.nmse_v, rel=1e-12)
        assert report.winner_fold_nmse_l == pytest.approx(row.nmse_l, rel=1e-12)

    def test_report_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        t = rng.normal(size=(40, 3))
        x = np.hstack([t, t @ rng.normal(size=(3, 3))])
        y = t[:, 0] + 0.01 * rng.normal(size=40)
        train, test = Dataset(x[:30], y[:30]), Dataset(x[30:], y[30:])
        var_y = pooled_target_variance(train, test)
        sweep = ComponentSweep("pca", range(1, 7))  # rows 4..6 fail: nan round trip
        report, _ = cross_validate(train, test, sweep, 3, 0, var_y)
        path = tmp_path / "report.json"
        save_report(report, path)
        loaded = load_report(path)
        assert loaded.to_dict() == report.to_dict()
        assert math.isnan(loaded.rows[-1].nmse_v[0])

    def test_grid_csv_shape_and_failed_cells(self):
        rng = np.random.default_rng(9)
        t = rng.normal(size=(40, 3))
        x = np.hstack([t, t @ rng.normal(size=(3, 3))])
        y = t[:, 0] + 0.01 * rng.normal(size=40)
        train, test = Dataset(x[:30], y[:30]), Dataset(x[30:], y[30:])
        var_y = pooled_target_variance(train, test)
        report, _ = cross_validate(
            train, test, ComponentSweep("pca", range(1, 7)), 3, 0, var_y
        )
        lines = grid_csv(report).strip().split("\n")
        assert lines[0] == "grid_index,params,fold,nmse_l,nmse_v"
        assert len(lines) == 1 + 6 * 3
        last = lines[-1].split(",")
        assert last[1] == "components=6" and last[3] == "" and last[4] == ""

    def test_report_embeds_run_parameters(self):
        train, test = _split_linear(seed=16, n=30, n_test=6)
        var_y = pooled_target_variance(train, test)
        report, _ = cross_validate(train, test, LinearSweep(), 3, 42, var_y)
        assert (report.l, report.seed) == (3, 42)
        assert report.var_y == var_y
        assert (report.n_train, report.n_test) == (30, 6)
        assert isinstance(report, CvReport)
