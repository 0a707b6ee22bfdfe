import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_auc, plain_gd, random_stream
from truncgrad.data import SparseExample, generate_synthetic, train_test_split
from truncgrad.evaluation import (
    CvPlan,
    accuracy,
    auc,
    cross_validate,
    evaluate,
    fold_assignment,
    mean_loss,
    predict_scores,
    sparsity_frontier,
    write_cv_csv,
    write_sweep_csv,
)
from truncgrad.learner import LearnerConfig, train
from truncgrad.loss import LossKind


class TestAuc:
    def test_examples(self):
        assert auc([0.9, 0.1], [1, -1]) == 1.0
        assert auc([0.5, 0.5], [1, -1]) == 0.5
        assert auc([0.1, 0.9], [1, -1]) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal(50)
        y = np.where(rng.random(50) < 0.5, 1.0, -1.0)
        assert abs(auc(s, y) - brute_auc(s, y)) <= 1e-12

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.sampled_from([-1.0, 1.0])), min_size=2, max_size=60))
    def test_matches_brute_force_with_ties(self, pairs):
        s = [float(a) for a, _ in pairs]
        y = [b for _, b in pairs]
        if len(set(y)) < 2:
            with pytest.raises(ValueError):
                auc(s, y)
        else:
            assert abs(auc(s, y) - brute_auc(s, y)) <= 1e-12

    def test_invariant_under_increasing_maps(self):
        rng = np.random.default_rng(1)
        s = rng.standard_normal(200)
        y = np.where(rng.random(200) < 0.4, 1.0, -1.0)
        base = auc(s, y)
        assert auc(np.exp(s), y) == pytest.approx(base, abs=1e-15)
        assert auc(3.0 * s - 7.0, y) == pytest.approx(base, abs=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            auc([1.0, 2.0], [1, 1])
        with pytest.raises(ValueError):
            auc([1.0], [1, -1])


class TestMetrics:
    def test_accuracy(self):
        assert accuracy([0.5, -0.2, 0.0, 2.0], [1, -1, 1, -1]) == 0.5
        assert accuracy([0.6, 0.4], [1, -1], threshold=0.5) == 1.0

    def test_mean_loss(self):
        assert mean_loss([0.5, 1.0], [1.0, 1.0]) == pytest.approx(0.125)
        assert mean_loss([2.0], [1.0], LossKind.HINGE) == 0.0

    def test_predict_scores_ignores_unknown_features(self):
        exs = [SparseExample(1.0, ((1, 2.0), (9, 5.0))), SparseExample(None, ())]
        assert predict_scores({1: 0.25}, exs) == [0.5, 0.0]

    def test_evaluate_regression_has_no_auc(self):
        out = evaluate({0: 1.0}, [SparseExample(0.5, ((0, 1.0),))], LearnerConfig())
        assert math.isnan(out["auc"]) and math.isnan(out["accuracy"])
        assert out["loss"] == 0.25


@pytest.fixture(scope="module")
def fixture_split():
    ds = generate_synthetic(600, 5, 100, 0.05, 0.0, seed=1, margin=0.3, scale=3.0)
    return train_test_split(ds.examples, 0.25, seed=1)


class TestFrontier:
    def test_baseline_and_ordering(self, fixture_split):
        tr, te = fixture_split
        base = LearnerConfig(eta=0.01, loss="hinge")
        res = sparsity_frontier(tr, te, base, [0.3, 0.01, 0.1])
        assert [r.value for r in res if r.value == 0.0] == [0.0]
        assert len(res) == 4
        assert [r.nnz for r in res] == sorted(r.nnz for r in res)
        zero = next(r for r in res if r.value == 0.0)
        assert zero.auc_ratio == 1.0
        # with g = 0 every feature that ever got a nonzero update is stored
        dense = plain_gd(tr, 0.01, "hinge", 107)
        assert zero.nnz == np.count_nonzero(dense)

    def test_huge_gravity_leaves_only_the_last_update(self, fixture_split):
        tr, te = fixture_split
        res = sparsity_frontier(tr, te, LearnerConfig(eta=0.01), [1e6])
        big = next(r for r in res if r.value == 1e6)
        # everything older than the final gradient step is truncated away
        assert big.nnz <= tr[-1].nnz

    def test_failures_are_recorded(self):
        stream = [SparseExample(1.0, ((1, 1e155),))] * 3 + [SparseExample(-1.0, ((2, 1e155),))] * 3
        res = sparsity_frontier(stream, stream, LearnerConfig(eta=1.0), [0.1])
        assert all(r.failed and "diverged" in r.error for r in res)
        res = sparsity_frontier(stream, stream, LearnerConfig(rule="rounding", theta=0.1), [math.inf], param="theta")
        assert any(r.failed and "finite theta" in r.error for r in res)
        assert res[-1].failed

    def test_theta_sweep_and_csv(self, fixture_split, tmp_path):
        tr, te = fixture_split
        res = sparsity_frontier(tr, te, LearnerConfig(rule="rounding", eta=0.01, loss="hinge", theta=0.1, K=10), [0.01, 0.05], param="theta")
        write_sweep_csv(tmp_path / "s.csv", res)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0].startswith("param,value,rule,eta,g,theta,K,loss,passes,auc")
        assert len(lines) == 4

    def test_bad_param(self, fixture_split):
        with pytest.raises(ValueError):
            sparsity_frontier([], [], LearnerConfig(), [0.1], param="eta")

    def test_parallel_matches_serial(self, fixture_split):
        tr, te = fixture_split
        base = LearnerConfig(eta=0.01, loss="hinge")
        a = sparsity_frontier(tr, te, base, [0.01, 0.1], jobs=1)
        b = sparsity_frontier(tr, te, base, [0.01, 0.1], jobs=2)
        assert [(r.value, r.nnz, r.auc) for r in a] == [(r.value, r.nnz, r.auc) for r in b]


class TestCrossValidation:
    def test_folds_partition(self):
        parts = fold_assignment(103, 10, seed=4)
        joined = np.sort(np.concatenate(parts))
        assert np.array_equal(joined, np.arange(103))
        assert all(len(p) in (10, 11) for p in parts)
        assert all(np.array_equal(a, b) for a, b in zip(parts, fold_assignment(103, 10, seed=4)))

    def test_single_config(self):
        stream = random_stream(50, 10, 3, 0, "classification")
        plan = CvPlan(folds=5, etas=[0.2], gs=[0.01])
        res = cross_validate(stream, plan, LearnerConfig())
        assert (res.best.eta, res.best.g) == (0.2, 0.01)
        assert len(res.entries) == 1 and len(res.entries[0].fold_metrics) == 5

    def test_dominant_config_wins(self, fixture_split):
        tr, _ = fixture_split
        plan = CvPlan(folds=4, etas=[0.01], gs=[0.0, 50.0], metric="auc")
        res = cross_validate(tr, plan, LearnerConfig(loss="hinge"))
        assert res.best.g == 0.0
        good, bad = res.entries
        assert all(a > b for a, b in zip(good.fold_metrics, bad.fold_metrics))

    def test_ties_go_to_larger_gravity(self, fixture_split):
        tr, _ = fixture_split
        plan = CvPlan(folds=3, etas=[0.01], gs=[0.0, 1e-6, 2e-6], metric="accuracy")
        res = cross_validate(tr, plan, LearnerConfig(loss="hinge"))
        best = max(e.mean for e in res.entries)
        tied = [e.cfg.g for e in res.entries if e.mean == best]
        assert res.best.g == max(tied)

    def test_tolerance_picks_sparsest(self, fixture_split, tmp_path):
        tr, _ = fixture_split
        plan = CvPlan(folds=3, etas=[0.01], gs=[0.0, 0.01, 0.03, 0.1, 1.0], metric="accuracy", tolerance=0.01)
        res = cross_validate(tr, plan, LearnerConfig(loss="hinge"), seed=2)
        best = max(e.mean for e in res.entries)
        ok = [e for e in res.entries if e.mean >= best - 0.01]
        chosen = next(e for e in res.entries if e.cfg == res.best)
        assert chosen in ok
        assert chosen.mean_nnz == min(e.mean_nnz for e in ok)
        again = cross_validate(tr, plan, LearnerConfig(loss="hinge"), seed=2)
        assert again.best == res.best
        write_cv_csv(tmp_path / "cv.csv", res, "accuracy")
        rows = (tmp_path / "cv.csv").read_text().splitlines()
        assert len(rows) == 6 and sum(r.split(",")[6] == "1" for r in rows[1:]) == 1

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            CvPlan(folds=1)
        with pytest.raises(ValueError):
            CvPlan(gs=[])
        with pytest.raises(ValueError):
            CvPlan(metric="f1")
        with pytest.raises(ValueError):
            cross_validate(random_stream(3, 5, 2, 0), CvPlan(folds=5), LearnerConfig())
