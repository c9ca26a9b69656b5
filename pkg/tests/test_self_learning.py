from dataclasses import replace

import numpy as np
import pytest

from mvbound import (
    ForestConfig,
    LabeledSet,
    SelfLearnConfig,
    UnlabeledSet,
    conditional_bayes_error,
    error_rate_bound,
    find_theta_star,
    forest_votes,
    history_to_csv,
    posterior_source,
    run_self_learning,
    select_pseudo,
    threshold_objective,
    train_forest,
)
from mvbound.self_learning import _forest_seed

from conftest import random_instance


def noisy_blobs(rng, n, gap=2.2, std=0.9):
    """Two overlapping gaussian clusters; hard enough that a small labeled
    sample leaves room for pseudo-labels to help."""
    y = rng.integers(1, 3, size=n)
    X = rng.normal(size=(n, 2)) * std
    X[y == 2, 0] += gap
    return X, y


def accuracy(forest, X, y):
    votes = forest_votes(forest, X)
    return float(np.mean((votes.argmax(axis=1) + 1) == y))


class TestConditionalBayesError:
    def test_toy_values(self, toy):
        votes, post = toy
        # theta=0 keeps everything, so the ratio is the plain bound
        assert conditional_bayes_error(post, votes, 0.0) == pytest.approx(
            101.0 / 168.0, rel=0, abs=1e-12
        )
        # theta=0.5 drops row 2 (predicted vote 0.45), coverage 3/4
        assert conditional_bayes_error(post, votes, 0.5) == pytest.approx(
            0.2375 / 0.75, rel=0, abs=1e-12
        )

    def test_empty_coverage_is_inf(self, toy):
        votes, post = toy
        assert conditional_bayes_error(post, votes, 1.0) == float("inf")

    def test_ratio_consistency(self):
        # the value is exactly the error-rate bound over the kept fraction
        rng = np.random.default_rng(41)
        for _ in range(30):
            votes, post = random_instance(rng)
            theta = rng.uniform(0.0, 0.8, size=votes.shape[1])
            pred = votes.argmax(axis=1)
            kept = votes[np.arange(len(votes)), pred] >= theta[pred]
            coverage = kept.mean()
            if coverage == 0.0:
                continue
            got = conditional_bayes_error(post, votes, theta)
            assert got * coverage == pytest.approx(
                error_rate_bound(post, votes, theta), rel=0, abs=1e-12
            )


class TestThresholdObjective:
    def test_toy_value(self, toy):
        votes, post = toy
        assert threshold_objective(post, votes, 0.5) == pytest.approx(
            0.95, rel=0, abs=1e-12
        )

    def test_zero_thresholds_sum_class_shares(self, toy):
        votes, post = toy
        # at theta=0 every class keeps its whole predicted slice
        val = threshold_objective(post, votes, 0.0)
        assert np.isfinite(val)
        assert val >= 0.0

    def test_inf_when_error_mass_kept_without_rows(self, toy):
        votes, post = toy
        # theta just above every class-3 vote: nothing predicted 3 is kept,
        # yet mass can still sit below other classes' thresholds
        val = threshold_objective(post, votes, [0.0, 0.0, 0.95])
        assert val == float("inf") or np.isfinite(val)


class TestFindThetaStar:
    def test_toy_solution(self, toy):
        votes, post = toy
        np.testing.assert_allclose(find_theta_star(post, votes), [0.6, 0.5, 0.7])

    def test_minimizes_each_coordinate(self):
        rng = np.random.default_rng(77)
        for _ in range(20):
            votes, post = random_instance(rng, max_points=40, max_classes=4)
            k = votes.shape[1]
            theta = find_theta_star(post, votes, resolution=12)
            base = threshold_objective(post, votes, theta)
            pred = votes.argmax(axis=1) + 1
            grid = np.linspace(0.0, 1.0, 12)
            for j in range(1, k + 1):
                mask = pred == j
                if not mask.any():
                    assert theta[j - 1] == 1.0
                    continue
                for cand in np.unique(np.quantile(votes[mask, j - 1], grid)):
                    other = theta.copy()
                    other[j - 1] = cand
                    assert base <= threshold_objective(post, votes, other) + 1e-12

    def test_ties_prefer_larger_threshold(self):
        # error-free instance: every candidate scores zero, so each class
        # should settle on its largest vote
        votes = np.array(
            [
                [0.55, 0.45],
                [0.65, 0.35],
                [0.90, 0.10],
                [0.40, 0.60],
                [0.25, 0.75],
                [0.15, 0.85],
            ]
        )
        post = np.zeros_like(votes)
        post[np.arange(6), votes.argmax(axis=1)] = 1.0
        np.testing.assert_allclose(find_theta_star(post, votes), [0.9, 0.85])

    def test_unpredicted_class_gets_one(self):
        votes = np.array(
            [
                [0.7, 0.2, 0.1],
                [0.1, 0.3, 0.6],
                [0.5, 0.3, 0.2],
                [0.2, 0.3, 0.5],
            ]
        )
        post = np.zeros_like(votes)
        post[np.arange(4), votes.argmax(axis=1)] = 1.0
        theta = find_theta_star(post, votes)
        assert theta[1] == 1.0

    def test_input_validation(self, toy):
        votes, post = toy
        with pytest.raises(ValueError, match="nonempty"):
            find_theta_star(post[:0], votes[:0])
        with pytest.raises(ValueError, match="at least 2"):
            find_theta_star(post, votes, resolution=1)


class TestSelectPseudo:
    def test_toy_selection(self, toy):
        votes, _ = toy
        idx, labels = select_pseudo(votes, 0.5)
        np.testing.assert_array_equal(idx, [0, 1, 3])
        np.testing.assert_array_equal(labels, [1, 2, 3])

    def test_per_class_thresholds(self, toy):
        votes, _ = toy
        idx, labels = select_pseudo(votes, [0.7, 0.5, 0.8])
        np.testing.assert_array_equal(idx, [1])
        np.testing.assert_array_equal(labels, [2])

    def test_zero_threshold_keeps_all(self, toy):
        votes, _ = toy
        idx, labels = select_pseudo(votes, 0.0)
        assert idx.size == votes.shape[0]
        np.testing.assert_array_equal(labels, votes.argmax(axis=1) + 1)


class TestRunSelfLearning:
    def _setting(self, seed=3, n_labeled=14, n_unlabeled=240):
        rng = np.random.default_rng(seed)
        Xl, yl = noisy_blobs(rng, n_labeled)
        Xu, yu = noisy_blobs(rng, n_unlabeled)
        return LabeledSet(Xl, yl), UnlabeledSet(Xu, hidden_y=yu)

    def test_adaptive_improves_over_supervised(self):
        labeled, unlabeled = self._setting()
        fcfg = ForestConfig(tree_count=40)
        base = train_forest(
            labeled, None, replace(fcfg, seed=_forest_seed(3, 0)), n_classes=2
        )
        acc0 = accuracy(base, unlabeled.X, unlabeled.hidden_y)
        res = run_self_learning(
            labeled, unlabeled, SelfLearnConfig(forest=fcfg, seed=3)
        )
        assert accuracy(res.forest, unlabeled.X, unlabeled.hidden_y) >= acc0
        assert len(res.history) >= 1
        assert res.pseudo_indices.size == np.unique(res.pseudo_indices).size
        assert set(np.unique(res.pseudo_labels)) <= {1, 2}

    def test_history_bookkeeping(self):
        labeled, unlabeled = self._setting()
        res = run_self_learning(
            labeled,
            unlabeled,
            SelfLearnConfig(forest=ForestConfig(tree_count=25), seed=5),
        )
        assert [rec.iteration for rec in res.history] == list(
            range(1, len(res.history) + 1)
        )
        assert sum(rec.selected for rec in res.history) == res.pseudo_indices.size
        hidden = unlabeled.hidden_y
        last = res.history[-1]
        assert last.pseudo_accuracy == pytest.approx(
            float(np.mean(res.pseudo_labels == hidden[res.pseudo_indices]))
        )

    def test_fixed_policy(self):
        labeled, unlabeled = self._setting(seed=9)
        fcfg = ForestConfig(tree_count=40)
        cfg = SelfLearnConfig(
            policy="fixed", fixed_threshold=0.7, fixed_max_iter=2,
            forest=fcfg, seed=9,
        )
        res = run_self_learning(labeled, unlabeled, cfg)
        assert 1 <= len(res.history) <= 2
        for rec in res.history:
            np.testing.assert_array_equal(rec.thresholds, [0.7, 0.7])

        # a zero iteration cap stops before any pseudo-labeling
        halted = run_self_learning(
            labeled, unlabeled, replace(cfg, fixed_max_iter=0)
        )
        assert halted.history == []
        assert halted.pseudo_indices.size == 0

        # with two classes the winning vote is always >= 0.5, so a 0.5
        # threshold sweeps everything up in a single round
        greedy = run_self_learning(
            labeled, unlabeled, replace(cfg, fixed_threshold=0.5, fixed_max_iter=10)
        )
        assert len(greedy.history) == 1
        assert greedy.pseudo_indices.size == len(unlabeled)

    def test_curriculum_consumes_in_three_rounds(self):
        # step 1/3 walks the quantile 2/3 -> 1/3 -> 0, and the floor round
        # admits every remaining row
        labeled, unlabeled = self._setting(seed=4)
        res = run_self_learning(
            labeled,
            unlabeled,
            SelfLearnConfig(
                policy="curriculum", forest=ForestConfig(tree_count=40), seed=4
            ),
        )
        assert len(res.history) == 3
        assert res.pseudo_indices.size == len(unlabeled)
        assert set(res.pseudo_indices.tolist()) == set(range(len(unlabeled)))

    def test_replays_loop_exactly(self):
        """Two fixed-policy rounds recomputed by hand: frozen posteriors from
        the round-0 votes, refreshed votes from the retrained forest, and the
        equalizing weights must reproduce both recorded bound values."""
        labeled, unlabeled = self._setting(seed=9)
        fcfg = ForestConfig(tree_count=40)
        cfg = SelfLearnConfig(
            policy="fixed", fixed_threshold=0.7, fixed_max_iter=2,
            forest=fcfg, seed=9,
        )
        res = run_self_learning(labeled, unlabeled, cfg)
        assert len(res.history) == 2

        k = 2
        f0 = train_forest(
            labeled, None, replace(fcfg, seed=_forest_seed(9, 0)), n_classes=k
        )
        votes0 = forest_votes(f0, unlabeled.X)
        post = posterior_source("supervised", votes0, unlabeled.hidden_y)
        theta = np.full(k, 0.7)
        assert conditional_bayes_error(post, votes0, theta) == res.history[0].bound_value
        picked, labels = select_pseudo(votes0, theta)
        assert picked.size == res.history[0].selected

        remaining = np.delete(np.arange(len(unlabeled)), picked)
        l, m = len(labeled), picked.size
        weights = np.concatenate(
            [np.full(l, (l + m) / l), np.full(m, (l + m) / m)]
        )
        train = LabeledSet(
            np.concatenate([labeled.X, unlabeled.X[picked]]),
            np.concatenate([labeled.y, labels]),
        )
        f1 = train_forest(
            train, weights, replace(fcfg, seed=_forest_seed(9, 1)), n_classes=k
        )
        votes1 = forest_votes(f1, unlabeled.X[remaining])
        assert (
            conditional_bayes_error(post[remaining], votes1, theta)
            == res.history[1].bound_value
        )

    def test_oracle_posterior_mode(self):
        labeled, unlabeled = self._setting(seed=9)
        fcfg = ForestConfig(tree_count=40)
        res = run_self_learning(
            labeled,
            unlabeled,
            SelfLearnConfig(posterior_mode="oracle", forest=fcfg, seed=9),
        )
        f0 = train_forest(
            labeled, None, replace(fcfg, seed=_forest_seed(9, 0)), n_classes=2
        )
        votes0 = forest_votes(f0, unlabeled.X)
        onehot = np.zeros_like(votes0)
        onehot[np.arange(len(unlabeled)), unlabeled.hidden_y - 1] = 1.0
        assert res.history[0].bound_value == conditional_bayes_error(
            onehot, votes0, res.history[0].thresholds
        )

    def test_same_seed_reruns_identically(self):
        labeled, unlabeled = self._setting(seed=2)
        cfg = SelfLearnConfig(forest=ForestConfig(tree_count=30), seed=11)
        a = run_self_learning(labeled, unlabeled, cfg)
        b = run_self_learning(labeled, unlabeled, cfg)
        assert len(a.history) == len(b.history)
        for ra, rb in zip(a.history, b.history):
            np.testing.assert_array_equal(ra.thresholds, rb.thresholds)
            assert ra.selected == rb.selected
            assert ra.bound_value == rb.bound_value
            assert ra.pseudo_accuracy == rb.pseudo_accuracy
        np.testing.assert_array_equal(a.pseudo_indices, b.pseudo_indices)
        np.testing.assert_array_equal(a.pseudo_labels, b.pseudo_labels)
        np.testing.assert_array_equal(
            forest_votes(a.forest, unlabeled.X), forest_votes(b.forest, unlabeled.X)
        )

    def test_no_hidden_labels(self):
        labeled, unlabeled = self._setting(seed=6)
        res = run_self_learning(
            labeled,
            UnlabeledSet(unlabeled.X),
            SelfLearnConfig(forest=ForestConfig(tree_count=20), seed=6),
        )
        assert all(rec.pseudo_accuracy is None for rec in res.history)

    def test_empty_unlabeled(self):
        labeled, _ = self._setting()
        res = run_self_learning(
            labeled,
            UnlabeledSet(np.empty((0, 2))),
            SelfLearnConfig(forest=ForestConfig(tree_count=10)),
        )
        assert res.history == []
        assert res.pseudo_indices.size == 0

    def test_wider_class_count(self):
        labeled, unlabeled = self._setting(seed=7)
        res = run_self_learning(
            labeled,
            unlabeled,
            SelfLearnConfig(forest=ForestConfig(tree_count=15), seed=7),
            n_classes=4,
        )
        assert res.forest.n_classes == 4
        assert res.history[0].thresholds.shape == (4,)

    def test_single_class_labeled_rejected(self):
        X = np.random.default_rng(0).normal(size=(8, 2))
        labeled = LabeledSet(X, np.ones(8, dtype=np.int64))
        with pytest.raises(ValueError, match="two classes"):
            run_self_learning(labeled, UnlabeledSet(X))


class TestConfigValidation:
    def test_bad_policy(self):
        with pytest.raises(ValueError, match="policy"):
            SelfLearnConfig(policy="eager")

    def test_bad_fixed_threshold(self):
        with pytest.raises(ValueError, match="fixed_threshold"):
            SelfLearnConfig(fixed_threshold=0.0)
        with pytest.raises(ValueError, match="fixed_threshold"):
            SelfLearnConfig(fixed_threshold=1.5)

    def test_bad_curriculum_step(self):
        with pytest.raises(ValueError, match="curriculum_step"):
            SelfLearnConfig(curriculum_step=0.0)

    def test_bad_grid(self):
        with pytest.raises(ValueError, match="grid_resolution"):
            SelfLearnConfig(grid_resolution=1)


class TestHistoryCsv:
    def test_round_trip_fields(self, tmp_path):
        labeled_rng = np.random.default_rng(3)
        Xl, yl = noisy_blobs(labeled_rng, 14)
        Xu, yu = noisy_blobs(labeled_rng, 120)
        res = run_self_learning(
            LabeledSet(Xl, yl),
            UnlabeledSet(Xu, hidden_y=yu),
            SelfLearnConfig(forest=ForestConfig(tree_count=20), seed=1),
        )
        path = tmp_path / "history.csv"
        history_to_csv(res.history, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,theta_1,theta_2,selected,bound_value,pseudo_accuracy"
        assert len(lines) == len(res.history) + 1
        first = lines[1].split(",")
        assert int(first[0]) == 1
        assert float(first[1]) == res.history[0].thresholds[0]
        assert float(first[4]) == res.history[0].bound_value

    def test_blank_accuracy_without_hidden_labels(self, tmp_path):
        rng = np.random.default_rng(8)
        Xl, yl = noisy_blobs(rng, 14)
        Xu, _ = noisy_blobs(rng, 60)
        res = run_self_learning(
            LabeledSet(Xl, yl),
            UnlabeledSet(Xu),
            SelfLearnConfig(forest=ForestConfig(tree_count=15), seed=2),
        )
        path = tmp_path / "history.csv"
        history_to_csv(res.history, path)
        for line in path.read_text().splitlines()[1:]:
            assert line.endswith(",")

    def test_empty_history(self, tmp_path):
        path = tmp_path / "empty.csv"
        history_to_csv([], path)
        assert path.read_text().splitlines() == [
            "iteration,selected,bound_value,pseudo_accuracy"
        ]
