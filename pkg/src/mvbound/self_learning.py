"""Bound-driven self-learning on top of the forest vote provider.

Each iteration trains a forest, scores the still-unlabeled rows, picks
per-class vote thresholds (policy-dependent), pseudo-labels everything whose
predicted-class vote clears its threshold, and retrains with the labeled and
pseudo-labeled parts reweighted to equal total influence. The posteriors
feeding the bound are frozen at the initial supervised classifier; the votes
driving selection are refreshed every iteration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    LabeledSet,
    as_thresholds,
    posterior_source,
    predict_bayes,
)
from .ensemble import Forest, ForestConfig, forest_votes, train_forest
from .trans_bounds import class_masses, error_rate_bound, vote_level_profile

POLICIES = ("adaptive", "fixed", "curriculum")


@dataclass
class SelfLearnConfig:
    """Loop configuration.

    adaptive    per-class thresholds minimizing the conditional error bound
    fixed       one global threshold on the predicted-class vote, capped at
                fixed_max_iter pseudo-labeling rounds
    curriculum  threshold = descending quantile of the predicted votes,
                dropping by curriculum_step per round until it reaches 0
    """

    policy: str = "adaptive"
    posterior_mode: str = "supervised"
    grid_resolution: int = 20
    fixed_threshold: float = 0.7
    fixed_max_iter: int = 10
    curriculum_step: float = 1.0 / 3.0
    forest: ForestConfig = field(default_factory=ForestConfig)
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if not 0.0 < self.fixed_threshold <= 1.0:
            raise ValueError("fixed_threshold must lie in (0, 1]")
        if not 0.0 < self.curriculum_step <= 1.0:
            raise ValueError("curriculum_step must lie in (0, 1]")
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be at least 2")


@dataclass
class IterationRecord:
    iteration: int
    thresholds: np.ndarray
    selected: int
    bound_value: float
    pseudo_accuracy: float | None = None


@dataclass
class SelfLearnResult:
    forest: Forest
    history: list[IterationRecord]
    pseudo_indices: np.ndarray
    pseudo_labels: np.ndarray


def conditional_bayes_error(post, votes, theta):
    """Bounded error mass over the kept fraction.

    Numerator: the error-rate bound at theta. Denominator: the fraction of
    rows whose predicted-class vote clears its threshold. +inf when nothing
    clears (the threshold search skips such candidates).
    """
    v = np.asarray(votes, dtype=np.float64)
    n, k = v.shape
    th = as_thresholds(theta, k)
    pred = predict_bayes(v)
    kept = v[np.arange(n), pred - 1] >= th[pred - 1]
    coverage = float(kept.mean())
    if coverage == 0.0:
        return float("inf")
    return error_rate_bound(post, v, th) / coverage


def _class_share_terms(post, votes, j, theta_j, profile=None, class_weights=None):
    """Numerator and denominator of class j's summand of the search objective:
    bounded error share routed to j above theta_j, and the kept fraction of
    rows predicted j."""
    p = np.asarray(post, dtype=np.float64)
    v = np.asarray(votes, dtype=np.float64)
    n, k = v.shape
    if profile is None:
        profile = vote_level_profile(p, v, j)
    if class_weights is None:
        u = class_masses(p)
        class_weights = u / u.sum()
    col = profile.bound(float(theta_j))
    col[profile.u <= 0.0] = 0.0
    col[j - 1] = 0.0
    num = float(class_weights @ col)
    pred_j = predict_bayes(v) == j
    den = float(np.count_nonzero(pred_j & (v[:, j - 1] >= theta_j))) / n
    return num, den


def threshold_objective(post, votes, theta):
    """Sum over classes of (bounded class error share)/(kept class fraction);
    the quantity the adaptive policy minimizes, separable per class. A class
    whose bounded share is positive while nothing is kept costs +inf; an
    entirely unpredicted class costs nothing."""
    v = np.asarray(votes, dtype=np.float64)
    k = v.shape[1]
    th = as_thresholds(theta, k)
    p = np.asarray(post, dtype=np.float64)
    u = class_masses(p)
    weights = u / u.sum()
    total = 0.0
    for j in range(1, k + 1):
        num, den = _class_share_terms(p, v, j, th[j - 1], class_weights=weights)
        if den == 0.0:
            if num > 0.0:
                return float("inf")
            continue
        total += num / den
    return total


def find_theta_star(post, votes, resolution=20):
    """Per-class threshold minimizing that class's share of the conditional
    error bound over its kept fraction.

    Candidates are `resolution` quantiles of the class's predicted votes
    (deduplicated); candidates keeping nothing are skipped; ties go to the
    larger threshold (fewer, safer pseudo-labels). Classes nobody predicts
    get threshold 1.0.
    """
    p = np.asarray(post, dtype=np.float64)
    v = np.asarray(votes, dtype=np.float64)
    n, k = v.shape
    if n == 0:
        raise ValueError("threshold search needs a nonempty sample")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    pred = predict_bayes(v)
    u = class_masses(p)
    weights = u / u.sum()
    grid = np.linspace(0.0, 1.0, int(resolution))
    theta = np.ones(k)
    for j in range(1, k + 1):
        mask = pred == j
        if not mask.any():
            continue
        candidates = np.unique(np.quantile(v[mask, j - 1], grid))
        profile = vote_level_profile(p, v, j)
        best = None
        best_score = np.inf
        for cand in candidates:
            num, den = _class_share_terms(
                p, v, j, cand, profile=profile, class_weights=weights
            )
            if den == 0.0:
                continue
            score = num / den
            if best is None or score <= best_score:
                best_score = score
                best = float(cand)
        theta[j - 1] = best
    return theta


def select_pseudo(votes, theta):
    """Rows whose predicted-class vote clears the class threshold.

    Returns (row indices, 1-based predicted labels).
    """
    v = np.asarray(votes, dtype=np.float64)
    n, k = v.shape
    th = as_thresholds(theta, k)
    pred = predict_bayes(v)
    keep = v[np.arange(n), pred - 1] >= th[pred - 1]
    idx = np.flatnonzero(keep)
    return idx, pred[idx]


def _forest_seed(base, iteration):
    word = np.random.SeedSequence((int(base), int(iteration))).generate_state(
        1, np.uint64
    )[0]
    return int(word)


def run_self_learning(labeled, unlabeled, config=None, n_classes=None, jobs=1):
    """Run the full self-learning loop.

    Parameters
    ----------
    labeled : LabeledSet covering at least two classes
    unlabeled : UnlabeledSet; hidden labels, when present, feed the oracle
        posterior mode and the per-iteration pseudo-label accuracy
    config : SelfLearnConfig
    n_classes : vote width when the labeled subset may miss classes

    Returns a SelfLearnResult with the final forest, one history record per
    pseudo-labeling iteration (cumulative pseudo sets are disjoint by
    construction), and the accumulated pseudo-labeled rows.
    """
    cfg = config if config is not None else SelfLearnConfig()
    if len(np.unique(labeled.y)) < 2:
        raise ValueError("labeled set must cover at least two classes")
    k = int(labeled.y.max())
    if unlabeled.hidden_y is not None and unlabeled.hidden_y.size:
        k = max(k, int(unlabeled.hidden_y.max()))
    if n_classes is not None:
        k = max(k, int(n_classes))

    forest = train_forest(
        labeled, None, replace(cfg.forest, seed=_forest_seed(cfg.seed, 0)),
        n_classes=k, jobs=jobs,
    )
    history: list[IterationRecord] = []
    pseudo_idx = np.empty(0, dtype=np.int64)
    pseudo_y = np.empty(0, dtype=np.int64)
    if len(unlabeled) == 0:
        return SelfLearnResult(forest, history, pseudo_idx, pseudo_y)

    votes0 = forest_votes(forest, unlabeled.X)
    post_all = posterior_source(cfg.posterior_mode, votes0, unlabeled.hidden_y)
    remaining = np.arange(len(unlabeled))
    current_votes = votes0

    iteration = 0
    while remaining.size:
        iteration += 1
        if cfg.policy == "fixed" and iteration > cfg.fixed_max_iter:
            break
        post_r = post_all[remaining]
        theta = _policy_thresholds(cfg, post_r, current_votes, iteration)
        bound_value = conditional_bayes_error(post_r, current_votes, theta)
        picked, labels = select_pseudo(current_votes, theta)
        if picked.size == 0:
            break
        pseudo_idx = np.concatenate([pseudo_idx, remaining[picked]])
        pseudo_y = np.concatenate([pseudo_y, labels])
        remaining = np.delete(remaining, picked)

        l = len(labeled)
        m = pseudo_idx.size
        weights = np.concatenate(
            [np.full(l, (l + m) / l), np.full(m, (l + m) / m)]
        )
        train = LabeledSet(
            np.concatenate([labeled.X, unlabeled.X[pseudo_idx]]),
            np.concatenate([labeled.y, pseudo_y]),
        )
        forest = train_forest(
            train, weights, replace(cfg.forest, seed=_forest_seed(cfg.seed, iteration)),
            n_classes=k, jobs=jobs,
        )

        accuracy = None
        if unlabeled.hidden_y is not None:
            accuracy = float(np.mean(pseudo_y == unlabeled.hidden_y[pseudo_idx]))
        history.append(
            IterationRecord(
                iteration=iteration,
                thresholds=theta,
                selected=int(picked.size),
                bound_value=float(bound_value),
                pseudo_accuracy=accuracy,
            )
        )
        if remaining.size:
            current_votes = forest_votes(forest, unlabeled.X[remaining])

    return SelfLearnResult(forest, history, pseudo_idx, pseudo_y)


def _policy_thresholds(cfg, post_r, votes_r, iteration):
    k = votes_r.shape[1]
    if cfg.policy == "adaptive":
        return find_theta_star(post_r, votes_r, cfg.grid_resolution)
    if cfg.policy == "fixed":
        return np.full(k, cfg.fixed_threshold)
    # curriculum: take the best-voted slice first, widen by one quantile step
    # per iteration until everything qualifies
    q = max(0.0, 1.0 - iteration * cfg.curriculum_step)
    pred = predict_bayes(votes_r)
    pv = votes_r[np.arange(votes_r.shape[0]), pred - 1]
    return np.full(k, float(np.quantile(pv, q)))


def history_to_csv(history, path):
    """One row per pseudo-labeling iteration: iteration, per-class thresholds,
    selected count, bound value, cumulative pseudo-accuracy (blank without
    hidden labels)."""
    k = len(history[0].thresholds) if history else 0
    header = (
        ["iteration"]
        + [f"theta_{c}" for c in range(1, k + 1)]
        + ["selected", "bound_value", "pseudo_accuracy"]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in history:
            writer.writerow(
                [rec.iteration]
                + [repr(float(t)) for t in rec.thresholds]
                + [
                    rec.selected,
                    repr(float(rec.bound_value)),
                    "" if rec.pseudo_accuracy is None else repr(float(rec.pseudo_accuracy)),
                ]
            )
