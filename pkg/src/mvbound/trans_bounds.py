"""Transductive bounds on the joint conditional risk of a majority vote.

Everything here works on one fixed unlabeled sample. `post` carries the
(possibly approximated) class posteriors P(Y=i|x), `votes` the ensemble votes
v(x, c). The bound on the class-i mass that the vote sends to class j above a
threshold only needs, per unique vote level of class j, two histograms: the
total class-i mass sitting at that level and the part of it actually
predicted j. Filling error mass greedily at the cheapest levels is optimal,
which is what both the closed-form bound and the LP oracle compute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    UndefinedClassError,
    as_thresholds,
    check_prob_matrix,
    predict_bayes,
)

# ensemble averaging produces near-duplicate votes; levels this close collapse
LEVEL_MERGE_TOL = 1e-12


def _merge_levels(values):
    """Ascending unique levels (merged within LEVEL_MERGE_TOL) and, per input
    value, the index of its level. Representative of a group is its minimum."""
    order = np.argsort(values, kind="stable")
    ranked = values[order]
    starts = np.empty(ranked.size, dtype=bool)
    starts[0] = True
    np.greater(np.diff(ranked), LEVEL_MERGE_TOL, out=starts[1:])
    group = np.cumsum(starts) - 1
    level_of = np.empty(values.size, dtype=np.int64)
    level_of[order] = group
    return ranked[starts], level_of


@dataclass
class VoteLevelProfile:
    """Per-level mass summary for one predicted class j.

    levels:  ascending unique values of v(:, j)
    caps:    (K, T) total class-i mass at each level, normalized by u_i
    err:     (K, T) class-i mass at each level restricted to rows predicted j,
             normalized by u_i (zero rows wherever u_i = 0)
    u:       (K,) raw class masses sum_x P(Y=i|x)
    """

    class_index: int
    levels: np.ndarray
    caps: np.ndarray
    err: np.ndarray
    u: np.ndarray

    # prefix/suffix machinery used by the bound evaluations
    def __post_init__(self):
        k, t = self.caps.shape
        self._cap_before = np.zeros((k, t + 1))
        np.cumsum(self.caps, axis=1, out=self._cap_before[:, 1:])
        self._capv_before = np.zeros((k, t + 1))
        np.cumsum(self.caps * self.levels, axis=1, out=self._capv_before[:, 1:])
        self._err_from = np.zeros((k, t + 1))
        if t:
            self._err_from[:, :t] = np.cumsum(self.err[:, ::-1], axis=1)[:, ::-1]
        # vote-mass budget K_{i,j}: predicted-j mass weighted by its vote level
        self.budget = self.err @ self.levels

    def _cut(self, value):
        """Number of levels strictly below `value`."""
        return int(np.searchsorted(self.levels, value, side="left"))

    def exact_risk(self, theta_j):
        """Per class i: mass share predicted j with vote level >= theta_j."""
        return self._err_from[:, self._cut(theta_j)].copy()

    def bound(self, theta_j):
        """Per class i: the conditional-risk bound at threshold theta_j.

        Evaluates, at every candidate level gamma in {positive levels >=
        theta_j} u {theta_j if > 0} u {1}, the kept mass below gamma plus the
        greedily-filled budget term, and takes the minimum. Classes with zero
        budget are exactly 0: no class-i mass is predicted j at all.
        """
        lv = self.levels
        cands = lv[(lv > 0.0) & (lv >= theta_j)]
        extra = [1.0] if theta_j <= 0.0 else [theta_j, 1.0]
        cands = np.concatenate([cands, extra])
        cuts = np.searchsorted(lv, cands, side="left")
        cut_theta = self._cut(theta_j)
        kept = self._cap_before[:, cuts] - self._cap_before[:, [cut_theta]]
        spent_below = self._capv_before[:, cuts]
        spent_theta = self._capv_before[:, [cut_theta]]
        room = self.budget[:, None] - spent_below + spent_theta
        np.maximum(room, 0.0, out=room)
        values = (kept + room / cands).min(axis=1)
        np.clip(values, 0.0, 1.0, out=values)
        values[self.budget <= 0.0] = 0.0
        return values


def class_masses(post):
    """Raw per-class posterior mass u_i = sum_x P(Y=i|x)."""
    return np.asarray(post, dtype=np.float64).sum(axis=0)


def vote_level_profile(post, votes, j):
    """Build the level histograms the class-j bounds are computed from."""
    p = np.asarray(post, dtype=np.float64)
    v = np.asarray(votes, dtype=np.float64)
    if p.shape != v.shape:
        raise ValueError("posteriors and votes must have matching shapes")
    n, k = v.shape
    if not 1 <= j <= k:
        raise ValueError(f"class {j} out of range 1..{k}")
    levels, level_of = _merge_levels(v[:, j - 1])
    t = levels.size
    caps_t = np.zeros((t, k))
    np.add.at(caps_t, level_of, p)
    err_t = np.zeros((t, k))
    predicted = predict_bayes(v) == j
    np.add.at(err_t, level_of[predicted], p[predicted])
    u = p.sum(axis=0)
    scale = np.where(u > 0.0, u, 1.0)
    caps = np.ascontiguousarray(caps_t.T) / scale[:, None]
    err = np.ascontiguousarray(err_t.T) / scale[:, None]
    return VoteLevelProfile(class_index=j, levels=levels, caps=caps, err=err, u=u)


def _check_pair(i, j, k):
    if not 1 <= i <= k or not 1 <= j <= k:
        raise ValueError(f"class pair ({i}, {j}) out of range 1..{k}")
    if i == j:
        raise ValueError("joint conditional risk needs two distinct classes")


def exact_joint_conditional_risk(post, votes, i, j, theta_j=0.0):
    """Share of class-i mass that the vote sends to class j at the threshold:

        (1/u_i) sum_x P(Y=i|x) 1{pred(x) = j} 1{v(x,j) >= theta_j}
    """
    p = np.asarray(post, dtype=np.float64)
    v = np.asarray(votes, dtype=np.float64)
    _check_pair(i, j, v.shape[1])
    p_i = p[:, i - 1]
    u_i = p_i.sum()
    if u_i <= 0.0:
        raise UndefinedClassError(f"class {i} carries no posterior mass")
    sel = (predict_bayes(v) == j) & (v[:, j - 1] >= theta_j)
    return float(p_i[sel].sum() / u_i)


def gibbs_conditional_risk(post, votes, i, j):
    """Unrestricted conditional Gibbs risk (1/u_i) sum_x P(Y=i|x) v(x,j).

    Diagnostic only: the bound machinery budgets the class-j vote mass
    restricted to rows actually predicted j; this is the unrestricted
    counterpart, always at least as large.
    """
    p = np.asarray(post, dtype=np.float64)
    v = np.asarray(votes, dtype=np.float64)
    _check_pair(i, j, v.shape[1])
    p_i = p[:, i - 1]
    u_i = p_i.sum()
    if u_i <= 0.0:
        raise UndefinedClassError(f"class {i} carries no posterior mass")
    return float((p_i * v[:, j - 1]).sum() / u_i)


def conditional_bound(post, votes, i, j, theta_j=0.0):
    """Upper bound on exact_joint_conditional_risk(post, votes, i, j, theta_j).

    With theta_j = 0 it coincides with the LP oracle on this instance's vote
    level profile; for positive thresholds it additionally keeps the mass
    observed between theta_j and the optimized level.
    """
    profile = vote_level_profile(post, votes, j)
    _check_pair(i, j, profile.u.size)
    if profile.u[i - 1] <= 0.0:
        raise UndefinedClassError(f"class {i} carries no posterior mass")
    return float(profile.bound(float(theta_j))[i - 1])


def bound_matrix(post, votes, theta):
    """K x K matrix of conditional bounds; entry (i, j) bounds the class-i mass
    predicted j above theta_j. Zero diagonal; zero rows for massless classes."""
    p = check_prob_matrix(post, "posteriors")
    v = check_prob_matrix(votes, "votes")
    k = v.shape[1]
    th = as_thresholds(theta, k)
    out = np.zeros((k, k))
    for j in range(1, k + 1):
        profile = vote_level_profile(p, v, j)
        col = profile.bound(float(th[j - 1]))
        col[profile.u <= 0.0] = 0.0
        col[j - 1] = 0.0
        out[:, j - 1] = col
    return out


def joint_error_rate(post, votes, theta):
    """Direct transductive error mass at the thresholds:

        (1/u) sum_x (1 - P(Y=pred(x)|x)) 1{v(x, pred(x)) >= theta_pred(x)}

    i.e. the posterior mass of wrong classes over rows whose predicted-class
    vote clears its threshold.
    """
    p = np.asarray(post, dtype=np.float64)
    v = np.asarray(votes, dtype=np.float64)
    n, k = v.shape
    th = as_thresholds(theta, k)
    pred = predict_bayes(v)
    rows = np.arange(n)
    sel = v[rows, pred - 1] >= th[pred - 1]
    total = p.sum()
    wrong = p[sel].sum() - p[rows[sel], pred[sel] - 1].sum()
    return float(wrong / total)


def error_rate_bound(post, votes, theta):
    """Bound on the transductive error rate: sum_ij (u_i/u) [U_theta]_{i,j}.

    Equals the l1 norm of U_theta^T p with p the class-mass distribution,
    since every entry is nonnegative.
    """
    p = check_prob_matrix(post, "posteriors")
    u = class_masses(p)
    weights = u / u.sum()
    return float((weights[:, None] * bound_matrix(p, votes, theta)).sum())


def confusion_norm_bound(post, votes, theta, tol=1e-10, max_iter=10000):
    """Spectral norm of the conditional-bound matrix, by power iteration."""
    return matrix_spectral_norm(bound_matrix(post, votes, theta), tol, max_iter)


def matrix_spectral_norm(matrix, tol=1e-10, max_iter=10000):
    """Largest singular value via power iteration on M^T M.

    The all-ones start vector cannot be orthogonal to the principal
    eigenvector of a nonnegative Gram matrix, and K is small, so the
    iteration cap is a formality.
    """
    m = np.asarray(matrix, dtype=np.float64)
    gram = m.T @ m
    if not gram.any():
        return 0.0
    x = np.full(gram.shape[0], 1.0 / np.sqrt(gram.shape[0]))
    for _ in range(max_iter):
        y = gram @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        y /= norm
        if np.linalg.norm(y - x) < tol:
            x = y
            break
        x = y
    return float(np.sqrt(x @ gram @ x))


def lp_oracle_bound(levels, caps, cutoff, budget):
    """Greedy optimum of the level-capped filling problem the bound solves:

        maximize sum q_t  s.t.  0 <= q_t <= caps_t,  sum q_t levels_t <= budget,
        q_t = 0 for the first `cutoff` levels.

    Cheapest levels are filled first; optimality is standard exchange
    reasoning. Levels must be strictly ascending in (0, 1].
    """
    lv = np.asarray(levels, dtype=np.float64)
    cp = np.asarray(caps, dtype=np.float64)
    if lv.ndim != 1 or cp.shape != lv.shape:
        raise ValueError("levels and caps must be 1-d arrays of equal length")
    if lv.size and (lv[0] <= 0.0 or lv[-1] > 1.0 or np.any(np.diff(lv) <= 0.0)):
        raise ValueError("levels must be strictly ascending within (0, 1]")
    if np.any(cp < 0.0):
        raise ValueError("caps must be nonnegative")
    if budget < 0.0:
        raise ValueError("budget must be nonnegative")
    if not 0 <= cutoff <= lv.size:
        raise ValueError("cutoff out of range")
    total = 0.0
    spent = 0.0
    for t in range(cutoff, lv.size):
        room = (budget - spent) / lv[t]
        q = min(cp[t], room) if room > 0.0 else 0.0
        total += q
        spent += q * lv[t]
    return float(total)


@dataclass
class TightnessRecord:
    """Diagnostic for how loose the conditional bound can be.

    top_error_level:  highest vote level whose restricted error mass exceeds tau
                      (1.0 when no level does)
    tail_vote_mass:   budget share sitting strictly above that level
    coverage:         worst-case share of below-level class mass actually
                      predicted j (the constant the gap guarantee needs)
    gap_bound:        guaranteed ceiling on bound minus exact risk; +inf when
                      the coverage constant degenerates to zero
    """

    top_error_level: float
    tail_vote_mass: float
    coverage: float
    gap_bound: float


def tightness_gap(post, votes, i, j, tau):
    """Bound-tightness certificate for the (i, j) conditional risk at theta=0."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    p = np.asarray(post, dtype=np.float64)
    v = np.asarray(votes, dtype=np.float64)
    _check_pair(i, j, v.shape[1])
    profile = vote_level_profile(p, v, j)
    if profile.u[i - 1] <= 0.0:
        raise UndefinedClassError(f"class {i} carries no posterior mass")
    levels = profile.levels
    err_i = profile.err[i - 1]
    caps_i = profile.caps[i - 1]
    heavy = levels[err_i > tau]
    if heavy.size:
        top = float(heavy.max())
        err_before = np.cumsum(err_i) - err_i
        cap_before = np.cumsum(caps_i) - caps_i
        coverage = 1.0
        for g in heavy:
            t = int(np.searchsorted(levels, g, side="left"))
            den = cap_before[t]
            ratio = 1.0 if den <= 0.0 else min(1.0, err_before[t] / den)
            coverage = min(coverage, ratio)
    else:
        top = 1.0
        coverage = 1.0
    tail = float((err_i * levels)[levels > top].sum())
    risk = exact_joint_conditional_risk(p, v, i, j, 0.0)
    if coverage <= 0.0:
        gap = float("inf")
    else:
        gap = (1.0 - coverage) / coverage * risk + tail * (1.0 / top - 1.0)
    return TightnessRecord(
        top_error_level=top,
        tail_vote_mass=tail,
        coverage=coverage,
        gap_bound=gap,
    )
