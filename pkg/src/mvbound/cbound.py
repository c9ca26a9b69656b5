"""Margin-moment risk bounds and their imperfect-label corrections.

The plain bound is second-order Chebyshev-Cantelli on the margin law: draw an
example uniformly, a class from its posterior, and look at the margin of that
class. Its imperfect-label variant reweights every example by how confusable
its predicted class is under a known mislabeling matrix, and the PAC-Bayes
variant additionally penalizes the moments for having been estimated from
finitely many imperfect labels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    InapplicableBoundError,
    check_prob_matrix,
    margin_matrix,
    predict_bayes,
)

COLUMN_SUM_TOL = 1e-9


def check_mislabel_matrix(matrix):
    """Validate a column-stochastic mislabeling matrix P[j, c] = P(assigned=j | true=c)."""
    p = np.array(matrix, dtype=np.float64, copy=True)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"mislabeling matrix must be square, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("mislabeling matrix contains non-finite entries")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("mislabeling probabilities must lie in [0, 1]")
    col = p.sum(axis=0)
    if np.any(np.abs(col - 1.0) > COLUMN_SUM_TOL):
        raise ValueError("mislabeling matrix columns must sum to 1")
    return p


def margin_moments(votes, post, weights=None):
    """First and second margin moments under the (example, class) law that
    draws x uniformly and the class from post[x]; optional per-example weights
    multiply both moments."""
    m = margin_matrix(votes)
    p = np.asarray(post, dtype=np.float64)
    s1 = (m * p).sum(axis=1)
    s2 = (m * m * p).sum(axis=1)
    if weights is not None:
        s1 = s1 * weights
        s2 = s2 * weights
    return float(s1.mean()), float(s2.mean())


def _cantelli_value(votes, post, weights, psi):
    """Shared Cantelli-style evaluation: psi - mu1^2/mu2.

    A single-atom margin law makes mu1^2/mu2 collapse to the mean weight
    exactly (mu1 = m*wbar, mu2 = m^2*wbar); computing it that way keeps the
    zero-risk case exact instead of leaving O(1e-16) float residue.
    """
    mu1, mu2 = margin_moments(votes, post, weights)
    if mu1 <= 0.0:
        raise InapplicableBoundError(
            f"first margin moment {mu1:.6g} is not positive; the Cantelli step needs mu1 > 0"
        )
    m = margin_matrix(votes)
    support = m[np.asarray(post, dtype=np.float64) > 0.0]
    if support.size and support.max() == support.min():
        ratio = 1.0 if weights is None else float(np.mean(weights))
    else:
        ratio = mu1 * mu1 / mu2
    return psi - ratio, mu1, mu2


@dataclass
class BoundReport:
    """One bound evaluation, shaped for the JSON reports the CLI writes."""

    bound_name: str
    value: float
    mu1: float | None = None
    mu2: float | None = None
    psi: float | None = None
    relax: float | None = None
    epsilon: float | None = None
    applicable: bool = True
    raw_value: float | None = None
    details: dict = field(default_factory=dict)

    def as_dict(self):
        out = {
            "bound_name": self.bound_name,
            "value": self.value,
            "mu1": self.mu1,
            "mu2": self.mu2,
            "psi": self.psi,
            "lambda": self.relax,
            "epsilon": self.epsilon,
            "applicable": self.applicable,
        }
        if self.raw_value is not None:
            out["raw_value"] = self.raw_value
        if self.details:
            out["details"] = self.details
        return out


def cbound(votes, post):
    """Cantelli bound 1 - mu1^2/mu2 on the majority-vote risk.

    Moments weight the margin of class c on example x by P(Y=c|x)/n. Requires
    a positive first moment; a margin law concentrated on one positive value
    has zero variance and the bound collapses to exactly 0.
    """
    return cbound_report(votes, post).value


def cbound_report(votes, post):
    v = check_prob_matrix(votes, "votes")
    p = check_prob_matrix(post, "posteriors")
    value, mu1, mu2 = _cantelli_value(v, p, None, 1.0)
    return BoundReport("cbound", float(value), mu1=mu1, mu2=mu2, psi=1.0)


def apply_mislabeling(mislabel, post):
    """Push posteriors through the mislabeling channel:

        P(assigned=j | x) = sum_c P(assigned=j | true=c) P(true=c | x)

    Rows stay stochastic because the channel columns do.
    """
    p = check_mislabel_matrix(mislabel)
    q = check_prob_matrix(post, "posteriors")
    if q.shape[1] != p.shape[0]:
        raise ValueError("posterior width must match the mislabeling matrix size")
    return q @ p.T


def correction_terms(mislabel, predicted):
    """Per-example correction pair (alpha, delta) for 1-based predictions.

    alpha = P[c, c] for c the predicted class; delta = alpha minus the largest
    other entry of row c. Relaxations are applied by the callers.
    """
    p = check_mislabel_matrix(mislabel)
    c = np.asarray(predicted, dtype=np.int64) - 1
    if c.size and (c.min() < 0 or c.max() >= p.shape[0]):
        raise ValueError("predicted class out of range")
    rows = p[c]
    alpha = rows[np.arange(c.size), c]
    rivals = rows.copy()
    rivals[np.arange(c.size), c] = -np.inf
    delta = alpha - rivals.max(axis=1)
    return alpha, delta


def per_example_true_risk_bound(mislabel, observed_risk, predicted_class, relax=0.0):
    """Bound on the true per-example risk from the imperfect-label risk:

        (observed_risk - (1 - relax - alpha)) / (delta + relax), clamped to [0, 1]

    Inapplicable when delta + relax is not positive: the mislabeling is too
    confusable for the given relaxation.
    """
    if relax < 0.0:
        raise ValueError("relaxation must be nonnegative")
    alpha, delta = correction_terms(mislabel, np.asarray([predicted_class]))
    a = float(alpha[0])
    d = float(delta[0]) + relax
    if d <= 0.0:
        raise InapplicableBoundError(
            f"delta + lambda = {d:.6g} <= 0 for predicted class {predicted_class}; "
            "increase the relaxation"
        )
    raw = (float(observed_risk) - (1.0 - relax - a)) / d
    return min(1.0, max(0.0, raw))


def cbil(votes, imperfect_post, mislabel, relax=0.0):
    """Imperfect-label Cantelli bound; see cbil_report for the pieces."""
    return cbil_report(votes, imperfect_post, mislabel, relax).value


def cbil_report(votes, imperfect_post, mislabel, relax=0.0):
    """Cantelli bound under label noise: psi - mu1^2/mu2 with every example
    weighted by 1/(delta(x) + relax) inside both moments and

        psi = mean of (alpha(x) + relax) / (delta(x) + relax).

    Margins are weighted by the imperfect posteriors; with an identity channel
    and no relaxation this reduces exactly to the plain bound. The raw
    (unclamped) value rides along for diagnostics.
    """
    if relax < 0.0:
        raise ValueError("relaxation must be nonnegative")
    v = check_prob_matrix(votes, "votes")
    q = check_prob_matrix(imperfect_post, "posteriors")
    p = check_mislabel_matrix(mislabel)
    if q.shape != v.shape or p.shape[0] != v.shape[1]:
        raise ValueError("votes, posteriors and mislabeling matrix disagree on K")
    alpha, delta = correction_terms(p, predict_bayes(v))
    d = delta + relax
    if np.any(d <= 0.0):
        raise InapplicableBoundError(
            "delta + lambda <= 0 for some example; increase the relaxation"
        )
    weights = 1.0 / d
    psi = float(np.mean((alpha + relax) / d))
    raw, mu1, mu2 = _cantelli_value(v, q, weights, psi)
    value = min(1.0, max(0.0, raw))
    return BoundReport(
        "cbil",
        float(value),
        mu1=mu1,
        mu2=mu2,
        psi=psi,
        relax=relax,
        raw_value=float(raw),
    )


def estimate_mislabeling(true_labels, assigned_labels, n_classes):
    """Column-stochastic estimate p[j, c] = count(assigned=j, true=c) / count(true=c).

    Classes never seen among the true labels get an identity column (no
    evidence, no correction) and a warning.
    """
    t = np.asarray(true_labels, dtype=np.int64)
    a = np.asarray(assigned_labels, dtype=np.int64)
    if t.shape != a.shape or t.ndim != 1 or t.size < 1:
        raise ValueError("label vectors must be equal-length, nonempty and 1-d")
    k = int(n_classes)
    for name, arr in (("true", t), ("assigned", a)):
        if arr.min() < 1 or arr.max() > k:
            raise ValueError(f"{name} labels must lie in 1..{k}")
    counts = np.zeros((k, k))
    np.add.at(counts, (a - 1, t - 1), 1.0)
    totals = counts.sum(axis=0)
    out = np.zeros((k, k))
    for c in range(k):
        if totals[c] > 0:
            out[:, c] = counts[:, c] / totals[c]
        else:
            warnings.warn(
                f"class {c + 1} absent from the true labels; using an identity column",
                stacklevel=2,
            )
            out[c, c] = 1.0
    return out


def label_count_deviation(count, epsilon):
    """Finite-sample deviation sqrt(ln(2 sqrt(l) / eps) / (2 l)) of a
    mislabeling probability estimated from l labels of one class."""
    l = float(count)
    if l < 1.0:
        raise ValueError("count must be at least 1")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    return math.sqrt(math.log(2.0 * math.sqrt(l) / epsilon) / (2.0 * l))


def pac_bayes_cbound(votes, post, mislabel, class_counts, kl, epsilon):
    """PAC-Bayes-penalized imperfect-label bound; see pac_bayes_report."""
    return pac_bayes_report(votes, post, mislabel, class_counts, kl, epsilon).value


def pac_bayes_report(votes, post, mislabel, class_counts, kl, epsilon):
    """Imperfect-label bound with finite-sample penalties on every estimate.

    The per-class deviations shrink delta and grow alpha (class_counts are the
    integer numbers of imperfectly-labeled examples per class); the moment and
    psi terms then pay sample-size penalties scaled by B1/B2/B3. The scale
    constants are maxima over the observed sample, not domain suprema, and the
    report flags that.

    Inapplicable when any penalized delta drops to 0 (consider the relaxed
    variant of the plug-in bound instead) or the penalized first moment is
    not positive.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    if kl < 0.0:
        raise ValueError("KL divergence must be nonnegative")
    v = check_prob_matrix(votes, "votes")
    q = check_prob_matrix(post, "posteriors")
    p = check_mislabel_matrix(mislabel)
    k = v.shape[1]
    counts = np.asarray(class_counts, dtype=np.int64)
    if counts.shape != (k,):
        raise ValueError(f"class_counts must have shape ({k},)")
    if counts.min() < 1:
        raise ValueError("every class needs at least one imperfect label")
    n = v.shape[0]
    pred = predict_bayes(v)
    alpha_hat, delta_hat = correction_terms(p, pred)
    r = np.array([label_count_deviation(c, epsilon) for c in counts])
    # the rival deviation uses the scarcest other class
    rival = np.empty(k, dtype=np.int64)
    for c in range(k):
        others = np.delete(np.arange(k), c)
        rival[c] = others[np.argmin(counts[others])]
    r_own = r[pred - 1]
    r_rival = r[rival[pred - 1]]
    delta = delta_hat - r_own - r_rival
    alpha = alpha_hat + r_own
    if np.any(delta <= 0.0):
        raise InapplicableBoundError(
            "a penalized delta dropped to 0; the class counts are too small. "
            "Consider the lambda-relaxed plug-in bound"
        )
    weights = 1.0 / delta
    mu1_emp, mu2_emp = margin_moments(v, q, weights)
    psi_emp = float(np.mean(alpha / delta))

    margins_all = margin_matrix(v)
    on_support = np.asarray(q) > 0.0
    weighted = weights[:, None] * margins_all
    b1 = float(np.abs(weighted[on_support]).max()) if on_support.any() else 0.0
    b2 = float((weights[:, None] * margins_all**2)[on_support].max()) if on_support.any() else 0.0
    b3 = float((alpha / delta).max())

    base = math.log(2.0 * math.sqrt(n) / epsilon)
    mu1 = mu1_emp - b1 * math.sqrt(2.0 / n * (kl + base))
    mu2 = mu2_emp + b2 * math.sqrt(2.0 / n * (2.0 * kl + base))
    psi = psi_emp + b3 * math.sqrt(2.0 / n * base)
    if mu1 <= 0.0:
        raise InapplicableBoundError(
            f"penalized first margin moment {mu1:.6g} is not positive"
        )
    raw = psi - mu1 * mu1 / mu2
    value = min(1.0, max(0.0, raw))
    return BoundReport(
        "pac_bayes_cbound",
        float(value),
        mu1=mu1,
        mu2=mu2,
        psi=psi,
        epsilon=epsilon,
        raw_value=float(raw),
        details={
            "kl": float(kl),
            "penalty_scales": {"b1": b1, "b2": b2, "b3": b3},
            "penalty_scale_source": "sample maxima, not domain suprema",
        },
    )
