"""Vote and posterior plumbing shared by every bound module.

Votes and posteriors are plain (n, K) float64 arrays, row-stochastic over
K >= 2 classes. Class labels are 1-based in every public signature and file
format; array columns are 0-based.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-9

POSTERIOR_MODES = ("uniform", "supervised", "oracle")


class UndefinedClassError(ValueError):
    """A per-class quantity was requested for a class carrying no mass."""


class InapplicableBoundError(ValueError):
    """A bound's validity condition fails on the given input."""


def check_prob_matrix(arr, name="votes"):
    """Validate a row-stochastic matrix and return it as a float64 copy.

    Entries must lie in [0, 1] and rows must sum to 1 within ROW_SUM_TOL.
    Rows further off than that are renormalized with a warning rather than
    rejected: vote providers accumulate rounding and a hard error would be
    hostile. A zero row cannot be renormalized and raises.
    """
    a = np.array(arr, dtype=np.float64, copy=True)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {a.shape}")
    if a.shape[1] < 2:
        raise ValueError(f"{name} needs at least 2 classes, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    if a.size and (a.min() < -ROW_SUM_TOL or a.max() > 1.0 + ROW_SUM_TOL):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    np.clip(a, 0.0, 1.0, out=a)
    sums = a.sum(axis=1)
    if np.any(sums <= 0.0):
        raise ValueError(f"{name} has an all-zero row; cannot renormalize")
    off = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(off):
        warnings.warn(
            f"{int(off.sum())} row(s) of {name} deviate from sum 1 by more than "
            f"{ROW_SUM_TOL:g}; renormalizing",
            stacklevel=2,
        )
        a[off] /= sums[off, None]
    return a


def as_thresholds(theta, n_classes):
    """Broadcast a scalar or length-K sequence into a threshold vector.

    Each component must lie in [0, 1]. Zero is accepted (pure bound
    evaluation); the self-learning search itself never emits it.
    """
    t = np.asarray(theta, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(n_classes, float(t))
    if t.shape != (n_classes,):
        raise ValueError(
            f"threshold vector has shape {t.shape}, expected ({n_classes},)"
        )
    if not np.all(np.isfinite(t)) or t.min() < 0.0 or t.max() > 1.0:
        raise ValueError("thresholds must lie in [0, 1]")
    return t.copy()


def predict_bayes(votes):
    """Majority-vote prediction per row: 1-based argmax, ties to the lowest label."""
    v = np.asarray(votes, dtype=np.float64)
    return np.argmax(v, axis=1).astype(np.int64) + 1


def margins(votes, cls):
    """Margin of class `cls` (1-based) per row: v(x, cls) - max of the other votes."""
    v = np.asarray(votes, dtype=np.float64)
    k = v.shape[1]
    if not 1 <= cls <= k:
        raise ValueError(f"class {cls} out of range 1..{k}")
    others = np.delete(v, cls - 1, axis=1)
    return v[:, cls - 1] - others.max(axis=1)


def margin_matrix(votes):
    """Margins of every class at once, shape (n, K).

    Entry (x, c) is v(x,c) minus the best rival vote; only the argmax class of
    a row can have a positive margin, and exactly zero on ties.
    """
    v = np.asarray(votes, dtype=np.float64)
    part = np.partition(v, v.shape[1] - 2, axis=1)
    top = part[:, -1:]
    second = part[:, -2:-1]
    # rows holding the top value are compared against the runner-up; on ties
    # second == top, so both branches agree
    rival = np.where(v >= top, second, top)
    return v - rival


def posterior_source(mode, votes, hidden_labels=None):
    """Posterior matrix used to weight the unlabeled sample.

    uniform    -> every class equally probable (1/K rows)
    supervised -> the classifier's own votes stand in for the posterior
    oracle     -> one-hot at the hidden label (evaluation only)
    """
    v = check_prob_matrix(votes, "votes")
    n, k = v.shape
    if mode == "uniform":
        return np.full((n, k), 1.0 / k)
    if mode == "supervised":
        return v
    if mode == "oracle":
        if hidden_labels is None:
            raise ValueError("oracle posterior mode requires hidden labels")
        y = np.asarray(hidden_labels, dtype=np.int64)
        if y.shape != (n,):
            raise ValueError("hidden labels must have one entry per votes row")
        if y.size and (y.min() < 1 or y.max() > k):
            raise ValueError(f"hidden labels must lie in 1..{k}")
        out = np.zeros((n, k))
        out[np.arange(n), y - 1] = 1.0
        return out
    raise ValueError(f"unknown posterior mode {mode!r}; expected one of {POSTERIOR_MODES}")


@dataclass
class LabeledSet:
    """Feature rows with 1-based integer labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("features must form a 2-d matrix")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("labels must align with feature rows")
        if self.y.size and self.y.min() < 1:
            raise ValueError("labels are 1-based; found a label < 1")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class UnlabeledSet:
    """Feature rows, optionally with hidden labels kept for oracle evaluation."""

    X: np.ndarray
    hidden_y: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("features must form a 2-d matrix")
        if self.hidden_y is not None:
            self.hidden_y = np.asarray(self.hidden_y, dtype=np.int64)
            if self.hidden_y.shape != (self.X.shape[0],):
                raise ValueError("hidden labels must align with feature rows")

    def __len__(self):
        return self.X.shape[0]
