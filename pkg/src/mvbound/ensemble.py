"""Random-forest vote provider with sample-weighted training.

Weights enter the split criterion and the leaf class fractions alike, which is
what the self-learning loop's reweighted retraining needs. Votes for a point
are the plain average of its leaf fractions over the trees.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import _forest_jit
from .core import LabeledSet

_NO_DEPTH_CAP = 1 << 60
_SEED_MASK = (1 << 64) - 1

FOREST_FORMAT = "mvbound.forest"
FOREST_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    """Training knobs. features_per_split=None means ceil(sqrt(d)) at fit time;
    max_depth=None grows trees out fully. Defaults beyond tree_count and the
    feature rule are ordinary forest configuration, not anything mandated by
    the vote semantics."""

    tree_count: int = 200
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be at least 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be at least 1")


class Tree(NamedTuple):
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_frac: np.ndarray


@dataclass
class Forest:
    """Immutable after training; shareable across threads."""

    n_classes: int
    n_features: int
    config: ForestConfig
    trees: list[Tree]


def _tree_seed(base_seed, tree_index):
    # per-tree stream: base seed xor tree index, so trees are order-independent
    return np.uint64((int(base_seed) ^ int(tree_index)) & _SEED_MASK)


def train_forest(data, weights=None, config=None, n_classes=None, jobs=1):
    """Fit a forest of weighted-Gini trees.

    Parameters
    ----------
    data : LabeledSet (or (X, y) pair), labels 1-based
    weights : optional nonnegative per-example weights; at least one must be
        positive. They multiply both the split counts and the leaf fractions.
    config : ForestConfig
    n_classes : vote width; defaults to max(y)
    jobs : worker threads for tree growing (the kernels release the GIL);
        results are independent of this value
    """
    if isinstance(data, LabeledSet):
        X, y = data.X, data.y
    else:
        X, y = data
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
    cfg = config if config is not None else ForestConfig()
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a nonempty 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("training features must be finite")
    n, d = X.shape
    if y.shape != (n,):
        raise ValueError("labels must align with feature rows")
    k = int(n_classes) if n_classes is not None else int(y.max())
    if y.min() < 1 or y.max() > k:
        raise ValueError(f"labels must lie in 1..{k}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError("weights must align with feature rows")
        if not np.all(np.isfinite(w)) or w.min() < 0.0:
            raise ValueError("weights must be finite and nonnegative")
    if not np.any(w > 0.0):
        raise ValueError("at least one example needs positive weight")
    mtry = cfg.features_per_split
    if mtry is None:
        mtry = math.ceil(math.sqrt(d))
    if mtry > d:
        raise ValueError(f"features_per_split must lie in 1..{d}")
    depth_cap = cfg.max_depth if cfg.max_depth is not None else _NO_DEPTH_CAP

    y0 = np.ascontiguousarray(y - 1)
    Xc = np.ascontiguousarray(X)
    wc = np.ascontiguousarray(w)

    def grow(t):
        arrays = _forest_jit.grow_tree(
            Xc, y0, wc, k, mtry, cfg.min_samples_split, depth_cap,
            _tree_seed(cfg.seed, t), cfg.bootstrap,
        )
        return Tree(*arrays)

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
            trees = list(pool.map(grow, range(cfg.tree_count)))
    else:
        trees = [grow(t) for t in range(cfg.tree_count)]
    return Forest(n_classes=k, n_features=d, config=cfg, trees=trees)


def forest_votes(forest, points):
    """Average leaf class fractions over the trees; rows sum to 1.

    Trees are accumulated in index order so the result is bit-stable no matter
    how training was parallelized.
    """
    X = np.ascontiguousarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(
            f"points must have {forest.n_features} features, got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    out = np.zeros((X.shape[0], forest.n_classes))
    for tree in forest.trees:
        _forest_jit.add_tree_votes(
            X, tree.feature, tree.threshold, tree.left, tree.right,
            tree.leaf_frac, out,
        )
    out /= len(forest.trees)
    return out


def forest_to_text(forest):
    """Versioned structured-text dump. json round-trips Python floats exactly,
    so load(dump(f)) reproduces every threshold and leaf fraction bit for bit."""
    payload = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "n_classes": forest.n_classes,
        "n_features": forest.n_features,
        "config": asdict(forest.config),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "leaf_frac": t.leaf_frac.tolist(),
            }
            for t in forest.trees
        ],
    }
    return json.dumps(payload, sort_keys=True)


def forest_from_text(text):
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not a forest dump: {exc}") from exc
    if payload.get("format") != FOREST_FORMAT:
        raise ValueError("not a forest dump (missing format marker)")
    if payload.get("version") != FOREST_VERSION:
        raise ValueError(f"unsupported forest dump version {payload.get('version')}")
    k = int(payload["n_classes"])
    trees = [
        Tree(
            feature=np.asarray(t["feature"], dtype=np.int64),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int64),
            right=np.asarray(t["right"], dtype=np.int64),
            leaf_frac=np.asarray(t["leaf_frac"], dtype=np.float64).reshape(-1, k),
        )
        for t in payload["trees"]
    ]
    return Forest(
        n_classes=k,
        n_features=int(payload["n_features"]),
        config=ForestConfig(**payload["config"]),
        trees=trees,
    )


def save_forest(forest, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(forest_to_text(forest))


def load_forest(path):
    with open(path, "r", encoding="utf-8") as fh:
        return forest_from_text(fh.read())
