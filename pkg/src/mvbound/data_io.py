"""Dataset ingestion, seeded trial splits, the rank test, and the experiment
harness that compares supervised and self-learning runs over repeated splits."""

from __future__ import annotations

import csv
import itertools
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LabeledSet, UnlabeledSet, predict_bayes
from .ensemble import ForestConfig, forest_votes, train_forest
from .self_learning import SelfLearnConfig, _forest_seed, run_self_learning

METHODS = ("rf", "fsla", "csla", "msla")

# reference unlabeled-set accuracies (mean, std) published for matched split
# sizes; attached to reports when the dataset name matches so measured numbers
# can be read against them
REFERENCE_SCORES = {
    "pendigits": {
        "split": [109, 10883],
        "rf": [0.863, 0.022],
        "fsla": [0.839, 0.036],
        "csla": [0.871, 0.029],
        "msla": [0.884, 0.022],
    },
}


class DataFormatError(ValueError):
    """An input file does not meet the documented format."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str
    n_classes: int
    label_values: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)

    def __len__(self):
        return self.X.shape[0]


def _remap_labels(tokens, path):
    """Map raw label tokens to 1..K preserving the sort order of the originals
    (numeric when every token parses as a number, lexicographic otherwise)."""
    try:
        values = [float(t) for t in tokens]
        uniq = sorted(set(values))
        index = {v: i + 1 for i, v in enumerate(uniq)}
        y = np.array([index[v] for v in values], dtype=np.int64)
        names = [repr(int(v)) if float(v).is_integer() else repr(v) for v in uniq]
    except ValueError:
        uniq = sorted(set(tokens))
        index = {v: i + 1 for i, v in enumerate(uniq)}
        y = np.array([index[t] for t in tokens], dtype=np.int64)
        names = list(uniq)
    if len(uniq) < 2:
        raise DataFormatError(f"{path}: need at least two classes, found {len(uniq)}")
    return y, names


def load_dataset(path, fmt="auto", label_column=None, name=None):
    """Parse a dataset file into features, 1-based labels and a class count.

    Formats
    -------
    delimited : comma- or tab-separated rows, optional header line; the label
        column is picked by `label_column` (header name or 0-based position,
        default: last column)
    sparse    : one example per line, "label idx:val idx:val ..." with 1-based
        feature indices; unmentioned features are 0
    "auto" sniffs the format from the first data line.

    Labels are remapped to 1..K preserving the sort order of the original
    values. Malformed rows raise DataFormatError with their line number.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = [(ln, line.rstrip("\n").rstrip("\r")) for ln, line in enumerate(fh, 1)]
    rows = [(ln, line) for ln, line in raw if line.strip()]
    if not rows:
        raise DataFormatError(f"{path}: file holds no data")
    if fmt == "auto":
        first = rows[0][1]
        probe = rows[1][1] if len(rows) > 1 else first
        fmt = "sparse" if re.search(r"\s\d+:[-+0-9.eE]", " " + probe.strip()) else "delimited"
    if fmt == "sparse":
        X, tokens = _parse_sparse(rows, path)
    elif fmt == "delimited":
        X, tokens = _parse_delimited(rows, path, label_column)
    else:
        raise ValueError(f"unknown format {fmt!r}; expected delimited, sparse or auto")
    y, names = _remap_labels(tokens, path)
    if not np.all(np.isfinite(X)):
        raise DataFormatError(f"{path}: non-finite feature values")
    ds_name = name if name is not None else _stem(path)
    return Dataset(X=X, y=y, name=ds_name, n_classes=len(names), label_values=names)


def _stem(path):
    base = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return base.rsplit(".", 1)[0] if "." in base else base


def _parse_delimited(rows, path, label_column):
    delim = "\t" if "\t" in rows[0][1] else ","
    cells = [(ln, [c.strip() for c in line.split(delim)]) for ln, line in rows]
    width = len(cells[0][1])
    if width < 2:
        raise DataFormatError(f"{path}: line {cells[0][0]}: need at least 2 columns")

    header = None
    if isinstance(label_column, str):
        header = cells[0][1]
        if label_column not in header:
            raise DataFormatError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        body = cells[1:]
    else:
        label_idx = width - 1 if label_column is None else int(label_column)
        if not 0 <= label_idx < width:
            raise DataFormatError(f"{path}: label column {label_idx} out of range")
        # a header is any first line whose feature cells do not parse as numbers
        feature_cells = [c for i, c in enumerate(cells[0][1]) if i != label_idx]
        try:
            for c in feature_cells:
                float(c)
            body = cells
        except ValueError:
            header = cells[0][1]
            body = cells[1:]
    if not body:
        raise DataFormatError(f"{path}: no data rows after the header")

    feats = []
    tokens = []
    for ln, row in body:
        if len(row) != width:
            raise DataFormatError(
                f"{path}: line {ln}: expected {width} columns, found {len(row)}"
            )
        try:
            feats.append([float(c) for i, c in enumerate(row) if i != label_idx])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {ln}: {exc}") from exc
        tokens.append(row[label_idx])
    return np.asarray(feats, dtype=np.float64), tokens


def _parse_sparse(rows, path):
    tokens = []
    entries = []
    width = 0
    for ln, line in rows:
        parts = line.split()
        if not parts:
            continue
        tokens.append(parts[0])
        row = []
        for p in parts[1:]:
            m = re.fullmatch(r"(\d+):([-+0-9.eE]+)", p)
            if not m:
                raise DataFormatError(f"{path}: line {ln}: bad index:value pair {p!r}")
            idx = int(m.group(1))
            if idx < 1:
                raise DataFormatError(f"{path}: line {ln}: feature indices are 1-based")
            try:
                val = float(m.group(2))
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {ln}: {exc}") from exc
            row.append((idx, val))
            width = max(width, idx)
        entries.append(row)
    X = np.zeros((len(entries), width))
    for r, row in enumerate(entries):
        for idx, val in row:
            X[r, idx - 1] = val
    return X, tokens


def load_votes_csv(path):
    """Votes CSV: header v1..vK plus an optional `label` column; returns
    (votes (n, K), labels or None)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty votes file") from None
        vote_cols = {}
        label_col = None
        for i, h in enumerate(header):
            m = re.fullmatch(r"v(\d+)", h)
            if m:
                vote_cols[int(m.group(1))] = i
            elif h == "label":
                label_col = i
            else:
                raise DataFormatError(f"{path}: unexpected column {h!r}")
        k = len(vote_cols)
        if k < 2 or sorted(vote_cols) != list(range(1, k + 1)):
            raise DataFormatError(f"{path}: vote columns must be v1..vK, K >= 2")
        votes = []
        labels = []
        for ln, row in enumerate(reader, 2):
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {ln}: wrong column count")
            try:
                votes.append([float(row[vote_cols[c]]) for c in range(1, k + 1)])
                if label_col is not None:
                    labels.append(int(row[label_col]))
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {ln}: {exc}") from exc
    if not votes:
        raise DataFormatError(f"{path}: no vote rows")
    v = np.asarray(votes, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64) if label_col is not None else None
    return v, y


def load_matrix_csv(path):
    """Plain numeric CSV matrix (no header)."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for ln, row in enumerate(csv.reader(fh), 1):
            if not row or not any(c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {ln}: {exc}") from exc
    if not rows:
        raise DataFormatError(f"{path}: empty matrix file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataFormatError(f"{path}: ragged rows")
    return np.asarray(rows, dtype=np.float64)


@dataclass
class TrialSpec:
    """Sizes and seeding of the repeated labeled/unlabeled splits."""

    labeled_count: int
    unlabeled_count: int
    trials: int = 20
    base_seed: int = 0
    stratified: bool = False


def split_trial(dataset, spec, trial_index):
    """Deterministically split one trial: (LabeledSet, UnlabeledSet with the
    held-back labels). The labeled part must cover at least two classes;
    degenerate draws are retried up to 100 times on fresh stream state."""
    n = len(dataset)
    l, u = spec.labeled_count, spec.unlabeled_count
    if l < 2 or u < 0 or l + u > n:
        raise ValueError(f"split sizes l={l}, u={u} impossible for n={n}")
    if l < dataset.n_classes:
        raise ValueError(
            f"labeled count {l} below the class count {dataset.n_classes}"
        )
    rng = np.random.default_rng(np.random.SeedSequence((spec.base_seed, trial_index)))
    for _ in range(100):
        if spec.stratified:
            lab, rest = _stratified_draw(rng, dataset.y, l)
        else:
            perm = rng.permutation(n)
            lab, rest = perm[:l], perm[l:]
        if np.unique(dataset.y[lab]).size >= 2:
            unl = rest[:u]
            return (
                LabeledSet(dataset.X[lab], dataset.y[lab]),
                UnlabeledSet(dataset.X[unl], dataset.y[unl]),
            )
    raise ValueError(
        "labeled draw kept hitting a single class; 100 resamples exhausted"
    )


def _stratified_draw(rng, y, l):
    classes, counts = np.unique(y, return_counts=True)
    k = classes.size
    if l < k:
        raise ValueError("stratified draw needs at least one slot per class")
    alloc = np.maximum(1, np.floor(l * counts / counts.sum()).astype(np.int64))
    while alloc.sum() > l:
        alloc[int(np.argmax(alloc))] -= 1
    order = np.argsort(-counts)
    i = 0
    while alloc.sum() < l:
        c = int(order[i % k])
        if alloc[c] < counts[c]:
            alloc[c] += 1
        i += 1
    parts = []
    for c in range(k):
        pool = np.flatnonzero(y == classes[c])
        parts.append(rng.choice(pool, size=int(alloc[c]), replace=False))
    lab = np.concatenate(parts)
    rng.shuffle(lab)
    rest = np.setdiff1d(np.arange(y.size), lab)
    rng.shuffle(rest)
    return lab, rest


def _midranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_v = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def mann_whitney(sample_a, sample_b):
    """Two-sided Mann-Whitney U p-value.

    Exact by enumerating all group assignments when both samples hold at most
    8 values (ties carry half credit through midranks); otherwise the normal
    approximation with tie correction and a 0.5 continuity correction.
    Identical samples come out at 1.
    """
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    n, m = a.size, b.size
    ranks = _midranks(np.concatenate([a, b]))
    u_obs = float(ranks[:n].sum()) - n * (n + 1) / 2.0
    if n <= 8 and m <= 8:
        base = n * (n + 1) / 2.0
        eps = 1e-9
        lower = higher = total = 0
        for combo in itertools.combinations(range(n + m), n):
            u = float(ranks[list(combo)].sum()) - base
            total += 1
            if u <= u_obs + eps:
                lower += 1
            if u >= u_obs - eps:
                higher += 1
        return min(1.0, 2.0 * min(lower, higher) / total)
    mean = n * m / 2.0
    nm = n + m
    _, tie_counts = np.unique(np.concatenate([a, b]), return_counts=True)
    tie_term = float((tie_counts.astype(np.float64) ** 3 - tie_counts).sum())
    var = n * m / 12.0 * (nm + 1.0 - tie_term / (nm * (nm - 1.0)))
    if var <= 0.0:
        return 1.0
    z = (abs(u_obs - mean) - 0.5) / math.sqrt(var)
    if z < 0.0:
        z = 0.0
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


@dataclass
class MethodSummary:
    method: str
    accuracies: list[float]
    mean: float | None
    std: float | None
    p_vs_best: float | None
    significant: bool


@dataclass
class ExperimentReport:
    dataset_name: str
    labeled_count: int
    unlabeled_count: int
    trials: int
    base_seed: int
    methods: list[MethodSummary]
    best_method: str | None
    reference_scores: dict | None = None
    note: str | None = None
    traces: dict | None = None


def _trial_seed(spec, trial_index):
    return int(
        np.random.SeedSequence((spec.base_seed, trial_index, 1)).generate_state(
            1, np.uint64
        )[0]
    )


def run_experiment(
    dataset,
    spec,
    methods=METHODS,
    self_config=None,
    forest_config=None,
    collect_traces=False,
    jobs=1,
):
    """Repeatedly split, train every requested method, and score ACC-U: the
    final forest's accuracy on the hidden labels of the unlabeled part.

    Per trial, every method starts from the same forest seed, so the
    self-learning variants share their initial supervised forest with the
    plain-forest baseline. Significance is a two-sided rank test of each
    method against the best mean (p < 0.01).
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected a subset of {METHODS}")
    base_cfg = self_config if self_config is not None else SelfLearnConfig()
    fcfg = forest_config if forest_config is not None else base_cfg.forest
    policy_of = {"fsla": "fixed", "csla": "curriculum", "msla": "adaptive"}

    if spec.unlabeled_count == 0:
        summaries = [
            MethodSummary(m, [], None, None, None, False) for m in methods
        ]
        return ExperimentReport(
            dataset_name=dataset.name,
            labeled_count=spec.labeled_count,
            unlabeled_count=spec.unlabeled_count,
            trials=spec.trials,
            base_seed=spec.base_seed,
            methods=summaries,
            best_method=None,
            reference_scores=REFERENCE_SCORES.get(dataset.name.lower()),
            note="degenerate spec: unlabeled set is empty, ACC-U undefined",
        )

    accs = {m: [] for m in methods}
    traces = {m: [] for m in methods} if collect_traces else None
    for t in range(spec.trials):
        labeled, unlabeled = split_trial(dataset, spec, t)
        seed_t = _trial_seed(spec, t)
        hidden = unlabeled.hidden_y
        for m in methods:
            if m == "rf":
                forest = train_forest(
                    labeled,
                    None,
                    replace(fcfg, seed=_forest_seed(seed_t, 0)),
                    n_classes=dataset.n_classes,
                    jobs=jobs,
                )
                history = []
            else:
                cfg = replace(
                    base_cfg, policy=policy_of[m], forest=fcfg, seed=seed_t
                )
                result = run_self_learning(
                    labeled, unlabeled, cfg, n_classes=dataset.n_classes, jobs=jobs
                )
                forest = result.forest
                history = result.history
            pred = predict_bayes(forest_votes(forest, unlabeled.X))
            accs[m].append(float(np.mean(pred == hidden)))
            if collect_traces:
                traces[m].append(
                    [
                        {
                            "iteration": r.iteration,
                            "thresholds": [float(x) for x in r.thresholds],
                            "selected": r.selected,
                            "bound_value": r.bound_value,
                            "pseudo_accuracy": r.pseudo_accuracy,
                        }
                        for r in history
                    ]
                )

    means = {m: float(np.mean(accs[m])) for m in methods}
    best = max(methods, key=lambda m: means[m])
    summaries = []
    for m in methods:
        p = mann_whitney(accs[m], accs[best])
        summaries.append(
            MethodSummary(
                method=m,
                accuracies=accs[m],
                mean=means[m],
                std=float(np.std(accs[m])),
                p_vs_best=float(p),
                significant=bool(p < 0.01),
            )
        )
    return ExperimentReport(
        dataset_name=dataset.name,
        labeled_count=spec.labeled_count,
        unlabeled_count=spec.unlabeled_count,
        trials=spec.trials,
        base_seed=spec.base_seed,
        methods=summaries,
        best_method=best,
        reference_scores=REFERENCE_SCORES.get(dataset.name.lower()),
        traces=traces,
    )


def experiment_to_dict(report):
    return {
        "dataset": report.dataset_name,
        "labeled_count": report.labeled_count,
        "unlabeled_count": report.unlabeled_count,
        "trials": report.trials,
        "base_seed": report.base_seed,
        "best_method": report.best_method,
        "note": report.note,
        "reference_scores": report.reference_scores,
        "methods": [
            {
                "method": s.method,
                "accuracies": s.accuracies,
                "mean": s.mean,
                "std": s.std,
                "p_vs_best": s.p_vs_best,
                "significant": s.significant,
            }
            for s in report.methods
        ],
        "traces": report.traces,
    }


def write_experiment_csv(report, path):
    """method, mean, std, p_vs_best, significant; one row per method."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "mean", "std", "p_vs_best", "significant"])
        for s in report.methods:
            writer.writerow(
                [
                    s.method,
                    "" if s.mean is None else repr(s.mean),
                    "" if s.std is None else repr(s.std),
                    "" if s.p_vs_best is None else repr(s.p_vs_best),
                    int(s.significant),
                ]
            )
