"""Command line front end.

Every command prints a one-line summary and writes JSON (plus CSV where noted)
whose payload embeds the fully resolved configuration and seed, with sorted
keys and no timestamps, so a re-run with the same inputs is byte-identical.

Exit codes: 0 success, 2 usage error, 3 bound inapplicable, 4 input data or
file error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cbound import (
    apply_mislabeling,
    cbil_report,
    cbound_report,
    check_mislabel_matrix,
    pac_bayes_report,
)
from .core import (
    InapplicableBoundError,
    POSTERIOR_MODES,
    posterior_source,
    predict_bayes,
)
from .data_io import (
    DataFormatError,
    METHODS,
    TrialSpec,
    experiment_to_dict,
    load_dataset,
    load_matrix_csv,
    load_votes_csv,
    run_experiment,
    split_trial,
    write_experiment_csv,
)
from .ensemble import ForestConfig, forest_votes, save_forest, train_forest
from .self_learning import (
    SelfLearnConfig,
    find_theta_star,
    history_to_csv,
    run_self_learning,
)
from .trans_bounds import bound_matrix, confusion_norm_bound, error_rate_bound

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INAPPLICABLE = 3
EXIT_DATA = 4

DEFAULT_LAMBDAS = tuple(round(0.1 * i, 1) for i in range(1, 11))


def _theta_arg(text):
    if text == "auto":
        return "auto"
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"{text!r} is not 'auto', a number, or a comma-separated list"
        ) from None
    if any(not 0.0 <= p <= 1.0 for p in parts):
        raise argparse.ArgumentTypeError("thresholds must lie in [0, 1]")
    return parts[0] if len(parts) == 1 else parts


def _float_list_arg(text):
    try:
        return [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"{text!r} is not a comma-separated list of numbers"
        ) from None


def _int_list_arg(text):
    try:
        return [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"{text!r} is not a comma-separated list of integers"
        ) from None


def _methods_arg(text):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    for p in parts:
        if p not in METHODS:
            raise argparse.ArgumentTypeError(
                f"unknown method {p!r}; choose from {', '.join(METHODS)}"
            )
    if not parts:
        raise argparse.ArgumentTypeError("need at least one method")
    return parts


def _out_dir(args):
    d = Path(args.out_dir if args.out_dir else os.environ.get("MVBOUND_OUT", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config_payload(args):
    skip = {"func"}
    conf = {}
    for key, val in vars(args).items():
        if key in skip:
            continue
        if isinstance(val, Path):
            val = str(val)
        conf[key] = val
    return conf


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _forest_config(args):
    return ForestConfig(
        tree_count=args.trees,
        max_depth=args.max_depth,
        min_samples_split=args.min_split,
        features_per_split=args.mtry,
        bootstrap=not args.no_bootstrap,
        seed=args.seed,
    )


def _add_forest_opts(sp):
    sp.add_argument("--trees", type=int, default=200, help="trees in the forest")
    sp.add_argument("--max-depth", type=int, default=None, help="depth cap (default none)")
    sp.add_argument("--min-split", type=int, default=2, help="minimum samples to split")
    sp.add_argument(
        "--mtry", type=int, default=None, help="features tried per split (default sqrt)"
    )
    sp.add_argument(
        "--no-bootstrap", action="store_true", help="train each tree on the full sample"
    )


def _add_dataset_opts(sp):
    sp.add_argument("--dataset", type=Path, help="dataset file")
    sp.add_argument(
        "--format", choices=("auto", "delimited", "sparse"), default="auto"
    )
    sp.add_argument(
        "--label-col",
        default=None,
        help="label column: header name or 0-based index (default: last column)",
    )


def _add_split_opts(sp):
    sp.add_argument("--labeled", type=int, required=True, help="labeled sample size")
    sp.add_argument(
        "--unlabeled",
        type=int,
        default=None,
        help="unlabeled sample size (default: every remaining point)",
    )
    sp.add_argument("--trial", type=int, default=0, help="trial index for the split")
    sp.add_argument(
        "--stratified", action="store_true", help="stratify the labeled draw by class"
    )


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0, help="base seed")
    sp.add_argument("--jobs", type=int, default=1, help="worker threads for training")
    sp.add_argument(
        "--out-dir",
        type=Path,
        default=None,
        help="output directory (default: $MVBOUND_OUT or the working directory)",
    )


def _label_col(args):
    lc = args.label_col
    if lc is None:
        return None
    try:
        return int(lc)
    except ValueError:
        return lc


def _load_split(args):
    if args.labeled is None:
        raise DataFormatError("the dataset route needs --labeled")
    ds = load_dataset(args.dataset, fmt=args.format, label_column=_label_col(args))
    u = args.unlabeled if args.unlabeled is not None else len(ds) - args.labeled
    spec = TrialSpec(
        labeled_count=args.labeled,
        unlabeled_count=u,
        trials=1,
        base_seed=args.seed,
        stratified=args.stratified,
    )
    labeled, unlabeled = split_trial(ds, spec, args.trial)
    return ds, labeled, unlabeled


def _votes_and_posterior(args):
    """Resolve (votes, posterior, n_classes, labeled_set) from --votes-file or
    a dataset split; the posterior follows --posterior (supervised, oracle or
    uniform). labeled_set is None on the votes-file route."""
    if args.votes_file is not None:
        votes, labels = load_votes_csv(args.votes_file)
        post = posterior_source(args.posterior, votes, labels)
        return votes, post, votes.shape[1], None
    if args.dataset is None:
        raise DataFormatError("need --votes-file or --dataset")
    ds, labeled, unlabeled = _load_split(args)
    forest = train_forest(
        labeled, None, _forest_config(args), n_classes=ds.n_classes, jobs=args.jobs
    )
    votes = forest_votes(forest, unlabeled.X)
    post = posterior_source(args.posterior, votes, unlabeled.hidden_y)
    return votes, post, ds.n_classes, labeled


def _resolve_theta(args, post, votes, n_classes):
    if args.theta == "auto":
        return find_theta_star(post, votes, resolution=args.grid_resolution)
    if isinstance(args.theta, list):
        if len(args.theta) != n_classes:
            raise DataFormatError(
                f"--theta lists {len(args.theta)} values for {n_classes} classes"
            )
        return np.asarray(args.theta, dtype=np.float64)
    return np.full(n_classes, float(args.theta))


def cmd_train(args):
    ds = load_dataset(args.dataset, fmt=args.format, label_column=_label_col(args))
    forest = train_forest(
        (ds.X, ds.y), None, _forest_config(args), n_classes=ds.n_classes, jobs=args.jobs
    )
    out = _out_dir(args)
    model_path = args.model_out if args.model_out else out / "forest.json"
    save_forest(forest, model_path)
    pred = predict_bayes(forest_votes(forest, ds.X))
    acc = float(np.mean(pred == ds.y))
    payload = {
        "config": _config_payload(args),
        "model": str(model_path),
        "n_classes": ds.n_classes,
        "n_examples": len(ds),
        "training_accuracy": acc,
    }
    _write_json(out / "train.json", payload)
    print(
        f"train: {len(ds)} examples, {ds.n_classes} classes, "
        f"{args.trees} trees, training accuracy {acc:.4f} -> {model_path}"
    )
    return EXIT_OK


def cmd_bound(args):
    votes, post, k, _ = _votes_and_posterior(args)
    theta = _resolve_theta(args, post, votes, k)
    matrix = bound_matrix(post, votes, theta)
    erb = error_rate_bound(post, votes, theta)
    norm = confusion_norm_bound(post, votes, theta)
    out = _out_dir(args)
    payload = {
        "config": _config_payload(args),
        "theta": [float(t) for t in theta],
        "bound_matrix": [[float(x) for x in row] for row in matrix],
        "error_rate_bound": erb,
        "confusion_norm_bound": norm,
    }
    _write_json(out / "bound.json", payload)
    print(
        f"bound: error-rate bound {erb:.6f}, confusion-matrix norm bound "
        f"{norm:.6f} over {votes.shape[0]} points"
    )
    return EXIT_OK


def _cmd_self_learn(args, policy):
    ds, labeled, unlabeled = _load_split(args)
    fcfg = _forest_config(args)
    cfg = SelfLearnConfig(
        policy=policy,
        posterior_mode=args.posterior,
        grid_resolution=args.grid_resolution,
        fixed_threshold=args.fixed_threshold,
        fixed_max_iter=args.fixed_max_iter,
        curriculum_step=args.curriculum_step,
        forest=fcfg,
        seed=args.seed,
    )
    result = run_self_learning(
        labeled, unlabeled, cfg, n_classes=ds.n_classes, jobs=args.jobs
    )
    pred = predict_bayes(forest_votes(result.forest, unlabeled.X))
    acc = float(np.mean(pred == unlabeled.hidden_y))
    out = _out_dir(args)
    name = args.command
    history_path = out / f"{name}_history.csv"
    history_to_csv(result.history, history_path)
    model_path = out / f"{name}_forest.json"
    save_forest(result.forest, model_path)
    payload = {
        "config": _config_payload(args),
        "policy": policy,
        "iterations": len(result.history),
        "pseudo_labeled": int(result.pseudo_indices.size),
        "accuracy_unlabeled": acc,
        "history": [
            {
                "iteration": r.iteration,
                "thresholds": [float(t) for t in r.thresholds],
                "selected": r.selected,
                "bound_value": r.bound_value,
                "pseudo_accuracy": r.pseudo_accuracy,
            }
            for r in result.history
        ],
        "model": str(model_path),
        "history_csv": str(history_path),
    }
    _write_json(out / f"{name}.json", payload)
    print(
        f"{name}: {len(result.history)} iterations, "
        f"{result.pseudo_indices.size} pseudo-labels, ACC-U {acc:.4f}"
    )
    return EXIT_OK


def cmd_msla(args):
    return _cmd_self_learn(args, "adaptive")


def cmd_fsla(args):
    return _cmd_self_learn(args, "fixed")


def cmd_csla(args):
    return _cmd_self_learn(args, "curriculum")


def _report_payload(args, report):
    return {"config": _config_payload(args), "report": report.as_dict()}


def cmd_cbound(args):
    votes, post, _, _ = _votes_and_posterior(args)
    report = cbound_report(votes, post)
    out = _out_dir(args)
    _write_json(out / "cbound.json", _report_payload(args, report))
    print(f"cbound: {report.value:.6f} (mu1 {report.mu1:.6f}, mu2 {report.mu2:.6f})")
    return EXIT_OK


def _mislabel(args, k):
    if args.mislabel_file is None:
        return np.eye(k)
    p = load_matrix_csv(args.mislabel_file)
    check_mislabel_matrix(p)
    if p.shape[0] != k:
        raise DataFormatError(
            f"mislabeling matrix is {p.shape[0]}x{p.shape[1]}, votes have {k} classes"
        )
    return p


def cmd_cbil(args):
    votes, post, k, _ = _votes_and_posterior(args)
    mislabel = _mislabel(args, k)
    if args.corrupt:
        post = apply_mislabeling(mislabel, post)
    report = cbil_report(votes, post, mislabel, relax=args.relax)
    out = _out_dir(args)
    _write_json(out / "cbil.json", _report_payload(args, report))
    print(
        f"cbil: {report.value:.6f} (raw {report.raw_value:.6f}, "
        f"lambda {args.relax:g})"
    )
    return EXIT_OK


def cmd_pacbayes(args):
    votes, post, k, labeled = _votes_and_posterior(args)
    mislabel = _mislabel(args, k)
    if args.corrupt:
        post = apply_mislabeling(mislabel, post)
    if args.class_counts is not None:
        counts = np.asarray(args.class_counts, dtype=np.int64)
    elif labeled is not None:
        counts = np.bincount(labeled.y, minlength=k + 1)[1:]
    else:
        raise DataFormatError("pacbayes needs --class-counts with --votes-file")
    if counts.size != k:
        raise DataFormatError(
            f"--class-counts lists {counts.size} values for {k} classes"
        )
    report = pac_bayes_report(
        votes, post, mislabel, counts, kl=args.kl, epsilon=args.epsilon
    )
    out = _out_dir(args)
    _write_json(out / "pacbayes.json", _report_payload(args, report))
    print(
        f"pacbayes: {report.value:.6f} (epsilon {args.epsilon:g}, kl {args.kl:g})"
    )
    return EXIT_OK


def cmd_lambda_sweep(args):
    votes, post, k, _ = _votes_and_posterior(args)
    mislabel = _mislabel(args, k)
    if args.corrupt:
        post = apply_mislabeling(mislabel, post)
    grid = args.lambdas if args.lambdas is not None else list(DEFAULT_LAMBDAS)
    rows = []
    for lam in grid:
        try:
            rep = cbil_report(votes, post, mislabel, relax=lam)
            rows.append(rep.as_dict())
        except InapplicableBoundError as exc:
            rows.append(
                {
                    "bound_name": "cbil",
                    "lambda": lam,
                    "applicable": False,
                    "value": None,
                    "detail": str(exc),
                }
            )
    out = _out_dir(args)
    payload = {"config": _config_payload(args), "sweep": rows}
    _write_json(out / "lambda_sweep.json", payload)
    ok = [r for r in rows if r.get("applicable")]
    if ok:
        best = min(ok, key=lambda r: r["value"])
        print(
            f"lambda-sweep: {len(ok)}/{len(grid)} applicable, "
            f"tightest {best['value']:.6f} at lambda {best['lambda']:g}"
        )
    else:
        print(f"lambda-sweep: 0/{len(grid)} applicable")
    return EXIT_OK


def cmd_experiment(args):
    ds = load_dataset(args.dataset, fmt=args.format, label_column=_label_col(args))
    u = args.unlabeled if args.unlabeled is not None else len(ds) - args.labeled
    spec = TrialSpec(
        labeled_count=args.labeled,
        unlabeled_count=u,
        trials=args.trials,
        base_seed=args.seed,
        stratified=args.stratified,
    )
    base_cfg = SelfLearnConfig(
        posterior_mode=args.posterior,
        grid_resolution=args.grid_resolution,
        fixed_threshold=args.fixed_threshold,
        fixed_max_iter=args.fixed_max_iter,
        curriculum_step=args.curriculum_step,
        forest=_forest_config(args),
    )
    report = run_experiment(
        ds,
        spec,
        methods=args.methods,
        self_config=base_cfg,
        forest_config=base_cfg.forest,
        collect_traces=args.traces,
        jobs=args.jobs,
    )
    out = _out_dir(args)
    payload = {"config": _config_payload(args), "report": experiment_to_dict(report)}
    _write_json(out / "experiment.json", payload)
    write_experiment_csv(report, out / "experiment.csv")
    for s in report.methods:
        if s.mean is None:
            print(f"experiment: {s.method}: no unlabeled points, ACC-U undefined")
        else:
            star = " *" if s.significant else ""
            print(
                f"experiment: {s.method}: ACC-U {s.mean:.4f} +/- {s.std:.4f} "
                f"(p vs best {s.p_vs_best:.4f}){star}"
            )
    if report.best_method is not None:
        print(f"experiment: best method {report.best_method}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mvbound",
        description=(
            "Majority-vote error bounds over partially labeled data, and "
            "bound-driven self-learning."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train a forest on a labeled dataset file")
    _add_dataset_opts(sp)
    _add_forest_opts(sp)
    _add_common(sp)
    sp.add_argument("--model-out", type=Path, default=None, help="model file path")
    sp.set_defaults(func=cmd_train)

    def bound_like(name, help_text, func, with_mislabel=False):
        p = sub.add_parser(name, help=help_text)
        _add_dataset_opts(p)
        p.add_argument("--labeled", type=int, default=None, help="labeled sample size")
        p.add_argument("--unlabeled", type=int, default=None)
        p.add_argument("--trial", type=int, default=0)
        p.add_argument("--stratified", action="store_true")
        p.add_argument(
            "--votes-file",
            type=Path,
            default=None,
            help="CSV of precomputed votes (v1..vK, optional label column)",
        )
        p.add_argument(
            "--posterior",
            choices=POSTERIOR_MODES,
            default="supervised",
            help="class-distribution source used to weight the bound",
        )
        _add_forest_opts(p)
        _add_common(p)
        if with_mislabel:
            p.add_argument(
                "--mislabel-file",
                type=Path,
                default=None,
                help="CSV of the column-stochastic mislabeling matrix "
                "(default: identity)",
            )
            p.add_argument(
                "--corrupt",
                action="store_true",
                help="push the posterior through the mislabeling matrix first",
            )
        p.set_defaults(func=func)
        return p

    p = bound_like(
        "bound", "transductive error-rate bound at given thresholds", cmd_bound
    )
    p.add_argument(
        "--theta",
        type=_theta_arg,
        default=0.0,
        help="'auto', one threshold, or a comma list of per-class thresholds",
    )
    p.add_argument(
        "--grid-resolution", type=int, default=20, help="quantile grid for --theta auto"
    )

    for name, func, help_text in (
        ("msla", cmd_msla, "self-learning with bound-minimizing thresholds"),
        ("fsla", cmd_fsla, "self-learning with a fixed vote threshold"),
        ("csla", cmd_csla, "self-learning on a decreasing quantile curriculum"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_dataset_opts(p)
        _add_split_opts(p)
        _add_forest_opts(p)
        _add_common(p)
        p.add_argument(
            "--posterior", choices=POSTERIOR_MODES, default="supervised"
        )
        p.add_argument("--grid-resolution", type=int, default=20)
        p.add_argument("--fixed-threshold", type=float, default=0.7)
        p.add_argument("--fixed-max-iter", type=int, default=10)
        p.add_argument("--curriculum-step", type=float, default=1.0 / 3.0)
        p.set_defaults(func=func)

    bound_like("cbound", "second-moment margin bound on the error", cmd_cbound)
    p = bound_like(
        "cbil",
        "margin bound corrected for label noise",
        cmd_cbil,
        with_mislabel=True,
    )
    p.add_argument(
        "--relax", type=float, default=0.0, help="relaxation added to the denominators"
    )

    p = bound_like(
        "pacbayes",
        "finite-sample version of the noise-corrected margin bound",
        cmd_pacbayes,
        with_mislabel=True,
    )
    p.add_argument(
        "--class-counts",
        type=_int_list_arg,
        default=None,
        help="comma list of labeled example counts per class",
    )
    p.add_argument("--kl", type=float, default=0.0, help="divergence penalty term")
    p.add_argument("--epsilon", type=float, default=0.05, help="confidence parameter")

    p = bound_like(
        "lambda-sweep",
        "noise-corrected margin bound across relaxation values",
        cmd_lambda_sweep,
        with_mislabel=True,
    )
    p.add_argument(
        "--lambdas",
        type=_float_list_arg,
        default=None,
        help="comma list of relaxation values (default 0.1..1.0)",
    )

    p = sub.add_parser(
        "experiment", help="repeated-split comparison of rf/fsla/csla/msla"
    )
    _add_dataset_opts(p)
    _add_split_opts(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument(
        "--methods", type=_methods_arg, default=list(METHODS), help="comma list"
    )
    _add_forest_opts(p)
    _add_common(p)
    p.add_argument("--posterior", choices=POSTERIOR_MODES, default="supervised")
    p.add_argument("--grid-resolution", type=int, default=20)
    p.add_argument("--fixed-threshold", type=float, default=0.7)
    p.add_argument("--fixed-max-iter", type=int, default=10)
    p.add_argument("--curriculum-step", type=float, default=1.0 / 3.0)
    p.add_argument(
        "--traces", action="store_true", help="keep per-iteration traces in the JSON"
    )
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InapplicableBoundError as exc:
        print(f"mvbound: bound inapplicable: {exc}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    except DataFormatError as exc:
        print(f"mvbound: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"mvbound: file not found: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"mvbound: i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"mvbound: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
