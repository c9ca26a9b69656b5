"""End-to-end command tests driving mvbound.cli.main in process."""

import json

import numpy as np
import pytest

from mvbound import (
    error_rate_bound,
    find_theta_star,
    forest_votes,
    load_forest,
    posterior_source,
)
from mvbound.cli import main

COMMANDS = (
    "train",
    "bound",
    "msla",
    "fsla",
    "csla",
    "cbound",
    "cbil",
    "pacbayes",
    "lambda-sweep",
    "experiment",
)


def write_votes_csv(path, votes, labels=None):
    k = votes.shape[1]
    header = [f"v{c}" for c in range(1, k + 1)]
    if labels is not None:
        header.append("label")
    lines = [",".join(header)]
    for i, row in enumerate(votes):
        cells = [repr(float(v)) for v in row]
        if labels is not None:
            cells.append(str(int(labels[i])))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def peaked_votes(rng, n=300, k=3, boost=6.0):
    y = rng.integers(1, k + 1, n)
    votes = np.empty((n, k))
    for i in range(n):
        a = np.full(k, 0.4)
        a[y[i] - 1] += boost
        votes[i] = rng.dirichlet(a)
    return votes, y


@pytest.fixture
def votes_file(tmp_path):
    rng = np.random.default_rng(14)
    votes, y = peaked_votes(rng)
    path = tmp_path / "votes.csv"
    write_votes_csv(path, votes, y)
    return path, votes, y


@pytest.fixture
def dataset_file(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.integers(1, 3, size=90)
    X = rng.normal(size=(90, 2))
    X[y == 2, 0] += 2.5
    lines = [
        ",".join([repr(float(a)), repr(float(b)), str(int(c))])
        for (a, b), c in zip(X, y)
    ]
    path = tmp_path / "blobs.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    d = tmp_path / "out"
    monkeypatch.setenv("MVBOUND_OUT", str(d))
    return d


class TestParser:
    def test_help_lists_every_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for cmd in COMMANDS:
            assert cmd in text

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_bad_theta_is_usage_error(self, votes_file):
        path, _, _ = votes_file
        with pytest.raises(SystemExit) as exc:
            main(["bound", "--votes-file", str(path), "--theta", "nope"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            main(["bound", "--votes-file", str(path), "--theta", "1.5"])
        assert exc.value.code == 2

    def test_bad_method_list(self, dataset_file):
        with pytest.raises(SystemExit) as exc:
            main(
                ["experiment", "--dataset", str(dataset_file), "--labeled", "10",
                 "--methods", "rf,svm"]
            )
        assert exc.value.code == 2


class TestExitCodes:
    def test_missing_votes_file(self, outdir):
        assert main(["bound", "--votes-file", "no_such_file.csv"]) == 4

    def test_missing_dataset(self, outdir):
        assert main(["train", "--dataset", "no_such_file.csv"]) == 4

    def test_inapplicable_cbound(self, tmp_path, outdir, capsys):
        # exactly tied votes put zero mass on positive margins
        path = tmp_path / "tied.csv"
        write_votes_csv(path, np.full((8, 2), 0.5))
        assert main(["cbound", "--votes-file", str(path)]) == 3
        assert "inapplicable" in capsys.readouterr().err

    def test_theta_length_mismatch(self, votes_file, outdir):
        path, _, _ = votes_file
        assert main(["bound", "--votes-file", str(path), "--theta", "0.5,0.5"]) == 4

    def test_dataset_route_needs_labeled(self, dataset_file, outdir):
        assert main(["bound", "--dataset", str(dataset_file)]) == 4

    def test_pacbayes_needs_counts_with_votes(self, votes_file, outdir):
        path, _, _ = votes_file
        assert main(["pacbayes", "--votes-file", str(path)]) == 4

    def test_pacbayes_count_length(self, votes_file, outdir):
        path, _, _ = votes_file
        assert (
            main(["pacbayes", "--votes-file", str(path), "--class-counts", "10,10"])
            == 4
        )

    def test_mislabel_size_mismatch(self, votes_file, tmp_path, outdir):
        path, _, _ = votes_file
        bad = tmp_path / "chan.csv"
        bad.write_text("1.0,0.0\n0.0,1.0\n")
        assert (
            main(["cbil", "--votes-file", str(path), "--mislabel-file", str(bad)])
            == 4
        )


class TestBoundCommand:
    def test_matches_library(self, votes_file, outdir):
        path, votes, _ = votes_file
        assert main(["bound", "--votes-file", str(path), "--theta", "0.5"]) == 0
        payload = json.loads((outdir / "bound.json").read_text())
        post = posterior_source("supervised", votes)
        want = error_rate_bound(post, votes, np.full(3, 0.5))
        assert payload["error_rate_bound"] == pytest.approx(want, rel=0, abs=1e-12)
        assert payload["theta"] == [0.5, 0.5, 0.5]
        assert len(payload["bound_matrix"]) == 3

    def test_oracle_posterior(self, votes_file, outdir):
        path, votes, y = votes_file
        assert (
            main(
                ["bound", "--votes-file", str(path), "--theta", "0.3",
                 "--posterior", "oracle"]
            )
            == 0
        )
        payload = json.loads((outdir / "bound.json").read_text())
        post = posterior_source("oracle", votes, y)
        want = error_rate_bound(post, votes, np.full(3, 0.3))
        assert payload["error_rate_bound"] == pytest.approx(want, rel=0, abs=1e-12)

    def test_theta_auto(self, votes_file, outdir):
        path, votes, _ = votes_file
        assert main(["bound", "--votes-file", str(path), "--theta", "auto"]) == 0
        payload = json.loads((outdir / "bound.json").read_text())
        post = posterior_source("supervised", votes)
        want = find_theta_star(post, votes, resolution=20)
        np.testing.assert_allclose(payload["theta"], want)

    def test_rerun_byte_identical(self, votes_file, outdir):
        path, _, _ = votes_file
        args = ["bound", "--votes-file", str(path), "--theta", "0.4,0.5,0.6"]
        assert main(args) == 0
        first = (outdir / "bound.json").read_bytes()
        assert main(args) == 0
        assert (outdir / "bound.json").read_bytes() == first

    def test_out_dir_flag_wins(self, votes_file, tmp_path, outdir):
        path, _, _ = votes_file
        explicit = tmp_path / "elsewhere"
        assert (
            main(
                ["bound", "--votes-file", str(path), "--theta", "0.5",
                 "--out-dir", str(explicit)]
            )
            == 0
        )
        assert (explicit / "bound.json").exists()
        assert not (outdir / "bound.json").exists()


class TestMarginBoundCommands:
    def test_cbil_identity_equals_cbound(self, votes_file, outdir, capsys):
        path, _, _ = votes_file
        assert main(["cbound", "--votes-file", str(path)]) == 0
        assert main(["cbil", "--votes-file", str(path)]) == 0
        out = capsys.readouterr().out
        assert "cbound:" in out and "cbil:" in out
        cb = json.loads((outdir / "cbound.json").read_text())["report"]
        ci = json.loads((outdir / "cbil.json").read_text())["report"]
        assert ci["value"] == cb["value"]
        assert 0.0 <= cb["value"] <= 1.0

    def test_cbil_with_channel_and_corrupt(self, votes_file, tmp_path, outdir):
        path, _, _ = votes_file
        chan = tmp_path / "chan.csv"
        chan.write_text("0.9,0.05,0.05\n0.05,0.9,0.05\n0.05,0.05,0.9\n")
        assert (
            main(
                ["cbil", "--votes-file", str(path), "--mislabel-file", str(chan),
                 "--corrupt", "--relax", "0.2"]
            )
            == 0
        )
        report = json.loads((outdir / "cbil.json").read_text())["report"]
        assert report["lambda"] == 0.2
        assert report["applicable"] is True

    def test_pacbayes_dominates_cbil(self, votes_file, outdir):
        path, _, _ = votes_file
        counts = "50000,50000,50000"
        assert (
            main(["pacbayes", "--votes-file", str(path), "--class-counts", counts])
            == 0
        )
        assert main(["cbil", "--votes-file", str(path)]) == 0
        pb = json.loads((outdir / "pacbayes.json").read_text())["report"]
        ci = json.loads((outdir / "cbil.json").read_text())["report"]
        assert ci["value"] <= pb["value"] <= 1.0

    def test_lambda_sweep_default_grid(self, votes_file, outdir, capsys):
        path, _, _ = votes_file
        assert main(["lambda-sweep", "--votes-file", str(path)]) == 0
        rows = json.loads((outdir / "lambda_sweep.json").read_text())["sweep"]
        assert [r["lambda"] for r in rows] == [
            0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
        ]
        assert all(isinstance(r["applicable"], bool) for r in rows)
        ok = [r for r in rows if r["applicable"]]
        assert ok, "identity channel with positive margins should be applicable"
        summary = capsys.readouterr().out
        assert "applicable" in summary

    def test_lambda_sweep_explicit_grid(self, votes_file, outdir):
        path, _, _ = votes_file
        assert (
            main(["lambda-sweep", "--votes-file", str(path), "--lambdas", "0,0.5"])
            == 0
        )
        rows = json.loads((outdir / "lambda_sweep.json").read_text())["sweep"]
        assert [r["lambda"] for r in rows] == [0.0, 0.5]


class TestDatasetRoute:
    def test_train(self, dataset_file, outdir, capsys):
        assert main(
            ["train", "--dataset", str(dataset_file), "--trees", "10"]
        ) == 0
        payload = json.loads((outdir / "train.json").read_text())
        assert payload["n_classes"] == 2
        assert payload["n_examples"] == 90
        assert 0.5 <= payload["training_accuracy"] <= 1.0
        forest = load_forest(outdir / "forest.json")
        assert forest.n_classes == 2
        assert "train:" in capsys.readouterr().out

    def test_bound_from_dataset(self, dataset_file, outdir):
        assert (
            main(
                ["bound", "--dataset", str(dataset_file), "--labeled", "10",
                 "--trees", "10", "--theta", "auto"]
            )
            == 0
        )
        payload = json.loads((outdir / "bound.json").read_text())
        assert 0.0 <= payload["error_rate_bound"] <= 2.0

    def test_msla_smoke(self, dataset_file, outdir, capsys):
        rc = main(
            ["msla", "--dataset", str(dataset_file), "--labeled", "10",
             "--trees", "10"]
        )
        assert rc == 0
        payload = json.loads((outdir / "msla.json").read_text())
        assert payload["policy"] == "adaptive"
        assert payload["iterations"] == len(payload["history"])
        assert 0.0 <= payload["accuracy_unlabeled"] <= 1.0
        assert (outdir / "msla_history.csv").exists()
        forest = load_forest(outdir / "msla_forest.json")
        assert forest.n_classes == 2
        assert "ACC-U" in capsys.readouterr().out

    def test_rerun_byte_identical(self, dataset_file, outdir):
        args = [
            "msla", "--dataset", str(dataset_file), "--labeled", "10",
            "--trees", "10",
        ]
        assert main(args) == 0
        first = (outdir / "msla.json").read_bytes()
        hist = (outdir / "msla_history.csv").read_bytes()
        assert main(args) == 0
        assert (outdir / "msla.json").read_bytes() == first
        assert (outdir / "msla_history.csv").read_bytes() == hist

    def test_experiment(self, dataset_file, outdir, capsys):
        rc = main(
            ["experiment", "--dataset", str(dataset_file), "--labeled", "10",
             "--unlabeled", "40", "--trials", "2", "--methods", "rf,msla",
             "--trees", "10"]
        )
        assert rc == 0
        payload = json.loads((outdir / "experiment.json").read_text())["report"]
        assert [m["method"] for m in payload["methods"]] == ["rf", "msla"]
        assert all(len(m["accuracies"]) == 2 for m in payload["methods"])
        csv_lines = (outdir / "experiment.csv").read_text().splitlines()
        assert csv_lines[0] == "method,mean,std,p_vs_best,significant"
        assert len(csv_lines) == 3
        out = capsys.readouterr().out
        assert "best method" in out
