import csv
import io
import json

import numpy as np
import pytest

from specgraph.cli import main
from specgraph.data import Dataset, write_tu_dataset
from specgraph.graph import Graph

from conftest import DATA_DIR

FAST = ["--dataset", "sbm", "--num-graphs", "24", "--folds", "4", "--max-iter", "20"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _signal_dataset(tmp_path, values, edges=((0, 1), (1, 2), (2, 3), (0, 3))):
    g = Graph(4, edges, np.asarray(values, dtype=float)[:, None], 0)
    h = Graph(3, [(0, 1), (1, 2)], np.ones((3, 1)), 1)
    write_tu_dataset(Dataset([g, h], "SIG"), tmp_path / "SIG")
    return tmp_path / "SIG"


class TestSynth:
    def test_ring_vs_clique(self, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", "ring_vs_clique", "--out", tmp_path, "--seed", 2)
        assert code == 0
        stats = json.loads(out)
        assert stats["class_counts"] == [100, 100]
        assert 15 <= stats["mean_nodes"] <= 40
        assert (tmp_path / "ring_vs_clique_A.txt").is_file()

    def test_identical_files_across_runs(self, capsys, tmp_path):
        for d in ("a", "b"):
            assert run(capsys, "synth", "sbm", "--out", tmp_path / d, "--num-graphs", 20, "--seed", 9)[0] == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_unwritable_directory(self, capsys, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        code, out, err = run(capsys, "synth", "sbm", "--out", blocker / "sub")
        assert code == 2
        assert "cannot write" in err and out == ""

    def test_unknown_generator(self, capsys, tmp_path):
        assert run(capsys, "synth", "tree", "--out", tmp_path)[0] == 2


class TestCV:
    def test_report_and_reproducibility(self, capsys, tmp_path):
        code, first, _ = run(capsys, "cv", "--model", "ft", *FAST, "--items-csv", tmp_path / "items.csv")
        assert code == 0
        doc = json.loads(first)
        assert len(doc["fold_accuracies"]) == 4
        assert doc["config"]["model"] == "ft" and doc["config"]["max_iter"] == 20
        assert "wall_clock_seconds" not in doc
        rows = list(csv.reader(io.StringIO((tmp_path / "items.csv").read_text())))
        assert len(rows) == 25
        assert run(capsys, "cv", "--model", "ft", *FAST)[1] == first

    def test_timing_flag(self, capsys):
        doc = json.loads(run(capsys, "cv", *FAST, "--timing")[1])
        assert doc["wall_clock_seconds"] > 0

    def test_seed_changes_output(self, capsys):
        a = run(capsys, "cv", *FAST, "--seed", 1)[1]
        b = run(capsys, "cv", *FAST, "--seed", 2)[1]
        assert json.loads(a)["seed"] == 1 and a != b

    def test_invalid_model(self, capsys):
        code, out, err = run(capsys, "cv", "--model", "gcn", "--dataset", "sbm")
        assert code == 2 and "invalid choice" in err

    def test_config_file_with_overrides(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"model": "wt", "num_filters": 2, "dataset": "sbm", "num_graphs": 24,
                                   "folds": 4, "max_iter": 5}))
        doc = json.loads(run(capsys, "cv", "--config", cfg, "--K", 3)[1])
        assert doc["config"]["model"] == "wt"
        assert doc["config"]["num_filters"] == 3
        assert doc["config"]["max_iter"] == 5

    @pytest.mark.parametrize("content", ['{"bogus": 1}', '{"folds": 1}', "not json", "[1, 2]"])
    def test_bad_config_is_usage_error(self, capsys, tmp_path, content):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(content)
        assert run(capsys, "cv", "--config", cfg, "--dataset", "sbm")[0] == 2

    def test_missing_dataset_flag(self, capsys):
        assert run(capsys, "cv", "--model", "ft")[0] == 2

    def test_runtime_error_is_single_json_line(self, capsys, tmp_path, monkeypatch):
        monkeypatch.delenv("SPECGRAPH_DATA_DIR", raising=False)
        code, out, _ = run(capsys, "cv", "--dataset", "NOT_A_DATASET")
        assert code == 1
        assert out.count("\n") == 1
        doc = json.loads(out)
        assert doc["error"] == "MissingFileError" and doc["command"] == "cv"

    def test_parse_error_exit_code(self, capsys, tmp_path):
        bad = tmp_path / "BAD"
        bad.mkdir()
        (bad / "BAD_A.txt").write_text("1, 2\n")
        (bad / "BAD_graph_indicator.txt").write_text("1\nz\n")
        (bad / "BAD_graph_labels.txt").write_text("0\n")
        code, out, _ = run(capsys, "cv", "--dataset", bad)
        assert code == 1
        assert "BAD_graph_indicator.txt:2" in json.loads(out)["message"]

    def test_data_dir_environment(self, capsys, monkeypatch):
        monkeypatch.setenv("SPECGRAPH_DATA_DIR", str(DATA_DIR))
        doc = json.loads(run(capsys, "cv", "--dataset", "MUTAG", "--folds", "3", "--max-iter", "5")[1])
        assert doc["dataset"] == "MUTAG" and len(doc["items"]) == 188


class TestSweepAndReject:
    def test_single_value_sweep_equals_cv(self, capsys, tmp_path):
        out_csv = tmp_path / "sweep.csv"
        code, out, _ = run(capsys, "sweep", "--model", "ft", *FAST, "--param", "M", "--values", "30",
                           "--out", out_csv)
        assert code == 0
        cv = json.loads(run(capsys, "cv", "--model", "ft", *FAST)[1])
        assert json.loads(out)["mean_accuracy"] == [cv["mean_accuracy"]]
        text = out_csv.read_text()
        assert "\r" not in text
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0][0] == "M" and float(rows[1][1]) == cv["mean_accuracy"]

    def test_sweep_to_stdout(self, capsys):
        code, out, _ = run(capsys, "sweep", *FAST, "--param", "M", "--values", "10,20")
        assert code == 0
        assert [r[0] for r in csv.reader(io.StringIO(out))] == ["M", "10", "20"]

    @pytest.mark.parametrize("param,values", [("K", "5"), ("L", "2"), ("M", "a,b")])
    def test_sweep_usage_errors(self, capsys, param, values):
        assert run(capsys, "sweep", "--model", "ft", *FAST, "--param", param, "--values", values)[0] == 2

    def test_reject(self, capsys, tmp_path):
        out_csv = tmp_path / "reject.csv"
        code, out, _ = run(capsys, "reject", *FAST, "--out", out_csv)
        assert code == 0
        summary = json.loads(out)
        rows = list(csv.reader(io.StringIO(out_csv.read_text())))
        assert rows[0] == ["threshold", "retained_fraction", "accuracy"]
        assert float(rows[-1][1]) == 1.0
        assert float(rows[-1][2]) == pytest.approx(summary["overall_accuracy"])
        thresholds = [float(r[0]) for r in rows[1:]]
        assert thresholds == sorted(thresholds)


class TestFeatures:
    def _profile(self, capsys, tmp_path, values, m=7, **kw):
        code, out, _ = run(capsys, "features", "--dataset", _signal_dataset(tmp_path, values, **kw),
                           "--graph-index", 0, "--M", m)
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["eval_point", "dim0"]
        return np.array([[float(v) for v in r] for r in rows[1:]])

    def test_constant_signal_is_flat(self, capsys, tmp_path):
        # a 4-cycle is regular, so the constant vector spans the zero eigenspace
        prof = self._profile(capsys, tmp_path, [1, 1, 1, 1])
        np.testing.assert_allclose(prof[:, 1], 4.0, rtol=1e-12)

    def test_dc_signal_of_irregular_graph_is_flat(self, capsys, tmp_path):
        # with the normalized Laplacian the DC vector is sqrt(degree)
        edges = ((0, 1), (1, 2), (2, 3), (0, 3), (0, 2))
        prof = self._profile(capsys, tmp_path, np.sqrt([3, 2, 3, 2]), edges=edges)
        np.testing.assert_allclose(prof[:, 1], 10.0, rtol=1e-12)

    def test_zero_signal(self, capsys, tmp_path):
        prof = self._profile(capsys, tmp_path, [0, 0, 0, 0])
        assert np.all(prof[:, 1] == 0)

    def test_eval_points_column(self, capsys, tmp_path):
        prof = self._profile(capsys, tmp_path, [1, -2, 0.5, 3], m=9)
        np.testing.assert_array_equal(prof[:, 0], np.linspace(0, 2, 9))
        assert prof[-1, 1] == pytest.approx(1 + 4 + 0.25 + 9)

    def test_filter_responses(self, capsys, tmp_path):
        code, out, _ = run(capsys, "features", "--kind", "filters", "--K", 3, "--grid-points", 5,
                           "--out", tmp_path / "f.csv")
        assert code == 0
        meta = json.loads(out)
        rows = list(csv.reader(io.StringIO((tmp_path / "f.csv").read_text())))
        assert rows[0] == ["lambda", "filter0", "filter1", "filter2"]
        assert [float(r[1]) for r in rows[1:2]] == [1.0]
        assert len(meta["log_scales"]) == 3

    def test_graph_index_out_of_range(self, capsys, tmp_path):
        code, _, _ = run(capsys, "features", "--dataset", _signal_dataset(tmp_path, [1, 1, 1, 1]),
                         "--graph-index", 5)
        assert code == 2


class TestFitPredict:
    def test_round_trip(self, capsys, tmp_path):
        model = tmp_path / "model.json"
        code, out, _ = run(capsys, "fit", "--model", "wt", "--K", 2, "--dataset", "sbm", "--num-graphs", 12,
                           "--max-iter", 15, "--model-out", model)
        assert code == 0 and json.loads(out)["iterations"] <= 15
        code, out, _ = run(capsys, "predict", "--dataset", "sbm", "--num-graphs", 12, "--model-file", model,
                           "--out", tmp_path / "pred.csv")
        assert code == 0
        doc = json.loads(out)
        assert len(doc["items"]) == 12 and 0 <= doc["accuracy"] <= 1
        assert len((tmp_path / "pred.csv").read_text().splitlines()) == 13

    def test_missing_model_file(self, capsys, tmp_path):
        code, _, _ = run(capsys, "predict", "--dataset", "sbm", "--num-graphs", 4,
                         "--model-file", tmp_path / "none.json")
        assert code == 2
