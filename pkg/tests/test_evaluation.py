import csv
import io

import numpy as np
import pytest

from specgraph import evaluation
from specgraph.config import ExperimentConfig
from specgraph.data import gen_sbm, parse_tu_dataset
from specgraph.evaluation import (
    EvalReport,
    FoldError,
    cross_validate,
    lowest_variance_accuracy,
    rejection_csv,
    rejection_curve,
    stratified_kfold,
    sweep,
    sweep_csv,
)

FAST = dict(max_iter=25, folds=4)


@pytest.fixture(scope="module")
def small_sbm():
    return gen_sbm(num_graphs=24, seed=1)


def _report(labels, predicted, variances):
    items = [{"index": i, "fold": 0, "label": int(y), "predicted": int(p), "probs": [0.5, 0.5],
              "variance": float(v)} for i, (y, p, v) in enumerate(zip(labels, predicted, variances))]
    return EvalReport([0.0], items, {}, 0, 0.0)


class TestFolds:
    def test_one_of_each_class_per_bucket(self):
        split = stratified_kfold(np.repeat([0, 1], 5), k=5, seed=0)
        for fold in split:
            assert sorted(np.repeat([0, 1], 5)[fold.test]) == [0, 1]

    def test_test_buckets_partition(self, rng):
        labels = rng.integers(0, 3, size=97)
        labels[:30] = np.arange(30) % 3
        split = stratified_kfold(labels, k=10, seed=4)
        allt = np.concatenate([f.test for f in split])
        np.testing.assert_array_equal(np.sort(allt), np.arange(97))

    def test_parts_are_disjoint_and_cover(self, rng):
        labels = np.arange(50) % 2
        for fold in stratified_kfold(labels, k=10, seed=1):
            parts = np.concatenate([fold.train, fold.validation, fold.test])
            np.testing.assert_array_equal(np.sort(parts), np.arange(50))

    def test_validation_is_next_bucket(self):
        split = stratified_kfold(np.arange(40) % 2, k=10, seed=0)
        for f, fold in enumerate(split):
            np.testing.assert_array_equal(fold.validation, split.buckets[(f + 1) % 10])

    def test_mutag_bucket_sizes(self, mutag_dir):
        labels = parse_tu_dataset(mutag_dir, "MUTAG").labels
        sizes = sorted(len(f.test) for f in stratified_kfold(labels, k=10, seed=0))
        assert sizes == [18, 18] + [19] * 8

    def test_stratification(self, rng):
        for trial in range(30):
            k = int(rng.integers(3, 11))
            c = int(rng.integers(2, 5))
            labels = np.concatenate([np.full(int(rng.integers(k, 60)), cls) for cls in range(c)])
            rng.shuffle(labels)
            counts = np.bincount(labels)
            for fold in stratified_kfold(labels, k=k, seed=trial):
                for part, share in ((fold.test, 1 / k), (fold.validation, 1 / k)):
                    assert np.all(np.abs(np.bincount(labels[part], minlength=c) - counts * share) < 1 + 1e-9)
                # train absorbs the rounding of both held-out buckets
                ideal = counts * (k - 2) / k
                assert np.all(np.abs(np.bincount(labels[fold.train], minlength=c) - ideal) < 2 + 1e-9)

    def test_determinism(self):
        labels = np.arange(60) % 3
        a, b = stratified_kfold(labels, 10, 7), stratified_kfold(labels, 10, 7)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.test, fb.test)
            np.testing.assert_array_equal(fa.train, fb.train)
        c = stratified_kfold(labels, 10, 8)
        assert any(not np.array_equal(fa.test, fc.test) for fa, fc in zip(a, c))

    def test_too_few_folds(self):
        with pytest.raises(ValueError, match="k must be"):
            stratified_kfold(np.arange(10) % 2, k=2)

    def test_small_class_rejected(self):
        with pytest.raises(ValueError, match="class 1"):
            stratified_kfold(np.array([0] * 10 + [1] * 3), k=5)


class TestCrossValidate:
    def test_report_contents(self, small_sbm):
        cfg = ExperimentConfig(**FAST)
        rep = cross_validate(small_sbm, cfg)
        assert len(rep.fold_accuracies) == 4
        assert sorted(it["index"] for it in rep.items) == list(range(24))
        assert rep.mean == pytest.approx(np.mean(rep.fold_accuracies))
        assert rep.std == pytest.approx(np.std(rep.fold_accuracies, ddof=1))
        assert rep.config == cfg.to_dict()
        assert rep.seed == 0 and rep.wall_clock > 0
        for it in rep.items:
            assert sum(it["probs"]) == pytest.approx(1.0, abs=1e-8)
            assert it["variance"] > 0
        # per-fold accuracy is recomputable from the items
        for f, acc in enumerate(rep.fold_accuracies):
            fold_items = [it for it in rep.items if it["fold"] == f]
            assert acc == pytest.approx(np.mean([it["label"] == it["predicted"] for it in fold_items]))

    def test_validation_bucket_untouched(self, small_sbm, monkeypatch):
        seen = []
        real = evaluation.fit_model

        def spy(spectra, labels, config, seed, num_classes):
            seen.append((len(spectra), seed))
            return real(spectra, labels, config, seed, num_classes)

        monkeypatch.setattr(evaluation, "fit_model", spy)
        split = stratified_kfold(small_sbm.labels, 4, 0)
        cross_validate(small_sbm, ExperimentConfig(**FAST), split=split)
        assert seen == [(len(f.train), f_idx) for f_idx, f in enumerate(split)]

    def test_seed_reproducible(self, small_sbm):
        cfg = ExperimentConfig(model="wt", num_filters=2, **FAST)
        a, b = cross_validate(small_sbm, cfg, seed=3), cross_validate(small_sbm, cfg, seed=3)
        assert a.items == b.items

    def test_parallel_matches_sequential(self, small_sbm):
        cfg = ExperimentConfig(**FAST)
        assert cross_validate(small_sbm, cfg, jobs=2).items == cross_validate(small_sbm, cfg).items

    def test_fold_errors_are_annotated(self, small_sbm, monkeypatch):
        real = evaluation.fit_model

        def broken(spectra, labels, config, seed, num_classes):
            if seed == 2:
                raise FloatingPointError("boom")
            return real(spectra, labels, config, seed, num_classes)

        monkeypatch.setattr(evaluation, "fit_model", broken)
        with pytest.raises(FoldError, match="fold 2: FloatingPointError: boom") as exc:
            cross_validate(small_sbm, ExperimentConfig(**FAST))
        assert exc.value.fold == 2

    def test_json_serializable(self, small_sbm):
        import json

        rep = cross_validate(small_sbm, ExperimentConfig(**FAST))
        doc = json.loads(json.dumps(rep.to_dict()))
        assert doc["mean_accuracy"] == rep.mean and len(doc["items"]) == 24

    def test_items_csv(self, small_sbm):
        rep = cross_validate(small_sbm, ExperimentConfig(**FAST))
        rows = list(csv.reader(io.StringIO(rep.items_csv())))
        assert rows[0] == ["index", "fold", "label", "predicted", "variance", "p0", "p1"]
        assert len(rows) == 25


class TestSweep:
    def test_single_value_equals_cross_validate(self, small_sbm):
        cfg = ExperimentConfig(**FAST)
        (value, rep), = sweep(small_sbm, cfg, "M", [30])
        plain = cross_validate(small_sbm, cfg)
        assert value == 30
        assert rep.fold_accuracies == plain.fold_accuracies
        assert rep.items == plain.items

    def test_values_change_config(self, small_sbm):
        res = sweep(small_sbm, ExperimentConfig(model="wt", num_filters=3, **FAST), "K", [1, 2])
        assert [r.config["num_filters"] for _, r in res] == [1, 2]

    @pytest.mark.parametrize("model,param", [("ft", "K"), ("wt", "M"), ("ft", "L")])
    def test_unknown_parameter(self, small_sbm, model, param):
        with pytest.raises(ValueError, match="cannot sweep"):
            sweep(small_sbm, ExperimentConfig(model=model, **FAST), param, [1])

    def test_csv(self, small_sbm):
        res = sweep(small_sbm, ExperimentConfig(**FAST), "M", [10, 20])
        text = sweep_csv("M", res)
        assert "\r" not in text
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0][:3] == ["M", "mean_accuracy", "std_accuracy"]
        assert [r[0] for r in rows[1:]] == ["10", "20"]


class TestRejection:
    def test_max_threshold_is_overall_accuracy(self, rng):
        labels = rng.integers(0, 2, 40)
        pred = np.where(rng.random(40) < 0.7, labels, 1 - labels)
        rep = _report(labels, pred, rng.random(40))
        t, frac, acc = rejection_curve(rep)[-1]
        assert t == rep.variances.max() and frac == 1.0
        assert acc == pytest.approx(rep.overall_accuracy)

    def test_all_correct(self, rng):
        labels = rng.integers(0, 2, 25)
        curve = rejection_curve(_report(labels, labels, rng.random(25)))
        assert all(acc == 1.0 for _, _, acc in curve)

    def test_ties_and_fractions(self):
        rep = _report([0, 0, 1, 1], [0, 1, 1, 0], [0.1, 0.1, 0.2, 0.3])
        assert rejection_curve(rep) == [(0.1, 0.5, 0.5), (0.2, 0.75, 2 / 3), (0.3, 1.0, 0.5)]

    def test_empty(self):
        assert rejection_curve(_report([], [], [])) == []

    def test_lowest_variance_accuracy(self):
        rep = _report([0] * 10, [0, 0, 0, 1, 0, 1, 1, 1, 1, 1], np.arange(10) / 10)
        assert lowest_variance_accuracy(rep, 0.2) == 1.0
        assert lowest_variance_accuracy(rep, 0.5) == 0.8
        assert lowest_variance_accuracy(rep, 1.0) == 0.4
        with pytest.raises(ValueError):
            lowest_variance_accuracy(rep, 0.0)

    def test_csv(self):
        text = rejection_csv(rejection_curve(_report([0, 1], [0, 0], [0.2, 0.4])))
        assert text == "threshold,retained_fraction,accuracy\n0.2,0.5,1.0\n0.4,1.0,0.5\n"
