"""Stratified cross-validation, parameter sweeps and uncertainty rejection curves."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from specgraph.config import ExperimentConfig
from specgraph.data import Dataset
from specgraph.features import SpectralBatch
from specgraph.pipeline import fit_model, predict_model, spectra_for

log = logging.getLogger(__name__)

SWEEP_PARAMS = {"ft": {"M": "num_eval_points"}, "wt": {"K": "num_filters"}}


class FoldError(RuntimeError):
    def __init__(self, fold: int, cause: BaseException):
        self.fold = fold
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")


# --------------------------------------------------------------------------
# Folds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple
    buckets: tuple

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def __getitem__(self, i) -> Fold:
        return self.folds[i]


def stratified_kfold(labels, k: int = 10, seed: int = 0) -> FoldSplit:
    """Stratified k-fold split with a held-out validation bucket per fold.

    Members of each class are shuffled and dealt round-robin into ``k``
    buckets; the dealing position carries over from one class to the next
    so bucket sizes differ by at most one. Fold ``f`` tests on bucket ``f``,
    reserves bucket ``f + 1 (mod k)`` for validation and trains on the rest.
    """
    labels = np.asarray(labels)
    if k < 3:
        raise ValueError("k must be >= 3 (test, validation and at least one training bucket)")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(k)]
    pos = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise ValueError(f"class {cls} has {len(members)} member(s); need at least k={k}")
        for idx in rng.permutation(members):
            buckets[pos % k].append(int(idx))
            pos += 1
    buckets = tuple(np.array(sorted(b), dtype=np.int64) for b in buckets)
    folds = []
    for f in range(k):
        val = (f + 1) % k
        train = np.concatenate([buckets[b] for b in range(k) if b not in (f, val)])
        folds.append(Fold(np.sort(train), buckets[val], buckets[f]))
    return FoldSplit(tuple(folds), buckets)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    fold_accuracies: list
    items: list  # dicts: index, fold, label, predicted, probs, variance
    config: dict
    seed: int
    wall_clock: float
    fold_info: list = field(default_factory=list)
    dataset: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        acc = np.asarray(self.fold_accuracies)
        return float(np.std(acc, ddof=1)) if len(acc) > 1 else 0.0

    @property
    def labels(self) -> np.ndarray:
        return np.array([it["label"] for it in self.items])

    @property
    def predicted(self) -> np.ndarray:
        return np.array([it["predicted"] for it in self.items])

    @property
    def variances(self) -> np.ndarray:
        return np.array([it["variance"] for it in self.items])

    @property
    def correct(self) -> np.ndarray:
        return self.labels == self.predicted

    @property
    def overall_accuracy(self) -> float:
        return float(self.correct.mean())

    def to_dict(self, timing: bool = True) -> dict:
        """JSON-ready summary; ``timing=False`` drops wall-clock fields so output is reproducible."""
        folds = self.fold_info
        if not timing:
            folds = [{k: v for k, v in f.items() if k != "seconds"} for f in folds]
        doc = {
            "dataset": self.dataset,
            "mean_accuracy": self.mean,
            "std_accuracy": self.std,
            "fold_accuracies": list(self.fold_accuracies),
            "seed": self.seed,
            "config": self.config,
            "folds": folds,
            "items": self.items,
        }
        if timing:
            doc["wall_clock_seconds"] = self.wall_clock
        return doc

    def items_csv(self) -> str:
        if not self.items:
            return ""
        ncls = len(self.items[0]["probs"])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "fold", "label", "predicted", "variance"] + [f"p{c}" for c in range(ncls)])
        for it in self.items:
            w.writerow([it["index"], it["fold"], it["label"], it["predicted"], repr(it["variance"])]
                       + [repr(p) for p in it["probs"]])
        return buf.getvalue()


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------


def _run_fold(spectra: SpectralBatch, labels, fold: Fold, config: ExperimentConfig, fold_index: int,
              num_classes: int):
    seed = config.seed + fold_index
    t0 = time.perf_counter()
    try:
        model = fit_model(spectra.subset(fold.train), labels[fold.train], config, seed, num_classes)
        pred = predict_model(model, spectra.subset(fold.test))
    except Exception as exc:
        raise FoldError(fold_index, exc) from exc
    info = {"fold": fold_index, "elbo": model.elbo, "iterations": model.num_iter,
            "converged": model.converged, "jitter": model.jitter,
            "kernel": {"log_lengthscale": model.kernel.log_lengthscale,
                       "log_variance": model.kernel.log_variance},
            "seconds": time.perf_counter() - t0}
    if model.bank is not None:
        info["log_scales"] = model.bank.log_scales.tolist()
    return pred, info


def cross_validate(dataset: Dataset, config: ExperimentConfig, seed: Optional[int] = None,
                   split: Optional[FoldSplit] = None, spectra: Optional[SpectralBatch] = None,
                   jobs: int = 1) -> EvalReport:
    """k-fold cross-validation of the configured model on ``dataset``.

    The validation bucket of every fold is left untouched. ``split`` and
    ``spectra`` can be passed to share work between runs (see :func:`sweep`).
    """
    if seed is not None:
        config = config.replace(seed=seed)
    labels = dataset.labels
    split = split or stratified_kfold(labels, config.folds, config.seed)
    spectra = spectra or spectra_for(dataset.graphs)
    t0 = time.perf_counter()
    args = [(spectra, labels, fold, config, f, dataset.num_classes) for f, fold in enumerate(split)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, *zip(*args)))
    else:
        results = [_run_fold(*a) for a in args]
    accs, items, infos = [], [], []
    for f, (fold, (pred, info)) in enumerate(zip(split, results)):
        yhat = pred.labels
        accs.append(float(np.mean(yhat == labels[fold.test])))
        infos.append(info)
        for j, idx in enumerate(fold.test):
            items.append({"index": int(idx), "fold": f, "label": int(labels[idx]),
                          "predicted": int(yhat[j]), "probs": [float(p) for p in pred.probs[j]],
                          "variance": float(pred.variance[j])})
        log.info("fold %d: accuracy %.4f", f, accs[-1])
    return EvalReport(accs, items, config.to_dict(), config.seed, time.perf_counter() - t0,
                      infos, dataset.name)


def sweep(dataset: Dataset, config: ExperimentConfig, param: str, values: Sequence[int],
          seed: Optional[int] = None, jobs: int = 1) -> list:
    """Cross-validate once per value of ``param`` (``M`` for FT-GP, ``K`` for WT-GP).

    All runs share one fold split. Returns ``[(value, EvalReport), ...]``.
    """
    allowed = SWEEP_PARAMS[config.model]
    if param not in allowed:
        raise ValueError(f"cannot sweep {param!r} for model {config.model!r}; allowed: {sorted(allowed)}")
    if seed is not None:
        config = config.replace(seed=seed)
    split = stratified_kfold(dataset.labels, config.folds, config.seed)
    spectra = spectra_for(dataset.graphs)
    out = []
    for v in values:
        cfg = config.replace(**{allowed[param]: int(v)})
        out.append((v, cross_validate(dataset, cfg, split=split, spectra=spectra, jobs=jobs)))
    return out


def sweep_csv(param: str, results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([param, "mean_accuracy", "std_accuracy"] + [f"fold{i}" for i in range(len(results[0][1].fold_accuracies))])
    for v, rep in results:
        w.writerow([v, repr(rep.mean), repr(rep.std)] + [repr(a) for a in rep.fold_accuracies])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Uncertainty
# --------------------------------------------------------------------------


def rejection_curve(report: EvalReport) -> list:
    """``(threshold, retained_fraction, accuracy)`` for every distinct predictive variance.

    Items with variance above the threshold are rejected.
    """
    var = report.variances
    correct = report.correct
    if len(var) == 0:
        return []
    order = np.argsort(var, kind="stable")
    var_sorted, corr_sorted = var[order], correct[order]
    thresholds = np.unique(var_sorted)
    # number of items with variance <= each threshold
    kept = np.searchsorted(var_sorted, thresholds, side="right")
    hits = np.cumsum(corr_sorted)
    return [(float(t), float(n / len(var)), float(hits[n - 1] / n)) for t, n in zip(thresholds, kept) if n > 0]


def rejection_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "retained_fraction", "accuracy"])
    for t, r, a in curve:
        w.writerow([repr(t), repr(r), repr(a)])
    return buf.getvalue()


def lowest_variance_accuracy(report: EvalReport, fraction: float) -> float:
    """Accuracy over the ``fraction`` of predictions with the smallest variance."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = max(1, int(round(fraction * len(report.items))))
    order = np.argsort(report.variances, kind="stable")[:n]
    return float(report.correct[order].mean())
