"""Command-line interface.

JSON goes to standard output, CSV tables to files (``-`` for standard
output) and logs to standard error. Exit codes: 0 success, 1 runtime
failure (a one-line JSON error object is printed), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from specgraph.config import MODELS, ExperimentConfig
from specgraph.data import GENERATORS, load_dataset, write_tu_dataset
from specgraph.evaluation import SWEEP_PARAMS, cross_validate, rejection_csv, rejection_curve, sweep, sweep_csv
from specgraph.features import EIGEN_TOL, evaluation_points
from specgraph.gp import KERNELS, load_model, save_model
from specgraph.graph import decompose, graph_fourier_transform
from specgraph.pipeline import fit_graphs, initial_bank, predict_graphs

log = logging.getLogger("specgraph")


class UsageError(Exception):
    """Bad flags or configuration; exit code 2."""


# config flag -> ExperimentConfig field
CONFIG_FLAGS = {
    "model": "model",
    "dataset": "dataset",
    "data_dir": "data_dir",
    "num_graphs": "num_graphs",
    "M": "num_eval_points",
    "K": "num_filters",
    "L": "num_bandpass",
    "kernel": "kernel",
    "folds": "folds",
    "seed": "seed",
    "max_iter": "max_iter",
    "memory": "memory",
    "rel_tol": "rel_tol",
    "grad_tol": "grad_tol",
    "lowpass_init": "lowpass_init",
    "bandpass_init": "bandpass_init",
}


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("experiment configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="JSON config file")
    g.add_argument("--model", choices=MODELS)
    g.add_argument("--dataset", help="TU directory, dataset name under --data-dir, or a generator name")
    g.add_argument("--data-dir", help="root for named datasets (default: $SPECGRAPH_DATA_DIR)")
    g.add_argument("--num-graphs", type=int, help="graph count for generated datasets")
    g.add_argument("--M", "--num-eval-points", dest="M", type=int, help="FT-GP evaluation points")
    g.add_argument("--K", "--num-filters", dest="K", type=int, help="WT-GP filter count")
    g.add_argument("--L", "--num-bandpass", dest="L", type=int, help="band-pass atoms per filter")
    g.add_argument("--kernel", choices=KERNELS)
    g.add_argument("--folds", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--memory", type=int, help="L-BFGS history length")
    g.add_argument("--rel-tol", type=float)
    g.add_argument("--grad-tol", type=float)
    g.add_argument("--lowpass-init", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--bandpass-init", type=float, nargs=2, metavar=("LO", "HI"))


def _add_jobs(p):
    p.add_argument("--jobs", type=int, default=1, help="maximum folds run in parallel")


def _add_out(p, what):
    p.add_argument("--out", default="-", help=f"{what} CSV path ('-' for standard output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specgraph", description="Spectral GP graph classification.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset in TU format")
    p.add_argument("generator", choices=sorted(GENERATORS))
    p.add_argument("--num-graphs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--name", help="file prefix (default: generator name)")

    p = sub.add_parser("cv", help="cross-validate a model; EvalReport JSON on standard output")
    _add_config_flags(p)
    _add_jobs(p)
    p.add_argument("--items-csv", help="also write per-item predictions to this CSV")
    p.add_argument("--timing", action="store_true", help="include wall-clock times in the report")

    p = sub.add_parser("sweep", help="cross-validate over values of M (FT-GP) or K (WT-GP)")
    _add_config_flags(p)
    _add_jobs(p)
    p.add_argument("--param", required=True, help="M for ft, K for wt")
    p.add_argument("--values", required=True, help="comma-separated integers")
    _add_out(p, "sweep table")

    p = sub.add_parser("reject", help="accuracy versus predictive-variance threshold")
    _add_config_flags(p)
    _add_jobs(p)
    _add_out(p, "rejection curve")

    p = sub.add_parser("features", help="dump a graph's energy profile or the filter responses")
    _add_config_flags(p)
    p.add_argument("--graph-index", type=int, default=0)
    p.add_argument("--kind", choices=["energy", "filters"], default="energy")
    p.add_argument("--grid-points", type=int, default=101, help="lambda grid size for --kind filters")
    _add_out(p, "feature")

    p = sub.add_parser("fit", help="train on a whole dataset and save the model as JSON")
    _add_config_flags(p)
    p.add_argument("--model-out", required=True, type=Path)

    p = sub.add_parser("predict", help="predict a dataset with a saved model")
    _add_config_flags(p)
    p.add_argument("--model-file", required=True, type=Path)
    p.add_argument("--out", default=None, help="also write per-item predictions to this CSV")
    return parser


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def _config(args) -> ExperimentConfig:
    doc = {}
    if args.config is not None:
        try:
            doc = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config file must contain a JSON object")
    for flag, key in CONFIG_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            doc[key] = val
    if doc.get("data_dir") is None and os.environ.get("SPECGRAPH_DATA_DIR"):
        doc["data_dir"] = os.environ["SPECGRAPH_DATA_DIR"]
    try:
        return ExperimentConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _dataset(cfg: ExperimentConfig):
    if not cfg.dataset:
        raise UsageError("no dataset given (use --dataset or the config file)")
    return load_dataset(cfg.dataset, data_dir=cfg.data_dir, seed=cfg.seed, num_graphs=cfg.num_graphs)


def _emit_json(doc):
    sys.stdout.write(json.dumps(doc) + "\n")


def _write_text(dest: str, text: str):
    if dest == "-":
        sys.stdout.write(text)
    else:
        with open(dest, "w", newline="\n") as fh:
            fh.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_synth(args):
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".specgraph-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc.strerror or exc}") from exc
    ds = GENERATORS[args.generator](num_graphs=args.num_graphs, seed=args.seed)
    write_tu_dataset(ds, out, args.name or args.generator)
    stats = ds.stats()
    stats["seed"] = args.seed
    stats["directory"] = str(out)
    _emit_json(stats)


def cmd_cv(args):
    cfg = _config(args)
    ds = _dataset(cfg)
    rep = cross_validate(ds, cfg, jobs=args.jobs)
    log.info("%s %s: %.4f +- %.4f", ds.name, cfg.model, rep.mean, rep.std)
    if args.items_csv:
        _write_text(args.items_csv, rep.items_csv())
    _emit_json(rep.to_dict(timing=args.timing))


def _parse_values(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--values must be comma-separated integers: {exc}") from exc
    if not vals:
        raise UsageError("--values is empty")
    return vals


def cmd_sweep(args):
    cfg = _config(args)
    if args.param not in SWEEP_PARAMS[cfg.model]:
        raise UsageError(f"cannot sweep {args.param!r} for model {cfg.model!r}; "
                         f"allowed: {', '.join(sorted(SWEEP_PARAMS[cfg.model]))}")
    values = _parse_values(args.values)
    results = sweep(_dataset(cfg), cfg, args.param, values, jobs=args.jobs)
    _write_text(args.out, sweep_csv(args.param, results))
    if args.out != "-":
        _emit_json({"param": args.param, "values": values, "config": cfg.to_dict(),
                    "mean_accuracy": [r.mean for _, r in results],
                    "std_accuracy": [r.std for _, r in results], "csv": args.out})


def cmd_reject(args):
    cfg = _config(args)
    rep = cross_validate(_dataset(cfg), cfg, jobs=args.jobs)
    curve = rejection_curve(rep)
    _write_text(args.out, rejection_csv(curve))
    if args.out != "-":
        _emit_json({"config": cfg.to_dict(), "mean_accuracy": rep.mean,
                    "overall_accuracy": rep.overall_accuracy, "num_thresholds": len(curve), "csv": args.out})


def cmd_features(args):
    cfg = _config(args)
    if args.kind == "filters":
        if args.grid_points < 2:
            raise UsageError("--grid-points must be >= 2")
        bank = initial_bank(cfg, cfg.seed)
        lam = np.linspace(0.0, 2.0, args.grid_points)
        resp = bank.response(lam)
        rows = [[repr(float(x))] + [repr(float(v)) for v in r] for x, r in zip(lam, resp)]
        text = _csv(["lambda"] + [f"filter{k}" for k in range(bank.num_filters)], rows)
        meta = {"kind": "filters", "log_scales": bank.log_scales.tolist()}
    else:
        ds = _dataset(cfg)
        if not 0 <= args.graph_index < len(ds):
            raise UsageError(f"--graph-index must be in [0, {len(ds)})")
        g = ds[args.graph_index]
        dec = decompose(g, graph_index=args.graph_index)
        pts = evaluation_points(cfg.num_eval_points)
        xhat2 = graph_fourier_transform(dec, g.node_features) ** 2
        below = dec.eigenvalues[None, :] <= pts[:, None] + EIGEN_TOL
        energy = below.astype(float) @ xhat2  # (M, D)
        rows = [[repr(float(z))] + [repr(float(v)) for v in r] for z, r in zip(pts, energy)]
        text = _csv(["eval_point"] + [f"dim{d}" for d in range(g.num_features)], rows)
        meta = {"kind": "energy", "graph_index": args.graph_index, "num_nodes": g.num_nodes,
                "label": g.label, "eigenvalues": dec.eigenvalues.tolist()}
    _write_text(args.out, text)
    if args.out != "-":
        meta.update(config=cfg.to_dict(), csv=args.out)
        _emit_json(meta)


def cmd_fit(args):
    cfg = _config(args)
    ds = _dataset(cfg)
    model = fit_graphs(ds.graphs, ds.labels, cfg, num_classes=ds.num_classes)
    save_model(model, args.model_out)
    _emit_json({"model_file": str(args.model_out), "config": cfg.to_dict(), "elbo": model.elbo,
                "iterations": model.num_iter, "converged": model.converged})


def cmd_predict(args):
    cfg = _config(args)
    ds = _dataset(cfg)
    try:
        model = load_model(args.model_file)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot load model {args.model_file}: {exc}") from exc
    pred = predict_graphs(model, ds.graphs)
    labels = ds.labels
    items = [{"index": i, "label": int(labels[i]), "predicted": int(pred.labels[i]),
              "probs": [float(p) for p in pred.probs[i]], "variance": float(pred.variance[i])}
             for i in range(len(ds))]
    if args.out:
        rows = [[it["index"], it["label"], it["predicted"], repr(it["variance"])] + [repr(p) for p in it["probs"]]
                for it in items]
        _write_text(args.out, _csv(["index", "label", "predicted", "variance"]
                                   + [f"p{c}" for c in range(pred.probs.shape[1])], rows))
    _emit_json({"accuracy": float(np.mean(pred.labels == labels)), "items": items})


COMMANDS = {"synth": cmd_synth, "cv": cmd_cv, "sweep": cmd_sweep, "reject": cmd_reject,
            "features": cmd_features, "fit": cmd_fit, "predict": cmd_predict}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=args.log_level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"specgraph {args.command}: error: {exc}\n")
        return 2
    except Exception as exc:  # runtime failure: report as one JSON line
        log.debug("command failed", exc_info=True)
        _emit_json({"error": type(exc).__name__, "message": str(exc), "command": args.command})
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
