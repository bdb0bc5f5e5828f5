"""Command-line pipeline.

Subcommands: synth, train, difficulty, evaluate, prune-study. Train-family
commands read a key=value config file; most settings can be overridden from
the command line. Failures exit nonzero with a stage-tagged message, code 2
when a referenced input path is missing.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import curriculum, ingest, metrics, trainer
from .cellgraph import knn_graph, save_edge_list
from .config import ConfigError, RunConfig, parse_config, write_config
from .model import encode
from .preprocess import preprocess
from .trainer import TrainConfig


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (FileNotFoundError, IsADirectoryError, PermissionError):
        raise
    except Exception as err:
        raise StageError(stage, err) from err


_OVERRIDE_SKIP = {"loss_weights", "zinb_dims"}


def _add_train_overrides(parser: argparse.ArgumentParser) -> None:
    import dataclasses

    for f in fields(TrainConfig):
        if f.name in _OVERRIDE_SKIP:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.default is dataclasses.MISSING:
            note = f"override {f.name} (required in the config)"
        else:
            note = f"override {f.name} (config default: {f.default})"
        if f.name in (
            "n_clusters", "t1", "t2", "k_neighbors", "n_hvg", "latent_dim",
            "hidden_dim", "cheb_order", "target_update_interval", "seed", "t_hat",
        ):
            parser.add_argument(flag, type=int, default=None, help=note)
        else:
            parser.add_argument(flag, type=float, default=None, help=note)
    parser.add_argument("--outdir", default=None, help="override output directory")
    parser.add_argument("--prune-strategy", default=None, choices=curriculum.PRUNE_STRATEGIES)
    parser.add_argument("--local-mode", default=None, choices=curriculum.LOCAL_MODES)
    parser.add_argument(
        "--laplacian-kind", default=None, choices=("combinatorial", "sym_normalized")
    )


def _apply_overrides(run_cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    train_updates = {}
    for f in fields(TrainConfig):
        if f.name in _OVERRIDE_SKIP:
            continue
        value = getattr(args, f.name, None)
        if value is not None:
            train_updates[f.name] = value
    if train_updates:
        run_cfg.train = replace(run_cfg.train, **train_updates)
    for name in ("outdir", "prune_strategy", "local_mode", "laplacian_kind"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(run_cfg, name, value)
    return run_cfg


def _load_dataset(run_cfg: RunConfig) -> ingest.ExpressionMatrix:
    if run_cfg.input is None:
        raise ConfigError("config is missing 'input'")
    if not Path(run_cfg.input).exists():
        raise FileNotFoundError(f"input file not found: {run_cfg.input}")
    data = _stage("ingest", ingest.load_matrix, run_cfg.input, run_cfg.input_format)
    if run_cfg.labels is not None:
        if not Path(run_cfg.labels).exists():
            raise FileNotFoundError(f"labels file not found: {run_cfg.labels}")
        labels = _stage("ingest", ingest.load_labels, run_cfg.labels, data.cell_ids)
        data = ingest.with_labels(data, labels)
    return data


def _write_labels_csv(path, cell_ids, labels, pruned_mask) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "predicted", "pruned_flag"])
        for cid, lab, flag in zip(cell_ids, labels, pruned_mask):
            writer.writerow([cid, int(lab), int(flag)])


def _write_training_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,rec,zinb,cls,total\n")
        for epoch, breakdown in enumerate(history):
            rec, zinb, cls, total = breakdown.as_row()
            fh.write(f"{epoch},{rec!r},{zinb!r},{cls!r},{total!r}\n")


def _write_metrics_json(path, true_labels, pred_labels) -> dict:
    payload = {
        "ari": metrics.ari(true_labels, pred_labels),
        "nmi": metrics.nmi(true_labels, pred_labels),
        "n_cells": int(len(pred_labels)),
        "n_clusters_true": int(np.unique(true_labels).size),
        "n_clusters_pred": int(np.unique(pred_labels).size),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return payload


# -- subcommands ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = ingest.SynthesisSpec(
        n_cells=args.cells,
        n_genes=args.genes,
        n_clusters=args.clusters,
        dropout_rate=args.dropout_rate,
        dispersion=args.dispersion,
        mean_scale=args.mean_scale,
        seed=args.seed,
    )
    data = _stage("synth", ingest.synthesize, spec)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "csv" else "mtx"
    counts_path = outdir / f"counts.{ext}"
    labels_path = outdir / "labels.csv"
    _stage("write", ingest.save_matrix, data, counts_path, args.format)
    _stage("write", ingest.save_labels, data, labels_path)
    zeros = float(np.mean(data.counts == 0))
    print(
        f"wrote {counts_path} ({data.n_cells} cells x {data.n_genes} genes, "
        f"{data.labels.max() + 1} clusters, {zeros:.1%} zeros) and {labels_path}"
    )
    return 0


def cmd_train(args) -> int:
    run_cfg = _apply_overrides(parse_config(args.config), args)
    data = _load_dataset(run_cfg)
    outdir = Path(run_cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_config(run_cfg, outdir / "effective_config.txt")

    result = _stage(
        "train",
        trainer.run_pipeline,
        data,
        run_cfg.train,
        laplacian_kind=run_cfg.laplacian_kind,
        prune_strategy=run_cfg.prune_strategy,
        local_mode=run_cfg.local_mode,
        checkpoint_dir=str(outdir),
    )

    _stage("write", save_edge_list, result.graph, outdir / "graph_edges.txt")
    _stage(
        "write",
        curriculum.write_difficulty_csv,
        outdir / "difficulty.csv",
        result.state.report,
        result.state.prune,
    )
    _stage("write", _write_training_log, outdir / "training_log.csv", result.state.loss_history)
    _stage(
        "write",
        _write_labels_csv,
        outdir / "labels.csv",
        data.cell_ids,
        result.labels,
        result.pruned_mask,
    )
    summary = (
        f"trained {data.n_cells} cells for {len(result.state.loss_history)} epochs, "
        f"pruned {int(result.pruned_mask.sum())}"
    )
    if data.labels is not None:
        payload = _stage(
            "evaluate", _write_metrics_json, outdir / "metrics.json", data.labels, result.labels
        )
        summary += f", ARI={payload['ari']:.4f} NMI={payload['nmi']:.4f}"
    print(summary)
    return 0


def cmd_difficulty(args) -> int:
    run_cfg = _apply_overrides(parse_config(args.config), args)
    data = _load_dataset(run_cfg)
    outdir = Path(run_cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_config(run_cfg, outdir / "effective_config.txt")

    cfg = run_cfg.train
    pre = _stage("preprocess", preprocess, data, cfg.n_hvg)
    graph = _stage("graph", knn_graph, pre.normalized, cfg.k_neighbors, run_cfg.laplacian_kind)
    state = _stage("pretrain", trainer.pretrain, pre, graph, cfg)
    z = encode(pre.normalized, graph, state.params).values
    report = _stage(
        "difficulty", curriculum.measure_difficulty, z, graph,
        beta=cfg.beta, local_mode=run_cfg.local_mode,
    )
    result = _stage(
        "prune", curriculum.prune, report, cfg.alpha,
        strategy=run_cfg.prune_strategy, seed=cfg.seed,
    )
    path = outdir / "difficulty.csv"
    _stage("write", curriculum.write_difficulty_csv, path, report, result)
    print(f"wrote {path} ({report.n} nodes, {result.dropped.size} marked dropped)")
    return 0


def cmd_evaluate(args) -> int:
    for path in (args.true_labels, args.pred_labels):
        if not Path(path).exists():
            raise FileNotFoundError(f"labels file not found: {path}")
    true_by_id = _read_label_csv(args.true_labels)
    pred_by_id = _read_label_csv(args.pred_labels)
    missing = sorted(set(true_by_id) - set(pred_by_id))
    if missing:
        raise StageError("evaluate", ValueError(f"no prediction for cell id {missing[0]!r}"))
    ids = list(true_by_id)
    true = np.array([true_by_id[i] for i in ids])
    pred = np.array([pred_by_id[i] for i in ids])
    payload = _stage("evaluate", _write_metrics_json, args.out, true, pred)
    print(f"ARI={payload['ari']} NMI={payload['nmi']}")
    return 0


def _read_label_csv(path) -> dict[str, int]:
    """Accepts either 'cell_id,label' sidecars or 'cell_id,predicted,...' outputs."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise StageError("evaluate", ValueError(f"{path}: empty labels file"))
    header = [h.strip() for h in rows[0]]
    if header[:2] not in (["cell_id", "label"], ["cell_id", "predicted"]):
        raise StageError(
            "evaluate",
            ValueError(f"{path}: expected a cell_id,label or cell_id,predicted header"),
        )
    return {row[0].strip(): int(row[1]) for row in rows[1:] if row}


def cmd_prune_study(args) -> int:
    run_cfg = _apply_overrides(parse_config(args.config), args)
    data = _load_dataset(run_cfg)
    if data.labels is None:
        raise StageError("prune-study", ValueError("prune-study needs ground-truth labels"))
    outdir = Path(run_cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_config(run_cfg, outdir / "effective_config.txt")

    report_path = outdir / "prune_study.csv"
    failures = 0
    with open(report_path, "w", newline="") as fh:
        fh.write("strategy,alpha,seed,ari,nmi\n")
        for strategy in run_cfg.strategies:
            for alpha in run_cfg.alphas:
                for seed in run_cfg.seeds:
                    cfg = replace(run_cfg.train, alpha=alpha, seed=seed)
                    try:
                        result = trainer.run_pipeline(
                            data,
                            cfg,
                            laplacian_kind=run_cfg.laplacian_kind,
                            prune_strategy=strategy,
                            local_mode=run_cfg.local_mode,
                        )
                        a = metrics.ari(data.labels, result.labels)
                        n = metrics.nmi(data.labels, result.labels)
                        fh.write(f"{strategy},{alpha!r},{seed},{a!r},{n!r}\n")
                        fh.flush()
                        print(f"{strategy} alpha={alpha} seed={seed}: ARI={a:.4f} NMI={n:.4f}")
                    except Exception as err:  # keep the remaining grid cells running
                        failures += 1
                        print(
                            f"[prune-study] {strategy} alpha={alpha} seed={seed} failed: {err}",
                            file=sys.stderr,
                        )
    print(f"wrote {report_path}" + (f" ({failures} cells failed)" if failures else ""))
    return 0 if failures == 0 else 1


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="celluster",
        description="Curriculum-paced graph-convolutional embedding clustering "
        "for single-cell count matrices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser(
        "synth",
        help="generate a synthetic count matrix with labels",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_synth.add_argument("--cells", type=int, default=300, help="number of cells")
    p_synth.add_argument("--genes", type=int, default=200, help="number of genes")
    p_synth.add_argument("--clusters", type=int, default=3, help="generating clusters")
    p_synth.add_argument("--dropout-rate", type=float, default=0.3, help="zero-inflation weight")
    p_synth.add_argument("--dispersion", type=float, default=2.0, help="count dispersion")
    p_synth.add_argument("--mean-scale", type=float, default=1.0, help="gene mean scale")
    p_synth.add_argument("--seed", type=int, default=0, help="generator seed")
    p_synth.add_argument("--format", choices=ingest.FORMATS, default="csv", help="output format")
    p_synth.add_argument("--outdir", default="synth_out", help="output directory")
    p_synth.set_defaults(fn=cmd_synth)

    p_train = sub.add_parser("train", help="run the full training pipeline from a config")
    p_train.add_argument("config", help="key=value config file")
    _add_train_overrides(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_diff = sub.add_parser(
        "difficulty", help="pretrain, score node difficulty, and write the report CSV"
    )
    p_diff.add_argument("config", help="key=value config file")
    _add_train_overrides(p_diff)
    p_diff.set_defaults(fn=cmd_difficulty)

    p_eval = sub.add_parser("evaluate", help="compare predicted labels against ground truth")
    p_eval.add_argument("--true-labels", required=True)
    p_eval.add_argument("--pred-labels", required=True)
    p_eval.add_argument("--out", default="metrics.json")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_study = sub.add_parser(
        "prune-study", help="grid of (strategy, alpha, seed) pipeline runs"
    )
    p_study.add_argument("config", help="key=value config file")
    _add_train_overrides(p_study)
    p_study.set_defaults(fn=cmd_prune_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ConfigError, ingest.IngestError) as err:
        print(f"error: [config] {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
