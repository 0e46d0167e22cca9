"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric or
training failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, config as C
from .data import DatasetError, dataset_fingerprint, default_data_root, load_tudataset, make_split_plan, manifest_to_dict
from .evaluation import (
    AB_GRID,
    MASK_RATIOS,
    ExperimentFailed,
    FoldReport,
    alpha_beta_matrix,
    emit_report,
    run_experiment,
    sweep_alpha_beta,
    sweep_masking,
)
from .losses import PreconditionError, divergence_bound_check
from .model import CheckpointError, NumericError, load_checkpoint
from .train import evaluate_accuracy

log = logging.getLogger("sscdl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI run config; flags below override it")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
    p.add_argument("--dataset")
    p.add_argument("--data-root", help="TUDataset root (default: $SSCDL_DATA_ROOT or ./data)")
    p.add_argument("--variant", action="append", help="variant name, repeatable")
    p.add_argument("--ratio", action="append", type=float, help="label ratio, repeatable")
    p.add_argument("--folds", help="comma-separated fold ids to run (default: all)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", default="runs", help="output root (default: runs)")
    p.add_argument("--parallel-folds", type=int, default=1, metavar="N")


def _run_config(args) -> C.RunConfig:
    overrides = dict(C.parse_override(s) for s in args.set)
    flag_map = {
        "experiment.dataset": args.dataset,
        "experiment.data_root": args.data_root,
        "experiment.variants": args.variant,
        "experiment.label_ratios": args.ratio,
        "experiment.base_seed": args.seed,
        "experiment.folds": [int(f) for f in args.folds.split(",")] if args.folds else None,
    }
    overrides.update({k: v for k, v in flag_map.items() if v is not None})
    return C.load(args.config, overrides)


def _load_dataset(cfg: C.RunConfig):
    # an empty data_root resolves at load time so the fingerprint stays machine independent
    return load_tudataset(cfg.experiment.data_root or default_data_root(), cfg.experiment.dataset)


def _run_dir(out: str, cfg: C.RunConfig) -> Path:
    d = Path(out) / cfg.fingerprint
    (d / "checkpoints").mkdir(parents=True, exist_ok=True)
    (d / "reports").mkdir(parents=True, exist_ok=True)
    cfg.write(d / "config")
    return d


def _write_reports(run_dir: Path, stem: str, reports: list[FoldReport], text: str | None = None) -> dict:
    paths = {
        f"{stem}.csv": emit_report(reports, "csv"),
        f"{stem}.json": emit_report(reports, "json"),
        f"{stem}.txt": text if text is not None else emit_report(reports, "text"),
    }
    sums = {}
    for name, body in paths.items():
        p = run_dir / "reports" / name
        p.write_text(body)
        sums[name] = _sha256(p)
    return sums


def _manifest(run_dir: Path, cfg: C.RunConfig, dataset_manifest, graphs, reports, audit, checksums, status, error=""):
    variants = {}
    for r in reports:
        variants.setdefault(r.variant, {"pretrain": "run" if r.params.get("pretrain") else "skipped", "loss_mask": r.params.get("loss_mask")})
    doc = {
        "fingerprint": cfg.fingerprint,
        "status": status,
        "error": error,
        "config": cfg.sections(),
        "dataset": manifest_to_dict(dataset_manifest) if dataset_manifest else None,
        "dataset_fingerprint": dataset_fingerprint(graphs) if graphs else None,
        "variants": variants,
        "timings": [
            {"variant": r.variant, "label_ratio": r.label_ratio, "params": r.params, "wall_time_seconds": r.wall_time_seconds}
            for r in reports
        ],
        "folds": [
            {
                "variant": a["variant"],
                "label_ratio": a["label_ratio"],
                "fold": a["fold"],
                "seed": a["seed"],
                "accuracy": a["accuracy"],
                "stages": a["stages"],
                "loss_history": a["loss_history"],
                "test_graph_ids": a["test_graph_ids"],
            }
            for a in audit
        ],
        "report_sha256": checksums,
        "versions": _versions(),
    }
    (run_dir / "manifest").write_text(json.dumps(doc, indent=1, sort_keys=True, default=_json_default))
    return doc


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, frozenset, tuple)):
        return sorted(o)
    raise TypeError(type(o))


def _versions() -> dict:
    import scipy
    import torch

    return {"sscdl": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "torch": torch.__version__}


def _failure(exc: BaseException) -> CliError:
    cause = exc.__cause__ if isinstance(exc, ExperimentFailed) and exc.__cause__ is not None else exc
    if isinstance(cause, (DatasetError, FileNotFoundError)):
        return CliError(str(exc), EXIT_DATA)
    return CliError(str(exc), EXIT_NUMERIC)


def _execute(args, cfg: C.RunConfig, stem: str, runner) -> int:
    try:
        dataset_manifest, graphs = _load_dataset(cfg)
    except (DatasetError, FileNotFoundError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    run_dir = _run_dir(args.out, cfg)
    audit: list = []
    kw = dict(
        graphs=graphs,
        n_classes=dataset_manifest.n_classes,
        parallel_folds=args.parallel_folds,
        checkpoint_dir=run_dir / "checkpoints",
        checkpoint_fingerprint=cfg.fingerprint,
        audit=audit,
    )
    try:
        reports, text = runner(cfg, kw)
    except (ExperimentFailed, NumericError, FloatingPointError, RuntimeError) as exc:
        partial = exc.partial if isinstance(exc, ExperimentFailed) else []
        sums = _write_reports(run_dir, stem, partial)
        _manifest(run_dir, cfg, dataset_manifest, graphs, partial, audit, sums, "failed", str(exc))
        raise _failure(exc) from exc
    sums = _write_reports(run_dir, stem, reports, text)
    _manifest(run_dir, cfg, dataset_manifest, graphs, reports, audit, sums, "ok")
    print(text if text is not None else emit_report(reports, "text"), end="")
    print(f"run directory: {run_dir}")
    args.run_dir = run_dir
    return EXIT_OK


def cmd_ingest(args) -> int:
    root = args.root or default_data_root()
    try:
        manifest, graphs = load_tudataset(root, args.name, args.feature_mode, args.max_degree)
    except (DatasetError, FileNotFoundError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    nodes = np.array([g.n_nodes for g in graphs])
    edges = np.array([len(g.edges) for g in graphs])
    counts = np.bincount([g.label for g in graphs], minlength=manifest.n_classes)
    print(manifest.summary())
    print(f"feature mode: {manifest.feature_mode} ({manifest.n_features} features)")
    print(f"nodes per graph: mean {nodes.mean():.2f}, min {nodes.min()}, max {nodes.max()}")
    print(f"edges per graph: mean {edges.mean():.2f}, min {edges.min()}, max {edges.max()}")
    print("class counts: " + ", ".join(f"{v}={c}" for v, c in zip(manifest.class_values, counts.tolist())))
    print(f"fingerprint: {dataset_fingerprint(graphs)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _run_config(args)

    def runner(cfg, kw):
        return run_experiment(cfg.experiment.spec(), cfg.train, cfg.model, **kw), None

    return _execute(args, cfg, "report", runner)


def cmd_sweep_mask(args) -> int:
    ratios = [float(r) for r in args.values.split(",")] if args.values else list(MASK_RATIOS)
    cfg = C.with_sweep(_run_config(args), "mask", ratios)

    def runner(cfg, kw):
        reports = sweep_masking(cfg.experiment.spec(), cfg.train, cfg.model, ratios=ratios, **kw)
        for r in reports:
            r.params["tag"] = f" mask={r.params['weak_ratio']:g}/{r.params['strong_ratio']:g}"
        return reports, None

    return _execute(args, cfg, "sweep_mask", runner)


def cmd_sweep_ab(args) -> int:
    grid = [float(v) for v in args.values.split(",")] if args.values else list(AB_GRID)
    cfg = C.with_sweep(_run_config(args), "alpha_beta", grid)

    def runner(cfg, kw):
        cells = sweep_alpha_beta(cfg.experiment.spec(), cfg.train, cfg.model, grid=grid, **kw)
        reports = []
        for (a, b), reps in cells.items():
            for r in reps:
                r.params["tag"] = f" a={a:g} b={b:g}"
                reports.append(r)
        lines = []
        for ratio in cfg.experiment.label_ratios:
            for variant in cfg.experiment.variants:
                sub = {k: [r for r in v if r.variant == variant] for k, v in cells.items()}
                m = alpha_beta_matrix(sub, ratio, grid)
                lines.append(f"{variant} @ {100 * ratio:g}% labels: rows alpha, columns beta, mean accuracy (%)")
                lines.append("alpha\\beta " + " ".join(f"{b:>7g}" for b in grid))
                for a, row in zip(grid, m):
                    lines.append(f"{a:>10g} " + " ".join(f"{100 * v:7.2f}" for v in row))
                lines.append("")
        return reports, "\n".join(lines)

    return _execute(args, cfg, "sweep_ab", runner)


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        cfg = C.load(run_dir / "config")
    except C.ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    if cfg.fingerprint != run_dir.name:
        raise CliError(f"config fingerprint {cfg.fingerprint} does not match directory {run_dir.name}", EXIT_CONFIG)
    try:
        _, graphs = _load_dataset(cfg)
    except (DatasetError, FileNotFoundError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    stem = {"none": "report", "mask": "sweep_mask", "alpha_beta": "sweep_ab"}[cfg.sweep.kind]
    if stem != "report":
        raise CliError("evaluate only supports plain runs (sweep checkpoints share file names)", EXIT_CONFIG)
    reports = [FoldReport.from_dict(d) for d in json.loads((run_dir / "reports" / f"{stem}.json").read_text())]
    labels = np.array([g.label for g in graphs])
    exp = cfg.experiment
    rows, mismatches = [], 0
    for r in reports:
        for f, recorded in zip(r.fold_ids, r.per_fold_accuracy):
            plan = make_split_plan(labels, f, exp.fold_count, r.label_ratio, seed=exp.base_seed)
            path = run_dir / "checkpoints" / f"{r.variant}_r{r.label_ratio}_f{f}_finetune.npz"
            try:
                net = load_checkpoint(path, fingerprint=cfg.fingerprint)
            except (CheckpointError, FileNotFoundError) as exc:
                raise CliError(str(exc), EXIT_DATA) from exc
            acc = evaluate_accuracy(net, [graphs[i] for i in plan.test_idx])
            same = acc == recorded
            mismatches += not same
            rows.append({"variant": r.variant, "label_ratio": r.label_ratio, "fold": f, "accuracy": acc, "recorded": recorded, "match": same})
    (run_dir / "reports" / "evaluate.json").write_text(json.dumps(rows, indent=1))
    print(f"re-evaluated {len(rows)} folds from checkpoints; {len(rows) - mismatches} match the recorded accuracy")
    return EXIT_OK if mismatches == 0 else EXIT_NUMERIC


def cmd_bound_check(args) -> int:
    try:
        report = divergence_bound_check(args.tau, args.K, args.trials, args.seed)
    except PreconditionError as exc:
        raise CliError(f"{exc} (need K >= {math.ceil(exc.threshold)})", EXIT_CONFIG) from exc
    out = Path(args.out) if args.out else Path("runs") / "bound-check" / f"tau{args.tau:g}_K{args.K}_seed{args.seed}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    held = sum(report.holds)
    print(f"tau={args.tau:g} K={args.K}: bound log(K+1) - 1/tau = {report.bound:.4f}; threshold e^(1/tau) - 1 = {report.threshold:.4f}")
    print(f"per-sample bound held in {held}/{report.trials} trials (min margin {report.min_margin:.4f})")
    print(
        f"scalar-pair divergence batch value {report.scalar_pair_batch_value:.4f} "
        f"({'above' if report.scalar_pair_batch_holds else 'below'} the bound; recorded only)"
    )
    print(f"report: {out}")
    return EXIT_OK if report.all_hold else EXIT_NUMERIC


def cmd_report(args) -> int:
    reports = []
    for d in args.run_dir:
        p = Path(d) / "reports" / f"{args.stem}.json"
        if not p.is_file():
            raise CliError(f"no report at {p}", EXIT_DATA)
        reports += [FoldReport.from_dict(x) for x in json.loads(p.read_text())]
    body = emit_report(reports, args.format)
    if args.output:
        Path(args.output).write_text(body)
    else:
        print(body, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sscdl", description="Semi-supervised graph classification experiments.")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load and validate a TUDataset collection")
    p.add_argument("name")
    p.add_argument("--root", help="dataset root (default: $SSCDL_DATA_ROOT or ./data)")
    p.add_argument("--feature-mode", choices=["node_labels_onehot", "node_attributes", "degree_onehot"])
    p.add_argument("--max-degree", type=int, default=400)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="cross-validate the configured variants")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-mask", help="weak masking-ratio sweep")
    _add_config_args(p)
    p.add_argument("--values", help=f"comma-separated weak ratios (default {','.join(map(str, MASK_RATIOS))})")
    p.set_defaults(func=cmd_sweep_mask)

    p = sub.add_parser("sweep-ab", help="alpha/beta grid sweep")
    _add_config_args(p)
    p.add_argument("--values", help=f"comma-separated grid values (default {','.join(map(str, AB_GRID))})")
    p.set_defaults(func=cmd_sweep_ab)

    p = sub.add_parser("evaluate", help="re-score saved checkpoints of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bound-check", help="numerically check the divergence lower bound")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_bound_check)

    p = sub.add_parser("report", help="render reports of one or more run directories")
    p.add_argument("run_dir", nargs="+")
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p.add_argument("--stem", default="report", help="report name inside reports/ (report, sweep_mask, sweep_ab)")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    return dispatch(build_parser().parse_args(argv))


def dispatch(args: argparse.Namespace) -> int:
    """Run a parsed command; run-style commands leave their output directory in ``args.run_dir``."""
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
