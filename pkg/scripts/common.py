"""Shared plumbing for the experiment scripts: argument parsing and report tables."""

import argparse
import json
from pathlib import Path

from sscdl.cli import build_parser, dispatch

from published import MUTAG, ROW


def parser(description: str, variants=("SSCDL",), ratios=(0.3,)) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--data-root", help="TUDataset root (default: $SSCDL_DATA_ROOT or ./data)")
    ap.add_argument("--dataset", default="MUTAG")
    ap.add_argument("--ratio", type=float, action="append", help=f"label ratio, repeatable (default {list(ratios)})")
    ap.add_argument("--variant", action="append", help=f"variant, repeatable (default {list(variants)})")
    ap.add_argument("--folds", help="comma-separated fold subset (default: all ten)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", help="INI run config")
    ap.add_argument("--set", action="append", default=[], help="config override section.key=value")
    ap.add_argument("--out", default="runs")
    ap.set_defaults(default_variants=variants, default_ratios=ratios)
    return ap


def cli_args(args, command: str = "run") -> list[str]:
    out = [command, "--dataset", args.dataset, "--out", args.out, "--seed", str(args.seed)]
    for v in args.variant or args.default_variants:
        out += ["--variant", v]
    for r in args.ratio or args.default_ratios:
        out += ["--ratio", str(r)]
    for s in args.set:
        out += ["--set", s]
    if args.data_root:
        out += ["--data-root", args.data_root]
    if args.folds:
        out += ["--folds", args.folds]
    if args.config:
        out += ["--config", args.config]
    return out


def run(argv: list[str]) -> Path:
    """Invoke the CLI and return the run directory it reports."""
    args = build_parser().parse_args(argv)
    code = dispatch(args)
    if code != 0:
        raise SystemExit(code)
    return Path(args.run_dir)


def load_reports(run_dir: Path, stem: str = "report") -> list[dict]:
    return json.loads((run_dir / "reports" / f"{stem}.json").read_text())


def published(dataset: str, variant: str, ratio: float) -> str:
    if dataset != "MUTAG":
        return "-"
    return MUTAG.get(ratio, {}).get(ROW.get(variant, variant), "-")


def table(rows: list[dict], dataset: str) -> str:
    lines = [f"{'ratio':>6} | {'variant':<32} | {'ours':>12} | {'published':>12}"]
    for r in rows:
        ours = f"{100 * r['mean']:.2f}±{100 * r['std']:.2f}"
        name = r["variant"] + r["params"].get("tag", "")
        lines.append(f"{100 * r['label_ratio']:>5g}% | {name:<32} | {ours:>12} | {published(dataset, r['variant'], r['label_ratio']):>12}")
    return "\n".join(lines)
