"""Weak masking-ratio sweep; the strong view always masks twice the weak ratio.

    python3 scripts/mask_sweep.py --values 0.1,0.2,0.3,0.35
"""

import common


def main():
    ap = common.parser(__doc__.splitlines()[0])
    ap.add_argument("--values", default="0.1,0.2,0.3,0.35")
    args = ap.parse_args()
    run_dir = common.run(common.cli_args(args, "sweep-mask") + ["--values", args.values])
    rows = common.load_reports(run_dir, "sweep_mask")
    print(common.table(rows, args.dataset))
    for ratio in sorted({r["label_ratio"] for r in rows}):
        curve = [(r["params"]["weak_ratio"], r["mean"]) for r in rows if r["label_ratio"] == ratio]
        print(f"{100 * ratio:g}% labels: " + "  ".join(f"{w:g}->{100 * m:.2f}" for w, m in curve))
    print(f"artifacts: {run_dir}")


if __name__ == "__main__":
    main()
