"""Loss-component ablation: SSCDL against SSCDL_cl and SSCDL_ft under shared fold seeds.

    python3 scripts/ablation.py
    python3 scripts/ablation.py --variant sscdl --variant gcn_supervised --variant graphcl_ntxent
"""

import common


def main():
    args = common.parser(__doc__.splitlines()[0], variants=("SSCDL", "SSCDL_cl", "SSCDL_ft")).parse_args()
    run_dir = common.run(common.cli_args(args))
    rows = common.load_reports(run_dir)
    print(common.table(rows, args.dataset))
    by = {(r["variant"], r["label_ratio"]): r for r in rows}
    for (variant, ratio), r in by.items():
        full = by.get(("SSCDL", ratio))
        if full is None or variant == "SSCDL":
            continue
        pooled = ((full["std"] ** 2 + r["std"] ** 2) / 2) ** 0.5
        diff = full["mean"] - r["mean"]
        trend = "holds" if diff >= 0 else ("within noise" if -diff <= pooled else "reversed")
        print(f"{100 * ratio:g}%: SSCDL - {variant} = {100 * diff:+.2f} (pooled std {100 * pooled:.2f}), trend {trend}")
    print(f"artifacts: {run_dir}")


if __name__ == "__main__":
    main()
