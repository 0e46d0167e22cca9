"""Grid over the similarity and divergence weights; prints one accuracy matrix per label ratio.

    python3 scripts/alpha_beta_sweep.py --values 0.01,0.05,0.1,0.5,1
"""

import common


def main():
    ap = common.parser(__doc__.splitlines()[0])
    ap.add_argument("--values", default="0.01,0.05,0.1,0.5,1")
    args = ap.parse_args()
    run_dir = common.run(common.cli_args(args, "sweep-ab") + ["--values", args.values])
    print(f"artifacts: {run_dir}")


if __name__ == "__main__":
    main()
