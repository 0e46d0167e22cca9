"""Cross-validate full SSCDL on MUTAG and print it next to the published numbers.

    python3 scripts/reproduce_mutag.py                 # 30% labels, 10 folds
    python3 scripts/reproduce_mutag.py --ratio 0.3 --ratio 0.5 --ratio 0.7
"""

import common


def main():
    args = common.parser(__doc__.splitlines()[0]).parse_args()
    run_dir = common.run(common.cli_args(args))
    print(common.table(common.load_reports(run_dir), args.dataset))
    print(f"artifacts: {run_dir}")


if __name__ == "__main__":
    main()
