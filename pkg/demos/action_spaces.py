"""Train every learner under both action spaces and write the comparison report.

    python3 demos/action_spaces.py --iterations 10 --out demo_results
"""

import argparse

from savfleet import experiment as ex
from savfleet.policies import MODES


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument("--out", default="demo_results")
    args = parser.parse_args()

    for agent in (*ex.LEARNING_KINDS, "imbalance", "random"):
        for mode in MODES:
            cfg = ex.desk_preset(agent, mode, iterations=args.iterations, out=args.out)
            series = ex.max_of_runs(ex.run_experiment(cfg))
            print(f"{cfg.label:<24} final-5 mean {ex.final_mean(series):8.3f}")
    for path in ex.report_from_runs(args.out):
        print(f"wrote {path}")
    for row in ex.read_summary(f"{args.out}/action_spaces_summary.csv"):
        if row["row"] == "improvement_percent":
            print(f"{row['algorithm']:<10} 4-nearest over n-zone: {float(row['final5_mean']):+.2f}%")


if __name__ == "__main__":
    main()
