"""Macro scores for every variant on the shipped seeded suite, with bootstrap CIs."""

from __future__ import annotations

import sys

from budgetvoi.harness import RunConfig, run_ablation, summarize


def main(n_questions: int = 200, seed: int = 0) -> None:
    summary = summarize(run_ablation(RunConfig(n_questions=n_questions, seed=seed)))
    print(f"{'variant':<12} {'macro EM':>9} {'macro F1':>9}   dF1 vs full [95% CI]")
    for variant, row in summary["variants"].items():
        line = f"{variant:<12} {row['macro_em']:9.4f} {row['macro_f1']:9.4f}"
        delta = summary["deltas_vs_full"].get(variant)
        if delta:
            lo, hi = delta["ci_f1"]
            line += f"   {delta['delta_f1']:+.4f} [{lo:+.4f}, {hi:+.4f}]"
        print(line)


if __name__ == "__main__":
    main(*(int(x) for x in sys.argv[1:3]))
