"""Constrained answer replacement on a small hand-built finalization law.

Sweeps the harm budget over every breakpoint and compares the threshold
policy with brute force over all deterministic policies.
"""

from __future__ import annotations

from budgetvoi.oracle import (
    FinalizationDistribution, breakpoint_budgets, oracle_gain_harm, policy_value, solve_threshold,
)

# per z: (probability, refined-minus-base reward) atoms
TABLE = [
    [(0.20, 0.8), (0.05, -0.8)],
    [(0.20, 0.4), (0.10, -0.4)],
    [(0.15, 0.6), (0.10, -0.6)],
    [(0.05, 0.1), (0.15, -0.1)],
]


def main() -> None:
    dist = FinalizationDistribution.from_deltas(TABLE, [True] * len(TABLE))
    G, H = oracle_gain_harm(dist)
    for z, (g, h) in enumerate(zip(G, H)):
        print(f"z{z}: G*={g:.3f} H*={h:.3f} ratio={g / h:.2f}")
    for rho in [0.0] + breakpoint_budgets(dist) + [0.1]:
        eta, pol, bf, rep = solve_threshold(dist, rho)
        if rep.verified:
            value, harm = policy_value(dist, pol)
            print(f"rho={rho:.3f}: eta*={eta:.3f} accept={[int(x) for x in pol]} value={value:.4f} "
                  f"harm={harm:.4f} brute force={rep.primal_optimum:.4f}")
        else:
            print(f"rho={rho:.3f}: {rep.status} (dual {rep.dual_value:.4f} vs primal {rep.primal_optimum:.4f})")


if __name__ == "__main__":
    main()
