"""Seeded sweeps that run every oracle checker and aggregate PASS/FAIL reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerConfig
from .oracle import (
    NORM, FinalizationDistribution, breakpoint_budgets, brute_force_optimum, check_plugin_excess,
    check_ranking_and_gap, check_reward_harm_identity, check_theorem1, oracle_gain_harm,
    policy_value, random_distribution, random_world, sample_points, solve_threshold,
    threshold_policy,
)


@dataclass
class SweepReport:
    name: str
    checked: int = 0
    violations: int = 0
    worst_slack: float = math.inf
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.violations == 0

    def as_dict(self) -> dict:
        return {"name": self.name, "status": "PASS" if self.passed else "FAIL",
                "checked": self.checked, "violations": self.violations,
                "worst_slack": None if math.isinf(self.worst_slack) else self.worst_slack,
                **self.details}


def local_bound_sweep(n_worlds: int = 20, samples_per_world: int = 60, seed: int = 0,
                      cfg: ControllerConfig | None = None) -> SweepReport:
    """Controller utility against the oracle lookahead on random worlds."""
    out = SweepReport("local_utility_bound", details={"norm": NORM, "worlds": n_worlds})
    for w in range(n_worlds):
        world = random_world(seed * 1000 + w, family="exp" if w % 4 else "linear")
        rep = check_theorem1(world, sample_points(world, samples_per_world, seed + w), cfg)
        out.checked += rep.checked
        out.violations += rep.violations
        out.worst_slack = min(out.worst_slack, rep.worst_slack)
    return out


def ranking_sweep(n_worlds: int = 20, samples_per_world: int = 60, seed: int = 0,
                  cfg: ControllerConfig | None = None, guards: str = "controller",
                  mode: str = "controller") -> SweepReport:
    """Ranking conditional and guarded value gap. ``mode="exact"`` feeds the
    oracle components to the scorer so the margin condition actually fires."""
    out = SweepReport("ranking_and_value_gap", details={"norm": NORM, "guards": guards, "mode": mode})
    totals = {"margin_pairs": 0, "flips_without_margin": 0, "guard_compatible": 0,
              "guard_incompatible": 0}
    for w in range(n_worlds):
        world = random_world(seed * 1000 + w, family="exp" if w % 4 else "linear")
        rep = check_ranking_and_gap(world, sample_points(world, samples_per_world, seed + w),
                                    cfg, mode=mode, guards=guards)
        out.checked += rep.checked
        out.violations += rep.violations
        out.worst_slack = min(out.worst_slack, rep.worst_slack)
        for k in totals:
            totals[k] += rep.details[k]
    out.details.update(totals)
    return out


def threshold_sweep(n_dists: int = 120, seed: int = 0, max_z: int = 12,
                    tol: float = 1e-9) -> SweepReport:
    """Threshold policy against the exhaustive optimum at every breakpoint budget.

    Distributions whose duality clauses fail are counted, not asserted.
    """
    out = SweepReport("threshold_optimality", details={"tol": tol})
    verified_dists = unmet = binding = 0
    for i in range(n_dists):
        dist = random_distribution(seed * 100_000 + i, n_z=int(np.random.default_rng([seed, i]).integers(2, max_z + 1)))
        ok_any = False
        for rho in breakpoint_budgets(dist):
            eta, pol, _, rep = solve_threshold(dist, rho, tol)
            if not rep.verified:
                unmet += 1
                continue
            ok_any = True
            binding += rep.gamma_star > 0
            out.checked += 1
            value, harm_ = policy_value(dist, pol)
            opt, _ = brute_force_optimum(dist, rho)
            gap = abs(value - opt)
            out.worst_slack = min(out.worst_slack, tol - gap)
            if gap > tol or harm_ > rho + tol:
                out.violations += 1
        verified_dists += ok_any
    out.details.update(verified_distributions=verified_dists, assumption_unmet=unmet,
                       binding_constraint=binding)
    return out


def identity_sweep(n_dists: int = 200, seed: int = 0, tol: float = 1e-12) -> SweepReport:
    """Reward and harm decompositions under the all-safe, never, and threshold policies."""
    out = SweepReport("reward_harm_identity", details={"tol": tol})
    for i in range(n_dists):
        dist = random_distribution(seed * 100_000 + i)
        G, H = oracle_gain_harm(dist)
        safe = dist.safe_mask
        for pol in (np.zeros(dist.size, int), safe.astype(int), threshold_policy(G, H, safe, 1.0)):
            rep = check_reward_harm_identity(dist, pol)
            out.checked += 1
            gap = max(rep.reward_gap, rep.harm_gap)
            out.worst_slack = min(out.worst_slack, tol - gap)
            out.violations += not rep.holds(tol)
    return out


def boundary_atom_case(delta: float, p_atom: float = 0.3) -> tuple[FinalizationDistribution, np.ndarray]:
    """One atom with |F*| = delta/2 that the plug-in flips; the other z is far from 0.

    Returns the distribution and the plug-in gain vector (harm is unperturbed).
    """
    dist = FinalizationDistribution.from_deltas(
        [[(p_atom, delta / 2)], [(1 - p_atom, 0.9)]], [True, True])
    G, _ = oracle_gain_harm(dist)
    return dist, G - np.array([delta, 0.0])


def excess_sweep(n_trials: int = 600, seed: int = 0) -> SweepReport:
    """Plug-in excess against the boundary-mass bound, plus boundary-atom cases."""
    out = SweepReport("plugin_excess")
    rng = np.random.default_rng([seed, 0xB0B])
    boundary = 0
    for i in range(n_trials):
        if i % 10 == 0:
            delta = float(rng.uniform(0.02, 0.5))
            dist, G_hat = boundary_atom_case(delta)
            _, H = oracle_gain_harm(dist)
            rep = check_plugin_excess(dist, delta, 0.0, 1.0, G_hat=G_hat, H_hat=H)
            boundary += 1
            if abs(rep.excess - 0.3 * delta / 2) > 1e-12:
                out.violations += 1
        else:
            dist = random_distribution(seed * 100_000 + i)
            eta = float(rng.uniform(0.5, 3.0))
            tau = float(rng.choice([0.0, rng.uniform(0, 0.2)]))
            rep = check_plugin_excess(dist, float(rng.uniform(0, 0.3)), float(rng.uniform(0, 0.3)),
                                      eta, tau, seed=seed * 100_000 + i)
        out.checked += 1
        out.worst_slack = min(out.worst_slack, rep.bound - rep.excess)
        out.violations += not rep.holds
    out.details["boundary_atom_cases"] = boundary
    return out


def run_all(seed: int = 0, quick: bool = False) -> list[SweepReport]:
    scale = 4 if quick else 1
    return [
        local_bound_sweep(20, 60 // scale, seed),
        ranking_sweep(20, 60 // scale, seed),
        ranking_sweep(20, 60 // scale, seed, guards="identity"),
        ranking_sweep(20, 60 // scale, seed, mode="exact"),
        threshold_sweep(120 // scale, seed),
        identity_sweep(200 // scale, seed),
        excess_sweep(600 // scale, seed),
    ]
