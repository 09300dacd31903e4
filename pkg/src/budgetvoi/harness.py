"""Episode loop, budget-ladder and ablation runners, and output files."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .budget import LADDER, Action, Budget, debit, estimate_charge, new_budget, termination_bound
from .controller import ControllerConfig, ScoredActions, select_action
from .finalizer import FinalDecision, FinalizationFeatures, decide, extract_finalization_features, refine
from .metrics import CellResult, ExampleResult, audit_example, bootstrap_ci, cell_deltas, em, f1, macro_delta
from .sim import (
    QAInstance, SearchState, SimParams, StepRecord, Trajectory, backstop_answer, execute,
    generate_instance, initial_state, load_corpus, stable_hash,
)

VARIANTS = ("full", "no_penalty", "no_norm", "no_struct", "no_guards", "stage1_only", "bavt_like")
ABLATION_VARIANTS = ("no_penalty", "no_norm", "no_struct", "no_guards")

# Default synthetic suite: one benchmark per reasoning depth.
DEFAULT_BENCHMARKS = {
    "one_hop": SimParams(hop_count=1),
    "two_hop": SimParams(hop_count=2),
    "three_hop": SimParams(hop_count=3),
}
ZETA = 1


@dataclass(frozen=True)
class RunConfig:
    benchmarks: dict = field(default_factory=lambda: dict(DEFAULT_BENCHMARKS))
    n_questions: int = 200
    ladder: tuple = tuple(LADDER.items())
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    finalizer: bool = True
    variants: tuple = ("full",)
    seed: int = 0
    corpus: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if not self.ladder:
            raise ValueError("budget ladder must be nonempty")
        for v in self.variants:
            if v not in VARIANTS:
                raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if self.n_questions < 0:
            raise ValueError("n_questions must be >= 0")


def variant_settings(variant: str, cfg: ControllerConfig, finalizer: bool = True) -> tuple[ControllerConfig, bool]:
    """Controller config and finalizer switch for a named variant."""
    if variant == "full":
        return cfg, finalizer
    if variant in ABLATION_VARIANTS:
        return cfg.ablate(variant[3:]), finalizer
    if variant == "stage1_only":
        return cfg, False
    if variant == "bavt_like":
        return replace(cfg, uniform_scores=True), False
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class EpisodeResult:
    instance: QAInstance
    caps: tuple[int, int]
    trajectory: Trajectory
    a_base: tuple
    a_ref: tuple
    z: FinalizationFeatures
    decision: FinalDecision
    iterations: int
    bound: int
    final_budget: Budget

    @property
    def final_answer(self) -> tuple:
        return self.decision.chosen_answer


def episode_seed(run_seed: int, question_id: str) -> int:
    return stable_hash(f"{run_seed}:{question_id}")


def greedy_gold_policy(state: SearchState, b: Budget,
                       cfg: ControllerConfig | None = None) -> tuple[Action, None]:
    """Reference policy with oracle knowledge: Search the first hop, Decompose
    each bridge hop, Answer once the chain is resolved or nothing fits."""
    cfg = cfg or ControllerConfig()
    if state.complete:
        return Action.ANSWER, None
    action = Action.SEARCH if state.target_hop == 0 else Action.DECOMPOSE
    if b.covers(estimate_charge(action, state, cfg.tokens)):
        return action, None
    return Action.ANSWER, None


def run_episode(instance: QAInstance, budget: tuple[int, int], cfg: ControllerConfig | None = None,
                finalizer: bool = True, seed: int = 0, log_scores: bool = True,
                policy: Callable = select_action) -> EpisodeResult:
    """One question under a dual budget: controlled search, then finalization."""
    cfg = cfg or ControllerConfig()
    b = new_budget(*budget)
    bound = termination_bound(b, ZETA)
    state: SearchState = initial_state(instance)
    traj = Trajectory(instance.question_id)
    iterations = 0
    answered = False
    while not b.exhausted and not answered:
        iterations += 1
        assert iterations <= bound, "loop exceeded its termination bound"
        action, scored = policy(state, b, cfg)
        state, realized, rec = execute(instance, state, action, b, seed=seed, estimates=cfg.tokens)
        if log_scores and scored is not None:
            rec = replace(rec, scores=scored.as_log())
        traj.steps.append(rec)
        b = debit(b, realized)
        answered = action is Action.ANSWER
        if state.candidate is not None:
            traj.candidates.append(state.candidate)

    traj.evidence = state.evidence
    traj.overdraft = b.overdraft
    a_base = state.candidate if answered else backstop_answer(state)
    traj.a_base = a_base
    a_ref = refine(state.evidence, a_base, instance.q_type, instance.options)
    z = extract_finalization_features(
        traj, a_base, a_ref, q_type=instance.q_type, q_slot=instance.q_slot,
        explicit_factoid_slot=instance.explicit_factoid_slot, comparative=instance.comparative,
        resolved=state.complete)
    decision = decide(z, a_base, a_ref) if finalizer else FinalDecision(False, "disabled", tuple(a_base))
    return EpisodeResult(instance, tuple(budget), traj, a_base, a_ref, z, decision, iterations, bound, b)


# -- corpora -------------------------------------------------------------------


def build_corpus(name: str, params: SimParams, n: int, seed: int) -> list[QAInstance]:
    return [generate_instance(stable_hash(f"{seed}:{name}:{i}"), params, f"{name}-{i:04d}")
            for i in range(n)]


def load_suite(cfg: RunConfig) -> dict[str, list[QAInstance]]:
    if cfg.corpus:
        path = Path(cfg.corpus)
        paths = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
        if not paths:
            raise FileNotFoundError(f"no corpus files under {path}")
        return {p.stem: load_corpus(p) for p in paths}
    return {name: build_corpus(name, params, cfg.n_questions, cfg.seed)
            for name, params in sorted(cfg.benchmarks.items())}


# -- runners -------------------------------------------------------------------


@dataclass
class RunResults:
    cells: list[CellResult] = field(default_factory=list)
    episodes: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def by_variant(self) -> dict[str, list[CellResult]]:
        out: dict[str, list[CellResult]] = {}
        for c in self.cells:
            out.setdefault(c.variant, []).append(c)
        return out


def _tokens(t) -> str:
    return " ".join(t)


def episode_record(ep: EpisodeResult, benchmark: str, level: str, variant: str) -> dict:
    gold = ep.instance.gold_answer
    verdict = audit_example(ep.trajectory, ep.caps)
    return {
        "question_id": ep.instance.question_id, "benchmark": benchmark, "budget": level,
        "variant": variant, "caps": list(ep.caps), "iterations": ep.iterations,
        "steps": [_step_log(s) for s in ep.trajectory.steps],
        "tool_used": verdict.tool_used, "tok_used": verdict.tok_used, "feasible": verdict.feasible,
        "a_base": _tokens(ep.a_base), "a_ref": _tokens(ep.a_ref), "final": _tokens(ep.final_answer),
        "gold": _tokens(gold), "z": asdict(ep.z), "accept": ep.decision.accept,
        "branch": ep.decision.branch,
        "em": em(ep.final_answer, gold), "f1": f1(ep.final_answer, gold),
        "base_f1": f1(ep.a_base, gold), "ref_f1": f1(ep.a_ref, gold),
    }


def _step_log(s: StepRecord) -> dict:
    return {"step": s.step, "action": s.action.value, "estimated": [s.estimated.tool, s.estimated.tok],
            "realized": [s.realized.tool, s.realized.tok], "query": s.query, "new_gold": s.new_gold,
            "scores": s.scores}


def run_suite(cfg: RunConfig, variants: Sequence[str] | None = None,
              suite: dict[str, list[QAInstance]] | None = None) -> RunResults:
    """Every (benchmark, budget level, variant) cell on identical questions and seeds."""
    variants = tuple(variants or cfg.variants)
    suite = suite if suite is not None else load_suite(cfg)
    results = RunResults(config=run_config_dict(cfg, variants))
    for variant in variants:
        vcfg, fin = variant_settings(variant, cfg.controller, cfg.finalizer)
        for bench in sorted(suite):
            for level, caps in cfg.ladder:
                cell = CellResult(bench, level, variant)
                for inst in suite[bench]:
                    ep = run_episode(inst, caps, vcfg, fin, episode_seed(cfg.seed, inst.question_id))
                    rec = episode_record(ep, bench, level, variant)
                    results.episodes.append(rec)
                    cell.examples.append(ExampleResult(
                        inst.question_id, rec["em"], rec["f1"], rec["tool_used"], rec["tok_used"],
                        rec["feasible"], rec["base_f1"], rec["accept"], rec["branch"]))
                results.cells.append(cell)
    return results


def run_ladder(cfg: RunConfig) -> RunResults:
    return run_suite(cfg, cfg.variants)


def run_ablation(cfg: RunConfig) -> RunResults:
    return run_suite(cfg, VARIANTS)


def run_config_dict(cfg: RunConfig, variants: Sequence[str]) -> dict:
    ctrl = asdict(cfg.controller)
    return {"benchmarks": {k: asdict(v) for k, v in sorted(cfg.benchmarks.items())},
            "n_questions": cfg.n_questions, "ladder": [[n, list(c)] for n, c in cfg.ladder],
            "controller": ctrl, "finalizer": cfg.finalizer, "variants": list(variants),
            "seed": cfg.seed, "corpus": cfg.corpus}


# -- summaries and files ---------------------------------------------------------


def macro_scores(cells: Iterable[CellResult]) -> tuple[float, float]:
    cells = list(cells)
    if not cells:
        return 0.0, 0.0
    return float(np.mean([c.em for c in cells])), float(np.mean([c.f1 for c in cells]))


def summarize(results: RunResults, resamples: int = 2000, seed: int = 0) -> dict:
    groups = results.by_variant()
    summary = {"config": results.config, "variants": {}, "deltas_vs_full": {}}
    for variant, cells in groups.items():
        m_em, m_f1 = macro_scores(cells)
        summary["variants"][variant] = {"macro_em": m_em, "macro_f1": m_f1, "cells": len(cells),
                                        "feasible_rate": float(np.mean([c.feasible_rate for c in cells]))}
    if "full" in groups:
        for variant, cells in groups.items():
            if variant == "full":
                continue
            d_em, d_f1 = macro_delta(groups["full"], cells)
            entry = {"delta_em": d_em, "delta_f1": d_f1}
            if len(cells) >= 2:
                em_d, f1_d = cell_deltas(groups["full"], cells)
                entry["ci_em"] = list(bootstrap_ci(em_d, resamples, seed=seed))
                entry["ci_f1"] = list(bootstrap_ci(f1_d, resamples, seed=seed))
            summary["deltas_vs_full"][variant] = entry
    return summary


CELL_COLUMNS = ("benchmark", "budget", "variant", "em", "f1", "avg_tools", "avg_tokens", "feasible_rate")
CURVE_COLUMNS = ("variant", "budget", "tool_cap", "tok_cap", "em", "f1")


def _fmt(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def emit_outputs(results: RunResults, out_dir: str | Path, ladder: dict | None = None) -> dict[str, Path]:
    """Write cells.csv, summary.json, decisions.log and scaling_curves.csv."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    ladder = ladder or {n: tuple(c) for n, c in results.config.get("ladder", [])} or dict(LADDER)
    paths = {name: out / name for name in ("cells.csv", "summary.json", "decisions.log", "scaling_curves.csv")}

    def write(name, fn):
        try:
            with open(paths[name], "w", encoding="utf-8", newline="") as fh:
                fn(fh)
        except OSError as exc:
            raise OSError(f"failed writing {paths[name]}: {exc}") from exc

    def cells_csv(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELL_COLUMNS)
        for c in results.cells:
            w.writerow([c.benchmark, c.budget, c.variant] + [_fmt(x) for x in (
                c.em, c.f1, c.avg_tools, c.avg_tokens, c.feasible_rate)])

    def curves_csv(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for variant, cells in results.by_variant().items():
            levels = list(dict.fromkeys(c.budget for c in cells))
            for level in levels:
                m_em, m_f1 = macro_scores(c for c in cells if c.budget == level)
                caps = ladder.get(level, ("", ""))
                w.writerow([variant, level, caps[0], caps[1], _fmt(m_em), _fmt(m_f1)])

    def decisions(fh):
        for rec in results.episodes:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def summary(fh):
        json.dump(summarize(results), fh, indent=2, sort_keys=True)
        fh.write("\n")

    write("cells.csv", cells_csv)
    write("scaling_curves.csv", curves_csv)
    write("decisions.log", decisions)
    write("summary.json", summary)
    return paths
