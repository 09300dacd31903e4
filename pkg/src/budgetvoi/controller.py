"""Search-time action scoring under dual budgets.

Each feasible action gets a utility ``u = progress + structural - penalty``,
a clipped value-per-budget score ``r = max(u, 0) / (d + eps)``, and finally a
guarded executable score. The controller picks the guarded argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from .budget import (
    ACTIONS, TOOL_ACTIONS, Action, Budget, ChargeVector, TokenEstimates,
    estimate_charge, normalized_charge, pressure,
)
from .sim import SearchState, make_query

MASKED = -math.inf
ABLATIONS = ("penalty", "norm", "struct", "guards")


class ControllerDeadlock(RuntimeError):
    """Every feasible action was masked and the budget backstop did not fire."""


@dataclass(frozen=True)
class FeatureVector:
    unresolved_evidence: float = 0.0
    compositionality: float = 0.0
    closure: float = 0.0
    answer_support: float = 0.0
    has_candidate: int = 0
    stagnation: float = 0.0
    loop_pressure: float = 0.0
    early_answer_risk: float = 0.0
    new_support_rate: float = 0.0
    search_count: int = 0
    decompose_count: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.endswith("_count"):
                if v < 0:
                    raise ValueError(f"{f.name} must be >= 0")
            elif not 0.0 <= v <= 1.0:
                raise ValueError(f"{f.name}={v} outside [0, 1]")


@dataclass(frozen=True)
class ControllerConfig:
    # coefficients reported for the released controller
    cost_penalty_scale: float = 0.7
    decomposition_bonus: float = 0.14
    early_answer_penalty: float = 0.18
    epsilon: float = 1e-6
    # progress weights and remaining structural terms
    search_weight: float = 0.8
    decompose_weight: float = 0.6
    answer_weight: float = 1.0
    loop_penalty: float = 0.2
    stagnation_bonus: float = 0.1
    d_base: float = 0.1
    # guard thresholds
    weak_support_threshold: float = 0.5
    factoid_threshold: float = 0.25
    min_search_threshold: float = 0.4
    stagnation_threshold: float = 0.5
    decompose_decay: float = 0.5
    # ablations
    no_penalty: bool = False
    no_norm: bool = False
    no_struct: bool = False
    no_guards: bool = False
    uniform_scores: bool = False
    tokens: TokenEstimates = field(default_factory=TokenEstimates)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        for name in ("cost_penalty_scale", "decomposition_bonus", "early_answer_penalty",
                     "search_weight", "decompose_weight", "answer_weight", "loop_penalty",
                     "stagnation_bonus", "d_base"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def ablate(self, *names: str) -> "ControllerConfig":
        for n in names:
            if n not in ABLATIONS:
                raise ValueError(f"unknown ablation {n!r}; expected one of {ABLATIONS}")
        return replace(self, **{f"no_{n}": True for n in names})


@dataclass
class ActionScore:
    action: Action
    charge: ChargeVector
    progress: float
    structural: float
    penalty: float
    utility: float
    scale: float
    raw: float
    guarded: float
    notes: list[str] = field(default_factory=list)

    @property
    def masked(self) -> bool:
        return self.guarded == MASKED

    def as_log(self) -> dict:
        return {"progress": self.progress, "structural": self.structural, "penalty": self.penalty,
                "utility": self.utility, "scale": self.scale, "raw": self.raw,
                "guarded": None if self.masked else self.guarded, "notes": list(self.notes)}


@dataclass
class ScoredActions:
    scores: dict[Action, ActionScore]
    backstop: bool = False

    def __getitem__(self, action: Action) -> ActionScore:
        return self.scores[Action(action)]

    def __contains__(self, action) -> bool:
        return Action(action) in self.scores

    def as_log(self) -> dict:
        return {"backstop": self.backstop,
                **{a.value: s.as_log() for a, s in self.scores.items()}}


def extract_features(state: SearchState, b: Budget) -> FeatureVector:
    """Exact features read off simulator ground truth."""
    del b  # budget enters through pressure terms, not features
    inst = state.instance
    n = inst.hop_count
    closure = state.resolved_depth / n
    compositionality = (n - 1) / n
    # share of past queries that the next Search would repeat verbatim
    queries = state.queries
    loop = queries.count(make_query(state, Action.SEARCH)) / len(queries) if queries else 0.0
    return FeatureVector(
        unresolved_evidence=1.0 - closure,
        compositionality=compositionality,
        closure=closure,
        answer_support=1.0 if state.complete else 0.0,
        has_candidate=int(state.resolved_depth > 0),
        stagnation=min(1.0, state.no_gain_streak / 2),
        loop_pressure=loop,
        early_answer_risk=compositionality * (1.0 - closure),
        new_support_rate=(state.gains + 1) / (state.tool_steps + 1),
        search_count=state.search_count,
        decompose_count=state.decompose_count,
    )


def progress_signal(k: Action, f: FeatureVector, cfg: ControllerConfig | None = None) -> float:
    cfg = cfg or ControllerConfig()
    k = Action(k)
    if k is Action.SEARCH:
        return cfg.search_weight * f.unresolved_evidence * f.new_support_rate
    if k is Action.DECOMPOSE:
        return cfg.decompose_weight * f.compositionality * (1.0 - f.closure)
    return cfg.answer_weight * f.answer_support * f.closure * f.has_candidate


def structural_signal(k: Action, f: FeatureVector, cfg: ControllerConfig | None = None) -> float:
    cfg = cfg or ControllerConfig()
    if cfg.no_struct:
        return 0.0
    k = Action(k)
    if k is Action.SEARCH:
        return -cfg.loop_penalty * f.loop_pressure
    if k is Action.DECOMPOSE:
        return (cfg.decomposition_bonus * f.compositionality
                + cfg.stagnation_bonus * f.stagnation * f.compositionality)
    return -cfg.early_answer_penalty * f.early_answer_risk


def budget_penalty(k: Action, g: ChargeVector, b: Budget, cfg: ControllerConfig | None = None,
                   f: FeatureVector | None = None) -> float:
    """Signed: positive for tool actions under pressure, a bonus for supported answers."""
    cfg = cfg or ControllerConfig()
    if cfg.no_penalty:
        return 0.0
    rho = pressure(b)
    if Action(k) is Action.ANSWER:
        support = f.answer_support if f is not None else 0.0
        return -cfg.cost_penalty_scale * rho * support
    return cfg.cost_penalty_scale * rho * normalized_charge(g, b)


def utility(k: Action, f: FeatureVector, g: ChargeVector, b: Budget,
            cfg: ControllerConfig | None = None) -> float:
    cfg = cfg or ControllerConfig()
    return progress_signal(k, f, cfg) + structural_signal(k, f, cfg) - budget_penalty(k, g, b, cfg, f)


def action_scale(k: Action, g: ChargeVector, b: Budget, cfg: ControllerConfig | None = None) -> float:
    """Budget-aware action scale d = (normalized charge + d_base) * (1 + rho)."""
    cfg = cfg or ControllerConfig()
    del k
    return (normalized_charge(g, b) + cfg.d_base) * (1.0 + pressure(b))


def normalized_score(u: float, k: Action, g: ChargeVector, b: Budget,
                     cfg: ControllerConfig | None = None) -> float:
    cfg = cfg or ControllerConfig()
    clipped = max(0.0, u)
    if cfg.no_norm:
        return clipped
    return clipped / (action_scale(k, g, b, cfg) + cfg.epsilon)


def feasible_actions(b: Budget, cfg: ControllerConfig | None = None, state=None) -> list[Action]:
    """Tool actions must fit the remaining budget; Answer is always feasible."""
    cfg = cfg or ControllerConfig()
    out = [Action.ANSWER]
    for k in TOOL_ACTIONS:
        if b.covers(estimate_charge(k, state, cfg.tokens)):
            out.append(k)
    return out


def score_actions(f: FeatureVector, b: Budget, charges: dict[Action, ChargeVector],
                  cfg: ControllerConfig | None = None) -> ScoredActions:
    """Utility and normalized score for each action in ``charges`` (before guards)."""
    cfg = cfg or ControllerConfig()
    scores = {}
    for k in ACTIONS:
        if k not in charges:
            continue
        g = charges[k]
        prog = progress_signal(k, f, cfg)
        struct = structural_signal(k, f, cfg)
        pen = budget_penalty(k, g, b, cfg, f)
        u = prog + struct - pen
        raw = 1.0 if cfg.uniform_scores else normalized_score(u, k, g, b, cfg)
        scores[k] = ActionScore(k, g, prog, struct, pen, u, action_scale(k, g, b, cfg), raw, raw)
    return ScoredActions(scores)


def apply_guards(scored: ScoredActions, f: FeatureVector, b: Budget,
                 cfg: ControllerConfig | None = None) -> ScoredActions:
    """Mask or reweight raw scores in a fixed order; the budget backstop always applies."""
    cfg = cfg or ControllerConfig()
    s = scored.scores
    ans, dec = s.get(Action.ANSWER), s.get(Action.DECOMPOSE)

    def mask(score: ActionScore, why: str) -> None:
        score.guarded = MASKED
        score.notes.append(why)

    if not cfg.no_guards:
        if ans and f.answer_support < cfg.weak_support_threshold and f.search_count == 0:
            mask(ans, "premature_answer")
        if dec and f.compositionality < cfg.factoid_threshold:
            mask(dec, "factoid_decompose")
        if dec and not dec.masked and f.stagnation >= cfg.stagnation_threshold:
            dec.guarded *= cfg.decompose_decay ** f.decompose_count
            if f.decompose_count:
                dec.notes.append("repeat_decompose")
        if ans and not ans.masked and f.compositionality >= cfg.min_search_threshold and f.search_count < 1:
            mask(ans, "min_search")

    tool_fits = any(b.covers(s[k].charge) for k in TOOL_ACTIONS if k in s)
    if not tool_fits:
        scored.backstop = True
        for k in TOOL_ACTIONS:
            if k in s:
                mask(s[k], "backstop")
        if ans:
            ans.guarded = max(ans.raw, 0.0)
            ans.notes.append("backstop")

    if all(sc.masked for sc in s.values()):
        raise ControllerDeadlock(f"all actions masked: {scored.as_log()}")
    return scored


def argmax_action(scored: ScoredActions) -> Action:
    """Guarded argmax with ties broken Answer > Search > Decompose."""
    best, best_val = None, MASKED
    for k in ACTIONS:
        sc = scored.scores.get(k)
        if sc is not None and not sc.masked and (best is None or sc.guarded > best_val):
            best, best_val = k, sc.guarded
    assert best is not None
    return best


def select_action(state: SearchState, b: Budget,
                  cfg: ControllerConfig | None = None) -> tuple[Action, ScoredActions]:
    cfg = cfg or ControllerConfig()
    f = extract_features(state, b)
    charges = {k: estimate_charge(k, state, cfg.tokens) for k in feasible_actions(b, cfg, state)}
    scored = apply_guards(score_actions(f, b, charges, cfg), f, b, cfg)
    return argmax_action(scored), scored
