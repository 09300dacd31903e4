"""Exact oracles for checking the controller and finalizer guarantees.

Two families of finite toy problems live here.

``OracleWorld`` is a small Markov world whose continuation value has the
closed form ``v_s * (1 - exp(-a_s * x_tool - c_s * x_tok))`` on normalized
remaining budget ``x``. Gradients and curvature constants are analytic, so the
one-step lookahead, its budget linearization and the local error bound can be
evaluated exactly and compared against the controller's score terms.

``FinalizationDistribution`` is a finite joint law of finalization features
and rewards. Gain, harm, the constrained threshold policy and its Lagrangian
dual are computed by enumeration and checked against brute force over every
deterministic policy.

Norms on the two-dimensional budget space are Euclidean (self-dual).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .budget import ACTIONS, TOOL_ACTIONS, Action, Budget, ChargeVector
from .controller import (
    ActionScore, ControllerConfig, ControllerDeadlock, FeatureVector, ScoredActions,
    action_scale, apply_guards, argmax_action, budget_penalty, progress_signal, structural_signal,
)
from .finalizer import BLOCKED_RISKS, harm

NORM = "euclidean"
FAMILIES = ("exp", "linear")


# ---------------------------------------------------------------------------
# search-time oracle world


@dataclass(frozen=True)
class OracleWorld:
    """Finite world with closed-form continuation values.

    ``transitions[k]`` is a row-stochastic (S, S) matrix; ``charges[k]`` is the
    integer budget charge of action ``k``; budgets are normalized by ``scale``.
    """

    scale: tuple[int, int]
    v: np.ndarray
    a: np.ndarray
    c: np.ndarray
    stop: np.ndarray
    transitions: dict
    charges: dict
    features: tuple[FeatureVector, ...] = ()
    family: str = "exp"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        n = len(self.v)
        for arr in (self.a, self.c, self.stop):
            if len(arr) != n:
                raise ValueError("per-state arrays must share a length")
        if np.any(self.a < 0) or np.any(self.c < 0) or np.any(self.v < 0):
            raise ValueError("v, a, c must be nonnegative")
        for k, P in self.transitions.items():
            P = np.asarray(P)
            if P.shape != (n, n) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError(f"transition matrix for {k} is not row-stochastic")
        if set(self.transitions) != set(self.charges):
            raise ValueError("transitions and charges must cover the same actions")
        if self.features and len(self.features) != n:
            raise ValueError("need one feature vector per state")

    @property
    def n_states(self) -> int:
        return len(self.v)

    @property
    def actions(self) -> list[Action]:
        return [k for k in ACTIONS if k in self.transitions]

    def normalize(self, b: Budget | ChargeVector) -> np.ndarray:
        if isinstance(b, Budget):
            return np.array([b.tool_remaining / self.scale[0], b.tok_remaining / self.scale[1]])
        return np.array([b.tool / self.scale[0], b.tok / self.scale[1]])

    def budget(self, tool: int, tok: int) -> Budget:
        return Budget(tool, tok, self.scale[0], self.scale[1])

    def value(self, s: int, x: np.ndarray) -> float:
        lin = self.a[s] * x[0] + self.c[s] * x[1]
        if self.family == "linear":
            return float(self.v[s] * lin)
        return float(self.v[s] * -math.expm1(-lin))

    def grad(self, s: int, x: np.ndarray) -> np.ndarray:
        w = self.v[s] if self.family == "linear" else self.v[s] * math.exp(-(self.a[s] * x[0] + self.c[s] * x[1]))
        return w * np.array([self.a[s], self.c[s]])

    def curvature(self, s: int, x: np.ndarray) -> float:
        """Spectral norm of the Hessian at ``x`` (rank one: v e^{-.} (a^2 + c^2))."""
        if self.family == "linear":
            return 0.0
        return float(self.v[s] * math.exp(-(self.a[s] * x[0] + self.c[s] * x[1]))
                     * (self.a[s] ** 2 + self.c[s] ** 2))

    def next_dist(self, s: int, k: Action) -> np.ndarray:
        return np.asarray(self.transitions[Action(k)])[s]


def feasible_world_actions(world: OracleWorld, b: Budget) -> list[Action]:
    return [k for k in world.actions if b.covers(world.charges[k])]


def oracle_lookahead(world: OracleWorld, s: int, b: Budget, k: Action) -> float:
    """Q*(k) = E[V(S', b - g(k))] over the known next-state law."""
    k = Action(k)
    if not b.covers(world.charges[k]):
        raise ValueError(f"action {k.value} is not feasible under {b}")
    x = world.normalize(b) - world.normalize(world.charges[k])
    p = world.next_dist(s, k)
    return float(sum(p[t] * world.value(t, x) for t in range(world.n_states) if p[t] > 0))


def stop_value(world: OracleWorld, s: int) -> float:
    return float(world.stop[s])


@dataclass(frozen=True)
class StepConstants:
    """Per-step shadow price, its homogeneity radius and the curvature bound."""

    lambda_star: np.ndarray
    beta: float
    L: float
    feasible: tuple[Action, ...]


def step_constants(world: OracleWorld, s: int, b: Budget) -> StepConstants:
    """lambda* = mean expected gradient over feasible actions; beta = max deviation from it.

    L bounds the Hessian along every segment [b - g(k), b]; for the exponential
    family the curvature is largest at the smallest budget, b - g(k).
    """
    feas = feasible_world_actions(world, b)
    x = world.normalize(b)
    grads = []
    L = 0.0
    for k in feas:
        p = world.next_dist(s, k)
        grads.append(sum(p[t] * world.grad(t, x) for t in range(world.n_states)))
        low = x - world.normalize(world.charges[k])
        for t in range(world.n_states):
            if p[t] > 0:
                L = max(L, world.curvature(t, low))
    grads = np.array(grads) if grads else np.zeros((0, 2))
    lam = grads.mean(axis=0) if len(grads) else np.zeros(2)
    beta = float(max((np.linalg.norm(gv - lam) for gv in grads), default=0.0))
    return StepConstants(lam, beta, float(L), tuple(feas))


@dataclass(frozen=True)
class OracleDecomposition:
    delta_star: float
    psi_star: float
    lambda_star: np.ndarray
    lambda_term: float
    xi_remainder: float
    q_tilde: float
    g_norm: float
    beta: float
    L: float
    eps_delta: float = 0.0
    eps_psi: float = 0.0
    eps_pi: float = 0.0

    @property
    def beta_term(self) -> float:
        return self.beta * self.g_norm

    @property
    def L_half_g_sq(self) -> float:
        return 0.5 * self.L * self.g_norm ** 2

    @property
    def xi_bound(self) -> float:
        return self.beta_term + self.L_half_g_sq

    @property
    def gamma(self) -> float:
        return self.eps_delta + self.eps_psi + self.eps_pi + self.xi_bound

    @property
    def oracle_utility(self) -> float:
        """U* = Delta* + Psi* - lambda*^T g."""
        return self.delta_star + self.psi_star - self.lambda_term


def decompose_oracle(world: OracleWorld, s: int, b: Budget, k: Action,
                     consts: StepConstants | None = None) -> OracleDecomposition:
    """Split Q~*(k) = Q*(k) - V_stop into Delta* + Psi* - lambda*^T g + xi."""
    k = Action(k)
    consts = consts or step_constants(world, s, b)
    x = world.normalize(b)
    g = world.normalize(world.charges[k])
    p = world.next_dist(s, k)
    v_stop = stop_value(world, s)
    delta = float(sum(p[t] * world.stop[t] for t in range(world.n_states))) - v_stop
    ev = float(sum(p[t] * world.value(t, x) for t in range(world.n_states)))
    psi = ev - v_stop - delta
    lam_term = float(consts.lambda_star @ g)
    q_tilde = oracle_lookahead(world, s, b, k) - v_stop
    xi = q_tilde - (delta + psi - lam_term)
    return OracleDecomposition(delta, psi, consts.lambda_star, lam_term, xi, q_tilde,
                               float(np.linalg.norm(g)), consts.beta, consts.L)


# -- controller side ---------------------------------------------------------

COMPONENT_MODES = ("exact", "controller")


def controller_components(world: OracleWorld, s: int, b: Budget, k: Action,
                          dec: OracleDecomposition, cfg: ControllerConfig | None = None,
                          mode: str = "controller", bias: float = 0.0) -> tuple[float, float, float]:
    """(Delta_hat, Psi, Pi) for action ``k`` at a world state.

    ``exact`` copies the oracle components; ``controller`` evaluates the real
    controller terms on the feature vector attached to state ``s``. ``bias``
    is added to the progress component.
    """
    cfg = cfg or ControllerConfig()
    if mode == "exact":
        return dec.delta_star + bias, dec.psi_star, dec.lambda_term
    if mode != "controller":
        raise ValueError(f"mode must be one of {COMPONENT_MODES}")
    if not world.features:
        raise ValueError("controller mode needs per-state feature vectors")
    f = world.features[s]
    g = world.charges[Action(k)]
    return (progress_signal(k, f, cfg) + bias, structural_signal(k, f, cfg),
            budget_penalty(k, g, b, cfg, f))


@dataclass
class StepEvaluation:
    """Oracle and controller quantities for every feasible action at one (s, b)."""

    state: int
    budget: Budget
    decomps: dict
    utilities: dict
    consts: StepConstants

    def gamma(self, k: Action) -> float:
        return self.decomps[k].gamma


def evaluate_step(world: OracleWorld, s: int, b: Budget, cfg: ControllerConfig | None = None,
                  mode: str = "controller", bias: float = 0.0) -> StepEvaluation:
    """Decompose every feasible action and fill in realized component errors."""
    consts = step_constants(world, s, b)
    decomps, comps = {}, {}
    for k in consts.feasible:
        dec = decompose_oracle(world, s, b, k, consts)
        decomps[k] = dec
        comps[k] = controller_components(world, s, b, k, dec, cfg, mode, bias)
    eps_d = max((abs(comps[k][0] - decomps[k].delta_star) for k in decomps), default=0.0)
    eps_p = max((abs(comps[k][1] - decomps[k].psi_star) for k in decomps), default=0.0)
    eps_pi = max((abs(comps[k][2] - decomps[k].lambda_term) for k in decomps), default=0.0)
    out, utilities = {}, {}
    for k, dec in decomps.items():
        out[k] = replace(dec, eps_delta=eps_d, eps_psi=eps_p, eps_pi=eps_pi)
        d_hat, psi, pi = comps[k]
        utilities[k] = d_hat + psi - pi
    return StepEvaluation(s, b, out, utilities, consts)


def _tol(scale: float) -> float:
    return 1e-12 + 1e-9 * abs(scale)


@dataclass
class CheckReport:
    name: str
    checked: int = 0
    violations: int = 0
    worst_slack: float = math.inf
    details: dict = field(default_factory=dict)
    norm: str = NORM

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.violations == 0

    def as_dict(self) -> dict:
        return {"name": self.name, "status": "PASS" if self.passed else "FAIL", "norm": self.norm,
                "checked": self.checked, "violations": self.violations,
                "worst_slack": None if math.isinf(self.worst_slack) else self.worst_slack,
                **self.details}


def check_theorem1(world: OracleWorld, samples: Iterable[tuple[int, Budget]],
                   cfg: ControllerConfig | None = None, mode: str = "controller",
                   bias: float = 0.0) -> CheckReport:
    """|u(k) - Q~*(k)| <= Gamma(k) and |xi| <= beta|g| + L/2 |g|^2 on every feasible k."""
    report = CheckReport("local_utility_bound")
    xi_viol = 0
    rows = []
    for s, b in samples:
        ev = evaluate_step(world, s, b, cfg, mode, bias)
        for k, dec in ev.decomps.items():
            err = abs(ev.utilities[k] - dec.q_tilde)
            slack = dec.gamma - err
            report.checked += 1
            report.worst_slack = min(report.worst_slack, slack)
            if slack < -_tol(dec.gamma):
                report.violations += 1
            if abs(dec.xi_remainder) > dec.xi_bound + _tol(dec.xi_bound):
                xi_viol += 1
            rows.append((s, b.tool_remaining, b.tok_remaining, k.value, err, dec.gamma, slack))
    report.violations += xi_viol
    report.details.update(xi_violations=xi_viol, mode=mode, bias=bias)
    report.details["rows"] = rows
    return report


def _score(u: float, d: float, eps: float) -> float:
    return max(0.0, u) / (d + eps)


def _identity_choice(r: dict) -> Action:
    best, val = None, -math.inf
    for k in ACTIONS:
        if k in r and r[k] > val:
            best, val = k, r[k]
    return best


def guarded_choice(ev: StepEvaluation, r: dict, world: OracleWorld,
                   cfg: ControllerConfig) -> Action:
    """Run the controller's guard layer over externally supplied raw scores."""
    scores = {}
    for k in ev.decomps:
        g = world.charges[k]
        scores[k] = ActionScore(k, g, 0.0, 0.0, 0.0, ev.utilities[k],
                                action_scale(k, g, ev.budget, cfg), r[k], r[k])
    scored = apply_guards(ScoredActions(scores), world.features[ev.state], ev.budget, cfg)
    return argmax_action(scored)


def check_ranking_and_gap(world: OracleWorld, samples: Iterable[tuple[int, Budget]],
                          cfg: ControllerConfig | None = None, mode: str = "controller",
                          guards: str = "controller", bias: float = 0.0) -> CheckReport:
    """Margin-conditional ranking consistency and the guarded one-step value gap.

    Ranking: whenever r*(i) - r*(j) > (Gamma(i) + Gamma(j)) / (d_min + eps),
    require r(i) > r(j). Value gap: only when the chosen action satisfies
    u(k_t) >= u(k_opt) is Q*(k_opt) - Q*(k_t) <= 2 max Gamma asserted.
    """
    cfg = cfg or ControllerConfig()
    if guards not in ("controller", "identity"):
        raise ValueError("guards must be 'controller' or 'identity'")
    report = CheckReport("ranking_and_value_gap")
    margin_pairs = flips_without_margin = rank_viol = 0
    compat = incompat = gap_viol = 0
    worst_gap_slack = math.inf
    eps = cfg.epsilon
    for s, b in samples:
        ev = evaluate_step(world, s, b, cfg, mode, bias)
        ks = list(ev.decomps)
        d = {k: action_scale(k, world.charges[k], b, cfg) for k in ks}
        d_min = min(d.values())
        r = {k: _score(ev.utilities[k], d[k], eps) for k in ks}
        r_star = {k: _score(ev.decomps[k].oracle_utility, d[k], eps) for k in ks}
        for i, j in itertools.permutations(ks, 2):
            report.checked += 1
            margin = (ev.gamma(i) + ev.gamma(j)) / (d_min + eps)
            if r_star[i] - r_star[j] > margin:
                margin_pairs += 1
                if not r[i] > r[j]:
                    rank_viol += 1
            elif r_star[i] > r_star[j] and r[i] < r[j]:
                flips_without_margin += 1

        q = {k: ev.decomps[k].q_tilde for k in ks}
        k_opt = max(ks, key=lambda k: q[k])
        if guards == "identity":
            k_t = _identity_choice(r)
        else:
            try:
                k_t = guarded_choice(ev, r, world, cfg)
            except ControllerDeadlock:
                incompat += 1
                continue
        if ev.utilities[k_t] >= ev.utilities[k_opt]:
            compat += 1
            bound = 2 * max(ev.gamma(k) for k in ks)
            slack = bound - (q[k_opt] - q[k_t])
            worst_gap_slack = min(worst_gap_slack, slack)
            if slack < -_tol(bound):
                gap_viol += 1
        else:
            incompat += 1
    report.violations = rank_viol + gap_viol
    report.worst_slack = worst_gap_slack
    report.details.update(margin_pairs=margin_pairs, ranking_violations=rank_viol,
                          flips_without_margin=flips_without_margin, guard_compatible=compat,
                          guard_incompatible=incompat, gap_violations=gap_viol, guards=guards,
                          mode=mode)
    return report


def random_feature_vector(rng: np.random.Generator) -> FeatureVector:
    closure = float(rng.choice([0.0, 0.5, 1.0]))
    comp = float(rng.choice([0.0, 0.5, 2 / 3]))
    return FeatureVector(
        unresolved_evidence=1.0 - closure, compositionality=comp, closure=closure,
        answer_support=float(closure == 1.0), has_candidate=int(closure > 0),
        stagnation=float(rng.choice([0.0, 0.5, 1.0])), loop_pressure=float(rng.uniform(0, 0.5)),
        early_answer_risk=comp * (1 - closure), new_support_rate=float(rng.uniform(0.2, 1.0)),
        search_count=int(rng.integers(0, 3)), decompose_count=int(rng.integers(0, 2)))


def random_world(seed: int, n_states: int | None = None, scale: tuple[int, int] = (3, 500),
                 family: str = "exp") -> OracleWorld:
    """Random world with Dirichlet transitions and moderate curvature."""
    rng = np.random.default_rng([seed, 0x0AC1E])
    n = int(n_states or rng.integers(3, 7))
    v = rng.uniform(0.3, 1.0, n)
    a = rng.uniform(0.2, 2.5, n)
    c = rng.uniform(0.2, 2.5, n)
    stop = v * rng.uniform(0.0, 0.9, n)
    transitions = {Action.ANSWER: np.eye(n)}
    for k in TOOL_ACTIONS:
        transitions[k] = rng.dirichlet(np.full(n, 0.7), size=n)
    search_tok = int(rng.integers(20, 90))
    charges = {
        Action.ANSWER: ChargeVector(0, int(rng.integers(10, 50))),
        Action.SEARCH: ChargeVector(1, search_tok),
        Action.DECOMPOSE: ChargeVector(1, search_tok + int(rng.integers(0, 40))),
    }
    features = tuple(random_feature_vector(rng) for _ in range(n))
    return OracleWorld(scale, v, a, c, stop, transitions, charges, features, family)


def sample_points(world: OracleWorld, n: int, seed: int = 0) -> list[tuple[int, Budget]]:
    """(state, budget) pairs where at least Answer is affordable."""
    rng = np.random.default_rng([seed, 0x5A3])
    low_tok = world.charges[Action.ANSWER].tok
    out = []
    for _ in range(n):
        s = int(rng.integers(0, world.n_states))
        tool = int(rng.integers(0, world.scale[0] + 1))
        tok = int(rng.integers(low_tok, world.scale[1] + 1))
        out.append((s, world.budget(tool, tok)))
    return out


# ---------------------------------------------------------------------------
# answer-time finalization oracle


@dataclass(frozen=True)
class FinalizationDistribution:
    """Finite joint law of (z, base reward, refined reward).

    ``outcomes[z]`` lists ``(p, r_base, r_ref)`` atoms whose probabilities are
    joint (they sum to 1 across all z). ``safe[z]`` marks safe-set membership.
    """

    outcomes: tuple[tuple[tuple[float, float, float], ...], ...]
    safe: tuple[bool, ...]
    labels: tuple = ()

    def __post_init__(self):
        if len(self.outcomes) != len(self.safe):
            raise ValueError("need one safe flag per z")
        total = 0.0
        for atoms in self.outcomes:
            for p, rb, rr in atoms:
                if p < 0:
                    raise ValueError("probabilities must be nonnegative")
                for r in (rb, rr):
                    if not 0.0 <= r <= 1.0:
                        raise ValueError(f"rewards must lie in [0, 1], got {r}")
                total += p
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")

    @property
    def size(self) -> int:
        return len(self.outcomes)

    @property
    def mass(self) -> np.ndarray:
        return np.array([sum(p for p, _, _ in atoms) for atoms in self.outcomes])

    @property
    def support(self) -> np.ndarray:
        """z values with positive mass; zero-mass z are excluded everywhere."""
        return self.mass > 0

    @property
    def safe_mask(self) -> np.ndarray:
        return np.array(self.safe, dtype=bool) & self.support

    @classmethod
    def from_deltas(cls, table: Sequence[Sequence[tuple[float, float]]],
                    safe: Sequence[bool]) -> "FinalizationDistribution":
        """Build from ``(p, delta_fin)`` atoms, realizing each delta with rewards in [0, 1]."""
        outcomes = []
        for atoms in table:
            row = []
            for p, delta in atoms:
                if not -1.0 <= delta <= 1.0:
                    raise ValueError("delta_fin must lie in [-1, 1]")
                row.append((p, max(0.0, -delta), max(0.0, delta)))
            outcomes.append(tuple(row))
        return cls(tuple(outcomes), tuple(bool(x) for x in safe))


def oracle_gain_harm(dist: FinalizationDistribution) -> tuple[np.ndarray, np.ndarray]:
    """G*(z) = E[(Delta)_+ | z], H*(z) = E[(-Delta)_+ | z]; zero-mass z get 0 and are excluded."""
    G = np.zeros(dist.size)
    H = np.zeros(dist.size)
    for z, atoms in enumerate(dist.outcomes):
        m = sum(p for p, _, _ in atoms)
        if m <= 0:
            continue
        G[z] = sum(p * max(0.0, rr - rb) for p, rb, rr in atoms) / m
        H[z] = sum(p * max(0.0, rb - rr) for p, rb, rr in atoms) / m
    return G, H


def threshold_policy(G: np.ndarray, H: np.ndarray, safe: np.ndarray, eta: float,
                     tau: float = 0.0) -> np.ndarray:
    """1{safe and G - eta H - tau >= 0}.

    With ``tau == 0`` the test is done as ``G / H >= eta`` so that policies at
    a breakpoint ``eta = G / H`` are evaluated with the same rounding.
    """
    if tau == 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = np.where(H > 0, np.divide(G, H, where=H > 0, out=np.zeros_like(G)) >= eta, G >= 0)
    else:
        ok = G - eta * H - tau >= 0
    return (ok & safe).astype(int)


def policy_value(dist: FinalizationDistribution, policy: np.ndarray) -> tuple[float, float]:
    """(E[pi (G* - H*)], E[pi H*])."""
    G, H = oracle_gain_harm(dist)
    m = dist.mass
    policy = np.asarray(policy)
    return float(np.sum(m * policy * (G - H))), float(np.sum(m * policy * H))


def dual_function(dist: FinalizationDistribution, gamma: float, rho_harm: float) -> float:
    G, H = oracle_gain_harm(dist)
    m = dist.mass
    inner = np.where(dist.safe_mask, np.maximum(0.0, G - (1 + gamma) * H), 0.0)
    return float(np.sum(m * inner) + gamma * rho_harm)


def brute_force_optimum(dist: FinalizationDistribution, rho_harm: float,
                        tol: float = 1e-12) -> tuple[float, np.ndarray]:
    """Best safe deterministic policy with E[pi H] <= rho_harm, over all 2^|Z| policies."""
    G, H = oracle_gain_harm(dist)
    m = dist.mass
    n = dist.size
    if n > 20:
        raise ValueError("brute force limited to |Z| <= 20")
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    bits = bits[np.all(bits <= dist.safe_mask.astype(int), axis=1)]
    values = bits @ (m * (G - H))
    harms = bits @ (m * H)
    ok = harms <= rho_harm + tol
    values = np.where(ok, values, -np.inf)
    best = int(np.argmax(values))
    return float(values[best]), bits[best]


@dataclass
class DualityReport:
    verified: bool
    gamma_star: float | None
    clauses: dict
    dual_value: float
    primal_optimum: float
    policy_value: float | None
    policy_harm: float | None
    status: str


def solve_threshold(dist: FinalizationDistribution, rho_harm: float, tol: float = 1e-9):
    """Breakpoint sweep for the constrained safe-replacement problem.

    Returns ``(eta_star, policy, brute_force_policy, report)``. The duality
    clauses are checked at each dual minimizer; optimality of the threshold
    policy is asserted only when every clause verifies, otherwise the report
    says the assumption is unmet and ``eta_star`` is None.
    """
    if rho_harm < 0:
        raise ValueError("rho_harm must be nonnegative")
    G, H = oracle_gain_harm(dist)
    safe = dist.safe_mask
    m = dist.mass
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(safe & (H > 0), G / np.where(H > 0, H, 1.0), np.nan)
    gammas = sorted({0.0} | {float(r) - 1.0 for r in ratios[~np.isnan(ratios)] if r - 1.0 > 0})
    # inside each gap the policy matches the one at the gap's upper breakpoint;
    # only the open ray past the last breakpoint needs its own representative
    gammas.append(gammas[-1] + 1.0)
    duals = [dual_function(dist, gm, rho_harm) for gm in gammas]
    d_star = min(duals)
    opt, bf_policy = brute_force_optimum(dist, rho_harm)

    chosen = None
    clauses = {}
    for gm, dv in zip(gammas, duals):
        if dv > d_star + tol:
            continue
        pol = threshold_policy(G, H, safe, 1.0 + gm)
        val, hm = float(np.sum(m * pol * (G - H))), float(np.sum(m * pol * H))
        clauses = {
            "strong_duality": abs(dv - opt) <= tol,
            "dual_attained": True,
            "primal_feasible": hm <= rho_harm + tol,
            "complementary_slackness": abs(gm * (rho_harm - hm)) <= tol,
        }
        if all(clauses.values()):
            chosen = (gm, pol, val, hm)
            break
    if chosen is None:
        if not clauses:
            clauses = {"strong_duality": False, "dual_attained": False,
                       "primal_feasible": False, "complementary_slackness": False}
        report = DualityReport(False, None, clauses, d_star, opt, None, None, "assumption unmet")
        return None, None, bf_policy, report
    gm, pol, val, hm = chosen
    report = DualityReport(True, gm, clauses, d_star, opt, val, hm, "verified")
    return 1.0 + gm, pol, bf_policy, report


def random_distribution(seed: int, n_z: int | None = None, max_atoms: int = 3,
                        safe_rate: float = 0.75) -> FinalizationDistribution:
    """Random finite law on reward grid {0, .25, .5, .75, 1}."""
    rng = np.random.default_rng([seed, 0xF1A])
    n = int(n_z or rng.integers(2, 13))
    grid = np.linspace(0.0, 1.0, 5)
    weights = rng.dirichlet(np.ones(n))
    outcomes = []
    for z in range(n):
        k = int(rng.integers(1, max_atoms + 1))
        split = rng.dirichlet(np.ones(k)) * weights[z]
        outcomes.append(tuple((float(p), float(rng.choice(grid)), float(rng.choice(grid)))
                              for p in split))
    # renormalize against float drift
    total = sum(p for atoms in outcomes for p, _, _ in atoms)
    outcomes = [tuple((p / total, rb, rr) for p, rb, rr in atoms) for atoms in outcomes]
    safe = tuple(bool(x) for x in rng.random(n) < safe_rate)
    return FinalizationDistribution(tuple(outcomes), safe)


def breakpoint_budgets(dist: FinalizationDistribution) -> list[float]:
    """Harm levels of every breakpoint policy; natural binding constraints."""
    G, H = oracle_gain_harm(dist)
    safe = dist.safe_mask
    m = dist.mass
    etas = {1.0} | {float(G[z] / H[z]) for z in range(dist.size) if safe[z] and H[z] > 0 and G[z] / H[z] >= 1}
    etas.add(max(etas) + 1.0)  # past every breakpoint: only harmless z remain
    return sorted({float(np.sum(m * threshold_policy(G, H, safe, e) * H)) for e in etas})


# -- reward / harm identities -------------------------------------------------


@dataclass
class IdentityReport:
    reward_lhs: float
    reward_rhs: float
    harm_lhs: float
    harm_rhs: float

    @property
    def reward_gap(self) -> float:
        return abs(self.reward_lhs - self.reward_rhs)

    @property
    def harm_gap(self) -> float:
        return abs(self.harm_lhs - self.harm_rhs)

    def holds(self, tol: float = 1e-12) -> bool:
        return self.reward_gap <= tol and self.harm_gap <= tol


def check_reward_harm_identity(dist: FinalizationDistribution, policy: Sequence[int]) -> IdentityReport:
    """Compare outcome-level reward change and harm against their z-level forms."""
    policy = np.asarray(policy, dtype=int)
    if np.any(policy[~np.array(dist.safe, dtype=bool)] != 0):
        raise ValueError("policy replaces answers outside the safe set")
    reward_lhs = harm_lhs = 0.0
    for z, atoms in enumerate(dist.outcomes):
        for p, rb, rr in atoms:
            r_final = rr if policy[z] else rb
            reward_lhs += p * (r_final - rb)
            harm_lhs += p * harm(rb, r_final)
    G, H = oracle_gain_harm(dist)
    m = dist.mass
    return IdentityReport(reward_lhs, float(np.sum(m * policy * (G - H))),
                          harm_lhs, float(np.sum(m * policy * H)))


def distribution_from_episodes(records: Iterable[tuple[tuple, bool, float, float, bool]]):
    """Empirical law from per-example ``(z_key, safe, r_base, r_ref, accepted)`` records.

    Returns ``(dist, policy)``; the policy is read off the logged decisions and
    must be a function of z (the finalizer is deterministic in z).
    """
    records = list(records)
    if not records:
        raise ValueError("no episode records")
    keys: dict = {}
    for key, safe, rb, rr, acc in records:
        keys.setdefault(key, []).append((safe, rb, rr, acc))
    p = 1.0 / len(records)
    outcomes, safe_flags, policy = [], [], []
    for key in sorted(keys, key=repr):
        rows = keys[key]
        accepts = {acc for _, _, _, acc in rows}
        if len(accepts) != 1:
            raise ValueError(f"decision is not a function of z at {key}")
        outcomes.append(tuple((p, rb, rr) for _, rb, rr, _ in rows))
        safe_flags.append(rows[0][0])
        policy.append(int(accepts.pop()))
    dist = FinalizationDistribution(tuple(outcomes), tuple(safe_flags), tuple(sorted(keys, key=repr)))
    return dist, np.array(policy)


def is_safe_features(z) -> bool:
    """Safe-set membership for finalizer feature vectors."""
    return z.c_risk not in BLOCKED_RISKS


# -- plug-in excess -----------------------------------------------------------


@dataclass
class ExcessReport:
    excess: float
    bound: float
    delta: float
    margin_checked: bool = False
    margin_bound: float | None = None

    @property
    def holds(self) -> bool:
        ok = self.excess <= self.bound + 1e-12
        if self.margin_bound is not None:
            ok = ok and self.excess <= self.margin_bound + 1e-12
        return ok


def margin_condition_holds(dist: FinalizationDistribution, F_star: np.ndarray, C: float,
                           alpha: float) -> bool:
    """P(|F*| <= u, safe) <= C u^alpha for all u >= 0.

    The left side is a step function that jumps only at atom values, so it is
    enough to check at each |F*(z)| (and the right side at u = 0 is 0).
    """
    safe = dist.safe_mask
    m = dist.mass
    absF = np.abs(F_star)
    for u in absF[safe]:
        lhs = float(np.sum(m[safe & (absF <= u)]))
        if lhs > C * u ** alpha + 1e-15:
            return False
    return True


def check_plugin_excess(dist: FinalizationDistribution, delta_g: float, delta_h: float,
                        eta: float, tau: float = 0.0, G_hat: np.ndarray | None = None,
                        H_hat: np.ndarray | None = None, seed: int = 0,
                        margin: tuple[float, float] | None = None) -> ExcessReport:
    """Excess penalized value of the plug-in rule against the oracle threshold rule.

    Plug-in scores are either given or drawn uniformly inside the
    perturbation box around (G*, H*).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    G, H = oracle_gain_harm(dist)
    if G_hat is None or H_hat is None:
        rng = np.random.default_rng([seed, 0xE7C])
        G_hat = G + rng.uniform(-1, 1, dist.size) * delta_g
        H_hat = H + rng.uniform(-1, 1, dist.size) * delta_h
    G_hat, H_hat = np.asarray(G_hat, float), np.asarray(H_hat, float)
    safe = dist.safe_mask
    if np.any(np.abs(G_hat - G)[safe] > delta_g + 1e-15) or np.any(np.abs(H_hat - H)[safe] > delta_h + 1e-15):
        raise ValueError("plug-in scores fall outside the declared perturbation box")
    m = dist.mass
    F_star = G - eta * H - tau
    F_hat = G_hat - eta * H_hat - tau
    pi_star = (safe & (F_star >= 0)).astype(int)
    pi_hat = (safe & (F_hat >= 0)).astype(int)
    excess = float(np.sum(m * pi_star * F_star) - np.sum(m * pi_hat * F_star))
    delta = delta_g + eta * delta_h
    boundary = safe & (np.abs(F_star) <= delta)
    bound = float(np.sum(m * np.abs(F_star) * boundary))
    report = ExcessReport(excess, bound, delta)
    if margin is not None:
        C, alpha = margin
        if margin_condition_holds(dist, F_star, C, alpha):
            report.margin_checked = True
            report.margin_bound = C * delta ** (1 + alpha)
    return report
