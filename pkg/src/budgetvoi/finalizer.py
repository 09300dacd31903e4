"""Answer-time finalization: keep the trajectory answer or accept a refinement.

The rule is deliberately conservative. Three gates (plausible refinement, no
blocked risk category, no decomposition steps) come first; then exactly one
branch is chosen by priority and its safety test decides. A failed test
abstains instead of falling through to a later branch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .metrics import normalize_tokens
from .sim import BINARY_TYPES, TYPED_SLOTS, Evidence, Tokens, Trajectory

RISK_CATEGORIES = ("none", "unresolved_bridge", "comparative", "missing_support")
BLOCKED_RISKS = ("unresolved_bridge", "comparative", "missing_support")
BRANCHES = ("bin", "typed", "explicit", "compact", "gate_blocked", "abstain")
MAX_REF_TOKENS = 32

# (min support gain, strict?, max extra tokens) per branch
TYPED_MIN_GAIN = 0.50
TYPED_MAX_EXTRA = 1
EXPLICIT_MAX_EXTRA = 3
COMPACT_MAX_EXTRA = 2


@dataclass(frozen=True)
class FinalizationFeatures:
    m_ref: int
    c_risk: str
    n_dec: int
    q_type: str
    q_slot: str
    delta_sup: float
    len_base: int
    len_ref: int
    explicit_factoid_slot: int = 0

    def __post_init__(self):
        if self.n_dec < 0:
            raise ValueError("n_dec must be >= 0")
        if self.c_risk not in RISK_CATEGORIES:
            raise ValueError(f"unknown risk category {self.c_risk!r}")

    def key(self) -> tuple:
        return tuple(asdict(self).values())


@dataclass(frozen=True)
class FinalDecision:
    accept: bool
    branch: str
    chosen_answer: Tokens

    def __post_init__(self):
        if self.accept and self.branch not in ("bin", "typed", "explicit", "compact"):
            raise ValueError(f"accepting decision cannot come from branch {self.branch!r}")


def _evidence_vocab(evidence: Iterable[Evidence]) -> set[str]:
    vocab: set[str] = set()
    for e in evidence:
        vocab.update(normalize_tokens(" ".join(e.tokens)))
    return vocab


def support_score(candidate: Sequence[str], evidence: Iterable[Evidence]) -> float:
    """Fraction of normalized candidate tokens that occur somewhere in the evidence."""
    toks = normalize_tokens(" ".join(candidate))
    if not toks:
        return 0.0
    vocab = _evidence_vocab(evidence)
    return sum(t in vocab for t in toks) / len(toks)


def _contains(seq: Sequence[str], sub: Sequence[str]) -> bool:
    n = len(sub)
    return n > 0 and any(tuple(seq[i:i + n]) == tuple(sub) for i in range(len(seq) - n + 1))


def _anchor(base: Tokens, mentions: list[Tokens]) -> Tokens:
    """Longest contiguous run of ``base`` that appears inside some evidence span."""
    for n in range(len(base), 0, -1):
        for i in range(len(base) - n + 1):
            sub = base[i:i + n]
            if any(_contains(m, sub) for m in mentions):
                return sub
    return ()


def refine(evidence: Sequence[Evidence], a_base: Tokens, q_type: str = "other",
           options: Sequence[Tokens] = ()) -> Tokens:
    """Fixed refinement construction from the completed trace.

    Binary questions pick the option mentioned most often in the evidence
    (ties keep the base answer). Otherwise the refinement is the shortest
    evidence span containing the evidence-supported core of the base answer,
    ties going to the most frequent span and then to evidence order.
    """
    mentions = [m for e in evidence for m in e.mentions()]
    if q_type in BINARY_TYPES and options:
        counts = {tuple(o): sum(m == tuple(o) for m in mentions) for o in options}
        best = max(counts.values())
        leaders = [o for o, c in counts.items() if c == best]
        if best == 0 or len(leaders) > 1:
            return tuple(a_base)
        return leaders[0]
    anchor = _anchor(tuple(a_base), mentions)
    if not anchor:
        return tuple(a_base)
    spans = [m for m in mentions if _contains(m, anchor)]
    counts = {m: spans.count(m) for m in spans}
    return min(spans, key=lambda m: (len(m), -counts[m]))  # stable: evidence order last


def plausible(a_ref: Tokens, evidence: Sequence[Evidence]) -> bool:
    toks = normalize_tokens(" ".join(a_ref))
    if not toks or len(toks) > MAX_REF_TOKENS:
        return False
    return bool(set(toks) & _evidence_vocab(evidence))


def extract_finalization_features(traj: Trajectory, a_base: Tokens, a_ref: Tokens, *,
                                  q_type: str = "other", q_slot: str = "none",
                                  explicit_factoid_slot: bool = False, comparative: bool = False,
                                  resolved: bool = True) -> FinalizationFeatures:
    """Build z from the trajectory and the candidate pair.

    Question labels and bridge resolution come from the caller (the simulator
    carries them as ground truth).
    """
    ev = traj.evidence
    sup_ref = support_score(a_ref, ev)
    if not resolved:
        risk = "unresolved_bridge"
    elif comparative:
        risk = "comparative"
    elif sup_ref == 0.0:
        risk = "missing_support"
    else:
        risk = "none"
    return FinalizationFeatures(
        m_ref=int(plausible(a_ref, ev)),
        c_risk=risk,
        n_dec=traj.n_decompose,
        q_type=q_type,
        q_slot=q_slot,
        delta_sup=sup_ref - support_score(a_base, ev),
        len_base=len(normalize_tokens(" ".join(a_base))),
        len_ref=len(normalize_tokens(" ".join(a_ref))),
        explicit_factoid_slot=int(explicit_factoid_slot),
    )


def branch_select(z: FinalizationFeatures) -> str:
    """First applicable branch in priority order."""
    if z.q_type in BINARY_TYPES:
        return "bin"
    if z.q_slot in TYPED_SLOTS:
        return "typed"
    if z.explicit_factoid_slot:
        return "explicit"
    return "compact"


def gates_pass(z: FinalizationFeatures) -> bool:
    return z.m_ref == 1 and z.c_risk not in BLOCKED_RISKS and z.n_dec == 0


def branch_accepts(branch: str, z: FinalizationFeatures) -> bool:
    extra = z.len_ref - z.len_base
    if branch == "bin":
        return True
    if branch == "typed":
        return z.delta_sup >= TYPED_MIN_GAIN and extra <= TYPED_MAX_EXTRA
    if branch == "explicit":
        return z.delta_sup >= 0 and extra <= EXPLICIT_MAX_EXTRA
    if branch == "compact":
        return z.delta_sup > 0 and extra <= COMPACT_MAX_EXTRA
    raise ValueError(f"unknown branch {branch!r}")


def decide(z: FinalizationFeatures, a_base: Tokens, a_ref: Tokens) -> FinalDecision:
    """Deterministic finalizer. Never touches the budget."""
    if not gates_pass(z):
        return FinalDecision(False, "gate_blocked", tuple(a_base))
    branch = branch_select(z)
    if branch_accepts(branch, z):
        return FinalDecision(True, branch, tuple(a_ref))
    return FinalDecision(False, "abstain", tuple(a_base))


def gain_risk_score(G: float, H: float, eta: float, tau: float = 0.0) -> float:
    """F = G - eta * H - tau."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    return G - eta * H - tau


def harm(r_base: float, r_final: float) -> float:
    """Reward lost by replacing the base answer: max(0, R(base) - R(final))."""
    for r in (r_base, r_final):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"rewards must lie in [0, 1], got {r}")
    return max(0.0, r_base - r_final)
