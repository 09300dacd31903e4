"""Dual tool-call / output-token budgets and their bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class Action(str, Enum):
    SEARCH = "search"
    DECOMPOSE = "decompose"
    ANSWER = "answer"


# Fixed tie-break / display order (Answer first: zero tool cost).
ACTIONS = (Action.ANSWER, Action.SEARCH, Action.DECOMPOSE)
TOOL_ACTIONS = (Action.SEARCH, Action.DECOMPOSE)

LADDER = {
    "low": (1, 100),
    "lower-mid": (2, 200),
    "upper-mid": (2, 300),
    "high": (3, 500),
}


@dataclass(frozen=True)
class ChargeVector:
    tool: int = 0
    tok: int = 0

    def __post_init__(self):
        if self.tool < 0 or self.tok < 0:
            raise ValueError(f"charges must be nonnegative, got {self}")


@dataclass(frozen=True)
class Budget:
    """Remaining and initial dual budget for one episode.

    ``overdraft`` accumulates the amount by which realized debits exceeded
    what was left; remaining coordinates are clamped at zero.
    """

    tool_remaining: int
    tok_remaining: int
    tool_initial: int
    tok_initial: int
    overdraft: ChargeVector = field(default_factory=ChargeVector)

    @property
    def exhausted(self) -> bool:
        return self.tok_remaining == 0

    def covers(self, g: ChargeVector) -> bool:
        return self.tool_remaining >= g.tool and self.tok_remaining >= g.tok

    def normalized_remaining(self) -> tuple[float, float]:
        return (_frac(self.tool_remaining, self.tool_initial),
                _frac(self.tok_remaining, self.tok_initial))


@dataclass(frozen=True)
class TokenEstimates:
    """Pre-execution output-token estimates per action."""

    search: int = 50
    decompose: int = 65
    answer: int = 30

    def for_action(self, action: Action) -> int:
        return {Action.SEARCH: self.search, Action.DECOMPOSE: self.decompose,
                Action.ANSWER: self.answer}[Action(action)]


def _frac(num: float, den: float) -> float:
    # a zero-size coordinate counts as fully consumed
    if den <= 0:
        return 0.0 if num <= 0 else 1.0
    return num / den


def new_budget(b_tool: int, b_tok: int) -> Budget:
    if b_tool < 0 or b_tok < 0:
        raise ValueError(f"budget must be nonnegative, got ({b_tool}, {b_tok})")
    return Budget(int(b_tool), int(b_tok), int(b_tool), int(b_tok))


def parse_budget(text: str) -> tuple[int, int]:
    """Parse ``"T,K"`` or a named ladder level into a (tool, tok) pair."""
    if text in LADDER:
        return LADDER[text]
    try:
        tool, tok = (int(x) for x in text.split(","))
    except ValueError as exc:
        raise ValueError(f"budget must look like 'T,K' or a ladder name, got {text!r}") from exc
    new_budget(tool, tok)
    return tool, tok


def pressure(b: Budget) -> float:
    """1 - min of the normalized remaining coordinates, clipped to [0, 1]."""
    if b.tool_initial <= 0 or b.tok_initial <= 0:
        return 1.0
    rho = 1.0 - min(b.tool_remaining / b.tool_initial, b.tok_remaining / b.tok_initial)
    return min(1.0, max(0.0, rho))


def normalized_charge(g: ChargeVector, b: Budget) -> float:
    """g_tool/B_tool + g_tok/B_tok."""
    return _frac(g.tool, b.tool_initial) + _frac(g.tok, b.tok_initial)


def estimate_charge(action: Action, state=None, estimates: TokenEstimates | None = None) -> ChargeVector:
    """Charge known before execution. Tool actions each issue one retrieval call."""
    del state  # estimates are state independent
    est = estimates or TokenEstimates()
    action = Action(action)
    tool = 0 if action is Action.ANSWER else 1
    return ChargeVector(tool, est.for_action(action))


def debit(b: Budget, realized: ChargeVector) -> Budget:
    tool_left = b.tool_remaining - realized.tool
    tok_left = b.tok_remaining - realized.tok
    over = ChargeVector(b.overdraft.tool + max(0, -tool_left),
                        b.overdraft.tok + max(0, -tok_left))
    return Budget(max(0, tool_left), max(0, tok_left), b.tool_initial, b.tok_initial, over)


def termination_bound(b: Budget, zeta: float) -> int:
    """Upper bound on loop iterations: ceil((B_tool + B_tok) / zeta)."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    return math.ceil((b.tool_initial + b.tok_initial) / zeta)
