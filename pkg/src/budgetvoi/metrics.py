"""EM / token F1, the hard dual-budget audit, and cell-level aggregation."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, squeeze whitespace."""
    s = "".join(ch for ch in s.lower() if ch not in _PUNCT)
    return " ".join(_ARTICLES.sub(" ", s).split())


def normalize_tokens(s: str) -> list[str]:
    return normalize_answer(s).split()


def _text(x) -> str:
    return x if isinstance(x, str) else " ".join(x)


def em(pred, gold) -> int:
    return int(normalize_tokens(_text(pred)) == normalize_tokens(_text(gold)))


def f1(pred, gold) -> float:
    p, g = normalize_tokens(_text(pred)), normalize_tokens(_text(gold))
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision, recall = common / len(p), common / len(g)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class AuditVerdict:
    feasible: bool
    tool_used: int
    tok_used: int


def audit_usage(tool_used: int, tok_used: int, caps: tuple[int, int]) -> AuditVerdict:
    cap_tool, cap_tok = caps
    return AuditVerdict(tool_used <= cap_tool and tok_used <= cap_tok, int(tool_used), int(tok_used))


def audit_example(traj, caps: tuple[int, int]) -> AuditVerdict:
    """Hard audit on realized usage; caps are inclusive."""
    return audit_usage(traj.tool_used, traj.tok_used, caps)


@dataclass(frozen=True)
class ExampleResult:
    question_id: str
    em: int
    f1: float
    tool_used: int
    tok_used: int
    feasible: bool
    base_f1: float = 0.0
    accepted: bool = False
    branch: str = ""


@dataclass
class CellResult:
    """One (benchmark, budget level, variant) cell. Infeasible examples score 0."""

    benchmark: str
    budget: str
    variant: str = "full"
    examples: list[ExampleResult] = field(default_factory=list)

    def _mean(self, values) -> float:
        values = list(values)
        return float(np.mean(values)) if values else 0.0

    @property
    def em(self) -> float:
        return self._mean(r.em if r.feasible else 0 for r in self.examples)

    @property
    def f1(self) -> float:
        return self._mean(r.f1 if r.feasible else 0.0 for r in self.examples)

    @property
    def avg_tools(self) -> float:
        return self._mean(r.tool_used for r in self.examples)

    @property
    def avg_tokens(self) -> float:
        return self._mean(r.tok_used for r in self.examples)

    @property
    def feasible_rate(self) -> float:
        return self._mean(r.feasible for r in self.examples)

    def feasible_usage(self) -> tuple[float, float]:
        """Average (tools, tokens) over the feasible subset only."""
        ok = [r for r in self.examples if r.feasible]
        return self._mean(r.tool_used for r in ok), self._mean(r.tok_used for r in ok)

    @property
    def key(self) -> tuple[str, str]:
        return (self.benchmark, self.budget)


def bootstrap_ci(deltas: Sequence[float], resamples: int = 10000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap of the mean over cells.

    Endpoints are order statistics of the resampled means (no interpolation).
    """
    x = np.asarray(deltas, dtype=float)
    if x.size < 2:
        raise ValueError("bootstrap needs at least two cells")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(means, [alpha, 1 - alpha], method="inverted_cdf")
    return float(lo), float(hi)


def macro_delta(cells_a: Mapping | Sequence[CellResult],
                cells_b: Mapping | Sequence[CellResult]) -> tuple[float, float]:
    """Unweighted mean over matching cells of (EM_a - EM_b, F1_a - F1_b)."""
    a, b = _by_key(cells_a), _by_key(cells_b)
    if set(a) != set(b):
        raise KeyError(f"cell keys differ: {sorted(set(a) ^ set(b))}")
    if not a:
        return 0.0, 0.0
    keys = sorted(a)
    dem = [a[k][0] - b[k][0] for k in keys]
    df1 = [a[k][1] - b[k][1] for k in keys]
    return float(np.mean(dem)), float(np.mean(df1))


def cell_deltas(cells_a, cells_b) -> tuple[list[float], list[float]]:
    a, b = _by_key(cells_a), _by_key(cells_b)
    if set(a) != set(b):
        raise KeyError(f"cell keys differ: {sorted(set(a) ^ set(b))}")
    keys = sorted(a)
    return [a[k][0] - b[k][0] for k in keys], [a[k][1] - b[k][1] for k in keys]


def _by_key(cells) -> dict:
    if isinstance(cells, Mapping):
        return {k: (float(v[0]), float(v[1])) if isinstance(v, tuple) else (v.em, v.f1)
                for k, v in cells.items()}
    return {c.key: (c.em, c.f1) for c in cells}
