"""Synthetic multi-hop QA environment.

Stands in for the LLM backbone and the retrieval backend. Every instance is a
chain of hops; hop ``h`` has one gold passage whose annotated span names the
bridge entity for hop ``h + 1`` (the last hop names the answer). Retrieval is
noisy, bridge hops are hard to reach without an explicit decomposition, and
the simulated generator makes answer-form errors that a finalizer can repair.

Ground truth (which hop a passage belongs to, which hops are resolved) is
exposed on purpose so controller features are exact.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .budget import Action, Budget, ChargeVector, TokenEstimates, estimate_charge

Tokens = tuple[str, ...]

Q_TYPES = ("yes_no", "binary_choice", "factoid", "other")
Q_SLOTS = ("capacity", "date", "year_range", "none")
BINARY_TYPES = ("yes_no", "binary_choice")
TYPED_SLOTS = ("capacity", "date", "year_range")
FORM_ERRORS = ("none", "drop", "paraphrase", "polarity")

_SLOT_WORDS = {"capacity": "seated", "date": "june", "year_range": "onward"}
_SYLLABLES = ("ka", "lo", "mi", "ren", "to", "sa", "vi", "dor", "el", "qu",
              "an", "bre", "cor", "fin", "gal", "hu", "ix", "jo", "ne", "pra")
_FILLER = ("was", "born", "in", "located", "near", "founded", "by", "known",
           "for", "team", "river", "city", "album", "film", "member", "of")


@dataclass(frozen=True)
class SimParams:
    hop_count: int = 2
    distractor_rate: float = 0.3
    noise: float = 0.2
    form_error_rate: float = 0.3
    guess_rate: float = 0.15
    bridge_hit: float = 0.45
    n_distractors: int = 10

    def validate(self) -> None:
        if self.hop_count < 1:
            raise ValueError("hop_count must be >= 1")
        for name in ("distractor_rate", "noise", "form_error_rate", "guess_rate", "bridge_hit"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.n_distractors < 0:
            raise ValueError("n_distractors must be >= 0")


@dataclass(frozen=True)
class Evidence:
    doc_id: str
    tokens: Tokens
    spans: tuple[tuple[int, int], ...] = ()
    hop: int | None = None
    hard: bool = False

    @property
    def gold(self) -> bool:
        return self.hop is not None

    def mentions(self) -> list[Tokens]:
        return [self.tokens[a:b] for a, b in self.spans]


@dataclass(frozen=True)
class Hop:
    key: str
    entity: Tokens
    gold: Evidence


@dataclass(frozen=True)
class QAInstance:
    question_id: str
    seed: int
    hops: tuple[Hop, ...]
    distractors: tuple[Evidence, ...]
    gold_answer: Tokens
    q_type: str
    q_slot: str
    explicit_factoid_slot: bool
    comparative: bool
    options: tuple[Tokens, ...]
    form_error: str
    guess_u: float
    params: SimParams

    @property
    def hop_count(self) -> int:
        return len(self.hops)

    @property
    def compositional(self) -> bool:
        return self.hop_count >= 2


@dataclass(frozen=True)
class SearchState:
    """Observed search status. Every field is append-only or a counter."""

    instance: QAInstance
    evidence: tuple[Evidence, ...] = ()
    queries: tuple[str, ...] = ()
    opened: frozenset[int] = frozenset()
    candidate: Tokens | None = None
    step: int = 0
    search_count: int = 0
    decompose_count: int = 0
    gains: int = 0
    no_gain_streak: int = 0

    @property
    def revealed_hops(self) -> frozenset[int]:
        return frozenset(e.hop for e in self.evidence if e.gold)

    @property
    def resolved_depth(self) -> int:
        """Number of consecutive hops, from the first, whose gold passage is known."""
        revealed = self.revealed_hops
        depth = 0
        while depth in revealed:
            depth += 1
        return depth

    @property
    def complete(self) -> bool:
        return self.resolved_depth >= self.instance.hop_count

    @property
    def target_hop(self) -> int | None:
        depth = self.resolved_depth
        return depth if depth < self.instance.hop_count else None

    @property
    def tool_steps(self) -> int:
        return self.search_count + self.decompose_count


@dataclass(frozen=True)
class StepRecord:
    step: int
    action: Action
    estimated: ChargeVector
    realized: ChargeVector
    query: str | None = None
    new_gold: bool = False
    scores: dict | None = None


@dataclass
class Trajectory:
    """Executed operations with realized costs, evidence and candidates."""

    question_id: str
    steps: list[StepRecord] = field(default_factory=list)
    evidence: tuple[Evidence, ...] = ()
    candidates: list[Tokens] = field(default_factory=list)
    a_base: Tokens = ()
    overdraft: ChargeVector = field(default_factory=ChargeVector)

    @property
    def tool_used(self) -> int:
        return sum(s.realized.tool for s in self.steps)

    @property
    def tok_used(self) -> int:
        return sum(s.realized.tok for s in self.steps)

    @property
    def n_decompose(self) -> int:
        return sum(1 for s in self.steps if s.action is Action.DECOMPOSE)

    @property
    def overdrawn(self) -> bool:
        return self.overdraft.tool > 0 or self.overdraft.tok > 0


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng([int(k) & 0xFFFFFFFF for k in keys])


def stable_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


class _Words:
    """Draws fresh pseudo-words so entities never collide with each other."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set(_FILLER) | set(_SLOT_WORDS.values()) | {"yes", "no"}

    def word(self) -> str:
        while True:
            n = int(self.rng.integers(2, 4))
            w = "".join(_SYLLABLES[i] for i in self.rng.integers(0, len(_SYLLABLES), n))
            if w not in self.used:
                self.used.add(w)
                return w

    def entity(self, max_len: int = 2) -> Tokens:
        return tuple(self.word() for _ in range(int(self.rng.integers(1, max_len + 1))))

    def number(self, lo: int, hi: int) -> str:
        while True:
            w = str(int(self.rng.integers(lo, hi)))
            if w not in self.used:
                self.used.add(w)
                return w

    def filler(self, n: int) -> Tokens:
        return tuple(_FILLER[i] for i in self.rng.integers(0, len(_FILLER), n))


def _passage(words: _Words, mentions: list[Tokens], doc_id: str, hop: int | None,
             hard: bool = False) -> Evidence:
    tokens: Tokens = words.filler(int(words.rng.integers(2, 4)))
    spans = []
    for m in mentions:
        spans.append((len(tokens), len(tokens) + len(m)))
        tokens = tokens + m + words.filler(1)
    return Evidence(doc_id, tokens, tuple(spans), hop, hard)


def generate_instance(seed: int, params: SimParams | None = None, question_id: str | None = None) -> QAInstance:
    """Draw one instance; identical (seed, params) give identical instances."""
    params = params or SimParams()
    params.validate()
    rng = _rng(seed, 0x51A7)
    words = _Words(rng)
    qid = question_id or f"q{seed}"
    n_hops = params.hop_count

    q_type = Q_TYPES[int(rng.choice(4, p=[0.15, 0.15, 0.40, 0.30]))]
    q_slot, explicit = "none", False
    if q_type == "factoid":
        if rng.random() < 0.6:
            q_slot = TYPED_SLOTS[int(rng.integers(0, 3))]
        else:
            explicit = True
    comparative = bool(q_type in BINARY_TYPES and n_hops >= 2 and rng.random() < 0.5)

    options: tuple[Tokens, ...] = ()
    if q_type == "yes_no":
        options = (("yes",), ("no",))
        gold: Tokens = options[int(rng.integers(0, 2))]
    elif q_type == "binary_choice":
        options = (words.entity(), words.entity())
        gold = options[int(rng.integers(0, 2))]
    elif q_slot != "none":
        core = words.number(1000, 9999) if q_slot != "date" else words.number(1, 32)
        gold = (core, _SLOT_WORDS[q_slot])
    elif explicit:
        gold = words.entity(1) + (words.word(),)
    else:
        gold = words.entity(3)

    hops = []
    for h in range(n_hops):
        mention = gold if h == n_hops - 1 else words.entity()
        hops.append(Hop(key=f"k{h}{words.word()}", entity=mention,
                        gold=_passage(words, [mention], f"{qid}-g{h}", h)))

    n_hard = int(round(params.distractor_rate * params.n_distractors))
    distractors = []
    for i in range(params.n_distractors):
        hard = i < n_hard
        if hard and q_type in BINARY_TYPES:
            # contrasts both options without settling the question
            mentions = [options[i % 2], options[1 - i % 2]]
        elif hard and len(gold) >= 2 and i % 2:
            mentions = [gold[:-1] + (words.word(),)]  # near-miss sibling entity
        elif hard:
            mentions = [gold + (words.word(),)]  # over-extended mention
        else:
            mentions = [words.entity()]
        distractors.append(_passage(words, mentions, f"{qid}-d{i}", None, hard))

    form_error = "none"
    if rng.random() < params.form_error_rate:
        if q_type in BINARY_TYPES:
            form_error = "polarity"
        elif len(gold) >= 2:
            form_error = "drop" if rng.random() < 0.5 else "paraphrase"
        else:
            form_error = "paraphrase"
    guess_u = float(rng.random())

    return QAInstance(qid, int(seed), tuple(hops), tuple(distractors), gold, q_type, q_slot,
                      explicit, comparative, options, form_error, guess_u, params)


def initial_state(instance: QAInstance) -> SearchState:
    return SearchState(instance)


def make_query(state: SearchState, action: Action) -> str:
    """Question-only query for the current target hop; Decompose asks for the bridge fact."""
    inst = state.instance
    target = state.target_hop
    if target is None:
        target = inst.hop_count - 1
    known = " ".join(" ".join(inst.hops[h].entity) for h in range(state.resolved_depth))
    prefix = "bridge " if Action(action) is Action.DECOMPOSE else ""
    return f"{prefix}{inst.question_id} {inst.hops[target].key} {known}".strip()


def _query_target(instance: QAInstance, query: str) -> int | None:
    for h, hop in enumerate(instance.hops):
        if hop.key in query.split():
            return h
    return None


def retrieve(instance: QAInstance, state: SearchState, query: str, top_k: int = 5) -> list[Evidence]:
    """Top-k passages for ``query``.

    The draw depends only on (instance seed, query), so re-issuing a query
    returns the same passages. Opening a hop raises the hit threshold for
    later queries against it.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    rng = _rng(instance.seed, stable_hash(query))
    target = _query_target(instance, query)
    p = instance.params
    hit = 0.0
    if target is not None:
        reach = 1.0 if target == 0 or target in state.opened else p.bridge_hit
        hit = (1.0 - p.noise) * reach
    results: list[Evidence] = []
    if target is not None and rng.random() < hit:
        results.append(instance.hops[target].gold)
    pool = list(instance.distractors)
    n_fill = min(top_k - len(results), len(pool))
    if n_fill > 0:
        picks = rng.choice(len(pool), size=n_fill, replace=False)
        results.extend(pool[int(i)] for i in picks)
    order = rng.permutation(len(results))
    return [results[int(i)] for i in order]


def guess_probability(instance: QAInstance, depth: int) -> float:
    """Chance the generator lands on the answer with only ``depth`` hops resolved."""
    if depth >= instance.hop_count:
        return 1.0
    return instance.params.guess_rate * (1 + depth) / instance.hop_count


def backstop_answer(state: SearchState) -> Tokens:
    """Best-supported span from revealed evidence: the deepest resolved hop's entity."""
    depth = state.resolved_depth
    if depth == 0:
        return ()
    return state.instance.hops[depth - 1].entity


def render_answer(instance: QAInstance, state: SearchState) -> Tokens:
    """What the simulated generator writes when asked to answer now."""
    if not (state.complete or instance.guess_u < guess_probability(instance, state.resolved_depth)):
        return backstop_answer(state)
    gold = instance.gold_answer
    err = instance.form_error
    if err == "polarity":
        return next(o for o in instance.options if o != gold)
    if err == "drop":
        return gold[:-1]
    if err == "paraphrase":
        return gold[:-1] + ("roughly",)
    return gold


def realized_charge(estimated: ChargeVector, seed: int, step: int) -> ChargeVector:
    """Tool cost is exact; token cost jitters uniformly within +-10% and is at least 1."""
    rng = _rng(seed, step, 0x70C)
    spread = int(estimated.tok // 10)
    jitter = int(rng.integers(-spread, spread + 1)) if spread else 0
    return ChargeVector(estimated.tool, max(1, estimated.tok + jitter))


def execute(instance: QAInstance, state: SearchState, action: Action, b: Budget, *,
            seed: int = 0, estimates: TokenEstimates | None = None,
            top_k: int = 5) -> tuple[SearchState, ChargeVector, StepRecord]:
    """Run one action; returns the next state, realized charge and a step record."""
    action = Action(action)
    g = estimate_charge(action, state, estimates)
    realized = realized_charge(g, seed, state.step)
    if action is Action.ANSWER:
        cand = render_answer(instance, state)
        nxt = replace(state, candidate=cand, step=state.step + 1)
        return nxt, realized, StepRecord(state.step, action, g, realized)

    assert b.tool_remaining >= g.tool, "tool action executed without tool budget"
    opened = state.opened
    if action is Action.DECOMPOSE:
        target = state.target_hop or 0
        opened = opened | {max(target, 1) if instance.hop_count > 1 else 0}
        state = replace(state, opened=opened)
    query = make_query(state, action)
    docs = retrieve(instance, state, query, top_k)
    seen = {e.doc_id for e in state.evidence}
    before = state.resolved_depth
    evidence = state.evidence + tuple(d for d in docs if d.doc_id not in seen)
    nxt = replace(state, evidence=evidence, queries=state.queries + (query,), step=state.step + 1,
                  search_count=state.search_count + (action is Action.SEARCH),
                  decompose_count=state.decompose_count + (action is Action.DECOMPOSE))
    gained = nxt.resolved_depth > before
    nxt = replace(nxt, gains=nxt.gains + gained,
                  no_gain_streak=0 if gained else state.no_gain_streak + 1)
    return nxt, realized, StepRecord(state.step, action, g, realized, query, gained)


# -- corpus import / export ------------------------------------------------

def _evidence_from(d: dict) -> Evidence:
    return Evidence(d["doc_id"], tuple(d["tokens"]), tuple(tuple(s) for s in d["spans"]),
                    d["hop"], d["hard"])


def instance_to_dict(inst: QAInstance) -> dict:
    return asdict(inst)


def instance_from_dict(d: dict) -> QAInstance:
    hops = tuple(Hop(h["key"], tuple(h["entity"]), _evidence_from(h["gold"])) for h in d["hops"])
    return QAInstance(
        d["question_id"], d["seed"], hops, tuple(_evidence_from(e) for e in d["distractors"]),
        tuple(d["gold_answer"]), d["q_type"], d["q_slot"], d["explicit_factoid_slot"],
        d["comparative"], tuple(tuple(o) for o in d["options"]), d["form_error"],
        d["guess_u"], SimParams(**d["params"]))


def save_corpus(instances: Iterable[QAInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst), sort_keys=True) + "\n")


def load_corpus(path: str | Path) -> list[QAInstance]:
    with open(path, encoding="utf-8") as fh:
        return [instance_from_dict(json.loads(line)) for line in fh if line.strip()]
