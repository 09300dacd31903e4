"""Trace one two-hop question through both stages at each budget level.

Prints the per-step score table the controller saw, the action it took, and
what the finalizer did with the answer.
"""

from __future__ import annotations

from budgetvoi.budget import LADDER
from budgetvoi.harness import run_episode
from budgetvoi.metrics import f1
from budgetvoi.sim import SimParams, generate_instance


def show(seed: int = 11, hops: int = 2) -> None:
    inst = generate_instance(seed, SimParams(hop_count=hops))
    print(f"question {inst.question_id}: {hops} hops, type={inst.q_type}, gold={' '.join(inst.gold_answer)!r}")
    for level, caps in LADDER.items():
        ep = run_episode(inst, caps, seed=seed)
        print(f"\n[{level} {caps}]")
        for step in ep.trajectory.steps:
            row = []
            for name in ("answer", "search", "decompose"):
                s = (step.scores or {}).get(name)
                if s is not None:
                    g = "masked" if s["guarded"] is None else f"{s['guarded']:.3f}"
                    row.append(f"{name[:3]} u={s['utility']:+.3f} J={g}")
            print(f"  step {step.step}: {step.action.value:<9} tok={step.realized.tok:<3} | " + "; ".join(row))
        d = ep.decision
        print(f"  base={' '.join(ep.a_base)!r} final={' '.join(d.chosen_answer)!r} "
              f"branch={d.branch} F1={f1(d.chosen_answer, inst.gold_answer):.2f} "
              f"used=({ep.trajectory.tool_used},{ep.trajectory.tok_used})")


if __name__ == "__main__":
    show()
