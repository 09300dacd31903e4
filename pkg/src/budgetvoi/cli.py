"""Command-line entry point.

Precedence for every setting: built-in default < ``--config`` file < explicit flag.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

from .budget import LADDER, TokenEstimates, parse_budget
from .controller import ABLATIONS, ControllerConfig
from .harness import RunConfig, emit_outputs, run_ablation, run_ladder, summarize
from .oracle import check_reward_harm_identity, distribution_from_episodes, is_safe_features
from .finalizer import FinalizationFeatures
from .verify import run_all

# numeric ControllerConfig fields exposed as --kebab-case flags
COEFFICIENTS = tuple(f.name for f in fields(ControllerConfig) if f.type in ("float", float))
TOKEN_FLAGS = {"search_tok": "search", "decompose_tok": "decompose", "answer_tok": "answer"}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings; explicit flags win")
    common.add_argument("--budget", action="append", metavar="T,K",
                        help="tool,token caps or a ladder name (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--ablate", choices=ABLATIONS)
    common.add_argument("--no-finalizer", action="store_true", default=None)
    common.add_argument("--corpus", help="JSONL corpus file or directory of them")
    common.add_argument("--out", help="output directory")
    common.add_argument("--n-questions", type=int, help="questions per synthetic benchmark")
    coef = common.add_argument_group("controller coefficients")
    for name in COEFFICIENTS:
        coef.add_argument(_flag(name), type=float, dest=name)
    for name in TOKEN_FLAGS:
        coef.add_argument(_flag(name), type=int, dest=name)

    parser = argparse.ArgumentParser(prog="budgetvoi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one variant over the given budgets")
    sub.add_parser("ladder", parents=[common], help="one variant over the full budget ladder")
    sub.add_parser("ablate", parents=[common], help="all ablation variants on identical seeds")
    ov = sub.add_parser("oracle-verify", parents=[common], help="run every theorem checker")
    ov.add_argument("--quick", action="store_true", help="smaller sweeps")
    sub.add_parser("finalize-audit", parents=[common], help="finalizer decisions and harm audit")
    return parser


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"cannot read config {path}: {exc}")
    if not isinstance(data, dict):
        raise SystemExit(f"config {path} must hold a JSON object")
    return data


def resolve(args: argparse.Namespace) -> dict:
    """Merge config-file values under explicit flags."""
    file_cfg = load_config(args.config)
    settings = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "command"):
            settings[key] = value
    return settings


def controller_from(settings: dict) -> ControllerConfig:
    nested = settings.get("controller", {})
    coefs = {k: float(v) for k, v in {**nested, **settings}.items() if k in COEFFICIENTS}
    tok = dict(settings.get("tokens", {}))
    for flag, name in TOKEN_FLAGS.items():
        if flag in settings:
            tok[name] = int(settings[flag])
    try:
        return ControllerConfig(**coefs, tokens=TokenEstimates(**tok))
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"bad controller settings: {exc}")


def ladder_from(settings: dict, command: str) -> tuple:
    budgets = settings.get("budget")
    if not budgets:
        return tuple(LADDER.items()) if command != "run" else (("high", LADDER["high"]),)
    if isinstance(budgets, str):
        budgets = [budgets]
    out = []
    for text in budgets:
        try:
            caps = parse_budget(str(text))
        except ValueError as exc:
            raise SystemExit(str(exc))
        name = text if text in LADDER else f"{caps[0]},{caps[1]}"
        out.append((name, caps))
    return tuple(out)


def run_config_from(settings: dict, command: str) -> RunConfig:
    ablate = settings.get("ablate")
    variant = f"no_{ablate}" if ablate else "full"
    kwargs = dict(ladder=ladder_from(settings, command), controller=controller_from(settings),
                  finalizer=not settings.get("no_finalizer", False), variants=(variant,),
                  seed=int(settings.get("seed", 0)), corpus=settings.get("corpus"),
                  out_dir=settings.get("out"))
    if "n_questions" in settings:
        kwargs["n_questions"] = int(settings["n_questions"])
    return RunConfig(**kwargs)


def _emit(results, cfg: RunConfig) -> dict:
    summary = summarize(results)
    if cfg.out_dir:
        emit_outputs(results, cfg.out_dir)
    return summary


def cmd_suite(settings: dict, command: str) -> dict:
    cfg = run_config_from(settings, command)
    if command == "ablate":
        if settings.get("ablate"):
            cfg = replace(cfg, variants=("full", f"no_{settings['ablate']}"))
            results = run_ladder(cfg)
        else:
            results = run_ablation(cfg)
    else:
        results = run_ladder(cfg)
    summary = _emit(results, cfg)
    return {"variants": summary["variants"], "deltas_vs_full": summary["deltas_vs_full"]}


def cmd_oracle(settings: dict) -> dict:
    reports = [r.as_dict() for r in run_all(int(settings.get("seed", 0)), settings.get("quick", False))]
    out = {"status": "PASS" if all(r["status"] == "PASS" for r in reports) else "FAIL",
           "norm": "euclidean", "checks": reports}
    if settings.get("out"):
        path = Path(settings["out"])
        path.mkdir(parents=True, exist_ok=True)
        (path / "oracle_report.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def finalize_audit(episodes: list[dict]) -> dict:
    """Branch counts, gains/harms, and the reward-harm identity on logged episodes."""
    branches: dict[str, int] = {}
    improved = harmed = 0
    records = []
    for rec in episodes:
        branches[rec["branch"]] = branches.get(rec["branch"], 0) + 1
        if rec["accept"]:
            improved += rec["ref_f1"] > rec["base_f1"]
            harmed += rec["ref_f1"] < rec["base_f1"]
        z = FinalizationFeatures(**rec["z"])
        records.append(((rec["benchmark"], rec["budget"], rec["variant"]) + z.key(),
                        is_safe_features(z), rec["base_f1"], rec["ref_f1"], rec["accept"]))
    report = {"episodes": len(episodes), "branches": dict(sorted(branches.items())),
              "accepted": sum(r[4] for r in records), "improved": improved, "harmed": harmed}
    if records:
        dist, policy = distribution_from_episodes(records)
        ident = check_reward_harm_identity(dist, policy)
        report.update(reward_change=ident.reward_lhs, harm=ident.harm_lhs,
                      reward_gap=ident.reward_gap, harm_gap=ident.harm_gap,
                      identity="PASS" if ident.holds() else "FAIL")
    return report


def cmd_finalize(settings: dict) -> dict:
    cfg = run_config_from(settings, "finalize-audit")
    cfg = replace(cfg, finalizer=True)
    results = run_ladder(cfg)
    _emit(results, cfg)
    return finalize_audit(results.episodes)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = resolve(args)
    if args.command in ("run", "ladder", "ablate"):
        out = cmd_suite(settings, args.command)
        status = 0
    elif args.command == "oracle-verify":
        out = cmd_oracle(settings)
        status = 0 if out["status"] == "PASS" else 1
    else:
        out = cmd_finalize(settings)
        status = 0 if out.get("identity", "PASS") == "PASS" else 1
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
