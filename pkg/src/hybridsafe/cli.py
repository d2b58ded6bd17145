"""Command-line front end for the analyses and the proof checker.

Subcommands
-----------
check        parse a model file and report its static variable analyses
safety       quantitative safety degree (iota forward, rho backward)
robustness   attacked-vs-genuine safety ratio delta plus classification
simdist      check a simulation-distance bound by falsification
encode       emit the dL encodings of a simulation-distance assertion
prove        re-check a proof script and emit its certificate
replay       re-execute a recorded counterexample trace scalar-wise

Exit codes: 0 success, 1 analysis-negative (unsafe, broken, distance
exceeded, proof failed, trace rejected), 2 usage or input parse error,
3 internal error.

With ``--output json`` every report is canonical JSON (sorted keys, fixed
float formatting), byte-identical across runs for the same inputs and
seed; errors go to stderr as single-line JSON objects.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

from .attack import AttackSpec, AttackSpecError, apply_attack
from .jsonio import dumps
from .metrics import HSet
from .proofkernel import (
    LeafFailed, OracleConfig, Proved, RuleError, ScriptError, check_proof,
    load_proof, path_str,
)
from .quantsafety import (
    NotSafe, backward_robustness, backward_safety, forward_robustness,
    forward_safety,
)
from .semantics import (
    EmptyPrecondition, ReplayError, SampleConfig, State, Tri,
    UnboundedQuantifier, eval_formula, replay_trace,
)
from .simdist import (
    SimDistQuery, check_backward_simdist, check_forward_simdist,
    encode_backward_simdist, encode_forward_simdist,
)
from .syntax import (
    ParseError, base_vars, bound_vars, free_vars, load_model,
    must_bound_vars, parse_formula, print_formula, print_program,
)

_DIRECTIONS = {"fwd": "Forward", "bwd": "Backward"}


class UsageError(ValueError):
    """Bad flag combination or malformed flag value (exit code 2)."""


# ---------------------------------------------------------------------------
# Flag parsing helpers
# ---------------------------------------------------------------------------

def _parse_box_flag(text: str, flag: str) -> Dict[str, Tuple[float, float]]:
    """``v=lo:hi,w=lo:hi`` -> {v: (lo, hi), ...}."""
    box: Dict[str, Tuple[float, float]] = {}
    for entry in text.split(","):
        entry = entry.strip()
        if not entry:
            continue
        if "=" not in entry or ":" not in entry.split("=", 1)[1]:
            raise UsageError(f"{flag}: entry {entry!r} is not var=lo:hi")
        var, rng = entry.split("=", 1)
        lo_s, hi_s = rng.split(":", 1)
        try:
            lo, hi = float(lo_s), float(hi_s)
        except ValueError:
            raise UsageError(f"{flag}: non-numeric bound in {entry!r}") from None
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise UsageError(f"{flag}: empty or infinite range in {entry!r}")
        box[var.strip()] = (lo, hi)
    return box


def _sample_config(args: argparse.Namespace) -> SampleConfig:
    """Effective SampleConfig: defaults, field overrides, budget scaling."""
    cfg = SampleConfig(seed=args.seed)
    if args.init_box:
        cfg = replace(cfg, init_box=_parse_box_flag(args.init_box, "--init-box"))
    if args.quant_box:
        cfg = replace(cfg, quant_box=_parse_box_flag(args.quant_box, "--quant-box"))
    for field in ("n_init", "n_branch", "ode_step", "loop_unroll",
                  "quant_grid", "ode_time_horizon"):
        v = getattr(args, field)
        if v is not None:
            cfg = replace(cfg, **{field: v})
    if args.budget <= 0:
        raise UsageError("--budget must be positive")
    if args.budget != 1.0:
        cfg = replace(cfg,
                      n_init=max(1, round(cfg.n_init * args.budget)),
                      n_branch=max(1, round(cfg.n_branch * args.budget)),
                      quant_grid=max(3, round(cfg.quant_grid * args.budget)))
    return cfg


def _jobs(args: argparse.Namespace) -> int:
    if args.jobs is not None:
        n = args.jobs
    else:
        raw = os.environ.get("HYBRIDSAFE_JOBS", "1")
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"HYBRIDSAFE_JOBS={raw!r} is not an integer") from None
    if n < 1:
        raise UsageError("--jobs must be >= 1")
    return n


def _load_attack(args: argparse.Namespace) -> Optional[AttackSpec]:
    if getattr(args, "attack", None) is None:
        return None
    return AttackSpec.load(args.attack)


def _h_set(text: str) -> HSet:
    names = [v.strip() for v in text.split(",") if v.strip()]
    if not names:
        raise UsageError("--H must name at least one variable")
    return HSet(frozenset(names))


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _state_line(d: Dict[str, float]) -> str:
    return ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(d.items()))


def _finish(args: argparse.Namespace, payload: dict, lines: List[str],
            code: int) -> int:
    if args.output == "json":
        sys.stdout.write(dumps(payload, indent=2) + "\n")
    else:
        sys.stdout.write("\n".join(lines) + "\n")
    return code


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_check(args: argparse.Namespace) -> int:
    cfg = _sample_config(args)
    model = load_model(args.model)
    p = model.program
    known = set(base_vars(p)) | set(free_vars(model.pre))
    warnings = []
    loose = sorted(set(free_vars(model.post)) - known)
    if loose:
        warnings.append(
            "postcondition mentions variables absent from the program and "
            "precondition: " + ", ".join(loose))
    payload = {
        "analysis": "check",
        "model": args.model,
        "pre": print_formula(model.pre),
        "post": print_formula(model.post),
        "program": print_program(p),
        "variables": {
            "free": sorted(free_vars(p)),
            "bound": sorted(bound_vars(p)),
            "must_bound": sorted(must_bound_vars(p)),
            "base": sorted(base_vars(p)),
        },
        "warnings": warnings,
        "config_echo": cfg.echo(),
        "jobs": _jobs(args),
    }
    lines = [
        f"model: {args.model}",
        f"pre: {payload['pre']}",
        f"post: {payload['post']}",
        f"program: {payload['program']}",
        "free: " + ", ".join(payload["variables"]["free"]),
        "bound: " + ", ".join(payload["variables"]["bound"]),
        "must-bound: " + ", ".join(payload["variables"]["must_bound"]),
        "base: " + ", ".join(payload["variables"]["base"]),
    ]
    lines += [f"warning: {w}" for w in warnings]
    return _finish(args, payload, lines, 0)


def _cmd_safety(args: argparse.Namespace) -> int:
    cfg = _sample_config(args)
    model = load_model(args.model)
    attack = _load_attack(args)
    program = model.program if attack is None \
        else apply_attack(model.program, attack)
    fn = forward_safety if args.direction == "fwd" else backward_safety
    report = fn(program, model.pre, model.post, cfg)
    payload = {
        "analysis": "safety",
        "model": args.model,
        "attack": args.attack,
        "report": report.to_json(cfg),
        "jobs": _jobs(args),
    }
    name = "iota" if report.direction == "Forward" else "rho"
    lines = [
        f"{report.direction.lower()} safety ({name}): {_fmt(report.value)}"
        + ("  [attacked model]" if attack is not None else ""),
        f"exact: {report.exact}  boundary: {report.boundary}",
    ]
    if report.witness is not None:
        lines.append("witness: " + _state_line(report.witness.to_dict()))
    lines.append(f"caveat: {report.caveat}")
    return _finish(args, payload, lines, 0 if report.value > 0 else 1)


def _cmd_robustness(args: argparse.Namespace) -> int:
    cfg = _sample_config(args)
    model = load_model(args.model)
    attack = _load_attack(args)
    fn = forward_robustness if args.direction == "fwd" else backward_robustness
    report = fn(model.program, model.pre, model.post, attack, cfg)
    payload = {
        "analysis": "robustness",
        "model": args.model,
        "attack": args.attack,
        "report": report.to_json(cfg),
        "jobs": _jobs(args),
    }
    name = "iota" if report.genuine.direction == "Forward" else "rho"
    lines = [
        f"direction: {report.genuine.direction}",
        f"delta: {_fmt(report.delta)}  classification: {report.classification}",
        f"genuine {name}: {_fmt(report.genuine.value)}",
        f"attacked {name}: {_fmt(report.attacked.value)}",
    ]
    return _finish(args, payload, lines,
                   0 if report.classification != "Broken" else 1)


def _simdist_query(args: argparse.Namespace, model) -> SimDistQuery:
    if args.d < 0 or not math.isfinite(args.d):
        raise UsageError("--d must be finite and >= 0")
    attack = _load_attack(args)
    direction = _DIRECTIONS[args.direction]
    anchor = model.pre if direction == "Forward" else model.post
    return SimDistQuery(program=model.program, attack=attack, anchor=anchor,
                        H=_h_set(args.H), d=args.d, direction=direction)


def _cmd_simdist(args: argparse.Namespace) -> int:
    cfg = _sample_config(args)
    model = load_model(args.model)
    q = _simdist_query(args, model)
    check = check_forward_simdist if q.direction == "Forward" \
        else check_backward_simdist
    verdict = check(q, cfg)
    payload = {
        "analysis": "simdist",
        "model": args.model,
        "attack": args.attack,
        "direction": q.direction,
        "d": float(q.d),
        "H": sorted(q.H.vars),
        "verdict": verdict.to_json(),
        "config_echo": cfg.echo(),
        "jobs": _jobs(args),
    }
    lines = [
        f"simulation distance ({q.direction}, d={_fmt(q.d)}, "
        f"H={{{', '.join(sorted(q.H.vars))}}})",
        f"holds at resolution: {verdict.holds_at_resolution}",
        f"margin: {_fmt(verdict.margin)}",
    ]
    if verdict.counterexample is not None:
        state, mind = verdict.counterexample
        lines.append("counterexample: " + _state_line(state.to_dict()))
        lines.append(f"nearest genuine state at distance {_fmt(mind)}")
        if verdict.counterexample_trace is not None:
            lines.append("replayable trace included in the JSON report")
    return _finish(args, payload, lines,
                   0 if verdict.holds_at_resolution else 1)


def _cmd_encode(args: argparse.Namespace) -> int:
    cfg = _sample_config(args)
    model = load_model(args.model)
    q = _simdist_query(args, model)
    set_a = parse_formula(args.set_attacked) if args.set_attacked else None
    set_g = parse_formula(args.set_genuine) if args.set_genuine else None
    if (set_a is None) != (set_g is None):
        raise UsageError(
            "--set-attacked and --set-genuine must be given together")
    encode = encode_forward_simdist if q.direction == "Forward" \
        else encode_backward_simdist
    enc = encode(q, set_a, set_g)
    payload = {
        "analysis": "encode",
        "model": args.model,
        "attack": args.attack,
        "direction": q.direction,
        "d": float(q.d),
        "H": sorted(q.H.vars),
        "modality": print_formula(enc.modality),
        "sp_based": None if enc.sp_based is None else print_formula(enc.sp_based),
        "config_echo": cfg.echo(),
        "jobs": _jobs(args),
    }
    lines = [
        f"/* {q.direction.lower()} simulation distance d={_fmt(q.d)}, "
        f"H={{{', '.join(sorted(q.H.vars))}}} */",
        "/* run-quantified encoding */",
        payload["modality"],
    ]
    if enc.sp_based is not None:
        lines += ["/* set-based encoding */", payload["sp_based"]]
    return _finish(args, payload, lines, 0)


def _cmd_prove(args: argparse.Namespace) -> int:
    cfg = _sample_config(args)
    script = load_proof(args.script)
    oracle_cfg = OracleConfig(box=dict(script.box), budget=script.budget,
                              seed=args.seed, sample=cfg)
    outcome = check_proof(script.root, oracle_cfg)
    payload = {
        "analysis": "prove",
        "script": args.script,
        "config_echo": cfg.echo(),
        "jobs": _jobs(args),
    }
    if isinstance(outcome, Proved):
        payload["result"] = "proved"
        payload["certificate"] = outcome.certificate
        cert = outcome.certificate
        lines = [
            "result: Proved",
            f"goal: {cert['goal']}",
            f"nodes checked: {cert['nodes']}",
            f"oracle assumptions: {len(cert['oracle_assumptions'])}",
            f"solve validations: {len(cert['solve_validations'])}",
        ]
        return _finish(args, payload, lines, 0)
    if isinstance(outcome, LeafFailed):
        payload["result"] = "leaf_failed"
        payload["path"] = path_str(outcome.path)
        payload["sequent"] = outcome.sequent.text()
        payload["counterexample"] = outcome.counterexample.as_dict()
        payload["message"] = outcome.message
        lines = [
            "result: LeafFailed",
            f"at: {payload['path']}",
            f"goal: {payload['sequent']}",
            "counterexample: " + _state_line(payload["counterexample"]),
        ]
        return _finish(args, payload, lines, 1)
    assert isinstance(outcome, RuleError)
    payload["result"] = "rule_error"
    payload["path"] = path_str(outcome.path)
    payload["message"] = outcome.message
    lines = [
        "result: RuleError",
        f"at: {payload['path']}",
        f"message: {outcome.message}",
    ]
    return _finish(args, payload, lines, 1)


def _extract_trace(doc) -> dict:
    """Accept a bare action log or any report JSON that embeds one."""
    if isinstance(doc, dict):
        if "initial" in doc and "actions" in doc:
            return doc
        for key in ("trace", "counterexample", "verdict"):
            if key in doc and isinstance(doc[key], dict):
                try:
                    return _extract_trace(doc[key])
                except UsageError:
                    pass
    raise UsageError("no replayable trace found in the file")


def _cmd_replay(args: argparse.Namespace) -> int:
    cfg = _sample_config(args)
    model = load_model(args.model)
    attack = _load_attack(args)
    program = model.program if attack is None \
        else apply_attack(model.program, attack)
    with open(args.trace, encoding="utf-8") as fh:
        doc = json.load(fh)
    trace = _extract_trace(doc)
    final = replay_trace(program, trace, cfg)
    payload = {
        "analysis": "replay",
        "model": args.model,
        "attack": args.attack,
        "trace": args.trace,
        "final_state": {v: float(x) for v, x in sorted(final.to_dict().items())},
        "actions": len(trace["actions"]),
        "config_echo": cfg.echo(),
        "jobs": _jobs(args),
    }
    lines = [
        f"replayed {payload['actions']} actions",
        "final state: " + _state_line(payload["final_state"]),
    ]
    code = 0
    if args.check:
        f = parse_formula(args.check)
        verdict = eval_formula(final, f, cfg)
        payload["check"] = {"formula": print_formula(f),
                            "holds": verdict.value}
        lines.append(f"check {print_formula(f)}: {verdict.value}")
        if verdict is not Tri.TRUE:
            code = 1
    return _finish(args, payload, lines, code)


# ---------------------------------------------------------------------------
# Parser construction and entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--output", choices=("json", "text"), default="text",
                   help="report format (default: text)")
    g.add_argument("--seed", type=int, default=0,
                   help="PRNG seed (default: 0)")
    g.add_argument("--budget", type=float, default=1.0,
                   help="multiplier scaling n_init, n_branch and quant_grid")
    g.add_argument("--jobs", type=int, default=None,
                   help="worker cap (default: $HYBRIDSAFE_JOBS or 1)")
    g.add_argument("--init-box", default=None, metavar="V=LO:HI,...",
                   help="sampling box for initial states")
    g.add_argument("--quant-box", default=None, metavar="V=LO:HI,...",
                   help="bounding box for quantified variables")
    g.add_argument("--n-init", type=int, default=None, help=argparse.SUPPRESS)
    g.add_argument("--n-branch", type=int, default=None, help=argparse.SUPPRESS)
    g.add_argument("--ode-step", type=float, default=None, help=argparse.SUPPRESS)
    g.add_argument("--loop-unroll", type=int, default=None, help=argparse.SUPPRESS)
    g.add_argument("--quant-grid", type=int, default=None, help=argparse.SUPPRESS)
    g.add_argument("--ode-time-horizon", type=float, default=None,
                   help=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(
        prog="hybridsafe",
        description="Quantitative safety, robustness and simulation-distance "
                    "analysis of hybrid programs under bounded sensor attacks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common],
                       help="parse a model and report static analyses")
    p.add_argument("model")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("safety", parents=[common],
                       help="quantitative safety degree")
    p.add_argument("--direction", choices=("fwd", "bwd"), required=True)
    p.add_argument("--attack", default=None,
                   help="attack spec JSON; analyze the attacked model")
    p.add_argument("model")
    p.set_defaults(func=_cmd_safety)

    p = sub.add_parser("robustness", parents=[common],
                       help="attacked/genuine safety ratio")
    p.add_argument("--direction", choices=("fwd", "bwd"), required=True)
    p.add_argument("--attack", required=True, help="attack spec JSON")
    p.add_argument("model")
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("simdist", parents=[common],
                       help="check a simulation-distance bound")
    p.add_argument("--direction", choices=("fwd", "bwd"), required=True)
    p.add_argument("--attack", required=True, help="attack spec JSON")
    p.add_argument("--d", type=float, required=True,
                   help="distance bound to check")
    p.add_argument("--H", required=True, metavar="V1,V2,...",
                   help="comparison variables")
    p.add_argument("model")
    p.set_defaults(func=_cmd_simdist)

    p = sub.add_parser("encode", parents=[common],
                       help="emit dL encodings of a distance assertion")
    p.add_argument("--direction", choices=("fwd", "bwd"), required=True)
    p.add_argument("--attack", required=True, help="attack spec JSON")
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--H", required=True, metavar="V1,V2,...")
    p.add_argument("--set-attacked", default=None, metavar="FORMULA",
                   help="attacked-set formula for the set-based encoding")
    p.add_argument("--set-genuine", default=None, metavar="FORMULA",
                   help="genuine-set formula for the set-based encoding")
    p.add_argument("model")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("prove", parents=[common],
                       help="re-check a proof script")
    p.add_argument("--script", required=True, help="proof script (.ps)")
    p.set_defaults(func=_cmd_prove)

    p = sub.add_parser("replay", parents=[common],
                       help="re-execute a recorded trace")
    p.add_argument("--trace", required=True,
                   help="trace JSON (bare log or a report embedding one)")
    p.add_argument("--attack", default=None,
                   help="attack spec JSON; replay against the attacked model")
    p.add_argument("--check", default=None, metavar="FORMULA",
                   help="formula to evaluate on the final state")
    p.add_argument("model")
    p.set_defaults(func=_cmd_replay)

    return ap


def _emit_error(output: str, exc: Exception) -> None:
    if output == "json":
        line = dumps({"error": type(exc).__name__, "message": str(exc)})
        sys.stderr.write(line + "\n")
    else:
        sys.stderr.write(f"error: {exc}\n")


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    output = getattr(args, "output", "text")
    try:
        return args.func(args)
    except (UsageError, ParseError, ScriptError, AttackSpecError,
            UnboundedQuantifier, EmptyPrecondition,
            FileNotFoundError, IsADirectoryError,
            json.JSONDecodeError) as e:
        _emit_error(output, e)
        return 2
    except (NotSafe, ReplayError) as e:
        _emit_error(output, e)
        return 1
    except Exception as e:
        _emit_error(output, e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
