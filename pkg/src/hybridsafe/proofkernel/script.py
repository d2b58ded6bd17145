"""Proof-script files: a line-oriented front end for the kernel.

A script sets up a goal (model, attack, renaming, search box) and then
replays rule applications, one per line, against the leftmost open goal.
Example:

    model models/watertank.hp
    attack models/watertank_attack.json
    rename Q_p=Q_pr Q_s=Q_sr r=rr t=tr
    box Q_p=0:60 Q_pr=0:60 Q_s=-5:65 Q_sr=-5:65 r=0:12 rr=0:12 t=0:2 tr=0:2
    budget 4096
    goal |- (Q_p = Q_pr) -> [[P]]((Q_p >= 20) | (Q_p < 20 & Q_pr < 20))
    apply implyR
    apply F-inv inv="(Q_p >= 20 & Q_pr >= 20) | (Q_p = Q_pr & Q_p < 20)"
    ...
    qed

Inside ``[[...]]`` brackets the names ``P`` (the model program) and ``B``
(the body of the model's outermost loop) are reserved; any other content
is parsed as an inline program. The turnstile is the two-character token
``|-``; write a disjunction of a negated term with a space (``a | -b``)
so it is not taken for a turnstile. ``#`` starts a comment.
"""

from __future__ import annotations

import os
import shlex
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from ..attack import AttackSpec
from ..syntax.analysis import RenamingError, RenamingMap
from ..syntax.nodes import Formula, Loop, Program
from ..syntax.parser import ModelFile, ParseError, _Parser, load_model
from .rules import RuleFailure, RULES, apply_rule
from .sequent import CaptureError, DModality, ProofNode, Sequent

RESERVED_PROGRAMS = ("P", "B")


class ScriptError(ValueError):
    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        super().__init__(
            f"line {lineno}: {message}" if lineno else message)


class _DParser(_Parser):
    """Formula parser extended with ``[[program]]phi`` simulation goals."""

    def __init__(self, src: str, attack: AttackSpec, renaming: RenamingMap,
                 programs: Dict[str, Program]):
        super().__init__(src)
        self._attack = attack
        self._renaming = renaming
        self._programs = programs

    def formula_unary(self):
        if self.at("[") and self.peek(1).kind == "op" \
                and self.peek(1).text == "[":
            open_tok = self.peek()
            self.next()
            self.next()
            t = self.peek()
            if t.kind == "name" and t.text in self._programs \
                    and self.peek(1).text == "]":
                prog = self._programs[t.text]
                self.next()
            elif t.kind == "name" and t.text in RESERVED_PROGRAMS \
                    and self.peek(1).text == "]":
                raise ParseError(f"program name {t.text!r} is not available "
                                 "here", t.line, t.column)
            else:
                prog = self.program()
            self.expect("]", "simulation modality")
            self.expect("]", "simulation modality")
            body = self.formula_unary()
            try:
                return DModality(prog, self._attack, self._renaming, body)
            except RenamingError as e:
                raise ParseError(str(e), open_tok.line, open_tok.column)
        return super().formula_unary()


def parse_dformula(src: str, attack: AttackSpec, renaming: RenamingMap,
                   programs: Optional[Dict[str, Program]] = None) -> Formula:
    p = _DParser(src, attack, renaming, dict(programs or {}))
    f = p.formula()
    tok = p.peek()
    if tok.kind != "eof":
        raise ParseError(f"trailing input after formula: {tok.text!r}",
                         tok.line, tok.column)
    return f


def parse_goal(src: str, attack: AttackSpec, renaming: RenamingMap,
               programs: Optional[Dict[str, Program]] = None) -> Sequent:
    """Parse ``ante |- succ`` (either side may be empty, one formula each)."""
    if src.count("|-") > 1:
        raise ParseError("more than one turnstile in goal", 1, 1)
    if "|-" in src:
        left, right = src.split("|-")
    else:
        left, right = "", src
    ante = [] if not left.strip() else \
        [parse_dformula(left, attack, renaming, programs)]
    succ = [] if not right.strip() else \
        [parse_dformula(right, attack, renaming, programs)]
    return Sequent(ante, succ)


@dataclass
class ProofScript:
    """A fully replayed script: the proof tree plus its ambient setup."""

    root: ProofNode
    model: Optional[ModelFile]
    model_path: Optional[str]
    attack: AttackSpec
    renaming: RenamingMap
    box: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    budget: int = 4096


def _parse_box(pairs: List[str], lineno: int) -> Dict[str, Tuple[float, float]]:
    box = {}
    for p in pairs:
        if "=" not in p or ":" not in p.split("=", 1)[1]:
            raise ScriptError(f"box entry {p!r} is not var=lo:hi", lineno)
        v, rng = p.split("=", 1)
        lo, hi = rng.split(":", 1)
        try:
            box[v] = (float(lo), float(hi))
        except ValueError:
            raise ScriptError(f"box entry {p!r} has non-numeric bounds",
                              lineno)
        if not box[v][0] <= box[v][1]:
            raise ScriptError(f"box entry {p!r} has lo > hi", lineno)
    return box


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].rstrip()


_STRING_KEYS = ("side", "clock", "time")


def _coerce_args(rule: str, kvs: List[str], attack: AttackSpec,
                 renaming: RenamingMap, programs: Dict[str, Program],
                 lineno: int) -> Dict[str, object]:
    """Turn textual key=value arguments into what the rule expects:
    formulas for on=/fml=/inv=, ints for occ=/budget=, terms for the
    per-variable closed forms of solve/solved, raw strings otherwise."""
    from ..syntax.parser import parse_term
    args: Dict[str, object] = {}
    for kv in kvs:
        if "=" not in kv:
            raise ScriptError(f"argument {kv!r} is not key=value", lineno)
        k, v = kv.split("=", 1)
        try:
            if k in ("on", "fml", "inv"):
                args[k] = parse_dformula(v, attack, renaming, programs)
            elif k in ("occ", "budget"):
                args[k] = int(v)
            elif k in _STRING_KEYS:
                args[k] = v
            elif rule in ("solve", "solved"):
                args[k] = parse_term(v)
            else:
                args[k] = v
        except ParseError as e:
            raise ScriptError(f"argument {k}: {e}", lineno)
        except ValueError as e:
            if isinstance(e, ScriptError):
                raise
            raise ScriptError(f"argument {k}: {e}", lineno)
    return args


def build_proof(text: str, base_dir: str = ".") -> ProofScript:
    """Replay a proof script into a closed proof tree.

    ``model``/``attack`` paths are resolved against the current directory
    first, then against ``base_dir`` (normally the script's directory).
    """
    model: Optional[ModelFile] = None
    model_path: Optional[str] = None
    attack = AttackSpec((), {}, {})
    renaming: Optional[RenamingMap] = None
    box: Dict[str, Tuple[float, float]] = {}
    budget = 4096
    root: Optional[ProofNode] = None
    done = False

    def resolve(path: str, lineno: int) -> str:
        if os.path.isabs(path) or os.path.exists(path):
            return path
        alt = os.path.join(base_dir, path)
        if os.path.exists(alt):
            return alt
        raise ScriptError(f"file not found: {path}", lineno)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if done:
            raise ScriptError("content after qed", lineno)
        word, _, rest = line.partition(" ")
        rest = rest.strip()
        if word == "model":
            if root is not None:
                raise ScriptError("model must precede goal", lineno)
            model_path = resolve(shlex.split(rest)[0], lineno)
            try:
                model = load_model(model_path)
            except ParseError as e:
                raise ScriptError(f"in {model_path}: {e}", lineno)
        elif word == "attack":
            if root is not None:
                raise ScriptError("attack must precede goal", lineno)
            try:
                attack = AttackSpec.load(resolve(shlex.split(rest)[0], lineno))
            except (ValueError, OSError) as e:
                raise ScriptError(f"attack file: {e}", lineno)
        elif word == "rename":
            if root is not None:
                raise ScriptError("rename must precede goal", lineno)
            pairs = {}
            for p in shlex.split(rest):
                if "=" not in p:
                    raise ScriptError(f"rename entry {p!r} is not old=new",
                                      lineno)
                a, b = p.split("=", 1)
                pairs[a] = b
            try:
                renaming = RenamingMap(pairs)
            except RenamingError as e:
                raise ScriptError(str(e), lineno)
        elif word == "box":
            box.update(_parse_box(shlex.split(rest), lineno))
        elif word == "budget":
            try:
                budget = int(rest)
            except ValueError:
                raise ScriptError(f"budget {rest!r} is not an integer", lineno)
            if budget < 1:
                raise ScriptError("budget must be >= 1", lineno)
        elif word == "goal":
            if root is not None:
                raise ScriptError("only one goal per script", lineno)
            if renaming is None:
                raise ScriptError("goal requires a prior rename directive",
                                  lineno)
            programs: Dict[str, Program] = {}
            if model is not None:
                programs["P"] = model.program
                if isinstance(model.program, Loop):
                    programs["B"] = model.program.body
            try:
                root = ProofNode(goal=parse_goal(rest, attack, renaming,
                                                 programs))
            except ParseError as e:
                raise ScriptError(str(e), lineno)
        elif word == "apply":
            if root is None:
                raise ScriptError("apply before goal", lineno)
            try:
                parts = shlex.split(rest)
            except ValueError as e:
                raise ScriptError(str(e), lineno)
            if not parts:
                raise ScriptError("apply needs a rule name", lineno)
            rule, kvs = parts[0], parts[1:]
            if rule not in RULES:
                raise ScriptError(f"unknown rule {rule!r}", lineno)
            programs = {}
            if model is not None:
                programs["P"] = model.program
                if isinstance(model.program, Loop):
                    programs["B"] = model.program.body
            args = _coerce_args(rule, kvs, attack, renaming, programs, lineno)
            if rule == "F-def":
                # refolding needs the ambient attack and renaming
                args.setdefault("attack", attack)
                args.setdefault("renaming", renaming)
            if rule == "oracle":
                args.setdefault("box", dict(box))
                args.setdefault("budget", budget)
            leaves = root.open_leaves()
            if not leaves:
                raise ScriptError("no open goals left", lineno)
            _, node = leaves[0]
            try:
                premises = apply_rule(node.goal, rule, args)
            except (RuleFailure, ParseError, CaptureError, RenamingError) as e:
                raise ScriptError(
                    f"apply {rule} to {node.goal.text()}: {e}", lineno)
            node.rule = rule
            node.args = args
            node.children = [ProofNode(goal=g) for g in premises]
        elif word == "qed":
            if root is None:
                raise ScriptError("qed before goal", lineno)
            leaves = root.open_leaves()
            if leaves:
                path, node = leaves[0]
                raise ScriptError(
                    f"qed with {len(leaves)} open goal(s); first: "
                    f"{node.goal.text()}", lineno)
            done = True
        else:
            raise ScriptError(f"unknown directive {word!r}", lineno)

    if root is None:
        raise ScriptError("script has no goal")
    if not done:
        raise ScriptError("script ended without qed")
    assert renaming is not None
    return ProofScript(root=root, model=model, model_path=model_path,
                       attack=attack, renaming=renaming, box=box,
                       budget=budget)


def load_proof(path: str) -> ProofScript:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return build_proof(text, base_dir=os.path.dirname(os.path.abspath(path)))
