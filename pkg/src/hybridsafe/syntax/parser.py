"""Recursive-descent parser for the hybrid-program surface syntax.

The grammar is documented in docs/grammar.md. Highlights:

  programs   x := e | x := * | ?phi | {x'=e, y'=e & Q} | {alpha}* | {alpha}
             alpha; beta | alpha ++ beta
  formulas   true | false | t1 op t2 | !phi | phi & psi | phi | psi |
             phi -> psi | phi <-> psi | forall x. phi | exists x. phi |
             [alpha]phi | <alpha>phi | sp(alpha, phi)
  terms      + - * / unary- ^ sqrt(...) idents and exact decimal literals

Errors carry line, column, and the set of expected tokens. One bounded
backtrack point exists: a parenthesized formula atom is first attempted as
a comparison between terms, then as a formula.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import List, Optional, Set, Tuple

from .nodes import (
    And, Assign, AssignAny, Box, Choice, Cmp, Const, Diamond, Div, Equiv,
    Exists, FalseF, Forall, Formula, Imply, Loop, Minus, Neg, Not, ODE, Or,
    Plus, Pow, Program, Seq, SP, Sqrt, Term, Test, Times, TrueF, Var,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int,
                 expected: Optional[Set[str]] = None):
        self.line = line
        self.column = column
        self.expected = frozenset(expected or ())
        loc = f"line {line}, column {column}"
        if self.expected:
            exp = ", ".join(sorted(self.expected))
            message = f"{message} at {loc} (expected one of: {exp})"
        else:
            message = f"{message} at {loc}"
        super().__init__(message)


_TOKEN_RE = re.compile(r"""
      (?P<ws>\s+|\#[^\n]*)
    | (?P<num>\d+(?:\.\d+)?)
    | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<op>:=|\+\+|->|<->|<=|>=|[(){}\[\]<>=&|!?;:,.*/+\-^'])
""", re.VERBOSE)

KEYWORDS = {"true", "false", "forall", "exists", "sp", "sqrt"}


class Token:
    __slots__ = ("kind", "text", "line", "column")

    def __init__(self, kind: str, text: str, line: int, column: int):
        self.kind = kind
        self.text = text
        self.line = line
        self.column = column

    def __repr__(self):
        return f"Token({self.kind}, {self.text!r}, {self.line}:{self.column})"


def tokenize(src: str) -> List[Token]:
    out: List[Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if not m:
            raise ParseError(f"unexpected character {src[pos]!r}", line, col)
        text = m.group(0)
        if m.lastgroup == "ws":
            for ch in text:
                if ch == "\n":
                    line += 1
                    col = 1
                else:
                    col += 1
        else:
            kind = m.lastgroup
            if kind == "name" and text in KEYWORDS:
                kind = "kw"
            out.append(Token(kind, text, line, col))
            col += len(text)
        pos = m.end()
    out.append(Token("eof", "", line, col))
    return out


class _Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0

    # -- token plumbing ----------------------------------------------------

    def peek(self, k: int = 0) -> Token:
        j = min(self.i + k, len(self.toks) - 1)
        return self.toks[j]

    def next(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.peek().text == text and self.peek().kind in ("op", "kw")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str, context: str = ""):
        if not self.accept(text):
            t = self.peek()
            what = f"unexpected {t.text!r}" if t.kind != "eof" else "unexpected end of input"
            if context:
                what += f" in {context}"
            raise ParseError(what, t.line, t.column, {text})

    def fail(self, expected: Set[str], context: str = ""):
        t = self.peek()
        what = f"unexpected {t.text!r}" if t.kind != "eof" else "unexpected end of input"
        if context:
            what += f" in {context}"
        raise ParseError(what, t.line, t.column, expected)

    # -- terms -------------------------------------------------------------

    def term(self) -> Term:
        t = self.term_factor()
        while True:
            if self.accept("+"):
                t = Plus(t, self.term_factor())
            elif self.accept("-"):
                t = Minus(t, self.term_factor())
            else:
                return t

    def term_factor(self) -> Term:
        t = self.term_unary()
        while True:
            if self.accept("*"):
                t = Times(t, self.term_unary())
            elif self.accept("/"):
                t = Div(t, self.term_unary())
            else:
                return t

    def term_unary(self) -> Term:
        if self.accept("-"):
            return Neg(self.term_unary())
        return self.term_power()

    def term_power(self) -> Term:
        base = self.term_atom()
        if self.accept("^"):
            t = self.peek()
            if t.kind != "num" or "." in t.text:
                self.fail({"natural number"}, "exponent")
            self.next()
            return Pow(base, int(t.text))
        return base

    def term_atom(self) -> Term:
        t = self.peek()
        if t.kind == "num":
            self.next()
            return Const(Fraction(t.text))
        if t.kind == "kw" and t.text == "sqrt":
            self.next()
            self.expect("(", "sqrt")
            inner = self.term()
            self.expect(")", "sqrt")
            return Sqrt(inner)
        if t.kind == "name":
            self.next()
            return Var(t.text)
        if self.accept("("):
            inner = self.term()
            self.expect(")", "term")
            return inner
        self.fail({"number", "variable", "sqrt", "("}, "term")

    # -- formulas ----------------------------------------------------------

    def formula(self) -> Formula:
        return self.formula_equiv()

    def formula_equiv(self) -> Formula:
        left = self.formula_imply()
        if self.accept("<->"):
            return Equiv(left, self.formula_equiv())
        return left

    def formula_imply(self) -> Formula:
        left = self.formula_or()
        if self.accept("->"):
            return Imply(left, self.formula_imply())
        return left

    def formula_or(self) -> Formula:
        left = self.formula_and()
        if self.accept("|"):
            return Or(left, self.formula_or())
        return left

    def formula_and(self) -> Formula:
        left = self.formula_unary()
        if self.accept("&"):
            return And(left, self.formula_and())
        return left

    def formula_unary(self) -> Formula:
        t = self.peek()
        if self.accept("!"):
            return Not(self.formula_unary())
        if t.kind == "kw" and t.text in ("forall", "exists"):
            self.next()
            v = self.peek()
            if v.kind != "name":
                self.fail({"variable"}, t.text)
            self.next()
            self.expect(".", t.text)
            body = self.formula()
            return Forall(v.text, body) if t.text == "forall" else Exists(v.text, body)
        if self.accept("["):
            prog = self.program()
            self.expect("]", "box modality")
            return Box(prog, self.formula_unary())
        if self.at("<"):
            # comparisons never *start* with "<", so this must be a diamond
            self.next()
            prog = self.program()
            self.expect(">", "diamond modality")
            return Diamond(prog, self.formula_unary())
        return self.formula_atom()

    def formula_atom(self) -> Formula:
        t = self.peek()
        if t.kind == "kw" and t.text == "true":
            self.next()
            return TrueF()
        if t.kind == "kw" and t.text == "false":
            self.next()
            return FalseF()
        if t.kind == "kw" and t.text == "sp":
            self.next()
            self.expect("(", "sp")
            prog = self.program()
            self.expect(",", "sp")
            body = self.formula()
            self.expect(")", "sp")
            return SP(prog, body)
        if self.at("("):
            # backtrack point: "(" may open a term (comparison) or a formula
            mark = self.i
            try:
                return self.comparison()
            except ParseError:
                self.i = mark
            self.expect("(")
            inner = self.formula()
            self.expect(")", "formula")
            return inner
        # otherwise it must be a comparison
        return self.comparison()

    def comparison(self) -> Formula:
        left = self.term()
        t = self.peek()
        if t.text in ("=", "<=", "<", ">=", ">") and t.kind == "op":
            self.next()
            right = self.term()
            return Cmp(t.text, left, right)
        self.fail({"=", "<=", "<", ">=", ">"}, "comparison")

    # -- programs ----------------------------------------------------------

    def program(self) -> Program:
        left = self.program_seq()
        if self.accept("++"):
            return Choice(left, self.program())
        return left

    def program_seq(self) -> Program:
        left = self.program_atom()
        if self.accept(";"):
            return Seq(left, self.program_seq())
        return left

    def program_atom(self) -> Program:
        t = self.peek()
        if self.accept("?"):
            return Test(self.formula())
        if t.kind == "name" and self.peek(1).text == ":=":
            self.next()
            self.next()
            if self.accept("*"):
                return AssignAny(t.text)
            return Assign(t.text, self.term())
        if self.at("{"):
            return self.braced_program()
        if self.accept("("):
            inner = self.program()
            self.expect(")", "program")
            return inner
        self.fail({"assignment", "?", "{", "("}, "program")

    def braced_program(self) -> Program:
        self.expect("{")
        # lookahead: ident followed by ' opens an ODE system
        if self.peek().kind == "name" and self.peek(1).text == "'":
            prog = self.ode_tail()
            self.expect("}", "differential equation")
            return prog
        inner = self.program()
        self.expect("}", "program group")
        if self.accept("*"):
            return Loop(inner)
        return inner

    def ode_tail(self) -> Program:
        eqs: List[Tuple[str, Term]] = []
        seen = set()
        while True:
            v = self.peek()
            if v.kind != "name":
                self.fail({"variable"}, "differential equation")
            if v.text in seen:
                raise ParseError(
                    f"duplicate differential-equation variable {v.text!r}",
                    v.line, v.column)
            seen.add(v.text)
            self.next()
            self.expect("'", "differential equation")
            self.expect("=", "differential equation")
            eqs.append((v.text, self.term()))
            if self.accept(","):
                continue
            break
        if self.accept("&"):
            domain = self.formula()
        else:
            domain = TrueF()
        return ODE(tuple(eqs), domain)


def _finish(p: _Parser, node, what: str):
    tok = p.peek()
    if tok.kind != "eof":
        raise ParseError(f"trailing input after {what}: {tok.text!r}",
                         tok.line, tok.column)
    return node


def parse_program(src: str) -> Program:
    p = _Parser(src)
    return _finish(p, p.program(), "program")


def parse_formula(src: str) -> Formula:
    p = _Parser(src)
    return _finish(p, p.formula(), "formula")


def parse_term(src: str) -> Term:
    p = _Parser(src)
    return _finish(p, p.term(), "term")


_SECTION_RE = re.compile(r"^(pre|post|program)\s*:\s*(.*)$")


class ModelFile:
    """A parsed .hp model file: pre/post formulas and the program."""

    def __init__(self, pre: Formula, post: Formula, program: Program):
        self.pre = pre
        self.post = post
        self.program = program


def parse_model(text: str) -> ModelFile:
    """Parse a .hp model: sections pre:, post:, program: at column 0,
    ``#`` line comments, UTF-8 text."""
    sections = {}
    current = None
    buf: List[str] = []
    lines = text.splitlines()
    for raw in lines:
        stripped = "" if raw.lstrip().startswith("#") else raw.split("#", 1)[0]
        m = _SECTION_RE.match(stripped)
        if m and raw[:1] not in (" ", "\t"):
            if current is not None:
                sections[current] = "\n".join(buf)
            current = m.group(1)
            buf = [m.group(2)]
        else:
            buf.append(stripped)
    if current is not None:
        sections[current] = "\n".join(buf)
    missing = {"pre", "post", "program"} - set(sections)
    if missing:
        raise ParseError(
            f"model file is missing sections: {', '.join(sorted(missing))}", 1, 1)
    return ModelFile(
        pre=parse_formula(sections["pre"]),
        post=parse_formula(sections["post"]),
        program=parse_program(sections["program"]),
    )


def load_model(path) -> ModelFile:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())
