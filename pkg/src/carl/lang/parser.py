"""Lexer and recursive-descent parser for rule documents and queries.

Grammar (whitespace and newlines are insignificant; ``#`` starts a comment)::

    model     := { rule | agg_rule }
    rule      := attr_atom "<=" attr_atom {"," attr_atom} ["WHERE" cond]
    agg_rule  := AGG "_" IDENT "[" terms "]" "<=" attr_atom ["WHERE" cond]
    query     := attr_atom "<=" attr_atom "?" ["WHEN" cnd "PEERS" "TREATED"] ["WHERE" cond]
    cnd       := ("LESS"|"MORE") "THAN" (NUMBER "%" | NUMBER "/" NUMBER)
               | "AT" ("MOST"|"LEAST") NUMBER | "EXACTLY" NUMBER | "ALL" | "NONE"
    cond      := cond_atom {"," cond_atom}
    cond_atom := IDENT "(" terms ")" | attr_atom OP (STRING | NUMBER)

Keywords are matched case-insensitively by position, so they are not reserved
as identifiers.  Comparison atoms are accepted in query filters and aggregate
rule conditions only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from ..errors import CarlSyntaxError, ConditionError, LexError, ScopeError
from .ast import (
    BARE_KINDS,
    COMPARISON_OPS,
    AggRuleAst,
    AttrAtom,
    CndAst,
    Comparison,
    Const,
    ModelAst,
    PredAtom,
    QueryAst,
    RuleAst,
    Var,
    condition_variables,
    split_aggregate,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<STRING>"(?:[^"\\\n]|\\.)*")
  | (?P<NUMBER>-?(?:\d+(?:\.\d*)?|\.\d+))
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<OP><=|>=|!=|=|<|>)
  | (?P<PUNCT>[\[\](),?%/])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            if text[pos] == '"':
                raise LexError("unterminated string", line, col)
            raise LexError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            if kind == "PUNCT":
                kind = chunk
            tokens.append(Token(kind, chunk, line, col))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = m.start() + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # -- token helpers ---------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.toks[min(self.i + offset, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "EOF":
            self.i += 1
        return t

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "EOF" else repr(tok.text)
        return CarlSyntaxError(f"{msg}, found {found}", tok.line, tok.col)

    def expect(self, kind: str, what: str | None = None) -> Token:
        if self.tok.kind != kind:
            raise self.error(f"expected {what or kind!r}")
        return self.advance()

    def is_kw(self, word: str, offset: int = 0) -> bool:
        t = self.peek(offset) if offset else self.tok
        return t.kind == "IDENT" and t.text.upper() == word

    def expect_kw(self, word: str) -> Token:
        if not self.is_kw(word):
            raise self.error(f"expected {word}")
        return self.advance()

    # -- atoms -----------------------------------------------------------------

    def terms(self, close: str) -> tuple:
        args = []
        if self.tok.kind == close:
            raise self.error("expected at least one term")
        while True:
            t = self.tok
            if t.kind == "IDENT":
                args.append(Var(self.advance().text))
            elif t.kind == "STRING":
                args.append(Const(_unquote(self.advance().text)))
            else:
                raise self.error("expected variable or quoted constant")
            if self.tok.kind == ",":
                self.advance()
                continue
            self.expect(close)
            return tuple(args)

    def attr_atom(self) -> AttrAtom:
        name = self.expect("IDENT", "attribute name")
        self.expect("[")
        return AttrAtom(name.text, self.terms("]"), (name.line, name.col))

    def cond_atom(self, allow_cmp: bool):
        name = self.expect("IDENT", "predicate or attribute name")
        pos = (name.line, name.col)
        if self.tok.kind == "(":
            self.advance()
            return PredAtom(name.text, self.terms(")"), pos)
        if self.tok.kind != "[":
            raise self.error("expected '(' or '['")
        if not allow_cmp:
            raise CarlSyntaxError(
                "attribute comparisons are only allowed in query filters and aggregate rules",
                *pos,
            )
        self.advance()
        atom = AttrAtom(name.text, self.terms("]"), pos)
        op = self.expect("OP", "comparison operator").text
        assert op in COMPARISON_OPS
        if self.tok.kind == "STRING":
            value = _unquote(self.advance().text)
        elif self.tok.kind == "NUMBER":
            value = Fraction(self.advance().text)
        else:
            raise self.error("expected quoted constant or number")
        return Comparison(atom, op, value, pos)

    def condition(self, allow_cmp: bool) -> tuple:
        atoms = [self.cond_atom(allow_cmp)]
        while self.tok.kind == ",":
            self.advance()
            atoms.append(self.cond_atom(allow_cmp))
        return tuple(atoms)

    def arrow(self) -> None:
        if not (self.tok.kind == "OP" and self.tok.text == "<="):
            raise self.error("expected '<='")
        self.advance()

    # -- statements ------------------------------------------------------------

    def statement(self):
        start = self.tok
        head = self.attr_atom()
        self.arrow()
        agg = split_aggregate(head.attribute)
        body = [self.attr_atom()]
        if agg is None:
            while self.tok.kind == ",":
                self.advance()
                body.append(self.attr_atom())
        cond: tuple = ()
        if self.is_kw("WHERE"):
            self.advance()
            cond = self.condition(allow_cmp=agg is not None)
        pos = (start.line, start.col)
        if agg is not None:
            if self.tok.kind == ",":
                raise self.error("aggregate rules take exactly one source atom")
            if body[0].attribute != agg[1]:
                raise CarlSyntaxError(
                    f"aggregate {head.attribute} must aggregate {agg[1]}, not {body[0].attribute}",
                    *pos,
                )
            node = AggRuleAst(agg[0], head, body[0], cond, pos)
            _check_scope(head.variables + body[0].variables, cond, pos)
            return node
        _check_scope(head.variables + sum((b.variables for b in body), ()), cond, pos)
        return RuleAst(head, tuple(body), cond, pos)

    def model(self) -> ModelAst:
        rules, aggs = [], []
        while self.tok.kind != "EOF":
            node = self.statement()
            (aggs if isinstance(node, AggRuleAst) else rules).append(node)
        return ModelAst(tuple(rules), tuple(aggs))

    def cnd(self) -> CndAst:
        t = self.tok
        pos = (t.line, t.col)
        word = t.text.upper() if t.kind == "IDENT" else ""
        if word in BARE_KINDS:
            self.advance()
            return CndAst(word, None, pos)
        if word in ("LESS", "MORE"):
            self.advance()
            self.expect_kw("THAN")
            num = self.number()
            if self.tok.kind == "%":
                self.advance()
                pct = num
            elif self.tok.kind == "/":
                self.advance()
                den = self.number()
                if den <= 0:
                    raise ConditionError("fraction denominator must be positive", *pos)
                pct = num / den * 100
            else:
                raise self.error("expected '%' or '/' after threshold")
            if not 0 <= pct <= 100:
                raise ConditionError(f"percentage {float(pct)} outside [0, 100]", *pos)
            return CndAst(f"{word}_THAN_PCT", pct, pos)
        if word == "AT":
            self.advance()
            if self.is_kw("MOST") or self.is_kw("LEAST"):
                kind = "AT_" + self.advance().text.upper()
            else:
                raise self.error("expected MOST or LEAST")
        elif word == "EXACTLY":
            self.advance()
            kind = "EXACTLY"
        else:
            raise self.error("expected peer condition")
        k = self.number()
        if k < 0 or k.denominator != 1:
            raise ConditionError(f"peer count must be a nonnegative integer, got {k}", *pos)
        return CndAst(kind, k, pos)

    def number(self) -> Fraction:
        return Fraction(self.expect("NUMBER", "number").text)

    def query(self) -> QueryAst:
        start = self.tok
        response = self.attr_atom()
        self.arrow()
        treatment = self.attr_atom()
        self.expect("?")
        cnd = None
        if self.is_kw("WHEN"):
            self.advance()
            cnd = self.cnd()
            self.expect_kw("PEERS")
            self.expect_kw("TREATED")
        filt: tuple = ()
        if self.is_kw("WHERE"):
            self.advance()
            filt = self.condition(allow_cmp=True)
        if self.tok.kind != "EOF":
            raise self.error("expected end of query")
        return QueryAst(response, treatment, cnd, filt, (start.line, start.col))


def _check_scope(vars_used, cond, pos) -> None:
    scoped = set()
    for atom in cond:
        if isinstance(atom, PredAtom):
            scoped.update(atom.variables)
    for atom in cond:
        if isinstance(atom, Comparison):
            missing = [v for v in atom.variables if v not in scoped]
            if missing:
                raise ScopeError(f"comparison variable {missing[0]} not bound by a predicate atom", *atom.pos)
    missing = [v for v in dict.fromkeys(vars_used) if v not in scoped]
    if missing:
        raise ScopeError(f"variable {missing[0]} does not occur in the WHERE condition", *pos)


def parse_model(text: str) -> ModelAst:
    """Parse a rule document.

    Raises LexError, CarlSyntaxError or ScopeError with line/column positions.
    """
    return _Parser(text).model()


def parse_query(text: str) -> QueryAst:
    q = _Parser(text).query()
    # filter comparisons must be grounded by filter predicates or query atoms
    scoped = set(q.response.variables) | set(q.treatment.variables)
    for atom in q.where_filter:
        if isinstance(atom, PredAtom):
            scoped.update(atom.variables)
    for atom in q.where_filter:
        if isinstance(atom, Comparison):
            for v in atom.variables:
                if v not in scoped:
                    raise ScopeError(f"filter variable {v} is not bound", *atom.pos)
    return q


__all__ = ["parse_model", "parse_query", "tokenize", "Token", "condition_variables"]
