"""Syntax tree for rule documents and queries.

Source positions are stored with ``compare=False`` so that structurally equal
trees compare equal regardless of where they were parsed from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union

AGGREGATES = ("AVG", "SUM", "COUNT", "VAR", "MEDIAN")

Pos = Optional[tuple[int, int]]


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    value: str

    def __str__(self) -> str:
        escaped = self.value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'


Term = Union[Var, Const]


def _vars(args) -> tuple[str, ...]:
    return tuple(a.name for a in args if isinstance(a, Var))


@dataclass(frozen=True)
class AttrAtom:
    attribute: str
    args: tuple[Term, ...]
    pos: Pos = field(default=None, compare=False)

    @property
    def variables(self) -> tuple[str, ...]:
        return _vars(self.args)

    def __str__(self) -> str:
        return f"{self.attribute}[{', '.join(map(str, self.args))}]"


@dataclass(frozen=True)
class PredAtom:
    predicate: str
    args: tuple[Term, ...]
    pos: Pos = field(default=None, compare=False)

    @property
    def variables(self) -> tuple[str, ...]:
        return _vars(self.args)

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(map(str, self.args))})"


COMPARISON_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Comparison:
    """Filter atom ``A[X] op constant``; only admitted in query filters and aggregate rules."""

    atom: AttrAtom
    op: str
    value: Union[str, Fraction]
    pos: Pos = field(default=None, compare=False)

    @property
    def variables(self) -> tuple[str, ...]:
        return self.atom.variables

    def __str__(self) -> str:
        if isinstance(self.value, str):
            rhs = str(Const(self.value))
        else:
            rhs = _format_number(self.value)
        return f"{self.atom} {self.op} {rhs}"


CondAtom = Union[PredAtom, Comparison]


def condition_variables(cond) -> list[str]:
    out: list[str] = []
    for atom in cond:
        for v in atom.variables:
            if v not in out:
                out.append(v)
    return out


@dataclass(frozen=True)
class RuleAst:
    head: AttrAtom
    body: tuple[AttrAtom, ...]
    condition: tuple[PredAtom, ...]
    pos: Pos = field(default=None, compare=False)

    def __str__(self) -> str:
        text = f"{self.head} <= {', '.join(map(str, self.body))}"
        if self.condition:
            text += " WHERE " + ", ".join(map(str, self.condition))
        return text


@dataclass(frozen=True)
class AggRuleAst:
    agg: str
    target: AttrAtom
    source: AttrAtom
    condition: tuple[CondAtom, ...]
    pos: Pos = field(default=None, compare=False)

    @property
    def name(self) -> str:
        return self.target.attribute

    def __str__(self) -> str:
        text = f"{self.target} <= {self.source}"
        if self.condition:
            text += " WHERE " + ", ".join(map(str, self.condition))
        return text


PCT_KINDS = ("LESS_THAN_PCT", "MORE_THAN_PCT")
COUNT_KINDS = ("AT_MOST", "AT_LEAST", "EXACTLY")
BARE_KINDS = ("ALL", "NONE")


@dataclass(frozen=True)
class CndAst:
    kind: str
    k: Optional[Fraction] = None
    pos: Pos = field(default=None, compare=False)

    @property
    def fraction(self) -> Optional[Fraction]:
        """Threshold as a fraction of peers, for percent kinds."""
        return None if self.k is None or self.kind not in PCT_KINDS else self.k / 100

    def __str__(self) -> str:
        if self.kind in BARE_KINDS:
            return self.kind
        words = self.kind.removesuffix("_PCT").replace("_", " ")
        if self.kind in PCT_KINDS:
            frac = self.k / 100
            num = _format_number(self.k)
            if "/" not in num:
                return f"{words} {num}%"
            return f"{words} {frac.numerator}/{frac.denominator}"
        return f"{words} {self.k}"


@dataclass(frozen=True)
class QueryAst:
    response: AttrAtom
    treatment: AttrAtom
    peer_condition: Optional[CndAst] = None
    where_filter: tuple[CondAtom, ...] = ()
    pos: Pos = field(default=None, compare=False)

    def __str__(self) -> str:
        text = f"{self.response} <= {self.treatment} ?"
        if self.peer_condition is not None:
            text += f" WHEN {self.peer_condition} PEERS TREATED"
        if self.where_filter:
            text += " WHERE " + ", ".join(map(str, self.where_filter))
        return text


@dataclass(frozen=True)
class ModelAst:
    rules: tuple[RuleAst, ...] = ()
    agg_rules: tuple[AggRuleAst, ...] = ()


def split_aggregate(name: str) -> Optional[tuple[str, str]]:
    """``"AVG_Score"`` -> ``("AVG", "Score")``; None for plain names."""
    prefix, sep, rest = name.partition("_")
    if sep and prefix in AGGREGATES and rest:
        return prefix, rest
    return None


def _format_number(x: Fraction) -> str:
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    # exact decimal when the denominator only has factors 2 and 5
    d = x.denominator
    digits = 0
    while d % 10 == 0 or d % 2 == 0 or d % 5 == 0:
        if d % 10 == 0:
            d //= 10
        elif d % 2 == 0:
            d //= 2
        else:
            d //= 5
        digits += 1
    if d != 1:
        return f"{x.numerator}/{x.denominator}"
    scaled = x * 10**digits
    sign = "-" if scaled < 0 else ""
    s = str(abs(scaled.numerator)).rjust(digits + 1, "0")
    return f"{sign}{s[:-digits]}.{s[-digits:]}".rstrip("0").rstrip(".")


def format_model(model: ModelAst) -> str:
    lines = [str(r) for r in model.rules] + [str(a) for a in model.agg_rules]
    return "\n".join(lines) + ("\n" if lines else "")


def format_query(query: QueryAst) -> str:
    return str(query)
