"""The rule and query language."""

from .ast import (
    AGGREGATES,
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
    format_model,
    format_query,
)
from .binder import AggDef, BoundModel, BoundQuery, bind_model, bind_query
from .parser import parse_model, parse_query

__all__ = [
    "AGGREGATES",
    "AggDef",
    "AggRuleAst",
    "AttrAtom",
    "BoundModel",
    "BoundQuery",
    "CndAst",
    "Comparison",
    "Const",
    "ModelAst",
    "PredAtom",
    "QueryAst",
    "RuleAst",
    "Var",
    "bind_model",
    "bind_query",
    "format_model",
    "format_query",
    "parse_model",
    "parse_query",
]
