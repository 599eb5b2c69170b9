"""Name resolution, arity/type checks and recursion detection."""

from __future__ import annotations

import graphlib
from dataclasses import dataclass, field, replace
from typing import Optional

from ..errors import ArityError, BindError, RecursiveModelError, TreatmentDomainError, UnknownName
from ..schema import BINARY, CATEGORICAL, SchemaDef
from .ast import AggRuleAst, AttrAtom, Comparison, ModelAst, PredAtom, QueryAst, Var, split_aggregate


@dataclass(frozen=True)
class AggDef:
    name: str
    agg: str
    source: str
    over: str
    rule: Optional[AggRuleAst] = None


@dataclass(frozen=True)
class BoundModel:
    ast: ModelAst
    schema: SchemaDef
    aggregates: dict = field(default_factory=dict)
    dependencies: dict = field(default_factory=dict)
    order: tuple = ()

    def predicate_of(self, attribute: str) -> str:
        if attribute in self.aggregates:
            return self.aggregates[attribute].over
        return self.schema.attribute(attribute).over

    def roles_of(self, attribute: str) -> tuple[str, ...]:
        return self.schema.predicate(self.predicate_of(attribute)).roles

    def with_agg_rule(self, rule: AggRuleAst) -> "BoundModel":
        """Rebind with one extra aggregate rule (used by query unification)."""
        ast = replace(self.ast, agg_rules=self.ast.agg_rules + (rule,))
        return bind_model(ast, self.schema)


@dataclass(frozen=True)
class BoundQuery:
    ast: QueryAst
    response: str
    response_pred: str
    treatment: str
    treatment_pred: str
    agg: Optional[str] = None  # set when the response is AGG_-prefixed
    response_base: Optional[str] = None
    defined_in_model: bool = False
    var_types: dict = field(default_factory=dict)

    @property
    def condition(self):
        return self.ast.peer_condition

    @property
    def where_filter(self):
        return self.ast.where_filter


def _assign(types: dict, var: str, entity: str, where) -> None:
    prev = types.get(var)
    if prev is not None and prev != entity:
        raise BindError(f"variable {var} used as both {prev} and {entity} in {where}")
    types[var] = entity


def _type_pred_atoms(schema: SchemaDef, cond, types: dict, where) -> None:
    preds = schema.predicate_map
    for atom in cond:
        if not isinstance(atom, PredAtom):
            continue
        decl = preds.get(atom.predicate)
        if decl is None:
            raise UnknownName(f"unknown predicate {atom.predicate!r} in {where}")
        if len(atom.args) != decl.arity:
            raise ArityError(f"{atom.predicate} expects {decl.arity} arguments in {where}")
        for term, role in zip(atom.args, decl.roles):
            if isinstance(term, Var):
                _assign(types, term.name, role, where)


def _check_attr_atom(atom: AttrAtom, roles: tuple, types: dict, where) -> None:
    if len(atom.args) != len(roles):
        raise ArityError(f"{atom.attribute} expects {len(roles)} arguments in {where}")
    for term, role in zip(atom.args, roles):
        if isinstance(term, Var):
            _assign(types, term.name, role, where)


def _agg_predicate(schema: SchemaDef, roles: tuple, where) -> str:
    if len(roles) == 1:
        return roles[0]
    matches = [p.name for p in schema.relationships if p.roles == roles]
    if len(matches) != 1:
        raise BindError(f"no unique relationship with roles {roles} for aggregate head in {where}")
    return matches[0]


def bind_model(ast: ModelAst, schema: SchemaDef) -> BoundModel:
    """Resolve names against *schema* and reject recursive models."""
    attrs = schema.attribute_map
    aggregates: dict[str, AggDef] = {}
    deps: dict[str, set] = {a: set() for a in attrs}

    for rule in ast.agg_rules:
        where = str(rule)
        if rule.name in attrs or rule.name in aggregates:
            raise BindError(f"aggregate {rule.name} is declared twice")
        src = attrs.get(rule.source.attribute)
        if src is None:
            raise UnknownName(f"unknown attribute {rule.source.attribute!r} in {where}")
        if src.value_domain == CATEGORICAL and rule.agg != "COUNT":
            raise BindError(f"cannot apply {rule.agg} to categorical {src.name}")
        types: dict = {}
        _type_pred_atoms(schema, rule.condition, types, where)
        _check_attr_atom(rule.source, schema.predicate(src.over).roles, types, where)
        for atom in rule.condition:
            if isinstance(atom, Comparison):
                decl = attrs.get(atom.atom.attribute)
                if decl is None:
                    raise UnknownName(f"unknown attribute {atom.atom.attribute!r} in {where}")
                _check_attr_atom(atom.atom, schema.predicate(decl.over).roles, types, where)
        head_roles = tuple(types[t.name] if isinstance(t, Var) else None for t in rule.target.args)
        if None in head_roles:
            raise BindError(f"aggregate head arguments must be variables in {where}")
        over = _agg_predicate(schema, head_roles, where)
        aggregates[rule.name] = AggDef(rule.name, rule.agg, src.name, over, rule)
        deps[rule.name] = {src.name}

    def roles_for(name: str, where) -> tuple:
        if name in aggregates:
            return schema.predicate(aggregates[name].over).roles
        if name not in attrs:
            raise UnknownName(f"unknown attribute {name!r} in {where}")
        return schema.predicate(attrs[name].over).roles

    for rule in ast.rules:
        where = str(rule)
        if rule.head.attribute in aggregates:
            raise BindError(f"aggregate attribute {rule.head.attribute} cannot head a causal rule")
        types = {}
        _type_pred_atoms(schema, rule.condition, types, where)
        _check_attr_atom(rule.head, roles_for(rule.head.attribute, where), types, where)
        for atom in rule.body:
            _check_attr_atom(atom, roles_for(atom.attribute, where), types, where)
            deps[rule.head.attribute].add(atom.attribute)

    sorter = graphlib.TopologicalSorter({k: sorted(v) for k, v in deps.items()})
    try:
        order = tuple(sorter.static_order())
    except graphlib.CycleError as exc:
        cycle = " -> ".join(exc.args[1])
        raise RecursiveModelError(f"causal model is recursive: {cycle}") from None
    return BoundModel(ast, schema, aggregates, {k: frozenset(v) for k, v in deps.items()}, order)


def bind_query(ast: QueryAst, model: BoundModel) -> BoundQuery:
    """Resolve a query against a bound model.

    An AGG_-prefixed response not defined by the model is accepted if its base
    attribute exists; unification later synthesizes its rule.
    """
    schema = model.schema
    attrs = schema.attribute_map
    where = str(ast)

    t = attrs.get(ast.treatment.attribute)
    if t is None:
        raise UnknownName(f"unknown treatment attribute {ast.treatment.attribute!r}")
    if not t.observed:
        raise BindError(f"treatment {t.name} is unobserved")
    if t.value_domain != BINARY:
        raise TreatmentDomainError(f"treatment {t.name} must be binary, not {t.value_domain}")
    types: dict = {}
    _check_attr_atom(ast.treatment, schema.predicate(t.over).roles, types, where)

    name = ast.response.attribute
    agg = base = None
    defined = False
    if name in model.aggregates:
        d = model.aggregates[name]
        agg, base, resp_pred, defined = d.agg, d.source, d.over, True
    elif name in attrs:
        resp_pred = attrs[name].over
        base = name
    elif (split := split_aggregate(name)) is not None and split[1] in attrs:
        agg, base = split
        resp_pred = t.over
    else:
        raise UnknownName(f"unknown response attribute {name!r}")
    b = attrs[base]
    if not b.observed:
        raise BindError(f"response attribute {base} is unobserved")
    if b.value_domain == CATEGORICAL and agg != "COUNT":
        raise BindError(f"response attribute {base} is categorical")
    _check_attr_atom(ast.response, schema.predicate(resp_pred).roles, types, where)

    _type_pred_atoms(schema, ast.where_filter, types, where)
    for atom in ast.where_filter:
        if isinstance(atom, Comparison):
            decl = attrs.get(atom.atom.attribute)
            if decl is None:
                raise UnknownName(f"unknown attribute {atom.atom.attribute!r} in filter")
            if not decl.observed:
                raise BindError(f"filter attribute {decl.name} is unobserved")
            _check_attr_atom(atom.atom, schema.predicate(decl.over).roles, types, where)
    return BoundQuery(ast, name, resp_pred, t.name, t.over, agg, base, defined, types)
