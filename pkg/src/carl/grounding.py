"""Conjunctive-query evaluation and construction of the grounded causal graph."""

from __future__ import annotations

import heapq
import json
import operator
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Optional

from .errors import CycleError
from .lang.ast import Comparison, Const, PredAtom, Var
from .lang.binder import BoundModel
from .schema import InstanceBundle

BASE = "base"
AGGREGATE = "aggregate"
EMBEDDING = "embedding"


class GroundAttr(NamedTuple):
    attribute: str
    args: tuple

    def __str__(self) -> str:
        return f"{self.attribute}[{', '.join(json.dumps(a) for a in self.args)}]"


@dataclass(frozen=True)
class GroundedRule:
    head: GroundAttr
    body: frozenset
    kind: str = BASE
    agg: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.head} <= {', '.join(str(b) for b in sorted(self.body))}"


# -- condition evaluation --------------------------------------------------------

_OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def _compare(value: Any, op: str, rhs: Any) -> bool:
    if isinstance(rhs, str) != isinstance(value, str):
        # categorical against number (or vice versa): only != can hold
        return op == "!="
    return _OPS[op](value, rhs)


def _comparison_ok(bundle: InstanceBundle, cmp: Comparison, binding: dict) -> bool:
    key = tuple(binding[t.name] if isinstance(t, Var) else t.value for t in cmp.atom.args)
    col = bundle.attribute_values.get(cmp.atom.attribute, {})
    if key not in col:
        return False
    return _compare(col[key], cmp.op, cmp.value)


def eval_condition(bundle: InstanceBundle, cond, free_vars) -> set[tuple]:
    """Return the bindings of *free_vars* that extend to a satisfying assignment.

    Predicate atoms are joined left-deep with hash indexes on the already-bound
    columns; comparisons are applied as soon as their variables are bound.
    Variables outside *free_vars* are projected out with set semantics.
    """
    free_vars = list(free_vars)
    preds = [a for a in cond if isinstance(a, PredAtom)]
    cmps = [a for a in cond if isinstance(a, Comparison)]
    bindings: list[dict] = [{}]
    bound: set[str] = set()
    remaining = list(preds)
    pending = list(cmps)
    while remaining:
        def rank(atom):
            connected = any(v in bound for v in atom.variables) or not atom.variables
            return (not connected if bound else False, len(bundle.tuples(atom.predicate)))

        atom = min(remaining, key=rank)
        remaining.remove(atom)
        bindings = _join(bindings, atom, bundle.tuples(atom.predicate), bound)
        bound.update(atom.variables)
        still = []
        for c in pending:
            if all(v in bound for v in c.variables):
                bindings = [b for b in bindings if _comparison_ok(bundle, c, b)]
            else:
                still.append(c)
        pending = still
        if not bindings:
            return set()
    for c in pending:
        bindings = [b for b in bindings if _comparison_ok(bundle, c, b)]
    missing = [v for v in free_vars if v not in bound]
    if missing:
        raise ValueError(f"free variables {missing} are not bound by the condition")
    return {tuple(b[v] for v in free_vars) for b in bindings}


def _join(bindings: list[dict], atom: PredAtom, rel: frozenset, bound: set) -> list[dict]:
    key_pos = []  # (position, var name or constant)
    new_pos = []
    seen_new: dict[str, int] = {}
    checks = []  # repeated new variable within the atom
    for i, term in enumerate(atom.args):
        if isinstance(term, Const):
            key_pos.append((i, None, term.value))
        elif term.name in bound:
            key_pos.append((i, term.name, None))
        elif term.name in seen_new:
            checks.append((seen_new[term.name], i))
        else:
            seen_new[term.name] = i
            new_pos.append((i, term.name))
    index: dict[tuple, list] = defaultdict(list)
    for tup in rel:
        if any(tup[a] != tup[b] for a, b in checks):
            continue
        index[tuple(tup[i] for i, _, _ in key_pos)].append(tup)
    out = []
    for b in bindings:
        key = tuple(b[v] if v is not None else c for _, v, c in key_pos)
        for tup in index.get(key, ()):
            nb = dict(b)
            for i, v in new_pos:
                nb[v] = tup[i]
            out.append(nb)
    return out


# -- grounding -------------------------------------------------------------------


def _ground_atom(atom, binding: dict) -> GroundAttr:
    return GroundAttr(atom.attribute, tuple(binding[t.name] if isinstance(t, Var) else t.value for t in atom.args))


def ground_rules(model: BoundModel, bundle: InstanceBundle) -> list[GroundedRule]:
    """One grounded rule per rule and satisfying binding, plus one per aggregate head."""
    out: list[GroundedRule] = []

    skeletons: dict = {}

    def in_skeleton(g: GroundAttr) -> bool:
        sk = skeletons.get(g.attribute)
        if sk is None:
            sk = skeletons[g.attribute] = bundle.tuples(model.predicate_of(g.attribute))
        return g.args in sk

    for rule in model.ast.rules:
        atoms = (rule.head,) + rule.body
        free = list(dict.fromkeys(v for a in atoms for v in a.variables))
        for values in sorted(eval_condition(bundle, rule.condition, free)):
            b = dict(zip(free, values))
            head = _ground_atom(rule.head, b)
            if not in_skeleton(head):
                continue
            body = frozenset(g for g in (_ground_atom(a, b) for a in rule.body) if in_skeleton(g))
            body -= {head}
            if body:
                out.append(GroundedRule(head, body))
    for rule in model.ast.agg_rules:
        free = list(dict.fromkeys(rule.target.variables + rule.source.variables))
        groups: dict[GroundAttr, set] = defaultdict(set)
        for values in eval_condition(bundle, rule.condition, free):
            b = dict(zip(free, values))
            src = _ground_atom(rule.source, b)
            if in_skeleton(src):
                groups[_ground_atom(rule.target, b)].add(src)
        for head in sorted(groups):
            out.append(GroundedRule(head, frozenset(groups[head]), AGGREGATE, rule.agg))
    return out


# -- the causal graph ------------------------------------------------------------


@dataclass
class CausalGraph:
    nodes: tuple = ()
    parents: dict = field(default_factory=dict)
    node_kind: dict = field(default_factory=dict)
    aggregators: dict = field(default_factory=dict)  # aggregate attribute -> AGG name
    unobserved: frozenset = frozenset()
    order: tuple = ()

    def __post_init__(self):
        kids: dict = {n: [] for n in self.nodes}
        for child, ps in self.parents.items():
            for p in ps:
                kids[p].append(child)
        self.children = {n: tuple(sorted(c)) for n, c in kids.items()}
        self.index = {n: i for i, n in enumerate(self.nodes)}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node) -> bool:
        return node in self.index

    def is_observed(self, node: GroundAttr) -> bool:
        kind = self.node_kind.get(node, BASE)
        return kind != AGGREGATE and node.attribute not in self.unobserved

    def nodes_of(self, attribute: str) -> list:
        return [n for n in self.nodes if n.attribute == attribute]

    def descendants(self, start: Iterable) -> set:
        stack = list(start)
        seen = set(stack)
        while stack:
            for c in self.children.get(stack.pop(), ()):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def ancestors(self, start: Iterable) -> set:
        stack = list(start)
        seen = set(stack)
        while stack:
            for p in self.parents.get(stack.pop(), ()):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def to_json(self) -> dict:
        return {
            "nodes": [
                {"attr": n.attribute, "args": list(n.args), "kind": self.node_kind[n]} for n in self.nodes
            ],
            "edges": [
                {"child": str(c), "parent": str(p)} for c in self.nodes for p in self.parents.get(c, ())
            ],
        }


def _topological(nodes, parents) -> tuple:
    indeg = {n: len(parents.get(n, ())) for n in nodes}
    kids: dict = defaultdict(list)
    for c, ps in parents.items():
        for p in ps:
            kids[p].append(c)
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for c in kids[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != len(nodes):
        stuck = sorted(n for n, d in indeg.items() if d > 0)
        raise CycleError(f"grounded graph has a cycle through {stuck[0]}")
    return tuple(order)


def build_graph(grounded: Iterable[GroundedRule], unobserved: Iterable[str] = ()) -> CausalGraph:
    """Merge groundings by head into a DAG with canonical node order."""
    parents: dict = defaultdict(set)
    kinds: dict = {}
    aggs: dict = {}
    for g in grounded:
        parents[g.head] |= g.body
        if g.kind == AGGREGATE:
            kinds[g.head] = AGGREGATE
            aggs[g.head.attribute] = g.agg
    nodes = set(parents)
    for ps in parents.values():
        nodes |= ps
    for n in nodes:
        kinds.setdefault(n, BASE)
    ordered = tuple(sorted(nodes))
    pmap = {n: tuple(sorted(parents[n])) for n in ordered if parents.get(n)}
    order = _topological(ordered, pmap)
    return CausalGraph(ordered, pmap, kinds, aggs, frozenset(unobserved), order)


# -- values ----------------------------------------------------------------------


def aggregate(agg: str, values: list) -> float:
    if agg == "COUNT":
        return float(len(values))
    if not values:
        raise ValueError(f"{agg} of an empty set")
    if agg == "AVG":
        return statistics.fmean(values)
    if agg == "SUM":
        return float(sum(values))
    if agg == "VAR":
        return float(statistics.pvariance(values))
    if agg == "MEDIAN":
        return float(statistics.median(values))
    raise ValueError(f"unknown aggregate {agg}")


def node_value(graph: CausalGraph, bundle: InstanceBundle, node: GroundAttr) -> Any:
    """Observed value of *node*; aggregate nodes are computed from their parents."""
    if graph.node_kind.get(node) == AGGREGATE:
        vals = [node_value(graph, bundle, p) for p in graph.parents.get(node, ())]
        return aggregate(graph.aggregators[node.attribute], vals)
    return bundle.attribute_values[node.attribute][node.args]
