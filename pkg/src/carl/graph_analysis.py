"""Relational paths, peers, d-separation and covariate detection."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import UnidentifiableError
from .grounding import CausalGraph, GroundAttr
from .lang.ast import AttrAtom
from .schema import ENTITY, SchemaDef

# -- relational paths ------------------------------------------------------------


@dataclass(frozen=True, order=True)
class RelationalPath:
    """Alternating walk over entity and relationship predicates.

    ``hops`` holds, for every relationship on the walk, the role index it is
    entered through and left through (None at a relationship endpoint).
    """

    length: int
    relationships: tuple
    elements: tuple
    hops: tuple = field(default=())

    @property
    def start(self) -> str:
        return self.elements[0]

    @property
    def end(self) -> str:
        return self.elements[-1]

    def __str__(self) -> str:
        return " - ".join(self.elements)


def _predicate_of(schema: SchemaDef, x) -> str:
    name = x.attribute if isinstance(x, AttrAtom) else x
    attrs = schema.attribute_map
    if name in attrs:
        return attrs[name].over
    return schema.predicate(name).name


def find_relational_paths(schema: SchemaDef, treatment, response, max_len: int = 4) -> list[RelationalPath]:
    """All walks from the treatment's predicate to the response's predicate.

    A walk never reuses a (relationship, role) edge.  Length counts
    relationship hops, so ``Person - Author - Submission`` has length 1.
    Results are ordered shortest first, then by relationship names.
    """
    start = _predicate_of(schema, treatment)
    end = _predicate_of(schema, response)
    preds = schema.predicate_map
    by_entity: dict[str, list] = defaultdict(list)
    for rel in schema.relationships:
        for i, role in enumerate(rel.roles):
            by_entity[role].append((rel.name, i))
    max_edges = 2 * max_len
    found: set[RelationalPath] = set()

    def record(elements, hops):
        edges = len(elements) - 1
        rels = tuple(h[0] for h in hops)
        found.add(RelationalPath((edges + 1) // 2, rels, tuple(elements), tuple(hops)))

    def walk(elements, hops, used, entry):
        node = elements[-1]
        edges = len(elements) - 1
        if preds[node].kind == ENTITY:
            if node == end and (edges > 0 or start == end):
                record(elements, hops)
            if edges >= max_edges:
                return
            for rel, i in by_entity[node]:
                if (rel, i) in used:
                    continue
                if edges + 1 == max_edges and rel != end:
                    continue
                walk(elements + [rel], hops, used | {(rel, i)}, i)
            return
        # at a relationship, entered through role `entry` (None at the start)
        if node == end and edges > 0:
            record(elements, hops + [(node, entry, None)])
        if edges >= max_edges:
            return
        for j, role in enumerate(preds[node].roles):
            if j == entry or (node, j) in used:
                continue
            walk(elements + [role], hops + [(node, entry, j)], used | {(node, j)}, None)

    if start == end and preds[start].kind != ENTITY:
        record([start], [])
    walk([start], [], frozenset(), None)
    return sorted(found)


# -- peers -----------------------------------------------------------------------


def compute_peers(graph: CausalGraph, treatment: str, response: str) -> dict[tuple, tuple]:
    """Map each response unit to the other units whose treatment reaches its response."""
    peers: dict[tuple, set] = {n.args: set() for n in graph.nodes_of(response)}
    for t in graph.nodes_of(treatment):
        for d in graph.descendants([t]):
            if d.attribute == response and d.args != t.args:
                peers[d.args].add(t.args)
    return {u: tuple(sorted(p)) for u, p in peers.items()}


# -- d-separation ----------------------------------------------------------------


def _reaches(graph: CausalGraph, sources, targets, zs, anc_z, allowed=None) -> bool:
    """Bayes-ball style reachability; True if an active trail links sources to targets."""
    parents, children = graph.parents, graph.children
    UP, DOWN = 0, 1
    stack = [(s, UP) for s in sources]
    seen = set(stack)

    def push(nodes, d):
        if allowed is not None:
            nodes = allowed.intersection(nodes)
        for n in nodes:
            if (n, d) not in seen:
                seen.add((n, d))
                stack.append((n, d))

    while stack:
        node, d = stack.pop()
        if node not in zs and node in targets:
            return True
        if d == UP and node not in zs:
            push(parents.get(node, ()), UP)
            push(children.get(node, ()), DOWN)
        elif d == DOWN:
            if node not in zs:
                push(children.get(node, ()), DOWN)
            if node in anc_z:
                push(parents.get(node, ()), UP)
    return False


def d_separated(dag: CausalGraph, xs: Iterable, ys: Iterable, zs: Iterable) -> bool:
    """True iff every trail between xs and ys is blocked given zs.

    Members of xs or ys that are also in zs are treated as conditioned on and
    drop out of the source/target sets.
    """
    zs = set(zs)
    xs = set(xs) - zs
    ys = set(ys) - zs
    if not xs or not ys:
        return True
    if xs & ys:
        return False
    anc_z = dag.ancestors(zs)
    allowed = dag.ancestors(xs | ys) | anc_z
    return not _reaches(dag, ys, xs, zs, anc_z, allowed)


# -- covariates ------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateEntry:
    unit: tuple
    influencers: tuple  # S'(x')
    z: tuple  # chosen covariate nodes
    initial_z: tuple

    @property
    def minimized(self) -> bool:
        return self.z != self.initial_z


@dataclass(frozen=True)
class CovariateSet:
    treatment: str
    response: str
    entries: dict

    def __getitem__(self, unit) -> CovariateEntry:
        return self.entries[unit]

    def attributes(self) -> list[str]:
        return sorted({n.attribute for e in self.entries.values() for n in e.z})


def detect_covariates(
    graph: CausalGraph,
    treatment: str,
    response: str,
    units: Optional[Iterable[tuple]] = None,
    minimize: bool = True,
) -> CovariateSet:
    """Find, per response unit, an observed adjustment set Z.

    Z starts from the observed parents of every treated node with a directed
    path to the response and is then pruned one node at a time (highest degree
    first, ties by name) while the separation condition keeps holding.
    """
    t_nodes = graph.nodes_of(treatment)
    t_set = set(t_nodes)
    all_pa = set()
    for t in t_nodes:
        all_pa.update(graph.parents.get(t, ()))
    anc_t = graph.ancestors(t_set)
    reach: dict[GroundAttr, set] = defaultdict(set)
    for t in t_nodes:
        for d in graph.descendants([t]):
            if d.attribute == response:
                reach[d].add(t)
    if units is None:
        y_nodes = graph.nodes_of(response)
    else:
        y_nodes = [GroundAttr(response, tuple(u)) for u in units]

    def degree(n):
        return len(graph.parents.get(n, ())) + len(graph.children.get(n, ()))

    def holds(y, z: set, base_allowed: set) -> bool:
        zs = t_set | z
        xs = all_pa - zs
        if not xs:
            return True
        extra = z - anc_t
        if extra:
            anc_z = anc_t | graph.ancestors(extra)
            allowed = base_allowed | anc_z
        else:
            anc_z, allowed = anc_t, base_allowed
        return not _reaches(graph, [y], xs, zs, anc_z, allowed)

    entries = {}
    for y in y_nodes:
        infl = sorted(reach.get(y, ()))
        z0 = {p for t in infl for p in graph.parents.get(t, ()) if graph.is_observed(p)}
        allowed = anc_t | graph.ancestors([y])
        if not holds(y, z0, allowed):
            z0 = _wider_set(graph, y, t_set, z0)
            if z0 is None or not holds(y, z0, allowed):
                raise UnidentifiableError(
                    f"no observed adjustment set for {y}: a parent of the treatment is unobserved"
                )
        z = set(z0)
        if minimize:
            for n in sorted(z0, key=lambda n: (-degree(n), n)):
                if holds(y, z - {n}, allowed):
                    z.discard(n)
        assert holds(y, z, allowed)
        entries[y.args] = CovariateEntry(y.args, tuple(t.args for t in infl), tuple(sorted(z)), tuple(sorted(z0)))
    return CovariateSet(treatment, response, entries)


def _wider_set(graph: CausalGraph, y, t_set, z0) -> Optional[set]:
    """Observed ancestors of the treatments and response that no treatment causes."""
    desc_t = graph.descendants(t_set)
    cand = graph.ancestors(t_set | {y}) - desc_t
    return {n for n in cand if graph.is_observed(n)} | set(z0)
