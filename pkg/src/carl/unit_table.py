"""Unification of treated and response units and the flat unit table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .embeddings import EmbeddingSpec, embed, embed_many, fit_spec
from .errors import MissingValue, NotConnected
from .graph_analysis import CovariateSet, RelationalPath, find_relational_paths
from .grounding import CausalGraph, GroundAttr, eval_condition, node_value
from .lang.ast import AggRuleAst, AttrAtom, Comparison, PredAtom, Var
from .lang.binder import BoundModel, BoundQuery
from .schema import CATEGORICAL, InstanceBundle

DEFAULT_AGG = "AVG"


@dataclass(frozen=True)
class UnificationPlan:
    path: Optional[RelationalPath]
    agg: Optional[str]
    synthesized_rule: Optional[AggRuleAst]
    response: str  # attribute whose groundings are the unified responses
    unit_pred: str
    unit_filter: tuple = ()  # condition over the unit variables
    unit_vars: tuple = ()


def _fresh(used: set, stem: str = "V"):
    i = 1
    while True:
        name = f"{stem}{i}"
        i += 1
        if name not in used:
            used.add(name)
            yield name


def path_condition(path: RelationalPath, schema, start_args, end_args, used: set):
    """Render a relational path as predicate atoms.

    Returns the atoms and the argument tuple the end predicate's atom must use
    (``end_args`` unless the path forces a renaming).
    """
    fresh = _fresh(used)
    preds = schema.predicate_map
    if not path.hops:
        return [PredAtom(path.start, tuple(start_args))], tuple(start_args)
    atoms = []
    source_args = tuple(end_args)
    current = start_args[0] if preds[path.start].kind == "entity" else None
    last = len(path.hops) - 1
    for idx, (rel, entry, exit_) in enumerate(path.hops):
        if entry is None:
            args = list(start_args)
        else:
            args = [Var(next(fresh)) for _ in preds[rel].roles]
            args[entry] = current
        if exit_ is None:
            source_args = tuple(args)
        elif idx == last:
            if entry is None:
                source_args = (args[exit_],)
            else:
                args[exit_] = end_args[0]
        if exit_ is not None:
            current = args[exit_]
        atoms.append(PredAtom(rel, tuple(args)))
    return atoms, source_args


def plan_unification(model: BoundModel, query: BoundQuery, max_len: int = 4) -> UnificationPlan:
    """Decide how responses are lifted to the treated units.

    Responses already over the treated predicate are used directly.  Otherwise
    an aggregate (AVG unless the query names one) is synthesized over the
    shortest relational path, and any query filter is folded into its
    condition.
    """
    schema = model.schema
    ast = query.ast
    t_vars = tuple(ast.treatment.args)
    t_pred = query.treatment_pred
    if query.defined_in_model or (query.agg is None and query.response_pred == t_pred):
        if query.response_pred != t_pred:
            raise NotConnected(f"aggregate {query.response} is over {query.response_pred}, not {t_pred}")
        rename = {a: b for a, b in zip(ast.treatment.args, ast.response.args)}
        filt = _unit_filter(ast, rename, query.response_pred, ast.response.args)
        path = find_relational_paths(schema, t_pred, t_pred, 0)
        return UnificationPlan(
            path[0] if path else None, query.agg, None, query.response, t_pred, filt, tuple(ast.response.args)
        )

    base = query.response_base
    base_pred = schema.attribute(base).over
    paths = find_relational_paths(schema, t_pred, base_pred, max_len)
    if not paths:
        raise NotConnected(f"{t_pred} and {base_pred} are not relationally connected within {max_len} hops")
    path = paths[0]
    agg = query.agg or DEFAULT_AGG
    name = f"{agg}_{base}"
    used = set(query.var_types) | {v for a in ast.where_filter for v in a.variables}
    if query.agg is None:
        source = ast.response
        filt_in_rule = tuple(ast.where_filter)
        unit_filter = (PredAtom(t_pred, t_vars),)
    else:
        fresh = _fresh(used, "S")
        source = AttrAtom(base, tuple(Var(next(fresh)) for _ in schema.predicate(base_pred).roles))
        filt_in_rule = ()
        unit_filter = _unit_filter(ast, {}, t_pred, t_vars)
    atoms, source_args = path_condition(path, schema, t_vars, source.args, used)
    if source_args != tuple(source.args):
        if filt_in_rule:
            raise NotConnected("query filters are not supported when the response path renames its variables")
        source = AttrAtom(base, source_args, source.pos)
    rule = AggRuleAst(agg, AttrAtom(name, t_vars), source, tuple(atoms) + filt_in_rule)
    return UnificationPlan(path, agg, rule, name, t_pred, unit_filter, t_vars)


def _unit_filter(ast, rename, pred, unit_args) -> tuple:
    atoms = [PredAtom(pred, tuple(unit_args))]
    for a in ast.where_filter:
        if isinstance(a, PredAtom):
            atoms.append(PredAtom(a.predicate, tuple(rename.get(t, t) for t in a.args), a.pos))
        else:
            at = AttrAtom(a.atom.attribute, tuple(rename.get(t, t) for t in a.atom.args), a.atom.pos)
            atoms.append(Comparison(at, a.op, a.value, a.pos))
    return tuple(atoms)


# -- the table -------------------------------------------------------------------


@dataclass
class UnitTable:
    units: list
    response: np.ndarray
    treatment: np.ndarray
    psi_t: np.ndarray
    z: np.ndarray
    peer_count: np.ndarray
    peer_spec: EmbeddingSpec
    peer_treated: Optional[np.ndarray] = None
    z_columns: list = field(default_factory=list)
    covariate_attributes: list = field(default_factory=list)
    response_name: str = "response"

    def __len__(self) -> int:
        return len(self.units)

    @property
    def psi_columns(self) -> list[str]:
        return [f"psiT_{i}" for i in range(self.psi_t.shape[1])]

    @property
    def columns(self) -> list[str]:
        return ["unit", "response", "treatment", *self.psi_columns, *self.z_columns, "peer_count"]

    def subset(self, idx) -> "UnitTable":
        idx = np.asarray(idx)
        return UnitTable(
            [self.units[i] for i in idx],
            self.response[idx],
            self.treatment[idx],
            self.psi_t[idx],
            self.z[idx],
            self.peer_count[idx],
            self.peer_spec,
            self.peer_treated[idx],
            list(self.z_columns),
            list(self.covariate_attributes),
            self.response_name,
        )

    def rows(self):
        for i, u in enumerate(self.units):
            yield [
                "|".join(u),
                float(self.response[i]),
                int(self.treatment[i]),
                *map(float, self.psi_t[i]),
                *map(float, self.z[i]),
                int(self.peer_count[i]),
            ]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows():
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def select_units(bundle: InstanceBundle, plan: UnificationPlan, graph: CausalGraph) -> list[tuple]:
    """Treated units that pass the filter and have a defined response."""
    free = [v.name for v in plan.unit_vars]
    if len(set(free)) != len(free) or len(free) != len(plan.unit_vars):
        raise NotConnected("unit atoms must use distinct variables")
    keep = eval_condition(bundle, plan.unit_filter, free)
    treated = bundle.tuples(plan.unit_pred)
    if plan.synthesized_rule is not None or graph.aggregators.get(plan.response):
        have = {n.args for n in graph.nodes_of(plan.response)}
    else:
        have = set(bundle.attribute_values.get(plan.response, {}))
    return sorted(u for u in keep if u in treated and u in have)


def build_unit_table(
    graph: CausalGraph,
    bundle: InstanceBundle,
    plan: UnificationPlan,
    treatment: str,
    covs: CovariateSet,
    peers: dict,
    kind: str = "mean",
    embed_config: Optional[dict] = None,
    units: Optional[list] = None,
) -> UnitTable:
    """One row per unit: response, own treatment, peer-treatment and covariate embeddings.

    Covariate nodes of a unit are split into its own treatment parents and
    everyone else's, then grouped by attribute; each group is embedded
    separately without a count channel (the peer count already carries it).
    """
    if units is None:
        units = select_units(bundle, plan, graph)
    tvals = bundle.attribute_values[treatment]
    schema = bundle.schema
    y = np.array([_value(graph, bundle, GroundAttr(plan.response, u)) for u in units], dtype=float)
    t = np.array([tvals[u] for u in units], dtype=int)
    peer_sets = [peers.get(u, ()) for u in units]
    peer_vecs = [[tvals[p] for p in ps] for ps in peer_sets]
    cfg = dict(embed_config or {})
    peer_spec = fit_spec(peer_vecs or [[]], kind, cfg, response=y if len(y) else None)
    psi = embed_many(peer_vecs, peer_spec) if units else np.zeros((0, peer_spec.dim))

    own_pa = {}
    for u in units:
        own_pa[u] = set(graph.parents.get(GroundAttr(treatment, u), ()))
    groups: dict[tuple, list] = {}
    for i, u in enumerate(units):
        entry = covs.entries.get(u)
        for node in entry.z if entry else ():
            scope = "self" if node in own_pa[u] else "peer"
            key = (node.attribute, scope)
            if key not in groups:
                groups[key] = [[] for _ in units]
            groups[key][i].append(_value(graph, bundle, node))
    columns: list[str] = []
    blocks: list[np.ndarray] = []
    cov_cfg = dict(cfg, include_count=False)
    attrs = schema.attribute_map
    for (attr, scope) in sorted(groups, key=lambda k: (k[0], k[1] != "peer")):
        vecs = groups[(attr, scope)]
        prefix = f"Z_{attr}" if scope == "peer" else f"Z_self_{attr}"
        decl = attrs.get(attr)
        if decl is not None and decl.value_domain == CATEGORICAL:
            for level in decl.levels:
                ind = [[1.0 if v == level else 0.0 for v in vec] for vec in vecs]
                spec = fit_spec(ind, kind, cov_cfg)
                blocks.append(embed_many(ind, spec))
                columns += [f"{prefix}={level}_{j}" for j in range(spec.dim)]
        else:
            fvecs = [[float(v) for v in vec] for vec in vecs]
            spec = fit_spec(fvecs, kind, dict(cov_cfg, k_moments=peer_spec.k_moments))
            blocks.append(embed_many(fvecs, spec))
            columns += [f"{prefix}_{j}" for j in range(spec.dim)]
    z = np.hstack(blocks) if blocks else np.zeros((len(units), 0))
    pc = np.array([len(ps) for ps in peer_sets], dtype=int)
    treated = np.array([int(sum(v)) for v in peer_vecs], dtype=int)
    return UnitTable(
        list(units), y, t, psi, z, pc, peer_spec, treated, columns, sorted({a for a, _ in groups}), plan.response
    )


def counterfactual_peer_embedding(spec: EmbeddingSpec, n: int, fraction: float) -> np.ndarray:
    """Peer embedding when round(fraction * n) of a unit's n peers are treated."""
    m = int(round(fraction * n))
    return embed([1.0] * m + [0.0] * (n - m), spec)


def _value(graph, bundle, node):
    try:
        return node_value(graph, bundle, node)
    except KeyError:
        raise MissingValue(f"no value for {node}") from None
