"""End-to-end glue: load, bind, unify, ground, analyse and tabulate."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .graph_analysis import CovariateSet, compute_peers, detect_covariates
from .grounding import CausalGraph, build_graph, ground_rules
from .lang import BoundModel, BoundQuery, bind_model, bind_query, parse_model, parse_query
from .schema import InstanceBundle, SchemaDef, load_instance, load_schema
from .unit_table import UnificationPlan, UnitTable, build_unit_table, plan_unification, select_units


@dataclass
class Workspace:
    schema: SchemaDef
    bundle: InstanceBundle
    model: BoundModel


@dataclass
class Prepared:
    query: BoundQuery
    plan: UnificationPlan
    model: BoundModel  # includes any synthesized aggregate rule
    graph: CausalGraph
    peers: dict
    covariates: CovariateSet
    table: UnitTable


def load_workspace(schema_path, data_dir, model_path) -> Workspace:
    schema = load_schema(Path(schema_path).read_text(encoding="utf-8"))
    bundle = load_instance(schema, data_dir)
    model = bind_model(parse_model(Path(model_path).read_text(encoding="utf-8")), schema)
    return Workspace(schema, bundle, model)


def ground_graph(model: BoundModel, bundle: InstanceBundle) -> CausalGraph:
    return build_graph(ground_rules(model, bundle), model.schema.unobserved)


def prepare(
    ws: Workspace,
    query_text: str,
    embedding: str = "mean",
    embed_config: Optional[dict] = None,
    max_len: int = 4,
) -> Prepared:
    """Run every step up to and including the unit table for one query."""
    query = bind_query(parse_query(query_text), ws.model)
    plan = plan_unification(ws.model, query, max_len)
    model = ws.model.with_agg_rule(plan.synthesized_rule) if plan.synthesized_rule else ws.model
    graph = ground_graph(model, ws.bundle)
    peers = compute_peers(graph, query.treatment, plan.response)
    units = select_units(ws.bundle, plan, graph)
    covs = detect_covariates(graph, query.treatment, plan.response, units)
    table = build_unit_table(
        graph, ws.bundle, plan, query.treatment, covs, peers, embedding, embed_config, units
    )
    return Prepared(query, plan, model, graph, peers, covs, table)
