"""Command-line front end: ``carl {parse, ground, covariates, answer, synth}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .embeddings import parse_embedding_flag
from .errors import (
    CarlError,
    EmptyDataset,
    EstimationError,
    NotConnected,
    PadOverflow,
    UnidentifiableError,
)
from .estimation import EstimatorConfig, answer_ate, answer_effects, answer_universal_baseline
from .graph_analysis import detect_covariates
from .lang import bind_query, parse_model, parse_query
from .pipeline import ground_graph, load_workspace, prepare
from .synth import SynthConfig, generate

EXIT_INPUT = 2
EXIT_NOT_CONNECTED = 3
EXIT_UNIDENTIFIABLE = 4
EXIT_ESTIMATION = 5


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _sha256(path) -> str:
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for f in sorted(p.iterdir()):
            if f.is_file():
                h.update(f.name.encode())
                h.update(f.read_bytes())
    elif p.is_file():
        h.update(p.read_bytes())
    return h.hexdigest()


class Manifest:
    def __init__(self, args):
        self.args = args
        self.start = time.perf_counter()

    def emit(self) -> None:
        inputs = {}
        for key in ("schema", "data", "model", "config"):
            val = getattr(self.args, key, None)
            if val:
                inputs[key] = _sha256(val)
        record = {
            "command": self.args.command,
            "inputs": inputs,
            "seed": getattr(self.args, "seed", None),
            "engine_version": __version__,
            "duration_s": round(time.perf_counter() - self.start, 6),
        }
        if getattr(self.args, "manifest", None):
            Path(self.args.manifest).write_text(_dumps(record) + "\n", encoding="utf-8")
        else:
            print(_dumps({"manifest": record}), file=sys.stderr)


# -- commands --------------------------------------------------------------------


def cmd_parse(args) -> int:
    model = parse_model(Path(args.model).read_text(encoding="utf-8"))
    print(f"{len(model.rules)} rules, {len(model.agg_rules)} aggregate rules")
    return 0


def cmd_ground(args) -> int:
    ws = load_workspace(args.schema, args.data, args.model)
    graph = ground_graph(ws.model, ws.bundle)
    doc = graph.to_json()
    if args.out:
        Path(args.out).write_text(_dumps(doc) + "\n", encoding="utf-8")
        kinds = [n["kind"] for n in doc["nodes"]]
        summary = {
            "nodes": len(kinds),
            "edges": len(doc["edges"]),
            "base_nodes": kinds.count("base"),
            "aggregate_nodes": kinds.count("aggregate"),
        }
        print(_dumps(summary))
    else:
        print(_dumps(doc))
    return 0


def cmd_covariates(args) -> int:
    ws = load_workspace(args.schema, args.data, args.model)
    if args.unified:
        prep = prepare(ws, args.query, max_len=args.max_path_len)
        covs = prep.covariates
    else:
        query = bind_query(parse_query(args.query), ws.model)
        graph = ground_graph(ws.model, ws.bundle)
        covs = detect_covariates(graph, query.treatment, query.response)
    for unit, entry in sorted(covs.entries.items()):
        if args.unit and "|".join(unit) != args.unit:
            continue
        print(
            _dumps(
                {
                    "unit": list(unit),
                    "influencers": [list(s) for s in entry.influencers],
                    "z": [str(n) for n in entry.z],
                    "minimized": entry.minimized,
                }
            )
        )
    return 0


def cmd_answer(args) -> int:
    kind, k = parse_embedding_flag(args.embedding)
    embed_config = {"k_moments": k} if k else None
    cfg = EstimatorConfig(
        method=args.estimator,
        bootstrap_reps=args.bootstrap,
        seed=args.seed,
        strata_bins=args.strata_bins,
        are_arm=args.are_arm,
        threads=args.threads,
    )
    ws = load_workspace(args.schema, args.data, args.model)
    if args.baseline == "universal":
        query = bind_query(parse_query(args.query), ws.model)
        result = answer_universal_baseline(ws.bundle, query, cfg, args.max_path_len)
        print(_dumps(result.to_json()))
        return 0
    prep = prepare(ws, args.query, kind, embed_config, args.max_path_len)
    if args.dump_unit_table:
        prep.table.to_csv(args.dump_unit_table)
    if args.dump_graph:
        Path(args.dump_graph).write_text(_dumps(prep.graph.to_json()) + "\n", encoding="utf-8")
    text = str(prep.query.ast)
    if prep.query.condition is None:
        result = answer_ate(prep.table, cfg, text)
    else:
        result = answer_effects(prep.table, prep.query.condition, cfg, text)
    print(_dumps(result.to_json()))
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig.from_toml(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = SynthConfig(**{**cfg.__dict__, "seed": args.seed})
    truth = generate(cfg, args.out)
    print(_dumps(truth.to_json(cfg)))
    return 0


# -- argument parsing ------------------------------------------------------------


def _inputs(p, query=True) -> None:
    p.add_argument("--schema", required=True, help="schema.carlschema file")
    p.add_argument("--data", required=True, help="directory of CSV fact files")
    p.add_argument("--model", required=True, help=".carl rule document")
    if query:
        p.add_argument("--query", required=True, help="query string")
    p.add_argument("--manifest", help="write the run manifest here instead of stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carl", description="Relational causal inference engine.")
    parser.add_argument("--version", action="version", version=f"carl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a rule document and summarize it")
    p.add_argument("model")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("ground", help="ground a model and emit the causal graph")
    _inputs(p, query=False)
    p.add_argument("--out", help="write graph JSON here and print a summary")
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("covariates", help="print adjustment sets per response unit")
    _inputs(p)
    p.add_argument("--unit", help="only this unit (constants joined by '|')")
    p.add_argument("--unified", action="store_true", help="use the unified (aggregated) response")
    p.add_argument("--max-path-len", type=int, default=4)
    p.set_defaults(func=cmd_covariates)

    p = sub.add_parser("answer", help="answer a causal query")
    _inputs(p)
    p.add_argument("--embedding", default="mean", help="mean|median|moments[:k]|padding")
    p.add_argument("--estimator", choices=("ols", "stratify"), default="ols")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bootstrap", type=int, default=200, help="bootstrap replicates (0 disables)")
    p.add_argument("--strata-bins", type=int, default=5)
    p.add_argument("--are-arm", type=int, choices=(0, 1), default=1)
    p.add_argument("--baseline", choices=("universal",))
    p.add_argument("--dump-unit-table")
    p.add_argument("--dump-graph")
    p.add_argument("--threads", type=int)
    p.add_argument("--max-path-len", type=int, default=4)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("--config", help="flat TOML file of generator settings")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_synth)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("line", "col"):
        if getattr(exc, attr, None) is not None:
            err[attr] = getattr(exc, attr)
    print(_dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    manifest = Manifest(args)
    try:
        code = args.func(args)
    except NotConnected as exc:
        return _fail(EXIT_NOT_CONNECTED, exc)
    except UnidentifiableError as exc:
        return _fail(EXIT_UNIDENTIFIABLE, exc)
    except (EstimationError, PadOverflow, EmptyDataset) as exc:
        return _fail(EXIT_ESTIMATION, exc)
    except (CarlError, ValueError, OSError) as exc:
        return _fail(EXIT_INPUT, exc)
    manifest.emit()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
