"""Relational causal schemas and observed instances.

A schema declares entity predicates, relationship predicates over those
entities, and attribute functions attached to a predicate.  An instance
(the ``InstanceBundle``) holds the skeleton -- the constant tuples of every
predicate -- together with the values of every observed attribute.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import (
    DomainError,
    MissingFile,
    MissingValue,
    ParseError,
    ReferentialError,
    SchemaError,
)

ENTITY = "entity"
RELATIONSHIP = "relationship"

BINARY = "binary"
REAL = "real"
INTEGER = "integer"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    kind: str
    roles: tuple[str, ...]

    @property
    def arity(self) -> int:
        return len(self.roles)


@dataclass(frozen=True)
class AttributeDecl:
    name: str
    over: str
    value_domain: str
    levels: tuple[str, ...] = ()
    observed: bool = True

    @property
    def is_numeric(self) -> bool:
        return self.value_domain != CATEGORICAL


@dataclass(frozen=True)
class SchemaDef:
    predicates: tuple[PredicateDecl, ...] = ()
    attributes: tuple[AttributeDecl, ...] = ()

    def __post_init__(self):
        _check_schema(self)

    @property
    def predicate_map(self) -> dict[str, PredicateDecl]:
        return {p.name: p for p in self.predicates}

    @property
    def attribute_map(self) -> dict[str, AttributeDecl]:
        return {a.name: a for a in self.attributes}

    def predicate(self, name: str) -> PredicateDecl:
        return self.predicate_map[name]

    def attribute(self, name: str) -> AttributeDecl:
        return self.attribute_map[name]

    @property
    def entities(self) -> list[PredicateDecl]:
        return [p for p in self.predicates if p.kind == ENTITY]

    @property
    def relationships(self) -> list[PredicateDecl]:
        return [p for p in self.predicates if p.kind == RELATIONSHIP]

    @property
    def unobserved(self) -> frozenset[str]:
        return frozenset(a.name for a in self.attributes if not a.observed)


def _check_schema(schema: SchemaDef) -> None:
    seen = set()
    for p in schema.predicates:
        if p.name in seen:
            raise SchemaError(f"duplicate predicate {p.name!r}")
        seen.add(p.name)
    entities = {p.name for p in schema.predicates if p.kind == ENTITY}
    for p in schema.predicates:
        if p.kind == ENTITY:
            if p.roles != (p.name,):
                raise SchemaError(f"entity {p.name!r} must have itself as its only role")
        elif p.kind == RELATIONSHIP:
            if len(p.roles) < 2:
                raise SchemaError(f"relationship {p.name!r} needs at least 2 roles")
            for r in p.roles:
                if r not in entities:
                    raise SchemaError(f"relationship {p.name!r} references undeclared entity {r!r}")
        else:
            raise SchemaError(f"unknown predicate kind {p.kind!r}")
    names = set()
    for a in schema.attributes:
        if a.name in names:
            raise SchemaError(f"duplicate attribute {a.name!r}")
        if a.name in seen:
            raise SchemaError(f"attribute {a.name!r} clashes with a predicate name")
        names.add(a.name)
        if a.over not in seen:
            raise SchemaError(f"attribute {a.name!r} is over undeclared predicate {a.over!r}")
        if a.value_domain not in (BINARY, REAL, INTEGER, CATEGORICAL):
            raise SchemaError(f"attribute {a.name!r} has unknown domain {a.value_domain!r}")
        if a.value_domain == CATEGORICAL and not a.levels:
            raise SchemaError(f"categorical attribute {a.name!r} declares no levels")


# -- schema documents -----------------------------------------------------------

_IDENT = r"[A-Za-z][A-Za-z0-9_]*"
_ENTITY_RE = re.compile(rf"^entity\s+({_IDENT})$")
_REL_RE = re.compile(rf"^relationship\s+({_IDENT})\s*\(([^)]*)\)$")
_ATTR_RE = re.compile(
    rf"^attribute\s+({_IDENT})\s+over\s+({_IDENT})\s+domain\s+"
    rf"(binary|real|integer|categorical\s*\(([^)]*)\))(\s+unobserved)?$"
)


def load_schema(text: str) -> SchemaDef:
    """Parse a ``.carlschema`` document into a validated :class:`SchemaDef`."""
    predicates = []
    attributes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _ENTITY_RE.match(line):
            name = m.group(1)
            predicates.append(PredicateDecl(name, ENTITY, (name,)))
        elif m := _REL_RE.match(line):
            roles = tuple(r.strip() for r in m.group(2).split(",") if r.strip())
            if not all(re.fullmatch(_IDENT, r) for r in roles):
                raise ParseError(f"bad role list {m.group(2)!r}", lineno)
            predicates.append(PredicateDecl(m.group(1), RELATIONSHIP, roles))
        elif m := _ATTR_RE.match(line):
            domain = m.group(3)
            levels: tuple[str, ...] = ()
            if domain.startswith(CATEGORICAL):
                levels = tuple(v.strip() for v in m.group(4).split(",") if v.strip())
                if len(set(levels)) != len(levels):
                    raise ParseError(f"duplicate categorical level in {domain!r}", lineno)
                domain = CATEGORICAL
            attributes.append(
                AttributeDecl(m.group(1), m.group(2), domain, levels, observed=m.group(5) is None)
            )
        else:
            raise ParseError(f"cannot parse declaration {line!r}", lineno)
    return SchemaDef(tuple(predicates), tuple(attributes))


def format_schema(schema: SchemaDef) -> str:
    lines = []
    for p in schema.predicates:
        if p.kind == ENTITY:
            lines.append(f"entity {p.name}")
        else:
            lines.append(f"relationship {p.name}({', '.join(p.roles)})")
    for a in schema.attributes:
        domain = a.value_domain
        if domain == CATEGORICAL:
            domain = f"categorical({', '.join(a.levels)})"
        suffix = "" if a.observed else " unobserved"
        lines.append(f"attribute {a.name} over {a.over} domain {domain}{suffix}")
    return "\n".join(lines) + "\n"


# -- instances ------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceBundle:
    schema: SchemaDef
    skeleton: Mapping[str, frozenset] = field(default_factory=dict)
    attribute_values: Mapping[str, Mapping[tuple, Any]] = field(default_factory=dict)

    def tuples(self, predicate: str) -> frozenset:
        return self.skeleton.get(predicate, frozenset())

    def value(self, attribute: str, args: tuple) -> Any:
        return self.attribute_values[attribute][args]


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    location: str
    key: tuple
    message: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.location}/{self.key}: {self.message}"


def parse_value(raw: str, attr: AttributeDecl) -> Any:
    """Convert a CSV cell to the attribute's domain; raises DomainError."""
    s = raw.strip()
    dom = attr.value_domain
    try:
        if dom == BINARY:
            if s not in ("0", "1"):
                raise ValueError
            return int(s)
        if dom == INTEGER:
            return int(s)
        if dom == REAL:
            v = float(s)
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        raise DomainError(f"{attr.name}: value {raw!r} not in domain {dom}") from None
    if s not in attr.levels:
        raise DomainError(f"{attr.name}: value {raw!r} not in levels {attr.levels}")
    return s


def value_in_domain(value: Any, attr: AttributeDecl) -> bool:
    dom = attr.value_domain
    if dom == BINARY:
        return not isinstance(value, bool) and value in (0, 1)
    if dom == INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if dom == REAL:
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    return value in attr.levels


def _read_csv(path: Path, ncols: int) -> list[tuple[str, ...]]:
    if not path.is_file():
        raise MissingFile(f"missing data file {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path.name}: header row required") from None
        if len(header) != ncols:
            raise ParseError(f"{path.name}: expected {ncols} columns, header has {len(header)}", 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ncols:
                raise ParseError(f"{path.name}: expected {ncols} columns", lineno)
            rows.append(tuple(c.strip() for c in row))
    return rows


def load_instance(schema: SchemaDef, data_root: str | Path) -> InstanceBundle:
    """Read one CSV per predicate and per observed attribute under *data_root*."""
    root = Path(data_root)
    skeleton = {}
    for p in schema.predicates:
        skeleton[p.name] = frozenset(_read_csv(root / f"{p.name}.csv", p.arity))
    values: dict[str, dict[tuple, Any]] = {}
    preds = schema.predicate_map
    for a in schema.attributes:
        if not a.observed:
            values[a.name] = {}
            continue
        arity = preds[a.over].arity
        col = {}
        for row in _read_csv(root / f"{a.name}.csv", arity + 1):
            key = row[:arity]
            col[key] = parse_value(row[arity], a)
        values[a.name] = col
    bundle = InstanceBundle(schema, skeleton, values)
    diags = validate_instance(bundle)
    if diags:
        d = diags[0]
        cls = {"ReferentialError": ReferentialError, "MissingValue": MissingValue}.get(d.kind, DomainError)
        raise cls(str(d))
    return bundle


def validate_instance(bundle: InstanceBundle) -> list[Diagnostic]:
    """Return one diagnostic per violated instance invariant (empty if valid)."""
    schema = bundle.schema
    diags = []
    preds = schema.predicate_map
    for p in schema.predicates:
        for tup in sorted(bundle.tuples(p.name)):
            if len(tup) != p.arity:
                diags.append(Diagnostic("ArityError", p.name, tup, f"expected arity {p.arity}"))
                continue
            if p.kind == RELATIONSHIP:
                for role, const in zip(p.roles, tup):
                    if (const,) not in bundle.tuples(role):
                        diags.append(
                            Diagnostic("ReferentialError", p.name, tup, f"unknown {role} constant {const!r}")
                        )
    for a in schema.attributes:
        col = bundle.attribute_values.get(a.name, {})
        if not a.observed:
            continue
        skel = bundle.tuples(a.over)
        for key in sorted(col):
            if key not in skel:
                diags.append(Diagnostic("ReferentialError", a.name, key, f"key not in {a.over}"))
            elif not value_in_domain(col[key], a):
                diags.append(
                    Diagnostic("DomainError", a.name, key, f"value {col[key]!r} outside {a.value_domain}")
                )
        for key in sorted(skel - set(col)):
            diags.append(Diagnostic("MissingValue", a.name, key, "observed attribute undefined"))
        if a.over not in preds:
            diags.append(Diagnostic("SchemaError", a.name, (), f"unknown predicate {a.over}"))
    return diags


def write_instance(bundle: InstanceBundle, data_root: str | Path) -> None:
    """Write *bundle* as a data directory readable by :func:`load_instance`."""
    root = Path(data_root)
    root.mkdir(parents=True, exist_ok=True)
    preds = bundle.schema.predicate_map
    for p in bundle.schema.predicates:
        _write_rows(root / f"{p.name}.csv", list(p.roles), sorted(bundle.tuples(p.name)))
    for a in bundle.schema.attributes:
        if not a.observed:
            continue
        col = bundle.attribute_values.get(a.name, {})
        header = list(preds[a.over].roles) + ["value"]
        rows = [key + (_fmt_value(col[key]),) for key in sorted(col)]
        _write_rows(root / f"{a.name}.csv", header, rows)


def _fmt_value(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path: Path, header: list[str], rows: Iterable[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
