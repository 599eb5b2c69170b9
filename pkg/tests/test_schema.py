import shutil

import pytest

from carl.errors import DomainError, MissingFile, MissingValue, ParseError, ReferentialError, SchemaError
from carl.schema import (
    InstanceBundle,
    format_schema,
    load_instance,
    load_schema,
    validate_instance,
    write_instance,
)


def test_toy_schema_shape(toy_ws):
    s = toy_ws.schema
    assert [e.name for e in s.entities] == ["Person", "Submission", "Conference"]
    assert s.predicate("Author").roles == ("Person", "Submission")
    assert s.unobserved == frozenset({"Quality"})
    assert s.attribute("Blind").levels == ("Single", "Double")


def test_schema_round_trip(toy_ws):
    text = format_schema(toy_ws.schema)
    assert load_schema(text) == toy_ws.schema


@pytest.mark.parametrize(
    "text",
    [
        "entity A\nentity A",
        "entity A\nrelationship R(A, B)",
        "entity A\nrelationship R(A)",
        "entity A\nattribute X over B domain real",
        "entity A\nattribute A over A domain real",
        "entity A\nattribute X over A domain real\nattribute X over A domain binary",
    ],
)
def test_bad_schemas(text):
    with pytest.raises((SchemaError, ParseError)):
        load_schema(text)


def test_toy_instance(toy_ws):
    b = toy_ws.bundle
    assert len(b.tuples("Author")) == 5
    assert b.value("Qualification", ("Bob",)) == 50.0
    assert b.value("Blind", ("ConfDB",)) == "Single"
    assert b.attribute_values["Quality"] == {}
    assert validate_instance(b) == []


def _copy(review_dir, tmp_path):
    d = tmp_path / "data"
    shutil.copytree(review_dir, d)
    return d


def test_missing_file(review_dir, tmp_path, toy_ws):
    d = _copy(review_dir, tmp_path)
    (d / "Author.csv").unlink()
    with pytest.raises(MissingFile):
        load_instance(toy_ws.schema, d)


def test_referential_error(review_dir, tmp_path, toy_ws):
    d = _copy(review_dir, tmp_path)
    with open(d / "Author.csv", "a") as fh:
        fh.write("Zed,s1\n")
    with pytest.raises(ReferentialError):
        load_instance(toy_ws.schema, d)


def test_domain_error(review_dir, tmp_path, toy_ws):
    d = _copy(review_dir, tmp_path)
    (d / "Prestige.csv").write_text("Person,value\nBob,2\nCarlos,0\nEva,1\n")
    with pytest.raises(DomainError):
        load_instance(toy_ws.schema, d)
    (d / "Prestige.csv").write_text("Person,value\nBob,1\nCarlos,0\nEva,1\n")
    (d / "Blind.csv").write_text("Conference,value\nConfDB,Triple\nConfAI,Double\n")
    with pytest.raises(DomainError):
        load_instance(toy_ws.schema, d)


def test_missing_value(review_dir, tmp_path, toy_ws):
    d = _copy(review_dir, tmp_path)
    (d / "Score.csv").write_text("Submission,value\ns1,0.75\ns2,0.4\n")
    with pytest.raises(MissingValue):
        load_instance(toy_ws.schema, d)


def test_column_count_checked(review_dir, tmp_path, toy_ws):
    d = _copy(review_dir, tmp_path)
    (d / "Author.csv").write_text("Person,Submission\nBob\n")
    with pytest.raises(ParseError):
        load_instance(toy_ws.schema, d)


def test_validate_collects_all(toy_ws):
    b = toy_ws.bundle
    skel = dict(b.skeleton)
    skel["Author"] = skel["Author"] | {("Zed", "s1"), ("Bob", "s9")}
    diags = validate_instance(InstanceBundle(b.schema, skel, b.attribute_values))
    assert [d.kind for d in diags] == ["ReferentialError", "ReferentialError"]


def test_write_then_load(toy_ws, tmp_path):
    write_instance(toy_ws.bundle, tmp_path)
    again = load_instance(toy_ws.schema, tmp_path)
    assert again.skeleton == toy_ws.bundle.skeleton
    assert again.attribute_values == toy_ws.bundle.attribute_values
