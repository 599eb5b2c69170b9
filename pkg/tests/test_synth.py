import hashlib
import json

import numpy as np
import pytest

from carl.pipeline import load_workspace
from carl.synth import SynthConfig, generate

SMALL = dict(n_authors=150, n_papers=700, n_institutions=8, n_venues=4)


def tree_hash(d):
    h = hashlib.sha256()
    for f in sorted(d.iterdir()):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def test_deterministic(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    generate(SynthConfig(seed=42, **SMALL), a)
    generate(SynthConfig(seed=42, **SMALL), b)
    generate(SynthConfig(seed=43, **SMALL), c)
    assert tree_hash(a) == tree_hash(b)
    assert tree_hash(a) != tree_hash(c)


def test_ground_truth_file(tmp_path):
    cfg = SynthConfig(seed=1, rel_effect=0.25, **SMALL)
    truth = generate(cfg, tmp_path)
    doc = json.loads((tmp_path / "ground_truth.json").read_text())
    assert doc["single"] == {"aie": 1.0, "are": 0.25, "aoe": 1.25}
    assert doc["double"] == {"aie": 0.0, "are": 0.25, "aoe": 0.25}
    assert doc["config_echo"]["seed"] == 1
    assert truth.single["aoe"] == 1.25


def test_loadable_and_confounded(tmp_path):
    generate(SynthConfig(seed=3, **SMALL), tmp_path)
    ws = load_workspace(tmp_path / "schema.carlschema", tmp_path, tmp_path / "model.carl")
    b = ws.bundle
    people = sorted(b.tuples("Person"))
    q = np.array([b.value("Qualification", p) for p in people])
    t = np.array([b.value("Prestige", p) for p in people])
    assert np.corrcoef(np.log(q), t)[0, 1] > 0.2
    # every author has at least one collaborator
    assert {(x,) for x, _ in b.tuples("Collaborates")} == set(people)
    assert len(b.tuples("Author")) == SMALL["n_papers"]


@pytest.mark.parametrize(
    "bad",
    [{"n_authors": 0}, {"noise_sd": -1.0}, {"homophily": 1.5}, {"prestige_share": 0.0}, {"prestige_share": 1.0}],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_from_toml(tmp_path):
    p = tmp_path / "synth.toml"
    p.write_text("seed = 9\nn_authors = 50\nrel_effect = 0.75\n")
    cfg = SynthConfig.from_toml(p)
    assert (cfg.seed, cfg.n_authors, cfg.rel_effect, cfg.n_papers) == (9, 50, 0.75, 7500)
    p.write_text("colour = 1\n")
    with pytest.raises(ValueError):
        SynthConfig.from_toml(p)
