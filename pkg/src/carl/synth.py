"""Synthetic peer-review data with known isolated and relational effects.

Each submission has one submitting author.  Authors collaborate with each
other, mostly within their own prestige tier, and the prestige of an author's
collaborators shifts the score of every paper the author submits.  Effects are
additive, so the ground truth is exact:

    score = 2 + quality + iso(venue) * prestige(author)
              + rel * share of prestigious collaborators + noise

Quality is latent and driven by the qualification of the author and of the
author's collaborators; prestige is more likely for qualified authors, which
confounds naive comparisons.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .schema import InstanceBundle, format_schema, load_schema, write_instance

SCHEMA_TEXT = """\
entity Person
entity Submission
entity Conference
entity Institution
relationship Author(Person, Submission)
relationship Submitted(Submission, Conference)
relationship Collaborates(Person, Person)
relationship Affiliation(Person, Institution)
attribute Prestige over Person domain binary
attribute Qualification over Person domain real
attribute Quality over Submission domain real unobserved
attribute Score over Submission domain real
attribute Blind over Conference domain categorical(Single, Double)
"""

MODEL_TEXT = """\
Prestige[A] <= Qualification[A] WHERE Person(A)
Quality[S] <= Qualification[A] WHERE Author(A, S)
Quality[S] <= Qualification[B] WHERE Author(A, S), Collaborates(A, B)
Score[S] <= Quality[S] WHERE Submission(S)
Score[S] <= Prestige[A] WHERE Author(A, S)
Score[S] <= Prestige[B] WHERE Author(A, S), Collaborates(A, B)
Score[S] <= Blind[C] WHERE Submitted(S, C)
"""


@dataclass(frozen=True)
class SynthConfig:
    n_authors: int = 1000
    n_institutions: int = 20
    n_papers: int = 7500
    n_venues: int = 10
    seed: int = 42
    iso_effect_single: float = 1.0
    iso_effect_double: float = 0.0
    rel_effect: float = 0.5
    noise_sd: float = 1.0
    mean_collaborators: float = 3.0
    homophily: float = 0.7
    prestige_share: float = 0.3

    def __post_init__(self):
        for name in ("n_authors", "n_institutions", "n_papers", "n_venues"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0 <= self.homophily <= 1:
            raise ValueError("homophily must lie in [0, 1]")
        if not 0 < self.prestige_share < 1:
            raise ValueError("prestige_share must lie strictly between 0 and 1")

    @classmethod
    def from_toml(cls, path) -> "SynthConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ValueError(f"unknown synth config keys: {', '.join(unknown)}")
        return cls(**raw)


@dataclass(frozen=True)
class GroundTruth:
    single: dict
    double: dict

    def to_json(self, config: SynthConfig) -> dict:
        return {"single": self.single, "double": self.double, "config_echo": asdict(config)}


def ground_truth(cfg: SynthConfig) -> GroundTruth:
    def triple(iso):
        return {"aie": iso, "are": cfg.rel_effect, "aoe": iso + cfg.rel_effect}

    return GroundTruth(triple(cfg.iso_effect_single), triple(cfg.iso_effect_double))


def _collaborations(rng, tier: np.ndarray, cfg: SynthConfig) -> set[tuple[int, int]]:
    n = len(tier)
    edges: set[tuple[int, int]] = set()
    if n < 2:
        return edges
    by_tier = {t: np.flatnonzero(tier == t) for t in (0, 1)}

    def partner(a):
        pool = by_tier[tier[a]]
        if rng.random() < cfg.homophily and len(pool) > 1:
            b = int(pool[rng.integers(len(pool))])
        else:
            b = int(rng.integers(n))
        return b

    def add(a, b):
        if a != b:
            edges.add((min(a, b), max(a, b)))

    # everyone gets at least one collaborator, then fill to the target degree
    degree = np.zeros(n, dtype=int)
    for a in rng.permutation(n):
        if degree[a] == 0:
            b = partner(a)
            while b == a:
                b = partner(a)
            if (min(a, b), max(a, b)) not in edges:
                degree[a] += 1
                degree[b] += 1
            add(a, b)
    target = int(round(cfg.mean_collaborators * n / 2))
    attempts = 0
    while len(edges) < target and attempts < 20 * target:
        a = int(rng.integers(n))
        add(a, partner(a))
        attempts += 1
    return edges


def generate(cfg: SynthConfig, out_dir) -> GroundTruth:
    """Write a complete data directory plus schema, model and ground truth."""
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir)
    schema = load_schema(SCHEMA_TEXT)

    persons = [f"a{i:05d}" for i in range(cfg.n_authors)]
    papers = [f"p{i:06d}" for i in range(cfg.n_papers)]
    venues = [f"v{i:03d}" for i in range(cfg.n_venues)]
    insts = [f"i{i:03d}" for i in range(cfg.n_institutions)]

    n_top = min(cfg.n_institutions, max(1, int(round(cfg.prestige_share * cfg.n_institutions))))
    inst_tier = np.zeros(cfg.n_institutions, dtype=int)
    inst_tier[rng.permutation(cfg.n_institutions)[:n_top]] = 1
    if n_top == cfg.n_institutions and cfg.n_institutions > 1:
        inst_tier[0] = 0

    qual = rng.lognormal(np.log(10.0), 0.75, cfg.n_authors)
    # qualified authors land at prestigious institutions more often
    logit = 1.5 * (np.log(qual) - np.log(10.0)) + np.log(cfg.prestige_share / (1 - cfg.prestige_share))
    want_top = rng.random(cfg.n_authors) < 1 / (1 + np.exp(-logit))
    tiers = {t: np.flatnonzero(inst_tier == t) for t in (0, 1)}
    affiliation = np.empty(cfg.n_authors, dtype=int)
    for a in range(cfg.n_authors):
        t = int(want_top[a])
        pool = tiers[t] if len(tiers[t]) else tiers[1 - t]
        affiliation[a] = pool[rng.integers(len(pool))]
    prestige = inst_tier[affiliation]

    edges = _collaborations(rng, prestige, cfg)
    collab: list[list[int]] = [[] for _ in persons]
    for a, b in sorted(edges):
        collab[a].append(b)
        collab[b].append(a)

    blind = np.array(["Single", "Double"])[np.arange(cfg.n_venues) % 2]
    blind = blind[rng.permutation(cfg.n_venues)]
    author_of = rng.integers(cfg.n_authors, size=cfg.n_papers)
    venue_of = rng.integers(cfg.n_venues, size=cfg.n_papers)

    mean_cq = np.array([np.mean(qual[c]) if c else 10.0 for c in collab])
    share_top = np.array([np.mean(prestige[c]) if c else 0.0 for c in collab])
    quality = 0.04 * (qual[author_of] - 10) + 0.04 * (mean_cq[author_of] - 10)
    quality = quality + rng.normal(0.0, 0.25, cfg.n_papers)
    iso = np.where(blind[venue_of] == "Single", cfg.iso_effect_single, cfg.iso_effect_double)
    score = (
        2.0
        + quality
        + iso * prestige[author_of]
        + cfg.rel_effect * share_top[author_of]
        + rng.normal(0.0, 1.0, cfg.n_papers) * cfg.noise_sd
    )

    skeleton = {
        "Person": frozenset((p,) for p in persons),
        "Submission": frozenset((s,) for s in papers),
        "Conference": frozenset((v,) for v in venues),
        "Institution": frozenset((i,) for i in insts),
        "Author": frozenset((persons[a], papers[s]) for s, a in enumerate(author_of)),
        "Submitted": frozenset((papers[s], venues[v]) for s, v in enumerate(venue_of)),
        "Collaborates": frozenset(
            (persons[a], persons[b]) for x, y in edges for a, b in ((x, y), (y, x))
        ),
        "Affiliation": frozenset((persons[a], insts[i]) for a, i in enumerate(affiliation)),
    }
    values = {
        "Prestige": {(p,): int(prestige[i]) for i, p in enumerate(persons)},
        "Qualification": {(p,): round(float(qual[i]), 6) for i, p in enumerate(persons)},
        "Score": {(s,): round(float(score[i]), 6) for i, s in enumerate(papers)},
        "Blind": {(v,): str(blind[i]) for i, v in enumerate(venues)},
        "Quality": {},
    }
    write_instance(InstanceBundle(schema, skeleton, values), out)
    (out / "schema.carlschema").write_text(format_schema(schema), encoding="utf-8")
    (out / "model.carl").write_text(MODEL_TEXT, encoding="utf-8")
    truth = ground_truth(cfg)
    (out / "ground_truth.json").write_text(
        json.dumps(truth.to_json(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return truth
