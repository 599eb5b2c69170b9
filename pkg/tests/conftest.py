from importlib import resources
from pathlib import Path

import pytest

from carl.pipeline import load_workspace
from carl.synth import SynthConfig, generate

REVIEW = Path(str(resources.files("carl") / "data" / "review"))

SYNTH_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def review_dir() -> Path:
    return REVIEW


@pytest.fixture(scope="session")
def toy_ws():
    return load_workspace(REVIEW / "schema.carlschema", REVIEW, REVIEW / "model.carl")


@pytest.fixture(scope="session")
def toy_listing_ws():
    return load_workspace(REVIEW / "schema.carlschema", REVIEW, REVIEW / "model_listing.carl")


@pytest.fixture(scope="session")
def synth_dirs(tmp_path_factory):
    """Desk-scale synthetic datasets, one per seed."""
    out = {}
    for seed in SYNTH_SEEDS:
        d = tmp_path_factory.mktemp(f"synth{seed}")
        generate(SynthConfig(seed=seed), d)
        out[seed] = d
    return out


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    cfg = SynthConfig(n_authors=120, n_papers=600, n_institutions=6, n_venues=4, seed=7)
    generate(cfg, d)
    return load_workspace(d / "schema.carlschema", d, d / "model.carl")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one pass/fail line per acceptance criterion."""

    def emit(name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
