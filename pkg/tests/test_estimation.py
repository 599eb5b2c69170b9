from fractions import Fraction

import numpy as np
import pytest

from carl.embeddings import EmbeddingSpec
from carl.errors import DegenerateContrast, EmptyStrata, RankDeficient
from carl.estimation import (
    EstimatorConfig,
    PrunedOLS,
    RelationalEffectEstimator,
    answer_ate,
    answer_effects,
    answer_universal_baseline,
    condition_to_contrast,
    naive_difference,
    universal_table,
)
from carl.lang import bind_query, parse_query
from carl.lang.ast import CndAst
from carl.pipeline import prepare
from carl.unit_table import UnitTable

NO_BOOT = EstimatorConfig(bootstrap_reps=0)


def cnd(text):
    return parse_query(f"Y[X] <= T[X] ? WHEN {text} PEERS TREATED").peer_condition


# -- PrunedOLS -------------------------------------------------------------------


def test_ols_matches_lstsq():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 4))
    y = X @ [1.0, -2.0, 0.5, 3.0] + 7 + rng.normal(size=200)
    m = PrunedOLS().fit(X, y)
    ref, *_ = np.linalg.lstsq(np.column_stack([np.ones(200), X]), y, rcond=None)
    assert m.intercept_ == pytest.approx(ref[0], abs=1e-10)
    np.testing.assert_allclose(m.coef_, ref[1:], atol=1e-10)


def test_ols_drops_collinear_nuisance():
    rng = np.random.default_rng(4)
    t = rng.integers(0, 2, 100).astype(float)
    z = rng.normal(size=100)
    X = np.column_stack([t, z, 2 * z, np.ones(100)])
    y = 2 * t + z + rng.normal(scale=0.1, size=100)
    m = PrunedOLS().fit(X, y)
    assert m.kept_.tolist() == [0, 1]
    assert m.coef_[0] == pytest.approx(2.0, abs=0.1)
    np.testing.assert_allclose(m.predict(X), PrunedOLS().fit(X[:, :2], y).predict(X[:, :2]), atol=1e-9)


def test_ols_protected_column():
    t = np.array([0.0, 1.0, 0.0, 1.0])
    with pytest.raises(RankDeficient):
        PrunedOLS().fit(np.column_stack([np.ones(4), t]), t)
    with pytest.raises(RankDeficient):
        PrunedOLS().fit(np.column_stack([t, t]).reshape(4, 2)[:, [0]] * 0, t)


# -- contrasts -------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, n, expected",
    [
        ("ALL", 3, (1.0, 0.0)),
        ("ALL", 0, (0.0, 0.0)),
        ("MORE THAN 1/3", 3, (2 / 3, 0.0)),
        ("MORE THAN 33.333%", 3, (2 / 3, 0.0)),
        ("MORE THAN 1/3", 2, (0.5, 0.0)),
        ("MORE THAN 50%", 2, (1.0, 0.0)),
        ("MORE THAN 100%", 4, (0.0, 0.0)),
        ("LESS THAN 50%", 4, (0.25, 0.0)),
        ("LESS THAN 0%", 4, (0.0, 0.0)),
        ("AT LEAST 2", 4, (0.5, 0.0)),
        ("AT LEAST 5", 4, (1.0, 0.0)),
        ("AT MOST 1", 3, (1 / 3, 0.0)),
        ("EXACTLY 2", 3, (2 / 3, 0.0)),
    ],
)
def test_condition_to_contrast(text, n, expected):
    assert condition_to_contrast(cnd(text), n) == pytest.approx(expected)


@pytest.mark.parametrize("text", ["NONE", "EXACTLY 0", "AT MOST 0"])
def test_degenerate_conditions(text):
    with pytest.raises(DegenerateContrast):
        condition_to_contrast(cnd(text), 3)


# -- hand-built tables -----------------------------------------------------------


def linear_table(n=2000, seed=0, iso=1.5, rel=0.8):
    """y = iso*t + rel*(treated peer share) + z + noise, with t confounded by z."""
    rng = np.random.default_rng(seed)
    z = rng.normal(size=n)
    t = (rng.random(n) < 1 / (1 + np.exp(-z))).astype(int)
    k = rng.integers(1, 5, n)
    m = rng.binomial(k, 1 / (1 + np.exp(-z)))
    share = m / k
    y = iso * t + rel * share + z + rng.normal(scale=0.3, size=n)
    spec = EmbeddingSpec("mean")
    psi = np.column_stack([share, k.astype(float)])
    return UnitTable(
        [(f"u{i}",) for i in range(n)], y, t, psi, z[:, None], k, spec, m, ["Z_z_0"], ["z"], "y"
    )


def test_recovers_linear_effects():
    table = linear_table()
    r = answer_effects(table, CndAst("ALL"), NO_BOOT)
    X = np.column_stack([np.ones(len(table)), table.treatment, table.psi_t, table.z])
    beta, *_ = np.linalg.lstsq(X, table.response, rcond=None)
    # every unit has peers, so ALL contrasts share 1 against 0 at fixed count
    assert r.estimates["aie"] == pytest.approx(beta[1], abs=1e-9)
    assert r.estimates["are"] == pytest.approx(beta[2], abs=1e-9)
    assert r.estimates["aie"] == pytest.approx(1.5, abs=0.1)
    assert r.estimates["are"] == pytest.approx(0.8, abs=0.1)
    ate = answer_ate(table, NO_BOOT)
    # with peers everywhere, the ATE is the overall effect of treating everyone
    assert ate.estimates["ate"] == pytest.approx(r.estimates["aoe"], abs=1e-9)
    assert naive_difference(table) > 1.5 + 0.3  # confounded upwards


def test_both_are_arms_satisfy_identity():
    table = linear_table(seed=1)
    for arm in (0, 1):
        for text in ["ALL", "MORE THAN 1/3", "LESS THAN 75%", "AT LEAST 1", "AT MOST 2", "EXACTLY 1"]:
            r = answer_effects(table, cnd(text), EstimatorConfig(bootstrap_reps=0, are_arm=arm))
            e = r.estimates
            assert abs(e["aie"] + e["are"] - e["aoe"]) <= 1e-9


def test_affine_response_invariance():
    table = linear_table(seed=2)
    base = answer_effects(table, CndAst("ALL"), NO_BOOT).estimates
    shifted = linear_table(seed=2)
    shifted.response = 3.0 * shifted.response - 4.0
    moved = answer_effects(shifted, CndAst("ALL"), NO_BOOT).estimates
    for k in base:
        assert moved[k] == pytest.approx(3.0 * base[k], abs=1e-9)


def test_affine_covariate_invariance():
    table = linear_table(seed=5)
    base = answer_ate(table, NO_BOOT).estimates["ate"]
    table.z = table.z * -2.5 + 10
    assert answer_ate(table, NO_BOOT).estimates["ate"] == pytest.approx(base, abs=1e-9)


def test_bootstrap_deterministic_and_thread_independent():
    table = linear_table(n=400, seed=6)
    runs = [
        answer_effects(table, CndAst("ALL"), EstimatorConfig(bootstrap_reps=30, seed=9, threads=th)).to_json()
        for th in (1, 4, 4)
    ]
    assert runs[0] == runs[1] == runs[2]
    other = answer_effects(table, CndAst("ALL"), EstimatorConfig(bootstrap_reps=30, seed=10)).to_json()
    assert other["stderr"] != runs[0]["stderr"]
    assert all(v > 0 for v in runs[0]["stderr"].values())


def test_stratified_estimator():
    table = linear_table(n=4000, seed=8)
    r = answer_effects(table, CndAst("ALL"), EstimatorConfig(method="stratify", bootstrap_reps=0))
    assert r.estimates["aie"] == pytest.approx(1.5, abs=0.3)
    table.treatment = np.zeros(len(table), dtype=int)
    est = RelationalEffectEstimator("stratify").fit(table)
    with pytest.raises(EmptyStrata):
        est.adjusted_mean(1, np.ones(len(table)))


def test_degenerate_everywhere():
    table = linear_table(n=50)
    table.peer_count = np.zeros(50, dtype=int)
    with pytest.raises(DegenerateContrast):
        answer_effects(table, CndAst("ALL"), NO_BOOT)


# -- on relational data ----------------------------------------------------------


def test_toy_ate_runs(toy_ws):
    prep = prepare(toy_ws, "AVG_Score[A] <= Prestige[A] ?")
    r = answer_ate(prep.table, EstimatorConfig(bootstrap_reps=5))
    assert r.n_units == 3 and r.kind == "ATE"
    assert r.naive_diff == pytest.approx((0.75 + 1.25 / 3) / 2 - 0.1)


def test_toy_universal_baseline_has_no_overlap(toy_ws):
    q = bind_query(parse_query("Score[S] <= Prestige[A] ?"), toy_ws.model)
    t, y, X, names = universal_table(toy_ws.bundle, q)
    assert len(t) == 5
    assert "Qualification[A]" in names
    with pytest.raises(EmptyStrata):
        answer_universal_baseline(toy_ws.bundle, q, NO_BOOT)


def test_synthetic_small_pipeline(small_synth):
    q = 'Score[S] <= Prestige[A] ? WHEN MORE THAN 1/3 PEERS TREATED WHERE Submitted(S,C), Blind[C] = "Single"'
    for kind in ("mean", "median", "moments", "padding"):
        prep = prepare(small_synth, q, kind)
        r = answer_effects(prep.table, prep.query.condition, NO_BOOT)
        assert set(r.estimates) == {"aie", "are", "aoe"}
    query = bind_query(parse_query(q), small_synth.model)
    base = answer_universal_baseline(small_synth.bundle, query, EstimatorConfig(bootstrap_reps=3))
    assert np.isfinite(base.estimates["ate"])


def test_condition_fraction_exact():
    c = cnd("MORE THAN 1/3")
    assert c.fraction == Fraction(1, 3)


def plain_table(y, t, z=None):
    n = len(y)
    z = np.zeros((n, 0)) if z is None else np.asarray(z, dtype=float).reshape(n, -1)
    return UnitTable(
        [(f"u{i}",) for i in range(n)],
        np.asarray(y, dtype=float),
        np.asarray(t, dtype=int),
        np.zeros((n, 2)),
        z,
        np.zeros(n, dtype=int),
        EmbeddingSpec("mean"),
        np.zeros(n, dtype=int),
        [f"Z_z_{j}" for j in range(z.shape[1])],
        ["z"] if z.shape[1] else [],
    )


def test_known_coefficient_within_three_se():
    rng = np.random.default_rng(11)
    t = rng.integers(0, 2, 1000)
    r = answer_ate(plain_table(2 * t + rng.normal(size=1000), t), EstimatorConfig(bootstrap_reps=100))
    assert abs(r.estimates["ate"] - 2) < 3 * r.stderr["ate"]
    null = answer_ate(plain_table(rng.normal(size=1000), t), EstimatorConfig(bootstrap_reps=100))
    assert abs(null.estimates["ate"]) < 3 * null.stderr["ate"]


def test_constant_and_saturated_tables():
    t = np.array([0, 1, 0, 1, 1])
    r = answer_ate(plain_table(np.full(5, 4.25), t, np.arange(5.0)), NO_BOOT)
    assert r.estimates["ate"] == pytest.approx(0.0, abs=1e-12)
    est = RelationalEffectEstimator().fit(plain_table(np.full(5, 4.25), t))
    assert est.adjusted_mean(1, np.ones(5)) == pytest.approx(4.25, abs=1e-12)
    two = answer_ate(plain_table([3.5, 1.0], [1, 0]), NO_BOOT)
    assert two.estimates["ate"] == pytest.approx(2.5, abs=1e-12)


def test_ols_error_shrinks_with_n():
    errs = []
    for n in (200, 2000):
        trials = [abs(answer_effects(linear_table(n, seed=s), CndAst("ALL"), NO_BOOT).estimates["aie"] - 1.5) for s in range(8)]
        errs.append(np.mean(trials))
    assert errs[1] < errs[0]
