"""Covariate-adjusted effect estimation on unit tables."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.linear_model import LogisticRegression

from .errors import DegenerateContrast, EmptyStrata, EstimationError, JoinEmpty, RankDeficient
from .grounding import eval_condition
from .graph_analysis import find_relational_paths
from .lang.ast import BARE_KINDS, CndAst, PredAtom, Var
from .lang.binder import BoundQuery
from .schema import CATEGORICAL, InstanceBundle
from .unit_table import UnitTable, counterfactual_peer_embedding, path_condition

# percent thresholds within this distance of a realizable fraction count as equal
PCT_SNAP = Fraction(1, 20000)


@dataclass(frozen=True)
class ContrastSpec:
    own: tuple = (1, 0)
    peer: tuple = (1.0, 0.0)


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = "ols"
    bootstrap_reps: int = 200
    seed: int = 0
    strata_bins: int = 5
    are_arm: int = 1
    threads: Optional[int] = None

    def __post_init__(self):
        if self.method not in ("ols", "stratify"):
            raise ValueError(f"unknown estimator {self.method!r}")
        if self.bootstrap_reps < 0:
            raise ValueError("bootstrap_reps must be >= 0")
        if self.are_arm not in (0, 1):
            raise ValueError("are_arm must be 0 or 1")


@dataclass
class EffectResult:
    query: str
    kind: str
    estimates: dict
    stderr: Optional[dict]
    n_units: int
    covariates: list = field(default_factory=list)
    embedding: dict = field(default_factory=dict)
    naive_diff: Optional[float] = None
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "kind": self.kind,
            "estimates": self.estimates,
            "stderr": self.stderr,
            "n_units": self.n_units,
            "covariates": self.covariates,
            "embedding": self.embedding,
            "naive_diff": self.naive_diff,
            "seed": self.seed,
        }


# -- contrasts -------------------------------------------------------------------


def condition_to_contrast(cnd: Optional[CndAst], peer_count: int) -> tuple[float, float]:
    """Target treated-peer fractions (f, f') for one unit with *peer_count* peers."""
    if peer_count < 0:
        raise ValueError("peer_count must be nonnegative")
    if cnd is None or cnd.kind == "ALL":
        return (1.0, 0.0) if peer_count else (0.0, 0.0)
    if cnd.kind == "NONE":
        raise DegenerateContrast("NONE PEERS TREATED coincides with the baseline regime")
    if cnd.kind in ("EXACTLY", "AT_MOST") and cnd.k == 0:
        raise DegenerateContrast(f"{cnd} coincides with the baseline regime")
    n = peer_count
    if n == 0:
        return (0.0, 0.0)
    if cnd.kind in BARE_KINDS:
        raise AssertionError(cnd.kind)
    if cnd.kind in ("MORE_THAN_PCT", "LESS_THAN_PCT"):
        thr = cnd.fraction
        # snap a rounded percentage onto a nearby realizable fraction
        near = Fraction(round(thr * n), n)
        if abs(near - thr) <= PCT_SNAP:
            thr = near
        if cnd.kind == "MORE_THAN_PCT":
            j = int(np.floor(thr * n)) + 1
            if j > n:
                return (0.0, 0.0)
        else:
            j = int(np.ceil(thr * n)) - 1
            if j < 0:
                return (0.0, 0.0)
        return (j / n, 0.0)
    return (min(1.0, float(cnd.k) / n), 0.0)


def row_contrasts(cnd: Optional[CndAst], peer_counts) -> tuple[np.ndarray, np.ndarray]:
    pairs = [condition_to_contrast(cnd, int(n)) for n in peer_counts]
    f = np.array([p[0] for p in pairs], dtype=float)
    f0 = np.array([p[1] for p in pairs], dtype=float)
    return f, f0


# -- regression ------------------------------------------------------------------


class PrunedOLS(RegressorMixin, BaseEstimator):
    """Least squares with an intercept that drops collinear nuisance columns.

    Columns are screened left to right; a column whose residual after
    projection on the kept ones is negligible is dropped.  The first
    ``n_protected`` columns must survive, else RankDeficient is raised.
    """

    def __init__(self, n_protected=1, tol=1e-8):
        self.n_protected = n_protected
        self.tol = tol

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        design = np.hstack([np.ones((n, 1)), X])
        basis = np.zeros((n, 0))
        keep = []
        for j in range(p + 1):
            col = design[:, j]
            norm = np.linalg.norm(col)
            resid = col - basis @ (basis.T @ col) if basis.shape[1] else col
            rn = np.linalg.norm(resid)
            if norm > 0 and rn > self.tol * max(norm, 1.0):
                keep.append(j)
                basis = np.hstack([basis, (resid / rn)[:, None]])
            elif 1 <= j <= self.n_protected:
                raise RankDeficient(f"treatment column {j - 1} is collinear with the other regressors")
        if 0 not in keep:
            raise RankDeficient("empty design")
        beta, *_ = np.linalg.lstsq(design[:, keep], y, rcond=None)
        coef = np.zeros(p + 1)
        coef[keep] = beta
        self.intercept_ = float(coef[0])
        self.coef_ = coef[1:]
        self.kept_ = np.array([k - 1 for k in keep if k > 0], dtype=int)
        return self

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef_ + self.intercept_


def _design(table: UnitTable, own, psi) -> np.ndarray:
    t = np.broadcast_to(np.asarray(own, dtype=float), (len(table),))
    return np.column_stack([t, psi, table.z])


def _counterfactual_psi(table: UnitTable, fractions) -> np.ndarray:
    fractions = np.broadcast_to(np.asarray(fractions, dtype=float), (len(table),))
    cache: dict = {}
    rows = []
    for n, f in zip(table.peer_count, fractions):
        key = (int(n), int(round(f * n)))
        if key not in cache:
            cache[key] = counterfactual_peer_embedding(table.peer_spec, int(n), float(f))
        rows.append(cache[key])
    if not rows:
        return np.zeros((0, table.psi_t.shape[1]))
    return np.vstack(rows)


def _strata(table: UnitTable, bins: int) -> np.ndarray:
    """Equal-frequency bin index per covariate channel, combined into stratum ids."""
    cols = [table.z[:, j] for j in range(table.z.shape[1])]
    cols.append(table.peer_count.astype(float))
    codes = []
    for c in cols:
        edges = np.unique(np.quantile(c, np.linspace(0, 1, bins + 1)[1:-1]))
        codes.append(np.searchsorted(edges, c, side="right"))
    if not codes:
        return np.zeros(len(table), dtype=int)
    _, ids = np.unique(np.column_stack(codes), axis=0, return_inverse=True)
    return ids.ravel()


class RelationalEffectEstimator(BaseEstimator):
    """Plug-in estimator of interventional means on a unit table.

    ``fit`` takes a :class:`UnitTable`; ``adjusted_mean`` evaluates the
    adjustment formula for an own-treatment value and per-row peer fractions.
    """

    def __init__(self, method="ols", strata_bins=5):
        self.method = method
        self.strata_bins = strata_bins

    def fit(self, table: UnitTable, y=None):
        if len(table) == 0:
            raise EstimationError("empty unit table")
        self.table_ = table
        if self.method == "ols":
            X = np.column_stack([table.treatment, table.psi_t, table.z])
            self.model_ = PrunedOLS(n_protected=1).fit(X, table.response)
        else:
            self.strata_ = _strata(table, self.strata_bins)
        return self

    def adjusted_mean(self, own: int, fractions) -> float:
        return float(np.mean(self.predict_rows(own, fractions)))

    def predict_rows(self, own: int, fractions) -> np.ndarray:
        """Per-row counterfactual predictions (OLS), or a broadcast stratified mean."""
        table = self.table_
        if self.method == "ols":
            psi = _counterfactual_psi(table, fractions)
            return self.model_.predict(_design(table, own, psi))
        return np.full(len(table), self._stratified(own, fractions))

    def _stratified(self, own, fractions) -> float:
        table = self.table_
        fractions = np.broadcast_to(np.asarray(fractions, dtype=float), (len(table),))
        target = np.rint(fractions * table.peer_count).astype(int)
        match = (table.treatment == own) & (table.peer_treated == target)
        total, weight = 0.0, 0
        for s in np.unique(self.strata_):
            in_s = self.strata_ == s
            m = in_s & match
            if m.any():
                size = int(in_s.sum())
                total += size * float(np.mean(table.response[m]))
                weight += size
        if weight == 0:
            raise EmptyStrata("no stratum contains units with the requested treatment regime")
        return total / weight


# -- answering queries -----------------------------------------------------------


def estimate_adjusted_mean(table: UnitTable, own: int, peer_fraction, cfg: EstimatorConfig) -> float:
    est = RelationalEffectEstimator(cfg.method, cfg.strata_bins).fit(table)
    return est.adjusted_mean(own, peer_fraction)


def _ate_point(table: UnitTable, cfg: EstimatorConfig) -> dict:
    est = RelationalEffectEstimator(cfg.method, cfg.strata_bins).fit(table)
    ones = np.ones(len(table))
    return {"ate": est.adjusted_mean(1, ones) - est.adjusted_mean(0, 0 * ones)}


def _effects_point(table: UnitTable, cnd, cfg: EstimatorConfig) -> dict:
    f, f0 = row_contrasts(cnd, table.peer_count)
    est = RelationalEffectEstimator(cfg.method, cfg.strata_bins).fit(table)
    y1f, y1f0 = est.predict_rows(1, f), est.predict_rows(1, f0)
    y0f, y0f0 = est.predict_rows(0, f), est.predict_rows(0, f0)
    aoe = float(np.mean(y1f - y0f0))
    if cfg.are_arm == 1:
        are = float(np.mean(y1f - y1f0))
        aie = float(np.mean(y1f0 - y0f0))
    else:
        are = float(np.mean(y0f - y0f0))
        aie = float(np.mean(y1f - y0f))
    return {"aie": aie, "are": are, "aoe": aoe}


def _worker_count(cfg: EstimatorConfig) -> int:
    if cfg.threads:
        return max(1, int(cfg.threads))
    env = os.environ.get("CARL_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def bootstrap(table: UnitTable, point, cfg: EstimatorConfig) -> Optional[dict]:
    """Row-resampling bootstrap; replicate i draws from a generator seeded seed + i."""
    if cfg.bootstrap_reps == 0:
        return None
    n = len(table)

    def replicate(i):
        rng = np.random.default_rng(cfg.seed + i)
        idx = rng.integers(0, n, n)
        try:
            return point(table.subset(idx))
        except EstimationError:
            return None

    workers = _worker_count(cfg)
    reps = range(cfg.bootstrap_reps)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(replicate, reps))
    else:
        results = [replicate(i) for i in reps]
    ok = [r for r in results if r is not None]
    if len(ok) < 2:
        return {k: None for k in (results[0] or {})} if results else None
    keys = list(ok[0])
    return {k: float(np.std([r[k] for r in ok], ddof=1)) for k in keys}


def naive_difference(table: UnitTable) -> Optional[float]:
    t = table.treatment == 1
    if t.all() or not t.any():
        return None
    return float(np.mean(table.response[t]) - np.mean(table.response[~t]))


def answer_ate(table: UnitTable, cfg: EstimatorConfig, query: str = "") -> EffectResult:
    """ATE as the contrast of everyone treated against no one treated."""
    point = _ate_point(table, cfg)
    se = bootstrap(table, lambda tb: _ate_point(tb, cfg), cfg)
    return EffectResult(
        query,
        "ATE",
        point,
        se,
        len(table),
        list(table.covariate_attributes),
        table.peer_spec.to_json(),
        naive_difference(table),
        cfg.seed,
    )


def answer_effects(table: UnitTable, cnd: Optional[CndAst], cfg: EstimatorConfig, query: str = "") -> EffectResult:
    """Isolated, relational and overall effects for a peer-treatment condition."""
    f, f0 = row_contrasts(cnd, table.peer_count)
    if np.all(f == f0):
        raise DegenerateContrast(f"condition {cnd} gives no peer contrast for any unit")
    point = _effects_point(table, cnd, cfg)
    gap = point["aie"] + point["are"] - point["aoe"]
    if abs(gap) > 1e-9:
        raise AssertionError(f"decomposition identity violated by {gap:.3g}")
    se = bootstrap(table, lambda tb: _effects_point(tb, cnd, cfg), cfg)
    return EffectResult(
        query,
        "triple",
        point,
        se,
        len(table),
        list(table.covariate_attributes),
        table.peer_spec.to_json(),
        naive_difference(table),
        cfg.seed,
    )


# -- universal-table baseline ----------------------------------------------------


def universal_table(bundle: InstanceBundle, query: BoundQuery, max_len: int = 4):
    """Join the relations linking treatment and response into one flat table.

    Returns (treatment, response, covariate matrix, covariate names).
    """
    schema = bundle.schema
    ast = query.ast
    base = query.response_base
    base_pred = schema.attribute(base).over
    t_vars = tuple(ast.treatment.args)
    paths = find_relational_paths(schema, query.treatment_pred, base_pred, max_len)
    if not paths:
        raise JoinEmpty("treatment and response predicates do not join")
    used = set(query.var_types) | {v for a in ast.where_filter for v in a.variables}
    resp_args = tuple(ast.response.args) if query.agg is None else None
    if resp_args is None or query.response_pred != base_pred:
        resp_args = tuple(Var(f"R{i}") for i in range(schema.predicate(base_pred).arity))
        used |= {v.name for v in resp_args}
    atoms, src_args = path_condition(paths[0], schema, t_vars, resp_args, used)
    cond = list(atoms) + list(ast.where_filter)
    if query.agg is not None:
        # the query filter speaks about treated units; scope it to them
        cond.append(PredAtom(query.treatment_pred, t_vars))
    free = []
    types = {}
    for a in cond:
        if isinstance(a, PredAtom):
            pred = schema.predicate(a.predicate)
            for term, role in zip(a.args, pred.roles):
                if isinstance(term, Var) and term.name not in types:
                    types[term.name] = role
                    free.append(term.name)
    rows = sorted(eval_condition(bundle, cond, free))
    if not rows:
        raise JoinEmpty("the universal join is empty")
    pos = {v: i for i, v in enumerate(free)}

    t = np.array([bundle.value(query.treatment, tuple(r[pos[v.name]] for v in t_vars)) for r in rows], dtype=float)
    y = np.array([bundle.value(base, tuple(r[pos[v.name]] for v in src_args)) for r in rows], dtype=float)
    cols, names = [], []
    rel_atoms = [a for a in atoms if isinstance(a, PredAtom)]
    owners = [(v, (types[v],)) for v in free] + [
        (a, (a.predicate,)) for a in rel_atoms if schema.predicate(a.predicate).kind == "relationship"
    ]
    seen = set()
    for owner, (pred,) in owners:
        for attr in schema.attributes:
            if attr.over != pred or not attr.observed:
                continue
            if isinstance(owner, str):
                argpos = [(pos[owner],)]
                label = f"{attr.name}[{owner}]"
            else:
                argpos = [tuple(pos[x.name] for x in owner.args)]
                label = f"{attr.name}[{', '.join(map(str, owner.args))}]"
            if label in seen:
                continue
            seen.add(label)
            if isinstance(owner, str) and attr.name == query.treatment and (owner,) == tuple(v.name for v in t_vars):
                continue
            if attr.name == base and isinstance(owner, str) and (owner,) == tuple(v.name for v in src_args):
                continue
            vals = [bundle.value(attr.name, tuple(r[i] for i in argpos[0])) for r in rows]
            if attr.value_domain == CATEGORICAL:
                for level in attr.levels[1:]:
                    cols.append([1.0 if v == level else 0.0 for v in vals])
                    names.append(f"{label}={level}")
            else:
                cols.append([float(v) for v in vals])
                names.append(label)
    X = np.array(cols, dtype=float).T if cols else np.zeros((len(rows), 0))
    if X.shape[1]:
        keep = X.std(axis=0) > 0
        X = X[:, keep]
        names = [n for n, k in zip(names, keep) if k]
    return t, y, X, names


def answer_universal_baseline(
    bundle: InstanceBundle, query: BoundQuery, cfg: EstimatorConfig, max_len: int = 4
) -> EffectResult:
    """Propensity-stratified ATE on the flat join, treating rows as independent units."""
    t, y, X, names = universal_table(bundle, query, max_len)

    def point(idx):
        tt, yy, XX = t[idx], y[idx], X[idx]
        if tt.min() == tt.max():
            raise EmptyStrata("all rows share one treatment value")
        if XX.shape[1]:
            mu, sd = XX.mean(axis=0), XX.std(axis=0)
            sd[sd == 0] = 1.0
            lr = LogisticRegression(max_iter=1000).fit((XX - mu) / sd, tt.astype(int))
            score = lr.predict_proba((XX - mu) / sd)[:, 1]
        else:
            score = np.zeros(len(tt))
        edges = np.unique(np.quantile(score, np.linspace(0, 1, cfg.strata_bins + 1)[1:-1]))
        bins = np.searchsorted(edges, score, side="right")
        total, weight = 0.0, 0
        for b in np.unique(bins):
            m = bins == b
            treated, control = m & (tt == 1), m & (tt == 0)
            if treated.any() and control.any():
                total += m.sum() * (yy[treated].mean() - yy[control].mean())
                weight += m.sum()
        if weight == 0:
            raise EmptyStrata("no propensity bin holds both arms")
        return {"ate": float(total / weight)}

    n = len(t)
    est = point(np.arange(n))
    se = None
    if cfg.bootstrap_reps:
        reps = []
        for i in range(cfg.bootstrap_reps):
            idx = np.random.default_rng(cfg.seed + i).integers(0, n, n)
            try:
                reps.append(point(idx)["ate"])
            except EstimationError:
                continue
        se = {"ate": float(np.std(reps, ddof=1))} if len(reps) >= 2 else {"ate": None}
    naive = float(y[t == 1].mean() - y[t == 0].mean()) if 0 < t.sum() < n else None
    return EffectResult(
        str(query.ast), "ATE", est, se, n, names, {"kind": "universal"}, naive, cfg.seed
    )
