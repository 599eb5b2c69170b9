"""Fixed-width embeddings of variable-size value vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.linear_model import LinearRegression
from sklearn.model_selection import KFold

from .errors import EmptyDataset, PadOverflow

KINDS = ("mean", "median", "moments", "padding")
DEFAULT_MOMENTS = 3


@dataclass(frozen=True)
class EmbeddingSpec:
    kind: str = "mean"
    k_moments: int = DEFAULT_MOMENTS
    pad_len: Optional[int] = None
    pad_marker: Optional[float] = None
    include_count: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.kind == "moments" and self.k_moments < 1:
            raise ValueError("k_moments must be >= 1")
        if self.kind == "padding" and (self.pad_len is None or self.pad_len < 1):
            raise ValueError("padding needs pad_len >= 1")

    @property
    def dim(self) -> int:
        if self.kind == "padding":
            return self.pad_len
        base = self.k_moments if self.kind == "moments" else 1
        return base + int(self.include_count)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "include_count": self.include_count}
        if self.kind == "moments":
            out["k_moments"] = self.k_moments
        if self.kind == "padding":
            out["pad_len"] = self.pad_len
            out["pad_marker"] = self.pad_marker
        return out


def _moments(v: np.ndarray, k: int) -> list[float]:
    n = len(v)
    if n == 0:
        return [0.0] * k
    mean = float(np.mean(v))
    out = [mean]
    if k == 1:
        return out
    dev = v - mean
    var = float(np.mean(dev**2))
    out.append(var)
    sd = var**0.5
    for order in range(3, k + 1):
        out.append(float(np.mean(dev**order)) / sd**order if sd > 1e-12 else 0.0)
    return out


def embed(values: Sequence[float], spec: EmbeddingSpec) -> np.ndarray:
    """Embed one vector.  Empty input gives zeros (count 0) or all markers."""
    v = np.asarray(values, dtype=float).ravel()
    n = len(v)
    if spec.kind == "padding":
        if n > spec.pad_len:
            raise PadOverflow(f"vector of length {n} exceeds pad_len {spec.pad_len}")
        out = np.full(spec.pad_len, spec.pad_marker, dtype=float)
        out[:n] = np.sort(v)[::-1]
        return out
    if spec.kind == "mean":
        loc = [float(np.mean(v))] if n else [0.0]
    elif spec.kind == "median":
        loc = [float(np.median(v))] if n else [0.0]
    else:
        loc = _moments(v, spec.k_moments)
    if spec.include_count:
        loc.append(float(n))
    return np.array(loc, dtype=float)


def embed_many(vectors: Sequence[Sequence[float]], spec: EmbeddingSpec) -> np.ndarray:
    if not len(vectors):
        return np.zeros((0, spec.dim))
    return np.vstack([embed(v, spec) for v in vectors])


def select_moments(vectors, response, k_max: int = 4, include_count: bool = True) -> int:
    """Pick k by 5-fold cross-validated squared loss of a linear response model."""
    y = np.asarray(response, dtype=float)
    n = len(y)
    if n < 2:
        return 1
    folds = KFold(n_splits=min(5, n), shuffle=True, random_state=0)
    best_k, best_loss = 1, np.inf
    for k in range(1, k_max + 1):
        X = embed_many(vectors, EmbeddingSpec("moments", k, include_count=include_count))
        loss = 0.0
        for train, test in folds.split(X):
            model = LinearRegression().fit(X[train], y[train])
            loss += float(np.sum((model.predict(X[test]) - y[test]) ** 2))
        loss /= n
        # ties (within rounding) keep the smaller k
        if loss < best_loss - 1e-9 * (1.0 + abs(best_loss if np.isfinite(best_loss) else 0.0)):
            best_k, best_loss = k, loss
    return best_k


def fit_spec(
    dataset_vectors: Sequence[Sequence[float]],
    kind: str,
    config: Optional[dict] = None,
    response: Optional[Sequence[float]] = None,
) -> EmbeddingSpec:
    """Fit data-dependent embedding parameters.

    ``config`` may carry ``include_count``, ``k_moments`` (fixes k) and
    ``k_max`` (upper bound for the cross-validated choice).
    """
    config = dict(config or {})
    if not len(dataset_vectors):
        raise EmptyDataset("cannot fit an embedding on an empty dataset")
    include_count = config.get("include_count", True)
    if kind == "padding":
        lengths = [len(v) for v in dataset_vectors]
        flat = [x for v in dataset_vectors for x in v]
        marker = (min(flat) - 1.0) if flat else -1.0
        return EmbeddingSpec("padding", pad_len=max(1, max(lengths)), pad_marker=float(marker), include_count=False)
    if kind == "moments":
        k = config.get("k_moments")
        if k is None:
            if response is not None:
                k = select_moments(dataset_vectors, response, config.get("k_max", 4), include_count)
            else:
                k = DEFAULT_MOMENTS
        return EmbeddingSpec("moments", int(k), include_count=include_count)
    return EmbeddingSpec(kind, include_count=include_count)


def parse_embedding_flag(text: str) -> tuple[str, Optional[int]]:
    """``"moments:2"`` -> ``("moments", 2)``; ``"mean"`` -> ``("mean", None)``."""
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind not in KINDS:
        raise ValueError(f"unknown embedding {text!r}; expected one of {', '.join(KINDS)}")
    if arg:
        if kind != "moments":
            raise ValueError(f"embedding {kind} takes no parameter")
        k = int(arg)
        if k < 1:
            raise ValueError("moments:k needs k >= 1")
        return kind, k
    return kind, None


class SetEmbedding(TransformerMixin, BaseEstimator):
    """Transformer mapping a list of variable-length vectors to a 2-D array.

    Parameters
    ----------
    kind : {"mean", "median", "moments", "padding"}
    k_moments : int or None
        Fixed number of moments; None selects k by cross-validation when
        ``fit`` receives a response, else uses 3.
    include_count : bool
        Append the vector length as an extra channel (ignored for padding).
    k_max : int
        Largest k tried by the cross-validated selection.
    """

    def __init__(self, kind="mean", k_moments=None, include_count=True, k_max=4):
        self.kind = kind
        self.k_moments = k_moments
        self.include_count = include_count
        self.k_max = k_max

    def fit(self, X, y=None):
        cfg = {"include_count": self.include_count, "k_max": self.k_max}
        if self.k_moments is not None:
            cfg["k_moments"] = self.k_moments
        self.spec_ = fit_spec(X, self.kind, cfg, response=y)
        return self

    def transform(self, X):
        return embed_many(X, self.spec_)
