import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from carl.embeddings import (
    EmbeddingSpec,
    SetEmbedding,
    embed,
    embed_many,
    fit_spec,
    parse_embedding_flag,
    select_moments,
)
from carl.errors import EmptyDataset, PadOverflow

values = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=0, max_size=12)
SPECS = [
    EmbeddingSpec("mean"),
    EmbeddingSpec("median"),
    EmbeddingSpec("moments", 4),
    EmbeddingSpec("padding", pad_len=12, pad_marker=-1e4, include_count=False),
]


@settings(max_examples=150, deadline=None)
@given(values, st.randoms(use_true_random=False))
def test_permutation_invariant(v, rnd):
    w = list(v)
    rnd.shuffle(w)
    for spec in SPECS:
        a, b = embed(v, spec), embed(w, spec)
        assert a.shape == (spec.dim,)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-6)


def test_known_values():
    assert embed([1, 2, 6], EmbeddingSpec("mean")).tolist() == [3.0, 3.0]
    assert embed([1, 2, 6], EmbeddingSpec("median")).tolist() == [2.0, 3.0]
    assert embed([1, 1, 0, 0], EmbeddingSpec("moments", 3)).tolist() == [0.5, 0.25, 0.0, 4.0]
    assert embed([1.0], EmbeddingSpec("mean", include_count=False)).tolist() == [1.0]
    pad = EmbeddingSpec("padding", pad_len=4, pad_marker=-1.0, include_count=False)
    assert embed([0, 1, 0], pad).tolist() == [1.0, 0.0, 0.0, -1.0]


def test_empty_inputs():
    assert embed([], EmbeddingSpec("mean")).tolist() == [0.0, 0.0]
    assert embed([], EmbeddingSpec("moments", 2)).tolist() == [0.0, 0.0, 0.0]
    pad = EmbeddingSpec("padding", pad_len=2, pad_marker=-5.0, include_count=False)
    assert embed([], pad).tolist() == [-5.0, -5.0]
    assert embed_many([], EmbeddingSpec("mean")).shape == (0, 2)


def test_constant_vector_moments():
    out = embed([3, 3, 3], EmbeddingSpec("moments", 4, include_count=False))
    assert out.tolist() == [3.0, 0.0, 0.0, 0.0]


def test_pad_overflow():
    pad = EmbeddingSpec("padding", pad_len=2, pad_marker=-1.0, include_count=False)
    with pytest.raises(PadOverflow):
        embed([1, 2, 3], pad)


def test_fit_spec():
    vecs = [[0, 1], [1], [0, 0, 1, 1]]
    pad = fit_spec(vecs, "padding")
    assert (pad.pad_len, pad.pad_marker, pad.dim) == (4, -1.0, 4)
    assert fit_spec([[]], "padding").pad_marker == -1.0
    assert fit_spec(vecs, "mean").dim == 2
    assert fit_spec(vecs, "moments", {"k_moments": 2}).k_moments == 2
    with pytest.raises(EmptyDataset):
        fit_spec([], "mean")
    with pytest.raises(ValueError):
        EmbeddingSpec("histogram")


def test_select_moments_finds_variance_signal():
    rng = np.random.default_rng(0)
    vecs = [rng.normal(0, rng.uniform(0.2, 3), size=rng.integers(3, 9)) for _ in range(300)]
    y = np.array([np.var(v) for v in vecs]) + rng.normal(0, 0.05, 300)
    assert select_moments(vecs, y) >= 2
    y_mean = np.array([np.mean(v) for v in vecs]) + rng.normal(0, 0.05, 300)
    assert select_moments(vecs, y_mean) <= 2


def test_parse_flag():
    assert parse_embedding_flag("moments:2") == ("moments", 2)
    assert parse_embedding_flag("Padding") == ("padding", None)
    for bad in ("histogram", "mean:2", "moments:0"):
        with pytest.raises(ValueError):
            parse_embedding_flag(bad)


def test_transformer_shape():
    vecs = [[0, 1], [1], [0, 0, 1]]
    t = SetEmbedding("moments", k_moments=2)
    out = t.fit_transform(vecs)
    assert out.shape == (3, 3)
    assert clone(t).get_params() == t.get_params()
    assert SetEmbedding("padding").fit(vecs).transform(vecs).shape == (3, 3)


def test_moments_reference_values():
    assert embed([50, 20], EmbeddingSpec("moments", 2, include_count=False)).tolist() == [35.0, 225.0]
    assert embed([7.0], EmbeddingSpec("moments", 3, include_count=False)).tolist() == [7.0, 0.0, 0.0]
    for v in ([1, 0], [2.5, 3, 9], []):
        assert embed(v, EmbeddingSpec("moments", 1)).tolist() == embed(v, EmbeddingSpec("mean")).tolist()


def test_constant_response_selects_one_moment():
    rng = np.random.default_rng(1)
    vecs = [rng.normal(size=rng.integers(1, 6)) for _ in range(60)]
    assert select_moments(vecs, np.full(60, 2.0)) == 1


def test_padding_of_fixed_arity_never_uses_marker():
    spec = fit_spec([[0.3], [0.9], [0.1]], "padding")
    assert spec.pad_len == 1
    assert embed_many([[0.3], [0.9]], spec).tolist() == [[0.3], [0.9]]
