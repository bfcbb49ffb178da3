import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapesearch.errors import (
    HeadsVersionMismatchError,
    IndexBuildError,
    MissingEmbeddingsError,
    NotLabeledError,
    UnknownObjectError,
)
from shapesearch.index import (
    SearchIndex,
    SearchQuery,
    build_index,
    describe,
    load_index,
    project_query_text,
    rank_all,
    save_index,
    search_similar,
    search_text,
)
from shapesearch.labeler import Description
from shapesearch.projection import init_heads
from shapesearch.training import EmbeddingBases

from conftest import make_catalog


def corpus_bases(catalog, seed=0):
    rng = np.random.default_rng(seed)
    ids = catalog.manifest.object_ids
    return EmbeddingBases(
        images={i: rng.standard_normal(768) for i in ids},
        texts={i: rng.standard_normal(512) for i in ids},
    )


def small_index(n=20, seed=0):
    catalog = make_catalog(n)
    bases = corpus_bases(catalog, seed)
    heads = init_heads(seed + 1)
    return catalog, bases, heads, build_index(catalog, bases, heads)


# --- brute-force oracle --------------------------------------------------------

def oracle_rank(index: SearchIndex, query_vec: np.ndarray, alpha: float,
                k: int, exclude: str | None = None):
    """Full-sort reference: per-row python loop, same score arithmetic."""
    q = np.asarray(query_vec, dtype=np.float32)
    scored = []
    for pos in range(len(index)):
        oid = index.ids[pos]
        if exclude is not None and oid == exclude:
            continue
        img = float(np.sum(index.shared_images[pos] * q, dtype=np.float64))
        txt = float(np.sum(index.shared_texts[pos] * q, dtype=np.float64))
        fused = alpha * img + (1.0 - alpha) * txt
        scored.append((oid, fused, img, txt))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


# --- build ----------------------------------------------------------------------

def test_build_index_small():
    _, _, heads, index = small_index(3)
    assert len(index) == 3
    norms = np.linalg.norm(index.shared_images, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-6
    norms = np.linalg.norm(index.shared_texts, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-6
    assert index.heads_version == heads.version


def test_build_index_dataset_scale_speed():
    import time

    catalog = make_catalog(6778)
    bases_rng = np.random.default_rng(0)
    ids = catalog.manifest.object_ids
    bases = EmbeddingBases(
        images={i: v for i, v in zip(ids, bases_rng.standard_normal((6778, 768)))},
        texts={i: v for i, v in zip(ids, bases_rng.standard_normal((6778, 512)))},
    )
    started = time.perf_counter()
    index = build_index(catalog, bases, init_heads(1))
    elapsed = time.perf_counter() - started
    assert len(index) == 6778
    assert elapsed < 10.0


def test_build_index_missing_embeddings():
    catalog = make_catalog(4)
    bases = corpus_bases(catalog)
    del bases.texts["obj0002"]
    with pytest.raises(MissingEmbeddingsError):
        build_index(catalog, bases, init_heads(0))


def test_build_index_degenerate_entry_named():
    catalog = make_catalog(4)
    bases = corpus_bases(catalog)
    bases.images["obj0001"] = np.zeros(768)
    with pytest.raises(IndexBuildError, match="obj0001"):
        build_index(catalog, bases, init_heads(0))


# --- search_text -----------------------------------------------------------------

def test_search_text_matches_oracle(mock_backend):
    _, _, heads, index = small_index(20)
    query = SearchQuery(text="a curved reading chair", k=7, visual_focus=0.3)
    results = search_text(index, query, heads, mock_backend)
    q = project_query_text(query.text, heads, mock_backend)
    expected = oracle_rank(index, q, 0.3, 7)
    assert [(r.object_id, r.score) for r in results] == [(e[0], e[1]) for e in expected]
    assert [r.rank for r in results] == list(range(1, 8))


def test_fusion_boundaries_bitwise(mock_backend):
    _, _, heads, index = small_index(15)
    q = project_query_text("boundary case query", heads, mock_backend)
    _, fused0, img, txt = rank_all(index, q, 0.0)
    assert np.array_equal(fused0, txt)
    _, fused1, img1, txt1 = rank_all(index, q, 1.0)
    assert np.array_equal(fused1, img1)


def test_fusion_weights_exact(mock_backend):
    _, _, heads, index = small_index(10)
    query = SearchQuery(text="weighted query", k=10, visual_focus=0.1)
    for r in search_text(index, query, heads, mock_backend):
        assert r.score == 0.1 * r.image_score + 0.9 * r.text_score


def test_search_deterministic(mock_backend):
    _, _, heads, index = small_index(12)
    query = SearchQuery(text="same query twice", k=5, visual_focus=0.5)
    a = search_text(index, query, heads, mock_backend)
    b = search_text(index, query, heads, mock_backend)
    assert [(r.object_id, r.score) for r in a] == [(r.object_id, r.score) for r in b]


def test_topk_prefix_property(mock_backend):
    _, _, heads, index = small_index(12)
    lists = {
        k: [r.object_id for r in search_text(
            index, SearchQuery(text="prefix property", k=k), heads, mock_backend)]
        for k in range(1, 11)
    }
    for k in range(1, 10):
        assert lists[k] == lists[k + 1][:k]


def test_heads_version_guard(mock_backend):
    _, _, heads, index = small_index(5)
    other = init_heads(777)
    with pytest.raises(HeadsVersionMismatchError):
        search_text(index, SearchQuery(text="v"), other, mock_backend)


def test_search_query_validation():
    with pytest.raises(ValueError):
        SearchQuery(text="x", k=0)
    with pytest.raises(ValueError):
        SearchQuery(text="x", k=11)
    with pytest.raises(ValueError):
        SearchQuery(text="x", visual_focus=1.5)


def test_library_k_can_exceed_ui_cap(mock_backend):
    _, _, heads, index = small_index(30)
    results = search_text(index, SearchQuery(text="deep"), heads, mock_backend, k=30)
    assert len(results) == 30
    assert [r.rank for r in results] == list(range(1, 31))


# --- search_similar ----------------------------------------------------------------

def test_search_similar_excludes_query():
    _, _, _, index = small_index(3)
    results = search_similar(index, "obj0000", k=1)
    assert len(results) == 1
    assert results[0].object_id != "obj0000"


def test_search_similar_planted_duplicate_rank1():
    catalog = make_catalog(10)
    bases = corpus_bases(catalog, seed=2)
    bases.images["obj0007"] = bases.images["obj0001"].copy()  # plant duplicate of 0001
    heads = init_heads(3)
    index = build_index(catalog, bases, heads)
    results = search_similar(index, "obj0001", k=3)
    assert results[0].object_id == "obj0007"
    assert results[0].score == pytest.approx(1.0, abs=1e-6)


def test_search_similar_matches_oracle():
    _, _, _, index = small_index(50, seed=9)
    results = search_similar(index, "obj0031", k=10)
    q = index.shared_images[index.position("obj0031")]
    expected = oracle_rank(index, q, 1.0, 10, exclude="obj0031")
    assert [(r.object_id, r.score) for r in results] == [(e[0], e[1]) for e in expected]


def test_search_similar_unknown_id():
    _, _, _, index = small_index(4)
    with pytest.raises(UnknownObjectError):
        search_similar(index, "nope", k=2)


def test_self_retrieval_for_every_planted_duplicate():
    # duplicate embeddings pairwise within the pool; each twin must find the
    # other at rank 1
    catalog = make_catalog(8)
    bases = corpus_bases(catalog, seed=5)
    ids = catalog.manifest.object_ids
    bases.images[ids[4]] = bases.images[ids[0]].copy()
    bases.images[ids[5]] = bases.images[ids[1]].copy()
    index = build_index(catalog, bases, init_heads(1))
    assert search_similar(index, ids[0], k=1)[0].object_id == ids[4]
    assert search_similar(index, ids[4], k=1)[0].object_id == ids[0]
    assert search_similar(index, ids[1], k=1)[0].object_id == ids[5]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1),
       alpha=st.floats(0.0, 1.0),
       k=st.integers(1, 10))
def test_random_instances_match_oracle(seed, alpha, k, ):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 40))
    catalog = make_catalog(n)
    bases = corpus_bases(catalog, seed % 1000)
    heads = init_heads(seed % 97)
    index = build_index(catalog, bases, heads)
    q_raw = rng.standard_normal(512).astype(np.float32)
    q = (q_raw / np.linalg.norm(q_raw)).astype(np.float32)
    order, fused, img, txt = rank_all(index, q, alpha)
    engine = [(index.ids[i], float(fused[i])) for i in order[:k]]
    expected = [(e[0], e[1]) for e in oracle_rank(index, q, alpha, k)]
    assert engine == expected


def test_score_bounds(mock_backend):
    _, _, heads, index = small_index(25)
    for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
        results = search_text(index, SearchQuery(text="bounds", visual_focus=alpha, k=10),
                              heads, mock_backend)
        for r in results:
            assert -1.0 - 1e-9 <= r.score <= 1.0 + 1e-9


# --- describe -------------------------------------------------------------------

def test_describe_returns_descriptions_verbatim():
    catalog = make_catalog(2)
    desc = Description(object_id="obj0000", kind="template", text="A low stool.",
                       token_count=3, backend_id="mock", created_at="t")
    catalog = catalog.with_description(desc)
    got = describe(catalog, "obj0000")
    assert got == [desc]


def test_describe_two_kinds_both_returned():
    catalog = make_catalog(1)
    d1 = Description(object_id="obj0000", kind="template", text="T.", token_count=1,
                     backend_id="m", created_at="t")
    d2 = Description(object_id="obj0000", kind="structure", text="S.", token_count=1,
                     backend_id="m", created_at="t")
    catalog = catalog.with_description(d1).with_description(d2)
    kinds = {d.kind for d in describe(catalog, "obj0000")}
    assert kinds == {"template", "structure"}


def test_describe_unknown_and_unlabeled():
    catalog = make_catalog(1)
    with pytest.raises(UnknownObjectError):
        describe(catalog, "ghost")
    with pytest.raises(NotLabeledError):
        describe(catalog, "obj0000")


# --- persistence ------------------------------------------------------------------

def test_index_round_trip(tmp_path):
    _, _, heads, index = small_index(9)
    path = tmp_path / "index.bin"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded.ids == index.ids
    assert loaded.heads_version == index.heads_version
    for name in ("base_images", "base_texts", "shared_images", "shared_texts"):
        assert getattr(loaded, name).tobytes() == getattr(index, name).tobytes()


def test_loaded_index_searches_identically(tmp_path, mock_backend):
    _, _, heads, index = small_index(14)
    path = tmp_path / "index.bin"
    save_index(index, path)
    loaded = load_index(path)
    query = SearchQuery(text="round trip search", k=6, visual_focus=0.4)
    a = search_text(index, query, heads, mock_backend)
    b = search_text(loaded, query, heads, mock_backend)
    assert [(r.object_id, r.score) for r in a] == [(r.object_id, r.score) for r in b]
