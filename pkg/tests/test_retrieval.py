import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longview.cells import CellDocument
from longview.errors import DimensionMismatch, DuplicateDocId
from longview.retrieval import (
    HashedBowEmbedder,
    HybridIndex,
    RankedList,
    build_dense_index,
    build_text_index,
    fuse_rrf,
    load_backend,
    load_dense_index,
    load_text_index,
    ranked,
    save_dense_index,
    save_text_index,
    score_buckets,
    search_dense,
    search_text,
    tokenize,
)

WORDS = "mug kitchen board game table quiet garden kettle chop stir morning recap alice bob".split()


def _docs(pairs):
    return [CellDocument(key_id=i, text=t) for i, t in pairs]


def _random_docs(n, rng, n_words=(3, 40)):
    return _docs(
        (f"doc{i:04d}", " ".join(rng.choice(WORDS) for _ in range(rng.randint(*n_words))))
        for i in range(n)
    )


# -- independent oracles ----------------------------------------------------

def bm25_oracle(docs, query, k1=1.2, b=0.75):
    """Direct-formula BM25 over raw texts; no inverted index involved."""
    token_lists = [tokenize(d.text) for d in docs]
    lengths = np.array([len(t) for t in token_lists], dtype=np.float64)
    n = len(docs)
    avg = float(lengths.mean()) if n else 0.0
    avg = avg if avg > 0 else 1.0
    scores = {}
    matched = set()
    for term, weight in Counter(tokenize(query)).items():
        df = sum(1 for toks in token_lists if term in toks)
        if df == 0:
            continue
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for i, toks in enumerate(token_lists):
            tf = float(toks.count(term))
            if tf == 0:
                continue
            matched.add(i)
            dl = lengths[i]
            scores[i] = scores.get(i, 0.0) + idf * weight * (k1 + 1.0) * tf / (
                tf + k1 * (1.0 - b + b * dl / avg)
            )
    pairs = [(docs[i].key_id, scores[i]) for i in matched]
    return sorted(pairs, key=lambda e: (-e[1], e[0]))


def rrf_oracle(lists, k=60.0):
    scores = {}
    for lst in lists:
        for rank, (doc_id, _) in enumerate(lst, start=1):
            scores[doc_id] = scores.get(doc_id, 0.0) + 1.0 / (k + rank)
    return sorted(scores.items(), key=lambda e: (-e[1], e[0]))


# -- tokenizer ----------------------------------------------------------------

def test_tokenize_examples():
    assert tokenize("Alice's 3 mugs") == ["alice", "s", "3", "mugs"]
    assert tokenize("") == []
    assert tokenize("Día-4") == ["día", "4"]
    assert tokenize("under_score") == ["under", "score"]


# -- ranked list ---------------------------------------------------------------

def test_ranked_list_rejects_duplicates():
    with pytest.raises(DuplicateDocId):
        ranked([("a", 1.0), ("a", 0.5)])


def test_ranked_ties_break_by_id():
    assert ranked([("b", 1.0), ("a", 1.0), ("c", 2.0)]).ids() == ["c", "a", "b"]


# -- bm25 -----------------------------------------------------------------------

def test_text_index_stats():
    idx = build_text_index(_docs([("a", "one two three")]))
    assert idx.N == 1 and idx.avg_len == 3.0


def test_text_index_duplicate_ids():
    with pytest.raises(DuplicateDocId):
        build_text_index(_docs([("a", "x"), ("a", "y")]))


def test_empty_doc_never_retrieved():
    idx = build_text_index(_docs([("a", ""), ("b", "mug")]))
    assert search_text(idx, "mug").ids() == ["b"]


def test_absent_term_empty_result():
    idx = build_text_index(_docs([("a", "mug kitchen")]))
    assert search_text(idx, "zebra").ids() == []


def test_bm25_three_doc_fixture_matches_oracle():
    docs = _docs(
        [
            ("d1", "mug on the kitchen table"),
            ("d2", "kitchen kitchen mug mug mug"),
            ("d3", "quiet garden, no dishes at all"),
        ]
    )
    idx = build_text_index(docs)
    got = list(search_text(idx, "mug kitchen"))
    want = bm25_oracle(docs, "mug kitchen")
    assert [i for i, _ in got] == [i for i, _ in want]
    for (_, a), (_, b) in zip(got, want):
        assert a == pytest.approx(b, abs=1e-12)


def test_bm25_postings_match_naive_counts():
    docs = _docs([("d1", "mug mug kitchen"), ("d2", "kitchen"), ("d3", "garden mug")])
    idx = build_text_index(docs)
    # oracle: nested-loop term frequency counting
    for term, expected in {
        "mug": {"d1": 2, "d3": 1},
        "kitchen": {"d1": 1, "d2": 1},
        "garden": {"d3": 1},
    }.items():
        doc_idx, tf = idx.postings[term]
        got = {idx.doc_ids[i]: int(f) for i, f in zip(doc_idx, tf)}
        assert got == expected


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bm25_oracle_equivalence_to_1000_docs(seed):
    rng = random.Random(seed)
    docs = _random_docs(1000, rng)
    idx = build_text_index(docs)
    for query in ("mug kitchen", "garden kettle chop", "alice bob morning recap", "table"):
        got = list(search_text(idx, query))
        want = bm25_oracle(docs, query)
        assert [i for i, _ in got] == [i for i, _ in want]


def test_bm25_scores_nonnegative_and_adding_doc_keeps_tfs():
    rng = random.Random(3)
    docs = _random_docs(50, rng)
    idx = build_text_index(docs)
    assert all(s >= 0 for _, s in search_text(idx, "mug kitchen garden"))
    grown = build_text_index(docs + _docs([("extra", "mug mug mug")]))
    for term, (doc_idx, tf) in idx.postings.items():
        g_idx, g_tf = grown.postings[term]
        old = {idx.doc_ids[i]: f for i, f in zip(doc_idx, tf)}
        new = {grown.doc_ids[i]: f for i, f in zip(g_idx, g_tf)}
        for doc_id, f in old.items():
            assert new[doc_id] == f


# -- dense ---------------------------------------------------------------------

def test_embedder_deterministic_and_permutation_invariant():
    emb = HashedBowEmbedder(dim=64)
    a = emb.embed("the amber kettle boils")
    b = emb.embed("boils kettle amber the")
    assert np.array_equal(a, b)
    assert np.array_equal(a, emb.embed("the amber kettle boils"))
    assert float(np.linalg.norm(a)) == pytest.approx(1.0, abs=1e-6)


def test_embedder_empty_text_marker():
    emb = HashedBowEmbedder(dim=16)
    assert float(np.linalg.norm(emb.embed(""))) == 0.0


def test_dense_index_rejects_non_unit():
    from longview.retrieval.index import DenseIndex

    with pytest.raises(DimensionMismatch):
        DenseIndex(["a"], np.array([[0.5, 0.0]], dtype=np.float32))


def test_dense_search_exact_match_scores_one():
    emb = HashedBowEmbedder(dim=32)
    docs = _docs([("a", "amber kettle"), ("b", "quiet garden")])
    idx = build_dense_index(docs, emb)
    hits = search_dense(idx, emb.embed("amber kettle"))
    assert hits.ids()[0] == "a"
    assert hits.entries[0][1] == pytest.approx(1.0, abs=1e-6)


def test_dense_dim_mismatch():
    emb = HashedBowEmbedder(dim=32)
    idx = build_dense_index(_docs([("a", "x y")]), emb)
    with pytest.raises(DimensionMismatch):
        search_dense(idx, np.zeros(16, dtype=np.float32))


@pytest.mark.parametrize("n", [5, 100, 1000])
def test_dense_equals_brute_force_scan(n):
    rng = random.Random(n)
    emb = HashedBowEmbedder(dim=64)
    docs = _random_docs(n, rng)
    idx = build_dense_index(docs, emb)
    query = emb.embed("mug kitchen garden kettle")
    got = list(search_dense(idx, query))
    # oracle: exhaustive dot-product scan over the same vectors
    want = sorted(
        ((doc_id, float(np.dot(idx.matrix[i], query))) for i, doc_id in enumerate(idx.doc_ids)),
        key=lambda e: (-e[1], e[0]),
    )
    assert got == want


# -- rrf -----------------------------------------------------------------------

def test_rrf_single_list_identity_order():
    lst = ranked([("a", 3.0), ("b", 2.0), ("c", 1.0)])
    assert fuse_rrf([lst]).ids() == ["a", "b", "c"]


def test_rrf_rank_one_in_both_lists():
    l1 = ranked([("a", 9.0), ("b", 1.0)])
    l2 = ranked([("a", 5.0), ("c", 2.0)])
    fused = fuse_rrf([l1, l2], k_rrf=60)
    assert fused.ids()[0] == "a"
    assert fused.score_of("a") == pytest.approx(2.0 / 61.0, abs=1e-12)


def test_rrf_double_presence_beats_single():
    l1 = ranked([("both", 2.0), ("only1", 1.0)])
    l2 = ranked([("both", 2.0), ("only2", 1.0)])
    fused = fuse_rrf([l1, l2], k_rrf=60)
    # 1/61 + 1/61 > 1/61 > 1/62
    assert fused.ids()[0] == "both"
    assert fused.score_of("only1") == pytest.approx(1.0 / 62.0, abs=1e-12)


@given(
    st.lists(
        st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=8, unique=True),
        min_size=1,
        max_size=4,
    )
)
@settings(max_examples=80, deadline=None)
def test_rrf_matches_formula_oracle(id_lists):
    lists = [ranked([(i, float(len(ids) - r)) for r, i in enumerate(ids)]) for ids in id_lists]
    fused = fuse_rrf(lists)
    want = rrf_oracle(lists)
    assert fused.ids() == [i for i, _ in want]
    for (_, a), (_, b) in zip(fused, want):
        assert a == pytest.approx(b, abs=1e-12)


@given(
    st.lists(st.sampled_from("abcdef"), min_size=2, max_size=6, unique=True),
    st.lists(st.sampled_from("abcdef"), min_size=2, max_size=6, unique=True),
    st.integers(1, 5),
)
@settings(max_examples=60, deadline=None)
def test_rrf_monotone_in_rank(ids_a, ids_b, pos):
    """Moving a document up one rank never lowers its fused score."""
    pos = min(pos, len(ids_a) - 1)
    target = ids_a[pos]
    improved = ids_a[: pos - 1] + [target, ids_a[pos - 1]] + ids_a[pos + 1 :]

    def fused_score(order):
        lists = [
            ranked([(i, float(len(order) - r)) for r, i in enumerate(order)]),
            ranked([(i, float(len(ids_b) - r)) for r, i in enumerate(ids_b)]),
        ]
        return fuse_rrf(lists).score_of(target) or 0.0

    assert fused_score(improved) >= fused_score(ids_a)


def test_rrf_input_order_invariance():
    l1 = ranked([("a", 2.0), ("b", 1.0)])
    l2 = ranked([("b", 5.0), ("c", 1.0)])
    assert list(fuse_rrf([l1, l2])) == list(fuse_rrf([l2, l1]))


# -- bucket scorer -------------------------------------------------------------

def _bucket_doc(cell, quarter, text):
    return CellDocument(key_id=f"{cell}q{quarter}", text=text)


def test_score_buckets_restricts_to_top_cells():
    cells = ranked([("d1h09", 2.0), ("d1h10", 1.0), ("d2h09", 0.5)])
    buckets = [
        _bucket_doc("d1h09", 0, "mug kitchen"),
        _bucket_doc("d1h10", 1, "mug mug kitchen"),
        _bucket_doc("d2h09", 2, "mug kitchen mug kitchen"),
    ]
    hits = score_buckets(cells, buckets, "mug kitchen", top_cells=2)
    assert set(hits.ids()) == {"d1h09q0", "d1h10q1"}


def test_score_buckets_all_empty():
    cells = ranked([("d1h09", 1.0)])
    buckets = [_bucket_doc("d1h09", q, "") for q in range(4)]
    assert list(score_buckets(cells, buckets, "mug", top_cells=1)) == []


def test_score_buckets_matches_composed_oracle():
    rng = random.Random(9)
    cells = ranked([("d1h09", 3.0), ("d1h10", 2.0)])
    buckets = [
        _bucket_doc(cell, q, " ".join(rng.choice(WORDS) for _ in range(rng.randint(3, 20))))
        for cell in ("d1h09", "d1h10", "d2h09")
        for q in range(4)
    ]
    emb = HashedBowEmbedder(dim=64)
    query = "mug kitchen garden"
    hits = score_buckets(cells, buckets, query, top_cells=2, embedder=emb)
    # oracle: rebuild the restriction by hand, then BM25 + dense + RRF formulas
    candidates = [d for d in buckets if d.text and not d.key_id.startswith("d2h09")]
    lex = bm25_oracle(candidates, query)
    dense_idx = build_dense_index(candidates, emb)
    qvec = emb.embed(query)
    dense = sorted(
        ((doc_id, float(np.dot(dense_idx.matrix[i], qvec))) for i, doc_id in enumerate(dense_idx.doc_ids)),
        key=lambda e: (-e[1], e[0]),
    )
    want = rrf_oracle([lex, dense])
    assert hits.ids() == [i for i, _ in want]


# -- persistence -----------------------------------------------------------------

def test_text_index_roundtrip(tmp_path):
    docs = _docs([("a", "mug kitchen mug"), ("b", "garden")])
    idx = build_text_index(docs)
    path = tmp_path / "text.idx.jsonl"
    save_text_index(idx, path)
    loaded = load_text_index(path)
    for query in ("mug", "garden kitchen"):
        assert list(search_text(loaded, query)) == list(search_text(idx, query))


def test_dense_index_roundtrip(tmp_path):
    emb = HashedBowEmbedder(dim=32)
    idx = build_dense_index(_docs([("a", "mug"), ("b", "garden kettle")]), emb)
    vec_path, ids_path = tmp_path / "dense.f32", tmp_path / "dense.ids.json"
    save_dense_index(idx, vec_path, ids_path)
    loaded = load_dense_index(vec_path, ids_path)
    assert loaded.doc_ids == idx.doc_ids
    assert np.array_equal(loaded.matrix, idx.matrix)
    # on-disk format is raw little-endian float32 rows
    assert vec_path.stat().st_size == len(idx.doc_ids) * idx.dim * 4


# -- kernel backends ---------------------------------------------------------------

def test_kernel_backends_agree_exactly():
    try:
        c_impl = load_backend("c")
    except ImportError:
        pytest.skip("compiled kernels not built")
    py_impl = load_backend("python")
    rng = np.random.default_rng(5)
    n_docs = 400
    norms = rng.uniform(0.3, 2.0, n_docs)
    doc_idx = rng.choice(n_docs, size=150, replace=False).astype(np.int32)
    tf = rng.integers(1, 9, size=150).astype(np.float64)
    scores_py = np.zeros(n_docs)
    scores_c = np.zeros(n_docs)
    py_impl.bm25_accumulate(doc_idx, tf, 1.37, 2.0, 1.2, norms, scores_py)
    c_impl.bm25_accumulate(doc_idx, tf, 1.37, 2.0, 1.2, norms, scores_c)
    assert np.array_equal(scores_py, scores_c)
    order = rng.permutation(n_docs).astype(np.int32)
    fused_py = np.zeros(n_docs)
    fused_c = np.zeros(n_docs)
    py_impl.rrf_accumulate(order, 60.0, fused_py)
    c_impl.rrf_accumulate(order, 60.0, fused_c)
    assert np.array_equal(fused_py, fused_c)


def test_hybrid_index_search_is_deterministic(default_stores):
    first = default_stores.obs_index.search("walnut mug kitchen", k=10)
    second = default_stores.obs_index.search("walnut mug kitchen", k=10)
    assert list(first) == list(second)
