"""Lexical (Okapi BM25) and dense retrieval with reciprocal-rank fusion.

Indexes are immutable after build and safe for concurrent searches.
Scoring inner loops live in the kernel backend (compiled when
available); everything here prepares arrays, applies deterministic
tie-breaking, and persists indexes in the documented on-disk formats.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..cells import CellDocument, parse_key
from ..errors import DimensionMismatch, DuplicateDocId, ParseError
from .embed import Embedder, HashedBowEmbedder
from .kernels import bm25_accumulate, rrf_accumulate
from .tokenizer import tokenize

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_RRF_K = 60.0


@dataclass(frozen=True)
class RankedList:
    """Descending (doc id, score) entries; ties broken by doc id ascending."""

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        ids = [doc_id for doc_id, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise DuplicateDocId("ranked list contains duplicate doc ids")
        for (a_id, a_s), (b_id, b_s) in zip(self.entries, self.entries[1:]):
            if a_s < b_s or (a_s == b_s and a_id >= b_id):
                raise ParseError("ranked list entries are not in canonical order")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]

    def top(self, k: int) -> "RankedList":
        return RankedList(self.entries[:k])

    def score_of(self, doc_id: str) -> float | None:
        for did, score in self.entries:
            if did == doc_id:
                return score
        return None


def ranked(pairs: Iterable[tuple[str, float]]) -> RankedList:
    """Canonicalise unordered (id, score) pairs into a RankedList."""
    return RankedList(tuple(sorted(pairs, key=lambda e: (-e[1], e[0]))))


EMPTY_RANKING = RankedList(())


# -- lexical index -----------------------------------------------------

class TextIndex:
    """Okapi BM25 inverted index. Immutable after construction."""

    def __init__(self, doc_ids: list[str], doc_tokens: list[list[str]], k1: float, b: float):
        if len(set(doc_ids)) != len(doc_ids):
            raise DuplicateDocId("duplicate doc ids offered to build_text_index")
        self.k1 = float(k1)
        self.b = float(b)
        self.doc_ids = list(doc_ids)
        self.N = len(doc_ids)
        self.doc_lengths = np.array([len(toks) for toks in doc_tokens], dtype=np.float64)
        self.avg_len = float(self.doc_lengths.mean()) if self.N else 0.0
        avg = self.avg_len if self.avg_len > 0 else 1.0
        # length normaliser, hoisted out of the scoring loop
        self._norms = self.k1 * (1.0 - self.b + self.b * self.doc_lengths / avg)
        postings: dict[str, tuple[list[int], list[float]]] = {}
        for idx, toks in enumerate(doc_tokens):
            for term, freq in Counter(toks).items():
                slot = postings.setdefault(term, ([], []))
                slot[0].append(idx)
                slot[1].append(float(freq))
        self.postings: dict[str, tuple[np.ndarray, np.ndarray]] = {
            term: (np.array(idxs, dtype=np.int32), np.array(freqs, dtype=np.float64))
            for term, (idxs, freqs) in postings.items()
        }

    def df(self, term: str) -> int:
        hit = self.postings.get(term)
        return 0 if hit is None else len(hit[0])

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))


def build_text_index(docs: Sequence[CellDocument], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> TextIndex:
    return TextIndex(
        doc_ids=[d.key_id for d in docs],
        doc_tokens=[tokenize(d.text) for d in docs],
        k1=k1,
        b=b,
    )


def search_text(index: TextIndex, query: str, k: int | None = None) -> RankedList:
    """Top-k documents by BM25; zero-match documents are excluded."""
    scores = np.zeros(index.N, dtype=np.float64)
    matched = np.zeros(index.N, dtype=bool)
    for term, weight in Counter(tokenize(query)).items():
        hit = index.postings.get(term)
        if hit is None:
            continue
        doc_idx, tf = hit
        bm25_accumulate(doc_idx, tf, index.idf(term), float(weight), index.k1, index._norms, scores)
        matched[doc_idx] = True
    pairs = [(index.doc_ids[i], float(scores[i])) for i in np.flatnonzero(matched)]
    result = ranked(pairs)
    return result if k is None else result.top(k)


# -- dense index -------------------------------------------------------

class DenseIndex:
    """Flat store of unit-norm vectors; brute-force exact search."""

    def __init__(self, doc_ids: list[str], matrix: np.ndarray):
        if len(set(doc_ids)) != len(doc_ids):
            raise DuplicateDocId("duplicate doc ids offered to dense index")
        if matrix.ndim != 2 or matrix.shape[0] != len(doc_ids):
            raise DimensionMismatch("matrix rows must match doc ids")
        norms = np.linalg.norm(matrix, axis=1)
        if len(doc_ids) and np.abs(norms - 1.0).max() > 1e-6:
            raise DimensionMismatch("dense index vectors must be unit-norm within 1e-6")
        self.doc_ids = list(doc_ids)
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float32)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def build_dense_index(docs: Sequence[CellDocument], embedder: Embedder) -> DenseIndex:
    """Embed documents; empty (zero-vector) texts are non-retrievable and skipped."""
    ids, rows = [], []
    for doc in docs:
        vec = embedder.embed(doc.text)
        if float(np.linalg.norm(vec)) == 0.0:
            continue
        ids.append(doc.key_id)
        rows.append(vec)
    matrix = np.vstack(rows) if rows else np.zeros((0, embedder.dim), dtype=np.float32)
    return DenseIndex(ids, matrix)


def search_dense(index: DenseIndex, query_vec: np.ndarray, k: int | None = None) -> RankedList:
    """Exact top-k by inner product (cosine, since everything is unit-norm).

    Scored row by row with np.dot so results match an independent
    brute-force scan bit for bit.
    """
    query_vec = np.asarray(query_vec, dtype=np.float32)
    if query_vec.shape != (index.dim,):
        raise DimensionMismatch(f"query dim {query_vec.shape} vs index dim {index.dim}")
    if float(np.linalg.norm(query_vec)) == 0.0:
        return EMPTY_RANKING
    pairs = [
        (doc_id, float(np.dot(index.matrix[i], query_vec)))
        for i, doc_id in enumerate(index.doc_ids)
    ]
    result = ranked(pairs)
    return result if k is None else result.top(k)


# -- fusion ------------------------------------------------------------

def fuse_rrf(lists: Sequence[RankedList], k_rrf: float = DEFAULT_RRF_K) -> RankedList:
    """Reciprocal-rank fusion: score(d) = sum over lists of 1/(k + rank)."""
    if not lists:
        raise ParseError("fuse_rrf needs at least one ranked list")
    universe: list[str] = []
    seen: dict[str, int] = {}
    for lst in lists:
        for doc_id in lst.ids():
            if doc_id not in seen:
                seen[doc_id] = len(universe)
                universe.append(doc_id)
    scores = np.zeros(len(universe), dtype=np.float64)
    for lst in lists:
        order = np.array([seen[doc_id] for doc_id in lst.ids()], dtype=np.int32)
        rrf_accumulate(order, float(k_rrf), scores)
    return ranked((doc_id, float(scores[seen[doc_id]])) for doc_id in universe)


# -- hybrid convenience --------------------------------------------------

class HybridIndex:
    """BM25 + dense over one document set, fused with RRF.

    This is the single audited fusion path used by both pipelines.
    """

    def __init__(
        self,
        docs: Sequence[CellDocument],
        embedder: Embedder | None = None,
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
        k_rrf: float = DEFAULT_RRF_K,
    ):
        self.embedder = embedder or HashedBowEmbedder()
        self.k_rrf = k_rrf
        self.docs = {d.key_id: d for d in docs}
        self.text = build_text_index(docs, k1=k1, b=b)
        self.dense = build_dense_index(docs, self.embedder)

    def search(self, query: str, k: int | None = None) -> RankedList:
        lists = [search_text(self.text, query)]
        qvec = self.embedder.embed(query)
        if float(np.linalg.norm(qvec)) > 0.0:
            lists.append(search_dense(self.dense, qvec))
        fused = fuse_rrf(lists, self.k_rrf)
        return fused if k is None else fused.top(k)


def score_buckets(
    cell_ranking: RankedList,
    bucket_docs: Sequence[CellDocument],
    query: str,
    top_cells: int,
    embedder: Embedder | None = None,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    k_rrf: float = DEFAULT_RRF_K,
) -> RankedList:
    """Rank 15-minute buckets inside the leading cells of a cell ranking.

    Buckets are scored by the fused hybrid score of their own summary
    document; buckets with empty documents are never retrieved.
    """
    if top_cells < 1:
        raise ParseError("top_cells must be >= 1")
    keep = set(cell_ranking.ids()[:top_cells])
    candidates = [
        doc
        for doc in bucket_docs
        if doc.text and parse_key(doc.key_id).cell.id in keep  # type: ignore[union-attr]
    ]
    if not candidates:
        return EMPTY_RANKING
    return HybridIndex(candidates, embedder=embedder, k1=k1, b=b, k_rrf=k_rrf).search(query)


# -- persistence -------------------------------------------------------

def save_text_index(index: TextIndex, path: str | Path) -> None:
    """Header line with corpus stats, then one postings line per term."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "n": index.N,
            "k1": index.k1,
            "b": index.b,
            "doc_ids": index.doc_ids,
            "doc_lengths": index.doc_lengths.tolist(),
        }
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for term in sorted(index.postings):
            doc_idx, tf = index.postings[term]
            row = {"t": term, "d": doc_idx.tolist(), "f": tf.tolist()}
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")


def load_text_index(path: str | Path) -> TextIndex:
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad text index header: {exc}") from exc
        index = TextIndex.__new__(TextIndex)
        index.k1 = float(header["k1"])
        index.b = float(header["b"])
        index.doc_ids = list(header["doc_ids"])
        index.N = int(header["n"])
        index.doc_lengths = np.array(header["doc_lengths"], dtype=np.float64)
        index.avg_len = float(index.doc_lengths.mean()) if index.N else 0.0
        avg = index.avg_len if index.avg_len > 0 else 1.0
        index._norms = index.k1 * (1.0 - index.b + index.b * index.doc_lengths / avg)
        index.postings = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                index.postings[row["t"]] = (
                    np.array(row["d"], dtype=np.int32),
                    np.array(row["f"], dtype=np.float64),
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"bad postings row: {exc}", line=lineno) from exc
    return index


def save_dense_index(index: DenseIndex, vectors_path: str | Path, ids_path: str | Path) -> None:
    """Flat little-endian float32 rows plus a JSON id sidecar."""
    Path(vectors_path).write_bytes(index.matrix.astype("<f4").tobytes())
    Path(ids_path).write_text(
        json.dumps({"dim": index.dim, "ids": index.doc_ids}, sort_keys=True, separators=(",", ":")),
        encoding="utf-8",
    )


def load_dense_index(vectors_path: str | Path, ids_path: str | Path) -> DenseIndex:
    sidecar = json.loads(Path(ids_path).read_text(encoding="utf-8"))
    dim, ids = int(sidecar["dim"]), list(sidecar["ids"])
    raw = np.frombuffer(Path(vectors_path).read_bytes(), dtype="<f4")
    if dim * len(ids) != raw.size:
        raise ParseError(f"dense index size mismatch: {raw.size} floats for {len(ids)} x {dim}")
    return DenseIndex(ids, raw.reshape(len(ids), dim).copy())
