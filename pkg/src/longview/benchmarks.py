"""Benchmark the compiled retrieval kernels against the pure-Python fallback.

Runs identical BM25 scoring and RRF fusion workloads through both
backends, checks that the outputs agree exactly, and reports timings.
Invoked via ``longview bench-kernels``.
"""

from __future__ import annotations

import random
import time

import numpy as np

from .cells import CellDocument
from .retrieval.index import build_text_index
from .retrieval.kernels import load_backend

_WORDS = (
    "kitchen table mug kettle garden window camera person morning evening "
    "board game puzzle lantern candle tray chop stir pour wash read play "
    "walnut amber cobalt ivory quiet routine recap scene transcript"
).split()


def _synthetic_docs(n_docs: int, rng: random.Random) -> list[CellDocument]:
    docs = []
    for i in range(n_docs):
        length = rng.randint(20, 80)
        text = " ".join(rng.choice(_WORDS) for _ in range(length))
        docs.append(CellDocument(key_id=f"doc{i:05d}", text=text))
    return docs


def _time_bm25(impl, index, queries: list[list[tuple[str, float]]]) -> float:
    started = time.perf_counter()
    for terms in queries:
        scores = np.zeros(index.N, dtype=np.float64)
        for term, weight in terms:
            hit = index.postings.get(term)
            if hit is None:
                continue
            doc_idx, tf = hit
            impl.bm25_accumulate(doc_idx, tf, index.idf(term), weight, index.k1, index._norms, scores)
    return time.perf_counter() - started


def _time_rrf(impl, lists: list[np.ndarray], n_docs: int, repeats: int) -> float:
    started = time.perf_counter()
    for _ in range(repeats):
        scores = np.zeros(n_docs, dtype=np.float64)
        for order in lists:
            impl.rrf_accumulate(order, 60.0, scores)
    return time.perf_counter() - started


def run_kernel_benchmark(n_docs: int = 2000, n_queries: int = 200, seed: int = 7) -> dict:
    rng = random.Random(seed)
    docs = _synthetic_docs(n_docs, rng)
    index = build_text_index(docs)
    queries = [
        [(rng.choice(_WORDS), float(rng.randint(1, 2))) for _ in range(rng.randint(2, 6))]
        for _ in range(n_queries)
    ]
    fusion_lists = [
        np.array(rng.sample(range(n_docs), k=min(n_docs, 500)), dtype=np.int32) for _ in range(8)
    ]

    backends = {}
    for name in ("python", "c"):
        try:
            backends[name] = load_backend(name)
        except ImportError:
            pass

    # equality audit before timing: both backends must agree bit for bit
    reference: dict[str, np.ndarray] = {}
    for name, impl in backends.items():
        scores = np.zeros(index.N, dtype=np.float64)
        for term, weight in queries[0]:
            hit = index.postings.get(term)
            if hit is not None:
                impl.bm25_accumulate(hit[0], hit[1], index.idf(term), weight, index.k1, index._norms, scores)
        fused = np.zeros(n_docs, dtype=np.float64)
        for order in fusion_lists:
            impl.rrf_accumulate(order, 60.0, fused)
        reference[name] = np.concatenate([scores, fused])
    if len(reference) == 2 and not np.array_equal(reference["python"], reference["c"]):
        raise AssertionError("kernel backends disagree; refusing to benchmark")

    results: dict = {"n_docs": n_docs, "n_queries": n_queries, "backends": {}}
    for name, impl in backends.items():
        bm25_s = _time_bm25(impl, index, queries)
        rrf_s = _time_rrf(impl, fusion_lists, n_docs, repeats=50)
        results["backends"][name] = {"bm25_s": bm25_s, "rrf_s": rrf_s}

    print(f"kernel benchmark: {n_docs} docs, {n_queries} BM25 queries, 50x8 RRF fusions")
    for name, row in results["backends"].items():
        print(f"  {name:>7}: bm25 {row['bm25_s'] * 1e3:8.1f} ms   rrf {row['rrf_s'] * 1e3:8.1f} ms")
    if {"python", "c"} <= set(results["backends"]):
        py, cc = results["backends"]["python"], results["backends"]["c"]
        print(
            f"  speedup: bm25 x{py['bm25_s'] / max(cc['bm25_s'], 1e-9):.1f}, "
            f"rrf x{py['rrf_s'] / max(cc['rrf_s'], 1e-9):.1f} (outputs verified identical)"
        )
    else:
        print("  compiled backend unavailable; showing pure-Python timings only")
    return results
