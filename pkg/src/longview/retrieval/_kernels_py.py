"""Pure-Python retrieval kernels.

Reference implementation of the scoring inner loops; the compiled
extension in ``_kernels_c.pyx`` must match it bit for bit. Selected at
import time by ``kernels.py`` when the extension is unavailable or
``LONGVIEW_PURE_PYTHON`` is set.
"""

from __future__ import annotations

BACKEND = "python"


def bm25_accumulate(doc_idx, tf, idf, weight, k1, norms, scores) -> None:
    """Add one query term's BM25 contribution into ``scores``.

    ``norms[i]`` is the precomputed length normaliser
    k1 * (1 - b + b * len_i / avg_len); ``weight`` is the query-side
    term multiplicity.
    """
    top = idf * weight * (k1 + 1.0)
    for i, f in zip(doc_idx.tolist(), tf.tolist()):
        scores[i] += top * f / (f + norms[i])


def rrf_accumulate(order, k_rrf, scores) -> None:
    """Add one ranked list's reciprocal-rank contributions into ``scores``.

    ``order`` holds document indices from best to worst; ranks are
    1-based.
    """
    for rank, i in enumerate(order.tolist(), start=1):
        scores[i] += 1.0 / (k_rrf + rank)
