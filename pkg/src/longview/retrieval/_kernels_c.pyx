# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled retrieval kernels; behaviourally identical to _kernels_py.

The BM25 accumulation is the hot loop of lexical search: one pass per
query term over that term's postings. Inputs arrive as C-contiguous
arrays prepared by the index layer, so the loops run without Python
object traffic.
"""

BACKEND = "c"


def bm25_accumulate(const int[::1] doc_idx, const double[::1] tf,
                    double idf, double weight, double k1,
                    const double[::1] norms, double[::1] scores):
    cdef Py_ssize_t n = doc_idx.shape[0]
    cdef Py_ssize_t j
    cdef int i
    cdef double f
    cdef double top = idf * weight * (k1 + 1.0)
    for j in range(n):
        i = doc_idx[j]
        f = tf[j]
        scores[i] += top * f / (f + norms[i])


def rrf_accumulate(const int[::1] order, double k_rrf, double[::1] scores):
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t r
    for r in range(n):
        scores[order[r]] += 1.0 / (k_rrf + (r + 1.0))
