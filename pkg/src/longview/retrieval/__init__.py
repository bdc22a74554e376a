"""Hybrid lexical/dense retrieval over cell documents."""

from .embed import Embedder, HashedBowEmbedder, RemoteEmbedder
from .index import (
    DEFAULT_B,
    DEFAULT_K1,
    DEFAULT_RRF_K,
    EMPTY_RANKING,
    DenseIndex,
    HybridIndex,
    RankedList,
    TextIndex,
    build_dense_index,
    build_text_index,
    fuse_rrf,
    load_dense_index,
    load_text_index,
    ranked,
    save_dense_index,
    save_text_index,
    score_buckets,
    search_dense,
    search_text,
)
from .kernels import KERNEL_BACKEND, load_backend
from .tokenizer import tokenize

__all__ = [
    "DEFAULT_B",
    "DEFAULT_K1",
    "DEFAULT_RRF_K",
    "EMPTY_RANKING",
    "DenseIndex",
    "Embedder",
    "HashedBowEmbedder",
    "HybridIndex",
    "KERNEL_BACKEND",
    "RankedList",
    "RemoteEmbedder",
    "TextIndex",
    "build_dense_index",
    "build_text_index",
    "fuse_rrf",
    "load_backend",
    "load_dense_index",
    "load_text_index",
    "ranked",
    "save_dense_index",
    "save_text_index",
    "score_buckets",
    "search_dense",
    "search_text",
    "tokenize",
]
