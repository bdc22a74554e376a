"""Synthetic corpus, question generation, oracle backend, and evaluation."""

from .evaluate import EvalReport, evaluate, load_answers, load_question_rows, save_answers
from .generate import (
    GroundTruthScript,
    Happening,
    HarnessConfig,
    corpus_catalogs,
    generate_corpus,
    real_corpus_manifest,
    write_corpus,
)
from .oracle import INJECTION_MODES, OracleBackend
from .questions import DEFAULT_INTENT_MIX, generate_questions

__all__ = [
    "DEFAULT_INTENT_MIX",
    "EvalReport",
    "GroundTruthScript",
    "Happening",
    "HarnessConfig",
    "INJECTION_MODES",
    "OracleBackend",
    "corpus_catalogs",
    "evaluate",
    "generate_corpus",
    "generate_questions",
    "load_answers",
    "load_question_rows",
    "real_corpus_manifest",
    "save_answers",
    "write_corpus",
]
