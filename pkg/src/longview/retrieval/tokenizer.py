"""Unicode-aware word tokenisation shared by indexing, parsing, and validators."""

from __future__ import annotations

import re

# \w minus underscore, so "Día-4" -> ["día", "4"] and "Alice's" -> ["alice", "s"]
_WORD = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric word tokens, deterministic."""
    return _WORD.findall(text.lower())
