"""Engine configuration with INI-file overrides.

Every tunable named in the design has a default here; a config file
only needs the sections it changes, e.g.::

    [tmkg]
    tau_score = 0.6
    tau_margin = 0.25
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class EngineConfig:
    # retrieval
    k1: float = 1.2
    b: float = 0.75
    k_rrf: float = 60.0
    embed_dim: int = 256

    # cells
    summary_budget: int = 6000
    span_before: int = 1
    span_after: int = 2
    expand_cameras: int = 4

    # graph
    tag_count: int = 8
    person_jaccard: float = 0.5
    tag_jaccard: float = 0.3
    involves_floor: int = 2
    per_place_chain: bool = False

    # sva
    search_top_cells: int = 8
    search_bucket_cells: int = 3
    bucket_candidates: int = 8
    echo_ngram_len: int = 6
    verify_workers: int = 4
    judge_tier_weights: tuple[float, float, float, float] = (8.0, 4.0, 2.0, 1.0)  # ocr, audio, visual, context

    # tmkg
    tau_score: float = 0.55
    tau_margin: float = 0.2
    top_k_cells: int = 3
    beta_person: float = 0.3
    beta_place: float = 0.2
    beta_object: float = 0.2
    normalize_after_bonus: bool = False

    # gateway
    max_inflight: int = 4
    http_retries: int = 2

    @property
    def betas(self) -> tuple[float, float, float]:
        return (self.beta_person, self.beta_place, self.beta_object)


_SECTIONS = {
    "retrieval": ("k1", "b", "k_rrf", "embed_dim"),
    "cells": ("summary_budget", "span_before", "span_after", "expand_cameras"),
    "graph": ("tag_count", "person_jaccard", "tag_jaccard", "involves_floor", "per_place_chain"),
    "sva": (
        "search_top_cells",
        "search_bucket_cells",
        "bucket_candidates",
        "echo_ngram_len",
        "verify_workers",
    ),
    "tmkg": (
        "tau_score",
        "tau_margin",
        "top_k_cells",
        "beta_person",
        "beta_place",
        "beta_object",
        "normalize_after_bonus",
    ),
    "gateway": ("max_inflight", "http_retries"),
}


def load_config(path: str | Path | None = None) -> EngineConfig:
    config = EngineConfig()
    if path is None:
        return config
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"config file {path} not found or unreadable")
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in parser.options(section):
            if key not in keys:
                raise ConfigError(f"unknown option [{section}] {key}")
            current = getattr(config, key)
            try:
                if isinstance(current, bool):
                    value: object = parser.getboolean(section, key)
                elif isinstance(current, int):
                    value = parser.getint(section, key)
                elif isinstance(current, float):
                    value = parser.getfloat(section, key)
                else:
                    value = parser.get(section, key)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc
            setattr(config, key, value)
    return config
