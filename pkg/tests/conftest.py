"""Shared fixtures: a tiny hand-built corpus and the default synthetic one."""

from __future__ import annotations

import pytest

from longview.gateway import CallLedger, Gateway, ScriptedBackend
from longview.harness import OracleBackend, corpus_catalogs, generate_corpus, generate_questions
from longview.manifest import CameraInfo, CorpusManifest, DaySpan, Person
from longview.stores import build_stores


@pytest.fixture(scope="session")
def tiny_manifest() -> CorpusManifest:
    """One day, two hours (09:00-11:00), two cameras, three people, dim 2."""
    return CorpusManifest(
        days=1,
        epoch=0,
        day_spans=(DaySpan(9 * 3600, 11 * 3600),),
        cameras=(
            CameraInfo("ego1", "ego", wearer="p01"),
            CameraInfo("exo1", "exo"),
        ),
        roster=(Person("p01", "Alice"), Person("p02", "Bob"), Person("p03", "Carol")),
        embedding_dim=2,
    )


@pytest.fixture(scope="session")
def default_corpus():
    """The acceptance-grade synthetic corpus: seed 42, desk scale."""
    manifest, lanes, script = generate_corpus(42)
    return manifest, lanes, script


@pytest.fixture(scope="session")
def default_stores(default_corpus):
    manifest, lanes, script = default_corpus
    return build_stores(manifest, lanes, catalogs=corpus_catalogs(script))


@pytest.fixture(scope="session")
def default_questions(default_corpus):
    _, _, script = default_corpus
    return generate_questions(script, 100)


def make_oracle_gateway(script, meta, mode="clean", noise_p=0.0, noise_seed=0, routes=None):
    oracle = OracleBackend(script, meta, mode=mode, noise_p=noise_p, noise_seed=noise_seed)
    backend = ScriptedBackend(unknown_policy="consult", consult=oracle.complete, backend_id="oracle")
    return Gateway(channels={"primary": backend}, routes=routes or {}, ledger=CallLedger())


@pytest.fixture()
def oracle_gateway(default_corpus, default_questions):
    _, _, script = default_corpus
    _, meta = default_questions
    return make_oracle_gateway(script, meta)
