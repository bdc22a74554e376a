"""Assembled read-only stores the pipelines run against.

Building a store applies the lane-level procedures (speaker consensus,
extractive action timeline when the action lane is missing), derives
summary documents at every granularity, indexes them, and constructs
the knowledge graph. Everything is immutable once built, so questions
can be answered concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .cells import (
    CellDocument,
    SubWindowKey,
    partition,
    save_documents,
    summarize_cell,
)
from .config import EngineConfig
from .errors import NotFound
from .graph import TemporalGraph, build_graph, load_graph, persist_graph
from .lanes import ActionPayload, LaneRecord, LaneSet, build_action_timeline, resolve_speakers_consensus
from .manifest import CorpusManifest, load_manifest
from .queryparse import Catalogs
from .retrieval import HashedBowEmbedder, HybridIndex


@dataclass
class EngineStores:
    manifest: CorpusManifest
    lanes: LaneSet
    catalogs: Catalogs
    config: EngineConfig
    cell_docs: list[CellDocument]
    bucket_docs: list[CellDocument]
    subwindow_records: dict[SubWindowKey, list[LaneRecord]]
    cell_index: HybridIndex
    graph: TemporalGraph
    obs_docs: list[CellDocument]
    obs_index: HybridIndex
    embedder: HashedBowEmbedder = field(default_factory=HashedBowEmbedder)

    def has_any_content(self) -> bool:
        return any(doc.text for doc in self.cell_docs)


def derive_catalogs(manifest: CorpusManifest, lanes: LaneSet) -> Catalogs:
    """Fallback catalogs scraped from the manifest and lanes."""
    persons: dict[str, str] = {}
    for p in manifest.roster:
        persons[p.id.lower()] = p.id
        persons[p.name.lower()] = p.id
    objects = {r.payload.label.lower() for r in lanes.object}  # type: ignore[union-attr]
    actions = {r.payload.verb.lower() for r in lanes.action if isinstance(r.payload, ActionPayload)}
    return Catalogs(persons=persons, places=set(), objects=objects, actions=actions)


def build_stores(
    manifest: CorpusManifest,
    lanes: LaneSet,
    catalogs: Catalogs | None = None,
    config: EngineConfig | None = None,
    gateway=None,
) -> EngineStores:
    config = config or EngineConfig()
    catalogs = catalogs or derive_catalogs(manifest, lanes)

    # lane-level procedures run once at assembly time
    transcripts = resolve_speakers_consensus(lanes.transcript, lanes.identity, manifest)
    action = lanes.action
    if not action and catalogs.actions:
        timeline = build_action_timeline(lanes.caption, lanes.identity, set(catalogs.actions))
        action = [
            LaneRecord(
                lane="action",
                camera=manifest.camera_ids()[0],
                window=t.span,
                payload=ActionPayload(t.verb, t.actor, t.co_actors),
            )
            for t in timeline
        ]
    lanes = LaneSet(
        manifest=manifest,
        identity=lanes.identity,
        caption=lanes.caption,
        object=lanes.object,
        transcript=transcripts,
        action=action,
    )

    records = lanes.all_records()
    embedder = HashedBowEmbedder(dim=config.embed_dim)

    cell_docs = [
        summarize_cell(rows, key.id, budget=config.summary_budget, gateway=gateway)
        for key, rows in sorted(partition(records, manifest, "cell").items(), key=lambda kv: kv[0].id)
    ]
    bucket_docs = [
        summarize_cell(rows, key.id, budget=config.summary_budget, gateway=gateway)
        for key, rows in sorted(partition(records, manifest, "bucket").items(), key=lambda kv: kv[0].id)
    ]
    subwindow_records = partition(records, manifest, "subwindow")

    graph = build_graph(
        lanes,
        manifest,
        gazetteer=set(catalogs.places),
        tag_count=config.tag_count,
        person_jaccard=config.person_jaccard,
        tag_jaccard=config.tag_jaccard,
        involves_floor=config.involves_floor,
        per_place_chain=config.per_place_chain,
    )
    obs_docs = [
        CellDocument(key_id=obs.id, text=obs.summary_text(), source_counts={})
        for obs in sorted(graph.observations.values(), key=lambda o: o.id)
    ]

    return EngineStores(
        manifest=manifest,
        lanes=lanes,
        catalogs=catalogs,
        config=config,
        cell_docs=cell_docs,
        bucket_docs=bucket_docs,
        subwindow_records=subwindow_records,
        cell_index=HybridIndex(cell_docs, embedder=embedder, k1=config.k1, b=config.b, k_rrf=config.k_rrf),
        graph=graph,
        obs_docs=obs_docs,
        obs_index=HybridIndex(obs_docs, embedder=embedder, k1=config.k1, b=config.b, k_rrf=config.k_rrf),
        embedder=embedder,
    )


def load_corpus_dir(directory: str | Path) -> tuple[CorpusManifest, LaneSet, Catalogs | None]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise NotFound(f"no manifest.json under {directory}")
    manifest = load_manifest(manifest_path)
    lanes_dir = directory / "lanes" if (directory / "lanes").exists() else directory
    lanes = LaneSet.load(lanes_dir, manifest)
    catalogs_path = directory / "catalogs.json"
    catalogs = Catalogs.load(catalogs_path) if catalogs_path.exists() else None
    return manifest, lanes, catalogs


def build_stores_from_dir(
    directory: str | Path,
    config: EngineConfig | None = None,
    gateway=None,
) -> EngineStores:
    manifest, lanes, catalogs = load_corpus_dir(directory)
    return build_stores(manifest, lanes, catalogs=catalogs, config=config, gateway=gateway)


def materialize(stores: EngineStores, directory: str | Path) -> None:
    """Write the derived artifacts (documents, graph segments, catalogs)."""
    directory = Path(directory)
    docs_dir = directory / "docs"
    docs_dir.mkdir(parents=True, exist_ok=True)
    save_documents(stores.cell_docs, docs_dir / "cell.docs.jsonl")
    save_documents(stores.bucket_docs, docs_dir / "bucket.docs.jsonl")
    sub_docs = [
        summarize_cell(rows, key.id, budget=stores.config.summary_budget)
        for key, rows in sorted(stores.subwindow_records.items(), key=lambda kv: kv[0].id)
        if rows
    ]
    save_documents(sub_docs, docs_dir / "subwindow.docs.jsonl")
    persist_graph(stores.graph, directory / "kg")
    stores.catalogs.save(directory / "catalogs.json")


def ensure_persisted_graph(stores: EngineStores, directory: str | Path) -> TemporalGraph:
    """Persist the graph if absent, then serve the loaded copy.

    Keeps the answering layer on the persisted representation, so the
    segment round-trip is exercised on every corpus.
    """
    kg_dir = Path(directory) / "kg"
    if not any(kg_dir.glob("*.segment.json")):
        persist_graph(stores.graph, kg_dir)
    return load_graph(kg_dir)
