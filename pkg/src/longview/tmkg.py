"""Knowledge-graph answering: threshold-gated cell selection over the
graph, one grounded answer call, and the staged fallback chain.

A "cell" here is a GlobalEvent: one 5-minute time unit with all the
camera views that were aggregated into it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .config import EngineConfig
from .errors import EmptyGraph, NotFound
from .gateway import Gateway, ModelRequest
from .graph import TemporalGraph, rerank_with_predicates
from .queryparse import ParsedQuery, Question, parse_question
from .retrieval import RankedList, ranked
from .stores import EngineStores
from .sva import AnswerRecord, weighted_overlap_choice

ANSWER_SYSTEM = (
    "Answer the four-choice question from the supplied multi-camera evidence "
    "bundles and frames. Ground the choice in what the cells actually contain "
    "and reply as answer_v1 JSON."
)


@dataclass
class SelectionResult:
    mode: str  # single | concat
    cells: list[str]  # GlobalEvent ids, best first
    top_score: float
    second_score: float
    margin: float
    trace: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "cells": self.cells,
            "top_score": self.top_score,
            "second_score": self.second_score,
            "margin": self.margin,
        }


def _slot_minutes(graph: TemporalGraph, obs_id: str) -> tuple[int, int, int]:
    key = graph.observations[obs_id].key
    start_min = (key.slot * 300) // 60
    return key.day, start_min, start_min + 5


def _temporal_filter(base: RankedList, parsed: ParsedQuery, graph: TemporalGraph) -> RankedList:
    """Drop observations outside the parsed day/time constraints.

    Falls back to the unfiltered ranking when the constraints would
    empty it, so a misparsed date can only soften retrieval, not kill it.
    """
    if parsed.day is None and parsed.time_range is None:
        return base
    kept = []
    for obs_id, score in base:
        day, lo, hi = _slot_minutes(graph, obs_id)
        if parsed.day is not None and day != parsed.day:
            continue
        if parsed.time_range is not None:
            t0, t1 = parsed.time_range
            if hi <= t0 or lo > t1:
                continue
        kept.append((obs_id, score))
    return ranked(kept) if kept else base


def select_cells(
    parsed: ParsedQuery,
    graph: TemporalGraph,
    stores: EngineStores,
    tau_score: float | None = None,
    tau_margin: float | None = None,
    top_k: int | None = None,
    config: EngineConfig | None = None,
) -> SelectionResult:
    """Pick the evidence cell(s): a single event when the top score and
    margin clear the thresholds, otherwise the top-K concatenation.

    Scores are RRF-fused hybrid scores normalised by the pre-bonus top
    score (so the leader sits at 1.0 before graph bonuses); a
    ``normalize_after_bonus`` switch flips that order. An
    order-before/after intent remaps the winning event one step along
    the PRECEDES chain.
    """
    config = config or stores.config
    tau_score = config.tau_score if tau_score is None else tau_score
    tau_margin = config.tau_margin if tau_margin is None else tau_margin
    top_k = config.top_k_cells if top_k is None else top_k
    if not graph.observations:
        raise EmptyGraph("no observations in the graph")

    base = stores.obs_index.search(parsed.raw)
    if not base:
        base = ranked((obs_id, 0.0) for obs_id in graph.observations)
    base = _temporal_filter(base, parsed, graph)

    if not config.normalize_after_bonus:
        top_raw = base.entries[0][1]
        if top_raw > 0:
            base = RankedList(tuple((i, s / top_raw) for i, s in base))
    if parsed.has_relational_constraints():
        base = rerank_with_predicates(base, parsed, graph, betas=config.betas)
    if config.normalize_after_bonus:
        top_raw = base.entries[0][1]
        if top_raw > 0:
            base = RankedList(tuple((i, s / top_raw) for i, s in base))

    event_scores: dict[str, float] = {}
    for obs_id, score in base:
        event = graph.event_of(obs_id)
        if event is None:
            continue
        if event.id not in event_scores or score > event_scores[event.id]:
            event_scores[event.id] = score
    if not event_scores:
        raise EmptyGraph("no events reachable from the ranked observations")
    events_ranked = ranked(event_scores.items())

    remapped = False
    if parsed.intent == "order_before_after" and parsed.order_direction:
        top_event = events_ranked.ids()[0]
        hops = graph.traverse_precedes(top_event, parsed.order_direction, steps=1)
        if hops:
            target = hops[0]
            top_score = events_ranked.entries[0][1]
            rest = [(i, s) for i, s in events_ranked if i not in (target, top_event)]
            events_ranked = RankedList(tuple([(target, top_score)] + rest))
            remapped = True

    top_score = events_ranked.entries[0][1]
    second_score = events_ranked.entries[1][1] if len(events_ranked) > 1 else 0.0
    margin = (top_score - second_score) / top_score if top_score > 0 else 0.0
    single = top_score >= tau_score and margin >= tau_margin
    cells = events_ranked.ids()[:1] if single else events_ranked.ids()[:top_k]
    return SelectionResult(
        mode="single" if single else "concat",
        cells=cells,
        top_score=top_score,
        second_score=second_score,
        margin=margin,
        trace=[(i, s) for i, s in events_ranked.top(max(top_k, 5))] + ([("remapped", 1.0)] if remapped else []),
    )


# -- grounded answering ---------------------------------------------------

def _bundle_parts(graph: TemporalGraph, event_id: str) -> list[tuple[str, str]]:
    event = graph.events.get(event_id)
    if event is None:
        raise NotFound(f"event {event_id!r} not in graph")
    parts: list[tuple[str, str]] = []
    for obs_id in sorted(event.member_observations):
        obs = graph.observations[obs_id]
        parts.append(("frame_ref", f"frame://{obs.key.camera}/d{obs.key.day}s{obs.key.slot}"))
        parts.append(
            (
                "evidence_ref",
                json.dumps(
                    {
                        "observation": obs.id,
                        "captions": list(obs.caption_texts),
                        "transcripts": list(obs.transcript_texts),
                        "objects": list(obs.object_labels),
                        "tags": list(obs.tags),
                        "persons": sorted(obs.persons),
                        "place": obs.place,
                    },
                    sort_keys=True,
                ),
            )
        )
    return parts


def _excerpt_texts(graph: TemporalGraph, cells: list[str]) -> list[tuple[float, str]]:
    """Transcript and caption excerpts weighted audio over visual."""
    weighted: list[tuple[float, str]] = []
    for event_id in cells:
        event = graph.events.get(event_id)
        if event is None:
            continue
        for obs_id in sorted(event.member_observations):
            obs = graph.observations[obs_id]
            weighted.extend((4.0, text) for text in obs.transcript_texts)
            weighted.extend((2.0, text) for text in obs.caption_texts)
    return weighted


def answer_grounded(
    q: Question,
    selection: SelectionResult,
    graph: TemporalGraph,
    stores: EngineStores,
    gateway: Gateway,
    config: EngineConfig | None = None,
) -> AnswerRecord:
    """One grounded answer call over the selected cells, total by fallback.

    Channel chain first (primary, then any alternative); when every
    channel fails the local caption-excerpt rule answers, and with no
    excerpts at all the record degrades to label A at zero confidence.
    """
    parts: list[tuple[str, str]] = [("text", f"Question: {q.text}\nChoices: {json.dumps(q.choices_dict())}")]
    for event_id in selection.cells:
        parts.extend(_bundle_parts(graph, event_id))
    req = ModelRequest(
        role="tmkg_answer",
        system_text=ANSWER_SYSTEM,
        user_parts=tuple(parts),
        expected_schema="answer_v1",
        question_id=q.id,
    )

    def caption_excerpt_rule(_req: ModelRequest) -> dict:
        weighted = _excerpt_texts(graph, selection.cells)
        label, score = weighted_overlap_choice(q.choices_dict(), weighted)
        cameras: list[str] = []
        for event_id in selection.cells:
            event = graph.events.get(event_id)
            if event is None:
                continue
            for obs_id in sorted(event.member_observations):
                camera = graph.observations[obs_id].key.camera
                if camera not in cameras:
                    cameras.append(camera)
        return {
            "choice": label,
            "confidence": 0.25 if score > 0 else 0.0,
            "supporting_views": cameras[:4],
            "rationale": "caption-excerpt fallback",
        }

    reply = gateway.run_with_fallback(req, default_fn=caption_excerpt_rule)
    payload = reply.parsed if reply.parsed is not None else caption_excerpt_rule(req)
    record = AnswerRecord(
        question_id=q.id,
        choice=payload["choice"],
        confidence=payload["confidence"],
        supporting_views=[
            v if isinstance(v, dict) else {"camera": v, "window": None} for v in payload["supporting_views"]
        ],
        rationale=payload["rationale"],
    )
    if reply.synthetic:
        record.trace["fallback_used"] = True
    return record


def answer_question_tmkg(
    q: Question,
    stores: EngineStores,
    gateway: Gateway,
    config: EngineConfig | None = None,
    graph: TemporalGraph | None = None,
) -> AnswerRecord:
    """Parse, select cells, answer: one model call on the happy path."""
    config = config or stores.config
    graph = graph or stores.graph
    parsed = parse_question(q, stores.manifest, stores.catalogs)
    selection = select_cells(parsed, graph, stores, config=config)
    record = answer_grounded(q, selection, graph, stores, gateway, config)
    record.ledger_total = gateway.ledger.total(q.id)
    record.trace.update(
        {
            "pipeline": "tmkg",
            "selection": selection.to_dict(),
            "parsed_intent": parsed.intent,
        }
    )
    return record
