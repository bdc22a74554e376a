"""Search-Verify-Answer pipeline.

Search narrows the corpus to one primary 15-minute window, Verify
checks ~24 adjacent (camera, 5-minute) sub-windows under the
anti-confabulation validators, Answer fuses the surviving evidence
with a single judge call under a fixed evidence-priority hierarchy.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .cells import (
    BucketKey,
    SubWindowKey,
    adjacent_subwindows,
    parse_key,
    render_record,
)
from .config import EngineConfig
from .errors import EmptyCorpus, GatewayError
from .gateway import Gateway, ModelRequest
from .manifest import CorpusManifest
from .queryparse import CHOICE_LABELS, ParsedQuery, Question, parse_question
from .retrieval import RankedList, ranked, score_buckets
from .retrieval.tokenizer import tokenize
from .stores import EngineStores

EVIDENCE_TIERS = {"ocr": 3, "audio_quote": 2, "visual": 1, "context": 0}

VERIFY_SYSTEM = (
    "You check one five-minute clip against a four-choice question and reply as "
    "verify_v1 JSON. Hard rules: (1) never reuse question or choice wording unless "
    "the same words appear in a cited evidence span; (2) if the clip shows nothing "
    "relevant, set verdict=abstain; (3) any claim that states a count must localise "
    "it with camera, timestamp, and region; (4) every claim must cite the ids of "
    "the evidence spans that back it."
)

JUDGE_SYSTEM = (
    "You are the final judge for a four-choice question. Weigh the supplied "
    "evidence by its tier: on-screen text beats spoken quotes, spoken quotes beat "
    "visual descriptions, visual beats context. Ignore duplicated quotes. Reply "
    "as answer_v1 JSON."
)


@dataclass
class SearchOutcome:
    primary: BucketKey
    supporting: list[tuple[str, BucketKey]]
    tentative_choice: str | None
    trace: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Claim:
    kind: str
    text: str
    span_ids: tuple[str, ...]
    localisations: tuple[tuple[str, int, str], ...] = ()
    count_value: int | None = None


@dataclass
class VerifierReport:
    subwindow: SubWindowKey
    verdict: str  # supports | abstain
    choice: str | None = None
    claims: tuple[Claim, ...] = ()
    confidence: float = 0.0
    note: str = ""
    error: bool = False


@dataclass(frozen=True)
class EvidenceItem:
    tier: int
    text: str
    source: SubWindowKey
    confidence: float
    dedup_key: str


@dataclass
class AnswerRecord:
    question_id: str
    choice: str
    confidence: float
    supporting_views: list[dict]
    rationale: str
    ledger_total: int = 0
    trace: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "question": self.question_id,
            "choice": self.choice,
            "confidence": self.confidence,
            "supporting_views": self.supporting_views,
            "rationale": self.rationale,
            "ledger_total": self.ledger_total,
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, row: dict) -> "AnswerRecord":
        return cls(
            question_id=row["question"],
            choice=row["choice"],
            confidence=float(row["confidence"]),
            supporting_views=list(row.get("supporting_views", [])),
            rationale=row.get("rationale", ""),
            ledger_total=int(row.get("ledger_total", 0)),
            trace=dict(row.get("trace", {})),
        )


# -- evidence spans ------------------------------------------------------

def evidence_spans_for(stores: EngineStores, sub: SubWindowKey) -> list[dict]:
    """The exact spans a verifier sees for one sub-window, with stable ids."""
    records = stores.subwindow_records.get(sub, [])
    return [
        {"id": f"{sub.id}#{i}", "kind": record.lane, "text": render_record(record)}
        for i, record in enumerate(records)
    ]


# -- search --------------------------------------------------------------

def _doc_excerpt(text: str, limit: int = 360) -> str:
    return text[:limit]


def _rerank_via_gateway(
    gateway: Gateway,
    question: Question,
    ranking: RankedList,
    docs_by_id: dict[str, str],
) -> RankedList:
    """One rerank call; on any failure the input order stands."""
    candidates = ranking.ids()
    parts: list[tuple[str, str]] = [("text", f"Question: {question.text}\nChoices: {json.dumps(question.choices_dict())}")]
    for doc_id in candidates:
        parts.append(("evidence_ref", json.dumps({"id": doc_id, "text": _doc_excerpt(docs_by_id.get(doc_id, ""))})))
    req = ModelRequest(
        role="search_rerank",
        system_text="Reorder the candidate windows from most to least likely to contain the answer. Reply as rerank_v1 JSON.",
        user_parts=tuple(parts),
        expected_schema="rerank_v1",
        question_id=question.id,
    )
    try:
        reply = gateway.send(req)
    except GatewayError:
        return ranking
    if reply.parsed is None:
        return ranking
    known = set(candidates)
    order = [doc_id for doc_id in reply.parsed["order"] if doc_id in known]
    order += [doc_id for doc_id in candidates if doc_id not in order]
    # positional scores keep downstream consumers rank-driven
    n = len(order)
    return RankedList(tuple((doc_id, float(n - i)) for i, doc_id in enumerate(order)))


def _neighbours(a: BucketKey, b: BucketKey) -> bool:
    if a.cell.day != b.cell.day:
        return False
    sa = a.cell.hour * 3600 + a.quarter * 900
    sb = b.cell.hour * 3600 + b.quarter * 900
    return abs(sa - sb) <= 900


def search(
    q: Question,
    parsed: ParsedQuery,
    stores: EngineStores,
    gateway: Gateway,
    config: EngineConfig | None = None,
) -> SearchOutcome:
    """Narrow to one primary bucket plus supporting camera windows.

    Stage order: hybrid cell retrieval, cell rerank call, bucket scoring,
    bucket narrowing call (skipped when a prior channel is live, keeping
    the per-question budget constant), final pick call. Every model
    failure degrades to the local ranking.
    """
    config = config or stores.config
    if not stores.has_any_content():
        raise EmptyCorpus("no cell has any summarised content")
    query = q.all_text()

    cell_ranking = stores.cell_index.search(query)
    if not cell_ranking:
        cell_ranking = ranked((doc.key_id, 0.0) for doc in stores.cell_docs if doc.text)
    cell_ranking = cell_ranking.top(config.search_top_cells)
    cell_texts = {doc.key_id: doc.text for doc in stores.cell_docs}
    cell_ranking = _rerank_via_gateway(gateway, q, cell_ranking, cell_texts)

    bucket_ranking = score_buckets(
        cell_ranking,
        stores.bucket_docs,
        query,
        top_cells=config.search_bucket_cells,
        embedder=stores.embedder,
        k1=config.k1,
        b=config.b,
        k_rrf=config.k_rrf,
    )
    if not bucket_ranking:
        keep = set(cell_ranking.ids()[: config.search_bucket_cells])
        bucket_ranking = ranked(
            (doc.key_id, 0.0)
            for doc in stores.bucket_docs
            if parse_key(doc.key_id).cell.id in keep  # type: ignore[union-attr]
        )
    if not bucket_ranking:
        raise EmptyCorpus("no candidate bucket under the searched cells")
    bucket_ranking = bucket_ranking.top(config.bucket_candidates)
    bucket_texts = {doc.key_id: doc.text for doc in stores.bucket_docs}
    if not gateway.has_channel("prior"):
        bucket_ranking = _rerank_via_gateway(gateway, q, bucket_ranking, bucket_texts)

    parts: list[tuple[str, str]] = [("text", f"Question: {q.text}\nChoices: {json.dumps(q.choices_dict())}")]
    for bucket_id in bucket_ranking.ids():
        parts.append(("evidence_ref", json.dumps({"id": bucket_id, "text": _doc_excerpt(bucket_texts.get(bucket_id, ""))})))
    req = ModelRequest(
        role="search_final",
        system_text=(
            "Pick the single 15-minute window most likely to contain the answer, "
            "supporting camera windows, and a tentative choice. Reply as search_final_v1 JSON."
        ),
        user_parts=tuple(parts),
        expected_schema="search_final_v1",
        question_id=q.id,
    )
    primary_id = bucket_ranking.ids()[0]
    supporting: list[tuple[str, BucketKey]] = []
    tentative: str | None = None
    try:
        reply = gateway.send(req)
    except GatewayError:
        reply = None
    if reply is not None and reply.parsed is not None:
        candidate = reply.parsed["primary"]
        if candidate in set(bucket_ranking.ids()):
            primary_id = candidate
        tentative = reply.parsed["tentative_choice"]
        primary_key = parse_key(primary_id)
        for row in reply.parsed["supporting"]:
            try:
                bucket = parse_key(row["bucket"])
            except Exception:
                continue
            if isinstance(bucket, BucketKey) and isinstance(primary_key, BucketKey) and _neighbours(bucket, primary_key):
                supporting.append((row["camera"], bucket))
    primary = parse_key(primary_id)
    assert isinstance(primary, BucketKey)
    return SearchOutcome(
        primary=primary,
        supporting=supporting,
        tentative_choice=tentative,
        trace={
            "cells": [[i, s] for i, s in cell_ranking],
            "buckets": [[i, s] for i, s in bucket_ranking],
        },
    )


# -- verification ----------------------------------------------------------

def _ngrams(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def validate_report(
    report: VerifierReport,
    prompt_texts: list[str],
    evidence_spans: dict[str, dict],
    empty_flag: bool,
    echo_ngram_len: int = 6,
) -> tuple[bool, str | None]:
    """The four structural validity rules on verifier output. Pure.

    ABSTAIN: no supports verdict on an empty clip. GROUND: claims may
    only cite known span ids. NO-ECHO: quote-bearing claims (audio/ocr)
    may not contain a long n-gram of the question or choices unless a
    cited span contains it too. LOCALISE: counting claims need at least
    one (camera, time, region) localisation.
    """
    if empty_flag and report.verdict == "supports":
        return False, "ABSTAIN: supports verdict on an empty clip"
    for claim in report.claims:
        for span_id in claim.span_ids:
            if span_id not in evidence_spans:
                return False, f"GROUND: claim cites unknown span {span_id!r}"
    prompt_grams: set[tuple[str, ...]] = set()
    for text in prompt_texts:
        prompt_grams |= _ngrams(tokenize(text), echo_ngram_len)
    for claim in report.claims:
        if claim.kind not in ("audio_quote", "ocr"):
            continue
        claim_grams = _ngrams(tokenize(claim.text), echo_ngram_len)
        echoed = claim_grams & prompt_grams
        if not echoed:
            continue
        cited_grams: set[tuple[str, ...]] = set()
        for span_id in claim.span_ids:
            cited_grams |= _ngrams(tokenize(evidence_spans[span_id]["text"]), echo_ngram_len)
        if echoed - cited_grams:
            return False, "NO-ECHO: claim repeats prompt wording absent from its cited spans"
    for claim in report.claims:
        if claim.count_value is not None and not claim.localisations:
            return False, "LOCALISE: counting claim has no spatial localisation"
    return True, None


def _report_from_payload(sub: SubWindowKey, payload: dict) -> VerifierReport:
    claims = tuple(
        Claim(
            kind=c["kind"],
            text=c["text"],
            span_ids=tuple(c["evidence_span_ids"]),
            localisations=tuple((l["camera"], l["t"], l["region"]) for l in c["localisations"]),
            count_value=c["count_value"],
        )
        for c in payload["claims"]
    )
    return VerifierReport(
        subwindow=sub,
        verdict=payload["verdict"],
        choice=payload["choice"],
        claims=claims,
        confidence=payload["confidence"],
        note=payload.get("note", ""),
    )


def verify(
    sub: SubWindowKey,
    q: Question,
    stores: EngineStores,
    gateway: Gateway,
    config: EngineConfig | None = None,
) -> VerifierReport:
    """Verify one sub-window; rejected or failed replies become abstains.

    Empty sub-windows abstain without spending a model call.
    """
    config = config or stores.config
    spans = evidence_spans_for(stores, sub)
    if not spans:
        return VerifierReport(subwindow=sub, verdict="abstain", note="empty sub-window")
    parts: list[tuple[str, str]] = [("text", f"Question: {q.text}\nChoices: {json.dumps(q.choices_dict())}")]
    parts.append(("frame_ref", f"frame://{sub.camera}/d{sub.day}s{sub.slot}"))
    for span in spans:
        parts.append(("evidence_ref", json.dumps(span, sort_keys=True)))
    req = ModelRequest(
        role="verify",
        system_text=VERIFY_SYSTEM,
        user_parts=tuple(parts),
        expected_schema="verify_v1",
        question_id=q.id,
    )
    try:
        reply = gateway.send(req)
    except GatewayError as exc:
        return VerifierReport(subwindow=sub, verdict="abstain", note=f"gateway error: {exc}", error=True)
    if reply.parsed is None:
        return VerifierReport(subwindow=sub, verdict="abstain", note=f"schema violation: {reply.schema_error}")
    report = _report_from_payload(sub, reply.parsed)
    prompt_texts = [q.text] + [text for _, text in q.choices]
    span_map = {span["id"]: span for span in spans}
    ok, reason = validate_report(report, prompt_texts, span_map, empty_flag=False, echo_ngram_len=config.echo_ngram_len)
    if not ok:
        return VerifierReport(subwindow=sub, verdict="abstain", note=f"validator rejection: {reason}")
    return report


# -- evidence ranking -----------------------------------------------------

def rank_evidence(
    reports: list[VerifierReport],
    primary: BucketKey,
    manifest: CorpusManifest,
) -> list[EvidenceItem]:
    """Flatten claims into tier-ordered, deduplicated evidence items."""
    anchor_mid = primary.span(manifest).midpoint
    items: list[EvidenceItem] = []
    for report in sorted(reports, key=lambda r: r.subwindow.id):
        for claim in report.claims:
            items.append(
                EvidenceItem(
                    tier=EVIDENCE_TIERS[claim.kind],
                    text=claim.text,
                    source=report.subwindow,
                    confidence=report.confidence,
                    dedup_key=" ".join(tokenize(claim.text)),
                )
            )
    items.sort(
        key=lambda item: (
            -item.tier,
            -item.confidence,
            abs(item.source.span().midpoint - anchor_mid),
            item.source.id,
        )
    )
    out: list[EvidenceItem] = []
    emitted: dict[str, int] = {}
    for item in items:
        seen_tier = emitted.get(item.dedup_key)
        if seen_tier is not None and seen_tier >= item.tier:
            continue
        emitted[item.dedup_key] = item.tier
        out.append(item)
    return out


# -- judging ---------------------------------------------------------------

def weighted_overlap_choice(
    choices: dict[str, str],
    weighted_texts: list[tuple[float, str]],
    tie_break: str | None = None,
) -> tuple[str, float]:
    """Deterministic local answer rule: tier-weighted lexical overlap.

    Returns (label, winning score). Ties fall to ``tie_break`` when it
    is among the winners, else the alphabetically first winner; an
    all-zero board falls back to label A.
    """
    scores: dict[str, float] = {}
    for label, text in choices.items():
        choice_tokens = set(tokenize(text))
        total = 0.0
        for weight, evidence_text in weighted_texts:
            total += weight * len(choice_tokens & set(tokenize(evidence_text)))
        scores[label] = total
    best = max(scores.values()) if scores else 0.0
    if best <= 0.0:
        return (tie_break or "A"), 0.0
    winners = sorted(label for label, s in scores.items() if s == best)
    if tie_break in winners:
        return tie_break, best
    return winners[0], best


_TIER_INDEX = {3: 0, 2: 1, 1: 2, 0: 3}  # tier -> judge weight slot


def judge(
    q: Question,
    evidence: list[EvidenceItem],
    outcome: SearchOutcome,
    prior_text: str | None,
    gateway: Gateway,
    config: EngineConfig,
) -> AnswerRecord:
    """Single judge call; an invalid reply falls back to the local rule."""
    parts: list[tuple[str, str]] = [("text", f"Question: {q.text}\nChoices: {json.dumps(q.choices_dict())}")]
    if outcome.tentative_choice:
        parts.append(("text", f"Tentative choice from search: {outcome.tentative_choice}"))
    if prior_text:
        parts.append(("text", f"External prior: {prior_text}"))
    for item in evidence:
        parts.append(
            (
                "evidence_ref",
                json.dumps(
                    {"tier": item.tier, "text": item.text, "window": item.source.id, "confidence": item.confidence},
                    sort_keys=True,
                ),
            )
        )
    req = ModelRequest(
        role="judge",
        system_text=JUDGE_SYSTEM,
        user_parts=tuple(parts),
        expected_schema="answer_v1",
        question_id=q.id,
    )
    try:
        reply = gateway.send(req)
    except GatewayError:
        reply = None
    if reply is not None and reply.parsed is not None:
        payload = reply.parsed
        return AnswerRecord(
            question_id=q.id,
            choice=payload["choice"],
            confidence=payload["confidence"],
            supporting_views=payload["supporting_views"],
            rationale=payload["rationale"],
        )
    weights = config.judge_tier_weights
    weighted = [(weights[_TIER_INDEX[i.tier]], i.text) for i in evidence]
    label, score = weighted_overlap_choice(q.choices_dict(), weighted, tie_break=outcome.tentative_choice)
    views = []
    seen_cams = set()
    for item in evidence:
        if item.source.camera not in seen_cams:
            seen_cams.add(item.source.camera)
            views.append({"camera": item.source.camera, "window": item.source.id})
    return AnswerRecord(
        question_id=q.id,
        choice=label,
        confidence=0.3 if score > 0 else 0.0,
        supporting_views=views[:4],
        rationale="local fallback: tier-weighted lexical overlap",
        trace={"fallback_used": True},
    )


# -- whole pipeline ---------------------------------------------------------

def answer_question_sva(
    q: Question,
    stores: EngineStores,
    gateway: Gateway,
    config: EngineConfig | None = None,
) -> AnswerRecord:
    """Run all three stages for one question and account for every call."""
    config = config or stores.config
    parsed = parse_question(q, stores.manifest, stores.catalogs)
    outcome = search(q, parsed, stores, gateway, config)

    cameras: list[str] = []
    for camera, _ in outcome.supporting:
        if camera not in cameras:
            cameras.append(camera)
    for camera in stores.manifest.camera_ids():
        if len(cameras) >= config.expand_cameras:
            break
        if camera not in cameras:
            cameras.append(camera)
    cameras = cameras[: config.expand_cameras]

    subwindows = adjacent_subwindows(
        outcome.primary,
        cameras,
        stores.manifest,
        span_before=config.span_before,
        span_after=config.span_after,
    )
    with ThreadPoolExecutor(max_workers=max(1, config.verify_workers)) as pool:
        reports = list(pool.map(lambda sub: verify(sub, q, stores, gateway, config), subwindows))
    reports.sort(key=lambda r: r.subwindow.id)

    evidence = rank_evidence(reports, outcome.primary, stores.manifest)

    prior_text: str | None = None
    if gateway.has_channel("prior"):
        prior_req = ModelRequest(
            role="prior",
            system_text="Give a short reasoning trace about the narrowed clip.",
            user_parts=(
                ("text", f"Question: {q.text}\nChoices: {json.dumps(q.choices_dict())}"),
                ("text", f"Primary window: {outcome.primary.id}"),
            ),
            expected_schema="prior_v1",
            question_id=q.id,
        )
        try:
            prior_reply = gateway.send(prior_req)
            if prior_reply.parsed is not None:
                prior_text = prior_reply.parsed["text"]
        except GatewayError:
            prior_text = None

    record = judge(q, evidence, outcome, prior_text, gateway, config)
    abstains = sum(1 for r in reports if r.verdict == "abstain")
    record.ledger_total = gateway.ledger.total(q.id)
    record.trace.update(
        {
            "pipeline": "sva",
            "primary": outcome.primary.id,
            "verified_windows": len(subwindows),
            "abstains": abstains,
            "evidence_items": len(evidence),
            "parsed_intent": parsed.intent,
        }
    )
    return record
