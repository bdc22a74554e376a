"""Temporal hierarchy over the corpus and per-unit summary documents.

Three granularities:

* cell       -- one (day, hour) of the recorded span,
* bucket     -- one 15-minute quarter of a cell,
* sub-window -- one (camera, 5-minute slot) pair.

Keys have stable string ids used as document ids in the retrieval
indexes, e.g. ``d2h10``, ``d2h10q3``, ``exo1@d2s126``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

from .errors import GatewayError, ParseError, ValidationError
from .lanes import (
    ActionPayload,
    CaptionPayload,
    IdentityPayload,
    LaneRecord,
    ObjectPayload,
    TranscriptPayload,
)
from .manifest import SECONDS_PER_DAY, CorpusManifest, TimeWindow

SLOT_SECONDS = 300
BUCKET_SECONDS = 900
CELL_SECONDS = 3600

Granularity = Literal["cell", "bucket", "subwindow"]


@dataclass(frozen=True, order=True)
class CellKey:
    day: int
    hour: int

    @property
    def id(self) -> str:
        return f"d{self.day}h{self.hour:02d}"

    def span(self, manifest: CorpusManifest) -> TimeWindow:
        base = (self.day - 1) * SECONDS_PER_DAY
        hour = TimeWindow(base + self.hour * CELL_SECONDS, base + (self.hour + 1) * CELL_SECONDS)
        clipped = hour.intersect(manifest.day_window(self.day))
        if clipped is None:
            raise ValidationError(f"cell {self.id} outside the recorded day span")
        return clipped


@dataclass(frozen=True, order=True)
class BucketKey:
    cell: CellKey
    quarter: int

    def __post_init__(self):
        if not 0 <= self.quarter <= 3:
            raise ValidationError(f"quarter {self.quarter} outside [0, 3]")

    @property
    def id(self) -> str:
        return f"{self.cell.id}q{self.quarter}"

    def span(self, manifest: CorpusManifest) -> TimeWindow:
        base = (self.cell.day - 1) * SECONDS_PER_DAY
        start = base + self.cell.hour * CELL_SECONDS + self.quarter * BUCKET_SECONDS
        clipped = TimeWindow(start, start + BUCKET_SECONDS).intersect(manifest.day_window(self.cell.day))
        if clipped is None:
            raise ValidationError(f"bucket {self.id} outside the recorded day span")
        return clipped


@dataclass(frozen=True, order=True)
class SubWindowKey:
    camera: str
    day: int
    slot: int

    @property
    def id(self) -> str:
        return f"{self.camera}@d{self.day}s{self.slot:03d}"

    def span(self, manifest: CorpusManifest | None = None) -> TimeWindow:
        base = (self.day - 1) * SECONDS_PER_DAY
        return TimeWindow(base + self.slot * SLOT_SECONDS, base + (self.slot + 1) * SLOT_SECONDS)


_CELL_RE = re.compile(r"^d(\d+)h(\d+)$")
_BUCKET_RE = re.compile(r"^d(\d+)h(\d+)q([0-3])$")
_SUBWINDOW_RE = re.compile(r"^(.+)@d(\d+)s(\d+)$")


def parse_key(key_id: str) -> CellKey | BucketKey | SubWindowKey:
    m = _BUCKET_RE.match(key_id)
    if m:
        return BucketKey(CellKey(int(m.group(1)), int(m.group(2))), int(m.group(3)))
    m = _CELL_RE.match(key_id)
    if m:
        return CellKey(int(m.group(1)), int(m.group(2)))
    m = _SUBWINDOW_RE.match(key_id)
    if m:
        return SubWindowKey(m.group(1), int(m.group(2)), int(m.group(3)))
    raise ParseError(f"unrecognised key id {key_id!r}")


# -- enumeration -------------------------------------------------------

def enumerate_cells(manifest: CorpusManifest) -> list[CellKey]:
    """All (day, hour) cells whose hour overlaps the day's recorded span."""
    keys = []
    for day in range(1, manifest.days + 1):
        span = manifest.day_span(day)
        first = span.start // CELL_SECONDS
        last = (span.end - 1) // CELL_SECONDS
        keys.extend(CellKey(day, hour) for hour in range(first, last + 1))
    return keys


def enumerate_buckets(manifest: CorpusManifest) -> list[BucketKey]:
    keys = []
    for cell in enumerate_cells(manifest):
        day_window = manifest.day_window(cell.day)
        base = (cell.day - 1) * SECONDS_PER_DAY
        for quarter in range(4):
            start = base + cell.hour * CELL_SECONDS + quarter * BUCKET_SECONDS
            if TimeWindow(start, start + BUCKET_SECONDS).intersect(day_window) is not None:
                keys.append(BucketKey(cell, quarter))
    return keys


def day_slots(manifest: CorpusManifest, day: int) -> range:
    """5-minute slot indices fully inside the day's recorded span."""
    span = manifest.day_span(day)
    first = (span.start + SLOT_SECONDS - 1) // SLOT_SECONDS
    last = span.end // SLOT_SECONDS
    return range(first, last)


def enumerate_subwindows(manifest: CorpusManifest) -> list[SubWindowKey]:
    keys = []
    for day in range(1, manifest.days + 1):
        for slot in day_slots(manifest, day):
            for camera in manifest.camera_ids():
                keys.append(SubWindowKey(camera, day, slot))
    return keys


def bucket_for_time(t: int, manifest: CorpusManifest) -> BucketKey:
    """Bucket containing the absolute timestamp ``t``."""
    day = t // SECONDS_PER_DAY + 1
    sod = t % SECONDS_PER_DAY
    return BucketKey(CellKey(day, sod // CELL_SECONDS), (sod % CELL_SECONDS) // BUCKET_SECONDS)


def slot_for_time(t: int) -> int:
    return (t % SECONDS_PER_DAY) // SLOT_SECONDS


# -- partitioning ------------------------------------------------------

def partition(
    records: list[LaneRecord],
    manifest: CorpusManifest,
    granularity: Granularity,
) -> dict[CellKey | BucketKey | SubWindowKey, list[LaneRecord]]:
    """Assign every record to every key its window overlaps.

    The returned map carries *all* keys of the granularity, including
    empty ones, so callers can enumerate the corpus without the lanes.
    Records spanning a boundary are duplicated, never split.
    """
    if granularity == "cell":
        keys: list = enumerate_cells(manifest)
    elif granularity == "bucket":
        keys = enumerate_buckets(manifest)
    elif granularity == "subwindow":
        keys = enumerate_subwindows(manifest)
    else:
        raise ValidationError(f"unknown granularity {granularity!r}")

    out: dict = {key: [] for key in keys}
    spans = {key: key.span(manifest) for key in keys}
    by_day: dict[int, list] = {}
    for key in keys:
        day = key.day if not isinstance(key, BucketKey) else key.cell.day
        by_day.setdefault(day, []).append(key)

    for record in records:
        for key in by_day.get(record.window.day(), []):
            if isinstance(key, SubWindowKey) and key.camera != record.camera:
                continue
            if spans[key].overlaps(record.window):
                out[key].append(record)
    for key in keys:
        out[key].sort(key=lambda r: (r.window.start, r.camera, r.lane, r.text))
    return out


# -- summary documents -------------------------------------------------

_LANE_ORDER = ("transcript", "caption", "action", "object", "identity")


@dataclass
class CellDocument:
    key_id: str
    text: str
    source_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"key": self.key_id, "text": self.text, "source_counts": self.source_counts}

    @classmethod
    def from_dict(cls, row: dict) -> "CellDocument":
        return cls(key_id=row["key"], text=row["text"], source_counts=dict(row["source_counts"]))


def _clock(t: int) -> str:
    sod = t % SECONDS_PER_DAY
    return f"{sod // 3600:02d}:{(sod % 3600) // 60:02d}"


def render_record(record: LaneRecord) -> str:
    """One-line rendering used by extractive summaries and prompts."""
    stamp = f"[{_clock(record.window.start)} {record.camera}]"
    p = record.payload
    if isinstance(p, TranscriptPayload):
        who = p.speaker if p.speaker else "unknown speaker"
        return f"{stamp} {who}: \"{p.text}\""
    if isinstance(p, CaptionPayload):
        return f"{stamp} {p.text}"
    if isinstance(p, ActionPayload):
        co = f" with {', '.join(sorted(p.co_actors))}" if p.co_actors else ""
        return f"{stamp} {p.actor} {p.verb}{co}"
    if isinstance(p, ObjectPayload):
        return f"{stamp} {p.label} at {p.region}"
    if isinstance(p, IdentityPayload):
        return f"{stamp} {p.person or 'someone'} present"
    return stamp


def _extractive_text(records: list[LaneRecord], budget: int) -> str:
    groups = {name: [] for name in _LANE_ORDER}
    for record in records:
        groups[record.lane].append(record)
    lines: list[str] = []
    used = 0
    for name in _LANE_ORDER:
        for record in sorted(groups[name], key=lambda r: (r.window.start, r.camera, r.text)):
            line = render_record(record)
            cost = len(line) + (1 if lines else 0)
            if used + cost > budget:
                return "\n".join(lines)
            lines.append(line)
            used += cost
    return "\n".join(lines)


def summarize_cell(
    records: list[LaneRecord],
    key_id: str,
    budget: int = 4000,
    gateway=None,
) -> CellDocument:
    """Summary document for one temporal unit.

    With a gateway the text comes from a ``summarise`` model call over
    the canonical rendering; otherwise (or on gateway failure, flagged
    in ``source_counts``) it is an extractive concatenation ordered
    transcripts first, truncated at a record boundary.
    """
    if budget <= 0:
        raise ValidationError("summary budget must be positive")
    counts: dict[str, int] = {name: 0 for name in _LANE_ORDER}
    for record in records:
        counts[record.lane] += 1
    if gateway is not None and records:
        from .gateway import ModelRequest  # local import to avoid a cycle

        rendering = _extractive_text(records, budget=10**9)
        req = ModelRequest(
            role="summarise",
            system_text="Summarise the observations into a compact factual digest.",
            user_parts=(("text", f"unit {key_id}"), ("evidence_ref", rendering)),
            expected_schema="summary_v1",
            budget=budget,
        )
        try:
            reply = gateway.send(req)
            if reply.parsed is not None:
                return CellDocument(key_id=key_id, text=reply.parsed["text"][:budget], source_counts=counts)
            counts["gateway_fallback"] = 1
        except GatewayError:
            counts["gateway_fallback"] = 1
    return CellDocument(key_id=key_id, text=_extractive_text(records, budget), source_counts=counts)


def save_documents(docs: Iterable[CellDocument], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")


def load_documents(path: str | Path) -> list[CellDocument]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                docs.append(CellDocument.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"bad document row: {exc}", line=lineno) from exc
    return docs


# -- sub-window expansion ----------------------------------------------

def adjacent_subwindows(
    anchor: BucketKey,
    cameras: list[str],
    manifest: CorpusManifest,
    span_before: int = 1,
    span_after: int = 2,
) -> list[SubWindowKey]:
    """Sub-windows covering the anchor bucket plus margin slots.

    Returns the Cartesian product of ``cameras`` with the 5-minute slots
    spanning [anchor start - span_before slots, anchor end + span_after
    slots], clipped to the day's recorded span, ordered by (slot,
    camera). Defaults give 6 slots; with four cameras that is the
    standard 24-sub-window expansion.
    """
    day = anchor.cell.day
    span = anchor.span(manifest)
    first = slot_for_time(span.start) - span_before
    last = slot_for_time(span.end - 1) + span_after
    valid = day_slots(manifest, day)
    slots = [s for s in range(first, last + 1) if s in valid]
    return [SubWindowKey(camera, day, slot) for slot in slots for camera in sorted(cameras)]
