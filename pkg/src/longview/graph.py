"""Temporal multimodal knowledge graph: observation bundles, multi-view
event aggregation, typed edges, and per-segment persistence.

One Observation bundles everything a single camera saw in a single
5-minute slot. Observations that share a slot, a place, and enough
people/actions merge (transitively) into one GlobalEvent. Events are
chained in time with PRECEDES edges, which is what answers "immediately
before/after" questions.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .cells import SubWindowKey, partition
from .errors import CorruptSegment, NotFound, ParseError, ValidationError
from .lanes import (
    ActionPayload,
    ActionTuple,
    CaptionPayload,
    IdentityPayload,
    LaneRecord,
    LaneSet,
    ObjectPayload,
    TranscriptPayload,
)
from .manifest import CorpusManifest, TimeWindow
from .retrieval.index import RankedList, ranked
from .retrieval.tokenizer import tokenize

EDGE_KINDS = ("EVIDENCE", "PARTICIPATES_IN", "LOCATED_AT", "INVOLVES", "PRECEDES")

DEFAULT_TAG_COUNT = 8
DEFAULT_PERSON_JACCARD = 0.5
DEFAULT_TAG_JACCARD = 0.3
DEFAULT_INVOLVES_FLOOR = 2
DEFAULT_BETAS = (0.3, 0.2, 0.2)  # person, place, object bonuses


@dataclass(frozen=True)
class Observation:
    id: str
    key: SubWindowKey
    transcript_texts: tuple[str, ...]
    caption_texts: tuple[str, ...]
    action_tuples: tuple[ActionTuple, ...]
    object_labels: tuple[str, ...]
    tags: tuple[str, ...]
    persons: frozenset[str]
    place: str | None

    @property
    def verbs(self) -> frozenset[str]:
        return frozenset(t.verb for t in self.action_tuples)

    def span(self) -> TimeWindow:
        return self.key.span()

    def summary_text(self) -> str:
        """Flat text used to index the observation for retrieval."""
        parts = list(self.transcript_texts) + list(self.caption_texts)
        parts.extend(f"{t.actor} {t.verb}" for t in self.action_tuples)
        parts.extend(self.object_labels)
        parts.extend(sorted(self.persons))
        if self.place:
            parts.append(self.place)
        parts.extend(self.tags)
        return "\n".join(parts)


@dataclass(frozen=True)
class GlobalEvent:
    id: str
    member_observations: frozenset[str]
    span: TimeWindow
    persons: frozenset[str]
    place: str | None
    verbs: frozenset[str]
    tags: frozenset[str]


@dataclass(frozen=True)
class TypedEdge:
    kind: str
    src: str
    dst: str

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise ValidationError(f"unknown edge kind {self.kind!r}")


def _top_tags(texts: list[str], m: int) -> tuple[str, ...]:
    counts = Counter(tok for text in texts for tok in tokenize(text))
    return tuple(tok for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:m])


def _majority_place(texts: list[str], region_tags: list[str], gazetteer: set[str]) -> str | None:
    """Most frequent gazetteer term mentioned in captions or region tags."""
    if not gazetteer:
        return None
    haystacks = [t.lower() for t in texts + region_tags]
    counts: Counter[str] = Counter()
    for term in gazetteer:
        needle = term.lower()
        hits = sum(h.count(needle) for h in haystacks)
        if hits:
            counts[term] += hits
    if not counts:
        return None
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]


def build_observations(
    lanes: LaneSet,
    manifest: CorpusManifest,
    gazetteer: set[str] | None = None,
    tag_count: int = DEFAULT_TAG_COUNT,
) -> list[Observation]:
    """One Observation per (camera, 5-minute slot) that has any record."""
    gazetteer = gazetteer or set()
    by_key = partition(lanes.all_records(), manifest, "subwindow")
    observations = []
    for key in sorted(by_key, key=lambda k: k.id):
        records: list[LaneRecord] = by_key[key]
        if not records:
            continue
        transcripts, captions, actions, labels, regions = [], [], [], [], []
        persons: set[str] = set()
        for rec in records:
            p = rec.payload
            if isinstance(p, TranscriptPayload):
                transcripts.append(p.text)
            elif isinstance(p, CaptionPayload):
                captions.append(p.text)
            elif isinstance(p, ActionPayload):
                actions.append(ActionTuple(rec.window, p.verb, p.actor, p.co_actors))
            elif isinstance(p, ObjectPayload):
                labels.append(p.label)
                regions.append(p.region)
            elif isinstance(p, IdentityPayload) and p.person is not None:
                persons.add(p.person)
        observations.append(
            Observation(
                id=f"obs:{key.id}",
                key=key,
                transcript_texts=tuple(transcripts),
                caption_texts=tuple(captions),
                action_tuples=tuple(actions),
                object_labels=tuple(labels),
                tags=_top_tags(transcripts + captions, tag_count),
                persons=frozenset(persons),
                place=_majority_place(captions, regions, gazetteer),
            )
        )
    return observations


# -- aggregation -------------------------------------------------------

def jaccard(a: frozenset, b: frozenset) -> float:
    """Set overlap; two empty sets count as identical (1.0)."""
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union


def merge_predicate(
    a: Observation,
    b: Observation,
    person_jaccard: float = DEFAULT_PERSON_JACCARD,
    tag_jaccard: float = DEFAULT_TAG_JACCARD,
) -> bool:
    """Pairwise merge rule: same slot, same place, shared people, shared activity."""
    if (a.key.day, a.key.slot) != (b.key.day, b.key.slot):
        return False
    if a.place != b.place:
        return False
    if jaccard(a.persons, b.persons) < person_jaccard:
        return False
    if a.verbs & b.verbs:
        return True
    return jaccard(frozenset(a.tags), frozenset(b.tags)) >= tag_jaccard


class _UnionFind:
    def __init__(self, items):
        self.parent = {item: item for item in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def aggregate_global_events(
    observations: list[Observation],
    person_jaccard: float = DEFAULT_PERSON_JACCARD,
    tag_jaccard: float = DEFAULT_TAG_JACCARD,
) -> tuple[list[GlobalEvent], list[TypedEdge]]:
    """Connected components of the merge relation, via union-find.

    Deterministic and input-order invariant: component ids derive from
    the lexicographically smallest member observation.
    """
    obs_by_id = {o.id: o for o in observations}
    uf = _UnionFind(sorted(obs_by_id))
    slots: dict[tuple[int, int], list[str]] = {}
    for oid, obs in obs_by_id.items():
        slots.setdefault((obs.key.day, obs.key.slot), []).append(oid)
    for members in slots.values():
        members.sort()
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                if merge_predicate(obs_by_id[a], obs_by_id[b], person_jaccard, tag_jaccard):
                    uf.union(a, b)

    components: dict[str, list[str]] = {}
    for oid in sorted(obs_by_id):
        components.setdefault(uf.find(oid), []).append(oid)

    events, edges = [], []
    for root, members in sorted(components.items()):
        group = [obs_by_id[m] for m in members]
        span = TimeWindow(min(o.span().start for o in group), max(o.span().end for o in group))
        place_votes = Counter(o.place for o in group if o.place is not None)
        place = sorted(place_votes.items(), key=lambda kv: (-kv[1], kv[0]))[0][0] if place_votes else None
        event = GlobalEvent(
            id=f"ev:{root.removeprefix('obs:')}",
            member_observations=frozenset(members),
            span=span,
            persons=frozenset().union(*(o.persons for o in group)),
            place=place,
            verbs=frozenset().union(*(o.verbs for o in group)),
            tags=frozenset().union(*(frozenset(o.tags) for o in group)),
        )
        events.append(event)
        edges.extend(TypedEdge("EVIDENCE", m, event.id) for m in members)
    return events, edges


def link_edges(
    events: list[GlobalEvent],
    observations: list[Observation],
    involves_floor: int = DEFAULT_INVOLVES_FLOOR,
    per_place_chain: bool = False,
) -> list[TypedEdge]:
    """Participation, location, involvement, and the temporal chain.

    The chain is global by default; ``per_place_chain`` switches to one
    chain per place.
    """
    obs_by_id = {o.id: o for o in observations}
    edges: list[TypedEdge] = []
    for event in sorted(events, key=lambda e: e.id):
        for person in sorted(event.persons):
            edges.append(TypedEdge("PARTICIPATES_IN", person, event.id))
        if event.place is not None:
            edges.append(TypedEdge("LOCATED_AT", event.id, event.place))
        mentions = Counter(
            label
            for member in event.member_observations
            for label in obs_by_id[member].object_labels
        )
        for label in sorted(l for l, n in mentions.items() if n >= involves_floor):
            edges.append(TypedEdge("INVOLVES", event.id, label))
    groups: dict[str | None, list[GlobalEvent]] = {}
    for event in events:
        groups.setdefault(event.place if per_place_chain else None, []).append(event)
    for _, group in sorted(groups.items(), key=lambda kv: (kv[0] is not None, kv[0] or "")):
        ordered = sorted(group, key=lambda e: (e.span.start, e.id))
        for prev, nxt in zip(ordered, ordered[1:]):
            # simultaneous events (overlapping spans) are left unchained
            if prev.span.end <= nxt.span.start:
                edges.append(TypedEdge("PRECEDES", prev.id, nxt.id))
    return edges


# -- assembled graph ---------------------------------------------------

@dataclass
class TemporalGraph:
    observations: dict[str, Observation] = field(default_factory=dict)
    events: dict[str, GlobalEvent] = field(default_factory=dict)
    edges: list[TypedEdge] = field(default_factory=list)

    def __post_init__(self):
        self._reindex()

    def _reindex(self) -> None:
        self.obs_event: dict[str, str] = {}
        self.participates: set[tuple[str, str]] = set()
        self.located: set[tuple[str, str]] = set()
        self.involves: set[tuple[str, str]] = set()
        self._next: dict[str, str] = {}
        self._prev: dict[str, str] = {}
        for edge in self.edges:
            if edge.kind == "EVIDENCE":
                self.obs_event[edge.src] = edge.dst
            elif edge.kind == "PARTICIPATES_IN":
                self.participates.add((edge.src, edge.dst))
            elif edge.kind == "LOCATED_AT":
                self.located.add((edge.src, edge.dst))
            elif edge.kind == "INVOLVES":
                self.involves.add((edge.src, edge.dst))
            elif edge.kind == "PRECEDES":
                self._next[edge.src] = edge.dst
                self._prev[edge.dst] = edge.src

    def event_of(self, obs_id: str) -> GlobalEvent | None:
        event_id = self.obs_event.get(obs_id)
        return self.events.get(event_id) if event_id else None

    def traverse_precedes(self, event_id: str, direction: str, steps: int = 1) -> list[str]:
        """Follow the temporal chain up to ``steps`` hops from an event."""
        if event_id not in self.events:
            raise NotFound(f"event {event_id!r} not in graph")
        if direction not in ("before", "after"):
            raise ValidationError(f"direction must be before/after, got {direction!r}")
        link = self._prev if direction == "before" else self._next
        out: list[str] = []
        current = event_id
        for _ in range(steps):
            nxt = link.get(current)
            if nxt is None:
                break
            out.append(nxt)
            current = nxt
        return out


def build_graph(
    lanes: LaneSet,
    manifest: CorpusManifest,
    gazetteer: set[str] | None = None,
    tag_count: int = DEFAULT_TAG_COUNT,
    person_jaccard: float = DEFAULT_PERSON_JACCARD,
    tag_jaccard: float = DEFAULT_TAG_JACCARD,
    involves_floor: int = DEFAULT_INVOLVES_FLOOR,
    per_place_chain: bool = False,
) -> TemporalGraph:
    observations = build_observations(lanes, manifest, gazetteer, tag_count)
    events, evidence = aggregate_global_events(observations, person_jaccard, tag_jaccard)
    edges = evidence + link_edges(events, observations, involves_floor, per_place_chain)
    return TemporalGraph(
        observations={o.id: o for o in observations},
        events={e.id: e for e in events},
        edges=edges,
    )


# -- predicate reranking -------------------------------------------------

def rerank_with_predicates(
    base: RankedList,
    constraints,
    graph: TemporalGraph,
    betas: tuple[float, float, float] = DEFAULT_BETAS,
) -> RankedList:
    """Add per-entity graph bonuses to an observation ranking.

    Each query person matched through PARTICIPATES_IN earns the person
    bonus, each place through LOCATED_AT the place bonus, each object
    through INVOLVES the object bonus. With no constraints the ranking
    passes through untouched.
    """
    beta_person, beta_place, beta_object = betas
    persons = getattr(constraints, "persons", set()) or set()
    places = getattr(constraints, "places", set()) or set()
    objects = getattr(constraints, "objects", set()) or set()
    if not (persons or places or objects):
        return base
    rescored = []
    for obs_id, score in base:
        event = graph.event_of(obs_id)
        bonus = 0.0
        if event is not None:
            bonus += beta_person * sum(1 for p in persons if (p, event.id) in graph.participates)
            bonus += beta_place * sum(1 for p in places if (event.id, p) in graph.located)
            bonus += beta_object * sum(1 for o in objects if (event.id, o) in graph.involves)
        rescored.append((obs_id, score + bonus))
    return ranked(rescored)


# -- persistence -------------------------------------------------------

@dataclass
class GraphSegment:
    """One (day, hour) slice of the graph, persistable on its own.

    PRECEDES edges crossing segment boundaries are not stored; they are
    re-stitched globally when a graph is loaded.
    """

    day: int
    hour: int
    observations: list[Observation]
    events: list[GlobalEvent]
    edges: list[TypedEdge]

    @property
    def key(self) -> tuple[int, int]:
        return (self.day, self.hour)


def _action_tuple_to_dict(t: ActionTuple) -> dict:
    return {
        "start": t.span.start,
        "end": t.span.end,
        "verb": t.verb,
        "actor": t.actor,
        "co_actors": sorted(t.co_actors),
    }


def _action_tuple_from_dict(row: dict) -> ActionTuple:
    return ActionTuple(
        span=TimeWindow(int(row["start"]), int(row["end"])),
        verb=row["verb"],
        actor=row["actor"],
        co_actors=frozenset(row["co_actors"]),
    )


def _observation_to_dict(o: Observation) -> dict:
    return {
        "id": o.id,
        "camera": o.key.camera,
        "day": o.key.day,
        "slot": o.key.slot,
        "transcript_texts": list(o.transcript_texts),
        "caption_texts": list(o.caption_texts),
        "action_tuples": [_action_tuple_to_dict(t) for t in o.action_tuples],
        "object_labels": list(o.object_labels),
        "tags": list(o.tags),
        "persons": sorted(o.persons),
        "place": o.place,
    }


def _observation_from_dict(row: dict) -> Observation:
    return Observation(
        id=row["id"],
        key=SubWindowKey(row["camera"], int(row["day"]), int(row["slot"])),
        transcript_texts=tuple(row["transcript_texts"]),
        caption_texts=tuple(row["caption_texts"]),
        action_tuples=tuple(_action_tuple_from_dict(t) for t in row["action_tuples"]),
        object_labels=tuple(row["object_labels"]),
        tags=tuple(row["tags"]),
        persons=frozenset(row["persons"]),
        place=row["place"],
    )


def _event_to_dict(e: GlobalEvent) -> dict:
    return {
        "id": e.id,
        "members": sorted(e.member_observations),
        "start": e.span.start,
        "end": e.span.end,
        "persons": sorted(e.persons),
        "place": e.place,
        "verbs": sorted(e.verbs),
        "tags": sorted(e.tags),
    }


def _event_from_dict(row: dict) -> GlobalEvent:
    return GlobalEvent(
        id=row["id"],
        member_observations=frozenset(row["members"]),
        span=TimeWindow(int(row["start"]), int(row["end"])),
        persons=frozenset(row["persons"]),
        place=row["place"],
        verbs=frozenset(row["verbs"]),
        tags=frozenset(row["tags"]),
    )


def segment_path(directory: str | Path, day: int, hour: int) -> Path:
    return Path(directory) / f"{day}_{hour:02d}.segment.json"


def persist_segment(segment: GraphSegment, directory: str | Path) -> Path:
    """Write one segment with a trailing checksum record."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    body = json.dumps(
        {
            "day": segment.day,
            "hour": segment.hour,
            "observations": [_observation_to_dict(o) for o in segment.observations],
            "events": [_event_to_dict(e) for e in segment.events],
            "edges": [{"kind": e.kind, "src": e.src, "dst": e.dst} for e in segment.edges],
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    checksum = hashlib.sha256(body.encode("utf-8")).hexdigest()
    path = segment_path(directory, segment.day, segment.hour)
    path.write_text(body + "\n" + json.dumps({"sha256": checksum}) + "\n", encoding="utf-8")
    return path


def load_segment(directory: str | Path, day: int, hour: int) -> GraphSegment:
    path = segment_path(directory, day, hour)
    if not path.exists():
        raise NotFound(f"no segment file for (day {day}, hour {hour}) at {path}")
    raw = path.read_text(encoding="utf-8")
    body, _, trailer = raw.rstrip("\n").rpartition("\n")
    if not body:
        raise CorruptSegment(f"{path}: missing checksum trailer")
    try:
        expected = json.loads(trailer)["sha256"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise CorruptSegment(f"{path}: unreadable checksum trailer") from exc
    actual = hashlib.sha256(body.encode("utf-8")).hexdigest()
    if actual != expected:
        raise CorruptSegment(f"{path}: checksum mismatch")
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: segment body is not valid JSON") from exc
    return GraphSegment(
        day=int(data["day"]),
        hour=int(data["hour"]),
        observations=[_observation_from_dict(o) for o in data["observations"]],
        events=[_event_from_dict(e) for e in data["events"]],
        edges=[TypedEdge(e["kind"], e["src"], e["dst"]) for e in data["edges"]],
    )


def split_segments(graph: TemporalGraph) -> list[GraphSegment]:
    """Partition the graph into (day, hour) segments.

    Observations go by their slot's hour, events by span start; edges
    follow the segment that holds both endpoints (PRECEDES edges across
    segments are dropped here and re-stitched on load).
    """
    def obs_key(o: Observation) -> tuple[int, int]:
        return (o.key.day, (o.key.slot * 300) // 3600)

    def event_key(e: GlobalEvent) -> tuple[int, int]:
        return (e.span.day(), (e.span.start % 86400) // 3600)

    segments: dict[tuple[int, int], GraphSegment] = {}

    def segment_for(key: tuple[int, int]) -> GraphSegment:
        if key not in segments:
            segments[key] = GraphSegment(day=key[0], hour=key[1], observations=[], events=[], edges=[])
        return segments[key]

    node_segment: dict[str, tuple[int, int]] = {}
    for oid in sorted(graph.observations):
        obs = graph.observations[oid]
        key = obs_key(obs)
        segment_for(key).observations.append(obs)
        node_segment[oid] = key
    for eid in sorted(graph.events):
        event = graph.events[eid]
        key = event_key(event)
        segment_for(key).events.append(event)
        node_segment[eid] = key
    for edge in graph.edges:
        src_seg = node_segment.get(edge.src)
        dst_seg = node_segment.get(edge.dst)
        home = src_seg if src_seg is not None else dst_seg
        if home is None:
            continue
        if edge.kind == "PRECEDES" and src_seg != dst_seg:
            continue
        if edge.kind == "PARTICIPATES_IN":  # person nodes are catalog-global
            home = dst_seg
        segment_for(home).edges.append(edge)
    return [segments[key] for key in sorted(segments)]


def persist_graph(graph: TemporalGraph, directory: str | Path) -> list[Path]:
    return [persist_segment(segment, directory) for segment in split_segments(graph)]


def load_graph(directory: str | Path) -> TemporalGraph:
    """Load every segment under ``directory`` and re-stitch PRECEDES globally."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.segment.json"))
    if not paths:
        raise NotFound(f"no segment files under {directory}")
    observations: dict[str, Observation] = {}
    events: dict[str, GlobalEvent] = {}
    edges: list[TypedEdge] = []
    for path in paths:
        day, hour = path.stem.removesuffix(".segment").split("_")
        segment = load_segment(directory, int(day), int(hour))
        observations.update({o.id: o for o in segment.observations})
        events.update({e.id: e for e in segment.events})
        edges.extend(e for e in segment.edges if e.kind != "PRECEDES")
    ordered = sorted(events.values(), key=lambda e: (e.span.start, e.id))
    for prev, nxt in zip(ordered, ordered[1:]):
        if prev.span.end <= nxt.span.start:
            edges.append(TypedEdge("PRECEDES", prev.id, nxt.id))
    return TemporalGraph(observations=observations, events=events, edges=edges)
