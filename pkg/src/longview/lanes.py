"""The five preprocessing lanes and their lane-level decision procedures.

Each lane is a JSONL file of timestamped records on the shared temporal
axis: identity sightings, captions (five kinds), object detections,
transcripts with speaker candidates, and action tuples. Downstream code
treats loaded lanes as immutable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DimensionMismatch, ParseError, ValidationError
from .manifest import CorpusManifest, TimeWindow

LANES = ("identity", "caption", "object", "transcript", "action")

CAPTION_KINDS = ("scene_300s", "narrative_1800s", "action_verb", "av_joint", "reasoning")


@dataclass(frozen=True)
class IdentityPayload:
    person: str | None
    body: tuple[float, ...]
    face: tuple[float, ...]
    face_score: float


@dataclass(frozen=True)
class CaptionPayload:
    text: str
    kind: str


@dataclass(frozen=True)
class ObjectPayload:
    label: str
    region: str
    score: float


@dataclass(frozen=True)
class SpeakerCandidate:
    person: str
    score: float


@dataclass(frozen=True)
class TranscriptPayload:
    text: str
    candidates: tuple[SpeakerCandidate, ...]
    speaker: str | None


@dataclass(frozen=True)
class ActionPayload:
    verb: str
    actor: str
    co_actors: frozenset[str]


Payload = IdentityPayload | CaptionPayload | ObjectPayload | TranscriptPayload | ActionPayload


@dataclass(frozen=True)
class LaneRecord:
    lane: str
    camera: str
    window: TimeWindow
    payload: Payload

    @property
    def text(self) -> str:
        """Free text carried by the record, empty for non-textual lanes."""
        p = self.payload
        if isinstance(p, (CaptionPayload, TranscriptPayload)):
            return p.text
        if isinstance(p, ObjectPayload):
            return p.label
        if isinstance(p, ActionPayload):
            return p.verb
        return ""


def validate_record(record: LaneRecord, manifest: CorpusManifest) -> None:
    """Raise ValidationError naming the first violated invariant."""
    if record.lane not in LANES:
        raise ValidationError(f"unknown lane {record.lane!r}")
    if record.camera not in manifest.camera_ids():
        raise ValidationError(f"camera {record.camera!r} not in manifest")
    if not manifest.contains_window(record.window):
        raise ValidationError(
            f"window [{record.window.start}, {record.window.end}) outside the recorded day span"
        )
    p = record.payload
    roster = manifest.person_ids()
    if isinstance(p, IdentityPayload):
        if record.lane != "identity":
            raise ValidationError("identity payload on non-identity lane")
        if p.person is not None and p.person not in roster:
            raise ValidationError(f"person {p.person!r} not in roster")
        for name, vec in (("body", p.body), ("face", p.face)):
            if len(vec) != manifest.embedding_dim:
                raise ValidationError(
                    f"{name} embedding has dim {len(vec)}, manifest declares {manifest.embedding_dim}"
                )
        if not 0.0 <= p.face_score <= 1.0:
            raise ValidationError(f"face_score {p.face_score} outside [0, 1]")
    elif isinstance(p, CaptionPayload):
        if record.lane != "caption":
            raise ValidationError("caption payload on non-caption lane")
        if p.kind not in CAPTION_KINDS:
            raise ValidationError(f"caption_kind {p.kind!r} not one of {CAPTION_KINDS}")
    elif isinstance(p, ObjectPayload):
        if record.lane != "object":
            raise ValidationError("object payload on non-object lane")
        if not 0.0 <= p.score <= 1.0:
            raise ValidationError(f"object score {p.score} outside [0, 1]")
    elif isinstance(p, TranscriptPayload):
        if record.lane != "transcript":
            raise ValidationError("transcript payload on non-transcript lane")
        for cand in p.candidates:
            if cand.person not in roster:
                raise ValidationError(f"speaker candidate {cand.person!r} not in roster")
            if not 0.0 <= cand.score <= 1.0:
                raise ValidationError(f"candidate score {cand.score} outside [0, 1]")
        if p.speaker is not None and p.speaker not in roster:
            raise ValidationError(f"speaker {p.speaker!r} not in roster")
    elif isinstance(p, ActionPayload):
        if record.lane != "action":
            raise ValidationError("action payload on non-action lane")
        if not p.verb:
            raise ValidationError("action verb is empty")
        if p.actor not in roster:
            raise ValidationError(f"actor {p.actor!r} not in roster")
        if p.actor in p.co_actors:
            raise ValidationError("actor listed among co_actors")
        for co in p.co_actors:
            if co not in roster:
                raise ValidationError(f"co-actor {co!r} not in roster")
    else:
        raise ValidationError(f"unknown payload type {type(p).__name__}")


# -- serialisation ----------------------------------------------------

def record_to_dict(record: LaneRecord) -> dict:
    row: dict = {
        "lane": record.lane,
        "camera": record.camera,
        "start": record.window.start,
        "end": record.window.end,
    }
    p = record.payload
    if isinstance(p, IdentityPayload):
        row.update(person=p.person, body=list(p.body), face=list(p.face), face_score=p.face_score)
    elif isinstance(p, CaptionPayload):
        row.update(text=p.text, caption_kind=p.kind)
    elif isinstance(p, ObjectPayload):
        row.update(label=p.label, region=p.region, score=p.score)
    elif isinstance(p, TranscriptPayload):
        row.update(
            text=p.text,
            candidates=[{"person": c.person, "score": c.score} for c in p.candidates],
            speaker=p.speaker,
        )
    elif isinstance(p, ActionPayload):
        row.update(verb=p.verb, actor=p.actor, co_actors=sorted(p.co_actors))
    return row


def record_from_dict(row: dict) -> LaneRecord:
    lane = row.get("lane")
    window = TimeWindow(int(row["start"]), int(row["end"]))
    camera = str(row["camera"])
    payload: Payload
    if lane == "identity":
        payload = IdentityPayload(
            person=row.get("person"),
            body=tuple(float(x) for x in row["body"]),
            face=tuple(float(x) for x in row["face"]),
            face_score=float(row["face_score"]),
        )
    elif lane == "caption":
        payload = CaptionPayload(text=str(row["text"]), kind=str(row["caption_kind"]))
    elif lane == "object":
        payload = ObjectPayload(label=str(row["label"]), region=str(row["region"]), score=float(row["score"]))
    elif lane == "transcript":
        payload = TranscriptPayload(
            text=str(row["text"]),
            candidates=tuple(
                SpeakerCandidate(str(c["person"]), float(c["score"])) for c in row.get("candidates", [])
            ),
            speaker=row.get("speaker"),
        )
    elif lane == "action":
        payload = ActionPayload(
            verb=str(row["verb"]),
            actor=str(row["actor"]),
            co_actors=frozenset(row.get("co_actors", [])),
        )
    else:
        raise ParseError(f"unknown lane {lane!r}")
    return LaneRecord(lane=lane, camera=camera, window=window, payload=payload)


def canonical_line(record: LaneRecord) -> str:
    """Canonical one-line JSON form: sorted keys, compact separators."""
    return json.dumps(record_to_dict(record), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def load_lane(path: str | Path, manifest: CorpusManifest) -> list[LaneRecord]:
    """Load one lane file; records come back sorted by (window.start, camera)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            try:
                record = record_from_dict(row)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"malformed record: {exc}", line=lineno) from exc
            validate_record(record, manifest)
            records.append(record)
    records.sort(key=lambda r: (r.window.start, r.camera))
    return records


def save_lane(records: Iterable[LaneRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(canonical_line(record) + "\n")


@dataclass
class LaneSet:
    """All five lanes of one corpus, loaded and validated."""

    manifest: CorpusManifest
    identity: list[LaneRecord] = field(default_factory=list)
    caption: list[LaneRecord] = field(default_factory=list)
    object: list[LaneRecord] = field(default_factory=list)
    transcript: list[LaneRecord] = field(default_factory=list)
    action: list[LaneRecord] = field(default_factory=list)

    def lane(self, name: str) -> list[LaneRecord]:
        if name not in LANES:
            raise ValidationError(f"unknown lane {name!r}")
        return getattr(self, name)

    def all_records(self) -> list[LaneRecord]:
        out: list[LaneRecord] = []
        for name in LANES:
            out.extend(self.lane(name))
        return out

    @classmethod
    def load(cls, directory: str | Path, manifest: CorpusManifest) -> "LaneSet":
        directory = Path(directory)
        lanes = {}
        for name in LANES:
            path = directory / f"{name}.jsonl"
            lanes[name] = load_lane(path, manifest) if path.exists() else []
        return cls(manifest=manifest, **lanes)


# -- identity propagation gate ---------------------------------------

def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise DimensionMismatch(f"vector dims differ: {len(a)} vs {len(b)}")
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


@dataclass(frozen=True)
class GateDecision:
    propagate: bool
    person: str | None = None
    body_sim: float = 0.0
    face_sim: float = 0.0


def gate_identity_propagation(
    candidate: LaneRecord,
    anchor: LaneRecord,
    centroids: dict[str, Sequence[float]],
    body_thresh: float = 0.80,
    face_thresh: float = 0.70,
) -> GateDecision:
    """Propagate the anchor's identity iff both similarity gates clear.

    Gate 1: cosine(candidate body, anchor body) >= body_thresh.
    Gate 2: cosine(candidate face, face centroid of the anchor's person)
    >= face_thresh. Pure function; raising either threshold can only
    turn propagations into rejections.
    """
    cp = candidate.payload
    ap = anchor.payload
    if not isinstance(cp, IdentityPayload) or not isinstance(ap, IdentityPayload):
        raise ValidationError("gate_identity_propagation needs identity records")
    if ap.person is None:
        raise ValidationError("anchor record has no resolved person")
    centroid = centroids.get(ap.person)
    if centroid is None:
        raise ValidationError(f"no face centroid for person {ap.person!r}")
    body_sim = cosine(cp.body, ap.body)
    face_sim = cosine(cp.face, centroid)
    if body_sim >= body_thresh and face_sim >= face_thresh:
        return GateDecision(True, ap.person, body_sim, face_sim)
    return GateDecision(False, None, body_sim, face_sim)


# -- fixed-camera speaker consensus ----------------------------------

def _exo_cameras(manifest: CorpusManifest) -> set[str]:
    return {c.id for c in manifest.cameras if c.kind == "exo"}


def resolve_speakers_consensus(
    records: list[LaneRecord],
    identity: list[LaneRecord],
    manifest: CorpusManifest,
) -> list[LaneRecord]:
    """Resolve final speakers on fixed-camera transcripts by consensus.

    A candidate survives only when corroborated by (a) an overlapping
    transcript on another camera that lists them, and (b) an overlapping
    identity sighting anywhere. One survivor wins outright; several are
    ranked by candidate score then person id; none leaves the speaker
    null. Ego-camera records pass through unchanged.
    """
    exo = _exo_cameras(manifest)
    out: list[LaneRecord] = []
    for rec in records:
        p = rec.payload
        if not isinstance(p, TranscriptPayload):
            raise ValidationError("resolve_speakers_consensus needs transcript records")
        if rec.camera not in exo:
            out.append(rec)
            continue
        corroborated: list[SpeakerCandidate] = []
        for cand in p.candidates:
            heard = any(
                other is not rec
                and other.camera != rec.camera
                and other.window.overlaps(rec.window)
                and (
                    any(c.person == cand.person for c in other.payload.candidates)
                    or other.payload.speaker == cand.person
                )
                for other in records
                if isinstance(other.payload, TranscriptPayload)
            )
            seen = any(
                isinstance(idr.payload, IdentityPayload)
                and idr.payload.person == cand.person
                and idr.window.overlaps(rec.window)
                for idr in identity
            )
            if heard and seen:
                corroborated.append(cand)
        if not corroborated:
            final = None
        elif len(corroborated) == 1:
            final = corroborated[0].person
        else:
            corroborated.sort(key=lambda c: (-c.score, c.person))
            final = corroborated[0].person
        out.append(
            LaneRecord(
                lane=rec.lane,
                camera=rec.camera,
                window=rec.window,
                payload=TranscriptPayload(text=p.text, candidates=p.candidates, speaker=final),
            )
        )
    return out


# -- extractive action timeline ---------------------------------------

@dataclass(frozen=True)
class ActionTuple:
    span: TimeWindow
    verb: str
    actor: str
    co_actors: frozenset[str]

    def __post_init__(self):
        if not self.verb:
            raise ValidationError("action verb is empty")
        if self.actor in self.co_actors:
            raise ValidationError("actor listed among co_actors")


def _persons_on(identity: list[LaneRecord], window: TimeWindow, camera: str | None = None) -> list[str]:
    seen: dict[str, int] = {}
    for rec in identity:
        p = rec.payload
        if not isinstance(p, IdentityPayload) or p.person is None:
            continue
        if camera is not None and rec.camera != camera:
            continue
        if rec.window.overlaps(window):
            seen[p.person] = seen.get(p.person, 0) + 1
    # most sightings first, person id breaks ties
    return [pid for pid, _ in sorted(seen.items(), key=lambda kv: (-kv[1], kv[0]))]


def build_action_timeline(
    captions: list[LaneRecord],
    identity: list[LaneRecord],
    verb_lexicon: set[str],
) -> list[ActionTuple]:
    """Deterministic extractive timeline from action_verb captions.

    One tuple per (caption, lexicon verb found in its text). The actor is
    the person the identity lane places on the caption's own camera and
    window; captions with no resolvable actor are dropped. Co-actors are
    everyone else sighted on any camera over an overlapping window. A
    gateway-backed summariser may replace this behind the same signature.
    """
    if not verb_lexicon:
        raise ValidationError("verb lexicon is empty")
    tuples: list[ActionTuple] = []
    for cap in captions:
        p = cap.payload
        if not isinstance(p, CaptionPayload) or p.kind != "action_verb":
            continue
        text = p.text.lower()
        verbs = [v for v in sorted(verb_lexicon) if v.lower() in text]
        if not verbs:
            continue
        on_camera = _persons_on(identity, cap.window, camera=cap.camera)
        if not on_camera:
            continue
        actor = on_camera[0]
        everyone = set(_persons_on(identity, cap.window))
        co = frozenset(everyone - {actor})
        for verb in verbs:
            tuples.append(ActionTuple(span=cap.window, verb=verb, actor=actor, co_actors=co))
    return tuples
