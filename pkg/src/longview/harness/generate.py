"""Deterministic synthetic corpus with planted ground truth.

A scripted "happening" (time, place, people, verb, objects, utterance,
optional on-screen text) drives every lane record, so each question
generated from the script is answerable from the lanes and the oracle
backend can check any pipeline stage against the truth.

Layout guarantees the pipelines rely on:

* happenings occupy consecutive 5-minute slots away from the first and
  last bucket of each day, so the default sub-window expansion always
  yields its full 24 keys around a target;
* scene captions cover every (camera, slot), so no verified sub-window
  is ever empty and the per-question call budget is exact;
* each (day, slot) aggregates into exactly one GlobalEvent, so the
  PRECEDES chain is a complete slot-by-slot timeline and
  immediately-before/after questions have exact answers.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from ..cells import SLOT_SECONDS
from ..errors import ConfigError
from ..lanes import (
    ActionPayload,
    CaptionPayload,
    IdentityPayload,
    LaneRecord,
    LaneSet,
    ObjectPayload,
    SpeakerCandidate,
    TranscriptPayload,
    save_lane,
)
from ..manifest import SECONDS_PER_DAY, CameraInfo, CorpusManifest, DaySpan, Person, TimeWindow, save_manifest
from ..queryparse import Catalogs
from ..retrieval.tokenizer import tokenize

PERSON_NAMES = (
    "Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace", "Heidi",
    "Ivan", "Judy", "Mallory", "Niaj",
)

PLACES = ("kitchen", "living room", "dining room", "hallway", "garden", "studio")

# lemma -> (third person, past, gerund); closed set keeps phrasing regular
VERB_FORMS = {
    "chop": ("chops", "chopped", "chopping"),
    "stir": ("stirs", "stirred", "stirring"),
    "pour": ("pours", "poured", "pouring"),
    "wash": ("washes", "washed", "washing"),
    "fold": ("folds", "folded", "folding"),
    "sketch": ("sketches", "sketched", "sketching"),
    "polish": ("polishes", "polished", "polishing"),
    "stack": ("stacks", "stacked", "stacking"),
    "wrap": ("wraps", "wrapped", "wrapping"),
    "brew": ("brews", "brewed", "brewing"),
}
VERBS = tuple(sorted(VERB_FORMS))

OBJECTS = (
    "mug", "board game", "kettle", "notebook", "lantern",
    "apron", "puzzle", "basket", "candle", "tray",
)

FLAVORS = (
    "crimson", "walnut", "amber", "cobalt", "ivory", "maroon",
    "olive", "teal", "sienna", "plum", "coral", "indigo",
)

ROUTINE_TEXT = "A quiet stretch of the household routine"

UTTERANCE_TEMPLATES = (
    "Time to {verb} the {flavor} {label}.",
    "Shall we {verb} the {flavor} {label} together?",
    "I will {verb} the {flavor} {label} now.",
)


@dataclass
class HarnessConfig:
    days: int = 4
    day_start_hour: int = 9
    hours_per_day: int = 2
    ego_cameras: int = 4
    exo_cameras: int = 2
    persons: int = 8
    events_per_day: int = 12
    density: float = 1.0
    embedding_dim: int = 16
    screen_text_rate: float = 0.5
    identity_noise: float = 0.02

    def __post_init__(self):
        if self.days < 1 or self.hours_per_day < 1:
            raise ConfigError("need at least one day and one hour per day")
        if self.persons < 4 or self.persons > len(PERSON_NAMES):
            raise ConfigError(f"persons must be in [4, {len(PERSON_NAMES)}]")
        if self.exo_cameras < 1:
            raise ConfigError("need at least one fixed camera")
        if self.density < 0:
            raise ConfigError("density must be non-negative")
        slots_per_day = self.hours_per_day * 12
        if self.scaled_events_per_day > max(0, slots_per_day - 6):
            raise ConfigError("too many events per day for the recorded span margins")

    @property
    def scaled_events_per_day(self) -> int:
        return int(round(self.events_per_day * self.density))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "days", "day_start_hour", "hours_per_day", "ego_cameras", "exo_cameras",
            "persons", "events_per_day", "density", "embedding_dim",
            "screen_text_rate", "identity_noise",
        )}

    @classmethod
    def from_dict(cls, row: dict) -> "HarnessConfig":
        return cls(**row)


@dataclass(frozen=True)
class Happening:
    id: str
    day: int
    slot: int
    place: str
    persons: tuple[str, ...]  # first entry acts
    verb: str
    flavor: str
    object_label: str
    object_count: int
    utterance: str
    distractor: str  # roster id wrongly offered as speaker candidate
    screen_text: str | None
    visible_cameras: tuple[str, ...]

    @property
    def actor(self) -> str:
        return self.persons[0]

    def window(self) -> TimeWindow:
        base = (self.day - 1) * SECONDS_PER_DAY + self.slot * SLOT_SECONDS
        return TimeWindow(base, base + SLOT_SECONDS)

    def clock(self) -> str:
        sod = self.slot * SLOT_SECONDS
        return f"{sod // 3600:02d}:{(sod % 3600) // 60:02d}"

    def signature_tokens(self) -> frozenset[str]:
        return frozenset([self.flavor] + tokenize(self.object_label))

    def phrase(self, form: str = "lemma") -> str:
        verb = self.verb if form == "lemma" else VERB_FORMS[self.verb][{"third": 0, "past": 1, "gerund": 2}[form]]
        return f"{verb} the {self.flavor} {self.object_label}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "day": self.day,
            "slot": self.slot,
            "place": self.place,
            "persons": list(self.persons),
            "verb": self.verb,
            "flavor": self.flavor,
            "object_label": self.object_label,
            "object_count": self.object_count,
            "utterance": self.utterance,
            "distractor": self.distractor,
            "screen_text": self.screen_text,
            "visible_cameras": list(self.visible_cameras),
        }

    @classmethod
    def from_dict(cls, row: dict) -> "Happening":
        return cls(
            id=row["id"],
            day=int(row["day"]),
            slot=int(row["slot"]),
            place=row["place"],
            persons=tuple(row["persons"]),
            verb=row["verb"],
            flavor=row["flavor"],
            object_label=row["object_label"],
            object_count=int(row["object_count"]),
            utterance=row["utterance"],
            distractor=row["distractor"],
            screen_text=row["screen_text"],
            visible_cameras=tuple(row["visible_cameras"]),
        )


@dataclass
class GroundTruthScript:
    seed: int
    config: HarnessConfig
    happenings: list[Happening]
    person_names: dict[str, str]  # id -> display name
    camera_places: dict[str, tuple[str, ...]]  # exo camera -> covered places

    def happening(self, happening_id: str) -> Happening:
        for h in self.happenings:
            if h.id == happening_id:
                return h
        raise KeyError(happening_id)

    def name_of(self, person_id: str) -> str:
        return self.person_names[person_id]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config.to_dict(),
            "happenings": [h.to_dict() for h in self.happenings],
            "person_names": dict(sorted(self.person_names.items())),
            "camera_places": {k: list(v) for k, v in sorted(self.camera_places.items())},
        }

    @classmethod
    def from_dict(cls, row: dict) -> "GroundTruthScript":
        return cls(
            seed=int(row["seed"]),
            config=HarnessConfig.from_dict(row["config"]),
            happenings=[Happening.from_dict(h) for h in row["happenings"]],
            person_names=dict(row["person_names"]),
            camera_places={k: tuple(v) for k, v in row["camera_places"].items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruthScript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _build_manifest(config: HarnessConfig) -> CorpusManifest:
    person_ids = [f"p{i + 1:02d}" for i in range(config.persons)]
    cameras = [
        CameraInfo(id=f"ego{i + 1}", kind="ego", wearer=person_ids[i]) for i in range(config.ego_cameras)
    ] + [CameraInfo(id=f"exo{i + 1}", kind="exo") for i in range(config.exo_cameras)]
    span = DaySpan(config.day_start_hour * 3600, (config.day_start_hour + config.hours_per_day) * 3600)
    return CorpusManifest(
        days=config.days,
        epoch=0,
        day_spans=tuple(span for _ in range(config.days)),
        cameras=tuple(cameras),
        roster=tuple(Person(pid, PERSON_NAMES[i]) for i, pid in enumerate(person_ids)),
        embedding_dim=config.embedding_dim,
    )


def real_corpus_manifest() -> CorpusManifest:
    """The full-scale corpus shape: 15 cameras, 12 people, 50 recorded hours.

    Three 13-hour days plus one 11-hour day make exactly 50 (day, hour)
    cells.
    """
    person_ids = [f"p{i + 1:02d}" for i in range(12)]
    cameras = [CameraInfo(id=f"ego{i + 1}", kind="ego", wearer=person_ids[i % 12]) for i in range(10)]
    cameras += [CameraInfo(id=f"exo{i + 1}", kind="exo") for i in range(5)]
    spans = (
        DaySpan(8 * 3600, 21 * 3600),
        DaySpan(8 * 3600, 21 * 3600),
        DaySpan(8 * 3600, 21 * 3600),
        DaySpan(8 * 3600, 19 * 3600),
    )
    return CorpusManifest(
        days=4,
        epoch=0,
        day_spans=spans,
        cameras=tuple(cameras),
        roster=tuple(Person(pid, PERSON_NAMES[i]) for i, pid in enumerate(person_ids)),
        embedding_dim=16,
    )


def _script_from_seed(seed: int, config: HarnessConfig, manifest: CorpusManifest) -> GroundTruthScript:
    rng = random.Random(seed)
    person_ids = [p.id for p in manifest.roster]
    names = {p.id: p.name for p in manifest.roster}
    exo_ids = [c.id for c in manifest.cameras if c.kind == "exo"]
    wearer_of = {c.wearer: c.id for c in manifest.cameras if c.kind == "ego"}

    camera_places: dict[str, list[str]] = {exo: [] for exo in exo_ids}
    for i, place in enumerate(PLACES):
        camera_places[exo_ids[i % len(exo_ids)]].append(place)
    place_exo = {place: exo for exo, places in camera_places.items() for place in places}

    combos = [(flavor, label) for flavor in FLAVORS for label in OBJECTS]
    rng.shuffle(combos)

    happenings: list[Happening] = []
    per_day = config.scaled_events_per_day
    slots_per_day = config.hours_per_day * 12
    base_slot = config.day_start_hour * 12
    for day in range(1, config.days + 1):
        if per_day == 0:
            continue
        # margins: skip the first bucket and the last bucket of the day
        offset = rng.randint(3, slots_per_day - 3 - per_day)
        for i in range(per_day):
            slot = base_slot + offset + i
            flavor, label = combos[len(happenings) % len(combos)]
            group_size = rng.randint(1, 3)
            persons = tuple(rng.sample(person_ids, group_size))
            outsiders = [p for p in person_ids if p not in persons]
            place = rng.choice(PLACES)
            verb = rng.choice(VERBS)
            utterance = rng.choice(UTTERANCE_TEMPLATES).format(verb=verb, flavor=flavor, label=label)
            screen = None
            if rng.random() < config.screen_text_rate:
                screen = f"{flavor} {label} checklist".upper()
            visible = [place_exo[place]]
            visible += [wearer_of[p] for p in persons if p in wearer_of]
            happenings.append(
                Happening(
                    id=f"h{len(happenings) + 1:03d}",
                    day=day,
                    slot=slot,
                    place=place,
                    persons=persons,
                    verb=verb,
                    flavor=flavor,
                    object_label=label,
                    object_count=rng.randint(1, 5),
                    utterance=utterance,
                    distractor=rng.choice(outsiders),
                    screen_text=screen,
                    visible_cameras=tuple(dict.fromkeys(visible)),
                )
            )
    return GroundTruthScript(
        seed=seed,
        config=config,
        happenings=happenings,
        person_names=names,
        camera_places={k: tuple(v) for k, v in camera_places.items()},
    )


def _scene_caption(h: Happening, names: dict[str, str]) -> str:
    who = " and ".join(names[p] for p in h.persons)
    third = VERB_FORMS[h.verb][0]
    return f"{who} {third} the {h.flavor} {h.object_label} in the {h.place}"


def _jitter(rng: random.Random, centroid: list[float], scale: float) -> list[float]:
    return [round(x + rng.gauss(0.0, scale), 6) for x in centroid]


def generate_corpus(
    seed: int,
    config: HarnessConfig | None = None,
) -> tuple[CorpusManifest, LaneSet, GroundTruthScript]:
    """Fully deterministic: the same seed and config give identical lanes."""
    config = config or HarnessConfig()
    manifest = _build_manifest(config)
    script = _script_from_seed(seed, config, manifest)
    rng = random.Random(seed + 0x5EED)
    names = script.person_names

    centroids = {
        pid: {
            "body": [round(rng.gauss(0.0, 1.0), 6) for _ in range(config.embedding_dim)],
            "face": [round(rng.gauss(0.0, 1.0), 6) for _ in range(config.embedding_dim)],
        }
        for pid in sorted(names)
    }

    identity: list[LaneRecord] = []
    caption: list[LaneRecord] = []
    objects: list[LaneRecord] = []
    transcript: list[LaneRecord] = []
    action: list[LaneRecord] = []

    camera_ids = manifest.camera_ids()
    exo_ids = [c.id for c in manifest.cameras if c.kind == "exo"]
    wearer_of = {c.wearer: c.id for c in manifest.cameras if c.kind == "ego"}
    by_slot = {(h.day, h.slot): h for h in script.happenings}
    place_exo = {place: exo for exo, places in script.camera_places.items() for place in places}
    base_slot = config.day_start_hour * 12
    slots_per_day = config.hours_per_day * 12

    if script.happenings:
        # scene captions: one per (camera, slot); identical text per slot so
        # same-slot observations aggregate into a single event
        for day in range(1, config.days + 1):
            for slot in range(base_slot, base_slot + slots_per_day):
                h = by_slot.get((day, slot))
                text = _scene_caption(h, names) if h else ROUTINE_TEXT
                start = (day - 1) * SECONDS_PER_DAY + slot * SLOT_SECONDS
                window = TimeWindow(start, start + SLOT_SECONDS)
                for camera in camera_ids:
                    caption.append(
                        LaneRecord("caption", camera, window, CaptionPayload(text, "scene_300s"))
                    )
        # half-hour narratives recap the happenings inside each block
        for day in range(1, config.days + 1):
            day_base = (day - 1) * SECONDS_PER_DAY
            span = manifest.day_span(day)
            for block_start in range(span.start, span.end, 1800):
                window = TimeWindow(day_base + block_start, day_base + min(block_start + 1800, span.end))
                inside = [
                    h for h in script.happenings
                    if h.day == day and window.start <= h.window().start < window.end
                ]
                text = (
                    "Recap: " + "; ".join(h.phrase("third") for h in inside)
                    if inside
                    else "Recap: an uneventful half hour"
                )
                for camera in camera_ids:
                    caption.append(
                        LaneRecord("caption", camera, window, CaptionPayload(text, "narrative_1800s"))
                    )

    for h in script.happenings:
        window = h.window()
        actor_name = names[h.actor]
        # action-verb captions and the action lane carry the verb corpus-wide
        for camera in camera_ids:
            caption.append(
                LaneRecord(
                    "caption", camera, window,
                    CaptionPayload(f"{actor_name} {h.phrase('third')}", "action_verb"),
                )
            )
            action.append(
                LaneRecord(
                    "action", camera, window,
                    ActionPayload(h.verb, h.actor, frozenset(h.persons[1:])),
                )
            )
            for pid in h.persons:
                identity.append(
                    LaneRecord(
                        "identity", camera, window,
                        IdentityPayload(
                            person=pid,
                            body=tuple(_jitter(rng, centroids[pid]["body"], config.identity_noise)),
                            face=tuple(_jitter(rng, centroids[pid]["face"], config.identity_noise)),
                            face_score=0.9,
                        ),
                    )
                )
        for camera in h.visible_cameras:
            caption.append(
                LaneRecord(
                    "caption", camera, window,
                    CaptionPayload(f'{actor_name} says: "{h.utterance}"', "av_joint"),
                )
            )
        room_cam = place_exo[h.place]
        if h.screen_text:
            caption.append(
                LaneRecord(
                    "caption", room_cam, window,
                    CaptionPayload(f'On-screen text reads "{h.screen_text}"', "reasoning"),
                )
            )
        for i in range(h.object_count):
            # letter regions: digit tokens would collide with count choices
            objects.append(
                LaneRecord(
                    "object", room_cam, window,
                    ObjectPayload(h.object_label, f"{h.place} spot {chr(ord('a') + i)}", 0.8),
                )
            )
        heard_on = list(dict.fromkeys(exo_ids + ([wearer_of[h.actor]] if h.actor in wearer_of else [])))
        for camera in heard_on:
            is_ego = camera not in exo_ids
            transcript.append(
                LaneRecord(
                    "transcript", camera, window,
                    TranscriptPayload(
                        text=h.utterance,
                        candidates=(
                            SpeakerCandidate(h.actor, 0.9),
                            SpeakerCandidate(h.distractor, 0.4),
                        ),
                        speaker=h.actor if is_ego else None,
                    ),
                )
            )

    def _sorted(records: list[LaneRecord]) -> list[LaneRecord]:
        return sorted(records, key=lambda r: (r.window.start, r.camera, r.text))

    lanes = LaneSet(
        manifest=manifest,
        identity=_sorted(identity),
        caption=_sorted(caption),
        object=_sorted(objects),
        transcript=_sorted(transcript),
        action=_sorted(action),
    )
    return manifest, lanes, script


def corpus_catalogs(script: GroundTruthScript) -> Catalogs:
    persons: dict[str, str] = {}
    for pid, name in script.person_names.items():
        persons[pid.lower()] = pid
        persons[name.lower()] = pid
    return Catalogs(
        persons=persons,
        places=set(PLACES),
        objects=set(OBJECTS),
        actions=set(VERBS),
    )


def write_corpus(directory: str | Path, manifest: CorpusManifest, lanes: LaneSet, script: GroundTruthScript) -> None:
    directory = Path(directory)
    (directory / "lanes").mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, directory / "manifest.json")
    for name in ("identity", "caption", "object", "transcript", "action"):
        save_lane(lanes.lane(name), directory / "lanes" / f"{name}.jsonl")
    script.save(directory / "script.json")
    corpus_catalogs(script).save(directory / "catalogs.json")
