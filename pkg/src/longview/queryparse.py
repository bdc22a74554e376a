"""Rule-based parsing of four-choice questions into retrieval constraints.

Deterministic by construction so the whole pipeline can be replayed; a
gateway-backed parser can be slotted in behind ``parse_question``'s
signature if model-quality extraction is ever needed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .manifest import CorpusManifest

INTENTS = ("who", "where", "when", "what", "count", "order_before_after", "other")

CHOICE_LABELS = ("A", "B", "C", "D")


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    choices: tuple[tuple[str, str], ...]  # ((label, text), ...) labelled A-D
    answer: str | None = None  # gold label, harness corpora only

    def __post_init__(self):
        labels = tuple(label for label, _ in self.choices)
        if labels != CHOICE_LABELS:
            raise ValidationError(f"questions need exactly four choices labelled A-D, got {labels}")
        if self.answer is not None and self.answer not in CHOICE_LABELS:
            raise ValidationError(f"gold answer {self.answer!r} is not a choice label")

    def choice(self, label: str) -> str:
        for lab, text in self.choices:
            if lab == label:
                return text
        raise KeyError(label)

    def choices_dict(self) -> dict[str, str]:
        return dict(self.choices)

    def all_text(self) -> str:
        return " ".join([self.text] + [text for _, text in self.choices])


def question_to_dict(q: Question) -> dict:
    row = {"id": q.id, "text": q.text, "choices": dict(q.choices)}
    if q.answer is not None:
        row["answer"] = q.answer
    return row


def question_from_dict(row: dict) -> Question:
    choices = tuple((label, row["choices"][label]) for label in CHOICE_LABELS)
    return Question(id=str(row["id"]), text=row["text"], choices=choices, answer=row.get("answer"))


@dataclass(frozen=True)
class ParsedQuery:
    raw: str
    day: int | None = None
    time_range: tuple[int, int] | None = None  # minutes-of-day, inclusive
    persons: frozenset[str] = frozenset()
    places: frozenset[str] = frozenset()
    objects: frozenset[str] = frozenset()
    actions: frozenset[str] = frozenset()
    intent: str = "other"
    order_direction: str | None = None  # before/after for order questions

    def has_relational_constraints(self) -> bool:
        return bool(self.persons or self.places or self.objects)


@dataclass
class Catalogs:
    """Entity surface forms recognisable in question text."""

    persons: dict[str, str] = field(default_factory=dict)  # surface (lower) -> person id
    places: set[str] = field(default_factory=set)
    objects: set[str] = field(default_factory=set)
    actions: set[str] = field(default_factory=set)  # verb lemmas

    def to_dict(self) -> dict:
        return {
            "persons": dict(sorted(self.persons.items())),
            "places": sorted(self.places),
            "objects": sorted(self.objects),
            "actions": sorted(self.actions),
        }

    @classmethod
    def from_dict(cls, row: dict) -> "Catalogs":
        return cls(
            persons={k.lower(): v for k, v in row.get("persons", {}).items()},
            places={p.lower() for p in row.get("places", [])},
            objects={o.lower() for o in row.get("objects", [])},
            actions={a.lower() for a in row.get("actions", [])},
        )

    @classmethod
    def load(cls, path: str | Path) -> "Catalogs":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


DEFAULT_LEXICONS: dict = {
    "dayparts": {
        "morning": [360, 720],
        "noon": [690, 750],
        "afternoon": [720, 1080],
        "evening": [1080, 1320],
        "night": [1320, 1439],
    },
    "day_ordinals": {
        "first": 1, "second": 2, "third": 3, "fourth": 4,
        "fifth": 5, "sixth": 6, "seventh": 7, "last": -1,
    },
    "intent_keywords": {
        "count": ["how many"],
        "order_before_after": ["immediately before", "immediately after"],
    },
}


def load_lexicons(path: str | Path | None = None) -> dict:
    if path is None:
        return DEFAULT_LEXICONS
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    merged = {k: dict(v) if isinstance(v, dict) else v for k, v in DEFAULT_LEXICONS.items()}
    merged.update(data)
    return merged


_CLOCK = re.compile(r"\b(\d{1,2}):(\d{2})\b")
_DAY_NUM = re.compile(r"\bday\s+(\d+)\b")


def _match_surfaces(text: str, surfaces: list[str]) -> tuple[list[str], str]:
    """Longest-match scan; matched spans are blanked to stop nested rematches."""
    found: list[str] = []
    for surface in sorted(surfaces, key=lambda s: (-len(s), s)):
        pattern = re.compile(r"(?<![0-9a-zà-ÿ])" + re.escape(surface) + r"(?![0-9a-zà-ÿ])")
        if pattern.search(text):
            found.append(surface)
            text = pattern.sub(" " * len(surface), text)
    return found, text


def _match_actions(text: str, verbs: set[str]) -> set[str]:
    # token-prefix match so "chopped"/"chopping" resolve to lemma "chop"
    tokens = re.findall(r"[^\W_]+", text)
    hits = set()
    for verb in verbs:
        for token in tokens:
            if token == verb or (token.startswith(verb) and len(token) - len(verb) <= 3):
                hits.add(verb)
                break
    return hits


def _detect_intent(lower_text: str, lexicons: dict) -> tuple[str, str | None]:
    for phrase in lexicons["intent_keywords"].get("order_before_after", []):
        if phrase in lower_text:
            direction = "before" if "before" in phrase else "after"
            return "order_before_after", direction
    for phrase in lexicons["intent_keywords"].get("count", []):
        if phrase in lower_text:
            return "count", None
    lead = lower_text.split()[:1]
    if lead and lead[0] in ("who", "where", "when", "what"):
        return lead[0], None
    return "other", None


def parse_question(
    q: Question,
    manifest: CorpusManifest,
    catalogs: Catalogs,
    lexicons: dict | None = None,
) -> ParsedQuery:
    """Extract day, time, entities, and intent from question plus choices.

    Unparseable fields stay empty; the intent falls back to ``other``.
    Case-insensitive and idempotent.
    """
    lexicons = lexicons or DEFAULT_LEXICONS
    full = q.all_text().lower()
    question_lower = q.text.lower()

    persons_found, remaining = _match_surfaces(full, list(catalogs.persons))
    persons = frozenset(catalogs.persons[surface] for surface in persons_found)
    places_found, remaining = _match_surfaces(remaining, sorted(catalogs.places))
    objects_found, remaining = _match_surfaces(remaining, sorted(catalogs.objects))
    actions = frozenset(_match_actions(full, catalogs.actions))

    day: int | None = None
    m = _DAY_NUM.search(full)
    if m:
        day = int(m.group(1))
    else:
        for word, index in lexicons["day_ordinals"].items():
            if re.search(rf"\b{word}\s+day\b", full):
                day = manifest.days if index == -1 else index
                break
    if day is not None and not 1 <= day <= manifest.days:
        day = None

    time_range: tuple[int, int] | None = None
    clocks = [int(h) * 60 + int(mn) for h, mn in _CLOCK.findall(full) if int(h) < 24 and int(mn) < 60]
    if clocks:
        time_range = (min(clocks), max(clocks))
    else:
        for name, (lo, hi) in lexicons["dayparts"].items():
            if re.search(rf"\b{name}\b", full):
                time_range = (int(lo), int(hi))
                break

    intent, direction = _detect_intent(question_lower, lexicons)

    return ParsedQuery(
        raw=q.text,
        day=day,
        time_range=time_range,
        persons=persons,
        places=frozenset(places_found),
        objects=frozenset(objects_found),
        actions=actions,
        intent=intent,
        order_direction=direction,
    )


def load_questions(path: str | Path) -> list[Question]:
    questions = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                questions.append(question_from_dict(json.loads(line)))
    return questions


def save_questions(questions: list[Question], path: str | Path, extra: dict[str, dict] | None = None) -> None:
    """Write questions.jsonl; ``extra`` rows (harness metadata) merge by id."""
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            row = question_to_dict(q)
            if extra and q.id in extra:
                row.update(extra[q.id])
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")
