"""Corpus manifest: cameras, roster, and the recorded interval of each day.

The manifest anchors the shared temporal axis. All record timestamps are
integer seconds since ``epoch``; day ``d`` (1-based) covers the absolute
range ``[(d-1)*86400, d*86400)`` on that axis, and only the sub-interval
given by its day span is actually recorded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, ValidationError

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval [start, end) in seconds since corpus epoch."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValidationError(f"window requires 0 <= start < end, got [{self.start}, {self.end})")

    @property
    def duration(self) -> int:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return (self.start + self.end) / 2.0

    def day(self) -> int:
        """1-based index of the day containing the window start."""
        return self.start // SECONDS_PER_DAY + 1

    def overlaps(self, other: "TimeWindow") -> bool:
        return self.start < other.end and other.start < self.end

    def intersect(self, other: "TimeWindow") -> "TimeWindow | None":
        lo, hi = max(self.start, other.start), min(self.end, other.end)
        return TimeWindow(lo, hi) if lo < hi else None


@dataclass(frozen=True)
class CameraInfo:
    id: str
    kind: str  # "ego" | "exo"
    wearer: str | None = None


@dataclass(frozen=True)
class Person:
    id: str
    name: str


@dataclass(frozen=True)
class DaySpan:
    """Recorded interval of one day, in seconds-of-day."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end <= SECONDS_PER_DAY):
            raise ValidationError(f"day_span requires 0 <= start < end <= 86400, got [{self.start}, {self.end})")


@dataclass(frozen=True)
class CorpusManifest:
    days: int
    epoch: int
    day_spans: tuple[DaySpan, ...]  # one per day
    cameras: tuple[CameraInfo, ...]
    roster: tuple[Person, ...]
    embedding_dim: int

    def __post_init__(self):
        if self.days < 1:
            raise ValidationError("manifest needs at least one day")
        if len(self.day_spans) != self.days:
            raise ValidationError(f"expected {self.days} day spans, got {len(self.day_spans)}")
        if not self.roster:
            raise ValidationError("roster is empty")
        if self.embedding_dim < 1:
            raise ValidationError("embedding_dim must be positive")
        cam_ids = [c.id for c in self.cameras]
        if len(set(cam_ids)) != len(cam_ids):
            dupes = sorted({i for i in cam_ids if cam_ids.count(i) > 1})
            raise ValidationError(f"duplicate camera ids: {dupes}")
        person_ids = [p.id for p in self.roster]
        if len(set(person_ids)) != len(person_ids):
            raise ValidationError("duplicate person ids in roster")
        known = set(person_ids)
        for cam in self.cameras:
            if cam.kind not in ("ego", "exo"):
                raise ValidationError(f"camera {cam.id}: kind must be ego or exo")
            if cam.kind == "ego":
                if cam.wearer is None:
                    raise ValidationError(f"ego camera {cam.id} has no wearer")
                if cam.wearer not in known:
                    raise ValidationError(f"ego camera {cam.id} wearer {cam.wearer!r} not in roster")

    # -- lookups ------------------------------------------------------

    def camera_ids(self) -> list[str]:
        return [c.id for c in self.cameras]

    def person_ids(self) -> set[str]:
        return {p.id for p in self.roster}

    def day_span(self, day: int) -> DaySpan:
        if not 1 <= day <= self.days:
            raise ValidationError(f"day {day} outside [1, {self.days}]")
        return self.day_spans[day - 1]

    def day_window(self, day: int) -> TimeWindow:
        """Absolute recorded window of one day on the corpus axis."""
        base = (day - 1) * SECONDS_PER_DAY
        span = self.day_span(day)
        return TimeWindow(base + span.start, base + span.end)

    def contains_window(self, window: TimeWindow) -> bool:
        day = window.day()
        if not 1 <= day <= self.days:
            return False
        dw = self.day_window(day)
        return dw.start <= window.start and window.end <= dw.end


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ParseError(f"{where}: missing key {key!r}")
    return obj[key]


def manifest_from_dict(data: dict) -> CorpusManifest:
    days = int(_require(data, "days", "manifest"))
    raw_span = _require(data, "day_span", "manifest")
    if isinstance(raw_span, dict):
        spans = tuple(DaySpan(int(raw_span["start"]), int(raw_span["end"])) for _ in range(days))
    elif isinstance(raw_span, list):
        spans = tuple(DaySpan(int(s["start"]), int(s["end"])) for s in raw_span)
    else:
        raise ParseError("manifest: day_span must be an object or a list of objects")
    cameras = tuple(
        CameraInfo(str(c["id"]), str(c["kind"]), c.get("wearer"))
        for c in _require(data, "cameras", "manifest")
    )
    roster = tuple(Person(str(p["id"]), str(p["name"])) for p in _require(data, "roster", "manifest"))
    return CorpusManifest(
        days=days,
        epoch=int(_require(data, "epoch", "manifest")),
        day_spans=spans,
        cameras=cameras,
        roster=roster,
        embedding_dim=int(_require(data, "embedding_dim", "manifest")),
    )


def manifest_to_dict(m: CorpusManifest) -> dict:
    uniform = len(set(m.day_spans)) == 1
    span: dict | list
    if uniform:
        span = {"start": m.day_spans[0].start, "end": m.day_spans[0].end}
    else:
        span = [{"start": s.start, "end": s.end} for s in m.day_spans]
    cams = []
    for c in m.cameras:
        row: dict = {"id": c.id, "kind": c.kind}
        if c.wearer is not None:
            row["wearer"] = c.wearer
        cams.append(row)
    return {
        "days": m.days,
        "epoch": m.epoch,
        "day_span": span,
        "cameras": cams,
        "roster": [{"id": p.id, "name": p.name} for p in m.roster],
        "embedding_dim": m.embedding_dim,
    }


def load_manifest(path: str | Path) -> CorpusManifest:
    """Load and validate a manifest file; raises ParseError / ValidationError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("manifest must be a JSON object")
    return manifest_from_dict(data)


def save_manifest(m: CorpusManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(m), indent=2, sort_keys=True) + "\n", encoding="utf-8")
