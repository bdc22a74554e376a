"""Accuracy evaluation with per-intent breakdown and failure tagging."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..cells import parse_key
from ..errors import IdMismatch
from ..sva import AnswerRecord


@dataclass
class EvalReport:
    total: int
    correct: int
    accuracy: float
    per_intent: dict[str, dict] = field(default_factory=dict)
    mean_ledger: dict[str, float] = field(default_factory=dict)
    failure_tags: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "per_intent": self.per_intent,
            "mean_ledger": self.mean_ledger,
            "failure_tags": self.failure_tags,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _bucket_covers(bucket_id: str, day: int, slot: int) -> bool:
    key = parse_key(bucket_id)
    first = key.cell.hour * 12 + key.quarter * 3  # type: ignore[union-attr]
    return key.cell.day == day and first <= slot < first + 3  # type: ignore[union-attr]


def _event_covers(event_id: str, day: int, slot: int) -> bool:
    # event ids embed their seed observation key: ev:<camera>@d<day>s<slot>
    try:
        key = parse_key(event_id.removeprefix("ev:"))
    except Exception:
        return False
    return (key.day, key.slot) == (day, slot)  # type: ignore[union-attr]


def _wrong_cell(answer: AnswerRecord, row: dict) -> bool:
    day, slot = row.get("target_day"), row.get("target_slot")
    if day is None or slot is None:
        return False
    trace = answer.trace
    if trace.get("pipeline") == "sva":
        primary = trace.get("primary")
        return bool(primary) and not _bucket_covers(primary, day, slot)
    cells = trace.get("selection", {}).get("cells", [])
    return bool(cells) and not any(_event_covers(c, day, slot) for c in cells)


def evaluate(answers: list[AnswerRecord], question_rows: list[dict]) -> EvalReport:
    """Accuracy over aligned answer/question ids, with failure taxonomy.

    ``question_rows`` are raw questions.jsonl rows: gold answers plus the
    harness metadata (intent, target day/slot).
    """
    by_id = {row["id"]: row for row in question_rows}
    answer_ids = [a.question_id for a in answers]
    if len(set(answer_ids)) != len(answer_ids):
        raise IdMismatch("duplicate question ids among answers")
    if set(answer_ids) != set(by_id):
        missing = sorted(set(by_id) - set(answer_ids))[:3]
        extra = sorted(set(answer_ids) - set(by_id))[:3]
        raise IdMismatch(f"answer/question ids differ (missing {missing}, unexpected {extra})")

    correct = 0
    per_intent: dict[str, dict] = {}
    ledger_by_pipeline: dict[str, list[int]] = {}
    tags = {"wrong-cell": 0, "abstain-flood": 0, "fallback-used": 0}
    for answer in answers:
        row = by_id[answer.question_id]
        intent = row.get("intent", "other")
        bucket = per_intent.setdefault(intent, {"total": 0, "correct": 0})
        bucket["total"] += 1
        gold = row.get("answer")
        if gold is not None and answer.choice == gold:
            correct += 1
            bucket["correct"] += 1
        pipeline = answer.trace.get("pipeline", "unknown")
        ledger_by_pipeline.setdefault(pipeline, []).append(answer.ledger_total)
        if _wrong_cell(answer, row):
            tags["wrong-cell"] += 1
        if answer.trace.get("pipeline") == "sva":
            verified = answer.trace.get("verified_windows", 0)
            if verified and answer.trace.get("abstains", 0) == verified:
                tags["abstain-flood"] += 1
        if answer.trace.get("fallback_used"):
            tags["fallback-used"] += 1

    for intent, bucket in per_intent.items():
        bucket["accuracy"] = bucket["correct"] / bucket["total"]
    total = len(answers)
    return EvalReport(
        total=total,
        correct=correct,
        accuracy=correct / total if total else 0.0,
        per_intent=per_intent,
        mean_ledger={k: sum(v) / len(v) for k, v in ledger_by_pipeline.items()},
        failure_tags=tags,
    )


def save_answers(answers: list[AnswerRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for answer in answers:
            fh.write(json.dumps(answer.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")


def load_answers(path: str | Path) -> list[AnswerRecord]:
    answers = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                answers.append(AnswerRecord.from_dict(json.loads(line)))
    return answers


def load_question_rows(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows
