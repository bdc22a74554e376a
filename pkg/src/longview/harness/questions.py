"""Four-choice question generation from the ground-truth script.

Each question targets one scripted happening; distractor choices come
from other happenings of the same intent pool so retrieval actually has
to discriminate. The returned metadata (one row per question id) powers
the oracle backend and the evaluator.
"""

from __future__ import annotations

import random

from ..errors import InsufficientEvents
from ..queryparse import CHOICE_LABELS, Question
from .generate import PLACES, VERB_FORMS, GroundTruthScript, Happening

DEFAULT_INTENT_MIX = {
    "who": 0.20,
    "where": 0.20,
    "what": 0.15,
    "when": 0.10,
    "count": 0.15,
    "order_before_after": 0.20,
}


def _allocate(n: int, mix: dict[str, float]) -> dict[str, int]:
    weights = {k: v for k, v in mix.items() if v > 0}
    total = sum(weights.values())
    counts = {k: int(n * v / total) for k, v in weights.items()}
    short = n - sum(counts.values())
    for k in sorted(weights, key=lambda k: -weights[k]):
        if short == 0:
            break
        counts[k] += 1
        short -= 1
    return counts


def _past(h: Happening) -> str:
    return f"{VERB_FORMS[h.verb][1]} the {h.flavor} {h.object_label}"


def _descriptor(h: Happening, script: GroundTruthScript) -> str:
    return f"{script.name_of(h.actor)} {_past(h)}"


class _Builder:
    def __init__(self, script: GroundTruthScript, rng: random.Random):
        self.script = script
        self.rng = rng
        self.names = script.person_names
        self.happenings = script.happenings
        self.order_pairs = [
            (a, b)
            for a, b in zip(script.happenings, script.happenings[1:])
            if a.day == b.day and b.slot == a.slot + 1
        ]

    def _choices(self, gold: str, distractors: list[str]) -> tuple[tuple[tuple[str, str], ...], str]:
        pool = []
        for d in distractors:
            if d != gold and d not in pool:
                pool.append(d)
        if len(pool) < 3:
            raise InsufficientEvents("not enough distinct distractors")
        picked = self.rng.sample(pool, 3)
        slot = self.rng.randrange(4)
        values = picked[:slot] + [gold] + picked[slot:]
        return tuple(zip(CHOICE_LABELS, values)), CHOICE_LABELS[slot]

    def _others(self, exclude: set[str]) -> list[Happening]:
        return [h for h in self.happenings if h.id not in exclude]

    def build(self, intent: str, index: int) -> tuple[Question, dict]:
        if intent == "order_before_after":
            if not self.order_pairs:
                raise InsufficientEvents("no adjacent happening pairs for order questions")
            a, b = self.rng.choice(self.order_pairs)
            direction = self.rng.choice(("before", "after"))
            anchor, target = (b, a) if direction == "before" else (a, b)
            text = f"What happened immediately {direction} {_descriptor(anchor, self.script)}?"
            gold = _descriptor(target, self.script)
            distractors = [_descriptor(h, self.script) for h in self._others({a.id, b.id})]
            choices, label = self._choices(gold, distractors)
            q = Question(id=f"q{index:04d}", text=text, choices=choices, answer=label)
            return q, {
                "intent": intent,
                "target_event": target.id,
                "target_day": target.day,
                "target_slot": target.slot,
                "anchor_event": anchor.id,
            }

        h = self.rng.choice(self.happenings)
        meta = {
            "intent": intent,
            "target_event": h.id,
            "target_day": h.day,
            "target_slot": h.slot,
            "anchor_event": None,
        }
        if intent == "who":
            text = f"Who {_past(h)} in the {h.place} on day {h.day}?"
            gold = self.names[h.actor]
            # co-actors excluded: they appear in the same captions as the actor
            distractors = [name for pid, name in sorted(self.names.items()) if pid not in h.persons]
        elif intent == "where":
            text = f"Where did {self.names[h.actor]} {h.phrase('lemma')} on day {h.day}?"
            gold = h.place
            distractors = [p for p in PLACES if p != h.place]
        elif intent == "what":
            text = f"What did {self.names[h.actor]} do in the {h.place} at {h.clock()} on day {h.day}?"
            gold = h.phrase("lemma")
            distractors = [other.phrase("lemma") for other in self._others({h.id})]
        elif intent == "when":
            text = f"At what time did {self.names[h.actor]} {h.phrase('lemma')}?"
            gold = h.clock()
            distractors = [other.clock() for other in self._others({h.id}) if other.clock() != gold]
        elif intent == "count":
            plural = h.object_label if h.object_label.endswith("s") else h.object_label + "s"
            text = f"How many {h.flavor} {plural} were set out in the {h.place} on day {h.day}?"
            gold = str(h.object_count)
            distractors = [str(k) for k in range(1, 10) if k != h.object_count]
        else:
            raise InsufficientEvents(f"unknown intent {intent!r}")
        choices, label = self._choices(gold, distractors)
        q = Question(id=f"q{index:04d}", text=text, choices=choices, answer=label)
        return q, meta


def generate_questions(
    script: GroundTruthScript,
    n: int,
    intent_mix: dict[str, float] | None = None,
    seed: int | None = None,
) -> tuple[list[Question], dict[str, dict]]:
    """Deterministic question set with gold labels and oracle metadata."""
    if n < 1:
        return [], {}
    if not script.happenings:
        raise InsufficientEvents("script has no happenings")
    if len(script.happenings) < 4:
        raise InsufficientEvents("need at least four happenings for distractors")
    mix = intent_mix or DEFAULT_INTENT_MIX
    rng = random.Random((seed if seed is not None else script.seed) * 1_000_003 + 11)
    builder = _Builder(script, rng)
    counts = _allocate(n, mix)
    questions: list[Question] = []
    meta: dict[str, dict] = {}
    index = 1
    for intent in sorted(counts):
        for _ in range(counts[intent]):
            q, row = builder.build(intent, index)
            row["answer"] = q.answer
            questions.append(q)
            meta[q.id] = row
            index += 1
    return questions, meta
