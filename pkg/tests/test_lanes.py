import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longview.errors import DimensionMismatch, ParseError, ValidationError
from longview.lanes import (
    ActionPayload,
    CaptionPayload,
    IdentityPayload,
    LaneRecord,
    SpeakerCandidate,
    TranscriptPayload,
    build_action_timeline,
    canonical_line,
    cosine,
    gate_identity_propagation,
    load_lane,
    record_to_dict,
    resolve_speakers_consensus,
    save_lane,
)
from longview.manifest import TimeWindow

H9 = 9 * 3600


def _win(offset: int = 0, length: int = 300) -> TimeWindow:
    return TimeWindow(H9 + offset, H9 + offset + length)


def _identity(camera, person, body, face, window=None):
    return LaneRecord(
        "identity", camera, window or _win(),
        IdentityPayload(person=person, body=tuple(body), face=tuple(face), face_score=0.9),
    )


def _caption(camera, text, kind="scene_300s", window=None):
    return LaneRecord("caption", camera, window or _win(), CaptionPayload(text, kind))


def _transcript(camera, text, candidates, speaker=None, window=None):
    return LaneRecord(
        "transcript", camera, window or _win(),
        TranscriptPayload(text, tuple(SpeakerCandidate(p, s) for p, s in candidates), speaker),
    )


# -- loading -----------------------------------------------------------

def test_load_lane_sorts_and_validates(tmp_path, tiny_manifest):
    records = [
        _transcript("exo1", "later", [("p01", 0.9)], window=_win(600)),
        _transcript("ego1", "earlier", [("p02", 0.5)], window=_win(0)),
        _transcript("exo1", "same start", [("p01", 0.9)], window=_win(0)),
    ]
    path = tmp_path / "transcript.jsonl"
    save_lane(records, path)
    loaded = load_lane(path, tiny_manifest)
    assert len(loaded) == 3
    assert [(r.window.start, r.camera) for r in loaded] == sorted(
        (r.window.start, r.camera) for r in records
    )


def test_load_lane_unknown_camera(tmp_path, tiny_manifest):
    path = tmp_path / "transcript.jsonl"
    save_lane([_transcript("ghost", "hi", [("p01", 0.9)])], path)
    with pytest.raises(ValidationError, match="ghost"):
        load_lane(path, tiny_manifest)


def test_load_lane_caption_kind_set(tmp_path, tiny_manifest):
    path = tmp_path / "caption.jsonl"
    save_lane([_caption("exo1", "fine", kind="scene_300s")], path)
    assert len(load_lane(path, tiny_manifest)) == 1
    row = record_to_dict(_caption("exo1", "nope"))
    row["caption_kind"] = "scene_42s"
    path.write_text(json.dumps(row) + "\n")
    with pytest.raises(ValidationError, match="scene_42s"):
        load_lane(path, tiny_manifest)


def test_load_lane_parse_error_carries_line_number(tmp_path, tiny_manifest):
    path = tmp_path / "caption.jsonl"
    path.write_text(canonical_line(_caption("exo1", "ok")) + "\n{broken\n")
    with pytest.raises(ParseError, match="line 2"):
        load_lane(path, tiny_manifest)


def test_embedding_dim_checked(tmp_path, tiny_manifest):
    path = tmp_path / "identity.jsonl"
    save_lane([_identity("exo1", "p01", [1.0, 0.0, 0.0], [1.0, 0.0])], path)
    with pytest.raises(ValidationError, match="dim"):
        load_lane(path, tiny_manifest)


def test_roundtrip_byte_identical_after_key_normalisation(tmp_path, tiny_manifest, default_corpus):
    _, lanes, _ = default_corpus
    for name in ("identity", "caption", "transcript", "object", "action"):
        records = getattr(lanes, name)[:50]
        path = tmp_path / f"{name}.jsonl"
        save_lane(records, path)
        original = path.read_bytes()
        reloaded = load_lane(path, lanes.manifest)
        save_lane(reloaded, path)
        assert path.read_bytes() == original, f"{name} lane round-trip not stable"


# -- identity gate -----------------------------------------------------

def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine([1.0, 0.0], [1.0, 0.0, 0.0])


def test_gate_self_similarity_propagates(tiny_manifest):
    anchor = _identity("exo1", "p01", [0.6, 0.8], [0.0, 1.0])
    candidate = _identity("ego1", None, [0.6, 0.8], [0.0, 1.0])
    decision = gate_identity_propagation(candidate, anchor, {"p01": (0.0, 1.0)})
    assert decision.propagate and decision.person == "p01"
    assert decision.body_sim == pytest.approx(1.0)


def test_gate_orthogonal_face_rejects():
    anchor = _identity("exo1", "p01", [1.0, 0.0], [1.0, 0.0])
    candidate = _identity("ego1", None, [1.0, 0.0], [0.0, 1.0])
    decision = gate_identity_propagation(candidate, anchor, {"p01": (1.0, 0.0)})
    assert not decision.propagate


def test_gate_near_threshold_pair():
    """Cosines (0.82, 0.71) against thresholds (0.8, 0.7): propagate."""
    body_anchor = (0.82, math.sqrt(1 - 0.82**2))
    face_centroid = (0.71, math.sqrt(1 - 0.71**2))
    anchor = _identity("exo1", "p01", body_anchor, [1.0, 0.0])
    candidate = _identity("ego1", None, [1.0, 0.0], [1.0, 0.0])
    # independent oracle: plain dot products on unit vectors
    assert sum(a * b for a, b in zip((1.0, 0.0), body_anchor)) == pytest.approx(0.82)
    assert sum(a * b for a, b in zip((1.0, 0.0), face_centroid)) == pytest.approx(0.71)
    decision = gate_identity_propagation(candidate, anchor, {"p01": face_centroid}, 0.8, 0.7)
    assert decision.propagate
    assert decision.body_sim == pytest.approx(0.82)
    assert decision.face_sim == pytest.approx(0.71)


@given(
    body=st.floats(0.0, 1.0),
    face=st.floats(0.0, 1.0),
    raise_body=st.floats(0.0, 0.5),
    raise_face=st.floats(0.0, 0.5),
)
@settings(max_examples=60, deadline=None)
def test_gate_monotone_in_thresholds(body, face, raise_body, raise_face):
    """Raising either threshold never turns a reject into a propagate."""
    angle_b = math.acos(min(1.0, body))
    angle_f = math.acos(min(1.0, face))
    anchor = _identity("exo1", "p01", (math.cos(angle_b), math.sin(angle_b)), (1.0, 0.0))
    candidate = _identity("ego1", None, (1.0, 0.0), (math.cos(angle_f), math.sin(angle_f)))
    centroids = {"p01": (1.0, 0.0)}
    low = gate_identity_propagation(candidate, anchor, centroids, 0.4, 0.4)
    high = gate_identity_propagation(candidate, anchor, centroids, 0.4 + raise_body, 0.4 + raise_face)
    assert not (high.propagate and not low.propagate)


# -- speaker consensus -------------------------------------------------

def _consensus_fixture():
    """Five records: one exo needing resolution, corroboration for p03 only."""
    exo = _transcript("exo1", "pass the mug", [("p03", 0.7), ("p02", 0.9)])
    ego_overlap = _transcript("ego1", "pass the mug", [("p03", 0.8)], window=_win(120))
    ego_far = _transcript("ego1", "unrelated", [("p02", 0.9)], window=_win(3600))
    identity_hit = _identity("ego1", "p03", [1.0, 0.0], [1.0, 0.0], window=_win(60))
    identity_far = _identity("exo1", "p02", [1.0, 0.0], [1.0, 0.0], window=_win(3600))
    return [exo, ego_overlap, ego_far], [identity_hit, identity_far]


def test_consensus_picks_corroborated_candidate(tiny_manifest):
    transcripts, identity = _consensus_fixture()
    # oracle: exhaustive overlap scan says only p03 is heard AND seen concurrently
    resolved = resolve_speakers_consensus(transcripts, identity, tiny_manifest)
    assert resolved[0].payload.speaker == "p03"


def test_consensus_no_corroboration_leaves_null(tiny_manifest):
    exo = _transcript("exo1", "hello", [("p02", 0.9)])
    resolved = resolve_speakers_consensus([exo], [], tiny_manifest)
    assert resolved[0].payload.speaker is None


def test_consensus_ego_passthrough(tiny_manifest):
    ego = _transcript("ego1", "hello", [("p02", 0.9)], speaker="p02")
    resolved = resolve_speakers_consensus([ego], [], tiny_manifest)
    assert resolved[0] is ego


def test_consensus_tie_breaks_by_score_then_id(tiny_manifest):
    exo = _transcript("exo1", "together", [("p02", 0.9), ("p01", 0.9)])
    other = _transcript("ego1", "together", [("p01", 0.5), ("p02", 0.5)], window=_win(30))
    identity = [
        _identity("ego1", "p01", [1.0, 0.0], [1.0, 0.0], window=_win(30)),
        _identity("ego1", "p02", [1.0, 0.0], [1.0, 0.0], window=_win(30)),
    ]
    resolved = resolve_speakers_consensus([exo, other], identity, tiny_manifest)
    assert resolved[0].payload.speaker == "p01"  # equal scores, lexicographic id


def test_consensus_never_invents_speakers(tiny_manifest, default_corpus):
    _, lanes, _ = default_corpus
    sample = lanes.transcript[:200]
    resolved = resolve_speakers_consensus(sample, lanes.identity, lanes.manifest)
    for before, after in zip(sample, resolved):
        speaker = after.payload.speaker
        if speaker is not None:
            assert speaker in {c.person for c in before.payload.candidates} | {before.payload.speaker}


# -- action timeline ---------------------------------------------------

def test_timeline_basic_actor_resolution(tiny_manifest):
    cap = _caption("ego1", "Alice chops vegetables", kind="action_verb")
    identity = [_identity("ego1", "p01", [1.0, 0.0], [1.0, 0.0])]
    tuples = build_action_timeline([cap], identity, {"chop"})
    assert len(tuples) == 1
    t = tuples[0]
    assert (t.verb, t.actor, set(t.co_actors)) == ("chop", "p01", set())
    assert t.span == cap.window


def test_timeline_co_actor_from_overlapping_camera(tiny_manifest):
    cap = _caption("ego1", "Alice chops vegetables", kind="action_verb")
    identity = [
        _identity("ego1", "p01", [1.0, 0.0], [1.0, 0.0]),
        _identity("exo1", "p02", [1.0, 0.0], [1.0, 0.0], window=_win(120)),
    ]
    tuples = build_action_timeline([cap], identity, {"chop"})
    assert tuples[0].co_actors == frozenset({"p02"})


def test_timeline_two_verbs_two_tuples(tiny_manifest):
    cap = _caption("ego1", "Alice chops vegetables and stirs the soup", kind="action_verb")
    identity = [_identity("ego1", "p01", [1.0, 0.0], [1.0, 0.0])]
    tuples = build_action_timeline([cap], identity, {"chop", "stir"})
    # oracle: substring scan finds both lexicon verbs
    text = cap.payload.text.lower()
    assert {v for v in ("chop", "stir") if v in text} == {t.verb for t in tuples}
    assert len(tuples) == 2
    assert all(t.span == cap.window and t.actor == "p01" for t in tuples)


def test_timeline_unresolved_actor_dropped(tiny_manifest):
    cap = _caption("ego1", "someone chops something", kind="action_verb")
    tuples = build_action_timeline([cap], [], {"chop"})
    assert tuples == []


def test_timeline_output_bound(default_corpus):
    _, lanes, _ = default_corpus
    captions = [r for r in lanes.caption if r.payload.kind == "action_verb"][:100]
    lexicon = {"chop", "stir", "pour", "wash"}
    tuples = build_action_timeline(captions, lanes.identity, lexicon)
    assert len(tuples) <= len(captions) * len(lexicon)
    spans = {(c.window.start, c.window.end) for c in captions}
    assert all((t.span.start, t.span.end) in spans for t in tuples)


def test_timeline_requires_lexicon():
    with pytest.raises(ValidationError):
        build_action_timeline([], [], set())
