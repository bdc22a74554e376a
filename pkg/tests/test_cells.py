import pytest

from longview.cells import (
    BucketKey,
    CellKey,
    SubWindowKey,
    adjacent_subwindows,
    bucket_for_time,
    enumerate_buckets,
    enumerate_cells,
    load_documents,
    parse_key,
    partition,
    save_documents,
    summarize_cell,
)
from longview.errors import HttpError, ValidationError
from longview.gateway import Gateway, ScriptedBackend
from longview.harness import real_corpus_manifest
from longview.lanes import CaptionPayload, LaneRecord, TranscriptPayload, SpeakerCandidate
from longview.manifest import TimeWindow

H9 = 9 * 3600


def _caption(camera, text, start, length=300, kind="scene_300s"):
    return LaneRecord("caption", camera, TimeWindow(start, start + length), CaptionPayload(text, kind))


def _transcript(camera, text, start, length=300):
    return LaneRecord(
        "transcript", camera, TimeWindow(start, start + length),
        TranscriptPayload(text, (SpeakerCandidate("p01", 0.9),), "p01"),
    )


# -- keys ----------------------------------------------------------------

def test_key_ids_roundtrip():
    cell = CellKey(2, 9)
    bucket = BucketKey(cell, 3)
    sub = SubWindowKey("exo1", 2, 126)
    for key in (cell, bucket, sub):
        assert parse_key(key.id) == key


def test_bucket_quarter_bounds():
    with pytest.raises(ValidationError):
        BucketKey(CellKey(1, 9), 4)


def test_bucket_for_time():
    t = 86400 + 9 * 3600 + 16 * 60  # day 2, 09:16
    assert bucket_for_time(t, real_corpus_manifest()).id == "d2h09q1"


# -- enumeration / cellization --------------------------------------------

def test_real_corpus_manifest_yields_exactly_50_cells():
    cells = enumerate_cells(real_corpus_manifest())
    assert len(cells) == 50


def test_tiny_manifest_cells(tiny_manifest):
    assert [c.id for c in enumerate_cells(tiny_manifest)] == ["d1h09", "d1h10"]
    assert len(enumerate_buckets(tiny_manifest)) == 8


# -- partition --------------------------------------------------------------

def test_partition_all_keys_present_when_empty(tiny_manifest):
    parts = partition([], tiny_manifest, "cell")
    assert len(parts) == 2
    assert all(rows == [] for rows in parts.values())


def test_partition_boundary_record_in_both_buckets(tiny_manifest):
    rec = _caption("exo1", "straddles", H9 + 14 * 60, length=120)  # 09:14-09:16
    parts = partition([rec], tiny_manifest, "bucket")
    hits = [key.id for key, rows in parts.items() if rows]
    assert hits == ["d1h09q0", "d1h09q1"]


def test_partition_subwindow_respects_camera(tiny_manifest):
    rec = _caption("exo1", "only exo1", H9)
    parts = partition([rec], tiny_manifest, "subwindow")
    hits = [key for key, rows in parts.items() if rows]
    assert hits == [SubWindowKey("exo1", 1, 108)]


def test_partition_is_covering_and_order_invariant(tiny_manifest):
    records = [
        _caption("exo1", "a", H9),
        _caption("ego1", "b", H9 + 3500, length=400),  # crosses the hour
        _transcript("exo1", "c", H9 + 7000, length=120),
    ]
    for granularity in ("cell", "bucket", "subwindow"):
        fwd = partition(records, tiny_manifest, granularity)
        rev = partition(list(reversed(records)), tiny_manifest, granularity)
        pairs_fwd = {(key.id, id(None), r.text) for key, rows in fwd.items() for r in rows}
        pairs_rev = {(key.id, id(None), r.text) for key, rows in rev.items() for r in rows}
        assert pairs_fwd == pairs_rev
        for record in records:
            assert any(record in rows for rows in fwd.values()), granularity


# -- summaries ----------------------------------------------------------------

def test_summary_empty_records(tiny_manifest):
    doc = summarize_cell([], "d1h09", budget=100)
    assert doc.text == ""
    assert all(v == 0 for v in doc.source_counts.values())


def test_summary_orders_transcripts_first(tiny_manifest):
    records = [
        _caption("exo1", "caption text", H9),
        _transcript("exo1", "spoken words", H9),
        _transcript("ego1", "more words", H9 + 300),
    ]
    doc = summarize_cell(records, "d1h09", budget=10_000)
    lines = doc.text.splitlines()
    assert "spoken words" in lines[0]
    assert "more words" in lines[1]
    assert "caption text" in lines[2]
    assert doc.source_counts["transcript"] == 2
    assert doc.source_counts["caption"] == 1


def test_summary_never_cuts_a_record(tiny_manifest):
    records = [_transcript("exo1", "twelve tokens of speech here", H9)]
    full = summarize_cell(records, "d1h09", budget=10_000).text
    # oracle: greedy prefix sum over rendered record lengths
    assert summarize_cell(records, "d1h09", budget=len(full) - 1).text == ""
    assert summarize_cell(records, "d1h09", budget=len(full)).text == full


def test_summary_budget_must_be_positive():
    with pytest.raises(ValidationError):
        summarize_cell([], "d1h09", budget=0)


def test_summary_gateway_path_and_fallback(tiny_manifest):
    records = [_transcript("exo1", "hello there", H9)]

    class _Echo:
        backend_id = "stub"

        def complete(self, req):
            return '{"text": "model summary"}'

    gw = Gateway(channels={"primary": _Echo()})
    doc = summarize_cell(records, "d1h09", budget=100, gateway=gw)
    assert doc.text == "model summary"
    assert "gateway_fallback" not in doc.source_counts

    failing = Gateway(channels={"primary": ScriptedBackend(unknown_policy="error")})
    doc2 = summarize_cell(records, "d1h09", budget=10_000, gateway=failing)
    assert "hello there" in doc2.text
    assert doc2.source_counts["gateway_fallback"] == 1


def test_documents_roundtrip(tmp_path):
    docs = [summarize_cell([_transcript("exo1", "words", H9)], "d1h09", budget=1000)]
    path = tmp_path / "cell.docs.jsonl"
    save_documents(docs, path)
    loaded = load_documents(path)
    assert loaded[0].key_id == docs[0].key_id
    assert loaded[0].text == docs[0].text
    assert loaded[0].source_counts == docs[0].source_counts


# -- sub-window expansion ---------------------------------------------------

def test_expansion_default_is_24_away_from_boundaries():
    manifest = real_corpus_manifest()
    anchor = BucketKey(CellKey(2, 12), 1)
    cameras = ["ego1", "ego2", "exo1", "exo2"]
    keys = adjacent_subwindows(anchor, cameras, manifest)
    assert len(keys) == 24
    assert len(set(keys)) == 24
    slots = sorted({k.slot for k in keys})
    assert len(slots) == 6
    # bucket 12:15-12:30 covers slots 147..149; one before, two after
    assert slots == [146, 147, 148, 149, 150, 151]
    assert keys == sorted(keys, key=lambda k: (k.slot, k.camera))


def test_expansion_single_camera_own_bucket(tiny_manifest):
    anchor = BucketKey(CellKey(1, 9), 0)
    keys = adjacent_subwindows(anchor, ["exo1"], tiny_manifest, span_before=0, span_after=0)
    assert [k.slot for k in keys] == [108, 109, 110]


def test_expansion_clips_at_day_start(tiny_manifest):
    anchor = BucketKey(CellKey(1, 9), 0)
    keys = adjacent_subwindows(anchor, ["exo1"], tiny_manifest, span_before=2, span_after=0)
    assert min(k.slot for k in keys) == 108  # nothing before 09:00
    assert len(keys) == 3


def test_expansion_output_size_formula(tiny_manifest):
    anchor = BucketKey(CellKey(1, 10), 1)
    cameras = ["ego1", "exo1"]
    keys = adjacent_subwindows(anchor, cameras, tiny_manifest, span_before=1, span_after=2)
    slots = {k.slot for k in keys}
    assert len(keys) == len(cameras) * len(slots)
