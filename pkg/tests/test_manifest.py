import json

import pytest

from longview.errors import ParseError, ValidationError
from longview.harness import real_corpus_manifest
from longview.manifest import TimeWindow, load_manifest, manifest_to_dict, save_manifest


def test_full_scale_manifest_shape():
    m = real_corpus_manifest()
    assert len(m.cameras) == 15
    assert sum(1 for c in m.cameras if c.kind == "ego") == 10
    assert sum(1 for c in m.cameras if c.kind == "exo") == 5
    assert len(m.roster) == 12


def test_manifest_roundtrip(tmp_path, tiny_manifest):
    path = tmp_path / "manifest.json"
    save_manifest(tiny_manifest, path)
    loaded = load_manifest(path)
    assert loaded == tiny_manifest


def test_manifest_rejects_empty_roster(tmp_path, tiny_manifest):
    data = manifest_to_dict(tiny_manifest)
    data["roster"] = []
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ValidationError, match="roster"):
        load_manifest(path)


def test_manifest_rejects_duplicate_camera_ids(tmp_path, tiny_manifest):
    data = manifest_to_dict(tiny_manifest)
    data["cameras"] = [{"id": "exo1", "kind": "exo"}, {"id": "exo1", "kind": "exo"}]
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ValidationError, match="duplicate camera ids"):
        load_manifest(path)


def test_manifest_rejects_wearerless_ego(tmp_path, tiny_manifest):
    data = manifest_to_dict(tiny_manifest)
    data["cameras"] = [{"id": "ego9", "kind": "ego"}]
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ValidationError, match="wearer"):
        load_manifest(path)


def test_manifest_parse_error(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_manifest(path)


def test_per_day_spans_roundtrip(tmp_path):
    m = real_corpus_manifest()
    path = tmp_path / "manifest.json"
    save_manifest(m, path)
    assert load_manifest(path) == m
    # non-uniform spans serialize as a list
    raw = json.loads(path.read_text())
    assert isinstance(raw["day_span"], list)
    assert len(raw["day_span"]) == 4


def test_time_window_invariants():
    with pytest.raises(ValidationError):
        TimeWindow(10, 10)
    with pytest.raises(ValidationError):
        TimeWindow(-1, 5)
    w = TimeWindow(86400 + 100, 86400 + 200)
    assert w.day() == 2
    assert w.duration == 100


def test_time_window_overlap_and_intersect():
    a = TimeWindow(0, 100)
    b = TimeWindow(50, 150)
    c = TimeWindow(100, 200)
    assert a.overlaps(b) and b.overlaps(a)
    assert not a.overlaps(c)  # half-open intervals
    assert a.intersect(b) == TimeWindow(50, 100)
    assert a.intersect(c) is None


def test_contains_window(tiny_manifest):
    assert tiny_manifest.contains_window(TimeWindow(9 * 3600, 9 * 3600 + 300))
    assert not tiny_manifest.contains_window(TimeWindow(8 * 3600, 9 * 3600))
    assert not tiny_manifest.contains_window(TimeWindow(86400 + 9 * 3600, 86400 + 10 * 3600))
