import json

from detourlab.core import DetourTuple
from detourlab.llmgen import OfflineBackend
from detourlab.pipeline import (
    curate,
    load_detours,
    load_pairs,
    load_summaries,
    parser_timestamps,
    save_curation,
)
from detourlab.parsing import validate_detour


def test_clean_curation_has_no_rejections(small_world, small_curation):
    st = small_curation.stats
    assert st["summary"]["rejected"] == 0 and st["detour"]["rejected"] == 0
    assert st["summary"]["accepted"] == len(small_world.train_videos)
    assert st["pairs"] > 0 and st["detour"]["accepted"] == 2 * st["pairs"]


def test_both_directions_generated(small_curation):
    keys = {(t.source_id, t.detour_id) for t in small_curation.detours}
    for a, b in keys:
        assert (b, a) in keys


def test_accepted_tuples_are_valid(small_world, small_curation):
    by_id = small_world.by_id
    for t in small_curation.detours:
        assert validate_detour(t, by_id[t.source_id].duration, by_id[t.detour_id].duration) is True


def test_counts_add_up_under_faults(small_world):
    videos = [small_world.by_id[v] for v in small_world.train_videos]
    res = curate(videos, OfflineBackend(small_world, 0.2, 9))
    for stage in ("summary", "detour"):
        s = res.stats[stage]
        assert s["accepted"] + s["rejected"] == s["attempted"]
    assert res.stats["summary"]["rejected"] > 0
    assert sum(res.stats["reasons"].values()) == len(res.rejects)


def test_round_trip_and_determinism(tmp_path, small_world, small_curation):
    save_curation(small_curation, tmp_path / "a")
    videos = [small_world.by_id[v] for v in small_world.train_videos]
    save_curation(curate(videos, OfflineBackend(small_world)), tmp_path / "b")
    for name in ("summaries.jsonl", "pairs.jsonl", "detours.jsonl", "rejects.jsonl", "stats.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert load_detours(tmp_path / "a" / "detours.jsonl") == small_curation.detours
    assert set(load_summaries(tmp_path / "a" / "summaries.jsonl")) == set(small_curation.summaries)
    assert len(load_pairs(tmp_path / "a" / "pairs.jsonl")) == len(small_curation.pairs)
    assert json.loads((tmp_path / "a" / "stats.json").read_text())["pairs"] == len(small_curation.pairs)


def test_parser_timestamps_stay_in_range(small_world, small_curation):
    for vid, s in list(small_curation.summaries.items())[:10]:
        v = small_world.by_id[vid]
        p = parser_timestamps(s, v)
        assert len(p.steps) == len(s.steps)
        assert all(w.end <= v.duration for w, _ in p.steps)


def test_detours_point_at_differing_steps(small_world, small_curation):
    # oracle queries name a value the detour video actually shows
    hits = 0
    for t in small_curation.detours:
        assert isinstance(t, DetourTuple)
        resolved = small_world.resolve_query(t.query)
        hits += bool(resolved)
    assert hits >= 0.95 * len(small_curation.detours)
