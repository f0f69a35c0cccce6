"""Corpus generator and serialization tests."""

import json

import pytest

from ratectl.corpus import (
    CorpusParams,
    corpus_hash,
    gen_corpus,
    load_corpus,
    save_corpus,
    video_from_dict,
    video_to_dict,
)
from ratectl.errors import ConfigError
from ratectl.sim import FrameKind

FAST = CorpusParams(fps=2.0, duration_range=(2.0, 4.0))


def test_same_seed_is_byte_identical():
    a = gen_corpus(7, 16, FAST)
    b = gen_corpus(7, 16, FAST)
    assert [json.dumps(video_to_dict(v), sort_keys=True) for v in a] == \
           [json.dumps(video_to_dict(v), sort_keys=True) for v in b]


def test_different_seed_differs():
    a = gen_corpus(7, 4, FAST)
    b = gen_corpus(8, 4, FAST)
    assert corpus_hash(a) != corpus_hash(b)


def test_zero_count():
    assert gen_corpus(3, 0, FAST) == []


def test_complexity_within_bounds_large_scan():
    params = CorpusParams(fps=2.0, duration_range=(3.0, 7.0),
                          complexity_range=(10.0, 3000.0), arf_period=3,
                          scene_change_prob=0.5)
    lo, hi = params.complexity_range
    for video in gen_corpus(123, 1000, params):
        for f in video.frames:
            assert lo <= f.complexity <= hi


def test_durations_follow_fps_and_range():
    params = CorpusParams(fps=4.0, duration_range=(3.0, 7.0))
    for video in gen_corpus(5, 50, params):
        assert 2.8 <= video.duration_s <= 7.2
        assert video.duration_s == video.show_count / 4.0


def test_arf_frames_inserted_and_hidden():
    params = CorpusParams(fps=4.0, duration_range=(4.0, 6.0), arf_period=4)
    corpus = gen_corpus(2, 10, params)
    arfs = [f for v in corpus for f in v.frames if f.kind is FrameKind.ARF_HIDDEN]
    assert arfs and all(not f.show for f in arfs)


def test_scene_changes_add_interior_keys():
    always = CorpusParams(fps=3.0, duration_range=(3.0, 5.0), scene_change_prob=1.0)
    for video in gen_corpus(9, 10, always):
        keys = [f for f in video.frames if f.kind is FrameKind.KEY]
        assert len(keys) == 2 and keys[1].index > 0


def test_save_load_roundtrip(tmp_path):
    params = CorpusParams(fps=3.0, duration_range=(2.0, 3.0), arf_period=3)
    corpus = gen_corpus(42, 8, params)
    save_corpus(corpus, tmp_path / "c", seed=42, params=params)
    loaded = load_corpus(tmp_path / "c")
    assert corpus_hash(loaded) == corpus_hash(corpus)
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert manifest["seed"] == 42 and manifest["count"] == 8


def test_video_dict_roundtrip():
    video = gen_corpus(1, 1, FAST)[0]
    doc = video_to_dict(video)
    assert video_from_dict(doc) == video


def test_bad_schema_rejected():
    doc = video_to_dict(gen_corpus(1, 1, FAST)[0])
    doc["schema"] = "nope"
    with pytest.raises(ConfigError):
        video_from_dict(doc)
