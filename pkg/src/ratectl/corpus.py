"""Synthetic corpus generation and on-disk corpus format.

A corpus is a directory of one JSON document per video plus a manifest that
records the generator seed and parameters, so the same manifest always means
the same videos.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputDomainError
from .sim import FrameKind, FrameSpec, VideoSpec

VIDEO_SCHEMA = "ratectl-video/1"
MANIFEST_SCHEMA = "ratectl-corpus/1"


@dataclass(frozen=True)
class CorpusParams:
    """Knobs of the video generator.

    Durations are drawn uniformly from duration_range; show-frame count is
    duration * fps rounded, so low fps gives short videos. arf_period inserts
    a hidden alternate-reference frame every that many show frames (0 turns
    them off). Scene changes place an extra KEY frame with a complexity jump.
    """

    fps: float = 30.0
    duration_range: tuple[float, float] = (3.0, 7.0)
    complexity_range: tuple[float, float] = (10.0, 3000.0)
    complexity_jitter: float = 0.35          # lognormal sigma around the video base
    key_intra_factor: float = 3.0            # KEY frames carry full intra energy
    motion_coupling_range: tuple[float, float] = (0.2, 0.95)
    scene_change_prob: float = 0.3
    scene_boost_range: tuple[float, float] = (1.5, 3.0)
    arf_period: int = 0
    anchor_ref_prob: float = 0.5             # INTER references last KEY/ARF vs previous frame

    def __post_init__(self):
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise ConfigError("bad duration_range")
        clo, chi = self.complexity_range
        if not 0 < clo <= chi:
            raise ConfigError("bad complexity_range")
        if self.arf_period < 0:
            raise ConfigError("arf_period must be >= 0")


# Desk-scale preset: 22-38 show frames per video, heavy reference coupling,
# wide within-video complexity spread, and enough content that every target in
# [256, 768] kbps is a real constraint (the QP-0 encode always exceeds
# 768 kbps).
DESK_PARAMS = CorpusParams(
    fps=15.0,
    duration_range=(1.5, 2.5),
    complexity_range=(80.0, 3000.0),
    complexity_jitter=1.0,
    motion_coupling_range=(0.4, 0.95),
    scene_change_prob=0.5,
    scene_boost_range=(1.5, 5.0),
    arf_period=8,
)

# Oracle-scale preset: 4-6 frames per clip so exhaustive search stays exact;
# budgets still bind at every target.
TINY_PARAMS = CorpusParams(
    fps=30.0,
    duration_range=(0.12, 0.2),
    complexity_range=(30.0, 3000.0),
    motion_coupling_range=(0.3, 0.9),
    scene_change_prob=0.15,
    arf_period=0,
)


def _clip_complexity(value: float, params: CorpusParams) -> float:
    lo, hi = params.complexity_range
    return min(max(value, lo), hi)


def _gen_video(rng: np.random.Generator, vid_id: str, params: CorpusParams) -> VideoSpec:
    lo, hi = params.duration_range
    duration = rng.uniform(lo, hi)
    show_count = max(1, round(duration * params.fps))

    clo, chi = params.complexity_range
    base = math.exp(rng.uniform(math.log(clo), math.log(chi)))

    scene_pos = -1
    if show_count >= 4 and rng.random() < params.scene_change_prob:
        scene_pos = int(rng.integers(2, show_count - 1))
        scene_boost = rng.uniform(*params.scene_boost_range)

    mlo, mhi = params.motion_coupling_range
    frames: list[FrameSpec] = []
    anchor = 0
    for s in range(show_count):
        if s == scene_pos:
            base = _clip_complexity(base * scene_boost, params)
        index = len(frames)

        if params.arf_period > 0 and s > 0 and s % params.arf_period == 0 and s != scene_pos:
            c = _clip_complexity(base * math.exp(rng.normal(0.0, params.complexity_jitter)), params)
            frames.append(
                FrameSpec(
                    index=index,
                    kind=FrameKind.ARF_HIDDEN,
                    show=False,
                    complexity=c,
                    motion_coupling=rng.uniform(mlo, mhi),
                    ref_index=anchor,
                )
            )
            anchor = index
            index += 1

        jitter = math.exp(rng.normal(0.0, params.complexity_jitter))
        if s == 0 or s == scene_pos:
            c = _clip_complexity(base * params.key_intra_factor * jitter, params)
            frames.append(
                FrameSpec(index=index, kind=FrameKind.KEY, show=True,
                          complexity=c, motion_coupling=0.0)
            )
            anchor = index
        else:
            c = _clip_complexity(base * jitter, params)
            ref = anchor if rng.random() < params.anchor_ref_prob else index - 1
            frames.append(
                FrameSpec(index=index, kind=FrameKind.INTER, show=True,
                          complexity=c, motion_coupling=rng.uniform(mlo, mhi),
                          ref_index=ref)
            )
    return VideoSpec(id=vid_id, frames=tuple(frames), fps=params.fps)


def gen_corpus(seed: int, count: int, params: CorpusParams = CorpusParams()) -> list[VideoSpec]:
    """Deterministically generate `count` videos from one seed."""
    if count < 0:
        raise InputDomainError("count must be >= 0")
    rng = np.random.default_rng(seed)
    return [_gen_video(rng, f"vid-{seed}-{i:05d}", params) for i in range(count)]


def video_to_dict(video: VideoSpec) -> dict:
    return {
        "schema": VIDEO_SCHEMA,
        "id": video.id,
        "fps": video.fps,
        "frames": [
            {
                "index": f.index,
                "kind": f.kind.value,
                "show": f.show,
                "complexity": f.complexity,
                "motion_coupling": f.motion_coupling,
                "ref_index": f.ref_index,
            }
            for f in video.frames
        ],
    }


def video_from_dict(doc: dict) -> VideoSpec:
    if doc.get("schema") != VIDEO_SCHEMA:
        raise ConfigError(f"unsupported video schema {doc.get('schema')!r}")
    frames = tuple(
        FrameSpec(
            index=f["index"],
            kind=FrameKind(f["kind"]),
            show=f["show"],
            complexity=f["complexity"],
            motion_coupling=f["motion_coupling"],
            ref_index=f["ref_index"],
        )
        for f in doc["frames"]
    )
    return VideoSpec(id=doc["id"], frames=frames, fps=doc["fps"])


def save_corpus(videos: list[VideoSpec], directory: str | Path,
                seed: int | None = None, params: CorpusParams | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for v in videos:
        name = f"{v.id}.json"
        with open(directory / name, "w") as fh:
            json.dump(video_to_dict(v), fh, sort_keys=True, indent=1)
        names.append(name)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "seed": seed,
        "params": asdict(params) if params is not None else None,
        "count": len(videos),
        "videos": [{"id": v.id, "file": n} for v, n in zip(videos, names)],
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
    return directory / "manifest.json"


def load_corpus(directory: str | Path) -> list[VideoSpec]:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ConfigError(f"unsupported corpus schema {manifest.get('schema')!r}")
    videos = []
    for entry in manifest["videos"]:
        with open(directory / entry["file"]) as fh:
            videos.append(video_from_dict(json.load(fh)))
    return videos


def corpus_hash(videos: list[VideoSpec]) -> str:
    """Stable content hash used to key oracle caches."""
    h = hashlib.sha256()
    for v in videos:
        h.update(json.dumps(video_to_dict(v), sort_keys=True).encode())
    return h.hexdigest()[:16]
