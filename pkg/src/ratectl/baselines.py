"""Non-learned reference policies and a brute-force oracle for tiny videos.

heuristic_vbr is a two-pass style controller: it budgets bits per frame from
the first-pass complexities, then walks the video inverting the rate model to
hit each frame's share, correcting multiplicatively for realized spend. It is
a stand-in reference policy, not a faithful model of any production encoder;
reports must label it "heuristic-vbr".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import video_to_dict
from .errors import ConfigError, InputDomainError
from .sim import (
    DEFAULT_SIM,
    QP_MAX,
    EncodeState,
    EpisodeResult,
    SimConfig,
    VideoSpec,
    encode_frame,
    episode_metrics,
    new_state,
    psnr_from_mse,
    qp_to_stepsize,
    step,
)

CACHE_SCHEMA = "ratectl-oracle/1"


def default_qp_grid(levels: int = 8) -> tuple[int, ...]:
    """QP levels uniformly spaced in [0, 255], i.e. geometric in step size."""
    return tuple(round(QP_MAX * i / (levels - 1)) for i in range(levels))


@dataclass(frozen=True)
class OracleConfig:
    qp_grid: tuple[int, ...] = default_qp_grid()
    max_frames: int = 6
    max_nodes: int = 2_000_000

    def __post_init__(self):
        grid = tuple(sorted(set(int(q) for q in self.qp_grid)))
        if grid != tuple(self.qp_grid):
            object.__setattr__(self, "qp_grid", grid)
        if not self.qp_grid:
            raise ConfigError("qp_grid must be non-empty")
        if self.qp_grid[0] < 0 or self.qp_grid[-1] > QP_MAX:
            raise ConfigError("qp_grid values outside [0, 255]")
        if len(self.qp_grid) ** self.max_frames > self.max_nodes:
            raise ConfigError("grid**max_frames exceeds the search budget")


def constant_qp(video: VideoSpec, qp: int) -> list[int]:
    if not 0 <= qp <= QP_MAX:
        raise InputDomainError(f"qp {qp} outside [0, {QP_MAX}]")
    return [int(qp)] * len(video.frames)


def _invert_bits(energy: float, weight: float, target_bits: float,
                 config: SimConfig) -> int:
    """QP whose predicted bits for this frame best match target_bits."""
    payload = target_bits - config.header_bits
    if payload <= 0.0:
        d_star = energy
    else:
        d_star = energy * 2.0 ** (-2.0 * payload / weight)
    delta_star = math.sqrt(12.0 * d_star)
    # invert delta = delta_min * 2**(10 qp / 255)
    qp_star = QP_MAX / 10.0 * math.log2(max(delta_star, config.delta_min) / config.delta_min)
    candidates = {min(max(int(math.floor(qp_star)), 0), QP_MAX),
                  min(max(int(math.ceil(qp_star)), 0), QP_MAX)}
    return min(candidates, key=lambda q: (abs(_predict_bits(energy, weight, q, config) - target_bits), q))


def _predict_bits(energy: float, weight: float, qp: int, config: SimConfig) -> float:
    delta = qp_to_stepsize(qp, config)
    d = delta * delta / 12.0
    if d < energy:
        return config.header_bits + weight * 0.5 * math.log2(energy / d)
    return config.header_bits


def heuristic_vbr(video: VideoSpec, target_kbps: float,
                  config: SimConfig = DEFAULT_SIM) -> list[int]:
    """Two-pass style QP sequence aiming to fill the budget exactly."""
    budget = target_kbps * 1000.0 * video.duration_s
    weights = np.array([config.weight_for(f.kind) * math.log1p(f.complexity)
                        for f in video.frames])
    alloc = budget * weights / weights.sum()

    state = new_state(video, target_kbps)
    qps: list[int] = []
    planned_before = 0.0
    for i, frame in enumerate(video.frames):
        remaining_planned = budget - planned_before
        remaining_actual = budget - state.bits_used
        correction = 1.0
        if remaining_planned > 0.0:
            correction = min(max(remaining_actual / remaining_planned, 0.25), 4.0)
        target_bits = alloc[i] * correction

        d_ref = state.results[frame.ref_index].mse if frame.ref_index is not None else 0.0
        energy = frame.complexity * (1.0 + frame.motion_coupling * d_ref / config.d_scale)
        qp = _invert_bits(energy, config.weight_for(frame.kind), target_bits, config)
        qps.append(qp)
        state, _ = step(state, qp, config)
        planned_before += alloc[i]
    return qps


@dataclass(frozen=True)
class OracleResult:
    qps: tuple[int, ...]
    result: EpisodeResult
    feasible: bool


def exhaustive_oracle(video: VideoSpec, target_kbps: float,
                      oracle_config: OracleConfig = OracleConfig(),
                      config: SimConfig = DEFAULT_SIM) -> OracleResult:
    """Search the full QP-grid product for the best feasible sequence.

    Maximizes mean PSNR subject to overshoot <= 0; falls back to the
    minimal-overshoot sequence (feasible=False) when nothing fits. Ties break
    toward fewer total bits, then the lexicographically smallest QP sequence.
    """
    n = len(video.frames)
    if n > oracle_config.max_frames:
        raise InputDomainError(
            f"{n} frames exceeds oracle max_frames={oracle_config.max_frames}"
        )
    grid = np.array(oracle_config.qp_grid, dtype=np.int64)
    g = len(grid)
    total = g ** n
    if total > oracle_config.max_nodes:
        raise InputDomainError("search space exceeds max_nodes")

    d_quant = np.array([qp_to_stepsize(int(q), config) ** 2 / 12.0 for q in grid])
    leaf = np.arange(total)
    qp_idx = [(leaf // g ** (n - 1 - f)) % g for f in range(n)]

    bits = np.full(total, config.header_bits * n)
    mse: list[np.ndarray] = []
    show_sum = np.zeros(total)
    show_count = 0
    for f, frame in enumerate(video.frames):
        d_ref = mse[frame.ref_index] if frame.ref_index is not None else 0.0
        energy = frame.complexity * (1.0 + frame.motion_coupling * d_ref / config.d_scale)
        dq = d_quant[qp_idx[f]]
        d = np.minimum(energy, dq)
        payload = np.where(dq < energy,
                           config.weight_for(frame.kind) * 0.5 * np.log2(energy / d),
                           0.0)
        bits += payload
        mse.append(d)
        if frame.show:
            show_sum += d
            show_count += 1

    mean_mse = show_sum / show_count
    budget = target_kbps * 1000.0 * video.duration_s
    feasible_mask = bits <= budget

    qp_cols = [grid[qp_idx[f]] for f in range(n)]
    if feasible_mask.any():
        idx = np.flatnonzero(feasible_mask)
        keys = tuple(c[idx] for c in reversed(qp_cols)) + (bits[idx], mean_mse[idx])
        best = idx[np.lexsort(keys)[0]]
        feasible = True
    else:
        keys = tuple(c for c in reversed(qp_cols)) + (bits,)
        best = np.lexsort(keys)[0]
        feasible = False

    qps = tuple(int(c[best]) for c in qp_cols)
    bitrate = bits[best] / (1000.0 * video.duration_s)
    result = EpisodeResult(
        mean_psnr_db=psnr_from_mse(float(mean_mse[best])),
        bitrate_kbps=float(bitrate),
        overshoot_kbps=float(bitrate - target_kbps),
    )
    return OracleResult(qps=qps, result=result, feasible=feasible)


def run_sequence(video: VideoSpec, target_kbps: float, qps: list[int],
                 config: SimConfig = DEFAULT_SIM) -> tuple[EncodeState, EpisodeResult]:
    """Encode a full QP sequence and return the final state plus metrics."""
    state = new_state(video, target_kbps)
    for qp in qps:
        state, _ = step(state, qp, config)
    return state, episode_metrics(state)


def _video_hash(video: VideoSpec) -> str:
    import hashlib

    return hashlib.sha256(
        json.dumps(video_to_dict(video), sort_keys=True).encode()
    ).hexdigest()[:16]


def oracle_cached(video: VideoSpec, target_kbps: float,
                  oracle_config: OracleConfig = OracleConfig(),
                  config: SimConfig = DEFAULT_SIM,
                  cache_path: str | Path | None = None) -> OracleResult:
    """exhaustive_oracle with an optional JSON-lines disk cache."""
    if cache_path is None:
        return exhaustive_oracle(video, target_kbps, oracle_config, config)
    cache_path = Path(cache_path)
    key = {
        "schema": CACHE_SCHEMA,
        "video": _video_hash(video),
        "target": target_kbps,
        "grid": list(oracle_config.qp_grid),
    }
    key_str = json.dumps(key, sort_keys=True)
    if cache_path.exists():
        with open(cache_path) as fh:
            for line in fh:
                entry = json.loads(line)
                if json.dumps(entry["key"], sort_keys=True) == key_str:
                    r = entry["result"]
                    return OracleResult(
                        qps=tuple(r["qps"]),
                        result=EpisodeResult(r["psnr"], r["bitrate"], r["overshoot"]),
                        feasible=r["feasible"],
                    )
    out = exhaustive_oracle(video, target_kbps, oracle_config, config)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    with open(cache_path, "a") as fh:
        fh.write(json.dumps({
            "key": key,
            "result": {
                "qps": list(out.qps),
                "psnr": out.result.mean_psnr_db,
                "bitrate": out.result.bitrate_kbps,
                "overshoot": out.result.overshoot_kbps,
                "feasible": out.feasible,
            },
        }, sort_keys=True) + "\n")
    return out
