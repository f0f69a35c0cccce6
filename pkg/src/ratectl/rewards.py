"""Episode returns: self-competition against an EMA history, plus variants.

The binary return compares the episode against exponential moving averages of
past performance on the same (video, target) key: constraint satisfaction is
compared first, quality second. The comparison always uses the EMA values as
they were BEFORE this episode is folded in; episode_return enforces that
ordering atomically per key.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass

from .errors import ConfigError, InputDomainError

SNAPSHOT_SCHEMA = "ratectl-ema/1"

SELF_COMPETE = "self-compete"
AUGMENTED = "augmented"
LAGRANGIAN = "lagrangian"

AUGMENTED_OVERSHOOT_WEIGHT = 0.005  # dB per kbps of overshoot in the augmented score


@dataclass(frozen=True)
class RewardMode:
    kind: str = SELF_COMPETE
    lam: float = 1.0                  # lagrangian multiplier
    psnr_scale: float = 1.0 / 40.0    # per dB
    overshoot_scale: float = 1.0 / 256.0  # per kbps

    def __post_init__(self):
        if self.kind not in (SELF_COMPETE, AUGMENTED, LAGRANGIAN):
            raise ConfigError(f"unknown reward mode {self.kind!r}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.psnr_scale <= 0 or self.overshoot_scale <= 0:
            raise ConfigError("scales must be positive")


def _check_finite(**values: float) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise InputDomainError(f"{name} must be finite, got {v!r}")


def self_competition_return(p_ep: float, o_ep: float, p_ema: float, o_ema: float) -> float:
    """+1 if the episode beats the historical EMA, else -1.

    Overshoot is compared first: whenever either overshoot is positive the
    episode wins iff its overshoot does not exceed the EMA overshoot. Only
    when both are within budget does quality decide, with ties winning.
    """
    _check_finite(p_ep=p_ep, o_ep=o_ep, p_ema=p_ema, o_ema=o_ema)
    if o_ep > 0.0 or o_ema > 0.0:
        return 1.0 if o_ep <= o_ema else -1.0
    return 1.0 if p_ep >= p_ema else -1.0


def score_for_mode(mode: RewardMode, p_ep: float, o_ep: float) -> float:
    """Quality score used in the EMA comparison; augmented mode trades PSNR vs overshoot."""
    _check_finite(p_ep=p_ep, o_ep=o_ep)
    if mode.kind == AUGMENTED:
        return p_ep - AUGMENTED_OVERSHOOT_WEIGHT * o_ep
    return p_ep


class EmaBuffer:
    """Per-(video_id, target_kbps) EMAs of score and overshoot.

    Absent keys read as (psnr_init, 0). Read-compare-update sequences are
    serialized per key, so concurrent actors on distinct keys never block
    each other while same-key episodes are linearized.
    """

    def __init__(self, alpha: float = 0.9, psnr_init: float = 30.0):
        if not 0.0 < alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        self.alpha = alpha
        self.psnr_init = psnr_init
        self._entries: dict[tuple[str, float], tuple[float, float]] = {}
        self._locks: dict[tuple[str, float], threading.Lock] = {}
        self._master = threading.Lock()

    @staticmethod
    def key_for(video_id: str, target_kbps: float) -> tuple[str, float]:
        return (video_id, float(target_kbps))

    def _lock_for(self, key: tuple[str, float]) -> threading.Lock:
        with self._master:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.Lock()
            return lock

    def read(self, key: tuple[str, float]) -> tuple[float, float]:
        return self._entries.get(key, (self.psnr_init, 0.0))

    def _update_locked(self, key: tuple[str, float], p_ep: float, o_ep: float) -> None:
        p_ema, o_ema = self.read(key)
        a = self.alpha
        self._entries[key] = (
            (1.0 - a) * p_ema + a * p_ep,
            (1.0 - a) * o_ema + a * o_ep,
        )

    def update(self, key: tuple[str, float], p_ep: float, o_ep: float) -> None:
        _check_finite(p_ep=p_ep, o_ep=o_ep)
        with self._lock_for(key):
            self._update_locked(key, p_ep, o_ep)

    def episode_return(self, key: tuple[str, float], p_ep: float, o_ep: float,
                       mode: RewardMode = RewardMode()) -> float:
        """Compare against the pre-update EMA, then fold the episode in.

        Lagrangian mode skips the comparison and returns the shaped scalar;
        the EMA update is still recorded so reports can track history.
        """
        score = score_for_mode(mode, p_ep, o_ep)
        with self._lock_for(key):
            if mode.kind == LAGRANGIAN:
                ret = mode.psnr_scale * p_ep - mode.lam * mode.overshoot_scale * max(0.0, o_ep)
            else:
                p_ema, o_ema = self.read(key)
                ret = self_competition_return(score, o_ep, p_ema, o_ema)
            self._update_locked(key, score, o_ep)
        return ret

    def snapshot(self) -> dict:
        with self._master:
            entries = dict(self._entries)
        return {
            "schema": SNAPSHOT_SCHEMA,
            "alpha": self.alpha,
            "psnr_init": self.psnr_init,
            "entries": {
                f"{vid}:{format(target, 'g')}": [p, o]
                for (vid, target), (p, o) in sorted(entries.items())
            },
        }

    @classmethod
    def from_snapshot(cls, doc: dict) -> "EmaBuffer":
        if doc.get("schema") != SNAPSHOT_SCHEMA:
            raise ConfigError(f"unsupported EMA snapshot schema {doc.get('schema')!r}")
        buf = cls(alpha=doc["alpha"], psnr_init=doc["psnr_init"])
        for key, (p, o) in doc["entries"].items():
            vid, _, target = key.rpartition(":")
            buf._entries[(vid, float(target))] = (p, o)
        return buf

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)


def update_ema(buffer: EmaBuffer, key: tuple[str, float], p_ep: float, o_ep: float) -> None:
    buffer.update(key, p_ep, o_ep)


def episode_return(buffer: EmaBuffer, key: tuple[str, float], p_ep: float, o_ep: float,
                   mode: RewardMode = RewardMode()) -> float:
    return buffer.episode_return(key, p_ep, o_ep, mode)
