"""Episode replay buffer with uniform transition sampling."""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InputDomainError

UNROLL_STEPS = 5
PAD_ACTION = 0   # no-op filler for action slots whose unroll position is masked


@dataclass
class Transition:
    """One acting step: network input, search target, and training labels.

    aux holds the raw (unnormalized) auxiliary labels: PSNR of the previous
    frame (0 at episode start), ln bits of the previous frame (0 at start),
    final episode PSNR, final episode bitrate in kbps. actions holds the
    UNROLL_STEPS actions starting at this step, padded with PAD_ACTION where
    the resulting unroll position falls outside the episode.
    """

    features: np.ndarray        # (feature_dim,)
    policy_target: np.ndarray   # (action_bins,)
    value: float
    aux: np.ndarray             # (4,)
    actions: np.ndarray         # (UNROLL_STEPS,) int


@dataclass
class Episode:
    video_id: str
    target_kbps: float
    transitions: list[Transition]
    actions: list[int]          # full action-bin sequence, one per frame
    mean_psnr_db: float
    bitrate_kbps: float
    overshoot_kbps: float
    value: float = 0.0

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass
class ReplayBuffer:
    """Ring of episodes; sampling is uniform over stored transitions."""

    capacity_episodes: int = 50_000
    _episodes: deque = field(default_factory=deque)
    _total_transitions: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def add(self, episode: Episode) -> None:
        with self._lock:
            self._episodes.append(episode)
            self._total_transitions += len(episode)
            while len(self._episodes) > self.capacity_episodes:
                dropped = self._episodes.popleft()
                self._total_transitions -= len(dropped)

    @property
    def num_episodes(self) -> int:
        return len(self._episodes)

    @property
    def num_transitions(self) -> int:
        return self._total_transitions

    def sample(self, batch_size: int,
               rng: np.random.Generator) -> list[tuple[Episode, int]]:
        """Uniformly pick (episode, step) positions, with replacement."""
        with self._lock:
            if self._total_transitions == 0:
                raise InputDomainError("replay buffer is empty")
            episodes = list(self._episodes)
        lengths = np.array([len(e) for e in episodes])
        bounds = np.cumsum(lengths)
        flat = rng.integers(0, bounds[-1], size=batch_size)
        out = []
        for idx in flat:
            e = int(np.searchsorted(bounds, idx, side="right"))
            t = int(idx - (bounds[e - 1] if e else 0))
            out.append((episodes[e], t))
        return out

    def episodes(self) -> list[Episode]:
        with self._lock:
            return list(self._episodes)
