"""Synthetic video encoder environment.

Frame-sequential QP decisions produce per-frame bits and distortion under a
classical high-rate model: quantizer distortion D = stepsize^2 / 12 clipped at
the frame's effective residual energy, payload bits proportional to
0.5*log2(energy / D). Distortion of a reference frame inflates the effective
energy of frames predicted from it, which is what makes bit allocation a
planning problem. The whole environment is a pure function of
(video, target bitrate, QP sequence).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InputDomainError, StateError

QP_MAX = 255
PEAK = 255.0  # peak pixel intensity for PSNR

# Normalization constants for observation features. Documented here because
# stored transitions and network inputs rely on them staying fixed.
PSNR_NORM = 60.0        # dB
LOG_BITS_NORM = 20.0    # natural-log bits
DURATION_NORM = 10.0    # seconds
TARGET_MIN_KBPS = 256.0
TARGET_MAX_KBPS = 768.0


class FrameKind(Enum):
    KEY = "KEY"
    ARF_HIDDEN = "ARF_HIDDEN"
    INTER = "INTER"


@dataclass(frozen=True)
class SimConfig:
    """Fixed constants of the rate-distortion model."""

    header_bits: float = 200.0
    weight_key: float = 20000.0
    weight_other: float = 8000.0
    d_scale: float = 100.0        # reference-mse scale in the energy coupling
    delta_min: float = 0.5        # stepsize at QP 0; QP 255 gives delta_min * 2**10
    complexity_norm: float = 3000.0

    def weight_for(self, kind: FrameKind) -> float:
        return self.weight_key if kind is FrameKind.KEY else self.weight_other


DEFAULT_SIM = SimConfig()


@dataclass(frozen=True)
class FrameSpec:
    """Static description of one frame produced by corpus generation."""

    index: int
    kind: FrameKind
    show: bool
    complexity: float             # source residual energy, MSE units
    motion_coupling: float        # in [0, 1], 0 for KEY
    ref_index: Optional[int] = None

    def __post_init__(self):
        if self.kind is FrameKind.KEY:
            if self.motion_coupling != 0.0 or self.ref_index is not None:
                raise InputDomainError("KEY frames have no reference and zero coupling")
        else:
            if self.ref_index is None or self.ref_index >= self.index:
                raise InputDomainError(
                    f"frame {self.index}: ref_index must precede the frame"
                )
        if self.show and self.kind is FrameKind.ARF_HIDDEN:
            raise InputDomainError("ARF_HIDDEN frames are never shown")
        if not self.show and self.kind is not FrameKind.ARF_HIDDEN:
            raise InputDomainError("only ARF_HIDDEN frames are hidden")
        if not (self.complexity > 0.0 and math.isfinite(self.complexity)):
            raise InputDomainError("complexity must be finite and positive")
        if not 0.0 <= self.motion_coupling <= 1.0:
            raise InputDomainError("motion_coupling must lie in [0, 1]")


@dataclass(frozen=True)
class VideoSpec:
    """A synthetic video: an ordered frame list plus timing."""

    id: str
    frames: tuple[FrameSpec, ...]
    fps: float

    def __post_init__(self):
        if not self.frames:
            raise InputDomainError("video needs at least one frame")
        if self.frames[0].kind is not FrameKind.KEY:
            raise InputDomainError("frame 0 must be KEY")
        if self.show_count == 0:
            raise InputDomainError("video needs at least one show frame")
        if self.fps <= 0:
            raise InputDomainError("fps must be positive")
        for i, f in enumerate(self.frames):
            if f.index != i:
                raise InputDomainError("frame indices must be 0..n-1 in order")

    @property
    def show_count(self) -> int:
        return sum(1 for f in self.frames if f.show)

    @property
    def duration_s(self) -> float:
        return self.show_count / self.fps


@dataclass(frozen=True)
class FrameResult:
    qp: int
    bits: float
    mse: float
    psnr_db: float


@dataclass(frozen=True)
class EpisodeResult:
    mean_psnr_db: float
    bitrate_kbps: float
    overshoot_kbps: float


@dataclass(frozen=True)
class EncodeState:
    """Progress of one encode: immutable; step() returns a new state."""

    video: VideoSpec
    target_kbps: float
    next_index: int = 0
    results: tuple[FrameResult, ...] = field(default_factory=tuple)
    bits_used: float = 0.0

    @property
    def done(self) -> bool:
        return self.next_index >= len(self.video.frames)

    @property
    def budget_bits(self) -> float:
        return self.target_kbps * 1000.0 * self.video.duration_s

    @property
    def budget_fraction_used(self) -> float:
        return self.bits_used / self.budget_bits


def new_state(video: VideoSpec, target_kbps: float) -> EncodeState:
    if not (TARGET_MIN_KBPS <= target_kbps <= TARGET_MAX_KBPS):
        raise InputDomainError(
            f"target {target_kbps} kbps outside [{TARGET_MIN_KBPS}, {TARGET_MAX_KBPS}]"
        )
    return EncodeState(video=video, target_kbps=float(target_kbps))


def qp_to_stepsize(qp: int, config: SimConfig = DEFAULT_SIM) -> float:
    """Quantization step size, exponential in QP: 0.5 at QP 0, 512 at QP 255."""
    if not isinstance(qp, (int, np.integer)) or isinstance(qp, bool):
        raise InputDomainError(f"qp must be an integer, got {qp!r}")
    if not 0 <= qp <= QP_MAX:
        raise InputDomainError(f"qp {qp} outside [0, {QP_MAX}]")
    return config.delta_min * 2.0 ** (10.0 * qp / QP_MAX)


def psnr_from_mse(mse: float) -> float:
    return 10.0 * math.log10(PEAK * PEAK / mse)


def encode_frame(state: EncodeState, qp: int, config: SimConfig = DEFAULT_SIM) -> FrameResult:
    """Encode the next frame at the given QP without advancing the state."""
    if state.done:
        raise StateError("episode already finished")
    frame = state.video.frames[state.next_index]
    d_ref = 0.0
    if frame.ref_index is not None:
        d_ref = state.results[frame.ref_index].mse
    energy = frame.complexity * (1.0 + frame.motion_coupling * d_ref / config.d_scale)
    delta = qp_to_stepsize(qp, config)
    d_quant = delta * delta / 12.0
    if d_quant < energy:
        mse = d_quant
        bits = config.header_bits + config.weight_for(frame.kind) * 0.5 * math.log2(energy / mse)
    else:
        mse = energy
        bits = config.header_bits
    return FrameResult(qp=int(qp), bits=bits, mse=mse, psnr_db=psnr_from_mse(mse))


def step(state: EncodeState, qp: int, config: SimConfig = DEFAULT_SIM) -> tuple[EncodeState, bool]:
    """Apply a QP to the next frame; returns the new state and a done flag."""
    result = encode_frame(state, qp, config)
    new = replace(
        state,
        next_index=state.next_index + 1,
        results=state.results + (result,),
        bits_used=state.bits_used + result.bits,
    )
    return new, new.done


def episode_metrics(state: EncodeState) -> EpisodeResult:
    """Final PSNR/bitrate/overshoot. PSNR aggregates the global mean MSE over show frames."""
    if not state.done:
        raise StateError("episode_metrics requires a finished episode")
    show_mse = [
        r.mse for r, f in zip(state.results, state.video.frames) if f.show
    ]
    mean_psnr = psnr_from_mse(sum(show_mse) / len(show_mse))
    bitrate = state.bits_used / (1000.0 * state.video.duration_s)
    return EpisodeResult(
        mean_psnr_db=mean_psnr,
        bitrate_kbps=bitrate,
        overshoot_kbps=bitrate - state.target_kbps,
    )


def first_pass(video: VideoSpec) -> np.ndarray:
    """Per-frame analysis rows: (complexity, motion_coupling, is_key, ln complexity, index/n)."""
    n = len(video.frames)
    rows = np.empty((n, 5), dtype=np.float64)
    for i, f in enumerate(video.frames):
        rows[i, 0] = f.complexity
        rows[i, 1] = f.motion_coupling
        rows[i, 2] = 1.0 if f.kind is FrameKind.KEY else 0.0
        rows[i, 3] = math.log(f.complexity)
        rows[i, 4] = i / n
    return rows


@dataclass(frozen=True)
class ObservationBundle:
    """Normalized view of an EncodeState handed to the agent.

    first_pass_norm columns: complexity / complexity_norm, motion_coupling,
    is_key, ln(complexity) / ln(complexity_norm), index / frame_count.
    history columns (one row per already-encoded frame): psnr / PSNR_NORM,
    ln(bits) / LOG_BITS_NORM, qp / QP_MAX, index / frame_count.
    """

    first_pass_norm: np.ndarray     # (n_frames, 5)
    history: np.ndarray             # (encoded, 4)
    next_index: int
    next_kind: Optional[FrameKind]  # None once the episode is done
    frame_count: int
    duration_norm: float            # duration_s / DURATION_NORM
    target_norm: float              # (target - 256) / (768 - 256)
    budget_fraction_used: float


def normalize_target(target_kbps: float) -> float:
    return (target_kbps - TARGET_MIN_KBPS) / (TARGET_MAX_KBPS - TARGET_MIN_KBPS)


def observation(
    state: EncodeState,
    config: SimConfig = DEFAULT_SIM,
    fp: Optional[np.ndarray] = None,
) -> ObservationBundle:
    """Build the agent observation. Pass a precomputed first_pass(video) as fp to reuse it."""
    video = state.video
    n = len(video.frames)
    if fp is None:
        fp = first_pass(video)
    fp_norm = fp.copy()
    fp_norm[:, 0] /= config.complexity_norm
    fp_norm[:, 3] /= math.log(config.complexity_norm)

    k = state.next_index
    history = np.empty((k, 4), dtype=np.float64)
    for i, r in enumerate(state.results):
        history[i, 0] = r.psnr_db / PSNR_NORM
        history[i, 1] = math.log(r.bits) / LOG_BITS_NORM
        history[i, 2] = r.qp / QP_MAX
        history[i, 3] = i / n
    return ObservationBundle(
        first_pass_norm=fp_norm,
        history=history,
        next_index=k,
        next_kind=None if state.done else video.frames[k].kind,
        frame_count=n,
        duration_norm=video.duration_s / DURATION_NORM,
        target_norm=normalize_target(state.target_kbps),
        budget_fraction_used=state.budget_fraction_used,
    )
