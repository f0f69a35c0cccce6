"""RD sweeps, Bjontegaard BD-rate, and constraint-satisfaction reporting.

BD-rate follows the classic recipe: least-squares cubic fit of log10(bitrate)
against quality for each curve, analytic integration of the fitted
polynomials over the overlapping quality range, and 100*(10**d - 1) where d
is the mean log-rate difference. Negative numbers mean the test policy needs
fewer bits for the same quality.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InputDomainError, NoOverlapError
from .sim import (
    DEFAULT_SIM,
    EncodeState,
    SimConfig,
    VideoSpec,
    episode_metrics,
    new_state,
    step,
)

# QP chosen per frame from the current encode state.
StepPolicy = Callable[[EncodeState], int]
# Builds a per-episode StepPolicy for one (video, target) pair.
PolicyFactory = Callable[[VideoSpec, float], StepPolicy]

OVERSHOOT_HIST_BINS = 15


def default_targets(count: int = 9,
                    lo: float = 256.0, hi: float = 768.0) -> tuple[float, ...]:
    """Uniformly spaced target bitrates, 256..768 kbps inclusive."""
    return tuple(lo + (hi - lo) * i / (count - 1) for i in range(count))


@dataclass(frozen=True)
class RDPoint:
    bitrate_kbps: float
    quality_db: float


@dataclass(frozen=True)
class RDCurve:
    policy: str
    video_id: str
    points: tuple[RDPoint, ...]   # ascending bitrate

    @property
    def monotone(self) -> bool:
        qs = [p.quality_db for p in self.points]
        rates = [p.bitrate_kbps for p in self.points]
        return all(a < b for a, b in zip(rates, rates[1:])) and all(
            a <= b for a, b in zip(qs, qs[1:])
        )


@dataclass(frozen=True)
class EpisodeRecord:
    policy: str
    video_id: str
    target_kbps: float
    bitrate_kbps: float
    quality_db: float
    overshoot_kbps: float


@dataclass
class SweepResult:
    policy: str
    curves: dict[str, RDCurve]
    records: list[EpisodeRecord]


@dataclass
class ConstraintReport:
    policy: str
    episode_count: int
    overshoot_gt0: float
    overshoot_gt5pct: float
    within_5pct: float
    # target -> {"edges": [...], "counts": [...]} histogram of overshoot kbps
    overshoot_hist: dict[float, dict] = field(default_factory=dict)


def rollout(video: VideoSpec, target_kbps: float, policy: StepPolicy,
            config: SimConfig = DEFAULT_SIM) -> EpisodeRecord:
    state = new_state(video, target_kbps)
    while not state.done:
        state, _ = step(state, policy(state), config)
    m = episode_metrics(state)
    return EpisodeRecord(
        policy="", video_id=video.id, target_kbps=target_kbps,
        bitrate_kbps=m.bitrate_kbps, quality_db=m.mean_psnr_db,
        overshoot_kbps=m.overshoot_kbps,
    )


def rd_sweep(policy_factory: PolicyFactory, label: str, corpus: Sequence[VideoSpec],
             targets: Sequence[float] = default_targets(),
             config: SimConfig = DEFAULT_SIM) -> SweepResult:
    """Encode every video at every target and collect curves plus records."""
    records: list[EpisodeRecord] = []
    curves: dict[str, RDCurve] = {}
    for video in corpus:
        video_records = []
        for target in targets:
            rec = rollout(video, target, policy_factory(video, target), config)
            rec = replace(rec, policy=label)
            video_records.append(rec)
            records.append(rec)
        points = tuple(
            RDPoint(r.bitrate_kbps, r.quality_db)
            for r in sorted(video_records, key=lambda r: r.bitrate_kbps)
        )
        curves[video.id] = RDCurve(policy=label, video_id=video.id, points=points)
    return SweepResult(policy=label, curves=curves, records=records)


def _fit_log_rate(curve: RDCurve) -> np.ndarray:
    qual = np.array([p.quality_db for p in curve.points])
    log_rate = np.log10([p.bitrate_kbps for p in curve.points])
    with warnings.catch_warnings():
        # degenerate curves (near-constant quality) are flagged via .monotone
        warnings.simplefilter("ignore", np.exceptions.RankWarning)
        return np.polyfit(qual, log_rate, 3)


def bd_rate(reference: RDCurve, test: RDCurve) -> float:
    """Average percent bitrate change of `test` vs `reference` at equal quality."""
    for curve in (reference, test):
        if len(curve.points) < 4:
            raise InputDomainError(
                f"curve {curve.policy}/{curve.video_id} has {len(curve.points)} points; need >= 4"
            )
        if any(p.bitrate_kbps <= 0 for p in curve.points):
            raise InputDomainError("bitrates must be positive")
    lo = max(min(p.quality_db for p in c.points) for c in (reference, test))
    hi = min(max(p.quality_db for p in c.points) for c in (reference, test))
    if hi <= lo:
        raise NoOverlapError(f"no overlapping quality range: [{lo}, {hi}]")

    diff = np.polyint(_fit_log_rate(test) - _fit_log_rate(reference))
    d = (np.polyval(diff, hi) - np.polyval(diff, lo)) / (hi - lo)
    return 100.0 * (10.0 ** d - 1.0)


def constraint_report(records: Sequence[EpisodeRecord], policy: str | None = None) -> ConstraintReport:
    """Fractions of episodes violating / hitting the bitrate constraint.

    Boundary conventions: overshoot fractions use strict >, the within-5%
    fraction uses inclusive <=.
    """
    recs = [r for r in records if policy is None or r.policy == policy]
    if not recs:
        raise InputDomainError("no records to report on")
    n = len(recs)
    gt0 = sum(1 for r in recs if r.overshoot_kbps > 0.0)
    gt5 = sum(1 for r in recs if r.overshoot_kbps > 0.05 * r.target_kbps)
    within = sum(1 for r in recs if abs(r.bitrate_kbps - r.target_kbps) <= 0.05 * r.target_kbps)

    hist: dict[float, dict] = {}
    by_target: dict[float, list[float]] = {}
    for r in recs:
        by_target.setdefault(r.target_kbps, []).append(r.overshoot_kbps)
    for target, values in sorted(by_target.items()):
        lo, hi = min(values), max(values)
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(values, bins=OVERSHOOT_HIST_BINS, range=(lo, hi))
        hist[target] = {"edges": edges.tolist(), "counts": counts.tolist()}

    return ConstraintReport(
        policy=recs[0].policy if policy is None else policy,
        episode_count=n,
        overshoot_gt0=gt0 / n,
        overshoot_gt5pct=gt5 / n,
        within_5pct=within / n,
        overshoot_hist=hist,
    )


@dataclass
class ComparisonReport:
    reference_policy: str
    test_policy: str
    seeds: int
    # video_id -> per-seed BD-rate values (test vs reference)
    per_video_bd: dict[str, list[float]]
    mean_bd_rate: float
    stderr_bd_rate: float | None
    reference_constraints: ConstraintReport
    test_constraints: list[ConstraintReport]   # one per seed
    skipped_videos: list[str] = field(default_factory=list)
    nonmonotone_curves: int = 0


def compare_policies(reference: SweepResult, tests: Sequence[SweepResult]) -> ComparisonReport:
    """BD-rate and constraint tables of a (possibly multi-seed) test policy vs a reference.

    Each element of `tests` is one seed's sweep of the same policy. The
    standard error is computed over per-seed mean BD-rates and omitted (None)
    for a single seed.
    """
    if not tests:
        raise InputDomainError("need at least one test sweep")
    per_video: dict[str, list[float]] = {}
    skipped: list[str] = []
    nonmono = 0
    for test in tests:
        for vid, curve in test.curves.items():
            ref_curve = reference.curves.get(vid)
            if ref_curve is None:
                continue
            if not curve.monotone or not ref_curve.monotone:
                nonmono += 1
            try:
                value = bd_rate(ref_curve, curve)
            except NoOverlapError:
                skipped.append(vid)
                continue
            per_video.setdefault(vid, []).append(value)

    seed_means = []
    for i, _ in enumerate(tests):
        vals = [v[i] for v in per_video.values() if len(v) > i]
        seed_means.append(float(np.mean(vals)))
    mean_bd = float(np.mean(seed_means))
    stderr = None
    if len(tests) > 1:
        stderr = float(np.std(seed_means, ddof=1) / math.sqrt(len(seed_means)))

    return ComparisonReport(
        reference_policy=reference.policy,
        test_policy=tests[0].policy,
        seeds=len(tests),
        per_video_bd=per_video,
        mean_bd_rate=mean_bd,
        stderr_bd_rate=stderr,
        reference_constraints=constraint_report(reference.records),
        test_constraints=[constraint_report(t.records) for t in tests],
        skipped_videos=sorted(set(skipped)),
        nonmonotone_curves=nonmono,
    )


def write_curves_csv(path: str | Path, sweeps: Sequence[SweepResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "policy", "target_kbps", "bitrate_kbps", "quality_db"])
        for sweep in sweeps:
            for r in sweep.records:
                writer.writerow([r.video_id, r.policy, r.target_kbps,
                                 r.bitrate_kbps, r.quality_db])


def _constraints_dict(c: ConstraintReport) -> dict:
    return {
        "policy": c.policy,
        "episodes": c.episode_count,
        "overshoot_gt0": c.overshoot_gt0,
        "overshoot_gt5pct": c.overshoot_gt5pct,
        "within_5pct": c.within_5pct,
    }


def write_report_json(path: str | Path, report: ComparisonReport) -> None:
    doc = {
        "schema": "ratectl-report/1",
        "reference": report.reference_policy,
        "test": report.test_policy,
        "seeds": report.seeds,
        "mean_bd_rate_pct": report.mean_bd_rate,
        "stderr_bd_rate_pct": report.stderr_bd_rate,
        "per_video_bd_rate_pct": report.per_video_bd,
        "constraints": {
            "reference": _constraints_dict(report.reference_constraints),
            "test_per_seed": [_constraints_dict(c) for c in report.test_constraints],
        },
        "skipped_videos": report.skipped_videos,
        "nonmonotone_curves": report.nonmonotone_curves,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)


def write_report_md(path: str | Path, report: ComparisonReport) -> None:
    lines = [
        f"# {report.test_policy} vs {report.reference_policy}",
        "",
        f"Seeds: {report.seeds}",
        "",
        "## BD-rate",
        "",
    ]
    if report.stderr_bd_rate is None:
        lines.append(f"Mean BD-rate: **{report.mean_bd_rate:+.3f}%**")
    else:
        lines.append(
            f"Mean BD-rate: **{report.mean_bd_rate:+.3f}% ± {report.stderr_bd_rate:.3f}%** (1 SE)"
        )
    lines += [
        "",
        "## Constraint satisfaction",
        "",
        "| policy | overshoot > 0 | overshoot > 5% | within 5% |",
        "|---|---|---|---|",
    ]
    c = report.reference_constraints
    lines.append(
        f"| {c.policy} | {c.overshoot_gt0:.2%} | {c.overshoot_gt5pct:.2%} | {c.within_5pct:.2%} |"
    )
    for c in report.test_constraints:
        lines.append(
            f"| {c.policy} | {c.overshoot_gt0:.2%} | {c.overshoot_gt5pct:.2%} | {c.within_5pct:.2%} |"
        )
    if report.skipped_videos:
        lines += ["", f"Skipped (no quality overlap): {', '.join(report.skipped_videos)}"]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_bd_hist_csv(path: str | Path, report: ComparisonReport, bins: int = 20) -> None:
    values = [float(np.mean(v)) for v in report.per_video_bd.values()]
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, c in enumerate(counts):
            writer.writerow([edges[i], edges[i + 1], int(c)])


def write_overshoot_hist_csv(path: str | Path, constraints: ConstraintReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target_kbps", "bin_left", "bin_right", "count"])
        for target, hist in constraints.overshoot_hist.items():
            edges, counts = hist["edges"], hist["counts"]
            for i, c in enumerate(counts):
                writer.writerow([target, edges[i], edges[i + 1], int(c)])
