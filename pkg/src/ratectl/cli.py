"""Command-line entry point: corpus generation, training, evaluation, oracle
comparison, and self-tests.

Exit codes: 0 success, 1 check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import (
    OracleConfig,
    constant_qp,
    default_qp_grid,
    heuristic_vbr,
    oracle_cached,
    run_sequence,
)
from .config import load_run_config
from .corpus import CorpusParams, gen_corpus, load_corpus, save_corpus
from .errors import ConfigError, RateCtlError
from .evaluation import (
    SweepResult,
    compare_policies,
    default_targets,
    rd_sweep,
    write_bd_hist_csv,
    write_curves_csv,
    write_overshoot_hist_csv,
    write_report_json,
    write_report_md,
)
from .mcts import NetModel, mcts_search
from .rewards import LAGRANGIAN, RewardMode
from .selftest import run_selftest
from .sim import episode_metrics, first_pass, new_state, observation, step
from .training import greedy_agent_factory, load_checkpoint, train_loop

CACHE_ENV = "RATECTL_CACHE_DIR"


def _parse_targets(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --targets value {text!r}") from exc


def _baseline_factory(name: str):
    if name == "heuristic-vbr":
        def factory(video, target):
            qps = heuristic_vbr(video, target)
            return lambda state: qps[state.next_index]
        return name, factory
    if name.startswith("constant:"):
        try:
            qp = int(name.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad constant policy {name!r}") from exc

        def factory(video, target):
            qps = constant_qp(video, qp)
            return lambda state: qps[state.next_index]
        return name, factory
    raise ConfigError(f"unknown baseline {name!r} (heuristic-vbr or constant:N)")


def _search_agent_factory(params, net_cfg, search_cfg):
    """MCTS-at-evaluation policy; deterministic per (video, target)."""
    import zlib

    from .nets import bin_to_qp, featurize

    def factory(video, target):
        model = NetModel(params, net_cfg)
        fp = first_pass(video)
        seed = zlib.crc32(f"{video.id}:{target:g}".encode())
        rng = np.random.default_rng(seed)

        def policy(state) -> int:
            feat = featurize(observation(state, fp=fp), net_cfg)
            pi, _ = mcts_search(feat, model, search_cfg, rng)
            return bin_to_qp(int(np.argmax(pi)), net_cfg)

        return policy

    return factory


def cmd_gen_corpus(args) -> int:
    params = CorpusParams(
        fps=args.fps,
        duration_range=(args.duration_min, args.duration_max),
        complexity_range=(args.complexity_min, args.complexity_max),
        scene_change_prob=args.scene_prob,
        arf_period=args.arf_period,
        motion_coupling_range=(args.motion_min, args.motion_max),
    )
    videos = gen_corpus(args.seed, args.count, params)
    manifest = save_corpus(videos, args.out, seed=args.seed, params=params)
    print(f"wrote {len(videos)} videos to {args.out} (manifest {manifest})")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    if args.threads is not None:
        cfg = replace(cfg, train=replace(cfg.train, threads=args.threads))
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.reward is not None:
        reward = replace(cfg.reward, kind=args.reward)
        if args.lam is not None:
            reward = replace(reward, lam=args.lam)
        net = cfg.net
        if reward.kind == LAGRANGIAN and net.value_squash:
            net = replace(net, value_squash=False)
        cfg = replace(cfg, reward=reward, net=net)
    elif args.lam is not None:
        cfg = replace(cfg, reward=replace(cfg.reward, lam=args.lam))

    if not cfg.corpus:
        raise ConfigError("run config must point at a corpus directory")
    corpus = load_corpus(cfg.corpus)
    ckpt = train_loop(corpus, cfg.net, cfg.search, cfg.train, mode=cfg.reward,
                      out_dir=cfg.out, resume=args.resume)
    print(f"final checkpoint: {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    if bool(args.checkpoint) == bool(args.test_policy):
        raise ConfigError("need exactly one of --checkpoint (repeatable) or --test-policy")
    corpus = load_corpus(args.corpus)
    targets = _parse_targets(args.targets) if args.targets else default_targets()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ref_label, ref_factory = _baseline_factory(args.baseline)
    reference = rd_sweep(ref_factory, ref_label, corpus, targets)

    tests: list[SweepResult] = []
    test_label = "agent"
    for path in args.checkpoint or []:
        ckpt = load_checkpoint(path)
        if args.search:
            factory = _search_agent_factory(ckpt.params, ckpt.net_config,
                                            _search_cfg_for(args))
        else:
            factory = greedy_agent_factory(ckpt.params, ckpt.net_config)
        tests.append(rd_sweep(factory, test_label, corpus, targets))
    if args.test_policy:
        test_label, test_factory = _baseline_factory(args.test_policy)
        tests.append(rd_sweep(test_factory, test_label, corpus, targets))

    report = compare_policies(reference, tests)
    write_curves_csv(out / "rd_curves.csv", [reference] + tests)
    write_report_json(out / "report.json", report)
    write_report_md(out / "report.md", report)
    write_bd_hist_csv(out / "hist_bd_rate.csv", report)
    write_overshoot_hist_csv(out / f"hist_overshoot_{ref_label}.csv",
                             report.reference_constraints)
    write_overshoot_hist_csv(out / f"hist_overshoot_{report.test_policy}.csv",
                             report.test_constraints[0])
    se = "" if report.stderr_bd_rate is None else f" ± {report.stderr_bd_rate:.3f}%"
    print(f"mean BD-rate {report.test_policy} vs {ref_label}: "
          f"{report.mean_bd_rate:+.3f}%{se}")
    print(f"reports written to {out}")
    return 0


def _search_cfg_for(args):
    from .mcts import SearchConfig

    sims = args.sims if args.sims is not None else 200
    return SearchConfig(simulations=sims, noise_frac=0.0, act_temp_init=0.0,
                        act_temp_final=0.0)


def cmd_oracle(args) -> int:
    corpus = load_corpus(args.corpus)
    targets = _parse_targets(args.targets)
    grid = tuple(int(q) for q in args.grid.split(",")) if args.grid else default_qp_grid()
    ocfg = OracleConfig(qp_grid=grid, max_frames=args.max_frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cache_dir = os.environ.get(CACHE_ENV)
    cache_path = Path(cache_dir) / "oracle_cache.jsonl" if cache_dir else None

    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        label, factory = "agent", greedy_agent_factory(ckpt.params, ckpt.net_config)
    elif args.policy == "oracle":
        def oracle_factory(video, target):
            qps = oracle_cached(video, target, ocfg, cache_path=cache_path).qps
            return lambda state: qps[state.next_index]
        label, factory = "oracle", oracle_factory
    else:
        label, factory = _baseline_factory(args.policy)

    eligible = [v for v in corpus if len(v.frames) <= ocfg.max_frames]
    skipped = len(corpus) - len(eligible)
    rows, gaps, agree = [], [], 0
    for video in eligible:
        for target in targets:
            oracle = oracle_cached(video, target, ocfg, cache_path=cache_path)
            policy = factory(video, target)
            state = new_state(video, target)
            while not state.done:
                state, _ = step(state, policy(state))
            m = episode_metrics(state)
            feasible = m.overshoot_kbps <= 0.0
            gap = oracle.result.mean_psnr_db - m.mean_psnr_db
            rows.append([video.id, target, oracle.result.mean_psnr_db,
                         oracle.result.bitrate_kbps, oracle.feasible,
                         m.mean_psnr_db, m.bitrate_kbps, feasible, gap])
            if feasible == oracle.feasible:
                agree += 1
            if feasible and oracle.feasible:
                gaps.append(gap)

    with open(out / "oracle.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "target_kbps", "oracle_psnr", "oracle_bitrate",
                         "oracle_feasible", f"{label}_psnr", f"{label}_bitrate",
                         f"{label}_feasible", "psnr_gap"])
        writer.writerows(rows)
    summary = {
        "policy": label,
        "pairs": len(rows),
        "skipped_videos": skipped,
        "feasibility_agreement": agree / len(rows) if rows else None,
        "mean_psnr_gap_feasible": float(np.mean(gaps)) if gaps else None,
    }
    with open(out / "gap_report.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(corrupt=args.corrupt)
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"[{'PASS' if r.ok else 'FAIL'}] {r.name}: {r.detail}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratectl")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="generate a synthetic video corpus")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--fps", type=float, default=30.0)
    g.add_argument("--duration-min", type=float, default=3.0)
    g.add_argument("--duration-max", type=float, default=7.0)
    g.add_argument("--complexity-min", type=float, default=10.0)
    g.add_argument("--complexity-max", type=float, default=3000.0)
    g.add_argument("--motion-min", type=float, default=0.2)
    g.add_argument("--motion-max", type=float, default=0.95)
    g.add_argument("--scene-prob", type=float, default=0.3)
    g.add_argument("--arf-period", type=int, default=0)
    g.set_defaults(func=cmd_gen_corpus)

    t = sub.add_parser("train", help="train the rate-control agent")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--out")
    t.add_argument("--reward", choices=["self-compete", "augmented", "lagrangian"])
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="greedy-policy sweep and BD-rate report")
    e.add_argument("--checkpoint", action="append",
                   help="repeat for multiple seeds")
    e.add_argument("--corpus", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--targets", help="comma-separated kbps (default: 9 uniform)")
    e.add_argument("--baseline", default="heuristic-vbr")
    e.add_argument("--test-policy", help="evaluate a named baseline instead of a checkpoint")
    e.add_argument("--search", action="store_true",
                   help="use MCTS at evaluation instead of greedy acting")
    e.add_argument("--sims", type=int)
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("oracle", help="exhaustive-search comparison on tiny videos")
    o.add_argument("--corpus", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--targets", default="256,384,512,640,768")
    o.add_argument("--grid", help="comma-separated QP grid")
    o.add_argument("--max-frames", type=int, default=6)
    o.add_argument("--policy", default="heuristic-vbr")
    o.add_argument("--checkpoint")
    o.set_defaults(func=cmd_oracle)

    s = sub.add_parser("selftest", help="run built-in consistency checks")
    s.add_argument("--corrupt", help="deliberately break the named check")
    s.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RateCtlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
