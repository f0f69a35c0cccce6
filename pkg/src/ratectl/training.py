"""Acting, the unrolled training objective, SGD, checkpoints, and the loop.

The learner samples replay positions, embeds the stored observation once,
unrolls the dynamics network five times along the stored actions, and applies
cross-entropy to the search policy targets plus quantile-regression losses to
the episode return and auxiliary labels at each of the six prediction sites.
Positions past the end of an episode are masked out of every loss term but
keep their 1/6 share of the averaging, so all sites are equally weighted.

Training runs single-threaded by default, in which case the whole loop is a
deterministic function of the seed; a thread-parallel actor/learner mode
exists for throughput and makes no determinism promises.
"""

from __future__ import annotations

import json
import math
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InputDomainError
from .mcts import NetModel, SearchConfig, mcts_search, sample_from_visits
from .nets import (
    NetConfig,
    TapeOps,
    aux_quantiles_forward,
    bin_to_qp,
    dyn_forward,
    featurize,
    init_params,
    policy_logits_forward,
    repr_forward,
    taus,
    value_quantiles_forward,
    zeros_like_params,
)
from .replay import PAD_ACTION, UNROLL_STEPS, Episode, ReplayBuffer, Transition
from .rewards import EmaBuffer, RewardMode
from .sim import (
    DEFAULT_SIM,
    LOG_BITS_NORM,
    PSNR_NORM,
    TARGET_MAX_KBPS,
    EpisodeResult,
    SimConfig,
    VideoSpec,
    episode_metrics,
    first_pass,
    new_state,
    observation,
    step,
)

VALUE_LOSS_WEIGHT = 0.5
AUX_LOSS_WEIGHT = 0.1
L2_COEFF = 1e-3

CHECKPOINT_SCHEMA = "ratectl-checkpoint/1"
CHECKPOINT_MAGIC = b"RCTLCKPT1\n"


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 1000
    batch_size: int = 512
    lr_init: float = 0.05
    lr_decay: float = 0.1
    lr_decay_interval: int = 300_000
    momentum: float = 0.9
    replay_capacity: int = 50_000
    min_episodes: int = 64          # replay fill before the first learner step
    episodes_per_step: float = 0.5  # acting interleave in single-thread mode
    targets: tuple[float, ...] = (256.0, 384.0, 512.0, 640.0, 768.0)
    checkpoint_interval: int = 0    # 0 = final checkpoint only
    snapshot_interval: int = 50     # parameter publish interval (threaded mode)
    log_interval: int = 50
    threads: int = 1
    seed: int = 0
    ema_alpha: float = 0.9          # self-competition baseline update factor
    ema_psnr_init: float = 30.0

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be >= 1")
        if not self.targets:
            raise ConfigError("need at least one training target")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


def lr_schedule(step_index: int, cfg: TrainConfig) -> float:
    return cfg.lr_init * cfg.lr_decay ** (step_index / cfg.lr_decay_interval)


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             momentum_state: dict[str, np.ndarray], step_index: int,
             cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Heavy-ball momentum update in place: m <- mu*m + g; p <- p - lr*m."""
    lr = lr_schedule(step_index, cfg)
    for name, p in params.items():
        m = momentum_state[name]
        m *= cfg.momentum
        m += grads[name]
        p -= lr * m
    return params


# --- acting -------------------------------------------------------------

def _aux_label_prefix(state) -> tuple[float, float]:
    if not state.results:
        return 0.0, 0.0
    last = state.results[-1]
    return last.psnr_db, math.log(last.bits)


def act_episode(video: VideoSpec, target_kbps: float,
                params: dict[str, np.ndarray], net_cfg: NetConfig,
                search_cfg: SearchConfig, ema: EmaBuffer, mode: RewardMode,
                rng: np.random.Generator, episode_index: int = 0,
                sim_cfg: SimConfig = DEFAULT_SIM) -> tuple[EpisodeResult, Episode]:
    """Play one episode with MCTS acting and label its transitions."""
    model = NetModel(params, net_cfg)
    fp = first_pass(video)
    state = new_state(video, target_kbps)
    temp = search_cfg.act_temperature(episode_index)

    features: list[np.ndarray] = []
    pi_targets: list[np.ndarray] = []
    prefix_labels: list[tuple[float, float]] = []
    actions: list[int] = []
    while not state.done:
        obs = observation(state, sim_cfg, fp=fp)
        feat = featurize(obs, net_cfg)
        pi, _ = mcts_search(feat, model, search_cfg, rng)
        action = sample_from_visits(pi, temp, rng)
        features.append(feat)
        pi_targets.append(pi)
        prefix_labels.append(_aux_label_prefix(state))
        actions.append(action)
        state, _ = step(state, bin_to_qp(action, net_cfg), sim_cfg)

    result = episode_metrics(state)
    key = EmaBuffer.key_for(video.id, target_kbps)
    value = ema.episode_return(key, result.mean_psnr_db, result.overshoot_kbps, mode)

    episode = build_episode(video.id, target_kbps, features, pi_targets,
                            prefix_labels, actions, result, value)
    return result, episode


def build_episode(video_id: str, target_kbps: float,
                  features: Sequence[np.ndarray], pi_targets: Sequence[np.ndarray],
                  prefix_labels: Sequence[tuple[float, float]], actions: Sequence[int],
                  result: EpisodeResult, value: float) -> Episode:
    length = len(actions)
    transitions = []
    for t in range(length):
        slots = np.full(UNROLL_STEPS, PAD_ACTION, dtype=np.int64)
        for j in range(UNROLL_STEPS):
            if t + j <= length - 2:   # action is only needed if position j+1 is real
                slots[j] = actions[t + j]
        aux = np.array([prefix_labels[t][0], prefix_labels[t][1],
                        result.mean_psnr_db, result.bitrate_kbps])
        transitions.append(Transition(
            features=np.asarray(features[t]),
            policy_target=np.asarray(pi_targets[t]),
            value=value,
            aux=aux,
            actions=slots,
        ))
    return Episode(
        video_id=video_id, target_kbps=target_kbps, transitions=transitions,
        actions=list(actions), mean_psnr_db=result.mean_psnr_db,
        bitrate_kbps=result.bitrate_kbps, overshoot_kbps=result.overshoot_kbps,
        value=value,
    )


def greedy_agent_factory(params: dict[str, np.ndarray], net_cfg: NetConfig,
                         sim_cfg: SimConfig = DEFAULT_SIM):
    """Search-free acting policy for evaluation sweeps."""
    from .nets import act_greedy

    def factory(video: VideoSpec, target_kbps: float):
        fp = first_pass(video)

        def policy(state) -> int:
            obs = observation(state, sim_cfg, fp=fp)
            return act_greedy(featurize(obs, net_cfg), params, net_cfg)

        return policy

    return factory


# --- loss ----------------------------------------------------------------

def normalize_aux(aux: np.ndarray) -> np.ndarray:
    """Scale raw aux labels to O(1) training targets."""
    out = np.array(aux, dtype=np.float64)
    out[..., 0] /= PSNR_NORM
    out[..., 1] /= LOG_BITS_NORM
    out[..., 2] /= PSNR_NORM
    out[..., 3] /= TARGET_MAX_KBPS
    return out


def assemble_batch(batch: Sequence[tuple[Episode, int]], net_cfg: NetConfig):
    """Gather unroll targets from the episodes around each sampled position."""
    b = len(batch)
    k = UNROLL_STEPS + 1
    feats = np.stack([ep.transitions[t].features for ep, t in batch])
    actions = np.stack([ep.transitions[t].actions for ep, t in batch])
    masks = np.zeros((b, k))
    pi = np.zeros((b, k, net_cfg.action_bins))
    values = np.array([ep.value for ep, _ in batch])
    aux = np.zeros((b, k, 4))
    for i, (ep, t) in enumerate(batch):
        for j in range(k):
            if t + j < len(ep):
                masks[i, j] = 1.0
                pi[i, j] = ep.transitions[t + j].policy_target
                aux[i, j] = ep.transitions[t + j].aux
    return feats, actions, masks, pi, values, normalize_aux(aux)


def compute_loss(batch: Sequence[tuple[Episode, int]],
                 params: dict[str, np.ndarray], net_cfg: NetConfig):
    """Unrolled loss over a batch; returns (loss, grads, component dict)."""
    if not batch:
        raise InputDomainError("empty batch")
    feats, actions, masks, pi, values, aux = assemble_batch(batch, net_cfg)
    b = len(batch)
    tau = taus(net_cfg)
    ops = TapeOps(params)

    terms = []
    components = {"policy": 0.0, "value": 0.0, "aux": 0.0}
    h = repr_forward(ops, ad.leaf(feats), net_cfg)
    for j in range(UNROLL_STEPS + 1):
        site_w = masks[:, j] / ((UNROLL_STEPS + 1) * b)

        logits = policy_logits_forward(ops, h, net_cfg)
        ce = ad.softmax_cross_entropy(logits, pi[:, j], site_w)
        terms.append(ce)
        components["policy"] += float(ce.value)

        vq = value_quantiles_forward(ops, h, net_cfg)
        vloss = ad.pinball(vq, values, tau, VALUE_LOSS_WEIGHT * site_w)
        terms.append(vloss)
        components["value"] += float(vloss.value)

        for head in range(4):
            aq = aux_quantiles_forward(ops, h, net_cfg, head)
            aloss = ad.pinball(aq, aux[:, j, head], tau, AUX_LOSS_WEIGHT * site_w)
            terms.append(aloss)
            components["aux"] += float(aloss.value)

        if j < UNROLL_STEPS:
            onehot = np.zeros((b, net_cfg.action_bins))
            onehot[np.arange(b), actions[:, j]] = 1.0
            h = dyn_forward(ops, h, ad.leaf(onehot), net_cfg)

    l2 = ad.l2_penalty(list(ops.leaves.values()), L2_COEFF)
    terms.append(l2)
    components["l2"] = float(l2.value)

    total = ad.add_all(terms)
    total.backward()
    return float(total.value), ops.grads(), components


def loss_value_np(feats: np.ndarray, actions: np.ndarray, masks: np.ndarray,
                  pi: np.ndarray, values: np.ndarray, aux: np.ndarray,
                  params: dict[str, np.ndarray], net_cfg: NetConfig,
                  margins: dict | None = None) -> float:
    """Forward-only loss on plain numpy; bit-identical to compute_loss.

    Exists so finite-difference oracles can evaluate the loss cheaply. Pass a
    dict as `margins` to collect the smallest |relu preactivation| and
    |quantile residual| seen, which bound the distance to the nearest loss
    kink (relevant when validating derivatives numerically).
    """
    from .nets import NumpyOps

    class _MarginOps(NumpyOps):
        def relu(self, a):  # noqa: D102 - tracking override
            margins["relu"] = min(margins["relu"], float(np.abs(a).min()))
            return np.maximum(a, 0.0)

    if margins is not None:
        margins.setdefault("relu", math.inf)
        margins.setdefault("residual", math.inf)
        ops = _MarginOps(params)
    else:
        ops = NumpyOps(params)

    b = feats.shape[0]
    tau = taus(net_cfg)

    def ce(logits, targets, w):
        zmax = logits.max(axis=-1, keepdims=True)
        log_softmax = logits - zmax - np.log(np.exp(logits - zmax).sum(axis=-1, keepdims=True))
        return float((-(targets * log_softmax).sum(axis=-1) * w).sum())

    def qr(preds, targets, w):
        u = targets[:, None] - preds
        if margins is not None:
            margins["residual"] = min(margins["residual"], float(np.abs(u).min()))
        per_row = ((tau[None, :] - (u < 0.0)) * u).mean(axis=-1)
        return float((per_row * w).sum())

    total = 0.0
    h = repr_forward(ops, feats, net_cfg)
    for j in range(UNROLL_STEPS + 1):
        site_w = masks[:, j] / ((UNROLL_STEPS + 1) * b)
        total += ce(policy_logits_forward(ops, h, net_cfg), pi[:, j], site_w)
        total += qr(value_quantiles_forward(ops, h, net_cfg), values,
                    VALUE_LOSS_WEIGHT * site_w)
        for head in range(4):
            total += qr(aux_quantiles_forward(ops, h, net_cfg, head),
                        aux[:, j, head], AUX_LOSS_WEIGHT * site_w)
        if j < UNROLL_STEPS:
            onehot = np.zeros((b, net_cfg.action_bins))
            onehot[np.arange(b), actions[:, j]] = 1.0
            h = dyn_forward(ops, h, onehot, net_cfg)
    total += L2_COEFF * sum(float((v * v).sum()) for v in params.values())
    return total


# --- checkpoints -----------------------------------------------------------

@dataclass
class Checkpoint:
    net_config: NetConfig
    params: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray]
    step: int
    episodes_generated: int
    rng_state: dict
    ema: EmaBuffer
    replay_meta: list[dict] | None = None
    replay_pi: np.ndarray | None = None


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    momentum: dict[str, np.ndarray], step_index: int,
                    episodes_generated: int, rng: np.random.Generator,
                    ema: EmaBuffer, net_cfg: NetConfig,
                    replay: ReplayBuffer | None = None) -> Path:
    """Write a versioned binary checkpoint (JSON header + float64 blob).

    When a replay buffer is given, enough per-episode data is stored (video
    id, target, actions, return, policy targets) to rebuild it exactly by
    re-encoding against the corpus on resume.
    """
    path = Path(path)
    names = list(params)
    tensors = []
    blobs = []
    offset = 0

    def push(name: str, arr: np.ndarray):
        nonlocal offset
        data = np.ascontiguousarray(arr, dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape),
                        "dtype": "<f8", "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes

    for n in names:
        push(f"param/{n}", params[n])
    for n in names:
        push(f"momentum/{n}", momentum[n])

    replay_meta = None
    if replay is not None:
        replay_meta = []
        pis = []
        for ep in replay.episodes():
            replay_meta.append({
                "video_id": ep.video_id,
                "target_kbps": ep.target_kbps,
                "actions": [int(a) for a in ep.actions],
                "value": ep.value,
            })
            pis.append(np.stack([tr.policy_target for tr in ep.transitions]))
        if pis:
            push("replay/policy_targets", np.concatenate(pis, axis=0))

    header = {
        "schema": CHECKPOINT_SCHEMA,
        "net_config": asdict(net_cfg),
        "step": step_index,
        "episodes_generated": episodes_generated,
        "rng_state": _jsonable(rng.bit_generator.state),
        "ema": ema.snapshot(),
        "param_names": names,
        "tensors": tensors,
        "replay": replay_meta,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(head_len))
        if header.get("schema") != CHECKPOINT_SCHEMA:
            raise ConfigError(f"unsupported checkpoint schema {header.get('schema')!r}")
        blob = fh.read()

    def pull(entry) -> np.ndarray:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype=entry["dtype"], count=n, offset=start)
        return arr.reshape(shape).copy()

    by_name = {t["name"]: t for t in header["tensors"]}
    params = {n: pull(by_name[f"param/{n}"]) for n in header["param_names"]}
    momentum = {n: pull(by_name[f"momentum/{n}"]) for n in header["param_names"]}
    replay_pi = None
    if "replay/policy_targets" in by_name:
        replay_pi = pull(by_name["replay/policy_targets"])
    return Checkpoint(
        net_config=NetConfig(**header["net_config"]),
        params=params,
        momentum=momentum,
        step=header["step"],
        episodes_generated=header["episodes_generated"],
        rng_state=header["rng_state"],
        ema=EmaBuffer.from_snapshot(header["ema"]),
        replay_meta=header.get("replay"),
        replay_pi=replay_pi,
    )


def rebuild_replay(ckpt: Checkpoint, corpus: Sequence[VideoSpec],
                   capacity: int, net_cfg: NetConfig,
                   sim_cfg: SimConfig = DEFAULT_SIM) -> ReplayBuffer:
    """Reconstruct the replay buffer from checkpointed episode summaries."""
    videos = {v.id: v for v in corpus}
    replay = ReplayBuffer(capacity_episodes=capacity)
    if not ckpt.replay_meta:
        return replay
    offset = 0
    for meta in ckpt.replay_meta:
        video = videos.get(meta["video_id"])
        if video is None:
            raise ConfigError(f"checkpoint episode references unknown video {meta['video_id']}")
        fp = first_pass(video)
        state = new_state(video, meta["target_kbps"])
        features, prefix_labels = [], []
        for action in meta["actions"]:
            obs = observation(state, sim_cfg, fp=fp)
            features.append(featurize(obs, net_cfg))
            prefix_labels.append(_aux_label_prefix(state))
            state, _ = step(state, bin_to_qp(action, net_cfg), sim_cfg)
        result = episode_metrics(state)
        n = len(meta["actions"])
        pi_targets = ckpt.replay_pi[offset:offset + n]
        offset += n
        replay.add(build_episode(meta["video_id"], meta["target_kbps"], features,
                                 list(pi_targets), prefix_labels, meta["actions"],
                                 result, meta["value"]))
    return replay


# --- the loop ---------------------------------------------------------------

@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray]
    step: int
    episodes_generated: int
    rng: np.random.Generator
    ema: EmaBuffer
    replay: ReplayBuffer


def _init_train_state(net_cfg: NetConfig, train_cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(net_cfg, rng)
    return TrainState(
        params=params,
        momentum=zeros_like_params(params),
        step=0,
        episodes_generated=0,
        rng=rng,
        ema=EmaBuffer(alpha=train_cfg.ema_alpha, psnr_init=train_cfg.ema_psnr_init),
        replay=ReplayBuffer(capacity_episodes=train_cfg.replay_capacity),
    )


def _resume_train_state(ckpt: Checkpoint, corpus: Sequence[VideoSpec],
                        net_cfg: NetConfig, train_cfg: TrainConfig,
                        sim_cfg: SimConfig) -> TrainState:
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    return TrainState(
        params=ckpt.params,
        momentum=ckpt.momentum,
        step=ckpt.step,
        episodes_generated=ckpt.episodes_generated,
        rng=rng,
        ema=ckpt.ema,
        replay=rebuild_replay(ckpt, corpus, train_cfg.replay_capacity, net_cfg, sim_cfg),
    )


def latest_checkpoint(out_dir: str | Path) -> Path | None:
    paths = sorted(Path(out_dir).glob("checkpoint_*.rckpt"))
    return paths[-1] if paths else None


class TrainLogger:
    """Append-only JSON-lines training log."""

    def __init__(self, path: str | Path | None):
        self._fh = open(path, "a") if path is not None else None
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        if self._fh is None:
            return
        with self._lock:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _sample_pair(corpus: Sequence[VideoSpec], train_cfg: TrainConfig,
                 rng: np.random.Generator) -> tuple[VideoSpec, float]:
    video = corpus[int(rng.integers(len(corpus)))]
    target = train_cfg.targets[int(rng.integers(len(train_cfg.targets)))]
    return video, target


def train_loop(corpus: Sequence[VideoSpec], net_cfg: NetConfig,
               search_cfg: SearchConfig, train_cfg: TrainConfig,
               mode: RewardMode = RewardMode(), out_dir: str | Path = "runs/latest",
               sim_cfg: SimConfig = DEFAULT_SIM, resume: bool = False,
               log_path: str | Path | None = None) -> Path:
    """Train to total_steps and return the final checkpoint path."""
    if not corpus:
        raise InputDomainError("empty corpus")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if log_path is None:
        log_path = out_dir / "train_log.jsonl"

    state = None
    if resume:
        ckpt_path = latest_checkpoint(out_dir)
        if ckpt_path is not None:
            ckpt = load_checkpoint(ckpt_path)
            state = _resume_train_state(ckpt, corpus, net_cfg, train_cfg, sim_cfg)
    if state is None:
        state = _init_train_state(net_cfg, train_cfg)

    logger = TrainLogger(log_path)
    try:
        if train_cfg.threads > 1:
            _run_threaded(state, corpus, net_cfg, search_cfg, train_cfg, mode,
                          sim_cfg, logger, out_dir)
        else:
            _run_single(state, corpus, net_cfg, search_cfg, train_cfg, mode,
                        sim_cfg, logger, out_dir)
    finally:
        logger.close()

    return save_checkpoint(
        out_dir / f"checkpoint_{state.step:08d}.rckpt",
        state.params, state.momentum, state.step, state.episodes_generated,
        state.rng, state.ema, net_cfg, replay=state.replay,
    )


def _log_step(logger: TrainLogger, state: TrainState, train_cfg: TrainConfig,
              loss: float, comps: dict) -> None:
    logger.write({
        "step": state.step,
        "loss": loss,
        "loss_policy": comps["policy"],
        "loss_value": comps["value"],
        "loss_aux": comps["aux"],
        "loss_l2": comps["l2"],
        "lr": lr_schedule(state.step - 1, train_cfg),
        "episodes": state.episodes_generated,
    })


def _run_single(state: TrainState, corpus, net_cfg, search_cfg, train_cfg,
                mode, sim_cfg, logger, out_dir: Path) -> None:
    while state.step < train_cfg.total_steps:
        wanted = train_cfg.min_episodes + math.floor(state.step * train_cfg.episodes_per_step)
        while state.episodes_generated < wanted:
            video, target = _sample_pair(corpus, train_cfg, state.rng)
            _, episode = act_episode(video, target, state.params, net_cfg,
                                     search_cfg, state.ema, mode, state.rng,
                                     episode_index=state.episodes_generated,
                                     sim_cfg=sim_cfg)
            state.replay.add(episode)
            state.episodes_generated += 1
        batch = state.replay.sample(train_cfg.batch_size, state.rng)
        loss, grads, comps = compute_loss(batch, state.params, net_cfg)
        sgd_step(state.params, grads, state.momentum, state.step, train_cfg)
        state.step += 1
        if train_cfg.log_interval and state.step % train_cfg.log_interval == 0:
            _log_step(logger, state, train_cfg, loss, comps)
        if (train_cfg.checkpoint_interval
                and state.step % train_cfg.checkpoint_interval == 0
                and state.step < train_cfg.total_steps):
            save_checkpoint(out_dir / f"checkpoint_{state.step:08d}.rckpt",
                            state.params, state.momentum, state.step,
                            state.episodes_generated, state.rng, state.ema,
                            net_cfg, replay=state.replay)


def _run_threaded(state: TrainState, corpus, net_cfg, search_cfg, train_cfg,
                  mode, sim_cfg, logger, out_dir: Path) -> None:
    """Actor threads fill the replay buffer while the learner steps."""
    stop = threading.Event()
    published: dict = {"params": {k: v.copy() for k, v in state.params.items()}}
    publish_lock = threading.Lock()
    episode_lock = threading.Lock()

    def actor(actor_seed: int) -> None:
        rng = np.random.default_rng(actor_seed)
        while not stop.is_set():
            with publish_lock:
                params = published["params"]
            video, target = _sample_pair(corpus, train_cfg, rng)
            with episode_lock:
                idx = state.episodes_generated
                state.episodes_generated += 1
            _, episode = act_episode(video, target, params, net_cfg, search_cfg,
                                     state.ema, mode, rng, episode_index=idx,
                                     sim_cfg=sim_cfg)
            state.replay.add(episode)

    seeds = np.random.SeedSequence(train_cfg.seed).spawn(train_cfg.threads)
    actors = [threading.Thread(target=actor, args=(s,), daemon=True)
              for s in seeds[:-1]]
    for t in actors:
        t.start()
    try:
        while state.replay.num_episodes < train_cfg.min_episodes:
            time.sleep(0.01)
        while state.step < train_cfg.total_steps:
            batch = state.replay.sample(train_cfg.batch_size, state.rng)
            loss, grads, comps = compute_loss(batch, state.params, net_cfg)
            sgd_step(state.params, grads, state.momentum, state.step, train_cfg)
            state.step += 1
            if state.step % train_cfg.snapshot_interval == 0:
                with publish_lock:
                    published["params"] = {k: v.copy() for k, v in state.params.items()}
            if train_cfg.log_interval and state.step % train_cfg.log_interval == 0:
                _log_step(logger, state, train_cfg, loss, comps)
            if (train_cfg.checkpoint_interval
                    and state.step % train_cfg.checkpoint_interval == 0
                    and state.step < train_cfg.total_steps):
                save_checkpoint(out_dir / f"checkpoint_{state.step:08d}.rckpt",
                                state.params, state.momentum, state.step,
                                state.episodes_generated, state.rng, state.ema,
                                net_cfg, replay=state.replay)
    finally:
        stop.set()
        for t in actors:
            t.join(timeout=5.0)
