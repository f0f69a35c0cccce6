"""Representation / dynamics / prediction networks over flat named tensors.

The observation is flattened into a fixed feature vector: the first-pass row
of the frame to encode next, a trailing window of per-frame rows (first-pass
features joined with realized encode history), summary statistics of the full
sequences, and the scalar context (target, duration, budget use, frame kind).
Long-range structure beyond the window is only visible through the summary
statistics.

Every forward pass is written once against a small ops interface and run
either on plain numpy (acting, search, evaluation) or on the autodiff tape
(training). The two paths produce bit-identical values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .sim import FrameKind, ObservationBundle

QP_COUNT = 256

_KIND_ONEHOT = {
    FrameKind.KEY: (1.0, 0.0, 0.0),
    FrameKind.ARF_HIDDEN: (0.0, 1.0, 0.0),
    FrameKind.INTER: (0.0, 0.0, 1.0),
    None: (0.0, 0.0, 0.0),
}

FRAME_COUNT_NORM = 512.0


@dataclass(frozen=True)
class NetConfig:
    embedding_dim: int = 64
    action_bins: int = 256
    num_quantiles: int = 8
    history_window: int = 16
    repr_hidden: int = 128
    dyn_hidden: int = 64
    head_hidden: int = 64
    res_blocks: int = 1
    value_squash: bool = True   # False for unbounded (lagrangian) value targets

    def __post_init__(self):
        if QP_COUNT % self.action_bins != 0:
            raise ConfigError(f"action_bins must divide {QP_COUNT}")
        if self.num_quantiles < 2:
            raise ConfigError("need at least 2 quantiles")
        if min(self.embedding_dim, self.history_window, self.repr_hidden,
               self.dyn_hidden, self.head_hidden) < 1 or self.res_blocks < 0:
            raise ConfigError("bad network sizes")

    @property
    def bin_width(self) -> int:
        return QP_COUNT // self.action_bins

    @property
    def feature_dim(self) -> int:
        return 26 + 9 * self.history_window


def bin_to_qp(action_bin: int, cfg: NetConfig) -> int:
    """Map an action bin to the (upper) midpoint QP of the bin."""
    w = cfg.bin_width
    return int(action_bin) * w + w // 2


def taus(cfg: NetConfig) -> np.ndarray:
    """Fixed uniformly spaced quantile levels (i - 0.5) / Nq."""
    n = cfg.num_quantiles
    return (np.arange(n, dtype=np.float64) + 0.5) / n


def featurize(bundle: ObservationBundle, cfg: NetConfig) -> np.ndarray:
    """Flatten an observation into the network input vector."""
    fp = bundle.first_pass_norm
    hist = bundle.history
    n = bundle.frame_count
    k = bundle.next_index
    w = cfg.history_window

    next_row = fp[k] if k < n else np.zeros(5)

    window = np.zeros((w, 9))
    lo = max(0, k - w)
    rows = k - lo
    if rows:
        window[w - rows:, :5] = fp[lo:k]
        window[w - rows:, 5:] = hist[lo:k]

    fp_mean_all = fp.mean(axis=0)
    fp_mean_rem = fp[k:].mean(axis=0) if k < n else np.zeros(5)
    # Full-sequence history summary covers quality and size only; QPs of
    # frames that fell out of the window are deliberately not summarized.
    hist_summary = hist[:, :2].mean(axis=0) if k > 0 else np.zeros(2)

    scalars = np.array([
        bundle.target_norm,
        bundle.duration_norm,
        bundle.budget_fraction_used,
        k / n,
        (n - k) / n,
        *_KIND_ONEHOT[bundle.next_kind],
        n / FRAME_COUNT_NORM,
    ])
    return np.concatenate([next_row, window.ravel(), fp_mean_all, fp_mean_rem,
                           hist_summary, scalars])


# --- parameter construction -------------------------------------------------

def param_specs(cfg: NetConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init) for every tensor, in canonical order."""
    specs: list[tuple[str, tuple[int, ...], str]] = []

    def mlp(prefix: str, d_in: int, d_hidden: int, d_out: int, input_ln: bool = False):
        if input_ln:
            specs.append((f"{prefix}/ln_in/g", (d_in,), "ones"))
            specs.append((f"{prefix}/ln_in/b", (d_in,), "zeros"))
        specs.append((f"{prefix}/lin0/w", (d_in, d_hidden), "linear"))
        specs.append((f"{prefix}/lin0/b", (d_hidden,), "zeros"))
        specs.append((f"{prefix}/ln0/g", (d_hidden,), "ones"))
        specs.append((f"{prefix}/ln0/b", (d_hidden,), "zeros"))
        specs.append((f"{prefix}/lin1/w", (d_hidden, d_out), "linear"))
        specs.append((f"{prefix}/lin1/b", (d_out,), "zeros"))

    def res(prefix: str, count: int, dim: int):
        for i in range(count):
            p = f"{prefix}/res{i}"
            specs.append((f"{p}/ln/g", (dim,), "ones"))
            specs.append((f"{p}/ln/b", (dim,), "zeros"))
            specs.append((f"{p}/lin0/w", (dim, dim), "linear"))
            specs.append((f"{p}/lin0/b", (dim,), "zeros"))
            specs.append((f"{p}/lin1/w", (dim, dim), "linear"))
            specs.append((f"{p}/lin1/b", (dim,), "zeros"))

    e = cfg.embedding_dim
    mlp("repr", cfg.feature_dim, cfg.repr_hidden, e)
    res("repr", cfg.res_blocks, e)
    mlp("dyn", cfg.action_bins, cfg.dyn_hidden, e)
    res("dyn", cfg.res_blocks, e)
    # prediction heads normalize the embedding on entry, which keeps their
    # effective input scale independent of how much weight decay shrinks the
    # trunk
    mlp("pred/policy", e, cfg.head_hidden, cfg.action_bins, input_ln=True)
    mlp("pred/value", e, cfg.head_hidden, cfg.num_quantiles, input_ln=True)
    for j in range(4):
        mlp(f"pred/aux{j}", e, cfg.head_hidden, cfg.num_quantiles, input_ln=True)
    return specs


def init_params(cfg: NetConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for name, shape, kind in param_specs(cfg):
        if kind == "linear":
            params[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
        elif kind == "zeros":
            params[name] = np.zeros(shape)
        else:
            params[name] = np.ones(shape)
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(v) for name, v in params.items()}


def param_count(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


# --- forward passes over an ops backend -------------------------------------

class NumpyOps:
    """Plain-array backend for inference."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params

    def p(self, name):
        return self.params[name]

    @staticmethod
    def matmul(a, b):
        return a @ b

    @staticmethod
    def add(a, b):
        return a + b

    @staticmethod
    def relu(a):
        return np.maximum(a, 0.0)

    @staticmethod
    def tanh(a):
        return np.tanh(a)

    @staticmethod
    def layer_norm(x, g, b, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / np.sqrt(var + eps) * g + b


class TapeOps:
    """Autodiff backend for training; leaves are created once per parameter."""

    matmul = staticmethod(ad.matmul)
    add = staticmethod(ad.add)
    relu = staticmethod(ad.relu)
    tanh = staticmethod(ad.tanh)
    layer_norm = staticmethod(ad.layer_norm)

    def __init__(self, params: dict[str, np.ndarray]):
        self.leaves = {name: ad.leaf(v) for name, v in params.items()}

    def p(self, name):
        return self.leaves[name]

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: t.grad if t.grad is not None else np.zeros_like(t.value)
            for name, t in self.leaves.items()
        }


def _mlp(ops, x, prefix: str):
    h = ops.add(ops.matmul(x, ops.p(f"{prefix}/lin0/w")), ops.p(f"{prefix}/lin0/b"))
    h = ops.layer_norm(h, ops.p(f"{prefix}/ln0/g"), ops.p(f"{prefix}/ln0/b"))
    h = ops.relu(h)
    return ops.add(ops.matmul(h, ops.p(f"{prefix}/lin1/w")), ops.p(f"{prefix}/lin1/b"))


def _head_mlp(ops, x, prefix: str):
    x = ops.layer_norm(x, ops.p(f"{prefix}/ln_in/g"), ops.p(f"{prefix}/ln_in/b"))
    return _mlp(ops, x, prefix)


def _res(ops, x, prefix: str, count: int):
    for i in range(count):
        p = f"{prefix}/res{i}"
        h = ops.layer_norm(x, ops.p(f"{p}/ln/g"), ops.p(f"{p}/ln/b"))
        h = ops.add(ops.matmul(h, ops.p(f"{p}/lin0/w")), ops.p(f"{p}/lin0/b"))
        h = ops.relu(h)
        h = ops.add(ops.matmul(h, ops.p(f"{p}/lin1/w")), ops.p(f"{p}/lin1/b"))
        x = ops.add(x, h)
    return x


def repr_forward(ops, x, cfg: NetConfig):
    """(B, feature_dim) -> (B, embedding_dim)."""
    return _res(ops, _mlp(ops, x, "repr"), "repr", cfg.res_blocks)


def dyn_forward(ops, embedding, action_onehot, cfg: NetConfig):
    """(B, E) x (B, action_bins) -> (B, E): action map added elementwise."""
    a = _mlp(ops, action_onehot, "dyn")
    return _res(ops, ops.add(embedding, a), "dyn", cfg.res_blocks)


def policy_logits_forward(ops, embedding, cfg: NetConfig):
    return _head_mlp(ops, embedding, "pred/policy")


def value_quantiles_forward(ops, embedding, cfg: NetConfig):
    q = _head_mlp(ops, embedding, "pred/value")
    return ops.tanh(q) if cfg.value_squash else q


def aux_quantiles_forward(ops, embedding, cfg: NetConfig, head: int):
    return _head_mlp(ops, embedding, f"pred/aux{head}")


# --- public single-observation API ------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def represent(observation, params: dict[str, np.ndarray], cfg: NetConfig) -> np.ndarray:
    """Embed one observation (an ObservationBundle or a prebuilt feature vector)."""
    if isinstance(observation, ObservationBundle):
        x = featurize(observation, cfg)
    else:
        x = np.asarray(observation, dtype=np.float64)
    if x.shape != (cfg.feature_dim,):
        raise ConfigError(f"feature vector shape {x.shape} != ({cfg.feature_dim},)")
    return repr_forward(NumpyOps(params), x[None, :], cfg)[0]


def dynamics(embedding: np.ndarray, action_bin: int,
             params: dict[str, np.ndarray], cfg: NetConfig) -> np.ndarray:
    if not 0 <= action_bin < cfg.action_bins:
        raise ConfigError(f"action bin {action_bin} outside [0, {cfg.action_bins})")
    onehot = np.zeros((1, cfg.action_bins))
    onehot[0, action_bin] = 1.0
    return dyn_forward(NumpyOps(params), embedding[None, :], onehot, cfg)[0]


def predict(embedding: np.ndarray, params: dict[str, np.ndarray], cfg: NetConfig,
            with_aux: bool = True):
    """Policy distribution, value quantiles, and (optionally) aux quantiles."""
    ops = NumpyOps(params)
    h = embedding[None, :]
    policy = softmax(policy_logits_forward(ops, h, cfg)[0])
    value_q = value_quantiles_forward(ops, h, cfg)[0]
    aux = None
    if with_aux:
        aux = np.stack([aux_quantiles_forward(ops, h, cfg, j)[0] for j in range(4)])
    return policy, value_q, aux


def value_point(value_quantiles: np.ndarray) -> float:
    return float(value_quantiles.mean())


def act_greedy(observation, params: dict[str, np.ndarray], cfg: NetConfig) -> int:
    """Highest-probability QP, search-free; ties break to the lowest bin."""
    ops = NumpyOps(params)
    if isinstance(observation, ObservationBundle):
        x = featurize(observation, cfg)
    else:
        x = np.asarray(observation, dtype=np.float64)
    h = repr_forward(ops, x[None, :], cfg)
    logits = policy_logits_forward(ops, h, cfg)[0]
    return bin_to_qp(int(np.argmax(logits)), cfg)
