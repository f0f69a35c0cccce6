"""Rate control on a synthetic encoder: self-competition RL agent, baselines,
and BD-rate evaluation."""

from .baselines import OracleConfig, constant_qp, exhaustive_oracle, heuristic_vbr
from .corpus import CorpusParams, gen_corpus, load_corpus, save_corpus
from .errors import ConfigError, InputDomainError, NoOverlapError, RateCtlError, StateError
from .evaluation import bd_rate, compare_policies, constraint_report, default_targets, rd_sweep
from .mcts import NetModel, SearchConfig, mcts_search
from .nets import NetConfig, act_greedy, bin_to_qp, featurize, init_params, predict
from .replay import Episode, ReplayBuffer, Transition
from .rewards import EmaBuffer, RewardMode, episode_return, score_for_mode, self_competition_return, update_ema
from .sim import (
    EncodeState,
    EpisodeResult,
    FrameKind,
    FrameResult,
    FrameSpec,
    SimConfig,
    VideoSpec,
    encode_frame,
    episode_metrics,
    first_pass,
    new_state,
    observation,
    qp_to_stepsize,
    step,
)
from .training import TrainConfig, act_episode, compute_loss, load_checkpoint, save_checkpoint, sgd_step, train_loop

__version__ = "0.1.0"
