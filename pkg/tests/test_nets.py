"""Network forward-pass tests: shapes, degenerate weights, sensitivity."""

import numpy as np
import pytest

from ratectl.errors import ConfigError
from ratectl.nets import (
    NetConfig,
    act_greedy,
    bin_to_qp,
    dynamics,
    featurize,
    init_params,
    param_count,
    predict,
    represent,
    taus,
    value_point,
    zeros_like_params,
)
from ratectl.sim import FrameKind, ObservationBundle

CFG = NetConfig(embedding_dim=8, action_bins=16, num_quantiles=4,
                history_window=4, repr_hidden=8, dyn_hidden=8, head_hidden=8,
                res_blocks=1)


def make_bundle(n=8, encoded=6, rng=None):
    rng = rng or np.random.default_rng(0)
    fp = rng.uniform(0.1, 0.9, size=(n, 5))
    hist = rng.uniform(0.1, 0.9, size=(encoded, 4))
    return ObservationBundle(
        first_pass_norm=fp, history=hist, next_index=encoded,
        next_kind=FrameKind.INTER, frame_count=n, duration_norm=0.3,
        target_norm=0.5, budget_fraction_used=0.4,
    )


def zero_params():
    return zeros_like_params(init_params(CFG, np.random.default_rng(0)))


class TestFeaturize:
    def test_shape(self):
        assert featurize(make_bundle(), CFG).shape == (CFG.feature_dim,)
        assert CFG.feature_dim == 26 + 9 * CFG.history_window

    def test_finite(self):
        assert np.all(np.isfinite(featurize(make_bundle(), CFG)))


class TestRepresent:
    def test_zero_weights_zero_embedding(self):
        emb = represent(make_bundle(), zero_params(), CFG)
        np.testing.assert_array_equal(emb, np.zeros(CFG.embedding_dim))

    def test_deterministic(self):
        params = init_params(CFG, np.random.default_rng(1))
        a = represent(make_bundle(), params, CFG)
        b = represent(make_bundle(), params, CFG)
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch_rejected(self):
        params = init_params(CFG, np.random.default_rng(1))
        with pytest.raises(ConfigError):
            represent(np.zeros(CFG.feature_dim + 1), params, CFG)

    def test_window_sensitivity(self):
        params = init_params(CFG, np.random.default_rng(2))
        bundle = make_bundle()          # encoded=6, window=4 -> rows 2..5 visible
        base = represent(bundle, params, CFG)

        in_window = make_bundle()
        in_window.history[4, 2] += 0.1  # qp entry of an in-window row
        assert not np.array_equal(represent(in_window, params, CFG), base)

        out_qp = make_bundle()
        out_qp.history[0, 2] += 0.1     # qp entry of an out-of-window row: invisible
        np.testing.assert_array_equal(represent(out_qp, params, CFG), base)

        out_psnr = make_bundle()
        out_psnr.history[0, 0] += 0.1   # psnr is summarized over the full sequence
        assert not np.array_equal(represent(out_psnr, params, CFG), base)


class TestDynamics:
    def test_zero_weights_zero_output(self):
        emb = dynamics(np.zeros(CFG.embedding_dim), 3, zero_params(), CFG)
        np.testing.assert_array_equal(emb, np.zeros(CFG.embedding_dim))

    def test_output_shape_for_all_actions(self):
        params = init_params(CFG, np.random.default_rng(3))
        state = np.ones(CFG.embedding_dim)
        for a in range(CFG.action_bins):
            assert dynamics(state, a, params, CFG).shape == (CFG.embedding_dim,)

    def test_distinct_actions_distinct_embeddings(self):
        params = init_params(CFG, np.random.default_rng(4))
        state = np.ones(CFG.embedding_dim) * 0.2
        outs = [tuple(dynamics(state, a, params, CFG)) for a in range(CFG.action_bins)]
        assert len(set(outs)) == CFG.action_bins

    def test_bad_action_rejected(self):
        with pytest.raises(ConfigError):
            dynamics(np.zeros(CFG.embedding_dim), CFG.action_bins, zero_params(), CFG)


class TestPredict:
    def test_zero_weights_uniform_policy_zero_value(self):
        policy, value_q, aux = predict(np.zeros(CFG.embedding_dim), zero_params(), CFG)
        np.testing.assert_allclose(policy, np.full(CFG.action_bins, 1 / CFG.action_bins))
        np.testing.assert_array_equal(value_q, np.zeros(CFG.num_quantiles))
        assert aux.shape == (4, CFG.num_quantiles)

    def test_policy_sums_to_one(self):
        rng = np.random.default_rng(5)
        for seed in range(5):
            params = init_params(CFG, np.random.default_rng(seed))
            policy, _, _ = predict(rng.normal(size=CFG.embedding_dim), params, CFG)
            assert abs(policy.sum() - 1.0) < 1e-12
            assert np.all(policy >= 0)

    def test_value_point_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(6)
        for seed in range(5):
            params = init_params(CFG, np.random.default_rng(seed))
            # scale weights up to push tanh toward saturation
            for k in params:
                params[k] = params[k] * 20.0
            _, value_q, _ = predict(rng.normal(size=CFG.embedding_dim), params, CFG)
            assert -1.0 < value_point(value_q) < 1.0

    def test_no_squash_when_disabled(self):
        cfg = NetConfig(embedding_dim=8, action_bins=16, num_quantiles=4,
                        history_window=4, repr_hidden=8, dyn_hidden=8,
                        head_hidden=8, res_blocks=1, value_squash=False)
        params = init_params(cfg, np.random.default_rng(7))
        for k in params:
            params[k] = params[k] * 30.0
        emb = np.random.default_rng(8).normal(size=cfg.embedding_dim)
        _, value_q, _ = predict(emb, params, cfg)
        assert np.abs(value_q).max() > 1.0


class TestActionMapping:
    def test_identity_at_full_resolution(self):
        cfg = NetConfig(action_bins=256)
        assert [bin_to_qp(k, cfg) for k in (0, 7, 255)] == [0, 7, 255]

    def test_midpoints_at_16_bins(self):
        cfg = NetConfig(action_bins=16)
        assert bin_to_qp(0, cfg) == 8
        assert bin_to_qp(15, cfg) == 248

    def test_non_divisor_rejected(self):
        with pytest.raises(ConfigError):
            NetConfig(action_bins=10)


class TestActGreedy:
    def test_zero_weights_lowest_bin(self):
        qp = act_greedy(make_bundle(), zero_params(), CFG)
        assert qp == bin_to_qp(0, CFG)

    def test_one_hot_logits_map_to_bin_midpoint(self):
        params = zero_params()
        params["pred/policy/lin1/b"][5] = 3.0
        assert act_greedy(make_bundle(), params, CFG) == bin_to_qp(5, CFG)


class TestTaus:
    def test_uniform_levels(self):
        np.testing.assert_allclose(taus(NetConfig(num_quantiles=8)),
                                   (np.arange(8) + 0.5) / 8)


def test_param_count_reported():
    params = init_params(CFG, np.random.default_rng(0))
    assert param_count(params) == sum(v.size for v in params.values())
