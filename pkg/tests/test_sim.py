"""Encoder-simulator unit tests and invariants."""

import math

import numpy as np
import pytest

from ratectl.errors import InputDomainError, StateError
from ratectl.sim import (
    DEFAULT_SIM,
    LOG_BITS_NORM,
    PSNR_NORM,
    EncodeState,
    FrameKind,
    FrameResult,
    FrameSpec,
    VideoSpec,
    encode_frame,
    episode_metrics,
    first_pass,
    new_state,
    observation,
    psnr_from_mse,
    qp_to_stepsize,
    step,
)


def key_frame(index=0, complexity=1000.0):
    return FrameSpec(index=index, kind=FrameKind.KEY, show=True,
                     complexity=complexity, motion_coupling=0.0)


def inter_frame(index, complexity=500.0, coupling=0.5, ref=None):
    return FrameSpec(index=index, kind=FrameKind.INTER, show=True,
                     complexity=complexity, motion_coupling=coupling,
                     ref_index=index - 1 if ref is None else ref)


def simple_video(n=3, fps=30.0, complexity=1000.0, coupling=0.5):
    frames = [key_frame(complexity=complexity)]
    frames += [inter_frame(i, complexity=complexity, coupling=coupling)
               for i in range(1, n)]
    return VideoSpec(id="t", frames=tuple(frames), fps=fps)


class TestQpToStepsize:
    def test_boundaries(self):
        assert qp_to_stepsize(0) == 0.5
        assert qp_to_stepsize(255) == 512.0

    def test_exact_power_at_51(self):
        assert qp_to_stepsize(51) == 2.0

    def test_strictly_increasing(self):
        deltas = [qp_to_stepsize(q) for q in range(256)]
        assert all(a < b for a, b in zip(deltas, deltas[1:]))

    @pytest.mark.parametrize("bad", [-1, 256, 3.5, "7"])
    def test_domain_errors(self, bad):
        with pytest.raises(InputDomainError):
            qp_to_stepsize(bad)


class TestEncodeFrame:
    def test_key_frame_quarter_energy(self):
        # complexity = 4 * quantizer distortion at qp=102 -> payload weight*1.0
        qp = 102
        d = qp_to_stepsize(qp) ** 2 / 12.0
        video = VideoSpec(id="t", frames=(key_frame(complexity=4 * d),), fps=30.0)
        r = encode_frame(new_state(video, 512.0), qp)
        assert r.mse == pytest.approx(d, rel=1e-12)
        assert r.bits == pytest.approx(DEFAULT_SIM.header_bits + DEFAULT_SIM.weight_key, rel=1e-12)

    def test_saturation_at_max_qp(self):
        video = VideoSpec(id="t", frames=(key_frame(complexity=3000.0),), fps=30.0)
        r = encode_frame(new_state(video, 512.0), 255)
        assert r.mse == 3000.0
        assert r.bits == DEFAULT_SIM.header_bits

    def test_reference_coupling_changes_energy(self):
        # Re-evaluate the closed-form model independently of the environment.
        video = VideoSpec(
            id="t",
            frames=(key_frame(complexity=2000.0),
                    inter_frame(1, complexity=800.0, coupling=0.5, ref=0)),
            fps=30.0,
        )
        for key_qp in (60, 180):   # low vs high quality reference
            state = new_state(video, 512.0)
            state, _ = step(state, key_qp)
            d_ref = state.results[0].mse
            r = encode_frame(state, 120)

            energy = 800.0 * (1.0 + 0.5 * d_ref / 100.0)
            delta = 0.5 * 2 ** (10 * 120 / 255)
            expect_mse = min(energy, delta * delta / 12.0)
            expect_bits = 200.0 + 8000.0 * 0.5 * math.log2(energy / expect_mse)
            assert r.mse == pytest.approx(expect_mse, rel=1e-12)
            assert r.bits == pytest.approx(expect_bits, rel=1e-12)

    def test_finished_episode_raises(self):
        video = VideoSpec(id="t", frames=(key_frame(),), fps=30.0)
        state, done = step(new_state(video, 512.0), 100)
        assert done
        with pytest.raises(StateError):
            encode_frame(state, 100)


class TestStep:
    def test_one_frame_video_done_after_one_step(self):
        video = VideoSpec(id="t", frames=(key_frame(),), fps=30.0)
        _, done = step(new_state(video, 512.0), 31)
        assert done

    @pytest.mark.parametrize("n", [1, 2, 7])
    def test_exactly_n_steps(self, n):
        video = simple_video(n)
        state = new_state(video, 512.0)
        steps = 0
        while not state.done:
            state, _ = step(state, 100)
            steps += 1
        assert steps == n

    def test_bits_used_is_sum_of_frame_bits(self):
        video = simple_video(6)
        state = new_state(video, 512.0)
        for qp in (10, 60, 110, 160, 210, 250):
            state, _ = step(state, qp)
        assert state.bits_used == pytest.approx(sum(r.bits for r in state.results), abs=1e-9)


class TestEpisodeMetrics:
    def _state_with_mses(self, mses, bits, fps):
        frames = [key_frame()] + [inter_frame(i) for i in range(1, len(mses))]
        video = VideoSpec(id="t", frames=tuple(frames), fps=fps)
        results = tuple(FrameResult(qp=0, bits=b, mse=m, psnr_db=psnr_from_mse(m))
                        for m, b in zip(mses, bits))
        return EncodeState(video=video, target_kbps=256.0, next_index=len(mses),
                           results=results, bits_used=sum(bits))

    def test_zero_db(self):
        state = self._state_with_mses([255.0 ** 2] * 3, [100.0] * 3, fps=3.0)
        assert episode_metrics(state).mean_psnr_db == pytest.approx(0.0, abs=1e-12)

    def test_ten_db(self):
        state = self._state_with_mses([255.0 ** 2 / 10] * 3, [100.0] * 3, fps=3.0)
        assert episode_metrics(state).mean_psnr_db == pytest.approx(10.0, abs=1e-12)

    def test_two_frame_hand_case(self):
        state = self._state_with_mses([100.0, 300.0], [256000.0, 256000.0], fps=1.0)
        m = episode_metrics(state)
        assert m.mean_psnr_db == pytest.approx(10 * math.log10(255 ** 2 / 200.0), rel=1e-12)
        assert m.bitrate_kbps == pytest.approx(256.0, rel=1e-12)
        assert m.overshoot_kbps == pytest.approx(0.0, abs=1e-9)

    def test_requires_done(self):
        with pytest.raises(StateError):
            episode_metrics(new_state(simple_video(2), 512.0))


class TestFirstPass:
    def test_key_row(self):
        fp = first_pass(simple_video(3))
        assert fp[0, 2] == 1.0 and fp[0, 1] == 0.0
        assert fp[1, 2] == 0.0

    def test_row_count_and_log_column(self):
        video = simple_video(5)
        fp = first_pass(video)
        assert fp.shape == (5, 5)
        np.testing.assert_allclose(fp[:, 3], np.log(fp[:, 0]), rtol=1e-15)


class TestObservation:
    def test_initial_state(self):
        obs = observation(new_state(simple_video(3), 512.0))
        assert obs.history.shape == (0, 4)
        assert obs.budget_fraction_used == 0.0
        assert obs.next_index == 0 and obs.next_kind is FrameKind.KEY

    def test_target_normalization(self):
        assert observation(new_state(simple_video(2), 512.0)).target_norm == pytest.approx(0.5)
        assert observation(new_state(simple_video(2), 256.0)).target_norm == 0.0
        assert observation(new_state(simple_video(2), 768.0)).target_norm == 1.0

    def test_history_row_matches_frame_result(self):
        state = new_state(simple_video(3), 512.0)
        state, _ = step(state, 77)
        obs = observation(state)
        r = state.results[0]
        assert obs.history[0, 0] == pytest.approx(r.psnr_db / PSNR_NORM, rel=1e-12)
        assert obs.history[0, 1] == pytest.approx(math.log(r.bits) / LOG_BITS_NORM, rel=1e-12)
        assert obs.history[0, 2] == pytest.approx(77 / 255)


class TestInvariants:
    def test_mse_bits_monotone_in_qp(self):
        state = new_state(simple_video(4, complexity=1500.0), 512.0)
        state, _ = step(state, 140)
        results = [encode_frame(state, qp) for qp in range(0, 256, 5)]
        for a, b in zip(results, results[1:]):
            assert b.mse >= a.mse
            assert b.bits <= a.bits

    def test_bit_conservation(self):
        video = simple_video(5, fps=2.5)
        state = new_state(video, 384.0)
        while not state.done:
            state, _ = step(state, 90)
        m = episode_metrics(state)
        assert m.bitrate_kbps * 1000.0 * video.duration_s == pytest.approx(
            sum(r.bits for r in state.results), rel=1e-15)

    def test_reference_propagation(self):
        video = simple_video(4, coupling=0.9)
        mses = {}
        for key_qp in (40, 200):
            state = new_state(video, 512.0)
            state, _ = step(state, key_qp)
            for _ in range(3):
                state, _ = step(state, 128)
            mses[key_qp] = [r.mse for r in state.results]
        # better reference (lower qp) never hurts any dependent frame
        assert all(a <= b for a, b in zip(mses[40][1:], mses[200][1:]))

    def test_determinism(self):
        video = simple_video(6)
        runs = []
        for _ in range(2):
            state = new_state(video, 640.0)
            for qp in (5, 50, 100, 150, 200, 250):
                state, _ = step(state, qp)
            runs.append([(r.bits, r.mse, r.psnr_db) for r in state.results])
        assert runs[0] == runs[1]

    def test_psnr_formula_each_frame(self):
        state = new_state(simple_video(4), 512.0)
        while not state.done:
            state, _ = step(state, 123)
        for r in state.results:
            assert r.psnr_db == 10 * math.log10(255 ** 2 / r.mse)


class TestSpecValidation:
    def test_key_frame_with_reference_rejected(self):
        with pytest.raises(InputDomainError):
            FrameSpec(index=1, kind=FrameKind.KEY, show=True, complexity=10.0,
                      motion_coupling=0.0, ref_index=0)

    def test_forward_reference_rejected(self):
        with pytest.raises(InputDomainError):
            FrameSpec(index=1, kind=FrameKind.INTER, show=True, complexity=10.0,
                      motion_coupling=0.5, ref_index=1)

    def test_video_must_start_with_key(self):
        with pytest.raises(InputDomainError):
            VideoSpec(id="x", frames=(inter_frame(1, ref=0),), fps=30.0)

    def test_target_range_enforced(self):
        with pytest.raises(InputDomainError):
            new_state(simple_video(2), 100.0)
