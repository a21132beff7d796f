"""Adaptive filter tests built around independently computed oracles.

The dense-oracle tests rebuild the Kalman gain from the full Q x 2 linear
algebra (numpy solve on the explicit innovation covariance) and compare the
fused update against it.  The hand case is small enough to verify by hand:
one mic, no prediction taps, unit variances, y = 1, a = 1, w starting at 0
gives S = [[2, 1], [1, 2]], K = [1/3, 1/3], and an updated filter of 1/3.
"""

import numpy as np
import pytest

from convbeam.apa import (
    ApaParams,
    ApaState,
    Observation,
    apa_update,
    init_state,
    kalman_gain,
    limited_output,
    process_frame,
    process_utterance,
    psd_floor,
    speech_psd_estimate,
    stack_observation,
)
from convbeam.stft import BandPlan, Spectrogram, StftConfig


def _unit_params(**kw):
    defaults = dict(phi_b=1.0, phi_r=1.0, phi_a=1.0, eta=1e-30, band_plan=BandPlan((), (4,)))
    defaults.update(kw)
    return ApaParams(**defaults)


def _random_obs(rng, num_mics, order, delay=1):
    a = np.exp(1j * rng.uniform(0, 2 * np.pi, num_mics))
    state = init_state(a, order, delay)
    for _ in range(order):
        state.push(rng.standard_normal(num_mics) + 1j * rng.standard_normal(num_mics))
    y = rng.standard_normal(num_mics) + 1j * rng.standard_normal(num_mics)
    return state, stack_observation(state, y, a), y, a


class TestState:
    def test_init_satisfies_constraint_exactly(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        state = init_state(a, order=6, delay=2)
        assert state.stacked_len == 4 * (6 - 2 + 2)
        assert np.vdot(a, state.w_hat[:4]) == pytest.approx(1.0, abs=1e-14)
        assert np.all(state.w_hat[4:] == 0.0)

    def test_order_zero_is_head_only(self):
        state = init_state(np.ones(3, dtype=complex), order=0)
        assert state.stacked_len == 3
        assert state.history.shape == (0, 3)

    def test_invalid_orders_rejected(self):
        a = np.ones(2, dtype=complex)
        with pytest.raises(ValueError, match="order"):
            init_state(a, order=1, delay=1)
        with pytest.raises(ValueError, match="delay"):
            init_state(a, order=3, delay=0)
        with pytest.raises(ValueError, match="zero norm"):
            init_state(np.zeros(2, dtype=complex), order=0)

    def test_history_push_order(self):
        state = init_state(np.ones(1, dtype=complex), order=3)
        for v in (1.0, 2.0, 3.0):
            state.push(np.array([v], dtype=complex))
        # history[l-1] = y(n-l): most recent first
        np.testing.assert_array_equal(state.history[:, 0], [3.0, 2.0, 1.0])
        state.reset_history()
        assert np.all(state.history == 0.0)

    def test_stack_observation_skips_delay_gap(self):
        state = init_state(np.ones(1, dtype=complex), order=3, delay=2)
        for v in (1.0, 2.0, 3.0):
            state.push(np.array([v], dtype=complex))
        obs = stack_observation(state, np.array([5.0 + 0j]), np.ones(1, dtype=complex))
        # y(n), then y(n-2), y(n-3); y(n-1) is protected by the delay
        np.testing.assert_array_equal(obs.y_tilde, [5.0, 2.0, 1.0])
        np.testing.assert_array_equal(obs.a_tilde, [1.0, 0.0, 0.0])

    def test_stack_observation_shape_checks(self):
        state = init_state(np.ones(2, dtype=complex), order=3)
        with pytest.raises(ValueError):
            stack_observation(state, np.zeros(3, dtype=complex), np.ones(2, dtype=complex))
        with pytest.raises(ValueError):
            stack_observation(state, np.zeros(2, dtype=complex), np.ones(3, dtype=complex))


# ---------------------------------------------------------------------------
# update algebra
# ---------------------------------------------------------------------------


class TestHandCase:
    def test_single_step_reaches_one_third(self):
        state = init_state(np.ones(1, dtype=complex), order=0)
        state.w_hat[:] = 0.0
        obs = stack_observation(state, np.ones(1, dtype=complex), np.ones(1, dtype=complex))
        apa_update(state, obs, phi_x=1.0, params=_unit_params())
        assert state.w_hat[0] == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_hand_case_gain_columns(self):
        gain = kalman_gain(
            np.ones(1, dtype=complex),
            np.ones(1, dtype=complex),
            num_mics=1,
            phi_b=1.0,
            phi_r=1.0,
            phi_x=1.0,
            phi_a=1.0,
        )
        np.testing.assert_allclose(gain, [[1.0 / 3.0, 1.0 / 3.0]], atol=1e-15)


class TestKalmanGainOracle:
    def _dense_gain(self, y_tilde, a_tilde, m, phi_b, phi_r, phi_x, phi_a):
        q = y_tilde.shape[0]
        phi_w = np.full(q, phi_r)
        phi_w[:m] = phi_b
        f = np.stack([y_tilde, a_tilde]).conj()  # rows y^H, a^H
        s = (f * phi_w) @ f.conj().T + np.diag([phi_x, phi_a])
        return (phi_w[:, None] * f.conj().T) @ np.linalg.inv(s)

    def test_matches_dense_oracle_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            m = int(rng.integers(1, 5))
            order = int(rng.integers(2, 7))
            state, obs, _, _ = _random_obs(rng, m, order)
            phi_b, phi_r, phi_x, phi_a = 10.0 ** rng.uniform(-6, 0, 4)
            got = kalman_gain(obs.y_tilde, obs.a_tilde, m, phi_b, phi_r, phi_x, phi_a)
            want = self._dense_gain(obs.y_tilde, obs.a_tilde, m, phi_b, phi_r, phi_x, phi_a)
            np.testing.assert_allclose(got, want, atol=1e-9 * max(1.0, np.abs(want).max()))

    def test_gain_identity(self):
        """K (F Phi_w F^H + Phi_eps) = Phi_w F^H, the defining equation."""
        rng = np.random.default_rng(8)
        state, obs, _, _ = _random_obs(rng, 3, 5)
        phi_b, phi_r, phi_x, phi_a = 1e-3, 1e-4, 0.5, 1e-12
        q = obs.y_tilde.shape[0]
        phi_w = np.full(q, phi_r)
        phi_w[:3] = phi_b
        f = np.stack([obs.y_tilde, obs.a_tilde]).conj()
        s = (f * phi_w) @ f.conj().T + np.diag([phi_x, phi_a])
        k = kalman_gain(obs.y_tilde, obs.a_tilde, 3, phi_b, phi_r, phi_x, phi_a)
        np.testing.assert_allclose(k @ s, phi_w[:, None] * f.conj().T, atol=1e-12)

    def test_vanishing_state_variance_freezes_the_filter(self):
        rng = np.random.default_rng(9)
        state, obs, _, _ = _random_obs(rng, 2, 3)
        k = kalman_gain(obs.y_tilde, obs.a_tilde, 2, 1e-300, 1e-300, 0.5, 1e-3)
        assert np.max(np.abs(k)) < 1e-290

    def test_silent_frame_uses_constraint_row_only(self):
        a = np.ones(2, dtype=complex)
        y = np.zeros(4, dtype=complex)
        a_tilde = np.concatenate([a, np.zeros(2)])
        k = kalman_gain(y, a_tilde, 2, 1e-3, 1e-4, 0.0, 1e-12)
        assert np.all(k[:, 0] == 0.0)
        expected = 1e-3 * a / (1e-3 * 2.0 + 1e-12)
        np.testing.assert_allclose(k[:2, 1], expected, rtol=1e-12)

    def test_all_zero_variances_raise(self):
        with pytest.raises(np.linalg.LinAlgError, match="singular"):
            kalman_gain(np.zeros(2, dtype=complex), np.zeros(2, dtype=complex), 1, 1e-3, 1e-3, 0.0, 0.0)


class TestApaUpdate:
    def test_matches_explicit_gain_times_innovation(self):
        rng = np.random.default_rng(10)
        params = ApaParams(band_plan=BandPlan((), (5,)))
        for _ in range(20):
            state, obs, _, _ = _random_obs(rng, 3, 5)
            state.w_hat += 0.1 * (
                rng.standard_normal(state.stacked_len)
                + 1j * rng.standard_normal(state.stacked_len)
            )
            w_before = state.w_hat.copy()
            phi_x = float(rng.uniform(0.01, 1.0))
            k = kalman_gain(
                obs.y_tilde, obs.a_tilde, 3, params.phi_b, params.phi_r, phi_x, params.phi_a
            )
            e = np.array(
                [-np.vdot(obs.y_tilde, w_before), 1.0 - np.vdot(obs.a_tilde, w_before)]
            )
            apa_update(state, obs, phi_x, params)
            np.testing.assert_allclose(state.w_hat, w_before + k @ e, atol=1e-12)

    def test_post_update_constraint_residual_is_phi_a_scaled(self):
        """Row 2 of the solved system forces the new residual to phi_a * g1,
        so a -120 dB phi_a pins the constraint to machine-level accuracy."""
        rng = np.random.default_rng(11)
        params = ApaParams(band_plan=BandPlan((), (4,)))
        state, obs, y, a = _random_obs(rng, 4, 4)
        apa_update(state, obs, 0.1, params)
        residual = abs(1.0 - np.vdot(a, state.w_hat[:4]))
        assert residual < 1e-8

    def test_repeated_updates_drive_output_toward_zero(self):
        rng = np.random.default_rng(12)
        params = _unit_params(phi_a=1e6)  # effectively unconstrained
        state, obs, _, _ = _random_obs(rng, 2, 3)
        errors = []
        for _ in range(12):
            errors.append(abs(np.vdot(obs.y_tilde, state.w_hat)))
            apa_update(state, obs, 0.01, params)
        assert all(b < a for a, b in zip(errors, errors[1:]))
        assert errors[-1] < 0.05 * errors[0]

    def test_silent_frame_keeps_filter_finite(self):
        state = init_state(np.ones(2, dtype=complex), order=3)
        obs = stack_observation(state, np.zeros(2, dtype=complex), np.ones(2, dtype=complex))
        apa_update(state, obs, 0.0, ApaParams(band_plan=BandPlan((), (3,))))
        assert np.all(np.isfinite(state.w_hat))
        # constraint still held
        assert abs(1.0 - np.vdot(np.ones(2), state.w_hat[:2])) < 1e-8


class TestPsdHelpers:
    def test_speech_psd_estimate(self):
        state = init_state(np.ones(1, dtype=complex), order=0)
        state.w_hat[0] = 2.0
        obs = Observation(np.array([3.0 + 4.0j]), np.ones(1, dtype=complex))
        assert speech_psd_estimate(state, obs) == pytest.approx(100.0)

    def test_floor_activates_on_mean_power(self):
        y = np.ones(4, dtype=complex)
        assert psd_floor(0.0, y, eta=0.1) == pytest.approx(0.1)
        assert psd_floor(0.0, y, eta=0.1, mean_over_mics=False) == pytest.approx(0.4)

    def test_large_estimate_passes_through(self):
        y = np.ones(4, dtype=complex)
        assert psd_floor(5.0, y, eta=0.1) == 5.0

    def test_floor_is_exact_at_activation(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            y = rng.standard_normal(3) + 1j * rng.standard_normal(3)
            eta = float(10.0 ** rng.uniform(-4, 0))
            floor = eta * (float(np.sum(np.abs(y) ** 2)) / 3.0)
            assert psd_floor(floor * 0.5, y, eta) == floor


class TestLimiter:
    def test_zero_reverb_passes_beamformer(self):
        assert limited_output(1.0 + 2.0j, 0.0, 1.0) == 1.0 + 2.0j

    def test_alpha_zero_disables_subtraction(self):
        assert limited_output(1.0 + 2.0j, 5.0 - 1.0j, 0.0) == 1.0 + 2.0j

    def test_small_reverb_subtracted_exactly(self):
        x_b, x_r = 2.0 + 0j, 0.5 + 0.5j
        assert limited_output(x_b, x_r, 1.0) == pytest.approx(x_b - x_r)

    def test_large_reverb_clamped_to_beamformer_magnitude(self):
        x_b, x_r = 1.0 + 0j, 10.0j
        out = limited_output(x_b, x_r, 1.0)
        np.testing.assert_allclose(out, 1.0 - 1.0j, atol=1e-15)

    def test_partial_alpha(self):
        x_b, x_r = 2.0 + 0j, 1.0 + 0j
        assert limited_output(x_b, x_r, 0.5) == pytest.approx(1.5 + 0j)


# ---------------------------------------------------------------------------
# frame- and utterance-level drivers
# ---------------------------------------------------------------------------


def _small_spec(num_mics=2, num_frames=20, seed=0, config=None):
    cfg = config or StftConfig(window_len=32, hop=16, fft_len=32)
    rng = np.random.default_rng(seed)
    shape = (num_mics, cfg.num_bins, num_frames)
    return Spectrogram(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), cfg)


def _flat_steering(num_bins, num_mics, seed=0):
    rng = np.random.default_rng(seed)
    a = np.exp(1j * rng.uniform(0, 2 * np.pi, (num_bins, num_mics)))
    a[:, 0] = 1.0
    return a


class TestDrivers:
    def test_process_frame_matches_utterance(self):
        spec = _small_spec()
        a = _flat_steering(spec.num_bins, 2)
        params = ApaParams(band_plan=BandPlan((), (3,)))
        want = process_utterance(spec, a, params).data[0]

        states = [init_state(a[k], 3, 1) for k in range(spec.num_bins)]
        got = np.stack(
            [
                process_frame(states, spec.data[:, :, n].T, a, params)
                for n in range(spec.num_frames)
            ],
            axis=1,
        )
        np.testing.assert_array_equal(got, want)

    def test_order_zero_reverb_branch_is_exactly_zero(self):
        spec = _small_spec()
        a = _flat_steering(spec.num_bins, 2)
        params = ApaParams(band_plan=BandPlan((), (0,)))
        out, extras = process_utterance(spec, a, params, return_components=True)
        assert np.all(extras["x_r"] == 0.0)
        np.testing.assert_array_equal(out.data[0], extras["x_b"])

    def test_alpha_zero_output_equals_beamformer_branch(self):
        spec = _small_spec(seed=4)
        a = _flat_steering(spec.num_bins, 2)
        params = ApaParams(alpha_r=0.0, band_plan=BandPlan((), (4,)))
        out, extras = process_utterance(spec, a, params, return_components=True)
        np.testing.assert_array_equal(out.data[0], extras["x_b"])

    def test_multithreaded_run_is_bit_identical(self):
        spec = _small_spec(num_mics=3, num_frames=30, seed=5)
        a = _flat_steering(spec.num_bins, 3, seed=1)
        params = ApaParams(band_plan=BandPlan((), (4,)))
        single = process_utterance(spec, a, params, num_threads=1)
        multi = process_utterance(spec, a, params, num_threads=4)
        np.testing.assert_array_equal(single.data, multi.data)

    def test_prior_pass_changes_early_frames(self):
        spec = _small_spec(num_frames=40, seed=6)
        a = _flat_steering(spec.num_bins, 2)
        params = ApaParams(band_plan=BandPlan((), (4,)))
        cold = process_utterance(spec, a, params, prior_pass=False)
        warm = process_utterance(spec, a, params, prior_pass=True)
        assert not np.array_equal(cold.data, warm.data)
        # both runs are deterministic
        warm2 = process_utterance(spec, a, params, prior_pass=True)
        np.testing.assert_array_equal(warm.data, warm2.data)

    def test_shadow_of_the_mixture_recovers_unlimited_output(self):
        """Pushing the mixture itself through the shadow path must equal
        x_b - x_r, the pre-limiter filter output, frame by frame."""
        spec = _small_spec(num_frames=25, seed=7)
        a = _flat_steering(spec.num_bins, 2)
        params = ApaParams(band_plan=BandPlan((), (4,)))
        _, extras = process_utterance(
            spec, a, params, shadows=[spec.data], return_components=True
        )
        np.testing.assert_allclose(
            extras["shadows"][0], extras["x_b"] - extras["x_r"], atol=1e-12
        )

    def test_shadow_decomposition_is_linear(self):
        """Component shadows add up to the shadow of their sum."""
        spec = _small_spec(num_frames=15, seed=8)
        rng = np.random.default_rng(9)
        part = rng.standard_normal(spec.data.shape) + 1j * rng.standard_normal(spec.data.shape)
        rest = spec.data - part
        a = _flat_steering(spec.num_bins, 2)
        params = ApaParams(band_plan=BandPlan((), (3,)))
        _, extras = process_utterance(spec, a, params, shadows=[part, rest, spec.data])
        s_part, s_rest, s_all = extras["shadows"]
        np.testing.assert_allclose(s_part + s_rest, s_all, atol=1e-12)

    def test_steering_shape_mismatch_rejected(self):
        spec = _small_spec()
        with pytest.raises(ValueError, match="steering shape"):
            process_utterance(spec, np.ones((spec.num_bins, 3), dtype=complex), ApaParams())

    def test_gain_mask_shape_mismatch_rejected(self):
        spec = _small_spec()
        a = _flat_steering(spec.num_bins, 2)
        with pytest.raises(ValueError, match="gain mask"):
            process_utterance(spec, a, ApaParams(), gains=np.ones((3, 3)))

    def test_unit_gain_mask_is_identity(self):
        spec = _small_spec(seed=10)
        a = _flat_steering(spec.num_bins, 2)
        params = ApaParams(band_plan=BandPlan((), (3,)))
        plain = process_utterance(spec, a, params)
        masked = process_utterance(
            spec, a, params, gains=np.ones((spec.num_bins, spec.num_frames))
        )
        np.testing.assert_array_equal(plain.data, masked.data)

    def test_zero_gain_mask_floors_every_psd(self):
        """G = 0 kills the PSD estimate, so the floor drives a much more
        aggressive update; the result must differ from the unmasked run but
        stay finite."""
        spec = _small_spec(seed=11)
        a = _flat_steering(spec.num_bins, 2)
        params = ApaParams(band_plan=BandPlan((), (3,)))
        masked = process_utterance(
            spec, a, params, gains=np.zeros((spec.num_bins, spec.num_frames))
        )
        assert np.all(np.isfinite(masked.data))
        assert not np.array_equal(masked.data, process_utterance(spec, a, params).data)


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            ApaParams(phi_b=0.0)
        with pytest.raises(ValueError):
            ApaParams(eta=-1.0)
        with pytest.raises(ValueError):
            ApaParams(alpha_r=1.5)

    def test_delay_comes_from_band_plan(self):
        assert ApaParams(band_plan=BandPlan((), (5,), delay=2)).delay == 2
