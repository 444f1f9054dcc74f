"""Schedule construction and the elementwise diffusion steps."""

import math

import numpy as np
import pytest

from u2traj.errors import DimensionError, DomainError, ParameterError, StepRangeError
from u2traj.schedule import (
    ddim_step,
    ddpm_step,
    forward_sample,
    make_schedule,
    propagate_variance,
)


def closed_form_beta(s, S, beta_start, beta_end):
    """Independent evaluation of the quadratic interpolant."""
    root = math.sqrt(beta_start) + (s - 1) / (S - 1) * (
        math.sqrt(beta_end) - math.sqrt(beta_start)
    )
    return root * root


class TestMakeSchedule:
    def test_endpoints_exact(self, default_schedule):
        assert default_schedule.beta[1] == 1e-4
        assert default_schedule.beta[50] == 0.5

    def test_interior_matches_closed_form(self, default_schedule):
        # independently computed: 0.12351011302550546
        expected = closed_form_beta(25, 50, 1e-4, 0.5)
        assert expected == pytest.approx(0.12351011302550546, abs=1e-12)
        assert default_schedule.beta[25] == pytest.approx(expected, abs=1e-6)

    def test_beta_strictly_increasing(self, default_schedule):
        assert np.all(np.diff(default_schedule.beta[1:]) > 0)

    def test_alpha_hat_recurrence(self, default_schedule):
        s = default_schedule
        # cumulative-product oracle over beta
        prod = 1.0
        for step in range(1, 51):
            prod *= 1.0 - s.beta[step]
            assert abs(s.alpha_hat[step] - prod) < 1e-12
        gaps = np.abs(s.alpha_hat[1:] - s.alpha_hat[:-1] * s.alpha[1:])
        assert gaps.max() < 1e-12

    def test_alpha_hat_monotone_in_range(self, default_schedule):
        ah = default_schedule.alpha_hat
        assert np.all(np.diff(ah) < 0)
        assert np.all(ah > 0) and np.all(ah <= 1)
        assert ah[0] == 1.0 and default_schedule.a[0] == 0.0

    def test_a_squared_identity(self, default_schedule):
        s = default_schedule
        assert np.max(np.abs(s.a**2 + s.alpha_hat - 1.0)) < 1e-12

    def test_posterior_sigma_definition(self, default_schedule):
        s = default_schedule
        for step in (2, 17, 50):
            expected = math.sqrt(
                (1 - s.alpha_hat[step - 1]) / (1 - s.alpha_hat[step]) * s.beta[step]
            )
            assert s.posterior_sigma[step] == pytest.approx(expected, rel=1e-12)
        assert s.posterior_sigma[1] == 0.0  # alpha_hat[0] = 1 makes the final step deterministic

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(S=1),
            dict(beta_start=0.0),
            dict(beta_start=0.5, beta_end=0.4),
            dict(beta_end=1.0),
            dict(zeta=0),
            dict(zeta=51),
            dict(s_hat=-1),
            dict(s_hat=51),
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        base = dict(S=50, beta_start=1e-4, beta_end=0.5, zeta=10, s_hat=30)
        base.update(kwargs)
        with pytest.raises(ParameterError):
            make_schedule(
                base["S"], base["beta_start"], base["beta_end"], base["zeta"], base["s_hat"]
            )


class TestForwardSample:
    def test_zero_noise(self, default_schedule, rng):
        x0 = rng.normal(size=(4, 3, 2))
        for s in (1, 10, 50):
            out = forward_sample(x0, s, np.zeros_like(x0), default_schedule)
            np.testing.assert_allclose(
                out, np.sqrt(default_schedule.alpha_hat[s]) * x0, rtol=1e-15
            )

    def test_zero_signal_at_final_step(self, default_schedule, rng):
        eps = rng.normal(size=(4, 3, 2))
        out = forward_sample(np.zeros_like(eps), 50, eps, default_schedule)
        np.testing.assert_allclose(
            out, math.sqrt(1 - default_schedule.alpha_hat[50]) * eps, rtol=1e-15
        )

    def test_pinned_value_step_10(self, default_schedule):
        # cumulative-product oracle for alpha_hat at step 10
        ah10 = 1.0
        for s in range(1, 11):
            ah10 *= 1.0 - closed_form_beta(s, 50, 1e-4, 0.5)
        x0 = np.ones((2, 2, 2))
        eps = np.zeros((2, 2, 2))
        eps[..., 0] = 1.0
        out = forward_sample(x0, 10, eps, default_schedule)
        np.testing.assert_allclose(
            out[..., 0], math.sqrt(ah10) + math.sqrt(1 - ah10), rtol=1e-12
        )
        np.testing.assert_allclose(out[..., 1], math.sqrt(ah10), rtol=1e-12)

    def test_round_trip_property(self, default_schedule, rng):
        for _ in range(20):
            s = int(rng.integers(1, 51))
            x0 = rng.normal(size=(5, 4, 2))
            eps = rng.normal(size=(5, 4, 2))
            x_s = forward_sample(x0, s, eps, default_schedule)
            back = (x_s - default_schedule.a[s] * eps) / math.sqrt(
                default_schedule.alpha_hat[s]
            )
            np.testing.assert_allclose(back, x0, atol=1e-10)

    def test_shape_mismatch(self, default_schedule):
        with pytest.raises(DimensionError):
            forward_sample(np.zeros((2, 2, 2)), 1, np.zeros((2, 3, 2)), default_schedule)

    def test_step_out_of_range(self, default_schedule):
        x = np.zeros((2, 2, 2))
        with pytest.raises(StepRangeError):
            forward_sample(x, 0, x, default_schedule)
        with pytest.raises(StepRangeError):
            forward_sample(x, 51, x, default_schedule)


class TestDdpmStep:
    def test_zero_prediction_zero_noise(self, default_schedule, rng):
        x = rng.normal(size=(3, 2, 2))
        for s in (1, 25, 50):
            out = ddpm_step(x, np.zeros_like(x), s, np.zeros_like(x), default_schedule)
            np.testing.assert_allclose(
                out, x / math.sqrt(default_schedule.alpha[s]), rtol=1e-14
            )

    def test_final_step_deterministic(self, default_schedule, rng):
        # sigma_1 = 0, so even a nonzero z leaves the final step deterministic
        x = rng.normal(size=(3, 2, 2))
        eps = rng.normal(size=(3, 2, 2))
        z = rng.normal(size=(3, 2, 2))
        np.testing.assert_array_equal(
            ddpm_step(x, eps, 1, z, default_schedule),
            ddpm_step(x, eps, 1, np.zeros_like(z), default_schedule),
        )

    def test_exact_noise_recursion_recovers_x0(self, rng):
        # oracle: iterate the reverse step with the true noise on a 4-step schedule
        sched = make_schedule(4, 0.05, 0.3, 1, 4)
        x0 = rng.normal(size=(6, 3, 2))
        eps = rng.normal(size=(6, 3, 2))
        x = forward_sample(x0, 4, eps, sched)
        for s in range(4, 0, -1):
            implied = (x - math.sqrt(sched.alpha_hat[s]) * x0) / sched.a[s]
            x = ddpm_step(x, implied, s, np.zeros_like(x), sched)
        np.testing.assert_allclose(x, x0, atol=1e-3)

    def test_step_zero_rejected(self, default_schedule):
        x = np.zeros((2, 2, 2))
        with pytest.raises(StepRangeError):
            ddpm_step(x, x, 0, x, default_schedule)


class TestDdimStep:
    def test_zero_prediction_scales_state(self, default_schedule, rng):
        x = rng.normal(size=(3, 2, 2))
        out = ddim_step(x, np.zeros_like(x), 50, default_schedule)
        ratio = math.sqrt(
            default_schedule.alpha_hat[40] / default_schedule.alpha_hat[50]
        )
        np.testing.assert_allclose(out, ratio * x, rtol=1e-14)

    def test_jump_to_zero_inverts_forward(self, default_schedule, rng):
        x0 = rng.normal(size=(4, 3, 2))
        eps = rng.normal(size=(4, 3, 2))
        x_10 = forward_sample(x0, 10, eps, default_schedule)
        out = ddim_step(x_10, eps, 10, default_schedule)  # lands on 0
        np.testing.assert_allclose(out, x0, atol=1e-12)

    def test_synthetic_alpha_hat_value(self):
        # alpha_hat: step1 = 0.25, step2 = 0.04 via beta = (0.75, 0.84)
        sched = make_schedule(2, 0.75, 0.84, 1, 2)
        assert sched.alpha_hat[1] == pytest.approx(0.25, abs=1e-15)
        assert sched.alpha_hat[2] == pytest.approx(0.04, abs=1e-15)
        x = np.array([[[1.0, 0.0]]])
        eps = np.array([[[1.0, 0.0]]])
        out = ddim_step(x, eps, 2, sched)
        # hand evaluation: 2.5 * 1 + (sqrt(0.75) - 2.5 * sqrt(0.96)) * 1
        expected = 2.5 + (math.sqrt(0.75) - 2.5 * math.sqrt(0.96))
        assert expected == pytest.approx(0.9165356610012607, abs=1e-12)
        assert out[0, 0, 0] == pytest.approx(expected, abs=1e-12)
        assert out[0, 0, 1] == 0.0

    def test_negative_destination_rejected(self, default_schedule):
        x = np.zeros((2, 2, 2))
        with pytest.raises(StepRangeError):
            ddim_step(x, x, 5, default_schedule)  # 5 - 10 < 0


class TestPropagateVariance:
    def test_zero_in_zero_out(self, default_schedule):
        z = np.zeros((3, 2, 2))
        out = propagate_variance(z, z, 30, default_schedule)
        np.testing.assert_array_equal(out, 0.0)

    def test_above_start_step_is_zero(self, default_schedule, rng):
        var = rng.uniform(0.1, 1.0, size=(3, 2, 2))
        std = rng.uniform(0.1, 1.0, size=(3, 2, 2))
        out = propagate_variance(var, std, 40, default_schedule)  # s_hat = 30
        np.testing.assert_array_equal(out, 0.0)

    def test_hand_coefficient(self):
        sched = make_schedule(2, 0.75, 0.84, 1, 2)
        out = propagate_variance(
            np.zeros((1, 1, 2)), np.full((1, 1, 2), 0.1), 2, sched
        )
        coeff = math.sqrt(0.75) - 2.5 * math.sqrt(0.96)
        assert out[0, 0, 0] == pytest.approx(coeff**2 * 0.01, abs=1e-12)
        assert out[0, 0, 0] == pytest.approx(0.0250735931288, abs=1e-9)

    def test_both_terms(self, default_schedule, rng):
        var = rng.uniform(0.0, 0.5, size=(2, 2, 2))
        std = rng.uniform(0.0, 0.5, size=(2, 2, 2))
        out = propagate_variance(var, std, 30, default_schedule)
        ah_s = default_schedule.alpha_hat[30]
        ah_d = default_schedule.alpha_hat[20]
        coeff = default_schedule.a[20] - math.sqrt(ah_d / ah_s) * default_schedule.a[30]
        np.testing.assert_allclose(out, ah_d / ah_s * var + coeff**2 * std**2, rtol=1e-12)

    def test_monotone_accumulation(self, default_schedule):
        # below s_hat, positive noise std forces strictly positive variance
        var = np.zeros((2, 2, 2))
        std = np.full((2, 2, 2), 0.2)
        for src, dst in [(30, 20), (20, 10), (10, 1)]:
            var = propagate_variance(var, std, src, default_schedule, dst=dst)
            assert np.all(var > 0)

    def test_negative_inputs_rejected(self, default_schedule):
        good = np.zeros((1, 1, 2))
        bad = np.full((1, 1, 2), -0.1)
        with pytest.raises(DomainError):
            propagate_variance(bad, good, 30, default_schedule)
        with pytest.raises(DomainError):
            propagate_variance(good, bad, 30, default_schedule)
