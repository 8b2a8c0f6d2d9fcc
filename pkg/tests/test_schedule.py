"""Noise-schedule tests.

Frozen constants below were computed once from the closed-form definition
(alpha_bar_t = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) pi/2)) and are
asserted against the table-building code, which goes through the
beta / cumprod route instead.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pose9d.errors import (
    InvalidConfigError,
    ShapeMismatchError,
    StepOrderViolationError,
    StepOutOfRangeError,
)
from pose9d.schedule import (
    NoiseSchedule,
    build_cosine_schedule,
    ddim_step,
    ddim_step_pairs,
    posterior_stats,
    q_sample,
    single_step_sample,
)

SCHED_1000 = build_cosine_schedule(1000)
SCHED_10 = build_cosine_schedule(10)


class TestBuild:
    def test_frozen_values_T1000(self):
        s = SCHED_1000
        assert abs(s.beta[0] - 4.128422482196914e-05) < 1e-17
        assert abs(s.beta[998] - 0.7499993929011166) < 1e-12
        assert s.beta[999] == 0.999  # the only clipped entry
        assert abs(s.alpha_bar[0] - 0.999958715775178) < 1e-14
        assert abs(s.alpha_bar[999] - 2.4287669070348542e-09) < 1e-21

    def test_frozen_values_T10(self):
        s = SCHED_10
        assert abs(s.beta[0] - 0.02790726288603096) < 1e-15
        assert abs(s.alpha_bar[9] - 2.4091724140085884e-05) < 1e-17

    def test_monotonicity_and_range(self):
        s = SCHED_1000
        assert np.all(np.diff(s.beta) > 0)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all((s.beta > 0) & (s.beta <= 0.999))
        assert s.alpha_bar[0] > 0.999
        assert s.alpha_bar[-1] < 1e-3

    def test_tables_consistent(self):
        s = SCHED_1000
        np.testing.assert_array_equal(s.alpha, 1.0 - s.beta)
        np.testing.assert_allclose(s.alpha_bar, np.cumprod(s.alpha), rtol=0)

    def test_matches_closed_form_before_clip(self):
        # cumprod route equals f(t)/f(0) wherever no clipping happened
        T, s_off = 50, 0.008
        s = build_cosine_schedule(T, s_off)
        t = np.arange(T + 1, dtype=np.float64)
        f = np.cos(((t / T + s_off) / (1 + s_off)) * np.pi / 2.0) ** 2
        direct = (f / f[0])[1:]
        np.testing.assert_allclose(s.alpha_bar[:-1], direct[:-1], atol=1e-14)

    def test_alpha_bar_at_boundary(self):
        assert SCHED_10.alpha_bar_at(0) == 1.0
        assert SCHED_10.alpha_bar_at(1) == SCHED_10.alpha_bar[0]
        with pytest.raises(StepOutOfRangeError):
            SCHED_10.alpha_bar_at(11)

    def test_T_too_small(self):
        with pytest.raises(InvalidConfigError):
            build_cosine_schedule(1)

    def test_json_round_trip(self):
        import json
        d = json.loads(json.dumps(SCHED_10.to_dict()))
        back = NoiseSchedule.from_dict(d)
        assert back.T == 10
        np.testing.assert_array_equal(back.beta, SCHED_10.beta)
        np.testing.assert_array_equal(back.alpha_bar, SCHED_10.alpha_bar)


class TestForward:
    def test_zero_noise(self):
        p0 = np.arange(15, dtype=np.float64)
        out = q_sample(p0, 5, np.zeros(15), SCHED_10)
        np.testing.assert_allclose(out, np.sqrt(SCHED_10.alpha_bar[4]) * p0,
                                   atol=1e-15)

    def test_terminal_step_is_almost_pure_noise(self):
        rng = np.random.default_rng(0)
        p0 = rng.uniform(-1, 1, 15)
        eps = rng.standard_normal(15)
        out = q_sample(p0, 1000, eps, SCHED_1000)
        assert np.linalg.norm(out - eps) < 0.04 * np.linalg.norm(p0)

    def test_chain_matches_closed_form_mean(self):
        # three single steps with zero noise contract by sqrt(alpha_bar_3)
        p = np.full(15, 2.0)
        for t in (1, 2, 3):
            p = single_step_sample(p, t, np.zeros(15), SCHED_10)
        np.testing.assert_allclose(
            p, np.sqrt(SCHED_10.alpha_bar[2]) * 2.0, atol=1e-15)

    def test_chain_variance_identity(self):
        # independent per-step noises accumulate to 1 - alpha_bar_3:
        # b3 + (1-b3) b2 + (1-b3)(1-b2) b1 = 1 - a1 a2 a3
        b = SCHED_10.beta
        acc = b[2] + (1 - b[2]) * b[1] + (1 - b[2]) * (1 - b[1]) * b[0]
        assert abs(acc - (1.0 - SCHED_10.alpha_bar[2])) < 1e-15

    def test_single_step_contraction(self):
        p = np.ones(15)
        out = single_step_sample(p, 4, np.zeros(15), SCHED_10)
        expected = np.sqrt(1.0 - SCHED_10.beta[3]) * np.linalg.norm(p)
        assert abs(np.linalg.norm(out) - expected) < 1e-12

    def test_batched_per_sample_steps(self):
        rng = np.random.default_rng(3)
        p0 = rng.standard_normal((4, 15))
        eps = rng.standard_normal((4, 15))
        t = np.array([1, 3, 7, 10])
        out = q_sample(p0, t, eps, SCHED_10)
        for i in range(4):
            row = q_sample(p0[i], int(t[i]), eps[i], SCHED_10)
            np.testing.assert_allclose(out[i], row, atol=1e-15)

    def test_second_moment_monte_carlo(self):
        # E ||p_t||^2 = ab ||p0||^2 + (1 - ab) * 15, within 3 standard errors
        rng = np.random.default_rng(42)
        p0 = rng.uniform(-1, 1, 15)
        t, n = 6, 20000
        ab = SCHED_10.alpha_bar[t - 1]
        eps = rng.standard_normal((n, 15))
        draws = q_sample(np.tile(p0, (n, 1)), np.full(n, t), eps, SCHED_10)
        second = np.sum(draws ** 2, axis=1)
        expected = ab * np.sum(p0 ** 2) + (1 - ab) * 15
        sigma2 = 1 - ab
        var = 30 * sigma2 ** 2 + 4 * sigma2 * ab * np.sum(p0 ** 2)
        assert abs(second.mean() - expected) < 3 * np.sqrt(var / n)

    def test_step_out_of_range(self):
        p = np.zeros(15)
        for bad in (0, 11):
            with pytest.raises(StepOutOfRangeError):
                q_sample(p, bad, p, SCHED_10)
            with pytest.raises(StepOutOfRangeError):
                single_step_sample(p, bad, p, SCHED_10)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            q_sample(np.zeros(15), 3, np.zeros(14), SCHED_10)


class TestPosterior:
    def test_variance_zero_at_first_step(self):
        _, var = posterior_stats(np.ones(15), 1, np.zeros(15), SCHED_10)
        assert var == 0.0

    def test_variance_below_beta(self):
        for t in range(2, 11):
            _, var = posterior_stats(np.ones(15), t, np.zeros(15), SCHED_10)
            assert 0.0 < var < SCHED_10.beta[t - 1]

    def test_mean_matches_bayes_oracle(self):
        # with the exact noise plugged in, the mean must equal the direct
        # Gaussian posterior mean built from p0 and p_t
        rng = np.random.default_rng(5)
        p0 = rng.standard_normal(15)
        for t in (2, 5, 10):
            eps = rng.standard_normal(15)
            p_t = q_sample(p0, t, eps, SCHED_10)
            mean, _ = posterior_stats(p_t, t, eps, SCHED_10)
            ab_t = SCHED_10.alpha_bar[t - 1]
            ab_prev = SCHED_10.alpha_bar[t - 2]
            beta = SCHED_10.beta[t - 1]
            alpha = SCHED_10.alpha[t - 1]
            oracle = (np.sqrt(ab_prev) * beta * p0
                      + np.sqrt(alpha) * (1 - ab_prev) * p_t) / (1 - ab_t)
            np.testing.assert_allclose(mean, oracle, atol=1e-12)

    def test_batched_variance_shape(self):
        p = np.zeros((3, 15))
        _, var = posterior_stats(p, np.array([1, 5, 10]), p, SCHED_10)
        assert var.shape == (3,)
        assert var[0] == 0.0


class TestDdim:
    def test_reconstruction_identity(self):
        # jumping to 0 with the exact noise returns p0
        rng = np.random.default_rng(9)
        p0 = rng.standard_normal(15)
        eps = rng.standard_normal(15)
        p_t = q_sample(p0, 7, eps, SCHED_10)
        out = ddim_step(p_t, 7, 0, eps, SCHED_10)
        np.testing.assert_allclose(out, p0, atol=1e-12)

    def test_jump_equals_chain_with_fixed_noise(self):
        rng = np.random.default_rng(10)
        p0 = rng.standard_normal(15)
        eps = rng.standard_normal(15)
        p_t = q_sample(p0, 9, eps, SCHED_10)
        direct = ddim_step(p_t, 9, 0, eps, SCHED_10)
        mid = ddim_step(p_t, 9, 4, eps, SCHED_10)
        chained = ddim_step(mid, 4, 0, eps, SCHED_10)
        np.testing.assert_allclose(direct, chained, atol=1e-12)

    def test_zero_noise_rescales(self):
        p_t = np.full(15, 3.0)
        out = ddim_step(p_t, 8, 3, np.zeros(15), SCHED_10)
        ratio = np.sqrt(SCHED_10.alpha_bar[2] / SCHED_10.alpha_bar[7])
        np.testing.assert_allclose(out, 3.0 * ratio, atol=1e-12)

    def test_full_chain_recovers_p0(self):
        # exact per-step noise, full 1000-step chain, 64-bit: < 1e-5
        rng = np.random.default_rng(11)
        p0 = rng.uniform(-1, 1, 15)
        eps = rng.standard_normal(15)
        p = q_sample(p0, 1000, eps, SCHED_1000)
        for t, t_prev in ddim_step_pairs(1000, 1000):
            p = ddim_step(p, t, t_prev, eps, SCHED_1000)
        assert np.max(np.abs(p - p0)) < 1e-5

    def test_order_violation(self):
        p = np.zeros(15)
        with pytest.raises(StepOrderViolationError):
            ddim_step(p, 5, 5, p, SCHED_10)
        with pytest.raises(StepOrderViolationError):
            ddim_step(p, 5, 7, p, SCHED_10)
        with pytest.raises(StepOutOfRangeError):
            ddim_step(p, 11, 5, p, SCHED_10)


class TestStepPairs:
    def test_full_chain(self):
        pairs = ddim_step_pairs(10, 10)
        assert pairs == [(t, t - 1) for t in range(10, 0, -1)]

    def test_reduced_chain(self):
        pairs = ddim_step_pairs(1000, 50)
        assert len(pairs) == 50
        assert pairs[0][0] == 1000
        assert pairs[-1][1] == 0
        ts = [p[0] for p in pairs]
        assert ts == sorted(ts, reverse=True)
        # adjacent pairs share endpoints
        for (_, lo), (hi, _) in zip(pairs, pairs[1:]):
            assert lo == hi

    def test_bad_count(self):
        with pytest.raises(InvalidConfigError):
            ddim_step_pairs(10, 0)
        with pytest.raises(InvalidConfigError):
            ddim_step_pairs(10, 11)

    @given(st.integers(2, 400), st.data())
    @settings(max_examples=40, deadline=None)
    def test_pairs_always_cover_range(self, T, data):
        n = data.draw(st.integers(1, T))
        pairs = ddim_step_pairs(T, n)
        assert pairs[0][0] == T
        assert pairs[-1][1] == 0
        for t, t_prev in pairs:
            assert 0 <= t_prev < t <= T
