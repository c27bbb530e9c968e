import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdenoise import (
    CgConfig,
    DenoiserOperator,
    InvalidInputError,
    NumericDivergenceError,
    TaylorSystemOperator,
    calibrate_cg_params,
    unrolled_cg,
)
from oracles import random_spd

TIGHT = 1e-300  # guard far below machine noise: pure solver behaviour


def identity_system(n):
    return TaylorSystemOperator.with_default_coefficients(
        DenoiserOperator.from_dense(np.eye(n)), 5
    )


def dense_system(seed, n, lo=0.5, hi=5.0):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, n, lo, hi)
    y = rng.standard_normal(n)
    return a, y


class TestAnalyticMode:
    def test_identity_system_returns_input_at_any_depth(self):
        system = identity_system(6)
        y = np.random.default_rng(0).random(6)
        for depth in (0, 1, 5, 15):
            x, trace = unrolled_cg(system, y, CgConfig(depth_T=depth), want_trace=True)
            assert np.array_equal(x, y)
            assert trace.residual_norms[0] == 0.0

    def test_finite_termination_small_dense_system(self):
        a, y = dense_system(1, 8)
        cfg = CgConfig(depth_T=8, mode="analytic", epsilon_guard=TIGHT)
        x, _ = unrolled_cg(lambda v: a @ v, y, cfg)
        assert np.linalg.norm(a @ x - y) / np.linalg.norm(y) < 1e-10

    def test_solution_matches_direct_solve(self):
        a, y = dense_system(2, 12)
        cfg = CgConfig(depth_T=12, mode="analytic", epsilon_guard=TIGHT)
        x, _ = unrolled_cg(lambda v: a @ v, y, cfg)
        x_star = np.linalg.solve(a, y)
        assert np.linalg.norm(x - x_star) / np.linalg.norm(x_star) < 1e-10

    def test_error_decreases_monotonically_in_a_norm(self):
        a, y = dense_system(3, 16)
        x_star = np.linalg.solve(a, y)
        cfg = CgConfig(depth_T=16, mode="analytic", epsilon_guard=TIGHT)
        _, trace = unrolled_cg(lambda v: a @ v, y, cfg, want_trace=True)
        errors = [
            float(np.sqrt((xk - x_star) @ a @ (xk - x_star))) for xk in trace.iterates
        ]
        for before, after in zip(errors, errors[1:]):
            assert after <= before * (1.0 + 1e-10) + 1e-14

    def test_successive_residuals_nearly_orthogonal(self):
        a, y = dense_system(4, 10, lo=1.0, hi=3.0)
        cfg = CgConfig(depth_T=10, mode="analytic", epsilon_guard=TIGHT)
        _, trace = unrolled_cg(lambda v: a @ v, y, cfg, want_trace=True)
        residuals = [y - a @ xk for xk in trace.iterates]
        for rk, rk1 in zip(residuals, residuals[1:]):
            n0, n1 = np.linalg.norm(rk), np.linalg.norm(rk1)
            if min(n0, n1) < 1e-8 * np.linalg.norm(y):
                break
            assert abs(rk1 @ rk) / (n0 * n1) < 1e-6

    def test_guard_freezes_after_breakdown(self):
        system = identity_system(4)  # r_0 = 0 triggers the guard at once
        y = np.ones(4)
        x, trace = unrolled_cg(system, y, CgConfig(depth_T=6), want_trace=True)
        assert np.array_equal(x, y)
        assert np.all(trace.used_alphas == 0.0)
        assert np.all(trace.used_betas == 0.0)

    def test_zero_rhs_stays_zero_and_finite(self):
        a, _ = dense_system(5, 8)
        x, trace = unrolled_cg(lambda v: a @ v, np.zeros(8), CgConfig(depth_T=8), want_trace=True)
        assert np.array_equal(x, np.zeros(8))
        assert np.all(trace.used_alphas == 0.0)
        assert np.all(np.isfinite(x))

    @given(st.integers(0, 500))
    @settings(max_examples=20)
    def test_finite_termination_property(self, seed):
        a, y = dense_system(seed, 6, lo=0.8, hi=4.0)
        cfg = CgConfig(depth_T=6, mode="analytic", epsilon_guard=TIGHT)
        x, _ = unrolled_cg(lambda v: a @ v, y, cfg)
        assert np.linalg.norm(a @ x - y) / np.linalg.norm(y) < 1e-8


class TestLearnedMode:
    def test_replaying_analytic_scalars_reproduces_output(self):
        a, y = dense_system(6, 10)
        analytic_cfg = CgConfig(depth_T=10, mode="analytic", epsilon_guard=TIGHT)
        x_ref, trace = unrolled_cg(lambda v: a @ v, y, analytic_cfg, want_trace=True)
        learned_cfg = CgConfig(
            depth_T=10,
            mode="learned",
            learned_alpha=trace.used_alphas,
            learned_beta=trace.used_betas,
        )
        x_learned, _ = unrolled_cg(lambda v: a @ v, y, learned_cfg)
        assert np.max(np.abs(x_learned - x_ref)) < 1e-12

    def test_scalars_used_unconditionally(self):
        system = identity_system(4)  # analytic mode would freeze here
        y = np.ones(4)
        cfg = CgConfig(
            depth_T=2,
            mode="learned",
            learned_alpha=np.array([0.5, 0.25]),
            learned_beta=np.array([0.1]),
        )
        x, trace = unrolled_cg(system, y, cfg, want_trace=True)
        assert np.array_equal(trace.used_alphas, np.array([0.5, 0.25]))
        assert np.array_equal(x, y)  # r_0 = 0, so the updates add nothing

    def test_nonfinite_scalar_raises_with_iteration_index(self):
        a, y = dense_system(7, 6)
        cfg = CgConfig(
            depth_T=3,
            mode="learned",
            learned_alpha=np.array([0.5, np.nan, 0.5]),
            learned_beta=np.array([0.1, 0.1]),
        )
        with pytest.raises(NumericDivergenceError) as err:
            unrolled_cg(lambda v: a @ v, y, cfg)
        assert err.value.iteration == 1

    def test_depth_zero_passthrough(self):
        a, y = dense_system(8, 5)
        x, trace = unrolled_cg(lambda v: a @ v, y, CgConfig(depth_T=0), want_trace=True)
        assert np.array_equal(x, y)
        assert len(trace.iterates) == 1
        assert trace.used_alphas.shape == (0,)


class TestTrace:
    def test_lengths_consistent_with_depth(self):
        a, y = dense_system(9, 7)
        _, trace = unrolled_cg(
            lambda v: a @ v, y, CgConfig(depth_T=7, epsilon_guard=TIGHT), want_trace=True
        )
        assert len(trace.iterates) == 8
        assert len(trace.residual_norms) == 8
        assert trace.used_alphas.shape == (7,)
        assert trace.used_betas.shape == (6,)

    def test_no_trace_by_default(self):
        a, y = dense_system(10, 5)
        _, trace = unrolled_cg(lambda v: a @ v, y, CgConfig(depth_T=5))
        assert trace is None


class TestCalibration:
    def test_single_element_batch_copies_analytic_scalars(self):
        a, y = dense_system(11, 8)
        system = lambda v: a @ v
        alpha, beta = calibrate_cg_params([(system, y)], 8)
        _, trace = unrolled_cg(system, y, CgConfig(depth_T=8), want_trace=True)
        assert np.array_equal(alpha, trace.used_alphas)
        assert np.array_equal(beta, trace.used_betas)

    def test_identical_systems_average_to_single_run(self):
        a, y = dense_system(12, 6)
        system = lambda v: a @ v
        alpha1, beta1 = calibrate_cg_params([(system, y)], 6)
        alpha3, beta3 = calibrate_cg_params([(system, y)] * 3, 6)
        assert np.allclose(alpha1, alpha3, atol=1e-15)
        assert np.allclose(beta1, beta3, atol=1e-15)

    def test_mean_of_two_distinct_systems(self):
        a1, y1 = dense_system(13, 5)
        a2, y2 = dense_system(14, 5)
        batch = [(lambda v: a1 @ v, y1), (lambda v: a2 @ v, y2)]
        alpha, beta = calibrate_cg_params(batch, 5)
        traces = [
            unrolled_cg(s, y, CgConfig(depth_T=5), want_trace=True)[1] for s, y in batch
        ]
        assert np.array_equal(alpha, np.mean([t.used_alphas for t in traces], axis=0))
        assert np.array_equal(beta, np.mean([t.used_betas for t in traces], axis=0))

    def test_empty_batch_raises(self):
        with pytest.raises(InvalidInputError):
            calibrate_cg_params([], 5)


class TestValidation:
    def test_rhs_length_mismatch(self):
        system = identity_system(4)
        with pytest.raises(InvalidInputError):
            unrolled_cg(system, np.zeros(5), CgConfig(depth_T=2))

    def test_learned_mode_requires_scalars(self):
        with pytest.raises(InvalidInputError):
            CgConfig(depth_T=3, mode="learned")

    def test_learned_alpha_length_checked(self):
        with pytest.raises(InvalidInputError):
            CgConfig(
                depth_T=3,
                mode="learned",
                learned_alpha=np.ones(2),
                learned_beta=np.ones(2),
            )

    def test_unknown_mode(self):
        with pytest.raises(InvalidInputError):
            CgConfig(depth_T=3, mode="newton")

    def test_negative_depth(self):
        with pytest.raises(InvalidInputError):
            CgConfig(depth_T=-1)

    def test_system_must_be_callable_or_operator(self):
        with pytest.raises(InvalidInputError):
            unrolled_cg(object(), np.zeros(3), CgConfig(depth_T=1))
