import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdenoise import (
    DenoiserOperator,
    InvalidInputError,
    MetricFactor,
    SparseFilterMatrix,
    apply_psi,
    build_filter_matrix,
    central_gradients,
    estimate_spectrum,
    extract_features,
    filter_weight,
    normalize,
)
from graphdenoise.errors import DegenerateMatrixError
from oracles import dense_filter_matrix, dense_normalize, random_patch, stencil_gradients


class TestExtractFeatures:
    def test_constant_patch(self):
        field = extract_features(np.full(4, 0.5), 2)
        expected = np.array(
            [
                [0, 0, 0.5, 0, 0],
                [1, 0, 0.5, 0, 0],
                [0, 1, 0.5, 0, 0],
                [1, 1, 0.5, 0, 0],
            ],
            dtype=float,
        )
        assert np.array_equal(field.features, expected)

    def test_ramp_central_difference(self):
        # 1x3 ramp: the center pixel sees (1.0 - 0.0) / 2
        gx, gy = central_gradients(np.array([[0.0, 0.5, 1.0]]))
        assert gx[0, 1] == 0.5
        assert gx[0, 0] == 0.5 and gx[0, 2] == 0.5  # one-sided ends
        assert np.all(gy == 0.0)

    def test_gradients_match_stencil_oracle(self):
        patch = random_patch(11, 8)
        field = extract_features(patch, 8)
        gx, gy = stencil_gradients(patch.reshape(8, 8))
        assert np.array_equal(field.features[:, 3], gx.ravel())
        assert np.array_equal(field.features[:, 4], gy.ravel())

    def test_intensity_column_is_the_patch(self):
        patch = random_patch(3, 4)
        field = extract_features(patch, 4)
        assert np.array_equal(field.features[:, 2], patch)

    def test_rejects_non_square_length(self):
        with pytest.raises(InvalidInputError):
            extract_features(np.zeros(5), 2)

    def test_rejects_out_of_range_intensity(self):
        with pytest.raises(InvalidInputError):
            extract_features(np.array([0.0, 0.5, 1.5, 0.2]), 2)

    def test_gradients_reject_non_2d(self):
        with pytest.raises(InvalidInputError):
            central_gradients(np.zeros(9))


class TestFilterWeight:
    def test_identical_features_give_one(self):
        metric = MetricFactor.bilateral_default()
        f = np.array([3.0, 4.0, 0.7, 0.1, -0.2])
        assert filter_weight(f, f, metric) == 1.0

    def test_unit_difference_identity_metric(self):
        metric = MetricFactor(dim=5, entries=np.eye(5))
        f_i = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
        f_j = np.zeros(5)
        assert filter_weight(f_i, f_j, metric) == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_reduces_to_classic_bilateral(self):
        # C = diag(1/sl, 1/sl, 1/sx, 0, 0) reproduces the product of the
        # spatial and range exponentials to machine precision.
        sl, sx = 2.0, 0.1
        metric = MetricFactor.diagonal([1 / sl, 1 / sl, 1 / sx, 0.0, 0.0])
        rng = np.random.default_rng(5)
        for _ in range(20):
            f_i = np.array([*rng.integers(0, 8, 2).astype(float), rng.random(), *rng.normal(0, 1, 2)])
            f_j = np.array([*rng.integers(0, 8, 2).astype(float), rng.random(), *rng.normal(0, 1, 2)])
            dl2 = (f_i[0] - f_j[0]) ** 2 + (f_i[1] - f_j[1]) ** 2
            dx2 = (f_i[2] - f_j[2]) ** 2
            classic = math.exp(-dl2 / sl**2) * math.exp(-dx2 / sx**2)
            assert filter_weight(f_i, f_j, metric) == pytest.approx(classic, rel=1e-13)

    def test_dimension_mismatch(self):
        metric = MetricFactor.bilateral_default()
        with pytest.raises(InvalidInputError):
            filter_weight(np.zeros(4), np.zeros(5), metric)

    @given(st.lists(st.floats(-5, 5), min_size=5, max_size=5))
    def test_weight_in_unit_interval(self, diff):
        metric = MetricFactor.bilateral_default()
        f_j = np.zeros(5)
        f_j[2] = 0.5
        f_i = f_j + np.array(diff) * np.array([1, 1, 0.05, 1, 1])
        f_i[2] = min(max(f_i[2], 0.0), 1.0)
        w = filter_weight(f_i, f_j, metric)
        assert 0.0 < w <= 1.0

    @given(st.floats(1.0, 8.0))
    @settings(max_examples=25)
    def test_scaling_metric_never_increases_weight(self, t):
        base = MetricFactor(dim=5, entries=np.tril(np.linspace(0.1, 1.0, 25).reshape(5, 5)))
        scaled = MetricFactor(dim=5, entries=t * base.entries)
        f_i = np.array([1.0, 2.0, 0.3, 0.1, -0.4])
        f_j = np.array([0.0, 1.0, 0.8, -0.2, 0.3])
        assert filter_weight(f_i, f_j, scaled) <= filter_weight(f_i, f_j, base)


class TestBuildFilterMatrix:
    def test_neighbor_counts_radius_one(self):
        field = extract_features(random_patch(0, 3), 3)
        filt = build_filter_matrix(field, MetricFactor.bilateral_default(), 1)
        dense = filt.to_dense()
        center = 4  # (1, 1) in a 3x3 patch
        corner = 0
        assert np.count_nonzero(dense[center]) == 9
        assert np.count_nonzero(dense[corner]) == 4

    def test_zero_metric_gives_all_ones(self):
        field = extract_features(random_patch(1, 4), 4)
        filt = build_filter_matrix(field, MetricFactor(dim=5, entries=np.zeros((5, 5))), 2)
        assert np.all(filt.weights == 1.0)

    def test_matches_dense_oracle(self):
        field = extract_features(random_patch(2, 5), 5)
        metric = MetricFactor.bilateral_default()
        filt = build_filter_matrix(field, metric, 2)
        dense = dense_filter_matrix(field, metric, 2)
        assert np.max(np.abs(filt.to_dense() - dense)) < 1e-15

    def test_enumeration_order_invariance(self):
        # the map (i, j) -> weight must not depend on construction order;
        # the oracle enumerates pairs in a completely different order
        field = extract_features(random_patch(9, 4), 4)
        metric = MetricFactor.from_lower_triangle(
            np.linspace(-0.5, 0.9, 15), 5
        )
        filt = build_filter_matrix(field, metric, 3)
        dense = dense_filter_matrix(field, metric, 3)
        assert np.max(np.abs(filt.to_dense() - dense)) < 1e-15

    def test_invariants_hold(self):
        field = extract_features(random_patch(3, 6), 6)
        filt = build_filter_matrix(field, MetricFactor.bilateral_default(), 3)
        filt.validate()  # symmetry, unit diagonal, (0, 1] range

    def test_rejects_radius_below_one(self):
        field = extract_features(random_patch(0, 3), 3)
        with pytest.raises(InvalidInputError):
            build_filter_matrix(field, MetricFactor.bilateral_default(), 0)

    def test_rejects_metric_dimension_mismatch(self):
        field = extract_features(random_patch(0, 3), 3)
        with pytest.raises(InvalidInputError):
            build_filter_matrix(field, MetricFactor.diagonal([1.0, 2.0]), 1)


class TestNormalize:
    def test_identity_filter_normalizes_to_identity(self):
        filt = SparseFilterMatrix.from_dense(np.eye(4))
        op = normalize(filt)
        assert np.array_equal(op.to_dense(), np.eye(4))

    def test_two_node_hand_computation(self):
        filt = SparseFilterMatrix.from_dense(np.array([[1.0, 0.5], [0.5, 1.0]]))
        op = normalize(filt)
        expected = np.array([[2 / 3, 1 / 3], [1 / 3, 2 / 3]])
        assert np.allclose(op.to_dense(), expected, atol=1e-15)
        assert np.array_equal(op.row_sums, np.array([1.5, 1.5]))

    def test_matches_dense_normalization_oracle(self):
        field = extract_features(random_patch(4, 4), 4)
        filt = build_filter_matrix(field, MetricFactor.bilateral_default(), 2)
        op = normalize(filt)
        assert np.max(np.abs(op.to_dense() - dense_normalize(filt.to_dense()))) < 1e-14

    def test_spectral_radius_at_most_one(self):
        field = extract_features(random_patch(6, 4), 4)
        filt = build_filter_matrix(field, MetricFactor.bilateral_default(), 2)
        eigs = np.linalg.eigvalsh(normalize(filt).to_dense())
        assert eigs.max() <= 1.0 + 1e-10

    def test_exact_symmetry(self):
        field = extract_features(random_patch(7, 5), 5)
        filt = build_filter_matrix(field, MetricFactor.bilateral_default(), 3)
        dense = normalize(filt).to_dense()
        assert np.max(np.abs(dense - dense.T)) < 1e-12

    def test_row_sums_at_least_one(self):
        field = extract_features(random_patch(8, 5), 5)
        filt = build_filter_matrix(field, MetricFactor.bilateral_default(), 3)
        assert np.all(normalize(filt).row_sums >= 1.0)

    def test_degenerate_row_sum_raises(self):
        bad = SparseFilterMatrix(
            n=2,
            window_radius=0,
            rows=np.array([0, 1]),
            cols=np.array([0, 1]),
            weights=np.array([1.0, -1.0]),
        )
        with pytest.raises(DegenerateMatrixError):
            normalize(bad)

    def test_diagonal_load_shifts_toward_identity(self):
        field = extract_features(random_patch(9, 4), 4)
        filt = build_filter_matrix(field, MetricFactor.bilateral_default(), 2)
        plain = normalize(filt).to_dense()
        loaded = normalize(filt, diagonal_load=0.25).to_dense()
        assert np.allclose(loaded, 0.75 * plain + 0.25 * np.eye(16), atol=1e-15)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20)
    def test_nonexpansive_over_random_patches(self, seed):
        field = extract_features(random_patch(seed, 4), 4)
        filt = build_filter_matrix(field, MetricFactor.bilateral_default(), 2)
        eigs = np.linalg.eigvalsh(normalize(filt).to_dense())
        assert eigs.max() <= 1.0 + 1e-8


class TestApplyPsi:
    def test_identity(self):
        op = DenoiserOperator.from_dense(np.eye(6))
        v = np.arange(6.0)
        assert np.array_equal(apply_psi(op, v), v)

    def test_zero_vector(self):
        field = extract_features(random_patch(5, 4), 4)
        op = normalize(build_filter_matrix(field, MetricFactor.bilateral_default(), 2))
        assert np.array_equal(apply_psi(op, np.zeros(16)), np.zeros(16))

    def test_matches_dense_matvec(self):
        field = extract_features(random_patch(12, 4), 4)
        op = normalize(build_filter_matrix(field, MetricFactor.bilateral_default(), 2))
        v = np.random.default_rng(1).standard_normal(16)
        dense_out = op.to_dense() @ v
        out = apply_psi(op, v)
        assert np.linalg.norm(out - dense_out) / np.linalg.norm(dense_out) < 1e-13

    def test_length_mismatch(self):
        op = DenoiserOperator.from_dense(np.eye(4))
        with pytest.raises(InvalidInputError):
            apply_psi(op, np.zeros(5))


class TestEstimateSpectrum:
    def test_identity_operator(self):
        op = DenoiserOperator.from_dense(np.eye(8))
        lam_min, lam_max = estimate_spectrum(op, 50)
        assert lam_min == pytest.approx(1.0, abs=1e-12)
        assert lam_max == pytest.approx(1.0, abs=1e-12)

    def test_diagonal_two_node(self):
        op = DenoiserOperator.from_dense(np.diag([0.2, 0.9]))
        lam_min, lam_max = estimate_spectrum(op, 500)
        assert lam_min == pytest.approx(0.2, abs=1e-6)
        assert lam_max == pytest.approx(0.9, abs=1e-6)

    def test_against_dense_eigensolve(self):
        side = 6  # 36-node graph; spec asks for ~32
        field = extract_features(random_patch(21, side), side)
        op = normalize(build_filter_matrix(field, MetricFactor.bilateral_default(), 2))
        eigs = np.linalg.eigvalsh(op.to_dense())
        lam_min, lam_max = estimate_spectrum(op, 500)
        assert lam_max == pytest.approx(eigs.max(), abs=1e-3)
        assert lam_min == pytest.approx(eigs.min(), abs=1e-3)

    def test_rejects_nonpositive_iterations(self):
        op = DenoiserOperator.from_dense(np.eye(2))
        with pytest.raises(InvalidInputError):
            estimate_spectrum(op, 0)

    def test_flags_non_pd(self, caplog):
        op = DenoiserOperator.from_dense(np.diag([-0.5, 0.9]))
        with caplog.at_level("WARNING"):
            lam_min, _ = estimate_spectrum(op, 300)
        assert lam_min <= 0.0
        assert any("positive definite" in rec.message for rec in caplog.records)


class TestMetricFactor:
    def test_metric_is_psd(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            metric = MetricFactor.from_lower_triangle(rng.standard_normal(15), 5)
            eigs = np.linalg.eigvalsh(metric.metric())
            assert eigs.min() >= -1e-10

    def test_lower_triangle_round_trip(self):
        values = np.random.default_rng(4).standard_normal(15)
        metric = MetricFactor.from_lower_triangle(values, 5)
        assert np.array_equal(metric.lower_triangle(), values)

    def test_rejects_wrong_entry_count(self):
        with pytest.raises(InvalidInputError):
            MetricFactor.from_lower_triangle(np.zeros(14), 5)
