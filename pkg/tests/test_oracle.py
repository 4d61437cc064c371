import numpy as np
import pytest

from crfseg.oracle import (
    MAX_ORACLE_POINTS,
    brute_force_gaussian_filter,
    dense_kernel_matrix,
    finite_difference_gradients,
    labeling_energy,
    reference_mean_field,
)


class TestKernelMatrix:
    def test_symmetric_unit_diagonal(self):
        f = np.random.default_rng(0).normal(size=(20, 3))
        K = dense_kernel_matrix(f)
        np.testing.assert_allclose(K, K.T)
        np.testing.assert_allclose(np.diag(K), 1.0)
        assert K.min() > 0 and K.max() <= 1.0 + 1e-12

    def test_two_identical_points(self):
        K = dense_kernel_matrix(np.zeros((2, 4)))
        np.testing.assert_allclose(K, np.ones((2, 2)))

    def test_single_point(self):
        K = dense_kernel_matrix(np.array([[1.0, -2.0]]))
        np.testing.assert_allclose(K, [[1.0]])

    def test_matches_double_loop(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=(50, 3))
        K = dense_kernel_matrix(f)
        for i in range(0, 50, 7):
            for j in range(0, 50, 11):
                expected = np.exp(-0.5 * np.sum((f[i] - f[j]) ** 2))
                np.testing.assert_allclose(K[i, j], expected, rtol=1e-12)

    def test_size_guard(self):
        with pytest.raises(ValueError):
            dense_kernel_matrix(np.zeros((MAX_ORACLE_POINTS + 1, 2)))


class TestBruteForceFilter:
    def test_none_is_plain_matvec(self):
        rng = np.random.default_rng(2)
        f = rng.normal(size=(12, 2))
        v = rng.normal(size=(12, 3))
        out = brute_force_gaussian_filter(f, v, normalization="none")
        np.testing.assert_allclose(out, dense_kernel_matrix(f) @ v)

    def test_symmetric_is_self_adjoint(self):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(15, 2))
        u = rng.normal(size=(15, 1))
        v = rng.normal(size=(15, 1))
        lhs = np.sum(brute_force_gaussian_filter(f, u) * v)
        rhs = np.sum(u * brute_force_gaussian_filter(f, v))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)

    def test_unknown_normalization(self):
        with pytest.raises(ValueError):
            brute_force_gaussian_filter(np.zeros((2, 2)), np.zeros((2, 1)), "bad")

    def test_row_mismatch(self):
        with pytest.raises(ValueError):
            brute_force_gaussian_filter(np.zeros((3, 2)), np.zeros((4, 1)))


class TestReferenceMeanField:
    def test_rows_are_distributions(self):
        rng = np.random.default_rng(4)
        f = rng.normal(size=(30, 2))
        U = rng.normal(size=(30, 3))
        w = np.full((3, 1), 2.0)
        mu = 1.0 - np.eye(3)
        Q = reference_mean_field(U, [f], w, mu, 5)
        assert Q.min() >= 0
        np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_iterations_is_softmax(self):
        rng = np.random.default_rng(5)
        U = rng.normal(size=(10, 2))
        Q = reference_mean_field(U, [rng.normal(size=(10, 2))],
                                 np.ones((2, 1)), 1.0 - np.eye(2), 0)
        e = np.exp(U - U.max(axis=1, keepdims=True))
        np.testing.assert_allclose(Q, e / e.sum(axis=1, keepdims=True))

    def test_zero_weights_fixed_point(self):
        rng = np.random.default_rng(6)
        U = rng.normal(size=(10, 2))
        f = rng.normal(size=(10, 2))
        Q0 = reference_mean_field(U, [f], np.zeros((2, 1)), 1.0 - np.eye(2), 0)
        Q5 = reference_mean_field(U, [f], np.zeros((2, 1)), 1.0 - np.eye(2), 5)
        np.testing.assert_allclose(Q5, Q0, atol=1e-15)

    def test_weights_shape_check(self):
        with pytest.raises(ValueError):
            reference_mean_field(np.zeros((4, 2)), [np.zeros((4, 2))],
                                 np.ones((3, 1)), np.eye(2), 1)


class TestFiniteDifferences:
    def test_quadratic(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])

        def f(x):
            return 0.5 * float(x @ A @ x)

        x0 = np.array([0.3, -1.2])
        g = finite_difference_gradients(f, x0, 1e-6)
        np.testing.assert_allclose(g, A @ x0, atol=1e-8)

    def test_linear_exact(self):
        c = np.array([1.0, -2.0, 3.0])
        g = finite_difference_gradients(lambda x: float(c @ x), np.zeros(3), 1e-4)
        np.testing.assert_allclose(g, c, atol=1e-10)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            finite_difference_gradients(lambda x: 0.0, np.zeros(2), 0.0)

    def test_nonfinite_loss(self):
        with pytest.raises(ValueError):
            finite_difference_gradients(lambda x: np.nan, np.zeros(1), 1e-5)


class TestLabelingEnergy:
    def test_single_pixel(self):
        U = np.array([[0.2, -0.7]])
        f = [np.zeros((1, 2))]
        w = np.ones((2, 1))
        mu = 1.0 - np.eye(2)
        assert labeling_energy([1], U, f, w, mu) == pytest.approx(0.7)

    def test_zero_compatibility_is_pure_unary(self):
        rng = np.random.default_rng(7)
        U = rng.normal(size=(8, 3))
        labels = rng.integers(0, 3, size=8)
        e = labeling_energy(labels, U, [rng.normal(size=(8, 2))],
                            np.ones((3, 1)), np.zeros((3, 3)))
        np.testing.assert_allclose(e, -U[np.arange(8), labels].sum())

    def test_potts_gap_two_identical_feature_pixels(self):
        # both kernels evaluate to 1 between the two pixels, so differing
        # labels under Potts cost exactly the summed kernel weights
        U = np.zeros((2, 2))
        feats = [np.zeros((2, 2)), np.zeros((2, 3))]
        w = np.tile([[3.0, 5.0]], (2, 1))
        mu = 1.0 - np.eye(2)
        same = labeling_energy([0, 0], U, feats, w, mu)
        diff = labeling_energy([0, 1], U, feats, w, mu)
        assert diff - same == pytest.approx(8.0)

    def test_label_count_mismatch(self):
        with pytest.raises(ValueError):
            labeling_energy([0], np.zeros((2, 2)), [np.zeros((2, 1))],
                            np.ones((2, 1)), np.eye(2))
