"""Brute-force reference paths used to validate the fast implementations.

Everything here is deliberately O(N^2) and shares no stage code with the
lattice or the mean-field modules; a hard size guard keeps the quadratic
cost from being hit by accident.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "MAX_ORACLE_POINTS",
    "dense_kernel_matrix",
    "brute_force_gaussian_filter",
    "reference_mean_field",
    "finite_difference_gradients",
    "labeling_energy",
]

MAX_ORACLE_POINTS = 4096


def _guard(n_points: int) -> None:
    if n_points > MAX_ORACLE_POINTS:
        raise ValueError(
            f"oracle path limited to {MAX_ORACLE_POINTS} points, got {n_points}"
        )


def dense_kernel_matrix(features: np.ndarray) -> np.ndarray:
    """Exact kernel matrix K(i,j) = exp(-0.5 ||f_i - f_j||^2)."""
    features = np.asarray(features, dtype=np.float64)
    _guard(features.shape[0])
    sq = np.sum(features**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * features @ features.T
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-0.5 * d2)


def brute_force_gaussian_filter(
    features: np.ndarray, values: np.ndarray, normalization: str = "symmetric"
) -> np.ndarray:
    """Exact K @ values with the same normalization semantics as the lattice."""
    values = np.asarray(values, dtype=np.float64)
    K = dense_kernel_matrix(features)
    if values.shape[0] != K.shape[0]:
        raise ValueError("values row count does not match features")
    if normalization == "none":
        return K @ values
    if normalization == "symmetric":
        dinv_sqrt = 1.0 / np.sqrt(K.sum(axis=1))
        return dinv_sqrt[:, None] * (K @ (dinv_sqrt[:, None] * values))
    raise ValueError(f"unknown normalization {normalization!r}")


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def reference_mean_field(U, features_list, weights, compatibility, n_iterations):
    """Literal fixed-point iteration of dense-CRF mean field.

    Message passing is the explicit j != i sum over the symmetric-normalized
    exact kernel matrices.  `features_list` holds one feature matrix per
    kernel; `weights` is (L, M) per-class kernel weights and
    `compatibility` the (L, L) label compatibility matrix.

    Kept fully independent of the lattice-backed stage implementations.
    """
    U = np.asarray(U, dtype=np.float64)
    n, n_labels = U.shape
    _guard(n)
    weights = np.asarray(weights, dtype=np.float64)
    compatibility = np.asarray(compatibility, dtype=np.float64)
    n_kernels = len(features_list)
    if weights.shape != (n_labels, n_kernels):
        raise ValueError("weights shape does not match labels/kernels")

    # Normalized kernels with the diagonal removed (the j != i sum).
    kernels = []
    for feats in features_list:
        K = dense_kernel_matrix(feats)
        dinv_sqrt = 1.0 / np.sqrt(K.sum(axis=1))
        G = dinv_sqrt[:, None] * K * dinv_sqrt[None, :]
        np.fill_diagonal(G, 0.0)
        kernels.append(G)

    Q = _softmax_rows(U)
    for _ in range(n_iterations):
        weighted = np.zeros_like(Q)
        for m, G in enumerate(kernels):
            weighted += weights[None, :, m] * (G @ Q)
        pairwise = weighted @ compatibility.T
        Q = _softmax_rows(U - pairwise)
    return Q


def finite_difference_gradients(loss_fn, theta: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for k in range(theta.size):
        bump = np.zeros_like(theta)
        bump.flat[k] = epsilon
        hi = loss_fn(theta + bump)
        lo = loss_fn(theta - bump)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("loss function returned a non-finite value")
        grad.flat[k] = (hi - lo) / (2.0 * epsilon)
    return grad


def labeling_energy(labels, U, features_list, weights, compatibility) -> float:
    """Exact Gibbs energy of a discrete labeling.

    Unary part is -U_i(x_i); the pairwise part sums, over unordered pixel
    pairs, mu(x_i, x_j) times the per-class-weighted raw Gaussian kernels.
    Reported for diagnostics only (mean field does not minimize it
    directly).
    """
    labels = np.asarray(labels).ravel()
    U = np.asarray(U, dtype=np.float64)
    n = U.shape[0]
    _guard(n)
    if labels.shape[0] != n:
        raise ValueError("label count does not match unary field")
    weights = np.asarray(weights, dtype=np.float64)
    compatibility = np.asarray(compatibility, dtype=np.float64)

    energy = -float(U[np.arange(n), labels].sum())
    kernel_sum = np.zeros((n, n))
    for m, feats in enumerate(features_list):
        K = dense_kernel_matrix(feats)
        # class-indexed kernel weight of the "source" pixel's label
        kernel_sum += K * weights[labels, m][None, :]
    mu_pairs = compatibility[labels[:, None], labels[None, :]]
    pair = mu_pairs * kernel_sum
    iu = np.triu_indices(n, k=1)
    energy += float(pair[iu].sum())
    return energy
