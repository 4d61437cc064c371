"""Permutohedral lattice for fast approximate high-dimensional Gaussian filtering.

The lattice tiles the d-dimensional feature space with simplices whose
vertices live on a scaled root lattice.  Filtering a signal with the kernel
exp(-0.5 * ||f_i - f_j||^2) is approximated by three linear stages:

  splat  - scatter each point's value onto the d+1 vertices of its
           enclosing simplex, weighted barycentrically;
  blur   - run the 1-d kernel (1/2, 1, 1/2) along each of the d+1 lattice
           axes in turn;
  slice  - gather the blurred vertex values back at each point with the
           same barycentric weights.

Construction follows the standard scheme of Adams, Baek and Davis (the
elevation matrix, rank-based simplex lookup and canonical simplex
enumeration below are theirs).  All stages are linear, splat and slice are
exact transposes of each other, and each per-axis blur pass is symmetric,
so running the blur axes in reverse order yields the exact adjoint of the
whole filter.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = ["PermutohedralLattice", "build_lattice"]

# Exact per-lattice diagonal extraction is O(n_points * pipeline); above this
# size fall back to the closed-form interior approximation.
_EXACT_DIAG_MAX_POINTS = 4096


def _check_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-d (n_points x dim), got shape {features.shape}")
    n, d = features.shape
    if n < 1 or d < 1:
        raise ValueError(f"need n_points >= 1 and dim >= 1, got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features contain non-finite entries")
    return features


def _elevation_matrix(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Embedding of R^d onto the sum-zero hyperplane in R^(d+1), plus the
    per-coordinate scaling that makes the (1/2,1,1/2) blur approximate a
    unit-variance Gaussian in the original feature space."""
    E = np.vstack(
        [
            np.ones((d,), dtype=np.float64),
            np.diag(-np.arange(d, dtype=np.float64) - 2.0)
            + np.triu(np.ones((d, d), dtype=np.float64)),
        ]
    )
    inv_std_dev = np.sqrt(2.0 / 3.0) * (d + 1)
    scale = inv_std_dev / np.sqrt((np.arange(d) + 1.0) * (np.arange(d) + 2.0))
    return E, scale


def _canonical_simplex(d: int) -> np.ndarray:
    canonical = np.zeros((d + 1, d + 1), dtype=np.int32)
    for j in range(d + 1):
        canonical[j, : d + 1 - j] = j
        canonical[j, d + 1 - j :] = j - (d + 1)
    return canonical


def _rows_lookup(table: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of each query row in `table`, -1 where absent.  Rows are
    compared as raw bytes; both arrays must share dtype and width."""
    table = np.ascontiguousarray(table)
    queries = np.ascontiguousarray(queries)
    void_t = np.dtype((np.void, table.dtype.itemsize * table.shape[1]))
    tv = table.view(void_t).ravel()
    qv = queries.view(void_t).ravel()
    order = np.argsort(tv)
    pos = np.searchsorted(tv[order], qv)
    pos = np.clip(pos, 0, len(tv) - 1)
    found = tv[order[pos]] == qv
    out = np.where(found, order[pos], -1).astype(np.int64)
    return out


class PermutohedralLattice:
    """Immutable filter structure for a fixed set of feature points.

    Attributes:
        n_points: number of input points.
        dim: feature dimensionality d.
        n_lattice_points: number of distinct simplex vertices touched.
        offsets: (n_points, d+1) int index of each enclosing vertex.
        barycentric: (n_points, d+1) interpolation weights, rows sum to 1.
        neighbors: (n_lattice_points, 2d+2) per-axis up/down vertex indices,
            -1 where the neighbor is not part of the lattice.
    """

    def __init__(self, offsets, barycentric, neighbors, keys, dim):
        self.offsets = offsets
        self.barycentric = barycentric
        self.neighbors = neighbors
        self.keys = keys
        self.dim = dim
        self.n_points = offsets.shape[0]
        self.n_lattice_points = keys.shape[0]
        n, m = self.n_points, self.n_lattice_points
        rows = np.repeat(np.arange(n), dim + 1)
        self._splat_matrix = sp.csr_matrix(
            (barycentric.ravel(), (rows, offsets.ravel().astype(np.int64))),
            shape=(n, m),
        )
        self._norm = None
        self._self_coeff = None

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, features: np.ndarray) -> "PermutohedralLattice":
        features = _check_features(features)
        n, d = features.shape
        E, scale = _elevation_matrix(d)
        elevated = (features * scale) @ E.T  # (n, d+1), rows sum to 0

        # Round each coordinate to the nearest multiple of (d+1); the result
        # is the remainder-0 vertex nearest the point.
        rem0 = np.round(elevated / (d + 1)) * (d + 1)
        diff = elevated - rem0

        # Rank of each coordinate by descending residual (stable, so ties
        # break toward the lower coordinate index).
        order = np.argsort(-diff, axis=1, kind="stable")
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(d + 1)[None, :].repeat(n, 0), axis=1)

        # rem0 may not lie on the sum-zero sublattice; shift ranks and fold
        # offending coordinates back into range.
        coord_sum = np.rint(rem0.sum(axis=1) / (d + 1)).astype(np.int64)
        rank = rank + coord_sum[:, None]
        low = rank < 0
        high = rank > d
        rank[low] += d + 1
        rem0[low] += d + 1
        rank[high] -= d + 1
        rem0[high] -= d + 1

        # Barycentric coordinates of the point inside its simplex.
        delta = (elevated - rem0) / (d + 1)
        bary = np.zeros((n, d + 3), dtype=np.float64)
        idx = np.arange(n)[:, None]
        np.add.at(bary, (idx, d - rank), delta)
        np.add.at(bary, (idx, d - rank + 1), -delta)
        bary[:, 0] += 1.0 + bary[:, d + 1]
        bary = bary[:, : d + 1]

        # Enumerate the d+1 vertices of every simplex.  Vertex j has key
        # rem0 + canonical[j] permuted by rank; only the first d coordinates
        # are stored (the last is determined by the zero-sum constraint).
        canonical = _canonical_simplex(d)
        rem0_i = np.rint(rem0).astype(np.int64)
        keys_all = np.empty((n, d + 1, d), dtype=np.int64)
        for j in range(d + 1):
            keys_all[:, j, :] = rem0_i[:, :d] + canonical[j, rank[:, :d]]

        flat = keys_all.reshape(n * (d + 1), d)
        uniq, first_idx, inverse = np.unique(
            flat, axis=0, return_index=True, return_inverse=True
        )
        # Canonicalize vertex numbering by first occurrence (insertion
        # order), so results are independent of the sort used above.
        occ_order = np.argsort(first_idx, kind="stable")
        remap = np.empty(len(uniq), dtype=np.int64)
        remap[occ_order] = np.arange(len(uniq))
        keys = uniq[occ_order]
        offsets = remap[inverse].reshape(n, d + 1).astype(np.int32)

        # Per-axis neighbors.  Along axis j the up neighbor adds 1 to every
        # coordinate except j, which drops by d (and symmetrically down).
        m = keys.shape[0]
        keys_full = np.concatenate([keys, -keys.sum(axis=1, keepdims=True)], axis=1)
        up = np.empty((m, d + 1), dtype=np.int64)
        down = np.empty((m, d + 1), dtype=np.int64)
        for j in range(d + 1):
            up_full = keys_full + 1
            up_full[:, j] = keys_full[:, j] - d
            down_full = keys_full - 1
            down_full[:, j] = keys_full[:, j] + d
            up[:, j] = _rows_lookup(keys, up_full[:, :d])
            down[:, j] = _rows_lookup(keys, down_full[:, :d])
        neighbors = np.empty((m, 2 * (d + 1)), dtype=np.int64)
        neighbors[:, 0::2] = up
        neighbors[:, 1::2] = down

        return cls(offsets, bary, neighbors, keys, d)

    # -- pipeline stages ----------------------------------------------------

    def splat(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != self.n_points:
            raise ValueError(
                f"values must be (n_points={self.n_points}, C), got {values.shape}"
            )
        return self._splat_matrix.T @ values

    def blur(self, lattice_values: np.ndarray, reversed_order: bool = False) -> np.ndarray:
        lv = np.asarray(lattice_values, dtype=np.float64)
        if lv.ndim != 2 or lv.shape[0] != self.n_lattice_points:
            raise ValueError(
                f"lattice values must be (n_lattice_points={self.n_lattice_points}, C), "
                f"got {lv.shape}"
            )
        d = self.dim
        axes = range(d, -1, -1) if reversed_order else range(d + 1)
        out = lv.copy()
        zero_row = np.zeros((1, out.shape[1]))
        for j in axes:
            up = self.neighbors[:, 2 * j]
            dn = self.neighbors[:, 2 * j + 1]
            padded = np.concatenate([out, zero_row], axis=0)  # index -1 -> 0
            out = out + 0.5 * (padded[up] + padded[dn])
        return out

    def slice(self, lattice_values: np.ndarray) -> np.ndarray:
        lv = np.asarray(lattice_values, dtype=np.float64)
        if lv.ndim != 2 or lv.shape[0] != self.n_lattice_points:
            raise ValueError(
                f"lattice values must be (n_lattice_points={self.n_lattice_points}, C), "
                f"got {lv.shape}"
            )
        return self._splat_matrix @ lv

    def _raw_filter(self, values: np.ndarray, adjoint: bool) -> np.ndarray:
        return self.slice(self.blur(self.splat(values), reversed_order=adjoint))

    # -- normalization ------------------------------------------------------

    @property
    def norm(self) -> np.ndarray:
        """Row sums D of the raw pipeline, cached: D = filter(1)."""
        if self._norm is None:
            ones = np.ones((self.n_points, 1))
            self._norm = self._raw_filter(ones, adjoint=False)[:, 0]
        return self._norm

    def filter(
        self,
        values: np.ndarray,
        adjoint: bool = False,
        normalization: str = "symmetric",
    ) -> np.ndarray:
        """Approximate Gaussian filtering of per-point values.

        With symmetric normalization the operator is
        D^(-1/2) K D^(-1/2) where K is the raw splat/blur/slice pipeline and
        D = diag(K 1); its adjoint reverses only the blur axis order.
        """
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            raise ValueError("values must be 2-d (n_points x channels)")
        if values.shape[0] != self.n_points:
            raise ValueError(
                f"values row count {values.shape[0]} != n_points {self.n_points}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("filter input contains non-finite entries")
        if normalization == "none":
            return self._raw_filter(values, adjoint)
        if normalization == "symmetric":
            dinv_sqrt = 1.0 / np.sqrt(self.norm)
            out = self._raw_filter(values * dinv_sqrt[:, None], adjoint)
            return out * dinv_sqrt[:, None]
        raise ValueError(f"unknown normalization {normalization!r}")

    # -- self coefficient ---------------------------------------------------

    def self_coefficients(self, normalization: str = "symmetric") -> np.ndarray:
        """Per-point diagonal of the filter operator, K_ii (or its
        symmetric-normalized form K_ii / D_i).

        Small instances get the exact diagonal by pushing blocks of
        one-hot columns through the pipeline.  Larger ones use the interior
        closed form: within a simplex, vertices adjacent in remainder order
        are axis neighbors, so the blur weight between slot a and slot b is
        2^-|a-b| + 2^-(d+1-|a-b|) away from the lattice boundary.
        """
        if self._self_coeff is None:
            if self.n_points <= _EXACT_DIAG_MAX_POINTS:
                self._self_coeff = self._exact_diagonal()
            else:
                self._self_coeff = self._interior_diagonal()
        diag = self._self_coeff
        if normalization == "none":
            return diag
        if normalization == "symmetric":
            return diag / self.norm
        raise ValueError(f"unknown normalization {normalization!r}")

    def _exact_diagonal(self, block: int = 512) -> np.ndarray:
        n = self.n_points
        diag = np.empty(n, dtype=np.float64)
        for start in range(0, n, block):
            stop = min(start + block, n)
            eye = np.zeros((n, stop - start))
            eye[np.arange(start, stop), np.arange(stop - start)] = 1.0
            filtered = self._raw_filter(eye, adjoint=False)
            diag[start:stop] = filtered[np.arange(start, stop), np.arange(stop - start)]
        return diag

    def _interior_diagonal(self) -> np.ndarray:
        d = self.dim
        delta = np.abs(np.arange(d + 1)[:, None] - np.arange(d + 1)[None, :])
        coef = 2.0 ** (-delta.astype(np.float64)) + 2.0 ** (-(d + 1 - delta.astype(np.float64)))
        coef[delta == 0] = 1.0 + 2.0 ** (-d)
        w = self.barycentric
        return np.einsum("ia,ib,ab->i", w, w, coef)


def build_lattice(features: np.ndarray) -> PermutohedralLattice:
    """Build the filtering lattice for the given (n_points x dim) features."""
    return PermutohedralLattice.build(features)
