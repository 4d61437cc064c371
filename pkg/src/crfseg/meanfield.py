"""One dense-CRF mean-field update as a stack of differentiable stages.

Stage order: message passing (Gaussian filtering of the current marginals,
excluding each pixel's own contribution), per-class weighting of the M
filter outputs, the label compatibility transform, subtraction from the
unaries, and a softmax renormalization.  Every stage has an explicit
backward counterpart; `mean_field_iteration_backward` chains them in
reverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import PermutohedralLattice, build_lattice

__all__ = [
    "KernelSpec",
    "CrfParams",
    "StageCache",
    "build_kernel_features",
    "build_lattices",
    "init_softmax",
    "softmax_backward",
    "message_passing",
    "message_passing_backward",
    "weight_filter_outputs",
    "weight_filter_outputs_backward",
    "compatibility_transform",
    "compatibility_transform_backward",
    "add_unary",
    "add_unary_backward",
    "normalize",
    "mean_field_iteration",
    "mean_field_iteration_backward",
]


@dataclass(frozen=True)
class KernelSpec:
    """Feature recipe for one pairwise Gaussian kernel.

    kind "spatial" uses pixel coordinates scaled by theta_gamma; kind
    "bilateral" uses coordinates scaled by theta_alpha plus RGB scaled by
    theta_beta.
    """

    kind: str
    theta_alpha: float = 80.0
    theta_beta: float = 13.0
    theta_gamma: float = 3.0

    def __post_init__(self):
        if self.kind not in ("spatial", "bilateral"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if min(self.theta_alpha, self.theta_beta, self.theta_gamma) <= 0:
            raise ValueError("kernel bandwidths must be positive")


@dataclass
class CrfParams:
    """Learnable CRF parameters: per-class kernel weights (L x M) and the
    label compatibility matrix (L x L, not assumed symmetric)."""

    weights: np.ndarray
    compatibility: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.compatibility = np.asarray(self.compatibility, dtype=np.float64)
        if self.weights.ndim != 2 or self.compatibility.ndim != 2:
            raise ValueError("weights and compatibility must be matrices")
        L = self.compatibility.shape[0]
        if self.compatibility.shape != (L, L):
            raise ValueError("compatibility must be square")
        if self.weights.shape[0] != L:
            raise ValueError("weights row count must equal number of labels")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.compatibility))):
            raise ValueError("parameters contain non-finite entries")

    @property
    def n_labels(self) -> int:
        return self.compatibility.shape[0]

    @property
    def n_kernels(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "CrfParams":
        return CrfParams(self.weights.copy(), self.compatibility.copy())

    def zeros_like(self) -> "CrfParams":
        return CrfParams(np.zeros_like(self.weights), np.zeros_like(self.compatibility))


def build_kernel_features(image: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Per-pixel feature rows for one kernel, row-major pixel order.

    Spatial: (x/theta_gamma, y/theta_gamma).  Bilateral: (x/theta_alpha,
    y/theta_alpha, r/theta_beta, g/theta_beta, b/theta_beta).  x is the
    column index, y the row index.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {image.shape}")
    if image.min() < 0 or image.max() > 255:
        raise ValueError("image channels must lie in [0, 255]")
    h, w = image.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.kind == "spatial":
        feats = np.stack([xs / spec.theta_gamma, ys / spec.theta_gamma], axis=-1)
        return feats.reshape(h * w, 2)
    feats = np.concatenate(
        [
            np.stack([xs / spec.theta_alpha, ys / spec.theta_alpha], axis=-1),
            image / spec.theta_beta,
        ],
        axis=-1,
    )
    return feats.reshape(h * w, 5)


def build_lattices(image: np.ndarray, specs) -> list[PermutohedralLattice]:
    """Build one filtering lattice per kernel spec for the given image."""
    return [build_lattice(build_kernel_features(image, spec)) for spec in specs]


def init_softmax(U: np.ndarray) -> np.ndarray:
    """Row-wise softmax of the negative unary energies (max-shifted)."""
    U = np.asarray(U, dtype=np.float64)
    if not np.all(np.isfinite(U)):
        raise ValueError("unary field contains non-finite entries")
    z = U - U.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(Q: np.ndarray, dQ: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of a row-wise softmax with output Q."""
    inner = np.sum(dQ * Q, axis=1, keepdims=True)
    return Q * (dQ - inner)


def message_passing(Q: np.ndarray, lattices) -> list[np.ndarray]:
    """Filter the marginals with each kernel, excluding the self term.

    Returns one raw field per kernel: G_m(Q) - s_m * Q, where G_m is the
    symmetric-normalized lattice filter and s_m its per-pixel diagonal.
    """
    Q = np.asarray(Q, dtype=np.float64)
    out = []
    for lat in lattices:
        if lat.n_points != Q.shape[0]:
            raise ValueError("lattice point count does not match marginal field")
        s = lat.self_coefficients("symmetric")
        out.append(lat.filter(Q, normalization="symmetric") - s[:, None] * Q)
    return out


def message_passing_backward(d_msgs, lattices) -> np.ndarray:
    """Accumulate dQ by sending each output gradient back through the same
    filter with the blur order reversed, minus the same self term."""
    dQ = None
    for dm, lat in zip(d_msgs, lattices):
        s = lat.self_coefficients("symmetric")
        contrib = lat.filter(dm, adjoint=True, normalization="symmetric") - s[:, None] * dm
        dQ = contrib if dQ is None else dQ + contrib
    return dQ


def weight_filter_outputs(msgs, weights: np.ndarray) -> np.ndarray:
    """Per-class weighted sum of the M filter outputs (1x1 convolution)."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(msgs) != weights.shape[1]:
        raise ValueError("number of messages does not match weight columns")
    out = np.zeros_like(msgs[0])
    for m, msg in enumerate(msgs):
        if msg.shape != out.shape:
            raise ValueError("message fields have inconsistent shapes")
        out += weights[None, :, m] * msg
    return out


def weight_filter_outputs_backward(d_out, msgs, weights):
    d_weights = np.stack([np.sum(d_out * msg, axis=0) for msg in msgs], axis=1)
    d_msgs = [weights[None, :, m] * d_out for m in range(weights.shape[1])]
    return d_msgs, d_weights


def compatibility_transform(Qc: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Per-pixel matrix-vector product with the compatibility matrix."""
    if Qc.shape[1] != mu.shape[1]:
        raise ValueError("field label count does not match compatibility matrix")
    return Qc @ mu.T


def compatibility_transform_backward(d_out, Qc, mu):
    d_mu = d_out.T @ Qc
    d_Qc = d_out @ mu
    return d_Qc, d_mu


def add_unary(U: np.ndarray, Qh: np.ndarray) -> np.ndarray:
    if U.shape != Qh.shape:
        raise ValueError("unary and pairwise fields differ in shape")
    return U - Qh


def add_unary_backward(d_out):
    return d_out, -d_out


def normalize(Qb: np.ndarray) -> np.ndarray:
    """Renormalize the combined field back to per-pixel distributions;
    identical contract to init_softmax."""
    return init_softmax(Qb)


@dataclass
class StageCache:
    """Intermediates of one forward iteration, retained for the backward."""

    Q_in: np.ndarray
    msgs: list = field(default_factory=list)
    Qc: np.ndarray | None = None
    Q_out: np.ndarray | None = None
    params: CrfParams | None = None
    lattices: list = field(default_factory=list)


def mean_field_iteration(U, Q_in, lattices, params: CrfParams):
    """One full update Q_out = normalize(U - mu . weighted(filtered(Q_in)))."""
    U = np.asarray(U, dtype=np.float64)
    Q_in = np.asarray(Q_in, dtype=np.float64)
    if U.shape != Q_in.shape:
        raise ValueError("unary and marginal fields differ in shape")
    msgs = message_passing(Q_in, lattices)
    Qc = weight_filter_outputs(msgs, params.weights)
    Qh = compatibility_transform(Qc, params.compatibility)
    Qb = add_unary(U, Qh)
    Q_out = normalize(Qb)
    cache = StageCache(Q_in=Q_in, msgs=msgs, Qc=Qc, Q_out=Q_out, params=params, lattices=lattices)
    return Q_out, cache


def mean_field_iteration_backward(cache: StageCache, dQ_out):
    """Chain the six stage backwards; returns (dU, dQ_in, dWeights, dMu)."""
    if cache.Q_out is None or cache.params is None:
        raise ValueError("cache does not hold a completed forward pass")
    dQ_out = np.asarray(dQ_out, dtype=np.float64)
    if dQ_out.shape != cache.Q_out.shape:
        raise ValueError("output gradient shape does not match cached forward")
    dQb = softmax_backward(cache.Q_out, dQ_out)
    dU, dQh = add_unary_backward(dQb)
    dQc, d_mu = compatibility_transform_backward(dQh, cache.Qc, cache.params.compatibility)
    d_msgs, d_weights = weight_filter_outputs_backward(dQc, cache.msgs, cache.params.weights)
    dQ_in = message_passing_backward(d_msgs, cache.lattices)
    return dU, dQ_in, d_weights, d_mu
