"""Loss, parameter initialization and SGD-with-momentum training of the
CRF parameters through the unrolled recurrence.

Only the kernel weights and the compatibility matrix are trained; the
unary provider is frozen input.  The unary gradient is still computed and
returned per step so an upstream model could consume it.

The default learning rate (1e-3) is tuned for the pixel-averaged loss used
here; much smaller rates are only needed when gradients are summed over
full images without normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crf_rnn import crf_rnn_forward, crf_rnn_backward
from .meanfield import CrfParams, KernelSpec, build_lattices
from .metrics import mean_iu

__all__ = [
    "TrainConfig",
    "Sample",
    "softmax_loss",
    "init_params",
    "sgd_momentum_step",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.99
    epochs: int = 50
    t_train: int = 5
    ignore_label: int = 255
    seed: int = 0
    grad_clip: float | None = None  # off by default

    def __post_init__(self):
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3, values in [0, 255]
    unary: np.ndarray  # (H*W) x L
    ground_truth: np.ndarray  # H x W int labels, ignore_label allowed
    lattices: list = field(default_factory=list, repr=False)  # built lazily


def softmax_loss(Y: np.ndarray, gt: np.ndarray, ignore_label: int = 255):
    """Mean negative log-likelihood over non-ignored pixels.

    Returns (loss, dY); dY is zero on ignored pixels.  Marginals are
    clamped at 1e-12 before the log.
    """
    Y = np.asarray(Y, dtype=np.float64)
    gt = np.asarray(gt).ravel()
    if gt.shape[0] != Y.shape[0]:
        raise ValueError("ground truth size does not match marginal field")
    valid = gt != ignore_label
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("all pixels carry the ignore label")
    idx = np.flatnonzero(valid)
    p = np.maximum(Y[idx, gt[idx]], 1e-12)
    loss = -np.log(p).sum() / n_valid
    dY = np.zeros_like(Y)
    dY[idx, gt[idx]] = -1.0 / (n_valid * p)
    return loss, dY


def init_params(n_labels: int, n_kernels: int, kernel_init) -> CrfParams:
    """Potts compatibility plus per-kernel weights shared across classes."""
    if n_labels < 2:
        raise ValueError("need at least two labels")
    kernel_init = np.asarray(kernel_init, dtype=np.float64)
    if kernel_init.shape != (n_kernels,):
        raise ValueError("need one initial weight per kernel")
    compatibility = 1.0 - np.eye(n_labels)
    weights = np.tile(kernel_init[None, :], (n_labels, 1))
    return CrfParams(weights=weights, compatibility=compatibility)


def sgd_momentum_step(
    params: CrfParams,
    grads: CrfParams,
    velocity: CrfParams,
    learning_rate: float,
    momentum: float,
) -> None:
    """Classical momentum update in place: v <- m v - lr g; theta <- theta + v."""
    for g in (grads.weights, grads.compatibility):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; aborting update")
    velocity.weights *= momentum
    velocity.weights -= learning_rate * grads.weights
    velocity.compatibility *= momentum
    velocity.compatibility -= learning_rate * grads.compatibility
    params.weights += velocity.weights
    params.compatibility += velocity.compatibility


def _sample_lattices(sample: Sample, kernels) -> list:
    if not sample.lattices:
        sample.lattices = build_lattices(sample.image, kernels)
    return sample.lattices


def train(dataset, config: TrainConfig, kernels, init: CrfParams | None = None):
    """Train weights and compatibility on the dataset, one sample per step.

    Returns (params, history); history rows are dicts with epoch, mean
    training loss and mean IU of the training predictions.  Deterministic
    for a fixed config and dataset (samples are visited in order).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    n_labels = dataset[0].unary.shape[1]
    for s in dataset:
        if s.unary.shape[1] != n_labels:
            raise ValueError("samples disagree on the number of labels")

    params = init.copy() if init is not None else init_params(
        n_labels, len(kernels), [3.0] * len(kernels)
    )
    velocity = params.zeros_like()
    history = []
    for epoch in range(config.epochs):
        losses = []
        ius = []
        for sample in dataset:
            lats = _sample_lattices(sample, kernels)
            Y, tape = crf_rnn_forward(sample.unary, lats, params, config.t_train)
            loss, dY = softmax_loss(Y, sample.ground_truth, config.ignore_label)
            _dU, d_params = crf_rnn_backward(tape, dY)
            if config.grad_clip is not None:
                np.clip(d_params.weights, -config.grad_clip, config.grad_clip,
                        out=d_params.weights)
                np.clip(d_params.compatibility, -config.grad_clip, config.grad_clip,
                        out=d_params.compatibility)
            sgd_momentum_step(params, d_params, velocity,
                              config.learning_rate, config.momentum)
            losses.append(loss)
            pred = np.argmax(Y, axis=1).reshape(sample.ground_truth.shape)
            _per_class, miu = mean_iu(pred, sample.ground_truth, n_labels,
                                      config.ignore_label)
            ius.append(miu)
        history.append(
            {"epoch": epoch, "loss": float(np.mean(losses)), "mean_iu": float(np.mean(ius))}
        )
    return params, history
