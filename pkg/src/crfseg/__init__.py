"""Dense-CRF mean-field inference and learning for segmentation refinement.

The engine refines coarse per-pixel label scores (unaries) into sharp
label maps by iterating a fully connected CRF's mean-field update, with
Gaussian pairwise terms evaluated through a permutohedral lattice and all
stages differentiable for end-to-end parameter training.
"""

from .crf_rnn import RnnConfig, Tape, crf_rnn_backward, crf_rnn_forward
from .lattice import PermutohedralLattice, build_lattice
from .meanfield import (
    CrfParams,
    KernelSpec,
    build_kernel_features,
    build_lattices,
    init_softmax,
    mean_field_iteration,
    mean_field_iteration_backward,
)
from .metrics import mean_iu
from .synth import synth_dataset
from .training import Sample, TrainConfig, init_params, sgd_momentum_step, softmax_loss, train

__all__ = [
    "CrfParams",
    "KernelSpec",
    "PermutohedralLattice",
    "RnnConfig",
    "Sample",
    "Tape",
    "TrainConfig",
    "build_kernel_features",
    "build_lattice",
    "build_lattices",
    "crf_rnn_backward",
    "crf_rnn_forward",
    "init_params",
    "init_softmax",
    "mean_field_iteration",
    "mean_field_iteration_backward",
    "mean_iu",
    "sgd_momentum_step",
    "softmax_loss",
    "synth_dataset",
    "train",
]

__version__ = "0.1.0"
