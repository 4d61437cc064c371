"""Unrolled mean-field inference as a recurrence with backprop through time.

The forward pass initializes the marginals with a softmax over the unaries
and then applies the same mean-field update T times (shared parameters by
default).  A Tape records every iteration's intermediates so the backward
pass can walk the iterations in reverse, accumulating gradients for the
unaries and the CRF parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .meanfield import (
    CrfParams,
    StageCache,
    init_softmax,
    mean_field_iteration,
    mean_field_iteration_backward,
    softmax_backward,
)

__all__ = ["RnnConfig", "Tape", "crf_rnn_forward", "crf_rnn_backward"]


@dataclass(frozen=True)
class RnnConfig:
    t_train: int = 5
    t_infer: int = 10
    share_iteration_params: bool = True

    def __post_init__(self):
        if self.t_train < 1 or self.t_infer < 1:
            raise ValueError("iteration counts must be >= 1")


@dataclass
class Tape:
    """Cached state of one unrolled forward pass (immutable afterwards)."""

    Q0: np.ndarray
    caches: list[StageCache] = field(default_factory=list)
    params: object = None  # CrfParams, or list of CrfParams when unshared
    lattices: list = field(default_factory=list)

    @property
    def n_iterations(self) -> int:
        return len(self.caches)


def _params_for_iteration(params, t: int) -> CrfParams:
    if isinstance(params, CrfParams):
        return params
    return params[t]


def crf_rnn_forward(U, lattices, params, n_iterations: int, record: bool = True):
    """Run T mean-field updates from softmax(U); returns (Y, Tape).

    `params` is a single CrfParams (shared across iterations) or a list of
    per-iteration CrfParams.  With record=False no tape is kept (returns
    (Y, None)); use this for inference-only runs to keep memory flat.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    if not isinstance(params, CrfParams) and len(params) != n_iterations:
        raise ValueError("need one parameter set per iteration")
    U = np.asarray(U, dtype=np.float64)
    Q = init_softmax(U)
    tape = Tape(Q0=Q, params=params, lattices=lattices) if record else None
    for t in range(n_iterations):
        Q, cache = mean_field_iteration(U, Q, lattices, _params_for_iteration(params, t))
        if record:
            tape.caches.append(cache)
    return Q, tape


def iteration_deltas(U, lattices, params, n_iterations: int) -> np.ndarray:
    """Max per-entry |Q(t) - Q(t-1)| for t = 1..T; convergence diagnostic."""
    U = np.asarray(U, dtype=np.float64)
    Q = init_softmax(U)
    deltas = np.empty(n_iterations)
    for t in range(n_iterations):
        Q_next, _ = mean_field_iteration(U, Q, lattices, _params_for_iteration(params, t))
        deltas[t] = np.abs(Q_next - Q).max()
        Q = Q_next
    return deltas


def crf_rnn_backward(tape: Tape, dY):
    """Backprop through time over the tape; returns (dU, dParams).

    dParams mirrors the structure of the forward parameters: a single
    summed CrfParams gradient when parameters are shared, otherwise a list
    of per-iteration gradients.
    """
    if tape is None or not tape.caches:
        raise ValueError("tape does not hold a recorded forward pass")
    dY = np.asarray(dY, dtype=np.float64)
    shared = isinstance(tape.params, CrfParams)
    if shared:
        d_params = tape.params.zeros_like()
        per_iter = None
    else:
        per_iter = [p.zeros_like() for p in tape.params]
        d_params = None

    dU = np.zeros_like(dY)
    dQ = dY
    for t in range(len(tape.caches) - 1, -1, -1):
        dU_t, dQ, dW_t, dMu_t = mean_field_iteration_backward(tape.caches[t], dQ)
        dU += dU_t
        if shared:
            d_params.weights += dW_t
            d_params.compatibility += dMu_t
        else:
            per_iter[t].weights += dW_t
            per_iter[t].compatibility += dMu_t
    # initial softmax feeds from U as well
    dU += softmax_backward(tape.Q0, dQ)
    return dU, (d_params if shared else per_iter)
