"""Contractive penalties for tanh encoders.

A k-layer encoder maps ``x_0`` through ``x_i = tanh(W_i x_{i-1} + b_i)``.
Its Jacobian is the product ``D_k W_k ... D_1 W_1`` with
``D_i = diag(1 - x_i**2)``; biases never appear.

The batched on-tape form stacks the *transposed* per-sample Jacobians
vertically, giving a ``(batch * d_x, d_i)`` matrix. One chain step is then
an ordinary matmul by ``W_i.T`` followed by an elementwise product with
``1 - x_i**2`` repeated ``d_x`` times per sample. Cost per sample is
``O(d_x * d_{i-1} * d_i)`` per layer, against ``O(d_{i-1} * d_i)`` for the
stacked (per-layer) penalty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tape, VarRef


@dataclass
class ForwardTrace:
    """Post-activation outputs ``x_0 .. x_k``; ``x_0`` is the encoder input."""

    layer_outputs: list[np.ndarray]

    def __post_init__(self):
        self.layer_outputs = [T.as_matrix(x, f"x_{i}") for i, x in enumerate(self.layer_outputs)]
        batch = self.layer_outputs[0].shape[0]
        for i, x in enumerate(self.layer_outputs):
            if x.shape[0] != batch:
                raise ShapeError(f"trace x_{i} has {x.shape[0]} rows, expected {batch}")
            if i > 0 and np.any(np.abs(x) > 1.0):
                raise ValueError(f"trace x_{i} leaves the tanh range [-1, 1]")

    @property
    def k(self) -> int:
        return len(self.layer_outputs) - 1

    @property
    def batch_size(self) -> int:
        return self.layer_outputs[0].shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.layer_outputs[0]

    @property
    def h(self) -> np.ndarray:
        return self.layer_outputs[-1]


@dataclass(frozen=True)
class PenaltyValue:
    value: float
    per_sample: np.ndarray


def _penalty(per_sample: np.ndarray) -> PenaltyValue:
    per_sample = np.asarray(per_sample, dtype=np.float64).ravel()
    return PenaltyValue(float(np.mean(per_sample)), per_sample)


def _check_layer(h: np.ndarray, W: np.ndarray) -> None:
    if h.shape[1] != W.shape[0]:
        raise ShapeError(f"activation width {h.shape[1]} does not match W rows {W.shape[0]} (W is {W.shape})")


def single_layer_penalty_tanh(h, W) -> PenaltyValue:
    """Closed form ``sum_i (1 - h_i^2)^2 * sum_j W_ij^2`` per sample row of ``h``."""
    h, W = T.as_matrix(h, "h"), T.as_matrix(W, "W")
    _check_layer(h, W)
    if np.any(np.abs(h) > 1.0):
        raise ValueError("tanh activations must lie in [-1, 1]")
    return _penalty(((1.0 - h * h) ** 2) @ np.sum(W * W, axis=1))


def single_layer_penalty_sigmoid(h, W) -> PenaltyValue:
    """Sigmoid closed form ``sum_i (h_i (1 - h_i))^2 * sum_j W_ij^2``; reference only."""
    h, W = T.as_matrix(h, "h"), T.as_matrix(W, "W")
    _check_layer(h, W)
    if np.any(h < 0.0) or np.any(h > 1.0):
        raise ValueError("sigmoid activations must lie in [0, 1]")
    return _penalty(((h * (1.0 - h)) ** 2) @ np.sum(W * W, axis=1))


def layer_jacobian(x_k, W) -> np.ndarray:
    """Jacobian ``diag(1 - x_k^2) W`` of one tanh layer whose output is ``x_k``."""
    x_k, W = T.as_matrix(x_k, "x_k"), T.as_matrix(W, "W")
    if x_k.shape[0] != 1:
        raise ShapeError(f"layer_jacobian takes a single sample row, got {x_k.shape}")
    _check_layer(x_k, W)
    return (1.0 - x_k[0] ** 2)[:, None] * W


def _check_chain(trace: ForwardTrace, weights: Sequence[np.ndarray]) -> list[np.ndarray]:
    weights = [T.as_matrix(W, f"W_{i + 1}") for i, W in enumerate(weights)]
    if len(weights) != trace.k:
        raise ShapeError(f"trace has {trace.k} layers but {len(weights)} weight matrices were given")
    for i, W in enumerate(weights):
        d_in = trace.layer_outputs[i].shape[1]
        d_out = trace.layer_outputs[i + 1].shape[1]
        if W.shape != (d_out, d_in):
            raise ShapeError(f"W_{i + 1} has shape {W.shape}, expected {(d_out, d_in)}")
    return weights


def encoder_jacobian(trace: ForwardTrace, weights: Sequence[np.ndarray]) -> np.ndarray:
    """Full encoder Jacobian ``J_k ... J_1`` (d_h x d_x) for a single-sample trace."""
    weights = _check_chain(trace, weights)
    if trace.batch_size != 1:
        raise ShapeError("encoder_jacobian takes a single-sample trace")
    J = layer_jacobian(trace.layer_outputs[1], weights[0])
    for x_i, W in zip(trace.layer_outputs[2:], weights[1:]):
        J = layer_jacobian(x_i, W) @ J
    return J


def _one_minus_sq(x: VarRef) -> VarRef:
    return T.add_scalar(T.scale(T.square(x), -1.0), 1.0)


def jacobian_stack_tape(xs: Sequence[VarRef], weights: Sequence[VarRef]) -> VarRef:
    """Transposed per-sample encoder Jacobians stacked vertically.

    ``xs`` holds ``x_0 .. x_k`` (batch rows each) and ``weights`` holds
    ``W_1 .. W_k``. Rows ``b*d_x : (b+1)*d_x`` of the result equal
    ``J_f(x_b).T``.
    """
    batch, d_x = xs[0].shape
    stack = None
    for x_i, W in zip(xs[1:], weights):
        slope = T.repeat_rows(_one_minus_sq(x_i), d_x)
        step = T.tile_rows(T.transpose(W), batch) if stack is None else T.matmul(stack, T.transpose(W))
        stack = T.mul(step, slope)
    return stack


def deepcae_penalty_tape(xs: Sequence[VarRef], weights: Sequence[VarRef]) -> VarRef:
    """Batch mean of ``||J_f(x)||_F^2`` as a differentiable 1x1 node."""
    batch = xs[0].shape[0]
    return T.scale(T.frobenius_sq(jacobian_stack_tape(xs, weights)), 1.0 / batch)


def stacked_per_sample_tape(xs: Sequence[VarRef], weights: Sequence[VarRef]) -> VarRef:
    """Column of per-sample sums of single-layer penalties (batch x 1)."""
    total = None
    for x_prev, x_i, W in zip(xs[:-1], xs[1:], weights):
        ones = x_prev.tape.constant(np.ones((x_prev.shape[1], 1)))
        row_norms = T.matmul(T.square(W), ones)
        term = T.matmul(T.square(_one_minus_sq(x_i)), row_norms)
        total = term if total is None else T.add(total, term)
    return total


def stacked_penalty_tape(xs: Sequence[VarRef], weights: Sequence[VarRef]) -> VarRef:
    batch = xs[0].shape[0]
    return T.scale(T.sum_all(stacked_per_sample_tape(xs, weights)), 1.0 / batch)


def _constants(trace: ForwardTrace, weights):
    tape = Tape()
    xs = [tape.constant(x) for x in trace.layer_outputs]
    Ws = [tape.constant(W) for W in weights]
    return xs, Ws


def deepcae_penalty(trace: ForwardTrace, weights: Sequence[np.ndarray]) -> PenaltyValue:
    """Squared Frobenius norm of the whole-encoder Jacobian, per sample and batch mean."""
    weights = _check_chain(trace, weights)
    xs, Ws = _constants(trace, weights)
    stack = jacobian_stack_tape(xs, Ws).value
    d_x = trace.x.shape[1]
    per_sample = (stack * stack).reshape(trace.batch_size, d_x, -1).sum(axis=(1, 2))
    return _penalty(per_sample)


def stacked_penalty(trace: ForwardTrace, weights: Sequence[np.ndarray]) -> PenaltyValue:
    """Sum over layers of the single-layer tanh penalty, per sample and batch mean."""
    weights = _check_chain(trace, weights)
    xs, Ws = _constants(trace, weights)
    return _penalty(stacked_per_sample_tape(xs, Ws).value)


def contraction_ratio(encoder: Callable[[np.ndarray], np.ndarray], x, x_prime) -> float:
    """``||f(x) - f(x')|| / ||x - x'||`` for a pair of inputs of equal shape."""
    x, x_prime = T.as_matrix(x, "x"), T.as_matrix(x_prime, "x_prime")
    if x.shape != x_prime.shape:
        raise ShapeError(f"x {x.shape} and x_prime {x_prime.shape} differ in shape")
    dist = np.linalg.norm(x - x_prime)
    if dist == 0.0:
        raise ValueError("contraction ratio is undefined for identical inputs")
    return float(np.linalg.norm(np.asarray(encoder(x)) - np.asarray(encoder(x_prime))) / dist)
