"""Finite-difference checks of the penalty and of full-loss gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import EncoderSpec, build_loss, init_model
from .penalty import ForwardTrace, deepcae_penalty, stacked_penalty
from .tensor import finite_diff_jacobian


def relative_error(a, b, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||)``, with a floor for all-zero pairs."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


@dataclass
class RandomEncoder:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def trace(self, X: np.ndarray) -> ForwardTrace:
        outs = [np.atleast_2d(X)]
        for W, b in zip(self.weights, self.biases):
            outs.append(np.tanh(outs[-1] @ W.T + b))
        return ForwardTrace(outs)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.trace(np.asarray(x).reshape(1, -1)).h


def random_encoder(rng: np.random.Generator, widths: list[int], scale: float = 0.6) -> RandomEncoder:
    Ws = [rng.normal(0, scale, size=(o, i)) for i, o in zip(widths, widths[1:])]
    bs = [rng.normal(0, 0.3, size=o) for o in widths[1:]]
    return RandomEncoder(Ws, bs)


def penalty_vs_fd(enc: RandomEncoder, X: np.ndarray, step: float = 1e-5) -> float:
    """Max relative error of per-sample penalties against numeric Jacobians."""
    pen = deepcae_penalty(enc.trace(X), enc.weights).per_sample
    fd = [np.sum(finite_diff_jacobian(enc, x, step) ** 2) for x in X]
    return max(relative_error(p, f) for p, f in zip(pen, fd))


def loss_gradient_vs_fd(model, X: np.ndarray, step: float = 1e-5) -> float:
    """Relative error of tape gradients of the total loss against central differences."""
    g = build_loss(model, X)
    grads = g.tape.backward(g.total)
    analytic = np.concatenate([grads[p].ravel() for p in g.params])
    params = [p.copy() for p in model.parameters()]
    flat = np.concatenate([p.ravel() for p in params])

    def total(v):
        probe = model.copy()
        out, off = [], 0
        for p in params:
            out.append(v[off:off + p.size].reshape(p.shape))
            off += p.size
        probe.set_parameters(out)
        return build_loss(probe, X).total.value[0, 0]

    numeric = np.empty_like(flat)
    for j in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[j] += step
        dn[j] -= step
        numeric[j] = (total(up) - total(dn)) / (2 * step)
    return relative_error(analytic, numeric)


@dataclass
class GradcheckReport:
    penalty_error: float
    gradient_error: float
    single_layer_gap: float | None
    tolerance: float
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return max(self.penalty_error, self.gradient_error) < self.tolerance and (
            self.single_layer_gap is None or self.single_layer_gap <= 1e-12)


def run_gradcheck(dims: int = 6, layers: int = 2, seed: int = 0, batch: int = 4, lam: float = 0.1,
                  tolerance: float = 1e-5, corrupt: float = 0.0) -> GradcheckReport:
    """Oracle suite for one random shape; ``corrupt`` scales the analytic
    penalty by ``1 + corrupt`` to prove the check can fail."""
    rng = np.random.default_rng(seed)
    spec = EncoderSpec(dims, 0.5, layers)
    enc = random_encoder(rng, spec.widths)
    X = rng.uniform(-1, 1, size=(batch, dims))
    pen = deepcae_penalty(enc.trace(X), enc.weights).per_sample * (1.0 + corrupt)
    fd = [np.sum(finite_diff_jacobian(enc, x, 1e-5) ** 2) for x in X]
    penalty_error = max(relative_error(p, f) for p, f in zip(pen, fd))

    model = init_model(spec, "deepcae", lam, seed)
    gradient_error = loss_gradient_vs_fd(model, X)

    gap = None
    notes = []
    if layers == 1:
        tr = enc.trace(X)
        gap = float(np.max(np.abs(deepcae_penalty(tr, enc.weights).per_sample
                                  - stacked_penalty(tr, enc.weights).per_sample)))
        notes.append(f"k=1: deepcae and stacked penalties agree (max gap {gap:.3e})")
    return GradcheckReport(penalty_error, gradient_error, gap, tolerance, notes)
