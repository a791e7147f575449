"""Autoencoder variants, the layer-sizing rule and a linear PCA baseline."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .penalty import ForwardTrace, deepcae_penalty_tape, stacked_penalty_tape
from .tensor import ShapeError, Tape, VarRef

log = logging.getLogger(__name__)

VARIANTS = ("standard", "deepcae", "stacked_cae")
_ALIASES = {"stacked": "stacked_cae", "stackedcae": "stacked_cae", "standardae": "standard", "deep_cae": "deepcae"}
LAMBDA_FLOOR = 1e-8
MODEL_FORMAT_VERSION = 1


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def canonical_variant(name: str) -> str:
    key = name.lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return key


def effective_lambda(variant: str, lam: float, warn: bool = True) -> float:
    """Penalty weight actually used for ``variant``.

    Standard autoencoders ignore lambda. For contractive variants a positive
    lambda below the floor is raised to it; exactly 0 switches the penalty
    off, which makes every variant train identically to the standard one.
    """
    variant = canonical_variant(variant)
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be a finite non-negative number, got {lam}")
    if variant == "standard":
        return 0.0
    if 0.0 < lam < LAMBDA_FLOOR:
        if warn:
            log.warning("lambda %.3g is below the floor for %s; clamped to %.0e",
                        lam, variant, LAMBDA_FLOOR)
        return LAMBDA_FLOOR
    return float(lam)


@dataclass(frozen=True)
class EncoderSpec:
    input_dim: int
    compression_rate: float = 0.5
    num_layers: int = 1
    activation: str = "tanh"
    hidden: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not 0.0 < self.compression_rate <= 1.0:
            raise ValueError(f"compression_rate must be in (0, 1], got {self.compression_rate}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh activations are supported")
        if self.hidden is not None and len(self.hidden) != self.num_layers - 1:
            raise ValueError("hidden must list num_layers - 1 widths")
        widths = self.widths
        if any(b > a for a, b in zip(widths, widths[1:])):
            raise ValueError(f"layer widths must be non-increasing, got {widths}")

    @property
    def embedding_dim(self) -> int:
        return max(1, round_half_up(self.input_dim * self.compression_rate))

    @property
    def widths(self) -> list[int]:
        """Encoder widths ``[d_x, ..., d_h]``.

        Hidden widths interpolate linearly between input and embedding, so a
        two-layer encoder gets the average of the two.
        """
        d_x, d_h, k = self.input_dim, self.embedding_dim, self.num_layers
        if self.hidden is not None:
            return [d_x, *self.hidden, d_h]
        return [d_x] + [round_half_up(d_x + (d_h - d_x) * i / k) for i in range(1, k)] + [d_h]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "compression_rate": self.compression_rate,
                "num_layers": self.num_layers, "activation": self.activation,
                "hidden": list(self.hidden) if self.hidden is not None else None}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        hidden = d.get("hidden")
        return cls(int(d["input_dim"]), float(d["compression_rate"]), int(d["num_layers"]),
                   d.get("activation", "tanh"), tuple(hidden) if hidden is not None else None)


@dataclass
class LayerParams:
    W: np.ndarray
    b: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape


@dataclass
class AutoencoderModel:
    spec: EncoderSpec
    variant: str
    lam: float
    encoder: list[LayerParams]
    decoder: list[LayerParams]

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        self.lam = effective_lambda(self.variant, self.lam)
        widths = self.spec.widths
        expect = [(o, i) for i, o in zip(widths, widths[1:])]
        expect_dec = [(n_in, n_out) for n_out, n_in in reversed(expect)]
        if [l.W.shape for l in self.encoder] != expect or [l.W.shape for l in self.decoder] != expect_dec:
            raise ShapeError("layer shapes do not match the encoder spec")

    @property
    def layers(self) -> list[LayerParams]:
        return self.encoder + self.decoder

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        it = iter(params)
        for layer in self.layers:
            layer.W = np.array(next(it), dtype=np.float64)
            layer.b = np.array(next(it), dtype=np.float64)

    def copy(self) -> "AutoencoderModel":
        clone = lambda ls: [LayerParams(l.W.copy(), l.b.copy()) for l in ls]
        return AutoencoderModel(self.spec, self.variant, self.lam, clone(self.encoder), clone(self.decoder))


def _xavier(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_out, n_in))


def init_model(spec: EncoderSpec, variant: str = "deepcae", lam: float = 0.0, seed: int = 0) -> AutoencoderModel:
    """Xavier-uniform weights, zero biases; deterministic in ``seed``."""
    if spec.embedding_dim < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    widths = spec.widths
    pairs = list(zip(widths, widths[1:]))
    encoder = [LayerParams(_xavier(rng, o, i), np.zeros(o)) for i, o in pairs]
    decoder = [LayerParams(_xavier(rng, i, o), np.zeros(i)) for i, o in reversed(pairs)]
    return AutoencoderModel(spec, variant, lam, encoder, decoder)


def _check_input(model: AutoencoderModel, X) -> np.ndarray:
    X = T.as_matrix(X, "X")
    if X.shape[1] != model.spec.input_dim:
        raise ShapeError(f"input has {X.shape[1]} columns, model expects {model.spec.input_dim}")
    return X


def _forward(x: np.ndarray, layers: Sequence[LayerParams]) -> list[np.ndarray]:
    outs = [x]
    for layer in layers:
        x = np.tanh(x @ layer.W.T + layer.b)
        outs.append(x)
    return outs


def encode(model: AutoencoderModel, X) -> tuple[np.ndarray, ForwardTrace]:
    X = _check_input(model, X)
    outs = _forward(X, model.encoder)
    return outs[-1], ForwardTrace(outs)


def decode(model: AutoencoderModel, Z) -> np.ndarray:
    Z = T.as_matrix(Z, "Z")
    if Z.shape[1] != model.spec.embedding_dim:
        raise ShapeError(f"embedding has {Z.shape[1]} columns, model expects {model.spec.embedding_dim}")
    return _forward(Z, model.decoder)[-1]


def reconstruct(model: AutoencoderModel, X) -> np.ndarray:
    return decode(model, encode(model, X)[0])


@dataclass
class LossGraph:
    tape: Tape
    params: list[VarRef]
    total: VarRef
    recon: VarRef
    penalty: VarRef | None


def _tape_layer(x: VarRef, W: VarRef, b: VarRef) -> VarRef:
    pre = T.add(T.matmul(x, T.transpose(W)), T.tile_rows(b, x.shape[0]))
    return T.tanh(pre)


PENALTY_REDUCTIONS = ("mean", "sum")


def build_loss(model: AutoencoderModel, X: np.ndarray, penalty_reduction: str = "mean") -> LossGraph:
    """Record reconstruction MSE plus ``lam * penalty`` on a fresh tape.

    The penalty is the batch mean of the per-sample squared Jacobian norms, or
    their sum with ``penalty_reduction="sum"``. It is left off the tape entirely
    when the effective lambda is 0.
    """
    if penalty_reduction not in PENALTY_REDUCTIONS:
        raise ValueError(f"penalty_reduction must be one of {PENALTY_REDUCTIONS}")
    tape = Tape()
    x = tape.constant(X, "X")
    params = []
    xs, Ws = [x], []
    h = x
    for layer in model.encoder:
        W, b = tape.param(layer.W), tape.param(layer.b.reshape(1, -1))
        params += [W, b]
        Ws.append(W)
        h = _tape_layer(h, W, b)
        xs.append(h)
    out = h
    for layer in model.decoder:
        W, b = tape.param(layer.W), tape.param(layer.b.reshape(1, -1))
        params += [W, b]
        out = _tape_layer(out, W, b)
    recon = T.mse(out, x)
    penalty = None
    total = recon
    if model.lam > 0.0:
        if model.variant == "deepcae":
            penalty = deepcae_penalty_tape(xs, Ws)
        else:
            penalty = stacked_penalty_tape(xs, Ws)
        if penalty_reduction == "sum":
            penalty = T.scale(penalty, float(X.shape[0]))
        total = T.add(recon, T.scale(penalty, model.lam))
    return LossGraph(tape, params, total, recon, penalty)


def loss(model: AutoencoderModel, X) -> tuple[float, float, float]:
    """(total, reconstruction, penalty) on ``X``; penalty is 0 when switched off."""
    X = _check_input(model, X)
    g = build_loss(model, X)
    pen = 0.0 if g.penalty is None else float(g.penalty.value[0, 0])
    return float(g.total.value[0, 0]), float(g.recon.value[0, 0]), pen


# --- serialization ---------------------------------------------------------

def _pack(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _unpack(d: dict) -> np.ndarray:
    arr = np.array(d["data"], dtype=np.float64)
    shape = tuple(d["shape"])
    if arr.size != math.prod(shape):
        raise ValueError(f"declared shape {shape} does not match {arr.size} values")
    return arr.reshape(shape)


def model_to_dict(model: AutoencoderModel) -> dict:
    pack_layers = lambda ls: [{"W": _pack(l.W), "b": _pack(l.b)} for l in ls]
    return {
        "format": "deepcae-model",
        "format_version": MODEL_FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "variant": model.variant,
        "lambda": model.lam,
        "encoder": pack_layers(model.encoder),
        "decoder": pack_layers(model.decoder),
    }


def model_from_dict(d: dict) -> AutoencoderModel:
    if d.get("format") != "deepcae-model":
        raise ValueError("not a model file")
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')}")
    unpack_layers = lambda ls: [LayerParams(_unpack(l["W"]), _unpack(l["b"])) for l in ls]
    return AutoencoderModel(EncoderSpec.from_dict(d["spec"]), d["variant"], float(d["lambda"]),
                            unpack_layers(d["encoder"]), unpack_layers(d["decoder"]))


def dumps_model(model: AutoencoderModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def loads_model(text: str) -> AutoencoderModel:
    return model_from_dict(json.loads(text))


# --- PCA baseline ----------------------------------------------------------

@dataclass
class PcaBaseline:
    mean: np.ndarray
    axes: np.ndarray
    eigenvalues: np.ndarray = field(repr=False)
    degenerate: bool = False

    @property
    def m(self) -> int:
        return self.axes.shape[1]


def pca_fit(X, m: int) -> PcaBaseline:
    """Top-``m`` eigenvectors of the (1/n) covariance of ``X``.

    Each axis is signed so its largest-magnitude component is positive.
    ``degenerate`` is set when fewer than ``m`` directions carry variance; the
    remaining axes are then an arbitrary orthonormal completion.
    """
    X = T.as_matrix(X, "X")
    d = X.shape[1]
    if not 1 <= m <= d:
        raise ValueError(f"number of components must be in [1, {d}], got {m}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / X.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    axes = evecs[:, :m].copy()
    pivot = np.argmax(np.abs(axes), axis=0)
    axes *= np.where(axes[pivot, np.arange(m)] < 0, -1.0, 1.0)
    tol = max(evals[0], 1.0) * d * np.finfo(float).eps
    degenerate = bool(np.sum(evals > tol) < m)
    return PcaBaseline(mean, axes, evals, degenerate)


def pca_encode(baseline: PcaBaseline, X) -> np.ndarray:
    X = T.as_matrix(X, "X")
    return (X - baseline.mean) @ baseline.axes


def pca_reconstruct(baseline: PcaBaseline, X) -> np.ndarray:
    return pca_encode(baseline, X) @ baseline.axes.T + baseline.mean
