"""Dense float64 matrices and a small define-by-run reverse-mode tape.

Values are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every
operation checks shapes explicitly; nothing broadcasts. A :class:`Tape`
records primitive operations in execution order, so backward is a single
reverse sweep over the node list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


def as_matrix(value, name: str = "value") -> np.ndarray:
    """Coerce ``value`` to a finite 2-D float64 array (copying)."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: matrix contains non-finite entries")
    return arr


@dataclass(frozen=True)
class VarRef:
    """Handle to one node on a tape."""

    tape: "Tape" = field(compare=False, repr=False)
    index: int
    shape: tuple[int, int]

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    def __matmul__(self, other: "VarRef") -> "VarRef":
        return matmul(self, other)

    def __add__(self, other: "VarRef") -> "VarRef":
        return add(self, other)

    def __sub__(self, other: "VarRef") -> "VarRef":
        return sub(self, other)

    def __mul__(self, other) -> "VarRef":
        if isinstance(other, VarRef):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "VarRef":
        return scale(self, -1.0)

    @property
    def T(self) -> "VarRef":
        return transpose(self)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray]]


class Tape:
    """Linear record of primitive ops; rebuilt for every mini-batch."""

    def __init__(self):
        self.ops: list[str] = []
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self._backward: list[BackwardFn | None] = []
        self.params: list[int] = []
        self.adjoints: list[np.ndarray | None] = []

    def __len__(self) -> int:
        return len(self.values)

    def _push(self, op: str, value: np.ndarray, parents: tuple[VarRef, ...] = (),
              backward: BackwardFn | None = None) -> VarRef:
        for p in parents:
            if p.tape is not self:
                raise ValueError(f"{op}: operand belongs to a different tape")
        value.setflags(write=False)
        idx = len(self.values)
        self.ops.append(op)
        self.values.append(value)
        self.parents.append(tuple(p.index for p in parents))
        self._backward.append(backward)
        return VarRef(self, idx, (value.shape[0], value.shape[1]))

    def constant(self, value, name: str = "constant") -> VarRef:
        return self._push("const", as_matrix(value, name))

    def param(self, value, name: str = "param") -> VarRef:
        ref = self._push("param", as_matrix(value, name))
        self.params.append(ref.index)
        return ref

    def ref(self, index: int) -> VarRef:
        v = self.values[index]
        return VarRef(self, index, (v.shape[0], v.shape[1]))

    def backward(self, loss: VarRef) -> dict[VarRef, np.ndarray]:
        """Reverse sweep from a 1x1 ``loss``; returns d(loss)/d(param) per param."""
        if loss.tape is not self:
            raise ValueError("loss belongs to a different tape")
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
        adj: list[np.ndarray | None] = [None] * len(self.values)
        adj[loss.index] = np.ones((1, 1))
        for i in range(loss.index, -1, -1):
            g = adj[i]
            fn = self._backward[i]
            if g is None or fn is None:
                continue
            for p, gp in zip(self.parents[i], fn(g)):
                if gp is None:
                    continue
                adj[p] = gp if adj[p] is None else adj[p] + gp
        for i, v in enumerate(self.values):
            if adj[i] is None:
                adj[i] = np.zeros_like(v)
        self.adjoints = adj
        return {self.ref(i): adj[i] for i in self.params}


def _check_same(op: str, a: VarRef, b: VarRef) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: VarRef, b: VarRef) -> VarRef:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return a.tape._push("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: VarRef, b: VarRef) -> VarRef:
    _check_same("add", a, b)
    return a.tape._push("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: VarRef, b: VarRef) -> VarRef:
    _check_same("sub", a, b)
    return a.tape._push("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: VarRef, c: float) -> VarRef:
    return a.tape._push("scale", c * a.value, (a,), lambda g: (c * g,))


def add_scalar(a: VarRef, c: float) -> VarRef:
    return a.tape._push("add_scalar", a.value + c, (a,), lambda g: (g,))


def mul(a: VarRef, b: VarRef) -> VarRef:
    """Elementwise (Hadamard) product of equal-shape matrices."""
    _check_same("mul", a, b)
    av, bv = a.value, b.value
    return a.tape._push("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def tanh(a: VarRef) -> VarRef:
    out = np.tanh(a.value)
    return a.tape._push("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def square(a: VarRef) -> VarRef:
    av = a.value
    return a.tape._push("square", av * av, (a,), lambda g: (2.0 * av * g,))


def transpose(a: VarRef) -> VarRef:
    return a.tape._push("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def diag_left_multiply(v: VarRef, a: VarRef) -> VarRef:
    """diag(v) @ a for a row or column vector ``v`` of length a.rows."""
    n = a.shape[0]
    if v.shape not in ((1, n), (n, 1)):
        raise ShapeError(f"diag_left_multiply: vector {v.shape} does not match {a.shape}")
    vs, av = v.value.reshape(n, 1), a.value

    def back(g):
        return ((g * av).sum(axis=1).reshape(v.shape), vs * g)

    return a.tape._push("diag_left_multiply", vs * av, (v, a), back)


def tile_rows(a: VarRef, n: int) -> VarRef:
    """Stack ``n`` copies of ``a`` vertically: shape (n*rows, cols)."""
    r, c = a.shape
    return a.tape._push("tile_rows", np.tile(a.value, (n, 1)), (a,),
                        lambda g: (g.reshape(n, r, c).sum(axis=0),))


def repeat_rows(a: VarRef, n: int) -> VarRef:
    """Repeat every row ``n`` times in place: shape (rows*n, cols)."""
    r, c = a.shape
    return a.tape._push("repeat_rows", np.repeat(a.value, n, axis=0), (a,),
                        lambda g: (g.reshape(r, n, c).sum(axis=1),))


def sum_all(a: VarRef) -> VarRef:
    shape = a.shape
    return a.tape._push("sum", np.array([[a.value.sum()]]), (a,),
                        lambda g: (np.full(shape, g[0, 0]),))


def frobenius_sq(a: VarRef) -> VarRef:
    av = a.value
    return a.tape._push("frobenius_sq", np.array([[np.sum(av * av)]]), (a,),
                        lambda g: (2.0 * g[0, 0] * av,))


def mse(a: VarRef, b: VarRef) -> VarRef:
    _check_same("mse", a, b)
    d = a.value - b.value
    n = d.size

    def back(g):
        ga = (2.0 * g[0, 0] / n) * d
        return (ga, -ga)

    return a.tape._push("mse", np.array([[np.sum(d * d) / n]]), (a, b), back)


def finite_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``, both treated as flat vectors.

    Entry (i, j) is ``(f(x + step*e_j) - f(x - step*e_j))_i / (2*step)``.
    ``x`` keeps its shape when passed to ``f``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.ravel()
    cols = []
    for j in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[j] += step
        xm[j] -= step
        fp = np.asarray(f(xp.reshape(x.shape)), dtype=np.float64).ravel()
        fm = np.asarray(f(xm.reshape(x.shape)), dtype=np.float64).ravel()
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"non-finite function output while perturbing coordinate {j}")
        cols.append((fp - fm) / (2.0 * step))
    return np.stack(cols, axis=1)
