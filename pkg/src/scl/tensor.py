"""Dense float64 matrices with a small reverse-mode tape and an Adam optimizer.

Every value is a 2-D ``numpy.ndarray`` of dtype float64. Scalars are 1x1.
The op set is closed on purpose: matmul, transpose, add/sub, broadcast
row-add, constant add, scale, elementwise mul/exp/log/abs/relu, sum,
row-sum, masked fill and the row cosine matrix.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError, ShapeError

COSINE_EPS = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce external input to a finite 2-D float64 array (copy)."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D data, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        raise NumericError(f"{name}: non-finite value at {bad}")
    return arr


class Var:
    """A node on a tape: a value plus the rule that routes gradients to its parents."""

    __slots__ = ("tape", "id", "value", "parents", "vjp", "name")

    def __init__(self, tape: "Tape", value: np.ndarray, parents=(), vjp=None, name=None):
        self.tape = tape
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.name = name
        self.id = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self.name is not None

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 value, got {self.value.shape}")
        return float(self.value[0, 0])

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        label = self.name or f"#{self.id}"
        return f"Var({label}, shape={self.shape})"


class Tape:
    """Records operations in execution order; ``backward`` walks them in reverse."""

    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, value, name: str) -> Var:
        if any(n.name == name for n in self.nodes):
            raise ContractError(f"duplicate leaf name {name!r}")
        return Var(self, as_matrix(value, name), name=name)

    def constant(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=np.float64).reshape(np.shape(value) or (1, 1)))

    def leaves(self) -> list[Var]:
        return [n for n in self.nodes if n.is_leaf]

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradient of a 1x1 node with respect to every named leaf.

        Leaves that do not reach ``loss`` get zero arrays. The tape is not
        modified, so calling this twice gives identical results.
        """
        if loss.tape is not self:
            raise ContractError("loss node belongs to another tape")
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.id] = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads[node.id]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                if grads[parent.id] is None:
                    grads[parent.id] = pg.copy()
                else:
                    grads[parent.id] += pg
        return {
            n.name: (grads[n.id] if grads[n.id] is not None else np.zeros_like(n.value))
            for n in self.leaves()
        }


def _lift(x, like: Var) -> Var:
    if isinstance(x, Var):
        if x.tape is not like.tape:
            raise ContractError("operands live on different tapes")
        return x
    return like.tape.constant(np.asarray(x, dtype=np.float64))


def _same_shape(op: str, a: Var, b: Var):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: Var, b: Var) -> Var:
    b = _lift(b, a)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return Var(a.tape, av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Var) -> Var:
    return Var(a.tape, a.value.T.copy(), (a,), lambda g: (g.T,))


def add(a: Var, b: Var) -> Var:
    b = _lift(b, a)
    _same_shape("add", a, b)
    return Var(a.tape, a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    b = _lift(b, a)
    _same_shape("sub", a, b)
    return Var(a.tape, a.value - b.value, (a, b), lambda g: (g, -g))


def add_row(a: Var, row: Var) -> Var:
    """Add a 1xd row to every row of an nxd matrix (bias broadcast)."""
    row = _lift(row, a)
    if row.shape != (1, a.shape[1]):
        raise ShapeError(f"add_row: row {row.shape} does not broadcast over {a.shape}")
    return Var(a.tape, a.value + row.value, (a, row),
               lambda g: (g, g.sum(axis=0, keepdims=True)))


def add_const(a: Var, c) -> Var:
    """Add a constant (no gradient), broadcasting like numpy."""
    c = np.asarray(c, dtype=np.float64)
    out = a.value + c
    if out.shape != a.shape:
        raise ShapeError(f"add_const: {c.shape} changes the shape of {a.shape}")
    return Var(a.tape, out, (a,), lambda g: (g,))


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return Var(a.tape, a.value * c, (a,), lambda g: (g * c,))


def mul(a: Var, b: Var) -> Var:
    b = _lift(b, a)
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return Var(a.tape, av * bv, (a, b), lambda g: (g * bv, g * av))


def relu(a: Var) -> Var:
    on = a.value > 0
    return Var(a.tape, np.where(on, a.value, 0.0), (a,), lambda g: (g * on,))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return Var(a.tape, out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.value
    if np.any(av <= 0):
        raise NumericError("log of a non-positive value")
    return Var(a.tape, np.log(av), (a,), lambda g: (g / av,))


def abs_(a: Var) -> Var:
    sign = np.sign(a.value)
    return Var(a.tape, np.abs(a.value), (a,), lambda g: (g * sign,))


def total_sum(a: Var) -> Var:
    shape = a.shape
    return Var(a.tape, np.array([[a.value.sum()]]), (a,),
               lambda g: (np.full(shape, g[0, 0]),))


def row_sum(a: Var) -> Var:
    n = a.shape[1]
    return Var(a.tape, a.value.sum(axis=1, keepdims=True), (a,),
               lambda g: (np.repeat(g, n, axis=1),))


def masked_fill(a: Var, keep: np.ndarray, fill: float = 0.0) -> Var:
    """Entries where ``keep`` is False become ``fill`` and pass no gradient."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != a.shape:
        raise ShapeError(f"masked_fill: mask {keep.shape} vs value {a.shape}")
    return Var(a.tape, np.where(keep, a.value, fill), (a,),
               lambda g: (np.where(keep, g, 0.0),))


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    ok = norms >= COSINE_EPS
    safe = np.where(ok, norms, 1.0)
    unit = np.where(ok[:, None], x / safe[:, None], 0.0)
    return unit, safe, ok


def cosine_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Plain-array cosine similarity between the rows of x and y."""
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"cosine: row widths {x.shape[1]} and {y.shape[1]} differ")
    xu, _, _ = _unit_rows(x)
    yu, _, _ = _unit_rows(y)
    return xu @ yu.T


def row_cosine_matrix(x: Var, y: Var) -> Var:
    """S[i, j] = cos(x_i, y_j); a row with norm below 1e-12 yields zeros and no gradient."""
    y = _lift(y, x)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"row_cosine_matrix: {x.shape} vs {y.shape}")
    xu, xn, xok = _unit_rows(x.value)
    yu, yn, yok = _unit_rows(y.value)

    def vjp(g):
        gx = g @ yu
        gy = g.T @ xu
        # d(unit)/dx projects out the radial component and divides by the norm
        gx = (gx - np.einsum("ij,ij->i", gx, xu)[:, None] * xu) / xn[:, None]
        gy = (gy - np.einsum("ij,ij->i", gy, yu)[:, None] * yu) / yn[:, None]
        return gx * xok[:, None], gy * yok[:, None]

    return Var(x.tape, xu @ yu.T, (x, y), vjp)


class Adam:
    """Adam with bias correction over a dict of named parameter arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if lr <= 0:
            raise ContractError(f"lr must be positive, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ContractError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Update ``params`` in place and return it."""
        for name, p in params.items():
            if grads[name].shape != p.shape:
                raise ShapeError(f"adam: grad {grads[name].shape} vs param {p.shape} for {name!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def adam_step(state: Adam, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Single-tensor convenience wrapper around :meth:`Adam.step`."""
    return state.step({"p": params}, {"p": grads})["p"]

