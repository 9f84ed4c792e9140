"""Projection head and self-expressive module.

The projection head stands in for a fine-tuned sentence encoder:
``Z = relu(U W1 + b1) W2 + b2`` over frozen input embeddings, or the
identity when no head is configured. The self-expressive module maps
``Z`` to queries and keys, forms the batch affinity ``A = (Z Wq)(Z Wk)^T``
with its diagonal masked out, and builds virtual samples ``V = A Z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tape, Var

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wq", "Wk")
QK_INIT_SCALE = 0.01


@dataclass
class ModelParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wq: np.ndarray
    Wk: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, T.as_matrix(value, name) if value.size else np.zeros((0, 0)))
        if self.identity:
            if any(getattr(self, n).size for n in ("b1", "W2", "b2")):
                raise ShapeError("identity projection must leave W1, b1, W2, b2 empty")
        else:
            d_in, d_h = self.W1.shape
            if self.b1.shape != (1, d_h) or self.W2.shape[0] != d_h:
                raise ShapeError(f"hidden layer mismatch: W1 {self.W1.shape}, b1 {self.b1.shape}, "
                                 f"W2 {self.W2.shape}")
            if self.b2.shape != (1, self.W2.shape[1]):
                raise ShapeError(f"b2 {self.b2.shape} does not match W2 {self.W2.shape}")
        if self.Wq.shape != self.Wk.shape or self.Wq.shape[1] < 1:
            raise ShapeError(f"Wq {self.Wq.shape} and Wk {self.Wk.shape} must share a shape")
        if not self.identity and self.Wq.shape[0] != self.d_z:
            raise ShapeError(f"Wq expects width {self.Wq.shape[0]}, head emits {self.d_z}")
        if self.Wq.shape[0] < 2:
            raise ShapeError("latent width must be at least 2")

    @property
    def identity(self) -> bool:
        return self.W1.size == 0

    @property
    def d_z(self) -> int:
        return self.Wq.shape[0] if self.identity else self.W2.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def trainable(self) -> dict[str, np.ndarray]:
        """Views of the arrays an optimizer should update (skips the empty identity head)."""
        return {k: v for k, v in self.as_dict().items() if v.size}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    @classmethod
    def from_dict(cls, tensors: dict[str, np.ndarray]) -> "ModelParams":
        missing = [n for n in PARAM_NAMES if n not in tensors]
        if missing:
            raise ContractError(f"checkpoint lacks tensors {missing}")
        return cls(**{n: np.asarray(tensors[n], dtype=np.float64) for n in PARAM_NAMES})


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(d_in: int, rng: np.random.Generator, d_hidden: int | None = None,
                d_z: int | None = None, d_a: int | None = None) -> ModelParams:
    """Xavier-uniform init. ``d_hidden=None`` selects the identity projection."""
    empty = np.zeros((0, 0))
    if d_hidden is None:
        W1 = b1 = W2 = b2 = empty
        d_z = d_in
    else:
        if d_z is None:
            raise ContractError("a two-layer head needs d_z")
        W1 = _xavier(rng, d_in, d_hidden)
        b1 = np.zeros((1, d_hidden))
        W2 = _xavier(rng, d_hidden, d_z)
        b2 = np.zeros((1, d_z))
    d_a = d_z if d_a is None else d_a
    Wq = QK_INIT_SCALE * _xavier(rng, d_z, d_a)
    Wk = QK_INIT_SCALE * _xavier(rng, d_z, d_a)
    return ModelParams(W1, b1, W2, b2, Wq, Wk)


def bind(tape: Tape, params: ModelParams) -> dict[str, Var]:
    """Register the parameters as named leaves on ``tape``."""
    return {name: tape.leaf(value, name) for name, value in params.trainable().items()}


def project(pv: dict[str, Var], U: Var) -> Var:
    if "W1" not in pv:
        return U
    if U.shape[1] != pv["W1"].shape[0]:
        raise ShapeError(f"project: input width {U.shape[1]} but W1 is {pv['W1'].shape}")
    hidden = T.relu(T.add_row(U @ pv["W1"], pv["b1"]))
    return T.add_row(hidden @ pv["W2"], pv["b2"])


def compute_affinity(pv: dict[str, Var], Z: Var) -> Var:
    n = Z.shape[0]
    if n < 2:
        raise ContractError(f"self-expression needs at least 2 samples, got {n}")
    if Z.shape[1] != pv["Wq"].shape[0]:
        raise ShapeError(f"compute_affinity: latent width {Z.shape[1]} but Wq is {pv['Wq'].shape}")
    Q = Z @ pv["Wq"]
    K = Z @ pv["Wk"]
    return T.masked_fill(Q @ K.T, ~np.eye(n, dtype=bool))


def generate_virtual(A: Var, Z: Var) -> Var:
    """Row j of the result is sum_i A[j, i] Z[i]."""
    if A.shape[0] != A.shape[1] or A.shape[0] != Z.shape[0]:
        raise ShapeError(f"generate_virtual: A {A.shape} vs Z {Z.shape}")
    if np.any(np.diag(A.value) != 0.0):
        raise ContractError("affinity diagonal must be exactly zero")
    return A @ Z


@dataclass
class BatchForward:
    tape: Tape
    params: dict[str, Var]
    Z: Var
    A: Var
    V: Var
    U: Var = field(repr=False, default=None)


def forward(params: ModelParams, U: np.ndarray, tape: Tape | None = None) -> BatchForward:
    tape = Tape() if tape is None else tape
    pv = bind(tape, params)
    Uv = tape.constant(U)
    Z = project(pv, Uv)
    A = compute_affinity(pv, Z)
    V = generate_virtual(A, Z)
    return BatchForward(tape, pv, Z, A, V, Uv)


def embed(params: ModelParams, U: np.ndarray) -> np.ndarray:
    """Latent representations for inference (no gradients needed)."""
    tape = Tape()
    return project(bind(tape, params), tape.constant(U)).value


def infer_affinity(params: ModelParams, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(Z, A) for a whole set of embeddings on a frozen model."""
    fw = forward(params, U)
    return fw.Z.value, fw.A.value
