"""Training objectives: affinity regularizer, cluster-wise contrastive loss
with adaptive temperature, reconstruction term and their weighted total."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Var

REG_KINDS = ("l1", "l2")


@dataclass
class LossConfig:
    t: float = 0.5
    lambda_cl: float = 1.0
    lambda_reg: float = 1e-2
    gamma_recon: float = 0.0
    reg_kind: str = "l2"
    sim_clamp_eps: float = 0.05
    adaptive_tau: bool = True

    def __post_init__(self):
        self.reg_kind = str(self.reg_kind).lower()
        if self.t <= 0:
            raise ContractError(f"initial temperature must be positive, got {self.t}")
        if min(self.lambda_cl, self.lambda_reg, self.gamma_recon) < 0:
            raise ContractError("loss weights must be non-negative")
        if self.reg_kind not in REG_KINDS:
            raise ContractError(f"reg_kind must be one of {REG_KINDS}, got {self.reg_kind!r}")
        if not 0 < self.sim_clamp_eps <= 1:
            raise ContractError(f"sim_clamp_eps must lie in (0, 1], got {self.sim_clamp_eps}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    contrastive: float
    regularization: float
    reconstruction: float
    total: float
    tau_used: float
    avg_pos_sim: float


def regularization_loss(A: Var, kind: str = "l2") -> Var:
    """Sum of r(A_ij) over off-diagonal entries; r is |x| or x^2."""
    if np.any(np.diag(A.value) != 0.0):
        raise ContractError("regularizer expects a zero-diagonal affinity")
    if kind == "l1":
        return T.total_sum(T.abs_(A))
    if kind == "l2":
        return T.total_sum(T.mul(A, A))
    raise ContractError(f"unknown regularizer {kind!r}")


def mean_positive_similarity(Z: np.ndarray, V: np.ndarray) -> float:
    return float(np.mean(np.diag(T.cosine_matrix(Z, V))))


def adaptive_tau(Z: np.ndarray, V: np.ndarray, t: float, clamp_eps: float = 0.05) -> float:
    """t divided by the mean positive cosine, clamped to [clamp_eps, 1].

    The result is a plain float: callers treat it as a constant in backward.
    """
    if Z.shape != V.shape:
        raise ContractError(f"Z {Z.shape} and V {V.shape} differ")
    if t <= 0:
        raise ContractError("t must be positive")
    s = min(max(mean_positive_similarity(Z, V), clamp_eps), 1.0)
    return t / s


def contrastive_terms(Z: Var, V: Var, tau: float) -> Var:
    """Per-sample loss column (N x 1).

    Anchor Z_i; positive V_i; negatives Z_j (j != i) and V_j (j != i).
    The denominator holds 2N - 1 terms.
    """
    n = Z.shape[0]
    if n < 2:
        raise ContractError(f"contrastive loss needs N >= 2, got {n}")
    if tau <= 0:
        raise ContractError(f"tau must be positive, got {tau}")
    if Z.shape != V.shape:
        raise ContractError(f"Z {Z.shape} and V {V.shape} differ")
    eye = np.eye(n, dtype=bool)
    s_zz = T.masked_fill(T.scale(T.row_cosine_matrix(Z, Z), 1.0 / tau), ~eye, -np.inf)
    s_zv = T.scale(T.row_cosine_matrix(Z, V), 1.0 / tau)
    shift = np.maximum(s_zz.value.max(axis=1, keepdims=True),
                       s_zv.value.max(axis=1, keepdims=True))
    denom = T.row_sum(T.exp(T.add_const(s_zz, -shift))) + T.row_sum(T.exp(T.add_const(s_zv, -shift)))
    lse = T.add_const(T.log(denom), shift)
    positive = T.row_sum(T.masked_fill(s_zv, eye))
    return lse - positive


def contrastive_loss(Z: Var, V: Var, tau: float) -> Var:
    return T.scale(T.total_sum(contrastive_terms(Z, V, tau)), 1.0 / Z.shape[0])


def reconstruction_loss(Z: Var, V: Var) -> Var:
    diff = Z - V
    return T.scale(T.total_sum(T.mul(diff, diff)), 0.5)


def total_loss(cfg: LossConfig, Z: Var, A: Var, V: Var,
               tau: float | None = None) -> tuple[Var, LossBreakdown]:
    """Weighted objective plus a float breakdown.

    ``tau`` overrides the temperature rule; gradient checks pass the value
    computed at the base point so that finite differences see it as constant.
    """
    pos = mean_positive_similarity(Z.value, V.value)
    if tau is None:
        tau = adaptive_tau(Z.value, V.value, cfg.t, cfg.sim_clamp_eps) if cfg.adaptive_tau else cfg.t
    con = contrastive_loss(Z, V, tau)
    reg = regularization_loss(A, cfg.reg_kind)
    rec = reconstruction_loss(Z, V)
    total = T.scale(con, cfg.lambda_cl) + T.scale(reg, cfg.lambda_reg) + T.scale(rec, cfg.gamma_recon)
    c, r, g = con.item(), reg.item(), rec.item()
    breakdown = LossBreakdown(
        contrastive=c,
        regularization=r,
        reconstruction=g,
        total=cfg.lambda_cl * c + cfg.lambda_reg * r + cfg.gamma_recon * g,
        tau_used=tau,
        avg_pos_sim=pos,
    )
    return total, breakdown
