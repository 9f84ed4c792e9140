"""Mini-batch optimization of the weighted objective, plus a dropout-pair baseline."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data_io import atomic_write, write_checkpoint
from .errors import ContractError, NumericError
from .losses import LossConfig, contrastive_loss, mean_positive_similarity, total_loss
from .model import ModelParams, bind, forward, init_params, project
from .tensor import Adam, Tape

log = logging.getLogger(__name__)

MODES = ("scl", "dropout_baseline")
LOG_COLUMNS = ("epoch", "total_loss", "contrastive", "regularization", "tau", "avg_pos_sim")


@dataclass
class Projection:
    """``d_hidden=None`` means the identity map (no trainable head)."""

    d_hidden: int | None = None
    d_z: int | None = None

    @property
    def identity(self) -> bool:
        return self.d_hidden is None

    @classmethod
    def parse(cls, value) -> "Projection":
        if isinstance(value, Projection):
            return value
        if value is None or value == "identity" or value == {"kind": "identity"}:
            return cls(None, None)
        if isinstance(value, dict):
            kind = value.get("kind", "two_layer")
            if kind == "identity":
                return cls(None, None)
            if kind != "two_layer":
                raise ContractError(f"unknown projection kind {kind!r}")
            return cls(int(value["d_hidden"]), int(value["d_z"]))
        raise ContractError(f"cannot parse projection {value!r}")

    def to_json(self):
        if self.identity:
            return "identity"
        return {"kind": "two_layer", "d_hidden": self.d_hidden, "d_z": self.d_z}


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 256
    epochs: int = 200
    lr: float = 5e-5
    loss: LossConfig = field(default_factory=LossConfig)
    mode: str = "scl"
    dropout_rate: float = 0.3
    min_batch: int = 8
    projection: Projection = field(default_factory=Projection)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        self.projection = Projection.parse(self.projection)
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.batch_size >= self.min_batch >= 2:
            raise ContractError(f"need batch_size >= min_batch >= 2, got {self.batch_size}, {self.min_batch}")
        if not 0 <= self.dropout_rate < 1:
            raise ContractError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ContractError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ContractError(f"{path}: config must be a JSON object")
        try:
            return cls.from_dict(data)
        except TypeError as exc:
            raise ContractError(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["projection"] = self.projection.to_json()
        return d


@dataclass
class EpochStats:
    total_loss: float
    contrastive: float
    regularization: float
    tau: float
    avg_pos_sim: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: str | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for i, e in enumerate(self.epochs, start=1):
            w.writerow([i, repr(e.total_loss), repr(e.contrastive), repr(e.regularization),
                        repr(e.tau), repr(e.avg_pos_sim)])
        return buf.getvalue()


def make_batches(n: int, batch_size: int, rng: np.random.Generator, min_batch: int = 2) -> list[np.ndarray]:
    """Shuffle 0..n-1 into consecutive chunks; a trailing chunk below ``min_batch`` is dropped."""
    if min_batch < 2 or batch_size < min_batch:
        raise ContractError(f"need batch_size >= min_batch >= 2, got {batch_size}, {min_batch}")
    if n < min_batch:
        raise ContractError(f"{n} samples cannot fill a batch of at least {min_batch}")
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks[-1]) < min_batch:
        chunks.pop()
    return chunks


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0 <= rate < 1:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout_baseline_pair(pv: dict, U: np.ndarray, rate: float, rng: np.random.Generator):
    """Two dropout views of the same batch, both through the shared head."""
    m1 = dropout_mask(U.shape, rate, rng)
    m2 = dropout_mask(U.shape, rate, rng)
    tape = next(iter(pv.values())).tape
    Z1 = project(pv, tape.constant(U * m1))
    Z2 = project(pv, tape.constant(U * m2))
    return Z1, Z2


def _streams(seed: int):
    init_ss, batch_ss, drop_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(batch_ss),
            np.random.default_rng(drop_ss))


def initial_params(d_in: int, cfg: TrainConfig) -> ModelParams:
    init_rng, _, _ = _streams(cfg.seed)
    p = cfg.projection
    return init_params(d_in, init_rng, d_hidden=p.d_hidden, d_z=p.d_z)


def _scl_step(params: ModelParams, U: np.ndarray, cfg: TrainConfig):
    fw = forward(params, U)
    loss, parts = total_loss(cfg.loss, fw.Z, fw.A, fw.V)
    return fw.tape, loss, parts


def _baseline_step(params: ModelParams, U: np.ndarray, cfg: TrainConfig, rng):
    tape = Tape()
    pv = bind(tape, params)
    Z1, Z2 = dropout_baseline_pair(pv, U, cfg.dropout_rate, rng)
    tau = cfg.loss.t
    loss = contrastive_loss(Z1, Z2, tau)
    c = loss.item()
    parts = EpochStats(c, c, 0.0, tau, mean_positive_similarity(Z1.value, Z2.value))
    return tape, loss, parts


def train(U: np.ndarray, cfg: TrainConfig, checkpoint: str | Path | None = None,
          log_csv: str | Path | None = None) -> tuple[ModelParams, TrainReport]:
    U = T.as_matrix(U, "embeddings")
    n = U.shape[0]
    if n < cfg.min_batch:
        raise ContractError(f"{n} samples is fewer than min_batch={cfg.min_batch}")
    start = time.perf_counter()
    _, batch_rng, drop_rng = _streams(cfg.seed)
    params = initial_params(U.shape[1], cfg)
    opt = Adam(lr=cfg.lr)
    report = TrainReport()

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(5)
        batches = make_batches(n, cfg.batch_size, batch_rng, cfg.min_batch)
        for b, idx in enumerate(batches, start=1):
            Ub = U[idx]
            if cfg.mode == "scl":
                tape, loss, parts = _scl_step(params, Ub, cfg)
                row = (parts.total, parts.contrastive, parts.regularization, parts.tau_used,
                       parts.avg_pos_sim)
            else:
                tape, loss, parts = _baseline_step(params, Ub, cfg, drop_rng)
                row = (parts.total_loss, parts.contrastive, 0.0, parts.tau, parts.avg_pos_sim)
            if not np.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = tape.backward(loss)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericError(f"non-finite gradient at epoch {epoch}, batch {b}")
            opt.step(params.trainable(), grads)
            sums += row
        stats = EpochStats(*(float(x) for x in sums / len(batches)))
        report.epochs.append(stats)
        log.debug("epoch %d loss %.6f tau %.4f pos %.4f", epoch, stats.total_loss, stats.tau,
                  stats.avg_pos_sim)

    report.wall_time = time.perf_counter() - start
    if checkpoint is not None:
        write_checkpoint(checkpoint, params.as_dict())
        report.checkpoint = str(checkpoint)
    if log_csv is not None:
        atomic_write(log_csv, report.to_csv())
    return params, report
