"""File formats (embeddings, checkpoints, labels, CSV exports) and the
synthetic union-of-subspaces generator.

Binary layouts are little-endian:

embeddings  b"SCLE" | u32 version=1 | u8 dtype (0=f32, 1=f64) | u64 n | u64 d | n*d values
checkpoint  b"SCLM" | u32 version=1 | u32 count | count x (u32 len | utf-8 name | u64 rows | u64 cols | f64 values)
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

EMB_MAGIC = b"SCLE"
CKPT_MAGIC = b"SCLM"
VERSION = 1
_EMB_HEADER = struct.Struct("<4sIBQQ")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc


def write_embeddings(path, X: np.ndarray, dtype: int = 1) -> None:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"embeddings must be 2-D, got shape {X.shape}")
    if dtype not in _DTYPES:
        raise ContractError(f"dtype code must be 0 (f32) or 1 (f64), got {dtype}")
    if not np.all(np.isfinite(X)):
        raise ContractError("refusing to write non-finite embeddings")
    header = _EMB_HEADER.pack(EMB_MAGIC, VERSION, dtype, X.shape[0], X.shape[1])
    atomic_write(path, header + X.astype(_DTYPES[dtype]).tobytes())


def _check_finite(X: np.ndarray, path, offset: int, itemsize: int) -> None:
    bad = np.flatnonzero(~np.isfinite(X.ravel()))
    if bad.size:
        raise FormatError(f"{path}: non-finite value at byte offset {offset + int(bad[0]) * itemsize}")


def read_embeddings(path) -> np.ndarray:
    """Load an embedding matrix as float64. ``.csv`` files are parsed as text."""
    if str(path).lower().endswith(".csv"):
        return read_csv_matrix(path)
    raw = _read_bytes(path)
    if len(raw) < _EMB_HEADER.size:
        raise FormatError(f"{path}: header needs {_EMB_HEADER.size} bytes, file has {len(raw)}")
    magic, version, code, n, d = _EMB_HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    expected = _EMB_HEADER.size + n * d * dt.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n}x{d} {dt.name}, got {len(raw)}")
    X = np.frombuffer(raw, dtype=dt, offset=_EMB_HEADER.size, count=n * d).reshape(n, d)
    _check_finite(X, path, _EMB_HEADER.size, dt.itemsize)
    return X.astype(np.float64)


def read_csv_matrix(path) -> np.ndarray:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if not all(np.isfinite(row)):
            raise FormatError(f"{path}:{lineno}: non-finite value")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        rows.append(row)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    parts = [CKPT_MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 1:
            value = value.reshape(1, -1)
        if not np.all(np.isfinite(value)):
            raise ContractError(f"tensor {name!r} has non-finite values")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<QQ", *value.shape))
        parts.append(value.astype("<f8").tobytes())
    atomic_write(path, b"".join(parts))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    raw = _read_bytes(path)
    if len(raw) < 12:
        raise FormatError(f"{path}: header needs 12 bytes, file has {len(raw)}")
    if raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {CKPT_MAGIC!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 12
    tensors: dict[str, np.ndarray] = {}

    def take(size: int) -> bytes:
        nonlocal pos
        if pos + size > len(raw):
            raise FormatError(f"{path}: truncated at byte {pos}, needed {size} more bytes, "
                              f"file has {len(raw)}")
        chunk = raw[pos:pos + size]
        pos += size
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: tensor name at byte {pos - name_len} is not UTF-8") from None
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        rows, cols = struct.unpack("<QQ", take(16))
        start = pos
        values = np.frombuffer(take(rows * cols * 8), dtype="<f8").reshape(rows, cols)
        _check_finite(values, path, start, 8)
        tensors[name] = values.astype(np.float64)
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes after {count} tensors")
    return tensors


def read_labels(path) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror or exc}") from exc
    lines = text.split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    labels = []
    for lineno, line in enumerate(lines, start=1):
        tok = line.strip()
        if not tok.isdigit():
            raise FormatError(f"{path}:{lineno}: expected a non-negative integer, got {line!r}")
        labels.append(int(tok))
    return np.array(labels, dtype=np.int64)


def write_labels(path, labels) -> None:
    atomic_write(path, "".join(f"{int(x)}\n" for x in labels))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, M: np.ndarray) -> None:
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ContractError("matrix has non-finite values")
    atomic_write(path, "".join(",".join(_fmt(v) for v in row) + "\n" for row in M))


export_affinity_csv = write_matrix_csv


def pca_2d(Z: np.ndarray) -> np.ndarray:
    """Scores on the top two principal axes of the centered covariance."""
    from .clustering import symmetric_eigendecomp

    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[1] < 2:
        raise ContractError("PCA scatter needs at least 2 columns")
    centered = Z - Z.mean(axis=0)
    cov = centered.T @ centered / max(len(Z) - 1, 1)
    _, vecs = symmetric_eigendecomp((cov + cov.T) / 2.0)
    return centered @ vecs[:, [-1, -2]]


def export_pca_scatter(Z: np.ndarray, labels, path) -> None:
    labels = np.asarray(labels)
    if len(labels) != len(Z):
        raise ContractError(f"{len(labels)} labels for {len(Z)} rows")
    scores = pca_2d(Z)
    body = "".join(f"{_fmt(a)},{_fmt(b)},{int(c)}\n" for (a, b), c in zip(scores, labels))
    atomic_write(path, "pc1,pc2,label\n" + body)


@dataclass
class SynthSpec:
    k: int = 3
    subspace_dim: int = 4
    ambient_dim: int = 32
    points_per_cluster: int = 100
    noise_sigma: float = 0.01
    seed: int = 7

    def __post_init__(self):
        if min(self.k, self.subspace_dim, self.ambient_dim, self.points_per_cluster) < 1:
            raise ContractError("SynthSpec counts must be at least 1")
        if self.subspace_dim >= self.ambient_dim:
            raise ContractError("subspace_dim must be smaller than ambient_dim")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be non-negative")


def gram_schmidt(G: np.ndarray) -> np.ndarray:
    """Orthonormalize columns (modified Gram-Schmidt, one re-orthogonalization pass)."""
    Q = np.array(G, dtype=np.float64)
    for j in range(Q.shape[1]):
        for _ in range(2):
            for i in range(j):
                Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
        norm = np.linalg.norm(Q[:, j])
        if norm < 1e-12:
            raise ContractError("Gaussian columns were numerically dependent")
        Q[:, j] /= norm
    return Q


def synth_subspace_dataset(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Points drawn from ``k`` random linear subspaces, block-ordered by cluster."""
    rng = np.random.default_rng(spec.seed)
    blocks = []
    for _ in range(spec.k):
        basis = gram_schmidt(rng.standard_normal((spec.ambient_dim, spec.subspace_dim)))
        coords = rng.standard_normal((spec.points_per_cluster, spec.subspace_dim))
        noise = rng.standard_normal((spec.points_per_cluster, spec.ambient_dim))
        blocks.append(coords @ basis.T + spec.noise_sigma * noise)
    X = np.vstack(blocks)
    labels = np.repeat(np.arange(spec.k), spec.points_per_cluster)
    return X, labels
