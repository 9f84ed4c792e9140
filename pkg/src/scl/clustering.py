"""Spectral clustering on learned affinities and k-means on latents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError, ShapeError

SPECTRAL_MAX_N = 5000
JACOBI_MAX_SWEEPS = 50


@dataclass
class ClusterResult:
    labels: np.ndarray
    k: int
    method: str
    inertia: float = float("nan")
    eigenvalues: np.ndarray | None = None


def symmetrize(A: np.ndarray) -> np.ndarray:
    """(|A| + |A^T|) / 2 with a zero diagonal."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"symmetrize needs a square matrix, got {A.shape}")
    absA = np.abs(A)
    S = (absA + absA.T) / 2.0
    np.fill_diagonal(S, 0.0)
    return S


def normalized_laplacian(S: np.ndarray) -> np.ndarray:
    """I - D^-1/2 S D^-1/2; zero-degree vertices keep an identity row."""
    deg = S.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    pos = deg > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    L = np.eye(S.shape[0]) - inv_sqrt[:, None] * S * inv_sqrt[None, :]
    return (L + L.T) / 2.0


def _off_norm(a: np.ndarray) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def _round_robin(m: int):
    """m - 1 rounds of m/2 disjoint pairs covering every pair once (m even)."""
    players = list(range(m))
    for _ in range(m - 1):
        yield [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        players = [players[0], players[-1]] + players[1:-1]


def symmetric_eigendecomp(M: np.ndarray, max_n: int = SPECTRAL_MAX_N,
                          max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) by cyclic Jacobi.

    Each round of a sweep applies n/2 disjoint rotations at once, so one
    sweep is n - 1 vectorized row/column updates.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"eigendecomposition needs a square matrix, got {M.shape}")
    n = M.shape[0]
    if n > max_n:
        raise ContractError(f"n={n} exceeds the eigensolver cap {max_n}; subsample first")
    if n and np.max(np.abs(M - M.T)) >= 1e-10:
        raise ContractError("matrix is not symmetric")
    if n <= 1:
        return np.diag(M).copy(), np.eye(n)

    a = (M + M.T) / 2.0
    vecs = np.eye(n)
    scale = np.linalg.norm(a)
    m = n + (n % 2)
    schedule = [np.array([(p, q) for p, q in rnd if q < n and p < n]) for rnd in _round_robin(m)]
    schedule = [np.sort(s, axis=1) for s in schedule if len(s)]

    for _ in range(max_sweeps):
        off = _off_norm(a)
        if off <= 1e-14 * scale:
            break
        for pairs in schedule:
            p, q = pairs[:, 0], pairs[:, 1]
            apq = a[p, q]
            live = np.abs(apq) > 1e-300
            if not np.any(live):
                continue
            p, q, apq = p[live], q[live], apq[live]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            big = np.abs(theta) > 1e150
            safe = np.where(big, 0.0, theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                         np.sign(safe) / (np.abs(safe) + np.sqrt(safe * safe + 1.0)))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rp, rq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * rp - s[:, None] * rq, s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p], a[:, q]
            a[:, p], a[:, q] = cp * c - cq * s, cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = vecs[:, p], vecs[:, q]
            vecs[:, p], vecs[:, q] = vp * c - vq * s, vp * s + vq * c
    else:
        off = _off_norm(a)
        if off > 1e-12 * scale:
            raise NumericError(f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3e})")

    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def estimate_k_eigengap(eigenvalues: np.ndarray, k_max: int) -> int:
    """Number of eigenvalues below the widest gap among lambda_2..lambda_{k_max+1} (1-based).

    Ties go to the smaller k.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    if k_max < 2:
        raise ContractError(f"k_max must be at least 2, got {k_max}")
    if lam.size < k_max + 1:
        raise ContractError(f"need {k_max + 1} eigenvalues for k_max={k_max}, got {lam.size}")
    gaps = lam[2:k_max + 1] - lam[1:k_max]
    return int(np.argmax(gaps)) + 2


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    closest = _sq_dists(X, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(X, centers, max_iter, tol):
    prev_inertia = np.inf
    for _ in range(max_iter):
        d = _sq_dists(X, centers)
        labels = d.argmin(axis=1)
        point_cost = d[np.arange(len(X)), labels]
        inertia = float(point_cost.sum())
        assert inertia <= prev_inertia * (1 + 1e-9) + 1e-9, "k-means inertia increased"
        prev_inertia = inertia

        new = centers.copy()
        counts = np.bincount(labels, minlength=len(centers))
        for j in np.flatnonzero(counts):
            new[j] = X[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            far = np.argsort(-point_cost, kind="stable")
            for j, idx in zip(empty, far):
                new[j] = X[idx]
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol and not len(empty):
            break
    d = _sq_dists(X, centers)
    labels = d.argmin(axis=1)
    return labels, centers, float(d[np.arange(len(X)), labels].sum())


def _compact(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Renumber labels 0..k-1 by first appearance."""
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse], len(first)


def kmeans(X: np.ndarray, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300,
           tol: float = 1e-8) -> ClusterResult:
    """Best of ``n_init`` k-means++ seeded Lloyd runs; restart r uses seed + r."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise ContractError(f"k must be at least 1, got {k}")
    if k > n:
        raise ContractError(f"k={k} exceeds the number of points {n}")
    best = None
    for r in range(n_init):
        rng = np.random.default_rng(seed + r)
        labels, _, inertia = _lloyd(X, _kmeans_pp(X, k, rng), max_iter, tol)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    labels, k_found = _compact(best[0])
    return ClusterResult(labels=labels, k=k_found, method="kmeans", inertia=best[1])


def spectral_cluster(S: np.ndarray, k: int | None = None, seed: int = 0, k_max: int = 30,
                     max_n: int = SPECTRAL_MAX_N) -> ClusterResult:
    """Normalized spectral clustering; ``k=None`` picks k by the eigengap."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if not np.array_equal(S, S.T) or np.any(S < 0) or np.any(np.diag(S) != 0):
        raise ContractError("affinity must be symmetric, non-negative, zero-diagonal; call symmetrize()")
    vals, vecs = symmetric_eigendecomp(normalized_laplacian(S), max_n=max_n)
    if k is None:
        k = estimate_k_eigengap(vals, min(k_max, n - 1))
    if not 2 <= k <= n:
        raise ContractError(f"spectral clustering needs 2 <= k <= n, got k={k}, n={n}")
    emb = vecs[:, :k].copy()
    norms = np.linalg.norm(emb, axis=1)
    nz = norms > 0
    emb[nz] /= norms[nz, None]
    res = kmeans(emb, k, seed=seed)
    res.method = "spectral"
    res.eigenvalues = vals
    return res
