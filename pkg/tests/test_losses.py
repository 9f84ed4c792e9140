import math

import numpy as np
import pytest

from oracles import central_diff, naive_contrastive, rel_err
from scl import tensor as T
from scl.errors import ContractError
from scl.losses import (LossConfig, adaptive_tau, contrastive_loss, contrastive_terms,
                        reconstruction_loss, regularization_loss, total_loss)
from scl.tensor import Tape


_SHARED = Tape()


def _const(x):
    return _SHARED.constant(x)


def _zero_diag(rng, n):
    A = rng.standard_normal((n, n))
    np.fill_diagonal(A, 0.0)
    return A


@pytest.mark.parametrize("kind", ["l1", "l2"])
def test_regularization_of_zero(kind):
    assert regularization_loss(_const(np.zeros((4, 4))), kind).item() == 0.0


def test_regularization_pair():
    A = np.array([[0.0, 0.5], [0.5, 0.0]])
    assert regularization_loss(_const(A), "l2").item() == 0.5
    assert regularization_loss(_const(A), "l1").item() == 1.0


@pytest.mark.parametrize("kind", ["l1", "l2"])
def test_regularization_matches_loop_and_gradient(kind):
    rng = np.random.default_rng(11)
    A = _zero_diag(rng, 6)
    r = (lambda x: abs(x)) if kind == "l1" else (lambda x: x * x)
    expected = sum(r(A[i, j]) for i in range(6) for j in range(6) if i != j)
    assert regularization_loss(_const(A), kind).item() == pytest.approx(expected, rel=1e-12)

    tape = Tape()
    leaf = tape.leaf(A, "A")
    g = tape.backward(regularization_loss(T.masked_fill(leaf, ~np.eye(6, dtype=bool)), kind))["A"]

    def f(d):
        B = d["A"].copy()
        np.fill_diagonal(B, 0.0)
        return regularization_loss(_const(B), kind).item()

    assert rel_err(g, central_diff(f, {"A": A.copy()})["A"]) < 1e-5


def test_regularization_rejects_nonzero_diagonal():
    with pytest.raises(ContractError):
        regularization_loss(_const(np.eye(3)), "l2")


def test_tau_perfect_virtual_samples():
    Z = np.random.default_rng(0).standard_normal((5, 3))
    assert adaptive_tau(Z, Z.copy(), 0.5) == 0.5


def test_tau_direct_substitution():
    # each row pair has cosine 0.5, so the mean is 0.5
    Z = np.array([[1.0, 0.0], [0.0, 1.0]])
    V = np.array([[0.5, math.sqrt(3) / 2], [math.sqrt(3) / 2, 0.5]])
    assert adaptive_tau(Z, V, 0.1) == pytest.approx(0.2, abs=1e-15)


def test_tau_clamps_negative_similarity():
    c = -0.3
    Z = np.array([[1.0, 0.0]])
    V = np.array([[c, math.sqrt(1 - c * c)]])
    assert adaptive_tau(Z, V, 0.5, clamp_eps=0.05) == 0.5 / 0.05


def test_tau_bounds_and_monotonicity():
    rng = np.random.default_rng(12)
    t, eps = 0.3, 0.05
    for _ in range(200):
        Z, V = rng.standard_normal((2, 6, 4))
        tau = adaptive_tau(Z, V, t, eps)
        assert t <= tau <= t / eps
    # rotating V towards Z raises the mean cosine and must lower tau
    Z = rng.standard_normal((8, 4))
    noise = rng.standard_normal((8, 4))
    taus = [adaptive_tau(Z, Z + s * noise, t, eps) for s in (2.0, 1.0, 0.5, 0.25)]
    sims = [t / x for x in taus]
    assert all(eps < s < 1 for s in sims)
    assert all(a > b for a, b in zip(taus, taus[1:]))


@pytest.mark.parametrize("n", [2, 3, 7])
def test_contrastive_identical_rows(n):
    Z = np.tile([[0.3, -1.0, 2.0]], (n, 1))
    loss = contrastive_loss(_const(Z), _const(Z.copy()), 0.7).item()
    assert abs(loss - math.log(2 * n - 1)) < 1e-9


def test_contrastive_identical_rows_n3_value():
    Z = np.ones((3, 2))
    assert contrastive_loss(_const(Z), _const(Z), 1.0).item() == pytest.approx(1.6094379, abs=1e-7)


@pytest.mark.parametrize("n,tau", [(2, 1.0), (3, 0.5), (4, 0.2)])
def test_contrastive_orthogonal_closed_form(n, tau):
    Z = np.eye(n) * 2.0
    loss = contrastive_loss(_const(Z), _const(Z), tau).item()
    e = math.exp(1 / tau)
    assert abs(loss - -math.log(e / (e + 2 * n - 2))) < 1e-9


def test_contrastive_orthogonal_n2_value():
    Z = np.eye(2)
    assert contrastive_loss(_const(Z), _const(Z), 1.0).item() == pytest.approx(0.5514447, abs=1e-7)


def test_contrastive_matches_naive_loop():
    rng = np.random.default_rng(13)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        Z, V = rng.standard_normal((2, n, 5))
        tau = float(rng.uniform(0.02, 2.0))
        got = contrastive_loss(_const(Z), _const(V), tau).item()
        assert abs(got - naive_contrastive(Z.tolist(), V.tolist(), tau)) < 1e-10


def test_contrastive_gradient():
    rng = np.random.default_rng(14)
    Z0, V0 = rng.standard_normal((2, 5, 3))

    def build(d):
        tape = Tape()
        return tape, contrastive_loss(tape.leaf(d["Z"], "Z"), tape.leaf(d["V"], "V"), 0.4)

    tape, loss = build({"Z": Z0, "V": V0})
    g = tape.backward(loss)
    fd = central_diff(lambda d: build(d)[1].item(), {"Z": Z0.copy(), "V": V0.copy()})
    assert rel_err(g["Z"], fd["Z"]) < 1e-5
    assert rel_err(g["V"], fd["V"]) < 1e-5


def test_per_sample_terms_positive():
    rng = np.random.default_rng(15)
    for _ in range(50):
        Z, V = rng.standard_normal((2, 4, 3))
        terms = contrastive_terms(_const(Z), _const(V), float(rng.uniform(0.05, 1.0))).value
        assert np.all(terms > 0)


def test_contrastive_row_rescaling_invariance():
    rng = np.random.default_rng(16)
    Z, V = rng.standard_normal((2, 6, 4))
    base = contrastive_loss(_const(Z), _const(V), 0.3).item()
    scale_z = rng.uniform(0.1, 10, size=(6, 1))
    scale_v = rng.uniform(0.1, 10, size=(6, 1))
    scaled = contrastive_loss(_const(Z * scale_z), _const(V * scale_v), 0.3).item()
    assert abs(scaled - base) / abs(base) < 1e-10


def test_contrastive_needs_negatives():
    with pytest.raises(ContractError):
        contrastive_loss(_const(np.ones((1, 3))), _const(np.ones((1, 3))), 1.0)
    with pytest.raises(ContractError):
        contrastive_loss(_const(np.eye(2)), _const(np.eye(2)), 0.0)


def test_reconstruction_examples():
    Z = np.random.default_rng(0).standard_normal((3, 2))
    assert reconstruction_loss(_const(Z), _const(Z)).item() == 0.0
    assert reconstruction_loss(_const([[1.0, 0.0]]), _const([[0.0, 0.0]])).item() == 0.5


def test_reconstruction_matches_loop():
    rng = np.random.default_rng(17)
    Z, V = rng.standard_normal((2, 4, 3))
    expected = 0.5 * sum((Z[i, j] - V[i, j]) ** 2 for i in range(4) for j in range(3))
    assert reconstruction_loss(_const(Z), _const(V)).item() == pytest.approx(expected, rel=1e-12)


def _batch(seed, n=6, d=4):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, d))
    A = _zero_diag(rng, n) * 0.3
    return Z, A, A @ Z


def test_total_all_weights_zero():
    Z, A, V = _batch(0)
    tape = Tape()
    z, a = tape.leaf(Z, "Z"), tape.leaf(A, "A")
    cfg = LossConfig(lambda_cl=0.0, lambda_reg=0.0, gamma_recon=0.0)
    loss, parts = total_loss(cfg, z, T.masked_fill(a, ~np.eye(6, dtype=bool)), tape.constant(V))
    assert loss.item() == 0.0 and parts.total == 0.0
    for g in tape.backward(loss).values():
        assert not np.any(g)


def test_total_contrastive_only():
    Z, A, V = _batch(1)
    cfg = LossConfig(lambda_cl=1.0, lambda_reg=0.0, gamma_recon=0.0, adaptive_tau=False, t=0.4)
    loss, _ = total_loss(cfg, _const(Z), _const(A), _const(V))
    assert loss.item() == contrastive_loss(_const(Z), _const(V), 0.4).item()


@pytest.mark.parametrize("kind", ["l1", "l2"])
def test_total_decomposition(kind):
    Z, A, V = _batch(2)
    cfg = LossConfig(lambda_cl=1.0, lambda_reg=0.01, gamma_recon=0.1, reg_kind=kind)
    loss, parts = total_loss(cfg, _const(Z), _const(A), _const(V))
    tau = adaptive_tau(Z, V, cfg.t, cfg.sim_clamp_eps)
    c = naive_contrastive(Z.tolist(), V.tolist(), tau)
    r = float(np.abs(A).sum() if kind == "l1" else (A ** 2).sum())
    g = 0.5 * float(((Z - V) ** 2).sum())
    expected = c + 0.01 * r + 0.1 * g
    assert abs(loss.item() - expected) < 1e-12 * max(1.0, abs(expected)) + 1e-12
    assert abs(parts.total - (parts.contrastive + 0.01 * parts.regularization
                              + 0.1 * parts.reconstruction)) < 1e-12
    assert parts.tau_used == tau > 0


def test_loss_config_validation():
    with pytest.raises(ContractError):
        LossConfig(t=0.0)
    with pytest.raises(ContractError):
        LossConfig(lambda_reg=-1.0)
    with pytest.raises(ContractError):
        LossConfig(reg_kind="l3")
    with pytest.raises(ContractError):
        LossConfig(sim_clamp_eps=0.0)
    assert LossConfig(reg_kind="L1").reg_kind == "l1"
