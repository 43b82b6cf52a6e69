import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hycnn import Rng
from hycnn.data import ot_data
from hycnn.nets import ConvexNet, LogSumExpGate, MaxGate, SingleGate, init_hycnn, init_icnn_hoedt
from hycnn.ot import (
    EntropicMap, OTConfig, QuadraticPotential, barycentric_map, checkpoint_select,
    convexity_penalty, critic_gradients, icnn_baseline_train, inner_objective, map_mse,
    potential_gradients, saddle_train, sinkhorn, sinkhorn_divergence, write_pushforward_csv,
)
from hycnn.tensor import ContractViolation, DivergenceError, UnsupportedGate
from hycnn.training import Constant
from oracles import entropic_oracle


def small_pair(seed=0, d=2, gate=None, widths=(4, 3)):
    gate = gate or LogSumExpGate(1.0)
    r = Rng(seed)
    f = init_hycnn(widths, d, r.child(0, "f"), LogSumExpGate(gate.tau))
    g = init_hycnn(widths, d, r.child(0, "g"), LogSumExpGate(gate.tau))
    return f, g


def fd_net(net, fn, h=1e-5):
    out = {}
    for k in net.trainable():
        a = net.params[k]
        grad = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            old = a[i]
            a[i] = old + h
            net.bump()
            up = fn()
            a[i] = old - h
            net.bump()
            dn = fn()
            a[i] = old
            net.bump()
            grad[i] = (up - dn) / (2 * h)
        out[k] = grad
    return out


def max_rel(g, ref):
    num = max(float(np.max(np.abs(g[k] - ref[k]))) for k in ref)
    return num / max(max(float(np.max(np.abs(ref[k]))) for k in ref), 1e-8)


# ---- Sinkhorn ---------------------------------------------------------------------

def test_sinkhorn_singletons():
    x = np.array([[0.3, -1.2]])
    res = sinkhorn(x, x, 0.1)
    assert abs(res.value) <= 1e-12 and np.all(np.isfinite(res.f)) and res.converged
    res = sinkhorn(np.zeros((1, 2)), np.array([[1.0, 0.0]]), 0.01)
    assert res.value == pytest.approx(0.5, abs=1e-3)


@pytest.mark.parametrize("seed", range(4))
def test_sinkhorn_3x3_oracle(seed):
    r = Rng(seed)
    A, B = r.normal(size=(3, 2)), r.normal(size=(3, 2)) + 1.0
    got = sinkhorn(A, B, 10.0)
    assert got.converged
    assert abs(got.value - entropic_oracle(A, B, 10.0)) <= 1e-6


def test_sinkhorn_contracts():
    with pytest.raises(ContractViolation):
        sinkhorn(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)
    with pytest.raises(ContractViolation):
        sinkhorn(np.zeros((2, 2)), np.zeros((2, 3)), 1.0)
    res = sinkhorn(Rng(0).normal(size=(50, 2)), Rng(1).normal(size=(50, 2)), 1e-3, max_iter=3)
    assert not res.converged and res.iterations == 3


clouds = st.tuples(st.integers(1, 15), st.integers(1, 15), st.integers(1, 3),
                   st.floats(0.05, 5.0), st.integers(0, 10_000))


@given(clouds)
def test_divergence_properties(c):
    n, m, d, eps, seed = c
    r = Rng(seed)
    A, B = r.normal(size=(n, d)), 2 * r.normal(size=(m, d))
    assert sinkhorn(A, B, eps).value >= -1e-10
    s_ab = sinkhorn_divergence(A, B, eps)
    assert s_ab >= -1e-8
    assert abs(s_ab - sinkhorn_divergence(B, A, eps)) <= 1e-10
    assert abs(sinkhorn_divergence(A, A, eps)) <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_divergence_gaussian_clouds(seed):
    A = Rng(2 * seed).normal(size=(500, 2))
    B = Rng(2 * seed + 1).normal(size=(500, 2))
    assert 0.0 <= sinkhorn_divergence(A, B, 0.1) <= 0.05


def test_self_transport_oracle():
    A = Rng(7).normal(size=(3, 2))
    got = sinkhorn(A, A, 10.0)
    assert got.converged and np.allclose(got.f, got.g)
    assert abs(got.value - entropic_oracle(A, A, 10.0)) <= 1e-6


# ---- barycentric map ---------------------------------------------------------------

def test_barycentric_single_target():
    y = np.array([[0.4, -3.0, 2.0]])
    X = Rng(0).normal(size=(10, 3))
    assert np.array_equal(barycentric_map(X, y, np.zeros(1), 0.1), np.repeat(y, 10, 0))
    assert np.array_equal(barycentric_map(X[0], y, np.zeros(1), 0.1), y[0])


def test_barycentric_large_eps():
    Y = Rng(1).normal(size=(30, 2))
    out = barycentric_map(np.array([5.0, -5.0]), Y, np.zeros(30), 1e9)
    assert np.allclose(out, Y.mean(0), atol=1e-6)


@given(st.integers(0, 1000), st.floats(0.05, 5.0))
def test_barycentric_convex_combination(seed, eps):
    r = Rng(seed)
    Y = r.normal(size=(8, 1))
    out = barycentric_map(r.normal(size=(5, 1)) * 3, Y, r.normal(size=8), eps)
    assert np.all(out >= Y.min() - 1e-12) and np.all(out <= Y.max() + 1e-12)


def test_entropic_map_identity_d5():
    D = ot_data("phi1", 5, 2000, 2000, Rng(0))
    T = EntropicMap(D["source"], D["target"], 1.0)
    err = map_mse(T(D["test_source"]), D["test_source"])
    assert 0.1 <= err <= 1.5


# ---- checkpoint selection ----------------------------------------------------------

class Scaled:
    def __init__(self, c):
        self.c = c

    def input_gradient(self, x):
        return self.c * np.asarray(x)


def test_checkpoint_select():
    r = Rng(0)
    val_src, val_tgt = r.normal(size=(200, 2)), r.normal(size=(200, 2))
    cps = [(t, Scaled(c)) for t, c in enumerate(np.linspace(0.2, 1.0, 6))]
    best, _ = checkpoint_select(cps, val_src, val_tgt, K=1)
    assert best == [5]
    best, metric = checkpoint_select(cps, val_src, val_tgt, K=3)
    assert sorted(best) == [3, 4, 5] and metric > 0
    same = [Scaled(0.5)] * 4
    best, metric = checkpoint_select(same, val_src, val_tgt, K=2)
    one, m1 = checkpoint_select(same, val_src, val_tgt, K=1)
    assert len(best) == 2 and metric == pytest.approx(m1, abs=1e-15)
    with pytest.raises(ContractViolation):
        checkpoint_select(same, val_src, val_tgt, K=5)


# ---- objective gradients -------------------------------------------------------------

def test_critic_gradient_fd():
    f, g = small_pair(3)
    r = Rng(4)
    X, Y = r.normal(size=(6, 2)), r.normal(size=(5, 2))
    grads = critic_gradients(f, g, Y)
    ref = fd_net(g, lambda: -inner_objective(f, g, X, Y), 1e-4)
    assert max_rel(grads, ref) <= 1e-4


def test_critic_penalty_gradient_fd():
    f = init_icnn_hoedt([4, 3], 2, Rng(0), "lognormal", SingleGate("softplus", tau=1.0))
    g = init_icnn_hoedt([4, 3], 2, Rng(1), "gaussian", SingleGate("softplus", tau=1.0))
    g.params["1.V1"][0, 0] = -0.3
    g.bump()
    r = Rng(2)
    X, Y = r.normal(size=(6, 2)), r.normal(size=(5, 2))
    grads = critic_gradients(f, g, Y, lambda_cvx=2.0)
    ref = fd_net(g, lambda: -inner_objective(f, g, X, Y) + 2.0 * convexity_penalty(g), 1e-4)
    assert max_rel(grads, ref) <= 1e-4


def test_potential_gradient_fd():
    f, g = small_pair(5)
    r = Rng(6)
    X, Y = r.normal(size=(6, 2)), r.normal(size=(5, 2))
    grads, J = potential_gradients(f, g, X, Y)
    assert J == pytest.approx(inner_objective(f, g, X, Y), abs=1e-13)
    assert max_rel(grads, fd_net(f, lambda: inner_objective(f, g, X, Y), 1e-5)) <= 1e-5


def test_penalty_example():
    p = {"0.W1": np.zeros((2, 1)), "0.b1": np.zeros(2), "out.V": np.array([[-1.0, 2.0]]),
         "out.b": np.zeros(1)}
    g = ConvexNet("icnn", 1, [2], SingleGate("softplus"), p, nonneg_V=False)
    lam = 0.7
    assert lam * convexity_penalty(g) == pytest.approx(lam * 1.0)


# ---- training -------------------------------------------------------------------

def test_quadratic_potential_sanity():
    r = Rng(0)
    Y = r.child(0, "y").normal(size=(2000, 2))
    g = init_hycnn([16, 16], 2, r.child(1, "g"), LogSumExpGate(1.0))
    saddle_train(QuadraticPotential(2), g, Y, Y, OTConfig(outer_T=100, inner_S=5, batch_M=128),
                 r.child(2, "train"))
    G = g.input_gradient(Y)
    assert np.mean(np.sum((G - Y) ** 2, axis=1)) / 2 <= 0.05


def test_identity_map_d2():
    D = ot_data("phi1", 2, 5000, 5000, Rng(0).child(1, "data"))
    r = Rng(0)
    f = init_hycnn([48] * 4, 2, r.child(2, "potential"), LogSumExpGate(10.0))
    g = init_hycnn([48] * 4, 2, r.child(2, "critic"), LogSumExpGate(10.0))
    res = saddle_train(f, g, D["source"], D["target"],
                       OTConfig(outer_T=300, inner_S=5, batch_M=256), r.child(3, "train"))
    X = D["test_source"]
    assert map_mse(res.map(X), X) <= 0.05
    assert np.allclose(res.map(X[:3]), [f.input_gradient(x) for x in X[:3]], rtol=0, atol=1e-13)
    assert len(res.trace) == 300 and set(res.trace[0]) >= {"outer_iter", "objective", "tau", "lr"}


def test_zero_steps_unchanged():
    f, g = small_pair(0)
    before = (f.to_json(), g.to_json())
    X = Rng(1).normal(size=(16, 2))
    res = saddle_train(f, g, X, X, OTConfig(outer_T=0, batch_M=16), Rng(2))
    assert (res.f.to_json(), res.g.to_json()) == before and res.trace == []


def run_small(trainer=saddle_train, lam=1.0, seed=0, **kw):
    f, g = small_pair(seed)
    X = Rng(1).normal(size=(64, 2))
    Y = Rng(2).normal(size=(64, 2)) + 1.0
    cfg = OTConfig(outer_T=5, inner_S=2, batch_M=16, lambda_cvx=lam, **kw)
    return trainer(f, g, X, Y, cfg, Rng(3))


def test_ot_deterministic():
    a, b = run_small(), run_small()
    assert a.trace == b.trace


def test_baseline_without_penalty_matches():
    a = run_small(saddle_train)
    b = run_small(icnn_baseline_train, lam=0.0)
    assert a.trace == b.trace


def test_tau_schedule_and_checkpoints():
    res = run_small(tau=Constant(0.25), checkpoint_every=2)
    assert all(r["tau"] == 0.25 for r in res.trace)
    assert [t for t, _ in res.checkpoints] == [2, 4]
    assert res.f.gate.tau == 0.25


def test_ot_contracts():
    X = Rng(0).normal(size=(8, 2))
    f, g = small_pair(0)
    with pytest.raises(ContractViolation):
        saddle_train(f, g, X, X, OTConfig(outer_T=1, batch_M=16))
    with pytest.raises(ContractViolation):
        saddle_train(f, g, X, np.zeros((8, 3)), OTConfig(outer_T=1, batch_M=4))
    fm = init_hycnn([3], 2, Rng(0), MaxGate())
    with pytest.raises(UnsupportedGate):
        saddle_train(fm, g, X, X, OTConfig(outer_T=1, batch_M=4))
    with pytest.raises(ContractViolation):
        icnn_baseline_train(f, g, X, X, OTConfig(outer_T=1, batch_M=4, lambda_cvx=-1.0))


def test_ot_divergence():
    with pytest.raises(DivergenceError) as info:
        run_small(lr=Constant(1e6), diverge_at=1e3)
    assert "outer_iter" in info.value.where and "trace" in info.value.where


def test_pushforward_csv(tmp_path):
    X = Rng(0).normal(size=(4, 2))
    path = tmp_path / "push.csv"
    write_pushforward_csv(str(path), X, 2 * X)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x0", "x1", "Tx0", "Tx1"] and len(rows) == 5
    assert float(rows[1][2]) == 2 * X[0, 0]
