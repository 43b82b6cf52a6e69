import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hycnn import Rng
from hycnn.nets import (
    ConvexNet, Gate, LogSumExpGate, MaxGate, SingleGate, build_net, check_convexity,
    hoedt_constants, hycnn_bias, hycnn_v_mean, init_groupmax, init_hycnn, init_icnn_hoedt,
    init_mlp, parse_gate,
)
from hycnn.tensor import ContractViolation, lognormal_params, softplus
from hycnn.theory import build_quadratic_hycnn

GATES = [MaxGate(), LogSumExpGate(0.5), SingleGate("relu"), SingleGate("leaky_relu", 0.3),
         SingleGate("softplus", tau=0.7)]


def abs_net(gate=None):
    p = {"0.W1": np.array([[1.0]]), "0.b1": np.zeros(1),
         "0.W2": np.array([[-1.0]]), "0.b2": np.zeros(1),
         "out.V": np.array([[1.0]]), "out.W": np.zeros((1, 1)), "out.b": np.zeros(1)}
    return ConvexNet("hycnn", 1, [1], gate or MaxGate(), p)


def random_net(arch, gate, seed, d=3, widths=(5, 4)):
    gate = Gate(gate.kind, gate.tau, gate.alpha)
    r = Rng(seed)
    if arch == "hycnn":
        return init_hycnn(widths, d, r, gate)
    if arch == "groupmax":
        return init_groupmax(widths, d, r, gate)
    if arch in ("icnn", "icnnq"):
        if gate.lanes == 2:
            gate = SingleGate("softplus", tau=0.5)
        return init_icnn_hoedt(widths, d, r, "lognormal", gate, quadratic=arch == "icnnq")
    return init_mlp(widths, d, r, gate)


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# ---- forward / gradient examples ------------------------------------------

def test_abs_net():
    net = abs_net()
    assert net.forward(np.array([-2.0])) == 2.0
    assert net.input_gradient(np.array([-2.0]))[0] == -1.0
    assert abs_net(LogSumExpGate(1.0)).forward(np.array([0.0])) == pytest.approx(math.log(2))


def test_affine_net_gradient():
    d = 3
    a = np.array([0.5, -2.0, 1.0])
    p = {"0.W1": np.zeros((2, d)), "0.b1": np.zeros(2), "0.W2": np.zeros((2, d)),
         "0.b2": np.zeros(2), "out.V": np.zeros((1, 2)), "out.W": a[None, :],
         "out.b": np.array([0.3])}
    net = ConvexNet("hycnn", d, [2], MaxGate(), p)
    X = Rng(0).normal(size=(10, d))
    assert np.allclose(net.forward(X), X @ a + 0.3, atol=1e-15)
    assert np.allclose(net.input_gradient(X), a, atol=0)


def test_quadratic_construction_values():
    net, _ = build_quadratic_hycnn([2])
    assert abs(net.forward(np.array([0.5])) - 0.25) <= 1 / 32
    net, _ = build_quadratic_hycnn([2, 2])
    assert abs(net.input_gradient(np.array([0.3]))[0] - 0.6) <= 0.25


def test_dimension_mismatch():
    net = random_net("hycnn", MaxGate(), 0)
    with pytest.raises(ContractViolation):
        net.forward(np.zeros(2))
    with pytest.raises(ContractViolation):
        net.input_gradient(np.zeros((4, 5)))


def test_gate_contracts():
    for bad in (("lse", 0.0, 0.2), ("softplus", -1.0, 0.2), ("leaky_relu", 1.0, 1.0),
                ("leaky_relu", 1.0, 0.0), ("tanh", 1.0, 0.2)):
        with pytest.raises(ContractViolation):
            Gate(*bad)
    assert parse_gate("lse:10") == LogSumExpGate(10.0)
    assert parse_gate("leaky_relu:0.1").alpha == 0.1


def test_negative_V_rejected_without_reparam():
    net = random_net("hycnn", MaxGate(), 0)
    p = {k: v.copy() for k, v in net.effective().items()}
    p["1.V1"][0, 0] = -0.1
    with pytest.raises(ContractViolation):
        ConvexNet("hycnn", 3, net.widths, MaxGate(), p, reparam=False)


# ---- initializers -----------------------------------------------------------

def test_hycnn_init_constants():
    assert hycnn_v_mean(4) == pytest.approx(1 / math.sqrt(16 + 4 * (1 - 1 / math.pi)), abs=1e-15)
    assert hycnn_v_mean(4) == pytest.approx(0.231083, abs=1e-6)
    assert hycnn_bias(4) == pytest.approx(-math.sqrt(4 / (10 * math.pi - 2)), abs=1e-15)
    assert hycnn_bias(4) == pytest.approx(-0.368756, abs=1e-6)
    D, muW, s2, mub = hoedt_constants(64)
    assert D == pytest.approx(6 * (math.pi - 1) + 63 * (3 * math.sqrt(3) + 2 * math.pi - 6),
                              abs=1e-12)
    assert D == pytest.approx(358.048, abs=1e-3)
    assert muW == pytest.approx(math.sqrt(6 * math.pi / (64 * D)), abs=1e-15)
    assert muW == pytest.approx(0.028681, abs=1e-6)
    assert mub == pytest.approx(-math.sqrt(192 / D), abs=1e-15)
    assert mub == pytest.approx(-0.732285, abs=1e-6)
    assert s2 == 1 / 64


def test_hycnn_init_moments():
    net = init_hycnn([4, 1000, 1000], 50, Rng(3))
    # fan-in 1000 is too heavy-tailed for sample moments; check log V instead
    logV = np.log(net.effective()["2.V1"])
    loc, s2 = lognormal_params(hycnn_v_mean(1000), 1 / 4000)
    assert logV.mean() == pytest.approx(loc, abs=5e-3)
    assert logV.var() == pytest.approx(s2, rel=5e-3)
    V = net.effective()["1.V2"]  # fan-in 4, 4000 draws
    assert V.mean() == pytest.approx(hycnn_v_mean(4), rel=3e-2)
    assert V.var() == pytest.approx(1 / 16, rel=0.1)
    assert np.all(net.effective()["1.b1"] == hycnn_bias(4))
    assert np.all(net.params["out.b"] == hycnn_bias(1000))
    assert net.effective()["1.W1"].std() == pytest.approx(math.sqrt(1 / 200), rel=2e-2)
    assert net.effective()["0.W1"].std() == pytest.approx(math.sqrt(1 / 50), rel=0.1)
    # stored values are softplus pre-images of the sampled effective weights
    assert np.allclose(softplus(net.params["1.V1"]), net.effective()["1.V1"])


def test_hycnn_v_mean_monte_carlo():
    from hycnn.tensor import sample_lognormal
    x = sample_lognormal(Rng(0), hycnn_v_mean(4), 1 / 16, 1_000_000)
    assert x.mean() == pytest.approx(0.231105, abs=1e-3)
    assert x.var() == pytest.approx(0.0625, abs=2e-3)


def test_icnn_styles():
    pot = init_icnn_hoedt([64, 64], 4, Rng(0), "lognormal")
    crit = init_icnn_hoedt([64, 64], 4, Rng(0), "gaussian")
    assert pot.min_effective_V() > 0
    assert crit.min_effective_V() < 0 and not crit.nonneg_V
    assert pot.effective()["1.V1"].mean() == pytest.approx(hoedt_constants(64)[1], rel=0.1)
    assert crit.effective()["1.V1"].std() == pytest.approx(1 / 8, rel=0.05)
    with pytest.raises(ContractViolation):
        init_icnn_hoedt([4], 2, Rng(0), gate=MaxGate())


def test_groupmax_and_mlp():
    gm = init_groupmax([6, 6, 6], 3, Rng(0))
    for k in ("1.W1", "1.W2", "2.W1", "2.W2", "out.W"):
        assert not np.any(gm.params[k]) and k in gm.frozen
    mlp = init_mlp([8, 8], 3, Rng(0))
    assert np.all(np.abs(mlp.params["0.W1"]) <= 1 / math.sqrt(3))
    assert np.all(np.abs(mlp.params["1.V1"]) <= 1 / math.sqrt(8))
    assert mlp.min_effective_V() < 0 and not mlp.reparam
    with pytest.raises(ContractViolation):
        init_hycnn([], 2, Rng(0))
    with pytest.raises(ContractViolation):
        build_net("resnet", [4], 2, Rng(0))


def test_icnnq_first_layer():
    net = init_icnn_hoedt([5], 2, Rng(1), "lognormal", SingleGate("relu"), quadratic=True)
    P = net.effective()
    x = np.array([0.3, -0.7])
    z = np.maximum(P["0.W1"] @ x + (P["q.W"] @ x) ** 2 + P["0.b1"], 0)
    want = P["out.V"][0] @ z + P["out.W"][0] @ x + P["out.b"][0]
    assert net.forward(x) == pytest.approx(want, abs=1e-14)


# ---- convexity -------------------------------------------------------------

def combos(archs, gates):
    """(arch, gate) pairs; groupmax is a two-lane family."""
    return [pytest.param(a, g, id=f"{g.kind}-{a}") for g in gates for a in archs
            if not (a == "groupmax" and g.lanes == 1)]


@pytest.mark.parametrize("arch,gate", combos(["hycnn", "groupmax", "icnn", "icnnq"], GATES))
def test_constrained_nets_convex(arch, gate):
    net = random_net(arch, gate, 11, d=3, widths=(8, 8, 8))
    rep = check_convexity(net, Rng(5), trials=10_000, box=10.0)
    assert rep["passed"], rep


@given(st.integers(0, 10_000), st.sampled_from(GATES), st.integers(1, 4))
def test_hycnn_convex_property(seed, gate, d):
    net = random_net("hycnn", gate, seed, d=d, widths=(6, 5))
    assert check_convexity(net, Rng(seed), trials=500, box=10.0)["passed"]


def test_convexity_detects_violation():
    p = {"0.W1": np.array([[1.0], [-1.0]]), "0.b1": np.zeros(2),
         "out.V": np.array([[-1.0, -1.0]]), "out.b": np.zeros(1)}
    net = ConvexNet("mlp", 1, [2], SingleGate("relu"), p, nonneg_V=False)
    assert net.forward(np.array([0.0])) > 0.5 * (net.forward(np.array([-1.0]))
                                                  + net.forward(np.array([1.0])))
    rep = check_convexity(net, Rng(0), trials=2000)
    assert not rep["passed"] and rep["max_violation"] > 0


def test_affine_convexity_zero():
    p = {"0.W1": np.zeros((2, 2)), "0.b1": np.zeros(2), "0.W2": np.zeros((2, 2)),
         "0.b2": np.zeros(2), "out.V": np.zeros((1, 2)), "out.W": np.array([[1.0, -3.0]]),
         "out.b": np.array([2.0])}
    net = ConvexNet("hycnn", 2, [2], MaxGate(), p)
    assert check_convexity(net, Rng(0), trials=2000)["max_violation"] <= 1e-12


# ---- embedding and gate sandwich ---------------------------------------------

def direct_icnn(P, X, depth):
    z = np.maximum(P["0.b1"] + X @ P["0.W1"].T, 0.0)
    for l in range(1, depth):
        z = np.maximum(P[f"{l}.b1"] + X @ P[f"{l}.W1"].T + z @ P[f"{l}.V1"].T, 0.0)
    return z @ P["out.V"][0] + P["out.b"][0] + X @ P["out.W"][0]


def test_single_gate_matches_direct_icnn():
    h = init_hycnn([7, 6, 5], 4, Rng(2), SingleGate("relu"))
    X = Rng(3).normal(size=(1000, 4))
    assert np.array_equal(h.forward(X), direct_icnn(h.effective(), X, 3))


@pytest.mark.parametrize("seed", range(5))
def test_lse_sandwich(seed):
    net = init_hycnn([6, 6], 2, Rng(seed), MaxGate())
    X = Rng(seed + 100).uniform(-1, 1, (500, 2))
    fmax = net.forward(X)
    net.gate = LogSumExpGate(1e-4)
    net.bump()
    ftau = net.forward(X)
    assert np.all(ftau >= fmax - 1e-12)
    assert np.max(np.abs(ftau - fmax)) <= 1e-3


# ---- input gradient ---------------------------------------------------------

ARCHS = ["hycnn", "groupmax", "icnn", "icnnq", "mlp"]


@pytest.mark.parametrize("arch,gate", combos(ARCHS, [
    LogSumExpGate(0.5), SingleGate("softplus", tau=0.7), MaxGate(), SingleGate("leaky_relu", 0.3)]))
def test_input_gradient_fd(arch, gate):
    net = random_net(arch, gate, 21)
    pts = Rng(22).uniform(-2, 2, (100, 3))
    G = net.input_gradient(pts)
    checked = 0
    for x, g in zip(pts, G):
        fd = fd_gradient(net.forward, x)
        if net.gate.piecewise_affine and not np.allclose(
                fd, fd_gradient(net.forward, x, 1e-7), rtol=1e-6, atol=1e-9):
            continue  # a kink lies inside the stencil: not a generic point
        checked += 1
        err = np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-3)
        assert err <= 1e-5, (x, fd, g)
    assert checked >= 90


def test_batch_matches_single():
    net = random_net("hycnn", LogSumExpGate(1.0), 4)
    X = Rng(0).normal(size=(5, 3))
    assert np.allclose(net.input_gradient(X), [net.input_gradient(x) for x in X], atol=1e-15)
    assert np.allclose(net.forward(X), [net.forward(x) for x in X], atol=1e-15)


# ---- serialization ------------------------------------------------------------

@pytest.mark.parametrize("arch", ARCHS)
def test_json_round_trip(arch, tmp_path):
    net = random_net(arch, LogSumExpGate(0.3) if arch != "icnn" else SingleGate("relu"), 8)
    path = tmp_path / "net.json"
    net.to_json(str(path), meta={"epoch": 3})
    back = ConvexNet.from_json(str(path))
    X = Rng(9).normal(size=(200, 3))
    assert np.max(np.abs(back.forward(X) - net.forward(X))) <= 1e-15
    assert back.meta["epoch"] == 3
    doc = json.loads(path.read_text())
    assert {"arch", "gate", "dims", "layers", "out", "reparam"} <= set(doc)
    if net.reparam:
        assert np.allclose(doc["layers"][1]["V1"], net.effective()["1.V1"])
