"""Function-preserving maps between network classes.

ICNN (ReLU / LeakyReLU) -> max-gate HyCNN, and max-gate HyCNN of width m on
R^d -> plain ReLU network of width 3m + 2d.
"""
import numpy as np

from ..nets import ConvexNet, MaxGate, SingleGate, init_hycnn, init_icnn_hoedt
from ..tensor import ContractViolation, Rng


def icnn_to_hycnn(net: ConvexNet) -> ConvexNet:
    """Same function as a max-gate net: lane 2 is 0 (ReLU) or alpha * lane 1 (LeakyReLU)."""
    if net.arch != "icnn" or net.gate.kind not in ("relu", "leaky_relu"):
        raise ContractViolation("icnn_to_hycnn needs a ReLU / LeakyReLU ICNN without quadratic skip")
    scale = net.gate.alpha if net.gate.kind == "leaky_relu" else 0.0
    P = net.effective()
    p = {}
    for l in range(net.depth):
        for name in ("W", "b", "V"):
            key = f"{l}.{name}1"
            if key in P:
                p[key] = np.array(P[key])
                p[f"{l}.{name}2"] = scale * P[key]
    for k in ("out.V", "out.W", "out.b"):
        if k in P:
            p[k] = np.array(P[k])
    return ConvexNet("hycnn", net.input_dim, net.widths, MaxGate(), p,
                     reparam=False, nonneg_V=net.nonneg_V)


def hycnn_to_relu(net: ConvexNet) -> ConvexNet:
    """Plain ReLU network (no skips) of width 3m + 2d computing the same function.

    Each hidden layer stores [x_+, (-x)_+, (a1)_+, (-a1)_+, (a2 - a1)_+];
    the max is (a1)_+ - (-a1)_+ + (a2 - a1)_+ and x = x_+ - (-x)_+.
    """
    if net.gate.kind != "max":
        raise ContractViolation("hycnn_to_relu needs a max-gate network")
    P = net.effective()
    d = net.input_dim
    eye = np.eye(d)

    def read(Vk, Wk):
        """Linear map from the stored features of the previous layer."""
        return np.hstack([Wk, -Wk, Vk, -Vk, Vk])

    p = {}
    for l, m in enumerate(net.widths):
        W = [P.get(f"{l}.W{k}", np.zeros((m, d))) for k in (1, 2)]
        b = [P[f"{l}.b{k}"] for k in (1, 2)]
        if l == 0:
            A1, A2 = W
            carry = eye
        else:
            V = [P[f"{l}.V{k}"] for k in (1, 2)]
            A1, A2 = read(V[0], W[0]), read(V[1], W[1])
            prev = 2 * d + 3 * net.widths[l - 1]
            carry = np.zeros((d, prev))
            carry[:, :d] = eye
            carry[:, d:2 * d] = -eye
        M = np.vstack([carry, -carry, A1, -A1, A2 - A1])
        c = np.concatenate([np.zeros(2 * d), b[0], -b[0], b[1] - b[0]])
        p[f"{l}.W1" if l == 0 else f"{l}.V1"] = M
        p[f"{l}.b1"] = c
    oW = P.get("out.W", np.zeros((1, d)))
    p["out.V"] = read(P["out.V"], oW)
    p["out.b"] = np.array(P["out.b"])
    widths = [2 * d + 3 * m for m in net.widths]
    return ConvexNet("mlp", d, widths, SingleGate("relu"), p, nonneg_V=False)


def embedding_checks(rng: Rng = None, n_inputs=1000, box=3.0):
    """Output agreement of both embeddings on random networks and inputs.

    Returns a dict of max absolute differences, one entry per case.
    """
    rng = rng or Rng(0)
    report = {}
    cases = [("icnn-relu-64x2-d3", (64, 64), 3, SingleGate("relu")),
             ("icnn-leaky-16x3-d2", (16, 16, 16), 2, SingleGate("leaky_relu", 0.2))]
    for i, (name, widths, d, gate) in enumerate(cases):
        net = init_icnn_hoedt(widths, d, rng.child(i, "icnn"), gate=gate)
        X = rng.child(i, "x").uniform(-box, box, (n_inputs, d))
        report[name] = float(np.max(np.abs(net.forward(X) - icnn_to_hycnn(net).forward(X))))
    for i, (w, L, d) in enumerate([(4, 2, 2), (48, 4, 5)]):
        net = init_hycnn([w] * L, d, rng.child(10 + i, "hycnn"))
        X = rng.child(10 + i, "x").uniform(-box, box, (n_inputs, d))
        relu = hycnn_to_relu(net)
        report[f"hycnn{w}x{L}-d{d}-to-relu{relu.widths[0]}"] = float(
            np.max(np.abs(net.forward(X) - relu.forward(X))))
    return report
