"""Neural OT map estimation and entropic OT.

The potential f and critic g play the game

    J(f, g) = mean_i [ f(X_i) + <Y_i, grad g(Y_i)> - f(grad g(Y_i)) ]

where g maximizes J (for fixed f the inner sup is the conjugate f*(Y)) and
f minimizes it. The map estimate is grad f. Entropic OT uses log-domain
Sinkhorn with the cost c(x, y) = |x - y|^2 / 2 and uniform weights.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .nets import ConvexNet
from .tensor import ContractViolation, DivergenceError, Rng, UnsupportedGate
from .training import (
    AdamState, Cosine, grad_of_input_grad, net_adam_step, param_gradients,
)


@dataclass
class OTConfig:
    outer_T: int = 1000
    inner_S: int = 5
    batch_M: int = 256
    lr: object = None
    tau: object = None
    betas: tuple = (0.5, 0.9)
    eps: float = 1e-8
    lambda_cvx: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    diverge_at: float = 1e12

    def __post_init__(self):
        if self.lr is None:
            self.lr = Cosine(1e-2, 0.01, max(self.outer_T, 1))


class QuadraticPotential:
    """Frozen analytic potential |x|^2 / 2 (its gradient is the identity)."""

    frozen = True

    def __init__(self, input_dim):
        self.input_dim = int(input_dim)

    def forward(self, x):
        X = np.asarray(x, dtype=np.float64)
        return 0.5 * np.sum(X * X, axis=-1)

    def input_gradient(self, x):
        return np.array(x, dtype=np.float64)


@dataclass
class OTResult:
    f: object
    g: ConvexNet
    trace: list
    checkpoints: list = field(default_factory=list)

    def map(self, x):
        return self.f.input_gradient(x)


# ---- objective pieces ------------------------------------------------------

def inner_objective(f, g, X, Y):
    """J on one pair of batches."""
    G = g.input_gradient(Y)
    return float(np.mean(f.forward(X)) + np.mean(np.sum(Y * G, axis=1))
                 - np.mean(f.forward(G)))


def convexity_penalty(g: ConvexNet):
    """sum over the critic's V matrices of |(V)_-|_F^2 on the effective weights."""
    P = g.effective()
    return float(sum(np.sum(np.maximum(-P[k], 0.0) ** 2) for k in g.v_names()))


def critic_gradients(f, g: ConvexNet, Y, lambda_cvx=0.0):
    """Gradient of -J + lambda_cvx * penalty w.r.t. the critic's raw parameters.

    Only the Y terms of J depend on g; d/dtheta of <Y, grad g> - f(grad g) is
    the parameter gradient of <v, grad g(Y)> with v = Y - grad f(grad g(Y))
    held fixed.
    """
    G = g.input_gradient(Y)
    v = Y - f.input_gradient(G)
    grads, _ = grad_of_input_grad(g, Y, v, upstream=1.0 / Y.shape[0])
    grads = {k: -a for k, a in grads.items()}
    if lambda_cvx and not g.reparam:
        for k in g.v_names():
            grads[k] = grads[k] - 2.0 * lambda_cvx * np.maximum(-g.params[k], 0.0)
    return grads


def potential_gradients(f: ConvexNet, g, X, Y):
    """Gradient of J w.r.t. the potential's raw parameters, and J itself."""
    G = g.input_gradient(Y)
    M, N = X.shape[0], G.shape[0]
    tape = f.run(np.vstack([X, G]))
    c = np.concatenate([np.full(M, 1.0 / M), np.full(N, -1.0 / N)])
    J = float(c @ tape.y + np.mean(np.sum(Y * G, axis=1)))
    return param_gradients(f, tape, c), J


# ---- training ----------------------------------------------------------------

def _check_smooth(net, name):
    if isinstance(net, ConvexNet) and not net.gate.smooth:
        raise UnsupportedGate(
            f"{name} has gate {net.gate.kind!r}; OT training differentiates the "
            "input gradient and needs 'lse' or 'softplus'")


def _alternate(f, g, src, tgt, cfg: OTConfig, rng, lambda_cvx, val=None, val_eps=0.1):
    src = np.asarray(src, dtype=np.float64)
    tgt = np.asarray(tgt, dtype=np.float64)
    if src.ndim != 2 or tgt.ndim != 2 or src.shape[1] != tgt.shape[1]:
        raise ContractViolation("source and target must be n x d and m x d with equal d")
    if src.shape[1] != g.input_dim or src.shape[1] != f.input_dim:
        raise ContractViolation("cloud dimension does not match the networks")
    _check_smooth(f, "potential")
    _check_smooth(g, "critic")
    n, m = src.shape[0], tgt.shape[0]
    M = cfg.batch_M
    if M > min(n, m):
        raise ContractViolation(f"batch_M={M} exceeds min(n, m)={min(n, m)}")
    rng = rng or Rng(cfg.seed)
    sx, sy = rng.child(0, "ot-src"), rng.child(0, "ot-tgt")
    train_f = isinstance(f, ConvexNet) and not getattr(f, "frozen_potential", False)
    fstate = AdamState(cfg.betas[0], cfg.betas[1], cfg.eps)
    gstate = AdamState(cfg.betas[0], cfg.betas[1], cfg.eps)
    trace, checkpoints = [], []
    for t in range(1, cfg.outer_T + 1):
        lr = cfg.lr.value(t - 1)
        tau = cfg.tau.value(t - 1) if cfg.tau is not None else None
        if tau is not None:
            g.set_tau(tau)
            if isinstance(f, ConvexNet):
                f.set_tau(tau)
        X = src[sx.integers(0, n, M)]
        for _ in range(cfg.inner_S):
            Y = tgt[sy.integers(0, m, M)]
            net_adam_step(g, critic_gradients(f, g, Y, lambda_cvx), gstate, lr)
        if train_f:
            grads, J = potential_gradients(f, g, X, Y)
            net_adam_step(f, grads, fstate, lr)
        else:
            J = inner_objective(f, g, X, Y)
        if not math.isfinite(J) or abs(J) > cfg.diverge_at:
            raise DivergenceError(f"objective {J:.3g} at outer step {t}",
                                  {"outer_iter": t, "trace": trace})
        row = {"outer_iter": t, "objective": J,
               "tau": tau if tau is not None else g.gate.tau, "lr": lr}
        if cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
            if isinstance(f, ConvexNet):
                checkpoints.append((t, f.copy()))
            if val is not None:
                row["val_sinkhorn"] = sinkhorn_divergence(
                    f.input_gradient(val[0]), val[1], val_eps)
        trace.append(row)
    return OTResult(f, g, trace, checkpoints)


def saddle_train(f, g: ConvexNet, src, tgt, cfg: OTConfig = None, rng: Rng = None,
                 val=None, val_eps=0.1):
    """Alternating mini-batch Adam on J.

    Each outer step draws one source batch, takes inner_S critic steps (a
    fresh target batch each), then one potential step on the source batch and
    the last target batch. Batches are drawn with replacement. `f` may be a
    QuadraticPotential, which is never updated. With checkpoint_every > 0 a
    copy of f is stored every that many outer steps, and `val` = (X, Y) adds
    the validation Sinkhorn divergence of grad f # X against Y to the trace.
    """
    cfg = cfg or OTConfig()
    return _alternate(f, g, src, tgt, cfg, rng, 0.0, val, val_eps)


def icnn_baseline_train(f, g: ConvexNet, src, tgt, cfg: OTConfig = None, rng: Rng = None,
                        val=None, val_eps=0.1):
    """saddle_train for ICNN pairs with an unconstrained critic.

    The critic maximizes J - lambda_cvx * sum |(V)_-|_F^2, which softly pushes
    its V matrices towards the nonnegative orthant.
    """
    cfg = cfg or OTConfig()
    if cfg.lambda_cvx < 0:
        raise ContractViolation("lambda_cvx must be >= 0")
    return _alternate(f, g, src, tgt, cfg, rng, cfg.lambda_cvx, val, val_eps)


def map_mse(T_hat, T_true):
    """mean_i |T_hat(x_i) - T(x_i)|^2 from the two evaluated maps."""
    r = np.asarray(T_hat) - np.asarray(T_true)
    return float(np.mean(np.sum(r * r, axis=1)))


def write_pushforward_csv(path, X, TX):
    X = np.asarray(X)
    TX = np.asarray(TX)
    d = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(d)] + [f"Tx{i}" for i in range(d)])
        for a, b in zip(X, TX):
            w.writerow([repr(float(v)) for v in np.concatenate([a, b])])


# ---- entropic OT ---------------------------------------------------------------

@dataclass
class SinkhornResult:
    value: float
    f: np.ndarray
    g: np.ndarray
    iterations: int
    converged: bool


def sinkhorn(A, B, eps, max_iter=5000, tol=1e-6):
    """Entropic OT between uniform clouds A (n x d) and B (m x d).

    Minimizes <pi, C> + eps KL(pi | a b^T) with C = |x - y|^2 / 2 by
    alternating log-domain updates

        f_i = -eps log sum_j b_j exp((g_j - C_ij) / eps)
        g_j = -eps log sum_i a_i exp((f_i - C_ij) / eps)

    until both potentials move less than tol in sup-norm. After a g update
    the column marginals are exact, so the value is <a, f> + <b, g>.
    """
    if not eps > 0:
        raise ContractViolation("eps must be > 0")
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ContractViolation("clouds must share the dimension")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ContractViolation("clouds must be finite")
    n, m = A.shape[0], B.shape[0]
    la, lb = -math.log(n), -math.log(m)
    softmin = _backend.softmin_rows
    if A.shape == B.shape and np.array_equal(A, B):
        return _sinkhorn_symmetric(A, eps, max_iter, tol)
    f = np.zeros(n)
    g = softmin(B, A, f + eps * la, eps)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        f_new = softmin(A, B, g + eps * lb, eps)
        g_new = softmin(B, A, f_new + eps * la, eps)
        delta = max(np.max(np.abs(f_new - f)), np.max(np.abs(g_new - g)))
        f, g = f_new, g_new
        if delta < tol:
            converged = True
            break
    return SinkhornResult(float(f.mean() + g.mean()), f, g, it, converged)


def _sinkhorn_symmetric(A, eps, max_iter, tol):
    """OT_eps(A, A): the optimal potentials coincide, and averaging each
    update with the previous iterate avoids the slow oscillation the
    alternating scheme shows on self-transport."""
    la = -math.log(A.shape[0])
    f = _backend.softmin_rows(A, A, np.zeros(A.shape[0]) + eps * la, eps)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        f_new = 0.5 * (f + _backend.softmin_rows(A, A, f + eps * la, eps))
        delta = np.max(np.abs(f_new - f))
        f = f_new
        if delta < tol:
            converged = True
            break
    # one plain update so the returned pair satisfies the marginal equations
    f = _backend.softmin_rows(A, A, f + eps * la, eps)
    return SinkhornResult(float(2.0 * f.mean()), f, f.copy(), it, converged)


def sinkhorn_divergence(A, B, eps=0.1, max_iter=5000, tol=1e-6):
    """OT_eps(A, B) - OT_eps(A, A) / 2 - OT_eps(B, B) / 2.

    The cross term is solved with the clouds in a canonical order, so the
    result is symmetric to the last bit rather than to the stopping tolerance.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if (B.shape, B.tobytes()) < (A.shape, A.tobytes()):
        A, B = B, A
    ab = sinkhorn(A, B, eps, max_iter, tol).value
    aa = sinkhorn(A, A, eps, max_iter, tol).value
    bb = sinkhorn(B, B, eps, max_iter, tol).value
    return ab - 0.5 * (aa + bb)


def barycentric_map(x, tgt, g_star, eps):
    """sum_j w_j(x) Y_j with w_j proportional to exp((g*_j - |x - Y_j|^2 / 2) / eps).

    Accepts one point or a batch of rows.
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    Y = np.atleast_2d(np.asarray(tgt, dtype=np.float64))
    C = 0.5 * (np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :]) - X @ Y.T
    L = (np.asarray(g_star, dtype=np.float64)[None, :] - C) / eps
    L -= L.max(axis=1, keepdims=True)
    W = np.exp(L)
    W /= W.sum(axis=1, keepdims=True)
    out = W @ Y
    return out[0] if single else out


class EntropicMap:
    """Out-of-sample barycentric map fitted by one Sinkhorn run."""

    def __init__(self, src, tgt, eps, max_iter=5000, tol=1e-6):
        self.tgt = np.asarray(tgt, dtype=np.float64)
        self.eps = float(eps)
        self.result = sinkhorn(src, tgt, eps, max_iter, tol)

    def __call__(self, x):
        return barycentric_map(x, self.tgt, self.result.g, self.eps)


def checkpoint_select(checkpoints, val_src, val_tgt, K=10, eps=0.1, test_src=None,
                      test_tgt=None):
    """Rank checkpoints by validation Sinkhorn divergence of grad f # val_src.

    `checkpoints` is a list of potentials or (step, potential) pairs.
    Returns (indices of the K best, mean divergence over them on the test
    clouds, or on the validation clouds when none are given).
    """
    nets = [c[1] if isinstance(c, tuple) else c for c in checkpoints]
    if K < 1 or K > len(nets):
        raise ContractViolation(f"K={K} with {len(nets)} checkpoints")
    scores = np.array([sinkhorn_divergence(n.input_gradient(val_src), val_tgt, eps)
                       for n in nets])
    best = [int(i) for i in np.argsort(scores, kind="stable")[:K]]
    if test_src is None:
        metric = float(np.mean(scores[best]))
    else:
        metric = float(np.mean([sinkhorn_divergence(nets[i].input_gradient(test_src),
                                                    test_tgt, eps) for i in best]))
    return best, metric
