"""Explicit max-gate networks approximating x^2, x^n and ||x||^2.

Every builder returns (net, certificate). Networks are plain ConvexNets with
MaxGate and no reparametrization, so the stored V are the effective weights.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..nets import ConvexNet, MaxGate
from ..tensor import ContractViolation, Rng
from .pwa import pwa_of_network, sup_error_vs_quadratic


@dataclass
class ConstructionCertificate:
    target: str
    widths: list
    claimed_bound: float
    measured: float
    method: str
    extra: dict = field(default_factory=dict)
    tol: float = 1e-12

    @property
    def passed(self):
        """measured <= claimed, up to float rounding in the evaluation (tol)."""
        return bool(self.measured <= self.claimed_bound + self.tol)

    def to_dict(self):
        return {"target": self.target, "widths": list(self.widths),
                "claimed_bound": self.claimed_bound, "measured": self.measured,
                "method": self.method, "pass": self.passed, **self.extra}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _hycnn(input_dim, widths, params, meta=None):
    return ConvexNet("hycnn", input_dim, widths, MaxGate(), params,
                     reparam=False, nonneg_V=True, meta=meta)


def _lanes(net):
    """Effective params of a max-gate net with every W present (zeros if absent)."""
    if net.gate.kind != "max":
        raise ContractViolation("construction algebra needs a max-gate network")
    P = {k: np.array(v) for k, v in net.effective().items()}
    d = net.input_dim
    for l, w in enumerate(net.widths):
        for k in (1, 2):
            P.setdefault(f"{l}.W{k}", np.zeros((w, d)))
    P.setdefault("out.W", np.zeros((1, d)))
    return P


# ---- univariate quadratic -------------------------------------------------

def quadratic_params(widths, positive=False):
    """Parameters of the even-width construction with D_L = prod(widths) pieces.

    Layer 1 holds the hinges (x - j/d_1)_+; every later layer refines the
    grid by d_l through max(phi, psi + shift) neurons plus one neuron carrying
    u. The output is u_L + x / D_L - 1/(8 D_L^2), or u_L + x / D_L with
    positive=True (the interpolant itself, with 0 <= f(x) <= x on [0, 1]).
    """
    widths = [int(w) for w in widths]
    if not widths or any(w < 2 or w % 2 for w in widths):
        raise ContractViolation(f"widths must be even and >= 2, got {widths}")
    L = len(widths)
    D = np.cumprod(widths).astype(float)
    b = 4.0 / (L * D[-1])
    a = 4.0 / widths[0]
    d1 = widths[0]
    j = np.arange(d1)
    act = j >= 1
    p = {"0.W1": act.astype(float)[:, None], "0.b1": np.where(act, -j / d1, 0.0),
         "0.W2": np.zeros((d1, 1)), "0.b2": np.zeros(d1)}
    u = np.where(act, 2.0 / d1, 0.0)
    phi = np.where(act, np.where(j % 2 == 1, a, b), 0.0)
    psi = np.where(act, np.where(j % 2 == 1, b, a), 0.0)
    for l in range(1, L):
        dn, dp = widths[l], widths[l - 1]
        Dl, Dn = D[l - 1], D[l]
        delta = a - b
        jj = np.arange(dn)
        V1 = np.zeros((dn, dp))
        V1[0] = u
        V1[1:] = phi
        V2 = np.zeros((dn, dp))
        V2[1:] = psi
        W2 = np.where(jj >= 1, delta / 2.0, 0.0)[:, None]
        b2 = np.where(jj >= 1, -delta * jj / (2.0 * Dn), 0.0)
        p.update({f"{l}.V1": V1, f"{l}.W1": np.zeros((dn, 1)), f"{l}.b1": np.zeros(dn),
                  f"{l}.V2": V2, f"{l}.W2": W2, f"{l}.b2": b2})
        a_next = (a - (dn - 1) * b) / dn
        odd = jj % 2 == 1
        r = np.where(odd, 2 * a_next / delta, 2 * b / delta)
        s = np.where(odd, 2 * b / delta, 2 * a_next / delta)
        r[0] = 0.0  # the coarse hinges of phi are covered exactly by the j >= 1 neurons
        s[0] = Dl / 2.0 * (a_next - b * s[1:].sum())
        u, phi, psi, a = 2.0 / (Dn * (a_next + b)) * (r + s), r, s, a_next
    DL = D[-1]
    p["out.V"] = u[None, :]
    p["out.W"] = np.array([[1.0 / DL]])
    p["out.b"] = np.array([0.0 if positive else -1.0 / (8 * DL * DL)])
    return p


def build_quadratic_hycnn(widths, positive=False, certify=True):
    """Max-gate net with sup_[0,1] |h - x^2| = 1/(8 prod(d_l)^2), certified exactly."""
    p = quadratic_params(widths, positive)
    net = _hycnn(1, list(widths), p, meta={"construction": "quadratic"})
    DL = float(np.prod(widths))
    claimed = (1.0 / (4 * DL * DL)) if positive else 1.0 / (8 * DL * DL)
    cert = None
    if certify:
        pwa = pwa_of_network(net, 0.0, 1.0)
        cert = ConstructionCertificate("x^2", list(widths), claimed,
                                       sup_error_vs_quadratic(pwa), "exact-per-piece",
                                       {"pieces": pwa.n_pieces})
    return net, cert


def build_quadratic_width2(L):
    """Width-2 net caching the sawtooth iterates; sup error exactly 2^(-2L-3).

    Hidden layer m holds (2^(1-2m) psi^m + S_(m-1), S_(m-1)) with
    psi(u) = |2u - 1| and S_k = sum_(i<=k) 4^(-i) psi^i.
    """
    L = int(L)
    if L < 1:
        raise ContractViolation("L must be >= 1")
    p = {"0.W1": np.array([[1.0], [0.0]]), "0.b1": np.array([-0.5, 0.0]),
         "0.W2": np.array([[-1.0], [0.0]]), "0.b2": np.array([0.5, 0.0])}
    A = np.array([[0.5, 0.5], [0.5, 0.5]])
    Dm = np.array([[0.5, -0.5], [0.0, 0.0]])
    for l in range(1, L):
        c = 2.0 ** (-2 * l - 1)
        p.update({f"{l}.V1": A + Dm, f"{l}.W1": np.zeros((2, 1)), f"{l}.b1": np.array([-c, 0.0]),
                  f"{l}.V2": A - Dm, f"{l}.W2": np.zeros((2, 1)), f"{l}.b2": np.array([c, 0.0])})
    p["out.V"] = np.array([[0.5, 0.5]])
    p["out.W"] = np.array([[1.0]])
    p["out.b"] = np.array([-sum(4.0 ** -k for k in range(1, L + 1)) - 2.0 ** (-2 * L - 3)])
    net = _hycnn(1, [2] * L, p, meta={"construction": "quadratic-width2"})
    pwa = pwa_of_network(net, 0.0, 1.0)
    cert = ConstructionCertificate("x^2", [2] * L, 2.0 ** (-2 * L - 3),
                                   sup_error_vs_quadratic(pwa), "exact-per-piece",
                                   {"pieces": pwa.n_pieces})
    return net, cert


# ---- composition and homogenization ---------------------------------------

def pad_widths(net, widths):
    """Same function with extra inactive neurons (both lanes zero)."""
    widths = [int(w) for w in widths]
    if len(widths) != net.depth or any(w < o for w, o in zip(widths, net.widths)):
        raise ContractViolation("pad_widths can only grow existing layers")
    P = _lanes(net)
    d = net.input_dim
    q = {}
    for l, (w, o) in enumerate(zip(widths, net.widths)):
        for k in (1, 2):
            q[f"{l}.W{k}"] = np.zeros((w, d))
            q[f"{l}.W{k}"][:o] = P[f"{l}.W{k}"]
            q[f"{l}.b{k}"] = np.zeros(w)
            q[f"{l}.b{k}"][:o] = P[f"{l}.b{k}"]
            if l > 0:
                q[f"{l}.V{k}"] = np.zeros((w, widths[l - 1]))
                q[f"{l}.V{k}"][:o, :net.widths[l - 1]] = P[f"{l}.V{k}"]
    q["out.V"] = np.zeros((1, widths[-1]))
    q["out.V"][0, :net.widths[-1]] = P["out.V"][0]
    q["out.W"] = P["out.W"].copy()
    q["out.b"] = P["out.b"].copy()
    return _hycnn(d, widths, q, meta=net.meta)


def compose_hycnn(g, h):
    """Single net computing x -> h(g(x), x).

    h takes (y, x) with y in input slot 0. Its weights on that slot must be
    non-negative since they become hidden-to-hidden weights. g's value rides
    along in one extra neuron per h layer (max(y, y) = y).
    """
    d = g.input_dim
    if h.input_dim != d + 1:
        raise ContractViolation(f"h must take {d + 1} inputs (g-slot first), got {h.input_dim}")
    G, H = _lanes(g), _lanes(h)
    slot = [H[f"{l}.W{k}"][:, 0] for l in range(h.depth) for k in (1, 2)] + [H["out.W"][:, 0]]
    if min(float(s.min()) for s in slot) < 0:
        raise ContractViolation("h has a negative weight on the g-slot")
    gV, gW, gb = G["out.V"], G["out.W"], G["out.b"]
    p = {k: v.copy() for k, v in G.items() if not k.startswith("out.")}
    L1 = g.depth
    for l in range(h.depth):
        t = L1 + l
        for k in (1, 2):
            Wk = H[f"{l}.W{k}"]
            M, N, c = Wk[:, :1], Wk[:, 1:], H[f"{l}.b{k}"]
            if l == 0:
                p[f"{t}.V{k}"] = np.vstack([M @ gV, gV])
                p[f"{t}.W{k}"] = np.vstack([M @ gW + N, gW])
                p[f"{t}.b{k}"] = np.concatenate([M[:, 0] * gb[0] + c, gb])
            else:
                Hk = H[f"{l}.V{k}"]
                top = np.hstack([Hk, M])
                bot = np.zeros((1, top.shape[1]))
                bot[0, -1] = 1.0
                p[f"{t}.V{k}"] = np.vstack([top, bot])
                p[f"{t}.W{k}"] = np.vstack([N, np.zeros((1, d))])
                p[f"{t}.b{k}"] = np.concatenate([c, [0.0]])
    p["out.V"] = np.hstack([H["out.V"], H["out.W"][:, :1]])
    p["out.W"] = H["out.W"][:, 1:].copy()
    p["out.b"] = H["out.b"].copy()
    widths = list(g.widths) + [w + 1 for w in h.widths]
    return _hycnn(d, widths, p, meta={"construction": "composition"})


def lift_first_input(h, extra):
    """Treat h(y) as a function of (y, x_1..x_extra) that ignores x."""
    P = _lanes(h)
    p = dict(P)
    for l in range(h.depth):
        for k in (1, 2):
            p[f"{l}.W{k}"] = np.hstack([P[f"{l}.W{k}"], np.zeros((h.widths[l], extra))])
    p["out.W"] = np.hstack([P["out.W"], np.zeros((1, extra))])
    return _hycnn(h.input_dim + extra, list(h.widths), p)


def homogenize(h):
    """Two-input (for univariate h) net with h~(u y, y) = y h(u) for y >= 0.

    Every bias turns into the coefficient of the last input.
    """
    P = _lanes(h)
    p = {}
    for l in range(h.depth):
        for k in (1, 2):
            p[f"{l}.W{k}"] = np.hstack([P[f"{l}.W{k}"], P[f"{l}.b{k}"][:, None]])
            p[f"{l}.b{k}"] = np.zeros(h.widths[l])
            if l > 0:
                p[f"{l}.V{k}"] = P[f"{l}.V{k}"]
    p["out.V"] = P["out.V"]
    p["out.W"] = np.hstack([P["out.W"], P["out.b"][:, None]])
    p["out.b"] = np.zeros(1)
    return _hycnn(h.input_dim + 1, list(h.widths), p, meta={"construction": "homogenized"})


# ---- monomials --------------------------------------------------------------

def monomial_digits(n):
    """(k, [b_1..b_(k-1)]) with k = ceil(log2 n) and 2^k - n = sum b_i 2^(i-1)."""
    if n < 2:
        raise ContractViolation("n must be >= 2")
    k = int(math.ceil(math.log2(n)))
    r = 2 ** k - n
    return k, [(r >> (i - 1)) & 1 for i in range(1, k)]


def _grid_sup(fn, target, extra_points=(), n=100_001):
    x = np.concatenate([np.linspace(0.0, 1.0, n), np.asarray(extra_points, dtype=float)])
    return float(np.max(np.abs(fn(x[:, None]) - target(x))))


def build_monomial_hycnn(n, L, m, grid=100_001):
    """Max-gate net of ceil(log2 n) L layers, width m, approximating x^n on [0, 1].

    Starts from the positive quadratic (width m - 1) and applies, for the
    binary digits b of 2^k - n from high to low, either f -> f^2 (b = 0,
    compose with the quadratic) or f -> f^2 / x (b = 1, compose with the
    homogenized quadratic at (f(x), x)). Each composed block has m - 1
    quadratic neurons plus the carried value; the first block is padded.
    """
    n, L, m = int(n), int(L), int(m)
    if m < 3 or m % 2 == 0:
        raise ContractViolation("m must be odd and >= 3")
    if L < 1:
        raise ContractViolation("L must be >= 1")
    k, digits = monomial_digits(n)
    quad, _ = build_quadratic_hycnn([m - 1] * L, positive=True, certify=False)
    sq = lift_first_input(quad, 1)
    hom = homogenize(quad)
    cur = pad_widths(quad, [m] * L)
    power = 2
    iterates = [(cur, power)]
    for b in reversed(digits):
        cur = compose_hycnn(cur, hom if b else sq)
        power = 2 * power - b
        iterates.append((cur, power))
    if power != n:
        raise AssertionError(f"digit bookkeeping reached x^{power}, wanted x^{n}")
    M = float((m - 1) ** L)
    knots = np.arange(0, int(M) + 1) / M
    claimed = (n / 2.0) * (m - 1.0) ** (-2 * L)
    measured = _grid_sup(cur.forward, lambda x: x ** n, knots, grid)
    xs = np.linspace(0.0, 1.0, 10_001)
    positivity = []
    steps = []
    for i, (h, pw) in enumerate(iterates, start=1):
        v = h.forward(xs[:, None])
        positivity.append(bool(np.all(v >= -1e-10) and np.all(v <= xs + 1e-10)))
        err = _grid_sup(h.forward, lambda x, pw=pw: x ** pw, knots, grid)
        steps.append({"power": pw, "sup_error": err, "bound": (2 ** i - 1) / (4 * M * M)})
    method = f"grid({grid}+{len(knots)})"
    extra = {"n": n, "L": L, "m": m, "digits": digits, "positivity": positivity,
             "iterates": steps}
    if n == 2:
        extra["exact"] = sup_error_vs_quadratic(pwa_of_network(cur, 0.0, 1.0))
    net = cur
    net.meta = {"construction": "monomial", "n": n}
    cert = ConstructionCertificate(f"x^{n}", list(net.widths), claimed, measured, method, extra)
    return net, cert


# ---- multivariate quadratic -------------------------------------------------

def _kappa(n):
    return n if n % 2 == 0 else n - 1


def multiquad_pairs(d, L, m):
    """Valid (p, q, bound) triples; q is the smallest with p q >= d."""
    out = []
    for p in range(1, L + 1):
        q = -(-d // p)
        B = L // p
        base = (m - 1) // q - 1
        if B < 1 or _kappa((m - 1) // q) < 2 or base < 1:
            continue
        out.append((p, q, d / 8.0 * float(base) ** (-2 * B)))
    return out


def multiquad_bound(d, L, m, p, q):
    base = (m - 1) // q - 1
    return d / 8.0 * float(base) ** (-2 * (L // p))


def build_multivariate_quadratic(d, L, m, pq=None, n_random=100_000, rng=None):
    """Max-gate net on R^d, L layers of width m, approximating ||x||^2 on [0,1]^d.

    Coordinates are split into p blocks of q; each block runs q parallel
    copies of the univariate quadratic (width kappa(floor((m-1)/q)),
    floor(L/p) layers) and one accumulator neuron max(acc + sum g, -d)
    collects the finished copies.
    """
    d, L, m = int(d), int(L), int(m)
    if m < 3:
        raise ContractViolation("m must be >= 3")
    pairs = multiquad_pairs(d, L, m)
    if pq is None:
        if not pairs:
            raise ContractViolation(f"no valid (p, q) for d={d}, L={L}, m={m}")
        p, q, _ = min(pairs, key=lambda t: t[2])
    else:
        p, q = int(pq[0]), int(pq[1])
        if p * q < d or L // p < 1 or _kappa((m - 1) // q) < 2 or (m - 1) // q - 1 < 1:
            raise ContractViolation(f"(p, q) = {pq} is not valid for d={d}, L={L}, m={m}")
    B = L // p
    kw = _kappa((m - 1) // q)
    g, _ = build_quadratic_hycnn([kw] * B, certify=False)
    G = _lanes(g)
    acc = m - 1

    def coords(j):
        return [(c, j * q + c) for c in range(q) if j * q + c < d]

    def rows(c):
        return slice(c * kw, (c + 1) * kw)

    prm = {}
    for t in range(L):
        j, s = divmod(t, B)
        for k in (1, 2):
            W = np.zeros((m, d))
            bb = np.zeros(m)
            V = np.zeros((m, m)) if t > 0 else None
            if j < p:
                for c, i in coords(j):
                    W[rows(c), i] = G[f"{s}.W{k}"][:, 0]
                    bb[rows(c)] = G[f"{s}.b{k}"]
                    if s > 0:
                        V[rows(c), rows(c)] = G[f"{s}.V{k}"]
            if k == 1:
                if t > 0:
                    V[acc, acc] = 1.0
                    jp, sp = divmod(t - 1, B)
                    if sp == B - 1 and jp < p:
                        for c, i in coords(jp):
                            V[acc, rows(c)] += G["out.V"][0]
                            W[acc, i] += G["out.W"][0, 0]
                            bb[acc] += G["out.b"][0]
            else:
                bb[acc] = -float(d)
            prm[f"{t}.W{k}"] = W
            prm[f"{t}.b{k}"] = bb
            if V is not None:
                prm[f"{t}.V{k}"] = V
    oV = np.zeros((1, m))
    oV[0, acc] = 1.0
    oW = np.zeros((1, d))
    ob = np.zeros(1)
    jl, sl = divmod(L - 1, B)
    if sl == B - 1 and jl < p:
        for c, i in coords(jl):
            oV[0, rows(c)] += G["out.V"][0]
            oW[0, i] += G["out.W"][0, 0]
            ob[0] += G["out.b"][0]
    prm.update({"out.V": oV, "out.W": oW, "out.b": ob})
    net = _hycnn(d, [m] * L, prm, meta={"construction": "multiquad", "p": p, "q": q})

    rng = rng or Rng(0)
    X = rng.child(0, "multiquad").uniform(0.0, 1.0, (n_random, d))
    tt = np.linspace(0.0, 1.0, 10_001)
    X = np.vstack([X, tt[:, None] * np.ones((1, d))])
    measured = float(np.max(np.abs(net.forward(X) - np.sum(X * X, axis=1))))
    claimed = multiquad_bound(d, L, m, p, q)
    cert = ConstructionCertificate("||x||^2", [m] * L, claimed, measured,
                                   f"grid({n_random}+diag{len(tt)})",
                                   {"d": d, "p": p, "q": q, "inner_width": kw, "inner_depth": B,
                                    "inner_bound": d / (8.0 * kw ** (2 * B))})
    return net, cert
