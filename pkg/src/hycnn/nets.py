"""Convex network architectures: HyCNN, ICNN, ICNNq, GroupMax and MLP.

A network with hidden widths (d_1, ..., d_L) computes

    z_1     = gate(W_0^k x + b_0^k)                       k = 1, 2
    z_{l+1} = gate(V_l^k z_l + W_l^k x + b_l^k)
    y       = V_L z_L + W_L x + b_L

Two-lane gates (max, log-sum-exp) read both lanes; single gates (ReLU,
LeakyReLU, Softplus) read lane 1 only, which is the ICNN special case.
Parameters live in one flat dict keyed like "2.V1" or "out.W"; the values
are raw arrays, and hidden-to-hidden weights pass through softplus when
`reparam` is set.
"""
import json
import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ContractViolation, Rng, UnsupportedGate, lse_gate, sample_lognormal,
    sigmoid, softplus, softplus_inverse,
)

ARCHS = ("hycnn", "icnn", "icnnq", "groupmax", "mlp")


@dataclass
class Gate:
    """Gating activation.

    kind is one of "max", "lse" (two lanes) or "relu", "leaky_relu",
    "softplus" (single lane).
    """
    kind: str = "max"
    tau: float = 1.0
    alpha: float = 0.2

    def __post_init__(self):
        if self.kind not in ("max", "lse", "relu", "leaky_relu", "softplus"):
            raise ContractViolation(f"unknown gate {self.kind!r}")
        if self.kind in ("lse", "softplus") and not self.tau > 0:
            raise ContractViolation("smooth gates need tau > 0")
        if self.kind == "leaky_relu" and not 0 < self.alpha < 1:
            raise ContractViolation("LeakyReLU needs alpha in (0, 1)")

    @property
    def lanes(self) -> int:
        return 2 if self.kind in ("max", "lse") else 1

    @property
    def smooth(self) -> bool:
        return self.kind in ("lse", "softplus")

    @property
    def piecewise_affine(self) -> bool:
        return self.kind in ("max", "relu", "leaky_relu")

    def apply(self, a1, a2=None):
        """Gate value and first derivatives (d1 w.r.t. lane 1, d2 w.r.t. lane 2).

        Max ties go to lane 1.
        """
        k = self.kind
        if k == "max":
            w1 = (a1 >= a2).astype(np.float64)
            return np.where(w1 > 0, a1, a2), w1, 1.0 - w1
        if k == "lse":
            z, w1 = lse_gate(a1, a2, self.tau)
            return z, w1, 1.0 - w1
        if k == "relu":
            d = (a1 > 0).astype(np.float64)
            return a1 * d, d, None
        if k == "leaky_relu":
            d = np.where(a1 > 0, 1.0, self.alpha)
            return a1 * d, d, None
        s = sigmoid(a1 / self.tau)
        return self.tau * softplus(a1 / self.tau), s, None

    def curvature(self, d1):
        """Second derivative from the first-derivative cache.

        For lse the Hessian is c * [[1, -1], [-1, 1]] with c returned here;
        for softplus it is the scalar second derivative.
        """
        if not self.smooth:
            raise UnsupportedGate(
                f"gate {self.kind!r} has zero curvature almost everywhere; "
                "use 'lse' or 'softplus'")
        return d1 * (1.0 - d1) / self.tau

    def to_dict(self):
        return {"kind": self.kind, "tau": self.tau, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d.get("tau", 1.0)), float(d.get("alpha", 0.2)))


def MaxGate():
    return Gate("max")


def LogSumExpGate(tau):
    return Gate("lse", tau=tau)


def SingleGate(act="relu", alpha=0.2, tau=1.0):
    return Gate(act, tau=tau, alpha=alpha)


def parse_gate(text: str) -> Gate:
    """'max', 'lse:10', 'relu', 'leaky_relu:0.2', 'softplus:1'."""
    name, _, arg = text.partition(":")
    if name in ("lse", "softplus"):
        return Gate(name, tau=float(arg) if arg else 1.0)
    if name == "leaky_relu":
        return Gate(name, alpha=float(arg) if arg else 0.2)
    return Gate(name)


class Tape:
    """Forward record: inputs, per-layer pre-activations and gate derivatives."""

    def __init__(self, X, version, tau):
        self.X = X
        self.version = version
        self.tau = tau
        self.a = []      # list of (a1, a2) per hidden layer
        self.z = []      # hidden states z_1..z_L
        self.d = []      # gate derivatives (d1, d2)
        self.q = None    # Wq x for ICNNq
        self.y = None


class ConvexNet:
    """Layered parameter container plus forward and input-gradient evaluation."""

    def __init__(self, arch, input_dim, widths, gate, params, reparam=False,
                 nonneg_V=True, frozen=(), meta=None):
        if arch not in ARCHS:
            raise ContractViolation(f"unknown arch {arch!r}")
        if len(widths) == 0:
            raise ContractViolation("need at least one hidden layer")
        self.arch = arch
        self.input_dim = int(input_dim)
        self.widths = tuple(int(w) for w in widths)
        self.gate = gate
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self.nonneg_V = bool(nonneg_V) and arch != "mlp"
        self.reparam = bool(reparam) and self.nonneg_V
        self.frozen = set(frozen)
        self.meta = dict(meta or {})
        self.version = 0
        self._eff = None
        self._check_shapes()
        if self.nonneg_V and not self.reparam:
            for k in self.v_names():
                if np.any(self.params[k] < 0):
                    raise ContractViolation(f"{k} has negative entries")

    # ---- structure -------------------------------------------------------
    @property
    def depth(self):
        return len(self.widths)

    def lanes(self):
        return (1, 2) if self.gate.lanes == 2 else (1,)

    def v_names(self):
        return [k for k in self.params if k.split(".")[1].startswith("V")]

    def _check_shapes(self):
        d = self.input_dim
        prev = None
        for l, w in enumerate(self.widths):
            for k in self.lanes():
                if f"{l}.W{k}" in self.params:
                    _expect(self.params, f"{l}.W{k}", (w, d))
                _expect(self.params, f"{l}.b{k}", (w,))
                if l > 0:
                    _expect(self.params, f"{l}.V{k}", (w, prev))
            prev = w
        _expect(self.params, "out.V", (1, prev))
        _expect(self.params, "out.b", (1,))
        if "out.W" in self.params:
            _expect(self.params, "out.W", (1, d))
        if self.arch == "icnnq":
            _expect(self.params, "q.W", (self.widths[0], d))

    def n_params(self):
        return int(sum(v.size for k, v in self.params.items() if k not in self.frozen))

    def trainable(self):
        return [k for k in self.params if k not in self.frozen]

    # ---- parameters ------------------------------------------------------
    def bump(self):
        """Mark parameters as changed (invalidates tapes and caches)."""
        self.version += 1
        self._eff = None

    def effective(self):
        """Dict of effective weights (softplus applied to V when reparam)."""
        if self._eff is None:
            eff = dict(self.params)
            if self.reparam:
                for k in self.v_names():
                    eff[k] = softplus(self.params[k])
            self._eff = eff
        return self._eff

    def set_tau(self, tau):
        if self.gate.smooth:
            self.gate.tau = float(tau)

    def copy(self):
        net = ConvexNet(self.arch, self.input_dim, self.widths,
                        Gate(self.gate.kind, self.gate.tau, self.gate.alpha),
                        {k: v.copy() for k, v in self.params.items()},
                        self.reparam, self.nonneg_V, self.frozen, self.meta)
        return net

    def min_effective_V(self):
        eff = self.effective()
        return min((float(eff[k].min()) for k in self.v_names()), default=0.0)

    # ---- evaluation ------------------------------------------------------
    def _prep(self, x):
        X = np.asarray(x, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ContractViolation(
                f"input of shape {np.shape(x)} for input_dim {self.input_dim}")
        return X, single

    def run(self, X) -> Tape:
        """Batched forward pass returning the full tape."""
        X, _ = self._prep(X)
        P = self.effective()
        tape = Tape(X, self.version, self.gate.tau)
        z = None
        for l in range(self.depth):
            pre = []
            for k in self.lanes():
                a = P[f"{l}.b{k}"] + 0.0
                Wk = P.get(f"{l}.W{k}")
                if Wk is not None:
                    a = a + X @ Wk.T
                if l > 0:
                    a = a + z @ P[f"{l}.V{k}"].T
                pre.append(a)
            if l == 0 and self.arch == "icnnq":
                tape.q = X @ P["q.W"].T
                sq = tape.q * tape.q
                pre = [a + sq for a in pre]
            if len(pre) == 2:
                z, d1, d2 = self.gate.apply(pre[0], pre[1])
                tape.a.append((pre[0], pre[1]))
            else:
                z, d1, d2 = self.gate.apply(pre[0])
                tape.a.append((pre[0], None))
            tape.z.append(z)
            tape.d.append((d1, d2))
        y = z @ P["out.V"][0] + P["out.b"][0]
        if "out.W" in P:
            y = y + X @ P["out.W"][0]
        tape.y = y
        return tape

    def forward(self, x):
        X, single = self._prep(x)
        y = self.run(X).y
        return float(y[0]) if single else y

    __call__ = forward

    def input_gradient(self, x):
        """Gradient of the output w.r.t. the input, one reverse sweep."""
        X, single = self._prep(x)
        tape = self.run(X)
        G = self.input_gradient_from_tape(tape)
        return G[0] if single else G

    def input_gradient_from_tape(self, tape):
        P = self.effective()
        n = tape.X.shape[0]
        zbar = np.broadcast_to(P["out.V"][0], (n, self.widths[-1]))
        G = np.zeros((n, self.input_dim))
        if "out.W" in P:
            G += P["out.W"][0]
        for l in range(self.depth - 1, -1, -1):
            d1, d2 = tape.d[l]
            abar = [zbar * d1] + ([zbar * d2] if d2 is not None else [])
            nz = None
            for k, ab in zip(self.lanes(), abar):
                Wk = P.get(f"{l}.W{k}")
                if Wk is not None:
                    G += ab @ Wk
                if l > 0:
                    t = ab @ P[f"{l}.V{k}"]
                    nz = t if nz is None else nz + t
            if l == 0 and self.arch == "icnnq":
                s = abar[0] if len(abar) == 1 else abar[0] + abar[1]
                G += (2.0 * tape.q * s) @ P["q.W"]
            zbar = nz
        return G

    # ---- serialization ---------------------------------------------------
    def to_dict(self):
        eff = self.effective()
        layers = []
        for l in range(self.depth):
            layer = {}
            for name in ("V1", "V2", "W1", "W2", "b1", "b2"):
                key = f"{l}.{name}"
                layer[name] = eff[key].tolist() if key in eff else None
            layers.append(layer)
        out = {n: (eff[f"out.{n}"].tolist() if f"out.{n}" in eff else None)
               for n in ("V", "W", "b")}
        doc = {
            "arch": self.arch,
            "gate": self.gate.to_dict(),
            "dims": {"input_dim": self.input_dim, "widths": list(self.widths)},
            "layers": layers,
            "out": out,
            "reparam": self.reparam,
            "nonneg_V": self.nonneg_V,
            "frozen": sorted(self.frozen),
            "meta": self.meta,
        }
        if "q.W" in eff:
            doc["Wq"] = eff["q.W"].tolist()
        if self.reparam:
            # exact pre-images so reloading does not round through softplus^-1
            doc["raw_V"] = {k: self.params[k].tolist() for k in self.v_names()}
        return doc

    def to_json(self, path=None, meta=None):
        doc = self.to_dict()
        if meta:
            doc["meta"] = {**doc["meta"], **meta}
        text = json.dumps(doc)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, doc):
        params = {}
        for l, layer in enumerate(doc["layers"]):
            for name, val in layer.items():
                if val is not None:
                    params[f"{l}.{name}"] = np.array(val, dtype=np.float64)
        for name, val in doc["out"].items():
            if val is not None:
                params[f"out.{name}"] = np.array(val, dtype=np.float64)
        if "Wq" in doc:
            params["q.W"] = np.array(doc["Wq"], dtype=np.float64)
        reparam = doc.get("reparam", False)
        if reparam:
            raw = doc.get("raw_V", {})
            for k in list(params):
                if k.split(".")[1].startswith("V"):
                    params[k] = (np.array(raw[k]) if k in raw
                                 else softplus_inverse(params[k]))
        return cls(doc["arch"], doc["dims"]["input_dim"], doc["dims"]["widths"],
                   Gate.from_dict(doc["gate"]), params, reparam=reparam,
                   nonneg_V=doc.get("nonneg_V", True), frozen=doc.get("frozen", ()),
                   meta=doc.get("meta"))

    @classmethod
    def from_json(cls, text_or_path):
        text = text_or_path
        if not text.lstrip().startswith("{"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def _expect(params, key, shape):
    if key not in params:
        raise ContractViolation(f"missing parameter {key}")
    if params[key].shape != shape:
        raise ContractViolation(f"{key} has shape {params[key].shape}, expected {shape}")


# ---- initializers --------------------------------------------------------

def hycnn_v_mean(width):
    return 1.0 / math.sqrt(width * width + (1.0 - 1.0 / math.pi) * width)


def hycnn_bias(width):
    return -math.sqrt(width / (2 * math.pi * width + 2 * math.pi - 2))


def _store_V(eff, reparam):
    return softplus_inverse(eff) if reparam else eff


def init_hycnn(shape, input_dim, rng: Rng, gate=None, reparam=True, arch="hycnn"):
    """HyCNN initializer.

    Hidden-to-hidden weights are log-normal with mean
    (w^2 + (1 - 1/pi) w)^(-1/2) and variance 1/(4w) for fan-in width w, skip
    weights N(0, 1/(4d)), hidden biases the constant
    -sqrt(w / (2 pi w + 2 pi - 2)); the output layer uses the same scheme.
    The first layer follows LeCun: W_0 and b_0 entries N(0, 1/d).
    The effective V is sampled; with reparam the softplus pre-image is stored.
    """
    gate = gate or MaxGate()
    shape = list(shape)
    if not shape:
        raise ContractViolation("shape must be non-empty")
    d = input_dim
    lanes = (1, 2) if gate.lanes == 2 else (1,)
    p = {}
    for k in lanes:
        p[f"0.W{k}"] = rng.child(0, f"W{k}").normal(0.0, math.sqrt(1.0 / d), (shape[0], d))
        p[f"0.b{k}"] = rng.child(0, f"b{k}").normal(0.0, math.sqrt(1.0 / d), shape[0])
    for l in range(1, len(shape) + 1):
        fan = shape[l - 1]
        rows = shape[l] if l < len(shape) else 1
        key = str(l) if l < len(shape) else "out"
        names = [f"{key}.V{k}" for k in lanes] if l < len(shape) else ["out.V"]
        wnames = [f"{key}.W{k}" for k in lanes] if l < len(shape) else ["out.W"]
        bnames = [f"{key}.b{k}" for k in lanes] if l < len(shape) else ["out.b"]
        for vn, wn, bn in zip(names, wnames, bnames):
            role = vn.split(".")[1]
            V = sample_lognormal(rng.child(l, role), hycnn_v_mean(fan), 1.0 / (4 * fan), (rows, fan))
            p[vn] = _store_V(V, reparam)
            p[wn] = rng.child(l, wn.split(".")[1]).normal(0.0, math.sqrt(1.0 / (4 * d)), (rows, d))
            p[bn] = np.full(rows, hycnn_bias(fan))
    return ConvexNet(arch, d, shape, gate, p, reparam=reparam)


def init_groupmax(shape, input_dim, rng: Rng, gate=None, reparam=True):
    """HyCNN scheme with all skip weights past the first layer zeroed and frozen."""
    net = init_hycnn(shape, input_dim, rng, gate, reparam, arch="groupmax")
    frozen = []
    for k in list(net.params):
        layer, name = k.split(".")
        if name.startswith("W") and layer != "0":
            net.params[k][:] = 0.0
            frozen.append(k)
    net.frozen = set(frozen)
    net.bump()
    return net


def hoedt_constants(n):
    """(D, mu_W, sigma_W^2, mu_b) for fan-in n."""
    D = 6 * (math.pi - 1) + (n - 1) * (3 * math.sqrt(3) + 2 * math.pi - 6)
    return D, math.sqrt(6 * math.pi / (n * D)), 1.0 / n, -math.sqrt(3 * n / D)


def init_icnn_hoedt(shape, input_dim, rng: Rng, weight_style="lognormal",
                    gate=None, quadratic=False, reparam=None):
    """ICNN / ICNNq initializer with moment-matched hidden-to-hidden weights.

    weight_style "lognormal" gives nonnegative V (potentials, stored through
    softplus^-1 when reparam); "gaussian" draws V ~ N(mu_W, sigma_W^2)
    unconstrained (critics). Skip weights N(0, 1/n), hidden biases mu_b,
    output bias 0, quadratic skip N(0, 1/d).
    """
    gate = gate or SingleGate("relu")
    if gate.lanes != 1:
        raise ContractViolation("ICNN uses a single-lane gate")
    shape = list(shape)
    if not shape:
        raise ContractViolation("shape must be non-empty")
    if weight_style not in ("lognormal", "gaussian"):
        raise ContractViolation(f"unknown weight_style {weight_style!r}")
    constrained = weight_style == "lognormal"
    if reparam is None:
        reparam = constrained
    d = input_dim
    p = {}
    _, _, s2, mub = hoedt_constants(d)
    p["0.W1"] = rng.child(0, "W1").normal(0.0, math.sqrt(s2), (shape[0], d))
    p["0.b1"] = np.full(shape[0], mub)
    for l in range(1, len(shape) + 1):
        fan = shape[l - 1]
        rows = shape[l] if l < len(shape) else 1
        key = str(l) if l < len(shape) else "out"
        vn = f"{key}.V1" if l < len(shape) else "out.V"
        wn = f"{key}.W1" if l < len(shape) else "out.W"
        bn = f"{key}.b1" if l < len(shape) else "out.b"
        _, muW, s2, mub = hoedt_constants(fan)
        vr = rng.child(l, "V1")
        if constrained:
            p[vn] = _store_V(sample_lognormal(vr, muW, s2, (rows, fan)), reparam)
        else:
            p[vn] = vr.normal(muW, math.sqrt(s2), (rows, fan))
        p[wn] = rng.child(l, "W1").normal(0.0, math.sqrt(s2), (rows, d))
        p[bn] = np.full(rows, mub) if l < len(shape) else np.zeros(1)
    arch = "icnn"
    if quadratic:
        arch = "icnnq"
        p["q.W"] = rng.child(0, "Wq").normal(0.0, math.sqrt(1.0 / d), (shape[0], d))
    return ConvexNet(arch, d, shape, gate, p, reparam=reparam and constrained,
                     nonneg_V=constrained)


def init_mlp(shape, input_dim, rng: Rng, gate=None):
    """Unconstrained feed-forward net, no skips; Uniform(+-1/sqrt(fan_in))."""
    gate = gate or SingleGate("relu")
    shape = list(shape)
    if not shape:
        raise ContractViolation("shape must be non-empty")
    lanes = (1, 2) if gate.lanes == 2 else (1,)
    p = {}
    fan = input_dim
    for l in range(len(shape) + 1):
        rows = shape[l] if l < len(shape) else 1
        key = str(l) if l < len(shape) else "out"
        bound = 1.0 / math.sqrt(fan)
        names = lanes if l < len(shape) else ("",)
        for k in names:
            wname = (f"{key}.W{k}" if l == 0 else f"{key}.V{k}")
            r = rng.child(l, f"M{k}")
            p[wname] = r.uniform(-bound, bound, (rows, fan))
            p[f"{key}.b{k}"] = rng.child(l, f"b{k}").uniform(-bound, bound, rows)
        fan = rows
    return ConvexNet("mlp", input_dim, shape, gate, p, nonneg_V=False)


def build_net(arch, widths, input_dim, rng, gate=None, weight_style="lognormal"):
    """Dispatch on architecture name with the default initializer."""
    if arch == "hycnn":
        return init_hycnn(widths, input_dim, rng, gate or MaxGate())
    if arch == "groupmax":
        return init_groupmax(widths, input_dim, rng, gate or MaxGate())
    if arch in ("icnn", "icnnq"):
        return init_icnn_hoedt(widths, input_dim, rng, weight_style,
                               gate or SingleGate("relu"), quadratic=arch == "icnnq")
    if arch == "mlp":
        return init_mlp(widths, input_dim, rng, gate or SingleGate("relu"))
    raise ContractViolation(f"unknown arch {arch!r}")


def check_convexity(net: ConvexNet, rng: Rng, trials=10_000, box=10.0, batch=2000):
    """Midpoint-type convexity test on random (x1, x2, t) triples.

    Returns a dict with the max violation of
    f(t x1 + (1-t) x2) <= t f(x1) + (1-t) f(x2) and the tolerance used
    (1e-9 times the largest |f| seen, at least 1e-9).
    """
    worst = 0.0
    scale = 1.0
    done = 0
    d = net.input_dim
    while done < trials:
        m = min(batch, trials - done)
        x1 = rng.uniform(-box, box, (m, d))
        x2 = rng.uniform(-box, box, (m, d))
        t = rng.uniform(0.0, 1.0, (m, 1))
        f1 = net.forward(x1)
        f2 = net.forward(x2)
        fm = net.forward(t * x1 + (1 - t) * x2)
        gap = fm - (t[:, 0] * f1 + (1 - t[:, 0]) * f2)
        worst = max(worst, float(gap.max()))
        scale = max(scale, float(np.abs(np.concatenate([f1, f2, fm])).max()))
        done += m
    tol = 1e-9 * scale
    return {"max_violation": max(worst, 0.0), "tolerance": tol,
            "passed": worst <= tol, "trials": trials}
