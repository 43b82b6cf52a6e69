"""Reverse-mode gradients, Adam, schedules and the regression trainer."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .nets import ConvexNet, Tape
from .tensor import ContractViolation, DivergenceError, Rng, sigmoid


# ---- gradients -----------------------------------------------------------

def _check_tape(net, tape):
    if tape.version != net.version or tape.tau != net.gate.tau:
        raise ContractViolation(
            f"stale tape: recorded at version {tape.version}, net is at {net.version}")


def _chain_reparam(net, grads):
    if net.reparam:
        for k in net.v_names():
            if k in grads:
                grads[k] = grads[k] * sigmoid(net.params[k])
    for k in net.frozen:
        if k in grads:
            grads[k] = np.zeros_like(grads[k])
    return grads


def _weights(upstream, n):
    c = np.asarray(upstream, dtype=np.float64)
    return np.full(n, float(c)) if c.ndim == 0 else c


def param_gradients(net: ConvexNet, tape: Tape, upstream=1.0):
    """Gradient of sum_i c_i f(x_i) w.r.t. every raw parameter.

    `upstream` is a scalar or one weight per recorded sample. With reparam
    the softplus factor is applied to the V gradients.
    """
    _check_tape(net, tape)
    P = net.effective()
    X = tape.X
    c = _weights(upstream, X.shape[0])
    zL = tape.z[-1]
    g = {"out.V": (c @ zL)[None, :], "out.b": np.array([c.sum()])}
    if "out.W" in P:
        g["out.W"] = (c @ X)[None, :]
    zbar = c[:, None] * P["out.V"][0]
    for l in range(net.depth - 1, -1, -1):
        d1, d2 = tape.d[l]
        abars = [zbar * d1] + ([zbar * d2] if d2 is not None else [])
        nz = None
        for k, ab in zip(net.lanes(), abars):
            g[f"{l}.b{k}"] = ab.sum(axis=0)
            if f"{l}.W{k}" in P:
                g[f"{l}.W{k}"] = ab.T @ X
            if l > 0:
                g[f"{l}.V{k}"] = ab.T @ tape.z[l - 1]
                t = ab @ P[f"{l}.V{k}"]
                nz = t if nz is None else nz + t
        if l == 0 and net.arch == "icnnq":
            s = abars[0] if len(abars) == 1 else abars[0] + abars[1]
            g["q.W"] = (2.0 * tape.q * s).T @ X
        zbar = nz
    return _chain_reparam(net, g)


def grad_of_input_grad(net: ConvexNet, x, v, upstream=1.0):
    """Gradient w.r.t. raw parameters of sum_i c_i <v_i, grad_x f(x_i)>.

    Forward-over-reverse: the directional derivative <v, grad f(x)> is the
    tangent of a forward pass seeded with v, and its parameter gradient is a
    reverse sweep through that tangent pass. Needs a twice-differentiable
    gate. Returns (grads, value).
    """
    X, _ = net._prep(x)
    V = np.asarray(v, dtype=np.float64).reshape(X.shape)
    tape = net.run(X)
    P = net.effective()
    c = _weights(upstream, X.shape[0])
    curv = [net.gate.curvature(tape.d[l][0]) for l in range(net.depth)]

    # tangent forward
    adots, zdots = [], []
    zdot = None
    qdot = None
    for l in range(net.depth):
        ad = []
        for k in net.lanes():
            t = 0.0
            if f"{l}.W{k}" in P:
                t = V @ P[f"{l}.W{k}"].T
            if l > 0:
                t = t + zdot @ P[f"{l}.V{k}"].T
            ad.append(np.broadcast_to(t, tape.a[l][0].shape).astype(np.float64))
        if l == 0 and net.arch == "icnnq":
            qdot = V @ P["q.W"].T
            ad = [a + 2.0 * tape.q * qdot for a in ad]
        d1, d2 = tape.d[l]
        zdot = d1 * ad[0] + (d2 * ad[1] if d2 is not None else 0.0)
        adots.append(ad)
        zdots.append(zdot)
    value = zdots[-1] @ P["out.V"][0]
    if "out.W" in P:
        value = value + V @ P["out.W"][0]

    # reverse through the tangent pass
    g = {"out.V": (c @ zdots[-1])[None, :], "out.b": np.zeros(1)}
    if "out.W" in P:
        g["out.W"] = (c @ V)[None, :]
    zbar = np.zeros_like(tape.z[-1])
    zdbar = c[:, None] * P["out.V"][0]
    for l in range(net.depth - 1, -1, -1):
        d1, d2 = tape.d[l]
        h = curv[l]
        ad = adots[l]
        if d2 is not None:
            cross = zdbar * h * (ad[0] - ad[1])
            abars = [zbar * d1 + cross, zbar * d2 - cross]
            adbars = [zdbar * d1, zdbar * d2]
        else:
            abars = [zbar * d1 + zdbar * h * ad[0]]
            adbars = [zdbar * d1]
        nz = nzd = None
        for k, ab, adb in zip(net.lanes(), abars, adbars):
            g[f"{l}.b{k}"] = ab.sum(axis=0)
            if f"{l}.W{k}" in P:
                g[f"{l}.W{k}"] = ab.T @ X + adb.T @ V
            if l > 0:
                Vk = P[f"{l}.V{k}"]
                g[f"{l}.V{k}"] = ab.T @ tape.z[l - 1] + adb.T @ zdots[l - 1]
                t, td = ab @ Vk, adb @ Vk
                nz = t if nz is None else nz + t
                nzd = td if nzd is None else nzd + td
        if l == 0 and net.arch == "icnnq":
            S = sum(abars)
            SD = sum(adbars)
            qbar = 2.0 * tape.q * S + 2.0 * qdot * SD
            qdbar = 2.0 * tape.q * SD
            g["q.W"] = qbar.T @ X + qdbar.T @ V
        zbar, zdbar = nz, nzd
    return _chain_reparam(net, g), value


# ---- Adam ----------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, keys=None):
    """Bias-corrected Adam update, in place on `params`."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k in (keys if keys is not None else grads.keys()):
        g = grads[k]
        if g.shape != params[k].shape:
            raise ContractViolation(f"grad shape {g.shape} for {k} {params[k].shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def net_adam_step(net: ConvexNet, grads, state, lr):
    adam_step(net.params, grads, state, lr, keys=[k for k in net.trainable() if k in grads])
    net.bump()


# ---- schedules -----------------------------------------------------------

@dataclass
class Constant:
    v: float

    def value(self, t):
        return self.v


@dataclass
class Cosine:
    """v_min + (v0 - v_min)(1 + cos(pi t / T)) / 2 with v_min = final_ratio * v0."""
    v0: float
    final_ratio: float
    T: int

    def value(self, t):
        t = min(max(t, 0), self.T)
        vmin = self.v0 * self.final_ratio
        return vmin + 0.5 * (self.v0 - vmin) * (1.0 + math.cos(math.pi * t / self.T))


@dataclass
class CyclicCosine:
    """Cosine decay restarted every `cycle_len` steps.

    Cycle c starts at v0 * decay**c, falls to floor_ratio times that by
    fraction `floor_at` of the cycle and stays there until the next restart.
    """
    v0: float
    cycle_len: int
    decay: float
    floor_ratio: float
    floor_at: float
    T: int = None

    def value(self, t):
        if self.T is not None:
            t = min(t, self.T)
        t = max(t, 0)
        c, r = divmod(t, self.cycle_len)
        if r == 0 and c > 0 and t == self.T:
            # t = T closes the last cycle rather than opening a new one
            c, r = c - 1, self.cycle_len
        start = self.v0 * self.decay ** c
        pos = r / self.cycle_len
        if pos >= self.floor_at:
            return start * self.floor_ratio
        w = 0.5 * (1.0 + math.cos(math.pi * pos / self.floor_at))
        return start * (self.floor_ratio + (1.0 - self.floor_ratio) * w)


def schedule_value(s, t):
    return s.value(t)


def schedule_from_dict(d):
    kind = d.get("kind", "constant")
    if kind == "constant":
        return Constant(float(d["v"]))
    if kind == "cosine":
        return Cosine(float(d["v0"]), float(d["final_ratio"]), int(d["T"]))
    if kind == "cyclic":
        return CyclicCosine(float(d["v0"]), int(d["cycle_len"]), float(d["decay"]),
                            float(d["floor_ratio"]), float(d["floor_at"]), d.get("T"))
    raise ContractViolation(f"unknown schedule {kind!r}")


# ---- regression ----------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1000
    lr: object = field(default_factory=lambda: Constant(1e-2))
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    standardize: bool = True
    diverge_at: float = 1e12


class Standardized:
    """Predictor in original units wrapping a net trained on standardized data.

    f(x) = y_mean + y_std * net((x - mean) / std); y_std > 0 keeps convexity.
    """

    def __init__(self, net: ConvexNet, mean, std, y_mean=0.0, y_std=1.0):
        self.net = net
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.y_mean = float(y_mean)
        self.y_std = float(y_std)
        self.input_dim = net.input_dim

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def forward(self, x):
        return self.y_mean + self.y_std * self.net.forward(self.transform(x))

    __call__ = forward

    def input_gradient(self, x):
        return self.y_std * self.net.input_gradient(self.transform(x)) / self.std


def mse(pred, y):
    r = np.asarray(pred) - np.asarray(y)
    return float(np.mean(r * r))


def train_regression(net: ConvexNet, X, y, cfg: TrainConfig = None, rng: Rng = None):
    """Mini-batch Adam on the mean squared error.

    With cfg.standardize, inputs are standardized per coordinate and targets
    by their mean and standard deviation; the returned predictor undoes both.
    Returns (predictor, trace). The trace holds one row per epoch, with
    epoch 0 the loss at initialization; each later row is the mean squared
    error over the samples seen during that epoch (pre-update values), in
    original target units.
    Raises DivergenceError when the loss exceeds cfg.diverge_at or is not
    finite.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n < 1:
        raise ContractViolation("need at least one sample")
    rng = rng or Rng(cfg.seed)
    if cfg.standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        ym, ys = float(y.mean()), float(y.std())
        ys = ys if ys > 0 else 1.0
    else:
        mean = np.zeros(X.shape[1])
        std = np.ones(X.shape[1])
        ym, ys = 0.0, 1.0
    Z = (X - mean) / std
    T = (y - ym) / ys
    bs = min(cfg.batch_size, n)
    state = AdamState(cfg.betas[0], cfg.betas[1], cfg.eps)
    tau = net.gate.tau if net.gate.smooth else float("nan")
    trace = [{"epoch": 0, "train_mse": ys * ys * mse(net.forward(Z), T),
              "lr": cfg.lr.value(0), "tau": tau}]
    shuffler = rng.child(0, "shuffle")
    step = 0
    for ep in range(1, cfg.epochs + 1):
        perm = shuffler.permutation(n)
        lr = cfg.lr.value(ep - 1)
        sse = 0.0
        for bi, s in enumerate(range(0, n, bs)):
            idx = perm[s:s + bs]
            tape = net.run(Z[idx])
            r = tape.y - T[idx]
            loss = ys * ys * float(np.mean(r * r))
            if not math.isfinite(loss) or loss > cfg.diverge_at:
                raise DivergenceError(
                    f"loss {loss:.3g} at epoch {ep}, batch {bi}",
                    {"epoch": ep, "batch": bi, "loss": loss})
            sse += loss * len(idx)
            grads = param_gradients(net, tape, 2.0 * r / len(idx))
            net_adam_step(net, grads, state, lr)
            step += 1
        trace.append({"epoch": ep, "train_mse": sse / n, "lr": lr, "tau": tau})
    return Standardized(net, mean, std, ym, ys), trace


def write_trace_csv(path, rows, columns=None):
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
