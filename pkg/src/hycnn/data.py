"""Synthetic data: regression targets, OT maps and 2-D shape clouds."""
import math

import numpy as np

from .tensor import ConfigurationError, Rng


# ---- regression targets --------------------------------------------------

def f1(X):
    return np.sum(X * X, axis=1)


def f2(X):
    return np.sum(X ** 4, axis=1)


def f3(X):
    r2 = np.sum(X * X, axis=1)
    return r2 + 0.25 * np.sin(20.0 * np.sqrt(r2))


def f4(X):
    return np.sum(np.abs(X), axis=1)


def f5(X):
    return np.exp(np.sum(np.abs(X), axis=1) / math.sqrt(X.shape[1]))


def make_f6(mu):
    mu = np.asarray(mu, dtype=np.float64)

    def f6(X):
        a = np.sum((X - mu) ** 2, axis=1)
        b = np.sum((X + mu) ** 2, axis=1)
        return np.maximum(a, b)
    return f6


REGRESSION = ("f1", "f2", "f3", "f4", "f5", "f6")


def regression_target(gen_id, d, rng: Rng = None):
    """Clean target function for a generator id; f6 draws its shift from rng."""
    table = {"f1": f1, "f2": f2, "f3": f3, "f4": f4, "f5": f5}
    if gen_id in table:
        return table[gen_id]
    if gen_id == "f6":
        if rng is None:
            raise ConfigurationError("f6 needs an rng for its shift vector")
        return make_f6(rng.child(0, "f6-mu").normal(0.0, math.sqrt(1.0 / d), d))
    raise ConfigurationError(f"unknown regression generator {gen_id!r}")


def regression_data(gen_id, d, n, sigma, rng: Rng, n_test=1000):
    """Training (X, y) with X ~ Unif[-1,1]^d, y = f(X) + N(0, sigma^2), plus a
    noiseless test set of n_test points."""
    f = regression_target(gen_id, d, rng)
    X = rng.child(0, "x-train").uniform(-1.0, 1.0, (n, d))
    y = f(X)
    if sigma > 0:
        y = y + rng.child(0, "noise").normal(0.0, sigma, n)
    Xt = rng.child(0, "x-test").uniform(-1.0, 1.0, (n_test, d))
    return {"X": X, "y": y, "X_test": Xt, "y_test": f(Xt), "f": f}


# ---- OT maps ---------------------------------------------------------------

def T1(X):
    return np.array(X, dtype=np.float64)


def T2(X):
    i = np.arange(1, X.shape[1] + 1)
    return (1.0 + np.sin(i) / 2.0) * X


def T3(X):
    return X + np.sign(X)


def T4(X):
    return 4.0 * X ** 3


OT_MAPS = {"phi1": T1, "phi2": T2, "phi3": T3, "phi4": T4}


def ot_source(gen_id, d, n, rng: Rng):
    if gen_id == "phi4":
        return rng.uniform(-1.0, 1.0, (n, d))
    return rng.normal(0.0, 1.0, (n, d))


def ot_data(gen_id, d, n, m, rng: Rng, n_val=1000, n_test=1000):
    """Independent source and target clouds for the pushforward task.

    Target samples are the map applied to a separate source draw, so the
    two training clouds are unpaired.
    """
    if gen_id not in OT_MAPS:
        raise ConfigurationError(f"unknown OT generator {gen_id!r}")
    T = OT_MAPS[gen_id]
    out = {"map": T,
           "source": ot_source(gen_id, d, n, rng.child(0, "source")),
           "target": T(ot_source(gen_id, d, m, rng.child(0, "target")))}
    xv = ot_source(gen_id, d, n_val, rng.child(0, "val-source"))
    out["val_source"] = xv
    out["val_target"] = T(ot_source(gen_id, d, n_val, rng.child(0, "val-target")))
    out["test_source"] = ot_source(gen_id, d, n_test, rng.child(0, "test-source"))
    out["test_target"] = T(ot_source(gen_id, d, n_test, rng.child(0, "test-target")))
    return out


# ---- 2-D shapes -------------------------------------------------------------

def checkerboard(n, rng: Rng, cells=((0, 0), (1, 1), (-1, -1), (1, -1), (-1, 1)), size=1.0):
    """Uniform points on the listed unit squares (lower-left corners scaled by size,
    centred on the origin). The default is the five-square pattern."""
    cells = np.asarray(cells, dtype=np.float64)
    pick = rng.integers(0, len(cells), n)
    off = rng.uniform(0.0, 1.0, (n, 2))
    return (cells[pick] + off - 0.5) * size


def checkerboard4(n, rng: Rng, size=1.0):
    return checkerboard(n, rng, cells=((0, 1), (1, 0), (-1, 0), (0, -1)), size=size)


def halfmoon(n, rng: Rng, noise=0.1, shift=(0.0, 0.0), angle=0.0):
    """Upper half circle of radius 1 plus Gaussian noise, optionally rotated and shifted."""
    t = rng.uniform(0.0, math.pi, n)
    P = np.stack([np.cos(t), np.sin(t)], axis=1) + rng.normal(0.0, noise, (n, 2))
    c, s = math.cos(angle), math.sin(angle)
    P = P @ np.array([[c, -s], [s, c]]).T
    return P + np.asarray(shift)


def gauss_ring(n, rng: Rng, k=8, radius=2.0, std=0.2):
    """Mixture of k Gaussians with centres evenly spaced on a circle."""
    j = rng.integers(0, k, n)
    ang = 2 * math.pi * j / k
    C = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return C + rng.normal(0.0, std, (n, 2))


SHAPES = {"checkerboard": checkerboard, "checkerboard4": checkerboard4,
          "halfmoon": halfmoon, "gauss-ring": gauss_ring}


SHAPE_PAIRS = ("checkerboard", "halfmoon", "halfmoon-shift", "gauss-ring")


def shape_pair(name, n, rng: Rng):
    """(source, target) 2-D clouds for the four shape transport tasks."""
    src, tgt = rng.child(0, "pair-source"), rng.child(0, "pair-target")
    if name == "checkerboard":
        return checkerboard(n, src), checkerboard4(n, tgt)
    if name == "halfmoon":
        return src.normal(0.0, 1.0, (n, 2)), halfmoon(n, tgt)
    if name == "halfmoon-shift":
        return halfmoon(n, src, shift=(-1.0, 0.0)), halfmoon(n, tgt, shift=(1.0, 0.5), angle=math.pi)
    if name == "gauss-ring":
        return src.normal(0.0, 1.0, (n, 2)), gauss_ring(n, tgt)
    raise ConfigurationError(f"unknown shape pair {name!r}")


def generate(gen_id, n, rng: Rng, d=2, sigma=0.0, m=None):
    """Dispatch on generator id; see the per-family helpers for the payloads."""
    if gen_id in REGRESSION:
        return regression_data(gen_id, d, n, sigma, rng)
    if gen_id in OT_MAPS:
        return ot_data(gen_id, d, n, m or n, rng)
    if gen_id in SHAPES:
        return {"X": SHAPES[gen_id](n, rng.child(0, gen_id))}
    raise ConfigurationError(f"unknown generator {gen_id!r}")
