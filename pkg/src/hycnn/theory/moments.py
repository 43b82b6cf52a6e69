"""Monte-Carlo checks of the Gaussian-max moments and of signal propagation
at initialization."""
import math

import numpy as np

from ..nets import init_hycnn
from ..tensor import Rng


def gaussian_max_moments(n=1_000_000, sigma=1.0, rho=0.5, rng: Rng = None):
    """Moments of X v Y and (X v Y)(Z v W) for an equicorrelated Gaussian 4-vector.

    Returns {name: (estimate, standard_error, closed_form)}.
    """
    if not -1.0 / 3.0 < rho < 1.0:
        raise ValueError("need -1/3 < rho < 1 for a valid equicorrelation")
    rng = rng or Rng(0)
    out = {"mean": [], "second": [], "cross": []}
    chunk = 250_000
    done = 0
    while done < n:
        k = min(chunk, n - done)
        G = rng.normal(0.0, 1.0, (k, 5))
        if rho >= 0:
            S = sigma * (math.sqrt(rho) * G[:, :1] + math.sqrt(1 - rho) * G[:, 1:])
        else:
            # negative rho: use the Cholesky factor of the 4x4 matrix
            C = sigma ** 2 * ((1 - rho) * np.eye(4) + rho)
            S = G[:, 1:] @ np.linalg.cholesky(C).T
        m1 = np.maximum(S[:, 0], S[:, 1])
        m2 = np.maximum(S[:, 2], S[:, 3])
        out["mean"].append(m1)
        out["second"].append(m1 * m1)
        out["cross"].append(m1 * m2)
        done += k
    exact = {"mean": sigma * math.sqrt((1 - rho) / math.pi),
             "second": sigma ** 2,
             "cross": (rho + (1 - rho) / math.pi) * sigma ** 2}
    res = {}
    for key, parts in out.items():
        v = np.concatenate(parts)
        res[key] = (float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))), exact[key])
    return res


def init_diagnostics(depth=16, width=48, d=50, seeds=100, n_inputs=100, rng: Rng = None):
    """Per-hidden-layer pre-activation moments and hidden-state norms.

    For lanes s, t of every neuron: E[s^2] (pooled over both lanes), E[s t]
    (same neuron), E[s]; plus the mean l2 norm of z_l. Averaged over seeds
    and standard Gaussian inputs. Returns a list of dicts, one per layer.
    """
    rng = rng or Rng(0)
    acc = np.zeros((depth, 4))
    for seed in range(seeds):
        r = rng.child(seed, "diag")
        net = init_hycnn([width] * depth, d, r.child(0, "net"))
        X = r.child(0, "x").normal(0.0, 1.0, (n_inputs, d))
        tape = net.run(X)
        for l, ((s, t), z) in enumerate(zip(tape.a, tape.z)):
            acc[l] += [0.5 * np.mean(s * s) + 0.5 * np.mean(t * t), np.mean(s * t),
                       0.5 * (np.mean(s) + np.mean(t)), np.mean(np.linalg.norm(z, axis=1))]
    acc /= seeds
    return [{"layer": l + 1, "E_s2": a[0], "E_st": a[1], "E_s": a[2], "z_norm": a[3]}
            for l, a in enumerate(acc)]
