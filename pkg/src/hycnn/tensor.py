"""Dense kernels, stable scalar functions and seeded sampling.

Everything is float64. Matrices and vectors are plain numpy arrays; the
helpers here only add shape contracts and overflow-safe formulas.
"""
import zlib

import numpy as np

from . import _backend


class ContractViolation(ValueError):
    """Raised when an operation's precondition is not met."""


class UnsupportedGate(ContractViolation):
    """Raised when an operation needs a gate the network does not have."""


class ConfigurationError(ValueError):
    """Bad experiment or generator configuration."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite or exploding loss."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where or {}


def as_matrix(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(a, name="vector") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ContractViolation(f"{name} must be 1-D, got shape {a.shape}")
    return a


def matvec(M, v) -> np.ndarray:
    M = as_matrix(M, "M")
    v = as_vector(v, "v")
    if M.shape[1] != v.shape[0]:
        raise ContractViolation(f"matvec: {M.shape} times length {v.shape[0]}")
    return M @ v


def logsumexp2(a, b, tau):
    """tau * log(exp(a/tau) + exp(b/tau)), shifted by the max so it never overflows.

    Works elementwise on arrays.
    """
    if np.any(np.asarray(tau) <= 0):
        raise ContractViolation("logsumexp2 needs tau > 0")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    # (lo - hi) / tau <= 0, so exp never overflows; for huge |a|,|b| the
    # difference may be -inf which log1p(0) handles.
    with np.errstate(invalid="ignore", over="ignore"):
        diff = (lo - hi) / tau
    diff = np.where(np.isnan(diff), 0.0, diff)
    out = hi + tau * np.log1p(np.exp(diff))
    return out if out.ndim else float(out)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def softplus_inverse(y):
    """Inverse of softplus, log(expm1(y)), with a large-y branch."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ContractViolation("softplus_inverse needs y > 0")
    big = y > 30.0
    # for large y, log(expm1(y)) = y + log1p(-exp(-y))
    out = np.where(big, y + np.log1p(-np.exp(-np.where(big, y, 1.0))),
                   np.log(np.expm1(np.where(big, 1.0, y))))
    return out if out.ndim else float(out)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def lognormal_params(mean, var):
    """Location and squared scale of the underlying normal for a log-normal
    with the given mean and variance."""
    if mean <= 0 or var <= 0:
        raise ContractViolation("log-normal needs mean > 0 and var > 0")
    t = mean * mean + var
    return np.log(mean * mean / np.sqrt(t)), np.log(t / (mean * mean))


def _role_key(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


class Rng:
    """Seeded counter-based generator (Philox).

    `child(layer, role)` derives an independent stream from (seed, layer, role)
    alone, so sampling order never changes what a given parameter receives.
    """

    def __init__(self, seed: int, spawn_key=()):
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, layer: int, role: str) -> "Rng":
        return Rng(self.seed, self.spawn_key + (int(layer), _role_key(role)))

    def normal(self, mean=0.0, std=1.0, size=None):
        return self.gen.normal(mean, std, size)

    def uniform(self, lo=0.0, hi=1.0, size=None):
        return self.gen.uniform(lo, hi, size)

    def integers(self, lo, hi=None, size=None):
        return self.gen.integers(lo, hi, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def sample_lognormal(self, mean, var, size):
        return sample_lognormal(self, mean, var, size)


def sample_lognormal(rng: Rng, mean: float, var: float, n) -> np.ndarray:
    """exp(N(loc, s2)) with E = mean and Var = var."""
    loc, s2 = lognormal_params(mean, var)
    return np.exp(rng.normal(loc, np.sqrt(s2), n))


# re-exported hot kernels
lse_gate = _backend.lse_gate
softmin_rows = _backend.softmin_rows
