"""Pure-numpy versions of the compiled kernels in `_kernels.pyx`."""
import numpy as np


def lse_gate(a1, a2, tau):
    """Smooth max of two lanes and the lane-1 weight.

    Returns (tau*log(exp(a1/tau)+exp(a2/tau)), sigmoid((a1-a2)/tau)).
    """
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    d = (a1 - a2) / tau
    e = np.exp(-np.abs(d))
    z = np.maximum(a1, a2) + tau * np.log1p(e)
    w1 = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return z, w1


def softmin_rows(X, Y, h, eps):
    """r_i = -eps * log sum_j exp((h_j - |x_i - y_j|^2 / 2) / eps)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    sx = 0.5 * np.einsum("ij,ij->i", X, X)
    sy = 0.5 * np.einsum("ij,ij->i", Y, Y)
    C = sx[:, None] + sy[None, :] - X @ Y.T
    np.maximum(C, 0.0, out=C)
    A = (h[None, :] - C) / eps
    m = A.max(axis=1)
    return -eps * (m + np.log(np.exp(A - m[:, None]).sum(axis=1)))
