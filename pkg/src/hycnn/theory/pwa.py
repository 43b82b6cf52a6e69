"""Exact univariate piecewise-affine algebra.

A PWA function is stored as knots on a working interval [lo, hi], the value
at every knot and one slope per piece. Network propagation keeps values at
the knots and slopes on the open intervals separately, so slopes never come
from differencing two nearby values.
"""
import itertools
import math

import numpy as np

from ..tensor import ContractViolation, UnsupportedGate

MERGE_TOL = 1e-12
SLOPE_TOL = 1e-9


class PiecewiseAffine1D:
    """Continuous PWA function on [lo, hi].

    breakpoints: interior kinks, strictly increasing.
    slopes: one per piece, len(breakpoints) + 1.
    anchor_value: value at lo.
    """

    def __init__(self, breakpoints, slopes, anchor_value, lo, hi, knot_values=None):
        bp = np.asarray(breakpoints, dtype=np.float64).ravel()
        sl = np.asarray(slopes, dtype=np.float64).ravel()
        if len(sl) != len(bp) + 1:
            raise ContractViolation("need len(slopes) == len(breakpoints) + 1")
        if not lo < hi:
            raise ContractViolation("need lo < hi")
        if len(bp) and (np.any(np.diff(bp) <= 0) or bp[0] <= lo or bp[-1] >= hi):
            raise ContractViolation("breakpoints must be strictly increasing inside (lo, hi)")
        self.lo, self.hi = float(lo), float(hi)
        self.breakpoints = bp
        self.slopes = sl
        self.anchor_value = float(anchor_value)
        starts = np.concatenate([[self.lo], bp])
        if knot_values is None:
            widths = np.diff(np.concatenate([starts, [self.hi]]))
            knot_values = self.anchor_value + np.concatenate([[0.0], np.cumsum(sl[:-1] * widths[:-1])])
        self._starts = starts
        self._values = np.asarray(knot_values, dtype=np.float64)

    @classmethod
    def from_knots(cls, t, values, slopes=None, tol=SLOPE_TOL):
        """Build from knots t[0] = lo < ... < t[-1] = hi, the values there and
        (optionally) exact per-interval slopes. Collinear neighbours are merged."""
        t = np.asarray(t, dtype=np.float64)
        v = np.asarray(values, dtype=np.float64)
        if slopes is None:
            slopes = np.diff(v) / np.diff(t)
        s = np.asarray(slopes, dtype=np.float64)
        keep = [0]
        for i in range(1, len(s)):
            a, b = s[keep[-1]], s[i]
            if abs(a - b) > tol * max(1.0, abs(a), abs(b)):
                keep.append(i)
        keep = np.array(keep)
        return cls(t[keep[1:]], s[keep], v[0], t[0], t[-1], knot_values=v[keep])

    @property
    def n_pieces(self):
        return len(self.slopes)

    def is_convex(self, tol=SLOPE_TOL):
        d = np.diff(self.slopes)
        return bool(np.all(d >= -tol * np.maximum(1.0, np.abs(self.slopes[1:]))))

    def pieces(self):
        """(start, end, value_at_start, slope) for every piece."""
        ends = np.concatenate([self.breakpoints, [self.hi]])
        return self._starts, ends, self._values, self.slopes

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        i = np.searchsorted(self.breakpoints, x, side="right")
        out = self._values[i] + self.slopes[i] * (x - self._starts[i])
        return out if out.ndim else float(out)

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "breakpoints": self.breakpoints.tolist(),
                "slopes": self.slopes.tolist(), "anchor_value": self.anchor_value}


# ---- network propagation -------------------------------------------------

def _interp(t_old, F, t_new):
    """Linear interpolation of rows of F (affine between old knots)."""
    idx = np.clip(np.searchsorted(t_old, t_new, side="right") - 1, 0, len(t_old) - 2)
    w = (t_new - t_old[idx]) / (t_old[idx + 1] - t_old[idx])
    return F[idx] * (1.0 - w)[:, None] + F[idx + 1] * w[:, None], idx


def _refine(t, diffs, tol):
    """Knots after inserting every sign change of the columns of diffs."""
    d0, d1 = diffs[:-1], diffs[1:]
    ii, _ = np.nonzero(d0 * d1 < 0)
    if len(ii) == 0:
        return t
    r = d0[ii, _] / (d0[ii, _] - d1[ii, _])
    cross = t[ii] + (t[ii + 1] - t[ii]) * r
    cand = np.unique(np.concatenate([t, cross]))
    keep = [cand[0]]
    for c in cand[1:-1]:
        if c - keep[-1] > tol:
            keep.append(c)
    if t[-1] - keep[-1] <= tol:
        keep.pop()
    keep.append(t[-1])
    return np.array(keep)


def pwa_of_network(net, lo=0.0, hi=1.0, merge_tol=MERGE_TOL):
    """Exact PWA representation of a 1-D input network on [lo, hi]."""
    if net.input_dim != 1:
        raise ContractViolation("pwa_of_network needs input_dim == 1")
    if not net.gate.piecewise_affine or net.arch == "icnnq":
        raise UnsupportedGate(f"gate {net.gate.kind!r} / arch {net.arch!r} is not piecewise affine")
    P = net.effective()
    kind, alpha = net.gate.kind, net.gate.alpha
    t = np.array([lo, hi], dtype=np.float64)
    Zv = Zs = None
    for l in range(net.depth):
        Av, As = [], []
        for k in net.lanes():
            v = np.broadcast_to(P[f"{l}.b{k}"], (len(t), net.widths[l])).copy()
            s = np.zeros((len(t) - 1, net.widths[l]))
            W = P.get(f"{l}.W{k}")
            if W is not None:
                v = v + t[:, None] * W[:, 0]
                s = s + W[:, 0]
            if l > 0:
                V = P[f"{l}.V{k}"]
                v = v + Zv @ V.T
                s = s + Zs @ V.T
            Av.append(v)
            As.append(s)
        if kind == "max":
            diff = Av[0] - Av[1]
        else:
            diff = Av[0]
        t_new = _refine(t, diff, merge_tol)
        if len(t_new) != len(t):
            mids = 0.5 * (t_new[:-1] + t_new[1:])
            _, parent = _interp(t, Av[0], mids)
            Av = [_interp(t, A, t_new)[0] for A in Av]
            As = [S[parent] for S in As]
            t = t_new
        if kind == "max":
            lane1 = (Av[0][:-1] + Av[0][1:]) >= (Av[1][:-1] + Av[1][1:])
            Zv = np.maximum(Av[0], Av[1])
            Zs = np.where(lane1, As[0], As[1])
        else:
            pos = (Av[0][:-1] + Av[0][1:]) > 0
            neg = alpha if kind == "leaky_relu" else 0.0
            Zv = np.where(Av[0] > 0, Av[0], neg * Av[0])
            Zs = np.where(pos, As[0], neg * As[0])
    yv = Zv @ P["out.V"][0] + P["out.b"][0]
    ys = Zs @ P["out.V"][0]
    if "out.W" in P:
        yv = yv + t * P["out.W"][0, 0]
        ys = ys + P["out.W"][0, 0]
    return PiecewiseAffine1D.from_knots(t, yv, ys)


def icnn_piece_bound(widths):
    """d_1 + 2 (d_2 + ... + d_L): the piece-count ceiling for 1-D ReLU ICNNs."""
    return int(widths[0] + 2 * sum(widths[1:]))


def icnn_sup_floor(widths, d=1):
    """Lower bound d / (8 (d_1 + 2 sum d_l)^2) on the sup error vs the squared norm."""
    return d / (8.0 * icnn_piece_bound(widths) ** 2)


# ---- error against x^2 ------------------------------------------------------

def sup_error_vs_quadratic(p: PiecewiseAffine1D, lo=0.0, hi=1.0):
    """Exact sup_{[lo, hi]} |p(x) - x^2|.

    On each piece p - x^2 is a concave parabola, so |p - x^2| peaks at an
    endpoint or at the vertex x = slope / 2.
    """
    if p.lo > lo or p.hi < hi:
        raise ContractViolation(f"PWA on [{p.lo}, {p.hi}] does not cover [{lo}, {hi}]")
    s0, s1, v0, sl = p.pieces()
    a = np.maximum(s0, lo)
    b = np.minimum(s1, hi)
    on = a <= b
    a, b, v0, sl, s0 = a[on], b[on], v0[on], sl[on], s0[on]
    vert = np.clip(sl / 2.0, a, b)
    best = 0.0
    for x in (a, b, vert):
        e = np.abs(v0 + sl * (x - s0) - x * x)
        best = max(best, float(e.max()))
    return best


def upper_envelope(slopes, intercepts, lo, hi):
    """max_i (slopes[i] x + intercepts[i]) on [lo, hi] as a PWA function."""
    order = np.lexsort((intercepts, slopes))
    S = np.asarray(slopes, dtype=np.float64)[order]
    C = np.asarray(intercepts, dtype=np.float64)[order]
    hull = []  # indices of lines on the envelope, increasing slope
    for i in range(len(S)):
        if hull and S[hull[-1]] == S[i]:
            hull.pop()
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # k is useless if line i overtakes j before k does
            if (C[j] - C[i]) * (S[k] - S[j]) <= (C[j] - C[k]) * (S[i] - S[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    xs = [(C[hull[q]] - C[hull[q + 1]]) / (S[hull[q + 1]] - S[hull[q]]) for q in range(len(hull) - 1)]
    knots = [lo] + [x for x in xs if lo < x < hi] + [hi]
    t = np.unique(np.array(knots))
    mids = 0.5 * (t[:-1] + t[1:])
    vals = np.max(S[:, None] * t[None, :] + C[:, None], axis=0)
    sl = S[np.argmax(S[:, None] * mids[None, :] + C[:, None], axis=0)]
    return PiecewiseAffine1D.from_knots(t, vals, sl)


def chebyshev_line(a, b):
    """Best uniform affine approximation of x^2 on [a, b]: slope, intercept."""
    return a + b, -a * b - (b - a) ** 2 / 8.0


def lower_bound_search(k, resolution=None):
    """Smallest sup error vs x^2 on [0, 1] found over convex k-piece candidates.

    Breakpoints range over the grid j / resolution. Each candidate is the
    upper envelope of the per-cell Chebyshev lines (convex by construction,
    at most k pieces) and is scored with the exact per-piece routine.
    Returns (best_error, best_breakpoints).
    """
    if not 1 <= k <= 5:
        raise ContractViolation("lower_bound_search supports k in 1..5")
    if resolution is None:
        resolution = 96 if k <= 4 else 60
    grid = np.arange(1, resolution) / resolution
    best, arg = math.inf, ()
    for inner in itertools.combinations(grid, k - 1):
        edges = np.concatenate([[0.0], inner, [1.0]])
        s, c = chebyshev_line(edges[:-1], edges[1:])
        err = sup_error_vs_quadratic(upper_envelope(s, c, 0.0, 1.0))
        if err < best:
            best, arg = err, tuple(inner)
    return best, arg
