"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np
from scipy import integrate, stats


def quadrature_inclusion(design, r, h, omega, s2, lo):
    """P(delta_h = 1) by integrating the slab against the Gaussian likelihood of the residual r."""
    d = design[:, h]
    a = d @ d
    b = d @ r

    def log_like(bh):  # log N(r | d bh, I) - log N(r | 0, I)
        return b * bh - 0.5 * a * bh * bh

    mode = b / (a + 1.0 / s2)
    width = 1.0 / np.sqrt(a + 1.0 / s2)
    left = max(lo, mode - 40 * width)
    right = max(mode, lo) + 40 * width
    peak = max(log_like(max(mode, lo)), 0.0)
    log_slab_norm = stats.norm.logsf(lo / np.sqrt(s2))

    def f(bh):
        return np.exp(log_like(bh) + stats.norm.logpdf(bh, scale=np.sqrt(s2)) - log_slab_norm - peak)

    val = integrate.quad(f, left, right, points=[min(max(mode, left), right)], epsabs=0, epsrel=1e-12, limit=200)[0]
    if lo > 0:
        return 1.0
    on = omega * val
    off = (1 - omega) * np.exp(-peak)
    return on / (on + off)


def reference_waic(ll):
    # naive second implementation on moderate magnitudes
    S, N = ll.shape
    lppd = sum(math.log(sum(math.exp(ll[s, n]) for s in range(S)) / S) for n in range(N))
    pw = 0.0
    for n in range(N):
        col = ll[:, n]
        m = sum(col) / S
        pw += sum((c - m) ** 2 for c in col) / (S - 1)
    return -2 * (lppd - pw), lppd, pw
