"""Densities and samplers used by the Gibbs sweep.

Every sampler takes an explicit ``numpy.random.Generator``; streams are
derived from ``(seed, stream_id)`` through :class:`RngStream` so that runs are
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.stats import qmc

# standardized bound beyond which the exponential-rejection sampler is used
TAIL_CUTOFF = 5.0
QMC_LOG2_POINTS = 12  # 4096 points
QMC_SEED = 20240611


class NotPositiveDefiniteError(ValueError):
    pass


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Distinct stream ids give statistically independent generators
    (``SeedSequence`` spawn keys).
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


def cholesky_pd(matrix, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor; raise if ``matrix`` is not symmetric PD."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        raise NotPositiveDefiniteError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from None


def std_normal_cdf(x):
    """Standard normal cdf; NaN input is rejected."""
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("std_normal_cdf: NaN input")
    out = special.ndtr(arr)
    return float(out) if out.ndim == 0 else out


def log_norm_interval(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b``, accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # mirror to the left tail where log_ndtr is accurate
    flip = a > -b
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = special.log_ndtr(hi)
    llo = special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lhi + np.log1p(-np.exp(llo - lhi))
    return out


def _robert_tail(a, b, rng):
    """Draws from N(0,1) restricted to [a, b] with a >= TAIL_CUTOFF."""
    out = np.empty(a.shape)
    pending = np.arange(a.size)
    a = a.ravel()
    b = b.ravel()
    # uniform proposals are efficient on narrow windows
    narrow = (b - a) < 1.0 / a
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    flat = out.ravel()
    while pending.size:
        ap, bp, lp, nw = a[pending], b[pending], lam[pending], narrow[pending]
        e = rng.standard_exponential(pending.size)
        u = rng.random(pending.size)
        width = np.where(nw, bp - ap, 0.0)
        z_unif = ap + u * width
        z_exp = ap + e / lp
        v = rng.random(pending.size)
        logv = np.log(v)
        acc_unif = logv <= 0.5 * (ap * ap - z_unif * z_unif)
        acc_exp = (logv <= -0.5 * (z_exp - lp) ** 2) & (z_exp <= bp)
        z = np.where(nw, z_unif, z_exp)
        acc = np.where(nw, acc_unif, acc_exp)
        flat[pending[acc]] = z[acc]
        pending = pending[~acc]
    return out


def truncnorm_std(a, b, rng) -> np.ndarray:
    """Standard normal draws restricted to ``[a, b]`` (vectorized).

    Inverse-cdf sampling in the central region; exponential rejection when the
    whole window lies beyond ``TAIL_CUTOFF`` standard deviations.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    flip = a > -b
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    # after mirroring the window's mass sits at or left of zero
    x = np.empty(lo.shape)
    tail = hi < -TAIL_CUTOFF
    central = ~tail
    if central.any():
        plo = special.ndtr(lo[central])
        phi = special.ndtr(hi[central])
        u = rng.random(plo.shape)
        x[central] = special.ndtri(plo + u * (phi - plo))
    if tail.any():
        x[tail] = -_robert_tail(-hi[tail], -lo[tail], rng)
    x = np.clip(x, lo, hi)
    return np.where(flip, -x, x)


def truncnorm_std_grouped(a, b, groups, rng) -> np.ndarray:
    """Standard normal draws on ``[a[g], b[g]]`` for every entry ``g`` of ``groups``.

    Window-dependent work (cdf values, tail detection) is done once per group,
    which pays off when many cells share a few windows.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = a > -b
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    plo = special.ndtr(lo)
    phi = special.ndtr(hi)
    tail = hi < -TAIL_CUTOFF
    g = np.asarray(groups)
    u = rng.random(g.shape)
    p0 = plo[g]
    x = special.ndtri(p0 + u * (phi[g] - p0))
    cell_tail = tail[g]
    if cell_tail.any():
        gt = g[cell_tail]
        x[cell_tail] = -_robert_tail(-hi[gt], -lo[gt], rng)
    x = np.clip(x, lo[g], hi[g])
    return np.where(flip[g], -x, x)


def rtruncnorm(mu, sd, lo, hi, rng) -> np.ndarray:
    """Vectorized truncated normal draws on ``(lo, hi]`` with mean/sd of the parent."""
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    a = (np.asarray(lo, dtype=float) - mu) / sd
    b = (np.asarray(hi, dtype=float) - mu) / sd
    z = truncnorm_std(a, b, rng)
    return np.clip(mu + sd * z, lo, hi)


def sample_truncated_normal(mu: float, var: float, lo: float, hi: float, rng) -> float:
    """One draw from N(mu, var) truncated to ``(lo, hi]``."""
    if not var > 0:
        raise ValueError(f"variance must be positive, got {var}")
    if not lo < hi:
        raise ValueError(f"invalid bounds: lo={lo} must be < hi={hi}")
    return float(rtruncnorm(mu, np.sqrt(var), lo, hi, rng))


def sample_trunc_exponential(rate: float, lo: float, hi: float, rng) -> float:
    """One draw with density proportional to ``exp(-rate * x)`` on ``(lo, hi)``."""
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if not np.isfinite(lo):
        raise ValueError("lower bound must be finite")
    if not lo < hi:
        raise ValueError(f"empty window ({lo}, {hi})")
    u = rng.random()
    # inverse cdf; expm1/log1p keep narrow windows accurate
    x = lo - np.log1p(u * np.expm1(-rate * (hi - lo))) / rate
    return float(min(max(x, lo), hi))


def sample_inverse_wishart(scale, dof: float, rng) -> np.ndarray:
    """Inverse Wishart draw via the Bartlett decomposition of the Wishart of the inverse.

    Parameterized so that the mean is ``scale / (dof - K - 1)``.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    k = scale.shape[0]
    cholesky_pd(scale, "inverse Wishart scale")
    if not dof > k - 1:
        raise ValueError(f"dof must exceed K - 1 = {k - 1}, got {dof}")
    prec_chol = np.linalg.cholesky(np.linalg.inv(scale))
    a = np.zeros((k, k))
    a[np.diag_indices(k)] = np.sqrt(rng.chisquare(dof - np.arange(k)))
    il = np.tril_indices(k, -1)
    a[il] = rng.standard_normal(len(il[0]))
    la = prec_chol @ a  # Wishart draw is la @ la.T
    inv_la = np.linalg.solve(la, np.eye(k))
    out = inv_la.T @ inv_la
    return 0.5 * (out + out.T)


def sample_matrix_normal(mean, row_cov, col_cov, rng) -> np.ndarray:
    """Matrix normal draw; ``vec`` of the transpose has covariance ``row_cov ⊗ col_cov``."""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    p, k = mean.shape
    row_cov = np.atleast_2d(row_cov)
    col_cov = np.atleast_2d(col_cov)
    if row_cov.shape != (p, p) or col_cov.shape != (k, k):
        raise ValueError(
            f"dimension mismatch: mean {mean.shape}, row_cov {row_cov.shape}, col_cov {col_cov.shape}"
        )
    a = cholesky_pd(row_cov, "row covariance")
    b = cholesky_pd(col_cov, "column covariance")
    z = rng.standard_normal((p, k))
    return mean + a @ z @ b.T


@lru_cache(maxsize=None)
def _qmc_points(dim: int, log2_n: int = QMC_LOG2_POINTS) -> np.ndarray:
    sobol = qmc.Sobol(d=dim, scramble=True, seed=QMC_SEED + dim)
    pts = sobol.random_base2(log2_n)
    pts.setflags(write=False)
    return pts


def mvn_rect_prob_batch(means, corr, lower, upper) -> np.ndarray:
    """Rectangle probabilities of N(mean_b, corr) for a batch of boxes.

    Genz separation-of-variables with a fixed scrambled Sobol point set, so
    results are deterministic. ``means``, ``lower``, ``upper`` have shape
    (B, K); all boxes share the correlation matrix.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    lower = np.broadcast_to(np.asarray(lower, dtype=float), means.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), means.shape)
    if np.any(~(lower < upper)):
        raise ValueError("every lower bound must be below its upper bound")
    corr = np.atleast_2d(np.asarray(corr, dtype=float))
    k = means.shape[1]
    if corr.shape != (k, k):
        raise ValueError(f"correlation must be {k}x{k}, got {corr.shape}")
    chol = cholesky_pd(corr, "correlation")
    a = lower - means
    b = upper - means
    d = special.ndtr(a[:, 0] / chol[0, 0])
    e = special.ndtr(b[:, 0] / chol[0, 0])
    if k == 1:
        return e - d
    w = _qmc_points(k - 1)  # (P, K-1)
    nb = means.shape[0]
    npts = w.shape[0]
    d = np.repeat(d[:, None], npts, axis=1)
    e = np.repeat(e[:, None], npts, axis=1)
    f = e - d
    ys = np.empty((nb, npts, k - 1))
    for i in range(1, k):
        arg = d + w[None, :, i - 1] * (e - d)
        ys[:, :, i - 1] = special.ndtri(np.clip(arg, 1e-300, 1.0 - 1e-16))
        s = ys[:, :, :i] @ chol[i, :i]
        d = special.ndtr((a[:, i, None] - s) / chol[i, i])
        e = special.ndtr((b[:, i, None] - s) / chol[i, i])
        f = f * (e - d)
    return f.mean(axis=1)


def mvn_rect_prob(mean, corr, lower, upper) -> float:
    """P(lower < Z <= upper) for Z ~ N(mean, corr)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return float(mvn_rect_prob_batch(mean[None, :], corr, np.atleast_1d(lower)[None, :],
                                     np.atleast_1d(upper)[None, :])[0])


def sample_categorical(weights, rng) -> int:
    """Index drawn with probability proportional to nonnegative ``weights``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or np.isnan(w).any():
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if not total > 0:
        raise ValueError("at least one weight must be positive")
    c = np.cumsum(w)
    idx = int(np.searchsorted(c, rng.random() * total, side="right"))
    # guard against landing on a trailing zero-weight cell through rounding
    while w[min(idx, len(w) - 1)] == 0 and idx > 0:
        idx -= 1
    return min(idx, len(w) - 1)


def sample_categorical_log(logw: np.ndarray, rng) -> np.ndarray:
    """Row-wise categorical draws from unnormalized log weights of shape (n, L)."""
    logw = np.asarray(logw, dtype=float)
    m = logw.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        bad = np.flatnonzero(~np.isfinite(m.ravel()))
        raise FloatingPointError(f"all categorical weights vanish for rows {bad[:5].tolist()}")
    p = np.exp(logw - m)
    c = np.cumsum(p, axis=1)
    u = rng.random(logw.shape[0]) * c[:, -1]
    idx = (c < u[:, None]).sum(axis=1)
    return np.minimum(idx, logw.shape[1] - 1)
