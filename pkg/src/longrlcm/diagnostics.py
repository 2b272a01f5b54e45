"""Convergence diagnostics, posterior summaries and WAIC."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .model import MISSING, MeasurementParams, ModelSpec, StructuralParams, item_block_rows

QUANTILE_METHOD = "linear"  # Hyndman-Fan type 7


def conditional_loglik(y_n, beta, kappa, alpha_n, spec: ModelSpec) -> float:
    """Log-likelihood of one respondent's responses given parameters and profiles.

    ``y_n`` is (T, J) with rows of :data:`MISSING` skipped, ``alpha_n`` is
    (T, K). A zero-probability response yields ``-inf`` with a warning.
    """
    y_n = np.asarray(y_n, dtype=np.int64)
    kappa = np.asarray(kappa, dtype=float)
    observed = ~np.all(y_n == MISSING, axis=1)
    if not observed.any():
        return 0.0
    idx = spec.state_index(np.asarray(alpha_n)[observed])
    eta = spec.state_design[idx] @ np.asarray(beta, dtype=float)
    y = y_n[observed]
    jj = np.arange(spec.J)
    upper = special.ndtr(kappa[jj, y + 1] - eta)
    lower = special.ndtr(kappa[jj, y] - eta)
    with np.errstate(divide="ignore"):
        # mirrored differences keep precision in the upper tail
        p = np.where(eta > kappa[jj, y], special.ndtr(eta - kappa[jj, y]) - special.ndtr(eta - kappa[jj, y + 1]),
                     upper - lower)
        out = float(np.sum(np.log(p)))
    if out == -np.inf:
        warnings.warn("a response has zero probability under this draw", RuntimeWarning, stacklevel=2)
    return out


def waic(ll) -> tuple[float, float, float]:
    """WAIC from an (S draws, N respondents) log-likelihood matrix.

    Returns ``(waic, lppd, p_waic)`` on the deviance scale, with ``p_waic``
    the summed per-respondent sample variance of the log-likelihood.
    """
    ll = np.atleast_2d(np.asarray(ll, dtype=float))
    if not np.all(np.isfinite(ll)):
        raise ValueError("log-likelihood matrix has non-finite entries")
    S = ll.shape[0]
    lppd = float(np.sum(special.logsumexp(ll, axis=0) - np.log(S)))
    if S == 1:
        warnings.warn("single draw: variance penalty set to zero", RuntimeWarning, stacklevel=2)
        p_waic = 0.0
    else:
        p_waic = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return -2.0 * (lppd - p_waic), lppd, p_waic


def _check_series(x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 100:
        raise ValueError(f"{what} needs at least 100 values, got {x.size}")
    if np.ptp(x) == 0:
        raise ValueError(f"{what}: degenerate (constant) series")
    return x


def spectral_density_zero(x) -> float:
    """Bartlett lag-window estimate of the spectral density at frequency zero.

    Bandwidth ``floor(sqrt(n))``; returned on the scale where an iid series
    gives its variance.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    b = int(np.floor(np.sqrt(n)))
    xc = x - x.mean()
    acov = _autocovariance(xc)[: b + 1]
    weights = 1.0 - np.arange(1, b + 1) / (b + 1.0)
    return float(acov[0] + 2.0 * np.sum(weights * acov[1:]))


def _autocovariance(xc: np.ndarray) -> np.ndarray:
    n = xc.size
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def geweke_z(series, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """Difference of means of the first ``frac_a`` and last ``frac_b`` of a chain, standardized."""
    if not (0 < frac_a < 1 and 0 < frac_b < 1) or frac_a + frac_b > 1:
        raise ValueError("windows must be proper fractions with frac_a + frac_b <= 1")
    x = _check_series(series, "geweke_z")
    n = x.size
    a = x[: int(np.floor(frac_a * n))]
    b = x[n - int(np.floor(frac_b * n)) :]
    var = spectral_density_zero(a) / a.size + spectral_density_zero(b) / b.size
    if not var > 0:
        raise ValueError("geweke_z: a window has zero spectral density")
    return float((a.mean() - b.mean()) / np.sqrt(var))


def iact(series, floor: float = 1e-6) -> float:
    """Integrated autocorrelation time with Geyer's initial positive sequence truncation."""
    x = _check_series(series, "iact")
    acov = _autocovariance(x - x.mean())
    rho = acov / acov[0]
    n = rho.size
    pairs = rho[: n - n % 2].reshape(-1, 2).sum(axis=1)
    neg = np.flatnonzero(pairs <= 0)
    m = neg[0] if neg.size else pairs.size
    tau = -1.0 + 2.0 * pairs[:m].sum()
    return float(max(tau, floor))


def ess(series) -> float:
    x = np.asarray(series).ravel()
    return x.size / iact(x)


# ---------------------------------------------------------------------------
# posterior summaries


@dataclass
class ParamPoint:
    """A point value of every scored parameter; ``eta`` is (sum M_j, L^K)."""

    beta: np.ndarray
    delta: np.ndarray
    kappa: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    R: np.ndarray
    eta: np.ndarray

    @classmethod
    def from_params(cls, meas: MeasurementParams, structural: StructuralParams, spec: ModelSpec) -> "ParamPoint":
        eta = class_response_probs(meas.beta[None], meas.kappa[None], spec)[0]
        return cls(meas.beta.copy(), np.asarray(meas.delta).copy(), meas.kappa.copy(), structural.gamma.copy(),
                   structural.lam.copy(), structural.xi.copy(), structural.R.copy(), eta)


def class_response_probs(beta, kappa, spec: ModelSpec) -> np.ndarray:
    """Class-conditional category probabilities per draw, shape (S, sum M_j, L^K)."""
    beta = np.asarray(beta, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    eta = np.einsum("sh,dhj->dsj", spec.state_design, beta)  # (draws, states, J)
    blocks = item_block_rows(spec)
    out = np.empty((beta.shape[0], sum(spec.M), spec.n_states))
    for j, m in enumerate(spec.M):
        cut = kappa[:, j, : m + 1]  # (draws, m+1)
        cdf = special.ndtr(cut[:, None, :] - eta[:, :, j, None])  # (draws, states, m+1)
        out[:, blocks[j], :] = np.diff(cdf, axis=2).transpose(0, 2, 1)
    return out


@dataclass
class ChainSummary:
    mean: ParamPoint
    delta_mean: np.ndarray
    lower: dict[str, np.ndarray]
    upper: dict[str, np.ndarray]
    zero_in_ci: dict[str, np.ndarray]
    level: float
    meta: dict = field(default_factory=dict)


def equal_tail_interval(draws, level: float = 0.95, axis: int = 0):
    draws = np.asarray(draws, dtype=float)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [tail, 1.0 - tail], axis=axis, method=QUANTILE_METHOD)
    return lo, hi


def summarize_chain(chain, level: float = 0.95) -> ChainSummary:
    """Posterior means, modal inclusion indicators and equal-tail intervals."""
    d = chain.draws
    if chain.n_draws < 1:
        raise ValueError("empty chain")
    spec = chain.spec
    delta_mean = d["delta"].mean(axis=0)
    eta = class_response_probs(d["beta"], d["kappa"], spec)
    point = ParamPoint(
        beta=d["beta"].mean(axis=0),
        delta=(delta_mean > 0.5).astype(np.int8),
        kappa=d["kappa"].mean(axis=0),
        gamma=d["gamma"].mean(axis=0),
        lam=d["lam"].mean(axis=0),
        xi=d["xi"].mean(axis=0),
        R=d["R"].mean(axis=0),
        eta=eta.mean(axis=0),
    )
    lower, upper, zero = {}, {}, {}
    for name in ("beta", "lam", "xi", "R"):
        lo, hi = equal_tail_interval(d[name], level)
        lower[name], upper[name] = lo, hi
        zero[name] = (lo <= 0) & (hi >= 0)
    lower["eta"], upper["eta"] = equal_tail_interval(eta, level)
    return ChainSummary(point, delta_mean, lower, upper, zero, level, {"quantile_method": "type-7"})
