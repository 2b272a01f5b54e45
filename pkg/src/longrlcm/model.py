"""Model specification, parameter containers and deterministic model math.

Latent states are enumerated in lexicographic order of the attribute profile
with the first attribute most significant, which is the row order of the
Kronecker product ``d_1 ⊗ ... ⊗ d_K``. Reduced design vectors keep the
Kronecker columns whose multi-index has at most ``order`` nonzero entries, in
the same lexicographic order (see :data:`DESIGN_COLUMN_CONVENTION`).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from math import comb

import numpy as np

from .dist import cholesky_pd, mvn_rect_prob_batch, std_normal_cdf

DESIGN_COLUMN_CONVENTION = "kronecker-lex-filtered-by-order/v1"
MISSING = -1


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions of a longitudinal restricted latent class model.

    Parameters
    ----------
    K : int
        Number of latent attributes.
    L : int
        Levels per attribute.
    M : tuple of int
        Category count for each item (length J).
    meas_order, trans_order : int
        Highest interaction order kept in the measurement and transition
        design vectors; ``meas_order`` defaults to ``min(2, K)``.
    D : int
        Number of covariates (columns of X, intercept included if wanted).
    """

    K: int
    L: int
    M: tuple[int, ...]
    meas_order: int | None = None
    trans_order: int = 1
    D: int = 1

    def __post_init__(self):
        object.__setattr__(self, "M", tuple(int(m) for m in self.M))
        if self.meas_order is None:
            object.__setattr__(self, "meas_order", min(2, self.K))
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if len(self.M) == 0 or min(self.M) < 2:
            raise ValueError("every item needs at least two categories")
        for name in ("meas_order", "trans_order"):
            order = getattr(self, name)
            if not 1 <= order <= self.K:
                raise ValueError(f"{name} must lie in [1, K], got {order}")
        if self.D < 0:
            raise ValueError("D must be nonnegative")

    @property
    def J(self) -> int:
        return len(self.M)

    @property
    def n_states(self) -> int:
        return self.L**self.K

    @property
    def H(self) -> int:
        return n_design_columns(self.K, self.L, self.meas_order)

    @property
    def H_otr(self) -> int:
        return n_design_columns(self.K, self.L, self.trans_order)

    @property
    def M_max(self) -> int:
        return max(self.M)

    @cached_property
    def profiles(self) -> np.ndarray:
        """All L^K attribute profiles, shape (L^K, K)."""
        return np.array(list(itertools.product(range(self.L), repeat=self.K)), dtype=np.int64)

    @cached_property
    def state_weights(self) -> np.ndarray:
        return self.L ** np.arange(self.K - 1, -1, -1, dtype=np.int64)

    def state_index(self, alpha) -> np.ndarray:
        """Map profiles (..., K) to their index in :attr:`profiles`."""
        return np.asarray(alpha, dtype=np.int64) @ self.state_weights

    @cached_property
    def meas_columns(self) -> np.ndarray:
        return design_columns(self.K, self.L, self.meas_order)

    @cached_property
    def otr_columns(self) -> np.ndarray:
        return design_columns(self.K, self.L, self.trans_order)

    @cached_property
    def state_design(self) -> np.ndarray:
        """Measurement design vectors of every state, shape (L^K, H)."""
        return _design_from_columns(self.profiles, self.meas_columns)

    @cached_property
    def state_design_otr(self) -> np.ndarray:
        return _design_from_columns(self.profiles, self.otr_columns)

    @cached_property
    def monotone_pairs(self) -> np.ndarray:
        """``d_u - d_v`` for every ordered pair u >= v, u != v; shape (P, H)."""
        prof = self.profiles
        ge = (prof[:, None, :] >= prof[None, :, :]).all(-1)
        np.fill_diagonal(ge, False)
        u, v = np.nonzero(ge)
        return self.state_design[u] - self.state_design[v]

    @cached_property
    def truncation_tables(self) -> list[np.ndarray | None]:
        """Per column h, the pair differences where column h switches on, h zeroed."""
        pairs = self.monotone_pairs
        tables: list[np.ndarray | None] = [None]
        for h in range(1, self.H):
            rows = pairs[pairs[:, h] == 1].astype(float)
            rows[:, h] = 0.0
            tables.append(rows if len(rows) else None)
        return tables

    def column_labels(self, order: int | None = None) -> list[str]:
        cols = design_columns(self.K, self.L, self.meas_order if order is None else order)
        return [column_label(c) for c in cols]


def n_design_columns(K: int, L: int, order: int) -> int:
    return sum(comb(K, r) * (L - 1) ** r for r in range(order + 1))


def design_columns(K: int, L: int, order: int) -> np.ndarray:
    """Kronecker multi-indices with at most ``order`` nonzero entries, lexicographic."""
    cols = [c for c in itertools.product(range(L), repeat=K) if sum(i > 0 for i in c) <= order]
    return np.array(cols, dtype=np.int64)


def column_label(multi_index) -> str:
    nz = [f"a{k + 1}>={i}" for k, i in enumerate(multi_index) if i > 0]
    return "intercept" if not nz else "*".join(nz)


def _design_from_columns(alpha, columns) -> np.ndarray:
    alpha = np.atleast_2d(alpha)
    return (alpha[:, None, :] >= columns[None, :, :]).all(-1).astype(np.float64)


def design_vector(alpha, spec: ModelSpec, order: int) -> np.ndarray:
    """Cumulative-coded design vector of one profile, reduced to ``order``."""
    alpha = np.asarray(alpha, dtype=np.int64)
    if alpha.shape != (spec.K,):
        raise ValueError(f"profile must have {spec.K} entries")
    if np.any(alpha < 0) or np.any(alpha >= spec.L):
        raise ValueError(f"profile {alpha.tolist()} outside {{0..{spec.L - 1}}}^{spec.K}")
    if not 1 <= order <= spec.K:
        raise ValueError(f"order must lie in [1, {spec.K}]")
    return _design_from_columns(alpha, design_columns(spec.K, spec.L, order))[0]


def full_kronecker_design(alpha, L: int) -> np.ndarray:
    """Unreduced ``d_1(alpha) ⊗ ... ⊗ d_K(alpha)``."""
    out = np.ones(1)
    for a in np.asarray(alpha):
        out = np.kron(out, (a >= np.arange(L)).astype(float))
    return out


# ---------------------------------------------------------------------------
# parameter containers


def default_kappa(M, spacing: float = 1.0) -> np.ndarray:
    """Threshold table (J, M_max + 1): -inf, 0, free..., +inf, padded with +inf."""
    M = list(M)
    out = np.full((len(M), max(M) + 1), np.inf)
    for j, m in enumerate(M):
        out[j, 0] = -np.inf
        out[j, 1:m] = spacing * np.arange(m - 1)
    return out


@dataclass
class MeasurementParams:
    beta: np.ndarray  # (H, J)
    kappa: np.ndarray  # (J, M_max + 1)
    delta: np.ndarray  # (H, J) 0/1
    omega: float = 0.5

    def validate(self, spec: ModelSpec, tol: float = 1e-10) -> None:
        if self.beta.shape != (spec.H, spec.J) or self.delta.shape != (spec.H, spec.J):
            raise ValueError(f"beta/delta must be {(spec.H, spec.J)}")
        check_kappa(self.kappa, spec)
        if np.any(self.delta[0] != 1):
            raise ValueError("intercept row of delta must be all ones")
        if np.any((self.delta == 0) & (self.beta != 0)):
            raise ValueError("inactive coefficients must be zero")
        for j in range(spec.J):
            if not check_monotone(self.beta[:, j], spec, tol):
                raise ValueError(f"beta column {j} violates monotonicity")


@dataclass
class StructuralParams:
    gamma: np.ndarray  # (K, L + 1)
    lam: np.ndarray  # (D, K)
    xi: np.ndarray  # (H_otr, K)
    R: np.ndarray  # (K, K)

    @property
    def zeta(self) -> np.ndarray:
        return np.vstack([self.lam, self.xi])

    def validate(self, spec: ModelSpec) -> None:
        check_gamma(self.gamma, spec)
        if self.lam.shape != (spec.D, spec.K) or self.xi.shape != (spec.H_otr, spec.K):
            raise ValueError("lambda/xi shapes do not match the ModelSpec")
        cholesky_pd(self.R, "R")
        if not np.allclose(np.diag(self.R), 1.0, atol=1e-10):
            raise ValueError("R must have unit diagonal")


@dataclass
class ExpandedParams:
    """Expanded-scale twins: Sigma = V^1/2 R V^1/2 and tilde-quantities scaled by V^1/2."""

    Sigma: np.ndarray
    gamma_t: np.ndarray
    zeta_t: np.ndarray
    alpha_star_t: np.ndarray | None = None

    @property
    def V(self) -> np.ndarray:
        return np.diag(self.Sigma).copy()

    @classmethod
    def from_original(cls, structural: StructuralParams, v, alpha_star=None) -> "ExpandedParams":
        sv = np.sqrt(np.asarray(v, dtype=float))
        sigma = structural.R * np.outer(sv, sv)
        a_t = None if alpha_star is None else np.asarray(alpha_star) * sv
        return cls(sigma, structural.gamma * sv[:, None], structural.zeta * sv, a_t)


def check_kappa(kappa, spec: ModelSpec) -> None:
    kappa = np.asarray(kappa)
    if kappa.shape != (spec.J, spec.M_max + 1):
        raise ValueError(f"kappa must have shape {(spec.J, spec.M_max + 1)}")
    for j, m in enumerate(spec.M):
        k = kappa[j, : m + 1]
        if k[0] != -np.inf or k[1] != 0 or k[m] != np.inf:
            raise ValueError(f"item {j}: thresholds must start -inf, 0 and end +inf")
        if np.any(np.diff(k) <= 0):
            raise ValueError(f"item {j}: thresholds must increase strictly")


def check_gamma(gamma, spec: ModelSpec) -> None:
    gamma = np.asarray(gamma)
    if gamma.shape != (spec.K, spec.L + 1):
        raise ValueError(f"gamma must have shape {(spec.K, spec.L + 1)}")
    if np.any(gamma[:, 0] != -np.inf) or np.any(gamma[:, 1] != 0) or np.any(gamma[:, -1] != np.inf):
        raise ValueError("gamma rows must start -inf, 0 and end +inf")
    if np.any(np.diff(gamma, axis=1) <= 0):
        raise ValueError("gamma rows must increase strictly")


def default_gamma(K: int, L: int, spacing: float = 1.0) -> np.ndarray:
    g = np.empty((K, L + 1))
    g[:, 0] = -np.inf
    g[:, 1:L] = spacing * np.arange(L - 1)
    g[:, L] = np.inf
    return g


# ---------------------------------------------------------------------------
# measurement model


def emission_prob(m: int, alpha, beta_j, kappa_j, spec: ModelSpec) -> float:
    """P(Y_j = m | alpha) under the cumulative probit link."""
    kappa_j = np.asarray(kappa_j, dtype=float)
    if not 0 <= m < len(kappa_j) - 1:
        raise ValueError(f"category {m} out of range")
    if np.any(np.diff(kappa_j) <= 0):
        raise ValueError("thresholds must increase strictly")
    eta = float(design_vector(alpha, spec, spec.meas_order) @ np.asarray(beta_j, dtype=float))
    return category_probs(eta, kappa_j)[m]


def category_probs(eta, kappa_j) -> np.ndarray:
    """Category probabilities for linear predictor(s) ``eta``; trailing axis is category."""
    kappa_j = np.asarray(kappa_j, dtype=float)
    eta = np.asarray(eta, dtype=float)[..., None]
    upper = std_normal_cdf(np.broadcast_to(kappa_j[1:], eta.shape[:-1] + (len(kappa_j) - 1,)) - eta)
    lower = std_normal_cdf(np.broadcast_to(kappa_j[:-1], upper.shape) - eta)
    return upper - lower


def emissions_matrix(theta_m: MeasurementParams, spec: ModelSpec) -> np.ndarray:
    """Stacked class-conditional response probabilities, shape (sum M_j, L^K)."""
    eta = spec.state_design @ theta_m.beta  # (S, J)
    blocks = []
    for j, m in enumerate(spec.M):
        blocks.append(category_probs(eta[:, j], theta_m.kappa[j, : m + 1]).T)
    return np.vstack(blocks)


def item_block_rows(spec: ModelSpec) -> list[slice]:
    starts = np.concatenate([[0], np.cumsum(spec.M)])
    return [slice(int(starts[j]), int(starts[j + 1])) for j in range(spec.J)]


# ---------------------------------------------------------------------------
# structural model


def transition_mean(x_t, alpha_prev, theta_s: StructuralParams, spec: ModelSpec) -> np.ndarray:
    mean = np.asarray(x_t, dtype=float) @ theta_s.lam
    if alpha_prev is not None:
        d_prev = design_vector(alpha_prev, spec, spec.trans_order)
        mean = mean + d_prev @ theta_s.xi
    return mean


def state_boxes(gamma, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper threshold box of every latent state, each (L^K, K)."""
    prof = spec.profiles
    ks = np.arange(spec.K)
    return gamma[ks, prof], gamma[ks, prof + 1]


def transition_prob(alpha_t, alpha_prev, x_t, theta_s: StructuralParams, spec: ModelSpec) -> float:
    """P(alpha^t | alpha^{t-1}, x^t); ``alpha_prev=None`` gives the initial distribution."""
    alpha_t = np.asarray(alpha_t, dtype=np.int64)
    if np.shape(x_t) != (spec.D,):
        raise ValueError(f"covariate vector must have length {spec.D}")
    if alpha_t.shape != (spec.K,):
        raise ValueError(f"profile must have {spec.K} entries")
    mean = transition_mean(x_t, alpha_prev, theta_s, spec)
    ks = np.arange(spec.K)
    lo = theta_s.gamma[ks, alpha_t]
    hi = theta_s.gamma[ks, alpha_t + 1]
    return float(mvn_rect_prob_batch(mean[None, :], theta_s.R, lo[None, :], hi[None, :])[0])


def state_probs(x_t, alpha_prev, theta_s: StructuralParams, spec: ModelSpec) -> np.ndarray:
    """Probabilities of all L^K target states."""
    mean = transition_mean(x_t, alpha_prev, theta_s, spec)
    lo, hi = state_boxes(theta_s.gamma, spec)
    means = np.broadcast_to(mean, lo.shape)
    return mvn_rect_prob_batch(means, theta_s.R, lo, hi)


def transition_matrix(x_t, theta_s: StructuralParams, spec: ModelSpec) -> np.ndarray:
    """U[target, source] = P(alpha^t = target | alpha^{t-1} = source)."""
    lo, hi = state_boxes(theta_s.gamma, spec)
    s = spec.n_states
    means = np.asarray(x_t, dtype=float) @ theta_s.lam + spec.state_design_otr @ theta_s.xi  # (S, K)
    all_means = np.repeat(means, s, axis=0)  # source-major
    probs = mvn_rect_prob_batch(all_means, theta_s.R, np.tile(lo, (s, 1)), np.tile(hi, (s, 1)))
    return probs.reshape(s, s).T


# ---------------------------------------------------------------------------
# monotonicity


def check_monotone(beta_j, spec: ModelSpec, tol: float = 1e-10) -> bool:
    """Whether ``d_u beta >= d_v beta`` for every pair of profiles u >= v."""
    pairs = spec.monotone_pairs
    if len(pairs) == 0:
        return True
    return bool(np.all(pairs @ np.asarray(beta_j, dtype=float) >= -tol))


def monotone_truncation_point(h: int, beta_j, spec: ModelSpec) -> float:
    """Smallest value of coefficient ``h`` keeping ``beta_j`` in the monotone region.

    Maximizes ``-(d_u - d_v) beta`` over pairs u >= v in which column ``h``
    switches on, with coefficient ``h`` itself excluded. The intercept is
    unconstrained.
    """
    if h == 0:
        return -np.inf
    table = spec.truncation_tables[h]
    if table is None:
        return -np.inf
    return float(np.max(-(table @ np.asarray(beta_j, dtype=float))))


@dataclass
class Dataset:
    """Panel of ordinal responses with covariates.

    ``Y`` is (N, T, J) with :data:`MISSING` in masked rows, ``X`` is (N, T, D)
    and ``mask[n, t]`` marks a wholly missing response row.
    """

    Y: np.ndarray
    X: np.ndarray
    M: tuple[int, ...]
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=float)
        self.M = tuple(int(m) for m in self.M)
        if self.mask is None:
            self.mask = np.zeros(self.Y.shape[:2], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.validate()

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def J(self) -> int:
        return self.Y.shape[2]

    @property
    def D(self) -> int:
        return self.X.shape[2]

    def validate(self) -> None:
        if self.Y.ndim != 3 or self.X.ndim != 3:
            raise ValueError("Y must be (N, T, J) and X must be (N, T, D)")
        if self.X.shape[:2] != self.Y.shape[:2] or self.mask.shape != self.Y.shape[:2]:
            raise ValueError("Y, X and mask disagree on (N, T)")
        if len(self.M) != self.J:
            raise ValueError(f"{len(self.M)} category counts for {self.J} items")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("covariates must be finite")
        obs = ~self.mask
        y = self.Y[obs]
        m = np.asarray(self.M)
        bad = (y < 0) | (y >= m)
        if bad.any():
            r, j = np.argwhere(bad)[0]
            n, t = np.argwhere(obs)[r]
            raise ValueError(f"response {y[r, j]} out of range at (n={n}, t={t}, item={j})")
        if np.any(self.Y[self.mask] != MISSING):
            raise ValueError("masked rows must hold the MISSING code")

    def with_mask(self, mask) -> "Dataset":
        mask = np.asarray(mask, dtype=bool) | self.mask
        Y = self.Y.copy()
        Y[mask] = MISSING
        return Dataset(Y, self.X.copy(), self.M, mask)
