"""Synthetic scenarios, missingness injection, label alignment and recovery scoring."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import ParamPoint
from .dist import RngStream, cholesky_pd
from .model import (
    Dataset,
    MeasurementParams,
    ModelSpec,
    StructuralParams,
    category_probs,
    check_monotone,
    default_gamma,
)
from .sampler import Chain, ChainConfig, run_chain

ITEMS_PER_SET = 5
N_ITEMS = {2: 15, 3: 25, 4: 45}
INTERCEPT = -1.0
MAIN_EFFECT = 2.0  # split evenly over the levels of an attribute
PAIR_MAIN_EFFECT = 1.0
MIN_LEVEL_STEP = 0.75  # floor on the per-level main effect when L > 2
INTERACTION = 1.0
JITTER = 0.25
LAMBDA_RANGE = (0.3, 0.6)
XI_INTERCEPT = -0.5
XI_DIAGONAL = (0.8, 1.0)
GAMMA_SPACING = 1.0
MIN_SEPARATION = 0.15
KAPPA_GRID = np.arange(0.2, 3.0001, 0.05)


@dataclass(frozen=True)
class ScenarioSpec:
    N: int
    T: int
    K: int = 2
    L: int = 2
    rho: float = 0.25
    missing_rate: float = 0.0
    replications: int = 1
    seed: int = 0
    categories: int = 3

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("scenarios need K >= 2 to have attribute pairs")
        if not -1.0 / (self.K - 1) < self.rho < 1.0:
            raise ValueError(f"rho={self.rho} does not give a positive definite equicorrelation")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.K not in N_ITEMS or self.L not in (2, 3):
            warnings.warn("scenario outside the K in {2,3,4}, L in {2,3} grid", stacklevel=2)

    @property
    def J(self) -> int:
        return N_ITEMS.get(self.K, ITEMS_PER_SET * (self.K + self.K * (self.K - 1) // 2 - 1))

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.K, self.L, (self.categories,) * self.J, meas_order=2, trans_order=1, D=2)


def item_sets(K: int, J: int) -> list[tuple[int, ...]]:
    """Attribute set measured by each item: single attributes first, then pairs."""
    groups = [(k,) for k in range(K)] + list(itertools.combinations(range(K), 2))
    groups = groups[: J // ITEMS_PER_SET]
    return [g for g in groups for _ in range(ITEMS_PER_SET)]


def _column_index(spec: ModelSpec) -> dict[tuple[int, ...], int]:
    return {tuple(c): h for h, c in enumerate(spec.meas_columns)}


def _unit(K: int, levels: dict[int, int]) -> tuple[int, ...]:
    c = [0] * K
    for k, lev in levels.items():
        c[k] = lev
    return tuple(c)


def _pick_kappa(eta_states: np.ndarray, M: int, spec: ModelSpec) -> np.ndarray:
    """Equally spaced free thresholds that keep neighbouring classes apart.

    The spacing closest to half the predictor range is used unless some pair
    of neighbouring classes (one level apart in one attribute, predictors
    differing by more than 0.5) would then differ by less than
    ``MIN_SEPARATION`` in every category probability.
    """
    prof = spec.profiles
    diff = np.abs(prof[:, None, :] - prof[None, :, :])
    adjacent = (diff.sum(-1) == 1) & (np.abs(eta_states[:, None] - eta_states[None, :]) > 0.5)
    u, v = np.nonzero(np.triu(adjacent))
    target = np.clip(np.ptp(eta_states) / 2.0, 0.5, 2.0)
    for step in KAPPA_GRID[np.argsort(np.abs(KAPPA_GRID - target), kind="stable")]:
        kappa = np.concatenate([[-np.inf], step * np.arange(M - 1), [np.inf]])
        p = category_probs(eta_states, kappa)
        gap = np.abs(p[u] - p[v]).max(axis=1).min() if u.size else 1.0
        if gap >= MIN_SEPARATION:
            return kappa
    raise ValueError("could not find thresholds separating neighbouring classes")


def generate_params(scenario: ScenarioSpec, rng) -> tuple[MeasurementParams, StructuralParams]:
    """Generating parameters with five-item blocks per attribute and per attribute pair."""
    spec = scenario.model_spec()
    K, L, J = spec.K, spec.L, spec.J
    cols = _column_index(spec)
    beta = np.zeros((spec.H, J))
    delta = np.zeros((spec.H, J), dtype=np.int8)
    sets = item_sets(K, J)
    for j, attrs in enumerate(sets):
        beta[0, j] = INTERCEPT + rng.uniform(-JITTER, JITTER)
        main = MAIN_EFFECT if len(attrs) == 1 else PAIR_MAIN_EFFECT
        for k in attrs:
            for lev in range(1, L):
                h = cols[_unit(K, {k: lev})]
                beta[h, j] = max(main / (L - 1), MIN_LEVEL_STEP) + rng.uniform(-JITTER, JITTER) / (L - 1)
        if len(attrs) == 2:
            h = cols[_unit(K, {attrs[0]: 1, attrs[1]: 1})]
            beta[h, j] = INTERACTION + rng.uniform(-JITTER, JITTER)
    delta[beta != 0] = 1
    delta[0] = 1
    eta_states = spec.state_design @ beta
    kappa = np.full((J, spec.M_max + 1), np.inf)
    for j in range(J):
        kappa[j, : spec.M[j] + 1] = _pick_kappa(eta_states[:, j], spec.M[j], spec)
        if not check_monotone(beta[:, j], spec):
            raise AssertionError(f"generated item {j} is not monotone")
    meas = MeasurementParams(beta, kappa, delta, float(delta.mean()))

    lo, hi = LAMBDA_RANGE
    lam = rng.uniform(lo, hi, size=(spec.D, K)) * rng.choice([-1.0, 1.0], size=(spec.D, K))
    xi = np.zeros((spec.H_otr, K))
    xi[0] = XI_INTERCEPT
    otr_cols = {tuple(c): h for h, c in enumerate(spec.otr_columns)}
    for k in range(K):
        for lev in range(1, L):
            xi[otr_cols[_unit(K, {k: lev})], k] = rng.uniform(*XI_DIAGONAL) / (L - 1)
    R = np.full((K, K), scenario.rho)
    np.fill_diagonal(R, 1.0)
    cholesky_pd(R, "equicorrelation")
    gamma = default_gamma(K, L, GAMMA_SPACING)
    structural = StructuralParams(gamma, lam, xi, R)
    meas.validate(spec)
    structural.validate(spec)
    return meas, structural


def generate_covariates(N: int, T: int, rng) -> np.ndarray:
    """Standardized uniform age and Bernoulli(0.5) sex, constant over time; (N, T, 2)."""
    age = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=N)
    sex = (rng.random(N) < 0.5).astype(float)
    X = np.stack([age, sex], axis=1)
    return np.repeat(X[:, None, :], T, axis=1)


def _discretize(z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    out = np.empty(z.shape, dtype=np.int64)
    for k in range(z.shape[-1]):
        out[..., k] = np.searchsorted(gamma[k, 1:-1], z[..., k], side="left")
    return out


def simulate_profiles(X: np.ndarray, structural: StructuralParams, spec: ModelSpec, rng) -> np.ndarray:
    """Latent profiles (N, T, K) from the multivariate probit transition model."""
    N, T = X.shape[:2]
    chol = np.linalg.cholesky(structural.R)
    alpha = np.empty((N, T, spec.K), dtype=np.int64)
    for t in range(T):
        mean = X[:, t] @ structural.lam
        if t > 0:
            mean = mean + spec.state_design_otr[spec.state_index(alpha[:, t - 1])] @ structural.xi
        z = mean + rng.standard_normal((N, spec.K)) @ chol.T
        alpha[:, t] = _discretize(z, structural.gamma)
    return alpha


def simulate_responses(alpha: np.ndarray, meas: MeasurementParams, spec: ModelSpec, rng) -> np.ndarray:
    eta = (spec.state_design @ meas.beta)[spec.state_index(alpha)]
    ystar = eta + rng.standard_normal(eta.shape)
    return (ystar[..., None] > meas.kappa[None, None, :, 1:]).sum(axis=-1)


def generate_data(params, scenario: ScenarioSpec, rng) -> tuple[Dataset, np.ndarray]:
    """Covariates, latent profiles and responses; returns ``(dataset, alpha)``."""
    meas, structural = params
    spec = scenario.model_spec()
    X = generate_covariates(scenario.N, scenario.T, rng)
    alpha = simulate_profiles(X, structural, spec, rng)
    Y = simulate_responses(alpha, meas, spec, rng)
    return Dataset(Y, X, spec.M), alpha


def apply_missingness(data: Dataset, rate: float, rng) -> Dataset:
    """Mask each (respondent, time) row independently with probability ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    if rate == 0:
        return Dataset(data.Y.copy(), data.X.copy(), data.M, data.mask.copy())
    mask = rng.random(data.mask.shape) < rate
    return data.with_mask(mask)


# stream ids under a scenario or chain seed; replication r offsets the scenario ids by 100 * (r + 1)
STREAM_PARAMS, STREAM_DATA, STREAM_MISSING, STREAM_CHAIN = 1, 2, 3, 4


def run_replication(scenario: ScenarioSpec, config: ChainConfig, rep: int) -> tuple[ParamPoint, Chain]:
    """Generate replication ``rep`` of a scenario and fit it with chain seed ``config.seed + rep``."""
    base = 100 * (rep + 1)
    params = generate_params(scenario, RngStream(scenario.seed, base + STREAM_PARAMS).generator())
    data, _ = generate_data(params, scenario, RngStream(scenario.seed, base + STREAM_DATA).generator())
    data = apply_missingness(data, scenario.missing_rate,
                             RngStream(scenario.seed, base + STREAM_MISSING).generator())
    spec = scenario.model_spec()
    seed = config.seed + rep
    chain = run_chain(data, spec, replace(config, seed=seed), RngStream(seed, STREAM_CHAIN).generator())
    return ParamPoint.from_params(*params, spec), chain


# ---------------------------------------------------------------------------
# label alignment and scoring


def _column_permutation(columns: np.ndarray, perm) -> np.ndarray:
    """Row indices that relabel design columns when new attribute k is old attribute perm[k]."""
    index = {tuple(c): h for h, c in enumerate(columns)}
    perm = np.asarray(perm)
    out = np.empty(len(columns), dtype=np.int64)
    for h, c in enumerate(columns):
        old = np.empty_like(c)
        old[perm] = c
        out[h] = index[tuple(old)]
    return out


def permute_point(point: ParamPoint, perm, spec: ModelSpec) -> ParamPoint:
    """Relabel attributes so that new attribute k is the old attribute ``perm[k]``."""
    perm = np.asarray(perm)
    rows = _column_permutation(spec.meas_columns, perm)
    otr_rows = _column_permutation(spec.otr_columns, perm)
    xi = point.xi[otr_rows][:, perm]
    states = spec.state_index(spec.profiles[:, np.argsort(perm)])
    return ParamPoint(
        beta=point.beta[rows],
        delta=point.delta[rows],
        kappa=point.kappa,
        gamma=point.gamma[perm],
        lam=point.lam[:, perm],
        xi=xi,
        R=point.R[np.ix_(perm, perm)],
        eta=point.eta[:, states],
    )


def _alignment_loss(truth: ParamPoint, est: ParamPoint) -> float:
    parts = [truth.beta - est.beta, truth.lam - est.lam, truth.xi - est.xi, truth.R - est.R]
    parts.append(truth.gamma[:, 1:-1] - est.gamma[:, 1:-1])
    diffs = np.concatenate([np.abs(p).ravel() for p in parts])
    return float(diffs.mean())


def align_labels(truth: ParamPoint, estimate: ParamPoint, spec: ModelSpec) -> tuple[int, ...]:
    """Attribute permutation of the estimate with the smallest mean absolute error to the truth."""
    if spec.K > 6:
        raise ValueError("brute-force alignment supports K <= 6")
    best, best_loss = None, np.inf
    for perm in itertools.permutations(range(spec.K)):
        loss = _alignment_loss(truth, permute_point(estimate, perm, spec))
        if loss < best_loss - 1e-15:
            best, best_loss = perm, loss
    return tuple(int(p) for p in best)


RECOVERY_COLUMNS = ("gamma", "eta", "R", "lam", "xi", "beta", "delta", "delta0", "delta1", "beta0", "beta1")


@dataclass
class RecoveryReport:
    """Averages over replications; MAE for continuous parameters, accuracy for delta.

    ``beta0``/``beta1`` are the MAE of truly inactive/active coefficients and
    ``delta0``/``delta1`` the accuracy on truly inactive/active indicators.
    Intercepts are fixed and excluded from the delta scores.
    """

    metrics: dict[str, float]
    per_replication: list[dict[str, float]] = field(default_factory=list)

    def row(self) -> list[float]:
        return [self.metrics[c] for c in RECOVERY_COLUMNS]


def _mae(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b))) if a.size else float("nan")


def replication_metrics(truth: ParamPoint, est: ParamPoint) -> dict[str, float]:
    finite = np.isfinite(truth.gamma[:, 1:-1])
    active = truth.delta[1:] == 1
    d_true = truth.delta[1:]
    d_est = est.delta[1:]
    correct = d_true == d_est
    b_true = truth.beta[1:]
    b_est = est.beta[1:]
    if truth.beta.shape != est.beta.shape:
        raise ValueError("beta dimension mismatch")
    return {
        "gamma": _mae(truth.gamma[:, 1:-1][finite], est.gamma[:, 1:-1][finite]),
        "eta": _mae(truth.eta, est.eta),
        "R": _mae(truth.R, est.R),  # every entry, unit diagonal included
        "lam": _mae(truth.lam, est.lam),
        "xi": _mae(truth.xi, est.xi),
        "beta": _mae(truth.beta, est.beta),
        "delta": float(correct.mean()),
        "delta0": float(correct[~active].mean()) if (~active).any() else float("nan"),
        "delta1": float(correct[active].mean()) if active.any() else float("nan"),
        "beta0": _mae(b_true[~active], b_est[~active]),
        "beta1": _mae(b_true[active], b_est[active]),
    }


def recovery_metrics(truths, estimates, spec: ModelSpec, align: bool = True) -> RecoveryReport:
    """Average per-replication recovery scores; estimates are label-aligned first."""
    truths = list(truths)
    estimates = list(estimates)
    if not truths or len(truths) != len(estimates):
        raise ValueError("need one truth per estimate and at least one replication")
    rows = []
    for truth, est in zip(truths, estimates):
        if align:
            est = permute_point(est, align_labels(truth, est, spec), spec)
        rows.append(replication_metrics(truth, est))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        avg = {c: float(np.nanmean([r[c] for r in rows])) if not all(np.isnan(r[c]) for r in rows)
               else float("nan") for c in RECOVERY_COLUMNS}
    return RecoveryReport(avg, rows)
