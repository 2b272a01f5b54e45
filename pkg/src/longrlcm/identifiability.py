"""Checkable sufficient conditions for identifiability of the model.

Every check is numeric and report-only: failing a condition does not mean the
model is unidentified, only that this sufficient condition could not be
confirmed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    Dataset,
    MeasurementParams,
    ModelSpec,
    StructuralParams,
    emissions_matrix,
    item_block_rows,
    state_probs,
    transition_matrix,
)

RANK_RTOL = 1e-8
MAX_SPLITS = 200
SPLIT_SEED = 7


def numeric_rank(a, rtol: float = RANK_RTOL) -> int:
    """Number of singular values above ``rtol`` times the largest."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass
class IdentifiabilityReport:
    conditions: dict[str, bool]
    details: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.conditions.values())

    def lines(self) -> list[str]:
        out = []
        for name, ok in self.conditions.items():
            extra = self.details.get(name, "")
            out.append(f"{name}: {'pass' if ok else 'FAIL'}" + (f" ({extra})" if extra else ""))
        return out


def _unique_rows(X: np.ndarray) -> np.ndarray:
    return np.unique(X.reshape(X.shape[0], -1), axis=0).reshape((-1,) + X.shape[1:])


def covariate_rank_ok(X: np.ndarray, spec: ModelSpec) -> tuple[bool, str]:
    """Column rank of each X^t (the only free part of the first-period design)."""
    bad = [t for t in range(X.shape[1]) if numeric_rank(X[:, t]) < spec.D]
    return not bad, f"rank-deficient X at t={bad}" if bad else ""


def design_rank_ok(X: np.ndarray, alpha: np.ndarray, spec: ModelSpec) -> tuple[bool, str]:
    """Full column rank of W^t = (X^t, d_otr(alpha^{t-1})) for t >= 2 and of X^1."""
    ok, msg = covariate_rank_ok(X[:, :1], spec)
    if not ok:
        return False, "rank-deficient X at t=0"
    bad = []
    for t in range(1, X.shape[1]):
        W = np.hstack([X[:, t], spec.state_design_otr[spec.state_index(alpha[:, t - 1])]])
        if numeric_rank(W) < W.shape[1]:
            bad.append(t)
    return not bad, f"rank-deficient W at t={bad}" if bad else ""


def data_conditions(data: Dataset, spec: ModelSpec) -> dict[str, bool]:
    """Conditions that depend on the data layout only (C2, C5 and the covariate part of C6)."""
    return {
        "C2": sum(spec.M) >= spec.n_states,
        "C5": data.N >= spec.D + spec.H_otr,
        "C6": covariate_rank_ok(data.X, spec)[0],
    }


def find_item_tripartition(B: np.ndarray, spec: ModelSpec, max_splits: int = MAX_SPLITS):
    """Three disjoint item sets whose stacked emission rows each have full rank.

    Items are dealt greedily, each to the first set whose rank it raises; the
    item order is the natural one first, then random permutations. Returns a
    list of three index lists or None.
    """
    target = spec.n_states
    blocks = item_block_rows(spec)
    rng = np.random.default_rng(SPLIT_SEED)
    orders = [np.arange(spec.J)] + [rng.permutation(spec.J) for _ in range(max_splits - 1)]
    for order in orders:
        sets: list[list[int]] = [[], [], []]
        ranks = [0, 0, 0]
        for j in order:
            for s in range(3):
                if ranks[s] >= target:
                    continue
                rows = np.vstack([B[blocks[i]] for i in sets[s] + [j]])
                r = numeric_rank(rows)
                if r > ranks[s]:
                    sets[s].append(int(j))
                    ranks[s] = r
                    break
        if min(ranks) >= target:
            return sets
    return None


def check_identifiability(
    meas: MeasurementParams,
    structural: StructuralParams,
    X: np.ndarray,
    spec: ModelSpec,
    alpha: np.ndarray | None = None,
) -> IdentifiabilityReport:
    """Evaluate C1-C6, D1 and D2 for one parameter set.

    ``X`` is (N, T, D). ``alpha`` (N, T, K) supplies the lagged profiles in the
    transition design; without it C6 checks the covariate blocks only.
    """
    X = np.asarray(X, dtype=float)
    N, T = X.shape[:2]
    conds: dict[str, bool] = {}
    details: dict[str, str] = {}
    S = spec.n_states

    # C1: initial class probabilities and their propagation stay positive
    traj = _unique_rows(X)
    mats = {}
    positive = True
    for xs in traj:
        pi = state_probs(xs[0], None, structural, spec)
        positive &= bool(np.all(pi > 0))
        for t in range(1, T):
            key = xs[t].tobytes()
            if key not in mats:
                mats[key] = transition_matrix(xs[t], structural, spec)
            pi = mats[key] @ pi
            positive &= bool(np.all(pi > 0))
    conds["C1"] = positive

    conds["C2"] = sum(spec.M) >= S
    if not conds["C2"]:
        details["C2"] = f"sum of categories {sum(spec.M)} < {S} states"

    B = emissions_matrix(meas, spec)
    split = find_item_tripartition(B, spec) if conds["C2"] else None
    conds["C3"] = split is not None
    details["C3"] = f"item sets {split}" if split else "no split found"

    low = [key for key, U in mats.items() if numeric_rank(U) < S]
    conds["C4"] = not low
    if low:
        details["C4"] = f"{len(low)} rank-deficient transition matrices"

    conds["C5"] = N >= spec.D + spec.H_otr
    if alpha is None:
        ok, msg = covariate_rank_ok(X, spec)
    else:
        ok, msg = design_rank_ok(X, np.asarray(alpha), spec)
    conds["C6"] = ok
    if msg:
        details["C6"] = msg

    d1, d2, msg1, msg2 = _sparsity_conditions(meas.delta, spec)
    conds["D1"] = d1
    conds["D2"] = d2
    if msg1:
        details["D1"] = msg1
    if msg2:
        details["D2"] = msg2
    return IdentifiabilityReport(conds, details)


def _sparsity_conditions(delta: np.ndarray, spec: ModelSpec):
    cols = spec.meas_columns
    order = (cols > 0).sum(axis=1)
    weak = []
    for k in range(spec.K):
        main = np.flatnonzero((order == 1) & (cols[:, k] > 0))
        n_items = int(np.sum(np.all(delta[main] == 1, axis=0)))
        if n_items < 2:
            weak.append(k)
    inter = np.flatnonzero(order >= 2)
    n_active = int(delta[inter].sum()) if inter.size else 0
    msg1 = f"attributes {weak} lack two items with all main effects" if weak else ""
    msg2 = f"{n_active} interaction coefficients active" if n_active else ""
    return not weak, n_active == 0, msg1, msg2
