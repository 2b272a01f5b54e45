import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longrlcm.diagnostics import (
    ParamPoint,
    class_response_probs,
    conditional_loglik,
    equal_tail_interval,
    ess,
    geweke_z,
    iact,
    summarize_chain,
    waic,
)
from longrlcm.model import (
    MISSING,
    MeasurementParams,
    ModelSpec,
    StructuralParams,
    default_gamma,
    default_kappa,
    emission_prob,
)
from longrlcm.sampler import Chain, ChainConfig
from oracles import reference_waic


def test_loglik_single_binary():
    spec = ModelSpec(1, 2, (2,), meas_order=1)
    val = conditional_loglik([[0]], np.zeros((2, 1)), default_kappa((2,)), [[0]], spec)
    assert val == pytest.approx(math.log(0.5), abs=1e-15)


def test_loglik_is_product_of_emissions():
    spec = ModelSpec(2, 2, (2, 3), meas_order=2)
    rng = np.random.default_rng(1)
    beta = np.abs(rng.normal(size=(4, 2)))
    kappa = default_kappa(spec.M, 0.7)
    y = np.array([[1, 2], [0, 1]])
    alpha = np.array([[1, 0], [1, 1]])
    want = 1.0
    for t in range(2):
        for j in range(2):
            want *= emission_prob(y[t, j], alpha[t], beta[:, j], kappa[j, : spec.M[j] + 1], spec)
    got = conditional_loglik(y, beta, kappa, alpha, spec)
    assert got == pytest.approx(math.log(want), abs=1e-12)
    # a masked row contributes nothing
    y_m = np.vstack([y, np.full((1, 2), MISSING)])
    alpha_m = np.vstack([alpha, [[0, 0]]])
    assert conditional_loglik(y_m, beta, kappa, alpha_m, spec) == pytest.approx(got, abs=1e-14)


def test_loglik_zero_probability_warns():
    spec = ModelSpec(1, 2, (2,), meas_order=1)
    beta = np.array([[60.0], [0.0]])
    with pytest.warns(RuntimeWarning):
        assert conditional_loglik([[0]], beta, default_kappa((2,)), [[0]], spec) == -np.inf




def test_waic_reference():
    ll = np.random.default_rng(3).normal(-3, 1, size=(50, 20))
    np.testing.assert_allclose(waic(ll), reference_waic(ll), atol=1e-8)


def test_waic_edge_cases():
    with pytest.warns(RuntimeWarning):
        w, lppd, pw = waic(np.array([[math.log(0.3)]]))
    assert (w, pw) == (pytest.approx(-2 * math.log(0.3)), 0.0)
    ll = np.tile([-1.0, -2.5, -0.3], (7, 1))
    w, lppd, pw = waic(ll)
    assert pw == 0.0
    assert w == pytest.approx(2 * 3.8)
    with pytest.raises(ValueError):
        waic(np.array([[0.0, -np.inf], [0.0, 0.0]]))


def test_waic_handles_very_negative_loglik():
    ll = np.full((10, 3), -2000.0)
    w, lppd, pw = waic(ll)
    assert lppd == pytest.approx(-6000.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_waic_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    ll = rng.normal(-2, 0.7, size=(int(rng.integers(2, 30)), int(rng.integers(1, 15))))
    base = waic(ll)
    perm = ll[rng.permutation(ll.shape[0])][:, rng.permutation(ll.shape[1])]
    np.testing.assert_allclose(waic(perm), base, rtol=1e-12, atol=1e-10)


def test_geweke_separates_shifted_halves():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(0, 1, 5000), rng.normal(5, 1, 5000)])
    assert abs(geweke_z(x)) > 10


def test_geweke_null_distribution():
    rng = np.random.default_rng(20240611)
    z = np.array([geweke_z(rng.standard_normal(10_000)) for _ in range(1000)])
    assert np.mean(np.abs(z) < 3) >= 0.99


def test_geweke_errors():
    with pytest.raises(ValueError, match="constant"):
        geweke_z(np.ones(500))
    with pytest.raises(ValueError):
        geweke_z(np.arange(50.0))
    with pytest.raises(ValueError):
        geweke_z(np.random.default_rng(0).normal(size=500), 0.6, 0.5)


def test_iact_iid():
    x = np.random.default_rng(2).standard_normal(100_000)
    assert iact(x) == pytest.approx(1.0, abs=0.1)
    assert ess(x) == pytest.approx(x.size / iact(x))


def test_iact_ar1():
    rng = np.random.default_rng(3)
    phi, n = 0.9, 1_000_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    assert iact(x) == pytest.approx(19.0, abs=1.5)


def test_iact_errors():
    with pytest.raises(ValueError):
        iact(np.zeros(300))
    with pytest.raises(ValueError):
        iact(np.arange(10.0))


@settings(max_examples=30, deadline=None)
@given(shift=st.floats(-1e3, 1e3), scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_iact_affine_invariance(shift, scale, seed):
    x = np.cumsum(np.random.default_rng(seed).standard_normal(2000)) * 0.1
    x = x + np.random.default_rng(seed + 1).standard_normal(2000)
    assert iact(shift + scale * x) == pytest.approx(iact(x), rel=1e-6)


# ---------------------------------------------------------------------------
# summaries


def synthetic_chain(S, spec, rng):
    H, J, K = spec.H, spec.J, spec.K
    delta = rng.integers(0, 2, size=(S, H, J)).astype(np.int8)
    delta[:, 0] = 1
    beta = np.abs(rng.normal(size=(S, H, J))) * delta
    kappa = np.broadcast_to(default_kappa(spec.M), (S, J, spec.M_max + 1)).copy()
    draws = {
        "beta": beta,
        "delta": delta,
        "kappa": kappa,
        "omega": rng.random(S),
        "gamma": np.broadcast_to(default_gamma(K, spec.L), (S, K, spec.L + 1)).copy(),
        "lam": rng.normal(size=(S, spec.D, K)),
        "xi": rng.normal(size=(S, spec.H_otr, K)),
        "R": np.broadcast_to(np.eye(K), (S, K, K)).copy(),
        "loglik": -rng.random((S, 4)),
    }
    return Chain(spec, ChainConfig(post_burn_in=max(S, 1)), draws, np.zeros((4, 1, spec.n_states)),
                 np.full(J, np.nan))


def test_single_draw_summary():
    spec = ModelSpec(2, 2, (2, 3), meas_order=2, D=1)
    chain = synthetic_chain(1, spec, np.random.default_rng(0))
    s = summarize_chain(chain)
    np.testing.assert_array_equal(s.mean.beta, chain.draws["beta"][0])
    np.testing.assert_array_equal(s.mean.lam, chain.draws["lam"][0])
    np.testing.assert_array_equal(s.mean.delta, chain.draws["delta"][0])
    np.testing.assert_array_equal(s.lower["beta"], s.upper["beta"])


def test_delta_boundary_is_zero():
    spec = ModelSpec(1, 2, (2,), meas_order=1, D=1)
    chain = synthetic_chain(2, spec, np.random.default_rng(0))
    chain.draws["delta"][:, 1, 0] = [0, 1]
    assert summarize_chain(chain).mean.delta[1, 0] == 0


def test_interval_matches_sort_reference():
    x = np.random.default_rng(4).normal(size=1000)
    lo, hi = equal_tail_interval(x, 0.95)
    srt = np.sort(x)

    def type7(p):
        h = (len(srt) - 1) * p
        f = math.floor(h)
        return srt[f] + (h - f) * (srt[min(f + 1, len(srt) - 1)] - srt[f])

    assert lo == pytest.approx(type7(0.025), abs=1e-14)
    assert hi == pytest.approx(type7(0.975), abs=1e-14)


def test_summary_zero_flags():
    spec = ModelSpec(1, 2, (2,), meas_order=1, D=1)
    chain = synthetic_chain(400, spec, np.random.default_rng(5))
    chain.draws["lam"][:, 0, 0] = np.random.default_rng(6).normal(5, 0.1, size=400)
    s = summarize_chain(chain)
    assert not s.zero_in_ci["lam"][0, 0]
    assert s.zero_in_ci["xi"].all()
    assert s.meta["quantile_method"] == "type-7"


def test_class_response_probs():
    spec = ModelSpec(2, 2, (3, 2), meas_order=2, D=1)
    rng = np.random.default_rng(7)
    beta = np.abs(rng.normal(size=(4, 2)))
    kappa = default_kappa(spec.M, 0.8)
    p = class_response_probs(beta[None], kappa[None], spec)[0]
    np.testing.assert_allclose(p[:3].sum(axis=0), 1.0)
    np.testing.assert_allclose(p[3:].sum(axis=0), 1.0)
    for s, prof in enumerate(spec.profiles):
        for m in range(3):
            assert p[m, s] == pytest.approx(emission_prob(m, prof, beta[:, 0], kappa[0, :4], spec), abs=1e-14)
    meas = MeasurementParams(beta, kappa, np.ones((4, 2), dtype=int))
    s = StructuralParams(default_gamma(2, 2), np.zeros((1, 2)), np.zeros((3, 2)), np.eye(2))
    np.testing.assert_allclose(ParamPoint.from_params(meas, s, spec).eta, p)
