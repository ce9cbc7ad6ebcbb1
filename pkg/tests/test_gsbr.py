import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from dnrr import gsbr
from dnrr.dynamics import PolynomialMap, Trajectory, eval_basis, henon_map, lagged_windows
from dnrr.gsbr import Priors, ReconState
from oracles import binned_tv, joint_log_density, total_variation, wls_solve


def make_state(x, pmap, *, p=0.5, lambdas=(1.0,), alloc=None, levels=None, theta=None, initial=None):
    n = x.n
    alloc = np.ones(n, dtype=np.int64) if alloc is None else np.asarray(alloc, dtype=np.int64)
    levels = alloc.copy() if levels is None else np.asarray(levels, dtype=np.int64)
    theta = np.zeros(pmap.n_coef) if theta is None else np.asarray(theta, float)
    init = x.initial.copy() if initial is None else np.asarray(initial, float)
    return ReconState(p, np.asarray(lambdas, float), alloc, levels, theta, init)


# the tiny instance used by the conditional-correctness oracle
TINY_X = Trajectory([0.31, -0.52, 0.88, 0.05, -0.40], [0.2])
TINY_MAP = PolynomialMap.zeros(1, 1)
TINY_THETA = np.array([0.1, -0.6])
TINY_LAMBDAS = np.array([40.0, 4.0, 0.5])
TINY_ALLOC = np.array([1, 1, 2, 3, 3])
TINY_LEVELS = np.array([2, 3, 2, 3, 3])
PRIORS = Priors()


def tiny_state():
    return make_state(TINY_X, TINY_MAP, p=0.35, lambdas=TINY_LAMBDAS, alloc=TINY_ALLOC,
                      levels=TINY_LEVELS, theta=TINY_THETA)


def tiny_logpi(**kw):
    args = dict(x=TINY_X.values, initial=TINY_X.initial, theta=TINY_THETA, basis=TINY_MAP.basis,
                p=0.35, lambdas=TINY_LAMBDAS, alloc=TINY_ALLOC, levels=TINY_LEVELS, priors=PRIORS)
    args.update(kw)
    return joint_log_density(**args)


def _log_scale(draws, logf):
    """Compare a positive parameter on the log scale, where its density is smooth."""
    return binned_tv(np.log(draws), lambda u: logf(np.exp(u)) + u)


def conditional_tvs(draws: int = 100_000, seed: int = 0) -> dict:
    """TV between each Gibbs conditional's output and grid normalization of the joint density."""
    rng = np.random.default_rng(seed)
    out = {}

    # levels: pmf over N_i >= d_i, truncated far into the geometric tail
    st_ = tiny_state()
    samples = np.empty((draws, 5), dtype=np.int64)
    for k in range(draws):
        samples[k] = gsbr.update_levels(st_, rng)
    tvs = []
    for i in range(5):
        support = np.arange(TINY_ALLOC[i], TINY_ALLOC[i] + 80)
        logp = []
        for v in support:
            lv = TINY_LEVELS.copy()
            lv[i] = v
            logp.append(tiny_logpi(levels=lv))
        q = np.exp(np.array(logp) - max(logp))
        q /= q.sum()
        emp = np.bincount(samples[:, i] - support[0], minlength=support.size)[: support.size] / draws
        tvs.append(total_variation(emp, q))
    out["levels"] = max(tvs)

    # allocations over 1..N_i
    st_ = tiny_state()
    samples = np.empty((draws, 5), dtype=np.int64)
    for k in range(draws):
        samples[k] = gsbr.update_allocations(st_, TINY_X, TINY_MAP, PRIORS, rng)
    tvs = []
    for i in range(5):
        support = np.arange(1, TINY_LEVELS[i] + 1)
        logp = []
        for v in support:
            al = TINY_ALLOC.copy()
            al[i] = v
            logp.append(tiny_logpi(alloc=al))
        q = np.exp(np.array(logp) - max(logp))
        q /= q.sum()
        emp = np.bincount(samples[:, i] - 1, minlength=support.size)[: support.size] / draws
        tvs.append(total_variation(emp, q))
    out["allocations"] = max(tvs)

    # precisions, one component at a time
    st_ = tiny_state()
    samples = np.empty((draws, 3))
    for k in range(draws):
        samples[k] = gsbr.update_lambdas(st_, TINY_X, TINY_MAP, PRIORS, rng)
    tvs = []
    for j in range(3):
        def logf(v, j=j):
            lam = TINY_LAMBDAS.copy()
            lam[j] = v
            return tiny_logpi(lambdas=lam)
        tvs.append(_log_scale(samples[:, j], logf))
    out["lambdas"] = max(tvs)

    # geometric probability
    st_ = tiny_state()
    samples = np.array([gsbr.update_p(st_, PRIORS, rng) for _ in range(draws)])

    def logp_(v):
        return tiny_logpi(p=v)
    logp_.support = (1e-12, 1 - 1e-12)
    out["p"] = binned_tv(samples, logp_)

    # tau, with y held fixed
    from dnrr.replicator import ReplicaState, update_tau
    y = TINY_X.values + np.array([0.01, -0.02, 0.0, 0.03, -0.01])
    g = TINY_MAP.with_coefficients(TINY_THETA)
    rep = ReplicaState(y=y, y_initial=TINY_X.initial, tau=1.0, rho=1e2, nu=0.1)
    samples = np.array([update_tau(rep, g, PRIORS.tau_shape_rate, rng) for _ in range(draws)])

    def logt(v):
        return tiny_logpi(y=y, tau=v, rho=1e2)
    out["tau"] = _log_scale(samples, logt)
    return out


@pytest.mark.slow
def test_conditionals_match_joint_density():
    tvs = conditional_tvs()
    assert all(v < 0.02 for v in tvs.values()), tvs


# -- levels -------------------------------------------------------------------

def test_levels_collapse_when_p_near_one(rng):
    st_ = make_state(TINY_X, TINY_MAP, p=1 - 1e-12, alloc=[1, 2, 1, 3, 1], lambdas=[1, 1, 1])
    np.testing.assert_array_equal(gsbr.update_levels(st_, rng), [1, 2, 1, 3, 1])


def test_levels_pmf_at_half(rng):
    x = Trajectory(np.zeros(100_000), [0.0])
    st_ = make_state(x, TINY_MAP, p=0.5)
    lv = gsbr.update_levels(st_, rng)
    emp = np.bincount(lv, minlength=8)[1:8] / lv.size
    np.testing.assert_allclose(emp, 0.5 ** np.arange(1, 8), atol=0.005)


def test_levels_mean_excess(rng):
    x = Trajectory(np.zeros(100_000), [0.0])
    st_ = make_state(x, TINY_MAP, p=0.25)
    excess = gsbr.update_levels(st_, rng) - st_.allocations
    assert excess.mean() == pytest.approx(3.0, rel=0.03)


@given(st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_support_invariant_after_each_update(p, seed):
    rng = np.random.default_rng(seed)
    st_ = make_state(TINY_X, TINY_MAP, p=p, lambdas=TINY_LAMBDAS, alloc=TINY_ALLOC,
                     levels=TINY_LEVELS, theta=TINY_THETA)
    for _ in range(5):
        gsbr.reconstruction_sweep(st_, TINY_X, TINY_MAP, PRIORS, rng)
        assert np.all(st_.allocations >= 1) and np.all(st_.allocations <= st_.levels)
        assert st_.lambdas.size >= st_.nstar and np.all(st_.lambdas > 0)


# -- allocations --------------------------------------------------------------

def test_single_level_forces_first_component(rng):
    st_ = tiny_state()
    st_.levels = np.ones(5, dtype=np.int64)
    for _ in range(20):
        assert np.all(gsbr.update_allocations(st_, TINY_X, TINY_MAP, PRIORS, rng) == 1)


def test_equal_precisions_give_uniform_allocation(rng):
    x = Trajectory(rng.normal(size=50_000), [0.0])
    st_ = make_state(x, TINY_MAP, lambdas=[3.0, 3.0], levels=np.full(50_000, 2))
    al = gsbr.update_allocations(st_, x, TINY_MAP, PRIORS, rng)
    assert abs(np.mean(al == 2) - 0.5) < 0.01


def test_zero_residual_allocation_ratio(rng):
    # g = 0 and x = 0: residuals vanish, mass proportional to sqrt(lambda)
    x = Trajectory(np.zeros(100_000), [0.0])
    st_ = make_state(x, TINY_MAP, lambdas=[1.0, 100.0], levels=np.full(100_000, 2))
    al = gsbr.update_allocations(st_, x, TINY_MAP, PRIORS, rng)
    assert np.mean(al == 2) == pytest.approx(10 / 11, abs=0.005)


# -- precisions -----------------------------------------------------------------

def test_empty_component_draws_from_prior(rng):
    pri = Priors(lambda_shape_rate=(2.0, 3.0))
    x = Trajectory(np.zeros(4), [0.0])
    st_ = make_state(x, TINY_MAP, lambdas=[1.0, 1.0], levels=[2, 1, 1, 1])
    draws = np.array([gsbr.update_lambdas(st_, x, TINY_MAP, pri, rng)[1] for _ in range(20_000)])
    assert stats.kstest(draws, stats.gamma(2.0, scale=1 / 3.0).cdf).statistic < 0.02


def test_zero_residual_component_shape(rng):
    pri = Priors(lambda_shape_rate=(2.0, 3.0))
    x = Trajectory(np.zeros(2), [0.0])
    st_ = make_state(x, TINY_MAP, lambdas=[1.0])
    draws = np.array([gsbr.update_lambdas(st_, x, TINY_MAP, pri, rng)[0] for _ in range(20_000)])
    assert stats.kstest(draws, stats.gamma(3.0, scale=1 / 3.0).cdf).statistic < 0.02


def test_lambda_posterior_mean(rng):
    st_ = tiny_state()
    draws = np.array([gsbr.update_lambdas(st_, TINY_X, TINY_MAP, PRIORS, rng)
                      for _ in range(100_000)])
    r = st_.residuals(TINY_X, TINY_MAP)
    b1, b2 = PRIORS.lambda_shape_rate
    for j in range(3):
        m = TINY_ALLOC == j + 1
        expected = (b1 + m.sum() / 2) / (b2 + np.sum(r[m] ** 2) / 2)
        assert draws[:, j].mean() == pytest.approx(expected, rel=0.01)


# -- p --------------------------------------------------------------------------

def test_p_prior_when_no_data(rng):
    x = Trajectory(np.zeros(0), [0.0])
    st_ = make_state(x, TINY_MAP)
    draws = np.array([gsbr.update_p(st_, PRIORS, rng) for _ in range(20_000)])
    assert stats.kstest(draws, stats.beta(0.5, 0.5).cdf).statistic < 0.02


def test_p_all_levels_one(rng):
    x = Trajectory(np.zeros(3), [0.0])
    st_ = make_state(x, TINY_MAP)
    draws = np.array([gsbr.update_p(st_, PRIORS, rng) for _ in range(20_000)])
    assert stats.kstest(draws, stats.beta(6.5, 0.5).cdf).statistic < 0.02


def test_p_posterior_mean(rng):
    st_ = tiny_state()
    draws = np.array([gsbr.update_p(st_, PRIORS, rng) for _ in range(100_000)])
    a, b = 0.5 + 10, 0.5 + np.sum(TINY_LEVELS - 1)
    assert draws.mean() == pytest.approx(a / (a + b), rel=0.01)


# -- theta ----------------------------------------------------------------------

def _random_instance(rng, n=20):
    pmap = henon_map()
    x = Trajectory(rng.uniform(-1.5, 1.5, n), rng.uniform(-1, 1, 2))
    k = 3
    st_ = make_state(x, pmap, lambdas=rng.uniform(0.5, 50, k), alloc=rng.integers(1, k + 1, n),
                     theta=rng.normal(size=6))
    st_.levels = np.maximum(st_.allocations, k)
    return pmap, x, st_


def test_theta_conditional_mean_equals_wls_on_20_instances():
    rng = np.random.default_rng(4)
    for _ in range(20):
        pmap, x, st_ = _random_instance(rng)
        mean, _ = gsbr.theta_conditional(st_, x, pmap)
        phi = np.array([[np.prod(w ** e) for e in pmap.exponents]
                        for w in lagged_windows(x.values, x.initial)])
        w = st_.lambdas[st_.allocations - 1]
        np.testing.assert_allclose(mean, wls_solve(phi, x.values, w), atol=1e-8, rtol=1e-8)


@given(st.integers(0, 2**32 - 1))
def test_theta_conditional_mean_equals_wls_property(seed):
    pmap, x, st_ = _random_instance(np.random.default_rng(seed), n=30)
    mean, _ = gsbr.theta_conditional(st_, x, pmap)
    phi = eval_basis(pmap, lagged_windows(x.values, x.initial))
    w = st_.lambdas[st_.allocations - 1]
    np.testing.assert_allclose(mean, wls_solve(phi, x.values, w), atol=1e-8, rtol=1e-6)


def test_theta_constant_model_mean():
    pmap = PolynomialMap.zeros(1, 0)
    x = Trajectory([2.5, 2.5], [0.0])
    st_ = make_state(x, pmap, lambdas=[3.0], theta=[0.0])
    mean, _ = gsbr.theta_conditional(st_, x, pmap)
    assert mean[0] == pytest.approx(2.5)


def test_theta_covariance_scales_inversely_with_precision(rng):
    pmap, x, st_ = _random_instance(rng)
    _, chol1 = gsbr.theta_conditional(st_, x, pmap)
    st_.lambdas = st_.lambdas * 1e4
    _, chol2 = gsbr.theta_conditional(st_, x, pmap)
    cov1 = np.linalg.inv(chol1 @ chol1.T)
    cov2 = np.linalg.inv(chol2 @ chol2.T)
    np.testing.assert_allclose(cov2 * 1e4, cov1, rtol=1e-6)


def test_theta_draws_match_conditional_moments(rng):
    pmap, x, st_ = _random_instance(rng, n=40)
    mean, chol = gsbr.theta_conditional(st_, x, pmap)
    draws = np.array([gsbr.update_theta(st_, x, pmap, rng) for _ in range(20_000)])
    cov = np.linalg.inv(chol @ chol.T)
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(draws.mean(0) - mean) < 4 * sd / np.sqrt(20_000))
    np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.06, atol=0.06 * sd.max() ** 2)


def test_constant_trajectory_is_rank_deficient():
    pmap = henon_map()
    x = Trajectory(np.full(30, 0.7), [0.7, 0.7])
    with pytest.raises(gsbr.RankDeficiencyError):
        gsbr.wls_fit(x, pmap)
    st_ = make_state(x, pmap)
    with pytest.raises(gsbr.RankDeficiencyError):
        gsbr.theta_conditional(st_, x, pmap)


# -- initial block -------------------------------------------------------------

def test_initial_block_mh_matches_gaussian_factor():
    # d = 1, g(u) = 0.2 + 0.8 u: only the first residual involves x0
    rng = np.random.default_rng(5)
    pmap = PolynomialMap(1, 1, [0.2, 0.8])
    x = Trajectory([0.9, 0.1, -0.3], [0.0])
    lam = 25.0
    st_ = make_state(x, pmap, lambdas=[lam], theta=[0.2, 0.8])
    draws = []
    for t in range(110_000):
        gsbr.update_initial(st_, x, pmap, rng, step=0.4)
        if t >= 10_000 and t % 10 == 0:
            draws.append(st_.initial[0])
    mean, sd = (0.9 - 0.2) / 0.8, 1 / (0.8 * np.sqrt(lam))
    assert stats.kstest(draws, stats.norm(mean, sd).cdf).statistic < 0.05


def test_initial_block_acceptance_decreases_with_step():
    rates = []
    for step in (0.01, 0.1, 1.0):
        rng = np.random.default_rng(6)
        pmap = PolynomialMap(1, 1, [0.2, 0.8])
        x = Trajectory([0.9, 0.1], [0.875])
        st_ = make_state(x, pmap, lambdas=[25.0], theta=[0.2, 0.8])
        for _ in range(5000):
            gsbr.update_initial(st_, x, pmap, rng, step=step)
        rates.append(st_.initial_accepted / st_.initial_proposed)
    assert rates[0] > rates[1] > rates[2]


def test_zero_step_proposal_always_accepted(rng):
    pmap = PolynomialMap(1, 1, [0.2, 0.8])
    x = Trajectory([0.9, 0.1], [3.0])
    st_ = make_state(x, pmap, lambdas=[25.0], theta=[0.2, 0.8])
    for _ in range(50):
        gsbr.update_initial(st_, x, pmap, rng, step=1e-300)
    assert st_.initial_accepted == st_.initial_proposed == 50


def test_design_cache_tracks_initial_block(rng):
    pmap, x, st_ = _random_instance(rng)
    st_.design(x, pmap)
    st_.initial = st_.initial + 0.3
    np.testing.assert_allclose(st_.design(x, pmap),
                               eval_basis(pmap, lagged_windows(x.values, st_.initial)))


# -- predictive ------------------------------------------------------------------

def test_predictive_single_component(rng):
    x = Trajectory(np.zeros(3), [0.0])
    st_ = make_state(x, TINY_MAP, lambdas=[4.0])
    z = np.array([gsbr.sample_noise_predictive(st_, rng) for _ in range(20_000)])
    assert stats.kstest(z, stats.norm(0, 0.5).cdf).statistic < 0.02


def test_predictive_variance_matches_mixture(rng):
    st_ = tiny_state()
    z = np.array([gsbr.sample_noise_predictive(st_, rng) for _ in range(100_000)])
    w = gsbr.predictive_weights(st_.p, 3)
    assert w.sum() == pytest.approx(1.0)
    assert z.var() == pytest.approx(np.sum(w / TINY_LAMBDAS), rel=0.03)


def test_predictive_p_one_uses_first_component():
    w = gsbr.predictive_weights(1.0, 3)
    np.testing.assert_array_equal(w, [1, 0, 0])


@given(st.floats(1e-3, 0.99))
def test_geometric_weights_decrease(p):
    assert np.all(np.diff(gsbr.geometric_weights(p, 20)) < 0)


def test_initial_state_splits_residuals(rng):
    x = Trajectory(rng.normal(size=60), [0.0, 0.0])
    st_ = gsbr.initial_state(x, henon_map())
    assert st_.p == 0.5 and set(np.unique(st_.allocations)) == {1, 2, 3}
    np.testing.assert_array_equal(st_.allocations, st_.levels)
    assert np.all(np.diff(st_.lambdas) < 0)
