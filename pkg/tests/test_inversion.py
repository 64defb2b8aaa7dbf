"""Observation operator, BAE likelihood, MAP, and Laplace machinery."""

import numpy as np
import pytest
from scipy.linalg import solve_triangular

from plume import aodmap, flowmap as fm, inversion as inv, rbf
from plume.errors import ConfigurationError, DataError


def _toy_model(rng, n_winds=6, n_days_obs=5, nw=4):
    mu = np.array([150.0, 0.12, 2.0, 0, 0, 0, 0])
    sd = np.array([60.0, 0.05, 1.0, 1, 1, 1, 1])
    p = fm.make_params(nw, theta=rng.standard_normal(24) * 0.03,
                       input_mean=mu, input_std=sd, state_scale=sd[:3],
                       initial_sulfate_ratio=0.05)
    am = aodmap.AodMapParams(np.diag([1.0, 1.0, 0.8]), np.ones(3), np.zeros(3))
    op = inv.ObservationOperator(np.arange(0, 360, 5.0),
                                 np.arange(1, n_days_obs + 1))
    winds = rng.standard_normal((n_winds, n_days_obs + 1, nw))
    return inv.ForwardModel(flow=p, aod=am, op=op, wind_ensemble=winds)


def _unit_like(n, sigma=1.0):
    return inv.BaeLikelihood(mu_nu=np.zeros(n), sigma_nu=np.zeros((n, n)),
                             sigma_noise=sigma, mu_bae=np.zeros(n),
                             sigma_bae=np.zeros((n, n)))


def test_observation_operator_validation():
    with pytest.raises(ConfigurationError):
        inv.ObservationOperator(np.array([361.0]), np.array([1]))
    with pytest.raises(ConfigurationError):
        inv.ObservationOperator(np.array([10.0]), np.array([0]))


def test_observe_center_and_zero():
    op = inv.ObservationOperator(np.array([210.0]), np.array([1]))
    q = np.zeros((2, 3))
    q[1] = [210.0, 0.2, 1.7]
    d = inv.observe(q, op)
    assert abs(d[0] - 1.7) < 1e-14
    zeros = np.zeros((2, 3))
    zeros[:, 1] = 0.1
    assert np.allclose(inv.observe(zeros, op), 0.0)


def test_observe_restriction_oracle():
    rng = np.random.default_rng(0)
    q = np.stack([np.zeros(3)] + [
        np.array([rng.uniform(0, 360), rng.uniform(0.06, 0.3),
                  rng.uniform(0.2, 2)]) for _ in range(4)])
    dense_lons = np.arange(0, 360, 5.0)
    op_dense = inv.ObservationOperator(dense_lons, np.arange(1, 5))
    obs_idx = np.array([3, 10, 31, 55])
    op_sub = inv.ObservationOperator(dense_lons[obs_idx], np.arange(1, 5))
    dense = inv.observe(q, op_dense).reshape(4, -1)
    sub = inv.observe(q, op_sub).reshape(4, -1)
    assert (dense[:, obs_idx] == sub).all()


def test_forward_mean_reductions():
    rng = np.random.default_rng(1)
    model = _toy_model(rng)
    z0 = np.array([150.0, 0.12, 2.0])
    mean, (ys, _, _) = inv.forward_mean(model, z0)
    # naive loop oracle
    acc = np.zeros_like(mean)
    for i in range(model.n_samples):
        single = inv.ForwardModel(flow=model.flow, aod=model.aod, op=model.op,
                                  wind_ensemble=model.wind_ensemble[i:i + 1])
        yi, _, _ = inv.forward_all(single, z0)
        acc += yi[0]
    assert np.abs(mean - acc / model.n_samples).max() < 1e-14
    # single sample: mean equals that sample
    one = inv.ForwardModel(flow=model.flow, aod=model.aod, op=model.op,
                           wind_ensemble=model.wind_ensemble[:1])
    m1, (ys1, _, _) = inv.forward_mean(one, z0)
    assert (m1 == ys1[0]).all()
    # duplicated wind set leaves the mean unchanged
    dup = inv.ForwardModel(flow=model.flow, aod=model.aod, op=model.op,
                           wind_ensemble=np.concatenate([model.wind_ensemble] * 2))
    m2, _ = inv.forward_mean(dup, z0)
    assert np.abs(m2 - mean).max() < 1e-14


def test_estimate_background():
    rng = np.random.default_rng(2)
    y = np.tile(rng.uniform(0, 1, 12), (5, 1))
    mu, cov = inv.estimate_background(y)
    assert np.allclose(mu, y[0])
    assert np.abs(cov).max() < 1e-18
    y2 = rng.uniform(0, 1, (2, 12))
    _, cov2 = inv.estimate_background(y2)
    assert np.linalg.matrix_rank(cov2, tol=1e-12) <= 1
    y3 = rng.uniform(0, 1, (9, 12))
    mu3, cov3 = inv.estimate_background(y3)
    mean_o = y3.mean(axis=0)
    cov_o = np.zeros((12, 12))
    for row in y3:
        cov_o += np.outer(row - mean_o, row - mean_o)
    cov_o /= 8
    assert np.abs(cov3 - cov_o).max() < 1e-12
    with pytest.raises(DataError):
        inv.estimate_background(y3[:1])


def test_estimate_bae_degenerate_cases():
    rng = np.random.default_rng(3)
    model = _toy_model(rng, n_winds=1)
    prior = inv.Prior(np.array([150.0, 0.12, 2.0]),
                      np.diag([100.0, 1e-4, 0.25]))
    mu, cov = inv.estimate_bae(model, prior)
    assert np.abs(cov).max() == 0.0
    same = inv.ForwardModel(flow=model.flow, aod=model.aod, op=model.op,
                            wind_ensemble=np.repeat(model.wind_ensemble, 4, axis=0))
    mu2, cov2 = inv.estimate_bae(same, prior)
    assert np.abs(mu2).max() < 1e-12
    assert np.abs(cov2).max() < 1e-20
    with pytest.raises(ConfigurationError):
        inv.estimate_bae(model, prior, estimator="bogus")


def test_bae_prior_samples_estimator():
    rng = np.random.default_rng(4)
    model = _toy_model(rng, n_winds=5)
    prior = inv.Prior(np.array([150.0, 0.12, 2.0]),
                      np.diag([25.0, 1e-4, 0.04]))
    mu, cov = inv.estimate_bae(model, prior, estimator="prior-samples",
                               n_prior_samples=3, seed=1)
    assert np.abs(mu).max() < 1e-10
    assert np.all(np.linalg.eigvalsh(cov) > -1e-12)


def test_likelihood_reduction_and_oracle():
    rng = np.random.default_rng(5)
    n = 30
    like = _unit_like(n)
    mean_obs = rng.uniform(0, 1, n)
    d = rng.uniform(0, 1, n)
    ll = inv.log_likelihood(like, mean_obs, d)
    assert abs(ll - (-0.5 * np.sum((mean_obs - d) ** 2))) < 1e-12
    # the likelihood is maximal (zero) at d = mean + mu
    a = rng.standard_normal((n, n)) * 0.05
    like2 = inv.BaeLikelihood(mu_nu=rng.uniform(0, 0.1, n), sigma_nu=a @ a.T,
                              sigma_noise=0.3,
                              mu_bae=np.zeros(n), sigma_bae=np.zeros((n, n)))
    assert abs(inv.log_likelihood(like2, mean_obs,
                                  mean_obs + like2.mu)) < 1e-20
    # dense quadratic-form oracle
    r = mean_obs + like2.mu - d
    dense = -0.5 * r @ np.linalg.solve(like2.sigma, r)
    assert np.isclose(inv.log_likelihood(like2, mean_obs, d), dense,
                      rtol=1e-10)


def test_likelihood_requires_positive_noise():
    with pytest.raises(ConfigurationError):
        _unit_like(4, sigma=0.0)


def test_map_multistart_keeps_known_answer():
    rng = np.random.default_rng(6)
    model = _toy_model(rng, n_winds=1)
    z_true = np.array([150.0, 0.13, 2.3])
    d, _ = inv.forward_mean(model, z_true)
    like = _unit_like(d.size, sigma=0.01)
    prior = inv.Prior(z_true.copy(), np.diag([1e4, 1.0, 1e2]))
    res = inv.map_estimate(model, prior, like, d, n_starts=1, seed=0)
    assert np.linalg.norm(res.z_map - z_true) / np.linalg.norm(z_true) < 1e-8
    # accepted iterates never increase the objective
    for rep in res.starts:
        t = rep["trace"]
        assert all(t[i + 1] <= t[i] + 1e-9 for i in range(len(t) - 1))


def test_inverse_crime_recovery_toy():
    rng = np.random.default_rng(7)
    model = _toy_model(rng, n_winds=1)
    z_true = np.array([165.0, 0.11, 2.6])
    d, _ = inv.forward_mean(model, z_true)
    like = _unit_like(d.size, sigma=0.01)
    prior = inv.Prior(np.array([140.0, 0.1, 1.5]), np.diag([1e4, 1.0, 1e2]))
    res = inv.map_estimate(model, prior, like, d, n_starts=8, seed=2)
    assert np.linalg.norm(res.z_map - z_true) / np.linalg.norm(z_true) < 1e-3


def test_laplace_quadratic_exactness_and_sampler():
    h = np.array([[2.0, 0.3, 0.0], [0.3, 1.5, 0.1], [0.0, 0.1, 3.0]])
    center = np.array([1.0, -2.0, 0.5])
    post = inv.laplace(lambda z: h @ (z - center), center)
    cov_true = np.linalg.inv(h)
    assert np.abs(post.covariance - cov_true).max() / np.abs(cov_true).max() < 1e-8
    assert np.abs(post.hessian - h).max() < 1e-6
    s = post.sample(100000, seed=1)
    se = np.sqrt(np.diag(cov_true) / 1e5)
    assert np.all(np.abs(s.mean(axis=0) - center) < 3 * se)
    assert np.abs(np.cov(s.T) - cov_true).max() < 0.05 * np.abs(cov_true).max()


def test_laplace_regularizes_indefinite():
    h = np.diag([1.0, -0.5, 2.0])
    post = inv.laplace(lambda z: h @ z, np.zeros(3))
    assert post.regularization_floor > 0
    np.linalg.cholesky(post.covariance)


def test_synthesize_observations(small_campaign):
    ds = small_campaign
    tr = ds.split("test")[0]
    op = inv.default_observation_operator(36, ds.config.n_days - 1)
    d0, noiseless = inv.synthesize_observations(tr, op, ds.grid.lons,
                                                sigma_obs=0.0, seed=0)
    assert (d0 == noiseless).all()
    d1, _ = inv.synthesize_observations(tr, op, ds.grid.lons, 0.012, seed=5)
    d2, _ = inv.synthesize_observations(tr, op, ds.grid.lons, 0.012, seed=5)
    assert (d1 == d2).all()
    # Monte Carlo noise variance
    draws = np.stack([
        inv.synthesize_observations(tr, op, ds.grid.lons, 0.012, seed=s)[0]
        - noiseless for s in range(400)])
    var = draws.var()
    assert abs(var - 0.012 ** 2) / 0.012 ** 2 < 0.05


def test_posterior_contraction_and_chain_gradient(campaign_products):
    prod = campaign_products
    rep_dir = prod["ws"] / "inversion"
    import json

    for path in sorted(rep_dir.glob("report_*.json")):
        rep = json.loads(path.read_text())
        c = rep["contraction"]
        assert c["trace_full"] <= c["trace_short"]


def test_bae_trace_grows_with_day(campaign_products):
    prod = campaign_products
    like, op = prod["like"], prod["op"]
    n_obs = op.n_obs
    traces = [np.trace(like.sigma_bae[i * n_obs:(i + 1) * n_obs,
                                      i * n_obs:(i + 1) * n_obs])
              for i in range(op.days.size)]
    assert all(np.diff(traces) > 0)
