"""Diagnostics: error metrics, reaction rates, Mahalanobis distance."""

import numpy as np
import pytest

from plume import diagnostics as diag, flowmap as fm, rbf
from plume.errors import DataError


def test_relative_l2():
    a = np.array([1.0, 2.0, 3.0])
    assert diag.relative_l2(a, a) == 0.0
    assert np.isclose(diag.relative_l2(2 * a, a), 1.0)
    with pytest.raises(DataError):
        diag.relative_l2(a, np.zeros(3))


def test_reaction_rate_basic():
    r = diag.reaction_rate(np.array([100.0, 90.0]))
    assert np.isclose(r.values[0], -0.1)
    const = diag.reaction_rate(np.full(6, 7.0))
    assert np.allclose(const.values, 0.0)
    rate = 0.3
    series = 10.0 * np.exp(-rate * np.arange(8))
    lam = diag.reaction_rate(series)
    assert np.allclose(lam.values, np.exp(-rate) - 1.0, rtol=1e-12)
    assert np.isclose(lam.std(), 0.0, atol=1e-15)


def test_reaction_rate_flags_nonpositive():
    lam = diag.reaction_rate(np.array([2.0, 0.0, 1.0, 0.5]))
    assert lam.defined.tolist() == [True, False, True]
    assert np.isnan(lam.values[1])


def test_mahalanobis_properties():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((40, 6)) * np.array([1, 2, 3, 1, 2, 0.5])
    mu = w.mean(axis=0)
    assert diag.mahalanobis(w, mu) < 1e-10
    # identity covariance: distance reduces to euclidean
    iid = rng.standard_normal((20000, 4))
    x = np.array([0.3, -0.2, 0.5, 1.0])
    d = diag.mahalanobis(iid, iid.mean(axis=0) + x)
    assert abs(d - np.linalg.norm(x)) < 0.05
    # invariance under joint invertible affine maps
    a = rng.standard_normal((6, 6)) + 2 * np.eye(6)
    b = rng.standard_normal(6)
    x6 = rng.standard_normal(6)
    d1 = diag.mahalanobis(w, x6)
    d2 = diag.mahalanobis(w @ a.T + b, a @ x6 + b)
    assert abs(d1 - d2) / d1 < 1e-8


def test_mahalanobis_rank_cut():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((5, 10))   # rank 4 after centering
    assert diag.covariance_rank(w) == 4
    d = diag.mahalanobis(w, rng.standard_normal(10))
    assert np.isfinite(d)


def test_mass_loss_curve_raw_is_one(small_campaign):
    ds = small_campaign
    tr = ds.trajectories[0]
    so2_fits = [f.coords for f in rbf.fit_timeseries(tr.alpha_1d, ds.grid.lons)]
    sul_fits = [f.coords for f in rbf.fit_timeseries(tr.beta_1d, ds.grid.lons)]
    curve = diag.mass_loss_curve(tr.alpha_1d, tr.beta_1d, ds.grid.dx,
                                 so2_fits, sul_fits)
    assert np.abs(curve["raw"] - 1.0).max() < 1e-10
    assert np.abs(curve["rbf"] - 1.0).max() < 0.15


def test_sample_study_inputs_provenance():
    rng = np.random.default_rng(2)
    so2 = np.abs(rng.uniform(0.5, 1.5, (4, 5, 3))) + 0.2
    data = fm.CoordDataset(so2, so2 * 0.3, rng.standard_normal((4, 5, 4)),
                           np.arange(4), [])
    r0, winds, prov = diag.sample_study_inputs(data, data, 50, 4, seed=0)
    assert r0.shape == (50, 3)
    assert winds.shape == (50, 4, 4)
    assert prov["r0_box"]["source"] == "validation day-0 coords"
    assert prov["wind_box"]["source"] == "training wind coords"
    lo = np.asarray(prov["r0_box"]["lo"])
    hi = np.asarray(prov["r0_box"]["hi"])
    assert np.all(r0 >= lo - 1e-12) and np.all(r0 <= hi + 1e-12)


def test_reaction_rate_stats_decay_model():
    masses = 5.0 * np.exp(-0.05 * np.arange(8))[None, :] * np.ones((10, 1))
    stats = diag.reaction_rate_stats(masses)
    assert stats["mean_std"] < 1e-14
    assert np.isclose(stats["mean_rate"], np.exp(-0.05) - 1, rtol=1e-12)


def test_study_determinism_small(campaign_products):
    prod = campaign_products
    sets = prod["sets"]
    kw = dict(depths=(0,), widths=(7,), networks_per_cell=2, n_samples=30,
              epochs=40, seed=5)
    a = diag.reaction_rate_study(sets["train"], sets["validation"], **kw)
    b = diag.reaction_rate_study(sets["train"], sets["validation"], **kw)
    assert a["cells"][0]["best_mean_std"] == b["cells"][0]["best_mean_std"]
    assert a["best_by_depth"] == b["best_by_depth"]
