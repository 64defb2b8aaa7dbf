"""Periodized RBF evaluation, mass, and fitting."""

import numpy as np
import pytest

from plume import rbf
from plume.errors import DataError

DOM = rbf.PeriodicDomain()
GRID = np.arange(0.0, 360.0, 2.0)


def test_center_evaluation():
    c = rbf.RbfCoords([180.0], [1.0], [1.0])
    val = rbf.eval_basis(c, DOM, np.array([180.0]))[0]
    assert abs(val - 1.0) < 1e-15


def test_periodicity_under_center_shift():
    rng = np.random.default_rng(0)
    c = rbf.RbfCoords(rng.uniform(0, 360, 3), rng.uniform(0.05, 0.4, 3),
                      rng.uniform(0.5, 2, 3))
    shifted = rbf.RbfCoords(c.centers + 360.0, c.shapes, c.coeffs)
    a = rbf.eval_basis(c, DOM, GRID)
    b = rbf.eval_basis(shifted, DOM, GRID)
    assert np.allclose(a, b, rtol=0, atol=1e-14 * a.max())


def test_value_at_zero_equals_wraparound():
    c = rbf.RbfCoords([359.0], [0.2], [1.0])
    v0 = rbf.eval_basis(c, DOM, np.array([0.0]))[0]
    eps = 1e-9
    v_end = rbf.eval_basis(c, DOM, np.array([360.0 - eps]))[0]
    assert abs(v0 - v_end) < 1e-6


def test_truncation_vs_long_sum():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        x, a, c = rng.uniform(0, 360), rng.uniform(0.05, 2.0), rng.uniform(0, 3)
        coords = rbf.RbfCoords([x], [a], [c])
        short = rbf.eval_basis(coords, rbf.PeriodicDomain(truncation=3), GRID)
        long = rbf.eval_basis(coords, rbf.PeriodicDomain(truncation=50), GRID)
        worst = max(worst, np.abs(short - long).max())
    assert worst < 1e-12


def test_shape_must_be_positive():
    c = rbf.RbfCoords([10.0], [-0.1], [1.0])
    with pytest.raises(ValueError):
        rbf.eval_basis(c, DOM, GRID)
    with pytest.raises(ValueError):
        rbf.basis_mass(c)


def test_basis_mass_formula():
    c = rbf.RbfCoords([100.0], [1.0], [2.0])
    assert np.isclose(rbf.basis_mass(c)[0], 2 * np.sqrt(np.pi), rtol=1e-15)
    z = rbf.RbfCoords([100.0], [1.0], [0.0])
    assert rbf.basis_mass(z)[0] == 0.0


def test_basis_mass_vs_quadrature():
    grid = np.arange(0.0, 360.0, 360.0 / 10000)
    c = rbf.RbfCoords([77.0], [0.1], [3.3])
    quad = rbf.eval_basis(c, DOM, grid).sum() * (360.0 / 10000)
    assert abs(quad - rbf.total_mass(c)) / rbf.total_mass(c) < 1e-8


def test_fit_recovers_exact_field():
    true = rbf.RbfCoords([210.0], [0.08], [5.0])
    f = rbf.eval_basis(true, DOM, GRID)
    res = rbf.fit(f, GRID, n_rbf=1)
    assert abs(res.coords.wrapped_centers()[0] - 210.0) / 210.0 < 1e-6
    assert abs(res.coords.shapes[0] - 0.08) / 0.08 < 1e-6
    assert abs(res.coords.coeffs[0] - 5.0) / 5.0 < 1e-6


def test_fit_zero_field_unidentifiable():
    res = rbf.fit(np.zeros_like(GRID), GRID, n_rbf=1,
                  init=rbf.RbfCoords([50.0], [0.1], [1.0]))
    assert res.coords.unidentifiable
    assert res.coords.coeffs[0] == 0.0
    assert res.coords.centers[0] == 50.0


def test_fit_rejects_bad_input():
    f = np.zeros_like(GRID)
    f[3] = np.nan
    with pytest.raises(DataError):
        rbf.fit(f, GRID)
    with pytest.raises(DataError):
        rbf.fit(-np.ones_like(GRID), GRID)


def test_two_bump_fit_near_grid_search_optimum():
    two = rbf.RbfCoords([100.0, 250.0], [0.1, 0.07], [3.0, 2.0])
    f = rbf.eval_basis(two, DOM, GRID)
    res = rbf.fit(f, GRID, n_rbf=1)
    # dense grid search over (x, a) with the exact coefficient solve
    best = np.inf
    for x in np.linspace(0, 360, 721)[:-1]:
        for a in np.geomspace(0.02, 0.5, 160):
            phi = rbf.eval_basis(rbf.RbfCoords([x], [a], [1.0]), DOM, GRID)
            c = max(0.0, float(phi @ f) / float(phi @ phi))
            best = min(best, float(np.linalg.norm(phi * c - f)))
    achieved = res.residual * np.linalg.norm(f)
    assert achieved <= best * 1.01


def test_fit_timeseries_tracks_advection():
    from plume import datagen

    cfg = datagen.SimulationConfig(
        n_lon=120, n_lat=3, n_alt=3, n_days=6, diffusion_deg2_per_day=0.0,
        initial_sigma_deg=8.0, base_wind_deg_per_day=-11.0, wind_noise=0.0,
        wind_shear_per_km=0.0, wind_lat_amplitude=0.0, ensemble_seeds=(1, 2, 3),
        n_train_ensembles=1, n_validation_ensembles=1, n_test_ensembles=1)
    grid = datagen.Grid.from_config(cfg)
    tr = datagen.generate_trajectory(cfg, grid, 1, 1, 10.0, 0, "train")
    fits = rbf.fit_timeseries(tr.alpha_1d, grid.lons)
    centers = np.array([f.coords.centers[0] for f in fits])
    steps = np.diff(centers)
    assert np.all(np.abs(steps - (-11.0)) < 0.5)


def test_fit_timeseries_constant_field():
    f = rbf.eval_basis(rbf.RbfCoords([120.0], [0.12], [2.0]), DOM, GRID)
    fits = rbf.fit_timeseries(np.stack([f] * 4), GRID)
    ref = fits[0].coords.as_vector()
    for r in fits[1:]:
        assert np.allclose(r.coords.as_vector(), ref, rtol=1e-10)


def test_fit_timeseries_diffusion_widens(small_campaign):
    ds = small_campaign
    tr = ds.trajectories[0]
    fits = rbf.fit_timeseries(tr.alpha_1d, ds.grid.lons)
    shapes = np.array([f.coords.shapes[0] for f in fits])
    assert np.all(np.diff(shapes) < 0)


def test_round_trip_refit():
    rng = np.random.default_rng(7)
    for _ in range(5):
        coords = rbf.RbfCoords([rng.uniform(0, 360)], [rng.uniform(0.05, 0.3)],
                               [rng.uniform(0.5, 5)])
        f = rbf.eval_basis(coords, DOM, GRID)
        res = rbf.fit(f, GRID)
        assert np.allclose(res.coords.wrapped_centers(),
                           coords.wrapped_centers(), rtol=1e-6)
        assert np.allclose(res.coords.shapes, coords.shapes, rtol=1e-6)
        assert np.allclose(res.coords.coeffs, coords.coeffs, rtol=1e-6)
