"""Synthetic campaign generator invariants."""

import numpy as np
import pytest

from plume import datagen
from plume.errors import ConfigurationError, DataError, StabilityError


def _mini_cfg(**kw):
    base = dict(n_lon=90, n_lat=5, n_alt=5, n_days=6,
                initial_sigma_deg=11.0,
                injection_masses_tg=(3.0, 10.0), test_masses_tg=(7.0,),
                ensemble_seeds=(31, 32, 33, 34),
                n_train_ensembles=2, n_validation_ensembles=1,
                n_test_ensembles=1)
    base.update(kw)
    return datagen.SimulationConfig(**base)


def test_config_invariants():
    with pytest.raises(ConfigurationError):
        _mini_cfg(n_lon=32)
    with pytest.raises(ConfigurationError):
        _mini_cfg(n_days=1)
    with pytest.raises(ConfigurationError):
        _mini_cfg(dt_days=0.0)
    with pytest.raises(ConfigurationError):
        _mini_cfg(reaction_rate_per_day=1.5)
    with pytest.raises(ConfigurationError):
        _mini_cfg(injection_masses_tg=(3.0, -1.0))


def test_pure_advection_is_circular_shift():
    cfg = _mini_cfg(n_lon=180, diffusion_deg2_per_day=0.0,
                    reaction_rate_per_day=1e-12,
                    base_wind_deg_per_day=10.0, wind_noise=0.0,
                    wind_shear_per_km=0.0, wind_lat_amplitude=0.0)
    grid = datagen.Grid.from_config(cfg)
    tr = datagen.generate_trajectory(cfg, grid, 31, 1, 10.0, 0, "train")
    cells = int(round(10.0 / grid.dx))
    for k in range(cfg.n_days):
        expect = np.roll(tr.alpha_1d[0], cells * k)
        err = np.linalg.norm(tr.alpha_1d[k] - expect) / np.linalg.norm(expect)
        assert err < 1e-6


def test_day0_sulfate_ratio_in_observed_band():
    cfg = _mini_cfg(reaction_rate_per_day=0.055)
    ds = datagen.build_campaign(cfg)
    for tr in ds.trajectories:
        ratio = tr.beta_1d[0].sum() / tr.alpha_1d[0].sum()
        assert 0.0533 <= ratio <= 0.0558


def test_seed_determinism_and_variation():
    cfg = _mini_cfg()
    a = datagen.generate_ensemble(cfg, 31, 1)
    b = datagen.generate_ensemble(cfg, 31, 1)
    for ta, tb in zip(a, b):
        for name in ("alpha_1d", "beta_1d", "rho_v", "rho_b", "alpha_3d", "omega"):
            assert (getattr(ta, name) == getattr(tb, name)).all()
    c = datagen.generate_ensemble(cfg, 77, 1)
    assert np.abs(a[0].omega - c[0].omega).max() > 0


def test_conservation_and_nonnegativity(small_campaign):
    ds = small_campaign
    for tr in ds.trajectories:
        moles = datagen.sulfur_moles(ds.config, ds.grid, tr.alpha_1d, tr.beta_1d)
        assert np.abs(moles - moles[0]).max() / moles[0] < 1e-10
        for name in ("alpha_1d", "beta_1d", "rho_v", "rho_b"):
            assert getattr(tr, name).min() >= 0.0


def test_campaign_split_counts():
    ds = datagen.build_campaign(datagen.SimulationConfig())
    assert len(ds.split("train")) == 35
    assert len(ds.split("validation")) == 5
    assert len(ds.split("test")) == 2
    train_keys = {(t.ensemble_index, t.mass_tg) for t in ds.split("train")}
    for t in ds.split("test"):
        assert (t.ensemble_index, t.mass_tg) not in train_keys


def test_campaign_reconfigured_split():
    cfg = _mini_cfg(injection_masses_tg=(5.0,), ensemble_seeds=(1, 2, 3, 4, 5),
                    n_train_ensembles=3)
    ds = datagen.build_campaign(cfg)
    assert len(ds.split("train")) == 3


def test_campaign_needs_enough_seeds():
    with pytest.raises(ConfigurationError):
        datagen.build_campaign(_mini_cfg(ensemble_seeds=(1, 2)))


def test_column_integrate():
    cfg = _mini_cfg()
    grid = datagen.Grid.from_config(cfg)
    ny, nz = grid.lats.size, grid.alts.size
    const = np.ones((cfg.n_lon, ny, nz))
    out = datagen.column_integrate(const, grid)
    cell = grid.dlat * grid.dalt
    assert np.allclose(out, ny * nz * cell)

    gauss = np.exp(-0.5 * ((grid.lons - 100) / 10) ** 2)
    g_latalt = np.exp(-0.5 * (grid.lats / 9) ** 2)[:, None] * \
        np.exp(-0.5 * ((grid.alts - 22) / 2) ** 2)[None, :]
    field = gauss[:, None, None] * g_latalt[None, :, :]
    out = datagen.column_integrate(field, grid)
    assert np.allclose(out, gauss * g_latalt.sum() * cell, rtol=1e-12)

    rng = np.random.default_rng(5)
    rand = rng.uniform(0, 1, (cfg.n_lon, ny, nz))
    total_1d = datagen.column_integrate(rand, grid).sum()
    total_3d = rand.sum() * cell
    assert abs(total_1d - total_3d) / total_3d < 1e-12

    with pytest.raises(DataError):
        datagen.column_integrate(np.ones((cfg.n_lon, ny + 1, nz)), grid)


def test_stability_rejected():
    cfg = _mini_cfg(diffusion_deg2_per_day=500.0)
    with pytest.raises(StabilityError):
        datagen.generate_ensemble(cfg, 31, 1)


def test_column_consistency_of_alpha3d(small_campaign):
    ds = small_campaign
    tr = ds.trajectories[0]
    col = datagen.column_integrate(tr.alpha_3d, ds.grid)
    assert np.allclose(col, tr.alpha_1d, rtol=1e-12)
