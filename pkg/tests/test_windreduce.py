"""Wind localization, weighted KDE, and PCA reduction."""

import numpy as np
import pytest

from plume import rbf, windreduce
from plume.errors import DataError, EmptyLocalizationError


def _plume_setup(small_campaign, day=0):
    ds = small_campaign
    tr = ds.trajectories[0]
    fit = rbf.fit(tr.alpha_1d[day], ds.grid.lons)
    return ds, tr, fit.coords


def test_localize_uniform_weight_limit(small_campaign):
    ds, tr, _ = _plume_setup(small_campaign)
    flat = rbf.RbfCoords([120.0], [1e-6], [1.0])
    samples, weights = windreduce.localize(
        tr.omega[0], np.full_like(tr.alpha_3d[0], 1e9), flat, 100.0,
        ds.grid.lons)
    assert samples.size == tr.omega[0].size
    spread = weights[0].max() - weights[0].min()
    assert spread / weights[0].mean() < 1e-6
    grid = np.linspace(samples.min() - 3, samples.max() + 3, 300)
    weighted = windreduce.weighted_kde(samples, weights[0], grid)
    uniform = windreduce.weighted_kde(samples, np.ones_like(weights[0]), grid)
    assert np.allclose(weighted.density, uniform.density, atol=1e-9)


def test_localize_empty_error(small_campaign):
    ds, tr, coords = _plume_setup(small_campaign)
    with pytest.raises(EmptyLocalizationError):
        windreduce.localize(tr.omega[0], tr.alpha_3d[0], coords,
                            tr.alpha_3d[0].max() * 2, ds.grid.lons)


def test_localized_weight_concentration(small_campaign):
    """Weight outside the FWHM-width band around the basis center stays
    a small fraction of the total."""
    ds, tr, coords = _plume_setup(small_campaign)
    samples, weights = windreduce.localize(
        tr.omega[0], tr.alpha_3d[0], coords, ds.config.so2_threshold_g,
        ds.grid.lons)
    mask = tr.alpha_3d[0] >= ds.config.so2_threshold_g
    lon3 = np.broadcast_to(ds.grid.lons[:, None, None], tr.alpha_3d[0].shape)
    lon_sel = lon3[mask]
    fwhm = 2.0 * np.sqrt(np.log(2.0)) / coords.shapes[0]
    delta = np.abs((lon_sel - coords.wrapped_centers()[0] + 180.0) % 360.0 - 180.0)
    outside = weights[0][delta > fwhm].sum()
    assert outside / weights[0].sum() < 0.10


def test_kde_single_sample_bump():
    grid = np.linspace(0, 40, 500)
    pdf = windreduce.weighted_kde(np.array([20.0]), np.array([3.0]), grid,
                                  bandwidth=1.5)
    assert abs(grid[np.argmax(pdf.density)] - 20.0) < 0.1
    expected = np.exp(-0.5 * ((grid - 20) / 1.5) ** 2)
    expected /= np.trapezoid(expected, grid)
    assert np.allclose(pdf.density, expected, atol=1e-12)


def test_kde_equal_weights_match_unweighted():
    rng = np.random.default_rng(0)
    samples = rng.normal(-12, 3, 400)
    grid = np.linspace(-25, 0, 600)
    a = windreduce.weighted_kde(samples, np.full(400, 0.7), grid, 1.0)
    # unweighted oracle: direct mixture formula
    dens = np.exp(-0.5 * ((grid[:, None] - samples[None, :]) / 1.0) ** 2).sum(1)
    dens /= np.trapezoid(dens, grid)
    assert np.allclose(a.density, dens, rtol=1e-12)


def test_kde_normalization_random():
    rng = np.random.default_rng(1)
    for _ in range(5):
        samples = rng.normal(0, 2, 200)
        w = rng.uniform(0, 1, 200)
        grid = np.linspace(-12, 12, 800)
        pdf = windreduce.weighted_kde(samples, w, grid)
        assert abs(np.trapezoid(pdf.density, grid) - 1.0) < 1e-6


def test_kde_zero_weights_error():
    with pytest.raises(DataError):
        windreduce.weighted_kde(np.arange(4.0), np.zeros(4),
                                np.linspace(0, 1, 10))


def test_pca_identical_columns():
    mat = np.tile(np.linspace(0, 1, 50)[:, None], (1, 8))
    basis = windreduce.fit_pca(mat, 0.1)
    assert np.all(basis.singular_values < 1e-12)


def test_pca_rank_one():
    rng = np.random.default_rng(2)
    base = rng.uniform(0, 1, 60)
    direction = rng.standard_normal(60)
    mat = base[:, None] + direction[:, None] * rng.standard_normal(9)[None, :]
    basis = windreduce.fit_pca(mat, 0.05)
    s = basis.singular_values
    assert s[1] / s[0] < 1e-10


def test_pca_reconstruction_and_orthonormality():
    rng = np.random.default_rng(3)
    mat = rng.uniform(0, 1, (40, 12))
    spacing = 0.2
    grid = np.arange(40.0) * spacing
    basis = windreduce.fit_pca(mat, spacing)
    basis.grid = grid
    q = basis.components @ basis.components.T
    assert np.allclose(q, np.eye(q.shape[0]), atol=1e-10)
    assert np.all(np.diff(basis.singular_values) <= 1e-12)
    # full-rank reconstruction of one column
    col = windreduce.WindPdf(grid, mat[:, 3])
    w = windreduce.project(col, basis, rank=basis.singular_values.size)
    rec = windreduce.reconstruct(basis, w)
    assert np.linalg.norm(rec - mat[:, 3]) / np.linalg.norm(mat[:, 3]) < 1e-10


def test_project_centering_and_modes():
    rng = np.random.default_rng(4)
    mat = rng.uniform(0, 1, (30, 10))
    spacing = 0.3
    basis = windreduce.fit_pca(mat, spacing)
    basis.grid = np.arange(30.0) * spacing
    mean_pdf = windreduce.WindPdf(basis.grid, basis.mean / np.sqrt(spacing))
    assert np.allclose(windreduce.project(mean_pdf, basis), 0.0, atol=1e-12)
    s1 = basis.singular_values[0]
    shifted = windreduce.WindPdf(
        basis.grid, (basis.mean + s1 * basis.components[0]) / np.sqrt(spacing))
    w = windreduce.project(shifted, basis, rank=4)
    assert np.isclose(w[0], s1, rtol=1e-10)
    assert np.allclose(w[1:], 0.0, atol=1e-10 * s1)


def test_project_tail_bound():
    rng = np.random.default_rng(5)
    mat = rng.uniform(0, 1, (50, 14))
    spacing = 0.1
    basis = windreduce.fit_pca(mat, spacing)
    basis.grid = np.arange(50.0) * spacing
    rank = 4
    col = windreduce.WindPdf(basis.grid, mat[:, 2])
    w = windreduce.project(col, basis, rank=rank)
    rec = windreduce.reconstruct(basis, w)
    err = np.linalg.norm((rec - mat[:, 2]) * np.sqrt(spacing))
    tail = np.sqrt((basis.singular_values[rank:] ** 2).sum())
    assert err <= tail + 1e-12


def test_project_grid_mismatch():
    rng = np.random.default_rng(6)
    mat = rng.uniform(0, 1, (30, 6))
    basis = windreduce.fit_pca(mat, 0.5)
    basis.grid = np.arange(30.0) * 0.5
    with pytest.raises(DataError):
        windreduce.project(windreduce.WindPdf(np.arange(29.0), mat[:29, 0]),
                           basis)


def test_rank_study_shape_and_determinism():
    calls = []

    def fake_eval(rank, seed):
        calls.append((rank, seed))
        return 1.0 / rank + 0.01 * seed

    out1 = windreduce.rank_study([2, 4], 3, fake_eval)
    out2 = windreduce.rank_study([2, 4], 3, fake_eval)
    assert out1 == out2
    assert out1["best_rank"] == 4
    assert len(out1["rows"]) == 6

    single = windreduce.rank_study([5], 1, fake_eval)
    assert len(single["rows"]) == 1
