"""Plume-localized zonal-wind dimension reduction.

Wind values on the pseudo-3D grid are treated as samples of a random
variable: cells where the tagged SO2 exceeds a threshold are kept,
weighted by the RBF basis function, and turned into a PDF by weighted
Gaussian KDE on a frozen 1000-point wind grid.  PCA over the training
PDFs yields a small set of coordinates per basis function per timestep.
"""

from dataclasses import dataclass

import numpy as np

from plume import kernels, rbf
from plume.errors import DataError, EmptyLocalizationError


@dataclass
class WindPdf:
    grid: np.ndarray
    density: np.ndarray


@dataclass
class PcaBasis:
    """Frozen wind grid plus the centered-PDF principal components.

    Mean and components live in the sqrt(grid spacing)-scaled space so
    euclidean inner products approximate L2 integrals.
    """

    grid: np.ndarray
    mean: np.ndarray
    components: np.ndarray       # (n_components, n_grid), orthonormal rows
    singular_values: np.ndarray
    rank: int

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def scree_summary(self) -> dict:
        s = self.singular_values
        lead = float(s[0]) if s.size else 0.0
        fifth = float(s[4]) if s.size > 4 else 0.0
        return {
            "singular_values": s.tolist(),
            "ratio_5th_to_1st": fifth / lead if lead > 0 else 0.0,
        }


def localize(omega_3d, alpha_3d, coords: rbf.RbfCoords, tau: float,
             lons, domain: rbf.PeriodicDomain | None = None):
    """Threshold the plume region and weight winds by the RBF basis.

    Returns (samples, weights) where samples are the wind values in the
    thresholded region and weights has one row per basis function.
    """
    domain = domain or rbf.PeriodicDomain()
    omega_3d = np.asarray(omega_3d)
    alpha_3d = np.asarray(alpha_3d)
    if omega_3d.shape != alpha_3d.shape or omega_3d.ndim != 3:
        raise DataError("omega and SO2 fields must share a 3D grid")
    if tau < 0:
        raise DataError("threshold must be non-negative")
    mask = alpha_3d >= tau
    if not mask.any():
        raise EmptyLocalizationError(
            f"no grid cells with SO2 >= {tau}; threshold too high "
            f"(field max {alpha_3d.max():.3g})")
    samples = omega_3d[mask]
    weights = np.empty((coords.n_rbf, samples.shape[0]))
    for l in range(coords.n_rbf):
        single = rbf.RbfCoords(coords.centers[l:l + 1], coords.shapes[l:l + 1],
                               coords.coeffs[l:l + 1])
        psi = rbf.eval_basis(single, domain, lons)
        psi3 = np.broadcast_to(psi[:, None, None], omega_3d.shape)
        weights[l] = psi3[mask]
    return samples, weights


def silverman_bandwidth(samples, weights) -> float:
    """Silverman's rule from the weighted sample variance."""
    w = weights / weights.sum()
    mu = float(w @ samples)
    var = float(w @ (samples - mu) ** 2)
    n_eff = 1.0 / float(w @ w)
    sigma = np.sqrt(var)
    if sigma <= 0.0:
        return 1.0
    return 1.06 * sigma * n_eff ** (-0.2)


def weighted_kde(samples, weights, grid, bandwidth: float | None = None) -> WindPdf:
    """Gaussian-kernel weighted KDE, renormalized to integrate to 1."""
    samples = np.ascontiguousarray(samples, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    grid = np.ascontiguousarray(grid, dtype=float)
    if samples.shape != weights.shape or samples.ndim != 1:
        raise DataError("samples and weights must be matching 1D arrays")
    if np.any(weights < 0):
        raise DataError("weights must be non-negative")
    total = weights.sum()
    if total <= 0.0:
        raise DataError("weights must not all be zero")
    w = weights / total
    h = silverman_bandwidth(samples, w) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise DataError("bandwidth must be positive")
    density = kernels.kde_eval(samples, w, grid, h)
    integral = np.trapezoid(density, grid)
    if integral > 0:
        density = density / integral
    return WindPdf(grid, density)


def build_wind_grid(all_samples, bandwidths, n_points: int = 1000) -> np.ndarray:
    """Frozen evaluation grid spanning the training samples plus margin."""
    lo = min(float(np.min(s)) for s in all_samples)
    hi = max(float(np.max(s)) for s in all_samples)
    h = float(np.median(bandwidths))
    return np.linspace(lo - 3.0 * h, hi + 3.0 * h, n_points)


def fit_pca(pdf_matrix, spacing: float) -> PcaBasis:
    """SVD of the column-centered, spacing-scaled PDF matrix.

    pdf_matrix: (n_grid, n_samples), one PDF per column.
    """
    pdf_matrix = np.asarray(pdf_matrix, dtype=float)
    if pdf_matrix.ndim != 2 or pdf_matrix.shape[1] < 2:
        raise DataError("PCA needs a (grid, samples) matrix with >= 2 columns")
    scale = np.sqrt(spacing)
    x = pdf_matrix * scale
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    u, s, _ = np.linalg.svd(xc, full_matrices=False)
    return PcaBasis(grid=np.array([]), mean=mean, components=u.T.copy(),
                    singular_values=s, rank=min(4, s.size))


def fit_pca_on_grid(pdfs: list, grid, rank: int) -> PcaBasis:
    spacing = float(grid[1] - grid[0])
    mat = np.column_stack([p.density for p in pdfs])
    basis = fit_pca(mat, spacing)
    basis.grid = np.asarray(grid, dtype=float)
    basis.rank = int(rank)
    return basis


def project(pdf: WindPdf, basis: PcaBasis, rank: int | None = None) -> np.ndarray:
    """Leading principal-component coordinates of a centered PDF."""
    rank = basis.rank if rank is None else int(rank)
    if basis.grid.size and (pdf.grid.shape != basis.grid.shape
                            or not np.allclose(pdf.grid, basis.grid)):
        raise DataError("PDF grid does not match the PCA basis grid")
    v = pdf.density * np.sqrt(basis.spacing) - basis.mean
    return basis.components[:rank] @ v


def reconstruct(basis: PcaBasis, w) -> np.ndarray:
    """Rank-limited PDF reconstruction from coordinates."""
    w = np.asarray(w, dtype=float)
    v = basis.mean + basis.components[:w.size].T @ w
    return v / np.sqrt(basis.spacing)


@dataclass
class WindReduction:
    """Frozen basis plus per-trajectory coordinate arrays (days, nrbf, rank)."""

    basis: PcaBasis
    coords: dict
    tau: float

    def series(self, tid: str, rank: int | None = None) -> np.ndarray:
        """Wind coordinate series flattened to (days, nrbf*rank)."""
        w = self.coords[tid]
        rank = self.basis.rank if rank is None else int(rank)
        return w[:, :, :rank].reshape(w.shape[0], -1)


def reduce_campaign(ds, fits_by_tid: dict, tau: float, rank: int,
                    n_grid: int = 1000, bandwidth: float | None = None,
                    max_rank: int | None = None) -> WindReduction:
    """Full wind reduction over a campaign.

    fits_by_tid maps trajectory id to the per-day SO2 RbfCoords list; the
    PDF grid and PCA basis are frozen from the training split, then every
    split is projected.  Coordinates are stored at max_rank (default: all
    available) so rank studies can truncate without recomputation.
    """
    lons = ds.grid.lons
    domain = rbf.PeriodicDomain()
    collected = {}
    train_samples = []
    train_bandwidths = []
    for tr in ds.trajectories:
        fits = fits_by_tid[tr.tid]
        per_day = []
        for day in range(ds.config.n_days):
            samples, weights = localize(tr.omega[day], tr.alpha_3d[day],
                                        fits[day], tau, lons, domain)
            per_day.append((samples, weights))
            if tr.split == "train":
                train_samples.append(samples)
                for l in range(weights.shape[0]):
                    wsum = weights[l].sum()
                    if wsum > 0:
                        train_bandwidths.append(
                            silverman_bandwidth(samples, weights[l] / wsum))
        collected[tr.tid] = per_day

    grid = build_wind_grid(train_samples, train_bandwidths, n_grid)
    pdfs = {}
    train_pdfs = []
    for tr in ds.trajectories:
        per_day = []
        for samples, weights in collected[tr.tid]:
            day_pdfs = [weighted_kde(samples, weights[l], grid, bandwidth)
                        for l in range(weights.shape[0])]
            per_day.append(day_pdfs)
            if tr.split == "train":
                train_pdfs.extend(day_pdfs)
        pdfs[tr.tid] = per_day

    basis = fit_pca_on_grid(train_pdfs, grid, rank)
    keep = basis.singular_values.size if max_rank is None else int(max_rank)
    coords = {}
    for tid, per_day in pdfs.items():
        n_days = len(per_day)
        n_rbf = len(per_day[0])
        arr = np.empty((n_days, n_rbf, keep))
        for d in range(n_days):
            for l in range(n_rbf):
                arr[d, l] = project(per_day[d][l], basis, rank=keep)
        coords[tid] = arr
    return WindReduction(basis=basis, coords=coords, tau=tau)


def rank_study(candidate_ranks, n_seeds: int, train_eval_fn) -> dict:
    """Validation error as a function of the wind truncation rank.

    train_eval_fn(rank, seed) must train a flow map with that rank and
    return its validation error; the study reports the per-rank mean and
    the argmin rank.  Training failures are recorded per cell (NaN in
    the table) and the study continues.
    """
    rows = []
    means = []
    failures = []
    for r in candidate_ranks:
        errs = []
        for seed in range(n_seeds):
            try:
                err = float(train_eval_fn(int(r), seed))
            except Exception as exc:
                failures.append({"rank": int(r), "seed": seed,
                                 "error": str(exc)})
                err = float("nan")
            errs.append(err)
            rows.append({"rank": int(r), "seed": seed, "val_error": err})
        good = [e for e in errs if np.isfinite(e)]
        means.append(float(np.mean(good)) if good else float("nan"))
    finite = [(m, r) for m, r in zip(means, candidate_ranks) if np.isfinite(m)]
    best = int(min(finite)[1]) if finite else None
    return {
        "rows": rows,
        "mean_by_rank": {int(r): m for r, m in zip(candidate_ranks, means)},
        "best_rank": best,
        "failures": failures,
    }
