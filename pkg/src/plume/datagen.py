"""Synthetic volcanic-plume campaign generator.

Stands in for an earth-system-model simulation campaign: tagged SO2 and
sulfate advect on a periodic 1D longitude circle under per-ensemble
stochastic winds, with diffusion and first-order SO2 -> sulfate
conversion.  A pseudo-3D zonal wind field (longitude, latitude, altitude)
and a matching tagged 3D SO2 field feed the wind-localization step, and a
smooth random background AOD rides on top of the volcanic AOD.

Time integration is operator splitting: exact spectral circular shift for
advection, explicit substepped diffusion with a stability check, and
exact exponential decay for the reaction, so mass and moles are conserved
to rounding.
"""

from dataclasses import dataclass, field
from math import ceil, exp, pi, sqrt

import numpy as np

from plume.errors import ConfigurationError, DataError, StabilityError

GRAMS_PER_TG = 1.0e12

# rng stream tags (mixed into seeds; never reuse a tag for two purposes)
_TAG_WIND_ENS = 11
_TAG_WIND_SRC = 12
_TAG_BACKGROUND = 13
_TAG_SPINUP = 14

SPLIT_TRAIN = "train"
SPLIT_VALIDATION = "validation"
SPLIT_TEST = "test"


@dataclass
class SimulationConfig:
    """Knobs for the synthetic campaign; defaults give the standard run."""

    n_lon: int = 180
    n_lat: int = 9
    n_alt: int = 7
    n_days: int = 10
    dt_days: float = 1.0
    injection_masses_tg: tuple = (3.0, 5.0, 7.0, 13.0, 15.0)
    test_masses_tg: tuple = (10.0,)
    ensemble_seeds: tuple = (9101, 9102, 9103, 9104, 9105,
                             9106, 9107, 9108, 9205, 9201)
    n_train_ensembles: int = 7
    n_validation_ensembles: int = 1
    n_test_ensembles: int = 2
    reaction_rate_per_day: float = 0.055
    diffusion_deg2_per_day: float = 2.0
    diffusion_substeps: int = 8
    base_wind_deg_per_day: float = -14.0
    wind_noise: float = 1.2
    wind_growth_per_day: float = 0.1
    wind_shear_per_km: float = 0.3
    wind_lat_amplitude: float = 0.4
    background_aod_mean: float = 0.05
    background_aod_std: float = 0.015
    so2_threshold_g: float = 100.0
    volcano_lon_deg: float = 120.0
    initial_sigma_deg: float = 5.0
    spinup_days: float = 0.648
    spinup_jitter: float = 0.018
    aod_per_gram: float = 1.0e-11
    molar_mass_so2: float = 64.066
    molar_mass_sulfate: float = 96.06
    lat_half_width_deg: float = 20.0
    plume_sigma_lat_deg: float = 8.0
    alt_min_km: float = 18.0
    alt_max_km: float = 26.0
    plume_alt_center_km: float = 22.0
    plume_sigma_alt_km: float = 1.5

    def __post_init__(self):
        if self.n_lon < 64:
            raise ConfigurationError("n_lon must be >= 64")
        if self.n_days < 2:
            raise ConfigurationError("n_days must be >= 2")
        if self.dt_days <= 0:
            raise ConfigurationError("dt_days must be positive")
        if not (0.0 < self.reaction_rate_per_day < 1.0):
            raise ConfigurationError("reaction_rate_per_day must be in (0, 1)")
        for m in tuple(self.injection_masses_tg) + tuple(self.test_masses_tg):
            if m <= 0:
                raise ConfigurationError("injection masses must be positive")
        if self.diffusion_deg2_per_day < 0:
            raise ConfigurationError("diffusion must be non-negative")
        if self.n_lat < 3 or self.n_alt < 3:
            raise ConfigurationError("pseudo-3D grid needs n_lat, n_alt >= 3")

    @property
    def n_time_steps(self) -> int:
        return self.n_days - 1


@dataclass
class Grid:
    lons: np.ndarray
    lats: np.ndarray
    alts: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.lons[1] - self.lons[0])

    @property
    def dlat(self) -> float:
        return float(self.lats[1] - self.lats[0])

    @property
    def dalt(self) -> float:
        return float(self.alts[1] - self.alts[0])

    @classmethod
    def from_config(cls, cfg: SimulationConfig) -> "Grid":
        lons = np.arange(cfg.n_lon) * (360.0 / cfg.n_lon)
        lats = np.linspace(-cfg.lat_half_width_deg, cfg.lat_half_width_deg,
                           cfg.n_lat)
        alts = np.linspace(cfg.alt_min_km, cfg.alt_max_km, cfg.n_alt)
        return cls(lons, lats, alts)


@dataclass
class Trajectory:
    """All field families for one (ensemble, source magnitude) run."""

    ensemble_index: int          # 1-based position in the seed list
    ensemble_seed: int
    mass_tg: float
    split: str
    alpha_1d: np.ndarray         # SO2, g/deg, (days, lon)
    beta_1d: np.ndarray          # sulfate, g/deg
    rho_v: np.ndarray            # volcanic AOD, dimensionless
    rho_b: np.ndarray            # background AOD, dimensionless
    alpha_3d: np.ndarray         # SO2, g/(deg deg km), (days, lon, lat, alt)
    omega: np.ndarray            # zonal wind, deg/day, (days, lon, lat, alt)

    @property
    def tid(self) -> str:
        return f"ens{self.ensemble_index:02d}_m{self.mass_tg:05.1f}"


@dataclass
class RawDataset:
    config: SimulationConfig
    grid: Grid
    trajectories: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return [t for t in self.trajectories if t.split == name]


def _smooth_profile(rng, n_modes: int, n_drift: bool = False):
    """Random unit-RMS trig polynomial; optionally with per-mode day drift."""
    amps = rng.standard_normal(2 * n_modes)
    amps /= sqrt(float(amps @ amps) / 2.0)
    phases_rate = rng.uniform(-0.5, 0.5, size=n_modes) if n_drift else np.zeros(n_modes)

    def evaluate(lons, day=0.0):
        theta = 2.0 * pi * np.outer(np.arange(1, n_modes + 1), lons) / 360.0
        theta = theta + (phases_rate * day)[:, None]
        return amps[:n_modes] @ np.cos(theta) + amps[n_modes:] @ np.sin(theta)

    return evaluate


def _plume_profiles(cfg: SimulationConfig, grid: Grid):
    """Discrete lat/alt plume weights normalized to unit integral."""
    p = np.exp(-0.5 * (grid.lats / cfg.plume_sigma_lat_deg) ** 2)
    p /= p.sum() * grid.dlat
    q = np.exp(-0.5 * ((grid.alts - cfg.plume_alt_center_km)
                       / cfg.plume_sigma_alt_km) ** 2)
    q /= q.sum() * grid.dalt
    return p, q


def _spectral_shift(f: np.ndarray, shift_deg: float) -> np.ndarray:
    """Exact circular translation by shift_deg via the DFT shift theorem."""
    n = f.shape[0]
    spec = np.fft.rfft(f)
    m = np.arange(spec.shape[0])
    spec *= np.exp(-2.0j * pi * m * shift_deg / 360.0)
    return np.fft.irfft(spec, n=n)


def _diffuse(f: np.ndarray, mu: float, substeps: int) -> np.ndarray:
    for _ in range(substeps):
        f = f + mu * (np.roll(f, 1) + np.roll(f, -1) - 2.0 * f)
    return f


def check_stability(cfg: SimulationConfig):
    """Reject configurations the grid cannot integrate cleanly.

    Two checks: the explicit diffusion substep bound, and a resolution
    bound on the initial bump (an under-resolved Gaussian rings under the
    spectral advection step, which would silently leak mass through the
    non-negativity clamp)."""
    dx = 360.0 / cfg.n_lon
    mu = cfg.diffusion_deg2_per_day * (cfg.dt_days / cfg.diffusion_substeps) / dx ** 2
    if mu > 0.5:
        raise StabilityError(
            f"diffusion number {mu:.3f} > 0.5; refine diffusion_substeps "
            f"or reduce diffusion_deg2_per_day for this grid")
    if cfg.initial_sigma_deg < 2.5 * dx:
        raise StabilityError(
            f"grid too coarse: initial plume width {cfg.initial_sigma_deg} deg "
            f"needs spacing <= {cfg.initial_sigma_deg / 2.5:.3g} deg "
            f"(got {dx:.3g})")
    return mu


def _initial_bump(cfg: SimulationConfig, grid: Grid, total_g: float) -> np.ndarray:
    """Periodized Gaussian bump with the requested total mass (g/deg)."""
    sigma = cfg.initial_sigma_deg
    n_images = max(1, ceil(8.0 * sigma / 360.0) + 1)
    x = grid.lons
    bump = np.zeros_like(x)
    for m in range(-n_images, n_images + 1):
        d = x + 360.0 * m - cfg.volcano_lon_deg
        bump += np.exp(-0.5 * (d / sigma) ** 2)
    bump /= bump.sum() * grid.dx
    return bump * total_g


def _wind_field(cfg: SimulationConfig, grid: Grid, ensemble_seed: int,
                mass_index: int) -> np.ndarray:
    """Pseudo-3D zonal wind: shared ensemble character plus a weaker
    per-source deviation, a time-growing wander, and mild shear/latitude
    structure."""
    rng_ens = np.random.default_rng([ensemble_seed, _TAG_WIND_ENS])
    rng_src = np.random.default_rng([ensemble_seed, _TAG_WIND_SRC, mass_index])
    mix = 0.3
    s_ens = _smooth_profile(rng_ens, 3)
    t_ens = _smooth_profile(rng_ens, 3)
    s_src = _smooth_profile(rng_src, 3)
    t_src = _smooth_profile(rng_src, 3)

    lons = grid.lons
    days = np.arange(cfg.n_days, dtype=float) * cfg.dt_days
    v1d = np.empty((cfg.n_days, cfg.n_lon))
    for k, day in enumerate(days):
        s = sqrt(1.0 - mix ** 2) * s_ens(lons) + mix * s_src(lons)
        t = sqrt(1.0 - mix ** 2) * t_ens(lons) + mix * t_src(lons)
        v1d[k] = (cfg.base_wind_deg_per_day
                  + cfg.wind_noise * (s + cfg.wind_growth_per_day * day * t))

    shear = cfg.wind_shear_per_km * (grid.alts - cfg.plume_alt_center_km)
    latmod = cfg.wind_lat_amplitude * (
        (grid.lats / cfg.lat_half_width_deg) ** 2 - 1.0 / 3.0)
    omega = (v1d[:, :, None, None]
             + latmod[None, None, :, None]
             + shear[None, None, None, :])
    return omega


def _background_aod(cfg: SimulationConfig, grid: Grid, ensemble_seed: int,
                    mass_index: int) -> np.ndarray:
    rng = np.random.default_rng([ensemble_seed, _TAG_BACKGROUND, mass_index])
    prof = _smooth_profile(rng, 4, n_drift=True)
    out = np.empty((cfg.n_days, cfg.n_lon))
    for k in range(cfg.n_days):
        out[k] = cfg.background_aod_mean + cfg.background_aod_std * prof(
            grid.lons, day=k * cfg.dt_days)
    return np.maximum(out, 0.0)


def generate_trajectory(cfg: SimulationConfig, grid: Grid, ensemble_seed: int,
                        ensemble_index: int, mass_tg: float, mass_index: int,
                        split: str) -> Trajectory:
    """Run the 1D surrogate for one (ensemble, source magnitude) pair."""
    mu = check_stability(cfg)
    p, q = _plume_profiles(cfg, grid)
    omega = _wind_field(cfg, grid, ensemble_seed, mass_index)
    rho_b = _background_aod(cfg, grid, ensemble_seed, mass_index)

    rng_spin = np.random.default_rng([ensemble_seed, _TAG_SPINUP, mass_index])
    spin = cfg.spinup_days * (1.0 + cfg.spinup_jitter * rng_spin.uniform(-1.0, 1.0))
    decay0 = exp(-cfg.reaction_rate_per_day * spin)
    total = mass_tg * GRAMS_PER_TG
    molar_ratio = cfg.molar_mass_sulfate / cfg.molar_mass_so2

    alpha = np.empty((cfg.n_days, cfg.n_lon))
    beta = np.empty((cfg.n_days, cfg.n_lon))
    alpha[0] = _initial_bump(cfg, grid, total * decay0)
    beta[0] = _initial_bump(cfg, grid, total * (1.0 - decay0) * molar_ratio)

    # column weights for the mass-weighted advection speed
    wcol = (omega * p[None, None, :, None] * q[None, None, None, :]
            ).sum(axis=(2, 3)) * grid.dlat * grid.dalt

    decay = exp(-cfg.reaction_rate_per_day * cfg.dt_days)
    for k in range(cfg.n_days - 1):
        a_tot = alpha[k].sum()
        speed = float(alpha[k] @ wcol[k]) / a_tot if a_tot > 0 else 0.0
        a = np.maximum(_spectral_shift(alpha[k], speed * cfg.dt_days), 0.0)
        b = np.maximum(_spectral_shift(beta[k], speed * cfg.dt_days), 0.0)
        if cfg.diffusion_deg2_per_day > 0:
            a = _diffuse(a, mu, cfg.diffusion_substeps)
            b = _diffuse(b, mu, cfg.diffusion_substeps)
        a_next = a * decay
        b_next = b + (a - a_next) * molar_ratio
        alpha[k + 1] = a_next
        beta[k + 1] = b_next

    alpha_3d = (alpha[:, :, None, None]
                * p[None, None, :, None] * q[None, None, None, :])
    rho_v = cfg.aod_per_gram * beta
    return Trajectory(ensemble_index, ensemble_seed, float(mass_tg), split,
                      alpha, beta, rho_v, rho_b, alpha_3d, omega)


def generate_ensemble(cfg: SimulationConfig, ensemble_seed: int,
                      ensemble_index: int = 1, masses=None,
                      split: str = SPLIT_TRAIN) -> list:
    """All source magnitudes for one ensemble member; pure in (cfg, seed)."""
    masses = tuple(cfg.injection_masses_tg) if masses is None else tuple(masses)
    grid = Grid.from_config(cfg)
    return [generate_trajectory(cfg, grid, ensemble_seed, ensemble_index,
                                m, j, split)
            for j, m in enumerate(masses)]


def build_campaign(cfg: SimulationConfig) -> RawDataset:
    """Full train/validation/test campaign per the configured split sizes."""
    need = cfg.n_train_ensembles + cfg.n_validation_ensembles + cfg.n_test_ensembles
    seeds = tuple(cfg.ensemble_seeds)
    if len(seeds) < need:
        raise ConfigurationError(
            f"{need} ensemble seeds required for the configured splits, "
            f"got {len(seeds)}")
    grid = Grid.from_config(cfg)
    ds = RawDataset(cfg, grid)
    idx = 0
    for _ in range(cfg.n_train_ensembles):
        idx += 1
        ds.trajectories.extend(generate_ensemble(
            cfg, seeds[idx - 1], idx, cfg.injection_masses_tg, SPLIT_TRAIN))
    for _ in range(cfg.n_validation_ensembles):
        idx += 1
        ds.trajectories.extend(generate_ensemble(
            cfg, seeds[idx - 1], idx, cfg.injection_masses_tg, SPLIT_VALIDATION))
    for _ in range(cfg.n_test_ensembles):
        idx += 1
        ds.trajectories.extend(generate_ensemble(
            cfg, seeds[idx - 1], idx, cfg.test_masses_tg, SPLIT_TEST))
    return ds


def column_integrate(field_3d: np.ndarray, grid: Grid) -> np.ndarray:
    """Integrate a (..., lon, lat, alt) field over latitude and altitude."""
    field_3d = np.asarray(field_3d)
    if field_3d.ndim < 3 or field_3d.shape[-2:] != (grid.lats.size, grid.alts.size):
        raise DataError(
            f"trailing field dimensions {field_3d.shape[-2:]} do not match "
            f"the (lat, alt) grid ({grid.lats.size}, {grid.alts.size})")
    return field_3d.sum(axis=(-2, -1)) * grid.dlat * grid.dalt


def sulfur_moles(cfg: SimulationConfig, grid: Grid, alpha_1d, beta_1d) -> np.ndarray:
    """Total sulfur moles per day; constant along a trajectory."""
    return (alpha_1d.sum(axis=-1) / cfg.molar_mass_so2
            + beta_1d.sum(axis=-1) / cfg.molar_mass_sulfate) * grid.dx
