"""Bayesian source inversion with a marginalized Gaussian likelihood.

The observable map composes the flow map (SO2 evolution), the
conservation map (sulfate), the linear AOD map, and pointwise evaluation
at the observation longitudes.  Wind variability is marginalized by
averaging the observable over an ensemble of wind coordinate series and
inflating the likelihood covariance with the empirical covariance of the
ensemble spread; background AOD enters through its empirical mean and
covariance.  The MAP point is found by multistart quasi-Newton
optimization with exact reverse-mode gradients, and the posterior is
approximated by a Laplace expansion at the MAP.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from plume import aodmap, flowmap, rbf
from plume.errors import ConfigurationError, DataError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class ObservationOperator:
    """Observation longitudes and days; vectors flatten day-major."""

    longitudes: np.ndarray
    days: np.ndarray                  # day indices >= 1

    def __post_init__(self):
        self.longitudes = np.asarray(self.longitudes, dtype=float)
        self.days = np.asarray(self.days, dtype=int)
        if self.longitudes.size < 1:
            raise ConfigurationError("need at least one observation longitude")
        if np.any((self.longitudes < 0) | (self.longitudes >= 360.0)):
            raise ConfigurationError("observation longitudes must be in [0, 360)")
        if np.any(self.days < 1):
            raise ConfigurationError("observation days start at day 1")

    @property
    def n_obs(self) -> int:
        return self.longitudes.size

    @property
    def n_flat(self) -> int:
        return self.n_obs * self.days.size


def default_observation_operator(n_obs: int = 72, n_days: int = 9) -> ObservationOperator:
    return ObservationOperator(np.arange(n_obs) * (360.0 / n_obs),
                               np.arange(1, n_days + 1))


def _eval_obs(q, lons, period, n_images):
    """Pointwise AOD at observation longitudes for batched coords.

    q: (..., 3) RBF coords; returns (..., n_obs).
    """
    x = np.mod(q[..., 0], period)
    a = q[..., 1]
    c = q[..., 2]
    mm = np.arange(-n_images, n_images + 1) * period
    d = lons[None, :] + mm[:, None]                      # (n_m, n_obs)
    dd = d[(None,) * (q.ndim - 1)] - x[..., None, None]  # (..., n_m, n_obs)
    e = np.exp(-(a[..., None, None] ** 2) * dd * dd)
    return c[..., None] * e.sum(axis=-2)


def _eval_obs_vjp(q, lons, period, n_images, out_bar):
    """Adjoint of _eval_obs with respect to the coordinates."""
    x = np.mod(q[..., 0], period)
    a = q[..., 1]
    c = q[..., 2]
    mm = np.arange(-n_images, n_images + 1) * period
    d = lons[None, :] + mm[:, None]
    dd = d[(None,) * (q.ndim - 1)] - x[..., None, None]
    e = np.exp(-(a[..., None, None] ** 2) * dd * dd)
    qbar = np.zeros_like(q)
    ob = out_bar[..., None, :]
    qbar[..., 0] = (ob * c[..., None, None] * 2.0 * (a ** 2)[..., None, None]
                    * dd * e).sum(axis=(-2, -1))
    qbar[..., 1] = (ob * c[..., None, None] * (-2.0) * a[..., None, None]
                    * dd * dd * e).sum(axis=(-2, -1))
    qbar[..., 2] = (ob * e).sum(axis=(-2, -1))
    return qbar


def observe(q_by_day, op: ObservationOperator,
            domain: rbf.PeriodicDomain | None = None) -> np.ndarray:
    """Flatten AOD coords (indexed by absolute day) into the data vector."""
    domain = domain or rbf.PeriodicDomain()
    q_by_day = np.asarray(q_by_day, dtype=float)
    q_sel = q_by_day[op.days]
    n_images = rbf.images_for_shape(float(np.min(q_sel[..., 1])), domain.period)
    vals = _eval_obs(q_sel, op.longitudes, domain.period, n_images)
    return vals.reshape(-1)


@dataclass
class ForwardModel:
    """Trained operators plus the wind ensemble used for marginalization."""

    flow: flowmap.FlowMapParams
    aod: aodmap.AodMapParams
    op: ObservationOperator
    wind_ensemble: np.ndarray     # (n_samples, n_steps, n_wind)
    domain: rbf.PeriodicDomain = field(default_factory=rbf.PeriodicDomain)

    def __post_init__(self):
        self.wind_ensemble = np.ascontiguousarray(self.wind_ensemble, dtype=float)
        if self.wind_ensemble.ndim != 3:
            raise DataError("wind ensemble must be (n_samples, n_steps, n_wind)")
        if self.wind_ensemble.shape[1] < int(self.op.days.max()):
            raise DataError("wind ensemble shorter than the last observed day")

    @property
    def n_samples(self) -> int:
        return self.wind_ensemble.shape[0]


def _sulfate_coords_from_rollout(model: ForwardModel, zs, z0):
    """Raw sulfate coords per (sample, day) from transformed SO2 states."""
    p = model.flow
    ms0 = p.initial_sulfate_ratio * z0[2]
    msul = ms0 + p.kappa * (z0[2] - zs[..., 2])
    s = zs.copy()
    s[..., 2] = msul * zs[..., 1]
    return s


def forward_all(model: ForwardModel, z0, wind_ensemble=None):
    """Observable vectors for every wind sample.

    Returns (ys, caches, aux) where ys has shape (n_samples, n_flat).
    """
    winds = model.wind_ensemble if wind_ensemble is None else wind_ensemble
    caches = flowmap.batch_rollout_z(model.flow, z0, winds)
    zs = caches[0]
    s_raw = _sulfate_coords_from_rollout(model, zs, np.asarray(z0, dtype=float))
    q_all = s_raw @ model.aod.matrix.T
    clamped = q_all[..., 1] < model.flow.a_floor
    q_all[..., 1] = np.where(clamped, model.flow.a_floor, q_all[..., 1])
    q_sel = q_all[:, model.op.days, :]
    n_images = rbf.images_for_shape(float(np.min(q_sel[..., 1])),
                                    model.domain.period)
    vals = _eval_obs(q_sel, model.op.longitudes, model.domain.period, n_images)
    ys = vals.reshape(vals.shape[0], -1)
    aux = {"q_sel": q_sel, "n_images": n_images, "s_raw": s_raw, "zs": zs,
           "clamped_sel": clamped[:, model.op.days]}
    return ys, caches, aux


def forward_mean(model: ForwardModel, z0, wind_ensemble=None):
    """Sample mean of the observable over the wind ensemble."""
    ys, caches, aux = forward_all(model, z0, wind_ensemble)
    return ys.mean(axis=0), (ys, caches, aux)


def forward_mean_vjp(model: ForwardModel, z0, caches, aux, lam):
    """Gradient of lam . mean_obs with respect to z0."""
    z0 = np.asarray(z0, dtype=float)
    zs = caches[0]
    nsamp, nsteps_p1, _ = zs.shape
    p = model.flow
    out_bar = np.broadcast_to(
        lam.reshape(1, model.op.days.size, model.op.n_obs) / nsamp,
        (nsamp, model.op.days.size, model.op.n_obs))
    qbar = _eval_obs_vjp(aux["q_sel"], model.op.longitudes,
                         model.domain.period, aux["n_images"], out_bar)
    qbar[..., 1] = np.where(aux["clamped_sel"], 0.0, qbar[..., 1])
    sbar_sel = qbar @ model.aod.matrix
    sbar = np.zeros((nsamp, nsteps_p1, 3))
    sbar[:, model.op.days, :] = sbar_sel
    # s_raw = (x, a, msul*a) with msul = rho0*m0 + kappa*(m0 - m)
    msul = (p.initial_sulfate_ratio * z0[2]
            + p.kappa * (z0[2] - zs[..., 2]))
    zbar = np.zeros_like(sbar)
    zbar[..., 0] = sbar[..., 0]
    zbar[..., 1] = sbar[..., 1] + sbar[..., 2] * msul
    zbar[..., 2] = -sbar[..., 2] * zs[..., 1] * p.kappa
    m0_bar = float((sbar[..., 2] * zs[..., 1]).sum()
                   * (p.initial_sulfate_ratio + p.kappa))
    z0_bar = flowmap.batch_rollout_vjp(p, caches, zbar)
    z0_bar[2] += m0_bar
    return z0_bar


@dataclass
class BaeLikelihood:
    """Gaussian likelihood with background and wind-variability corrections."""

    mu_nu: np.ndarray
    sigma_nu: np.ndarray
    sigma_noise: float
    mu_bae: np.ndarray
    sigma_bae: np.ndarray
    mu: np.ndarray = None
    sigma: np.ndarray = None
    chol: np.ndarray = None

    def __post_init__(self):
        n = self.mu_nu.shape[0]
        if self.sigma_noise <= 0:
            raise ConfigurationError("sigma_noise must be positive for an SPD covariance")
        self.mu = self.mu_nu + self.mu_bae
        sigma = (self.sigma_noise ** 2 * np.eye(n)
                 + self.sigma_nu + self.sigma_bae)
        sigma = 0.5 * (sigma + sigma.T)
        try:
            self.chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"likelihood covariance not SPD: {exc}") from exc
        self.sigma = sigma

    def solve(self, r):
        y = solve_triangular(self.chol, r, lower=True)
        return solve_triangular(self.chol.T, y, lower=False)

    def half_quad(self, r) -> float:
        y = solve_triangular(self.chol, r, lower=True)
        return 0.5 * float(y @ y)


def log_likelihood(like: BaeLikelihood, mean_obs, d) -> float:
    """-1/2 (E[A] + mu - d)^T Sigma^-1 (E[A] + mu - d), via the Cholesky factor."""
    r = np.asarray(mean_obs) + like.mu - np.asarray(d)
    return -like.half_quad(r)


def estimate_background(observed_bg, ) -> tuple:
    """Empirical mean/covariance of observed background-AOD vectors."""
    y = np.asarray(observed_bg, dtype=float)
    if y.ndim != 2 or y.shape[0] < 2:
        raise DataError("background estimation needs >= 2 observed trajectories")
    mu = y.mean(axis=0)
    z = y - mu
    cov = z.T @ z / (y.shape[0] - 1)
    return mu, 0.5 * (cov + cov.T)


def estimate_bae(model: ForwardModel, prior, estimator: str = "prior-mean",
                 n_prior_samples: int = 8, seed: int = 0) -> tuple:
    """Mean/covariance of A(r0, w) - E_w[A(r0, w)] over the wind ensemble.

    The default estimator propagates only the prior mean, which centers
    the samples exactly (mu_BAE = 0); "prior-samples" pools centered
    deviations over several prior draws of r0.
    """
    if estimator == "prior-mean":
        ys, _, _ = forward_all(model, prior.mean_z)
        devs = ys - ys.mean(axis=0)
    elif estimator == "prior-samples":
        rng = np.random.default_rng(seed)
        pools = []
        a_lo = model.flow.a_floor
        for _ in range(n_prior_samples):
            z0 = prior.sample(rng)
            z0[1] = max(z0[1], 10 * a_lo)   # keep the shape evaluable
            ys, _, _ = forward_all(model, z0)
            pools.append(ys - ys.mean(axis=0))
        devs = np.concatenate(pools, axis=0)
    else:
        raise ConfigurationError(f"unknown BAE estimator {estimator!r}")
    mu = devs.mean(axis=0)
    n = devs.shape[0]
    if n < 2:
        return mu, np.zeros((devs.shape[1], devs.shape[1]))
    z = devs - mu
    cov = z.T @ z / (n - 1)
    return mu, 0.5 * (cov + cov.T)


@dataclass
class Prior:
    """Gaussian prior on the transformed coordinates (x, a, mass/sqrt(pi))."""

    mean_z: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean_z = np.asarray(self.mean_z, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError(f"prior covariance not SPD: {exc}") from exc

    def sample(self, rng) -> np.ndarray:
        return self.mean_z + self._chol @ rng.standard_normal(self.mean_z.size)

    def half_quad(self, z) -> float:
        y = solve_triangular(self._chol, z - self.mean_z, lower=True)
        return 0.5 * float(y @ y)

    def grad_half_quad(self, z) -> np.ndarray:
        y = solve_triangular(self._chol, z - self.mean_z, lower=True)
        return solve_triangular(self._chol.T, y, lower=False)


def negative_log_posterior(model: ForwardModel, prior: Prior,
                           like: BaeLikelihood, d, z0,
                           with_grad: bool = False):
    mean_obs, (ys, caches, aux) = forward_mean(model, z0)
    r = mean_obs + like.mu - d
    val = like.half_quad(r) + prior.half_quad(z0)
    if not with_grad:
        return val
    lam = like.solve(r)
    g = forward_mean_vjp(model, z0, caches, aux, lam) + prior.grad_half_quad(z0)
    return val, g


@dataclass
class MapResult:
    z_map: np.ndarray
    r_map: np.ndarray
    objective: float
    starts: list
    converged: bool


def map_estimate(model: ForwardModel, prior: Prior, like: BaeLikelihood, d,
                 n_starts: int = 8, seed: int = 0, gtol: float = 1e-10,
                 maxiter: int = 400) -> MapResult:
    """Multistart quasi-Newton MAP search in (x, log a, m) coordinates.

    The log-a parameterization keeps the shape positive without explicit
    constraints; the objective is still the z-space posterior, so the
    minimizer is the z-space MAP point.
    """
    d = np.asarray(d, dtype=float)
    rng = np.random.default_rng(seed)
    a_lo = model.flow.a_floor
    # search variables: prior-scaled center and mass, log shape
    sx = float(np.sqrt(prior.cov[0, 0]))
    sm = float(np.sqrt(prior.cov[2, 2]))

    def pack(z):
        return np.array([z[0] / sx, np.log(max(z[1], a_lo)), z[2] / sm])

    def unpack(th):
        return np.array([th[0] * sx, np.exp(th[1]), th[2] * sm])

    def objective(th):
        z = unpack(th)
        val, g = negative_log_posterior(model, prior, like, d, z, with_grad=True)
        gz = np.array([g[0] * sx, g[1] * z[1], g[2] * sm])
        return val, gz

    starts = [prior.mean_z.copy()]
    while len(starts) < n_starts:
        z = prior.sample(rng)
        if z[1] <= a_lo * 10:
            continue
        starts.append(z)

    bounds = [(None, None), (np.log(a_lo), np.log(10.0)), (None, None)]
    reports = []
    best = None
    for i, z_start in enumerate(starts):
        trace = []
        last = {}

        def fun(th):
            val, g = objective(th)
            last["x"] = th.copy()
            last["val"] = val
            return val, g

        def cb(th):
            # L-BFGS-B evaluates the accepted iterate last, so the cached
            # value is almost always reusable
            if "x" in last and np.array_equal(th, last["x"]):
                trace.append(last["val"])
            else:
                trace.append(float(objective(th)[0]))

        res = optimize.minimize(fun, pack(z_start), jac=True,
                                method="L-BFGS-B", bounds=bounds, callback=cb,
                                options={"gtol": gtol, "maxiter": maxiter,
                                         "ftol": 1e-14})
        z_opt = unpack(res.x)
        reports.append({
            "start_index": i,
            "z_start": z_start.tolist(),
            "z_opt": z_opt.tolist(),
            "objective": float(res.fun),
            "iterations": int(res.nit),
            "success": bool(res.success),
            "message": str(res.message),
            "trace": trace,
        })
        if best is None or res.fun < best[0]:
            best = (float(res.fun), z_opt, bool(res.success))
    if best is None or not np.isfinite(best[0]):
        raise NumericalError(
            "MAP optimization failed on every start; per-start traces: "
            + "; ".join(r["message"] for r in reports))
    z_map = best[1]
    return MapResult(z_map=z_map, r_map=flowmap.inverse_transform(z_map),
                     objective=best[0], starts=reports, converged=best[2])


@dataclass
class Posterior:
    z_map: np.ndarray
    covariance: np.ndarray
    hessian: np.ndarray
    regularization_floor: float = 0.0

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        chol = np.linalg.cholesky(self.covariance)
        return self.z_map[None, :] + rng.standard_normal((n, self.z_map.size)) @ chol.T


def laplace(grad_fn, z_map, fd_step: float = 1e-5) -> Posterior:
    """Gaussian posterior approximation from an FD Hessian of the gradient.

    grad_fn(z) must return the gradient of the negative log posterior.
    A non-SPD Hessian is floored at 1e-10 of its largest eigenvalue, and
    the floor is recorded on the result.
    """
    z_map = np.asarray(z_map, dtype=float)
    n = z_map.size
    hess = np.empty((n, n))
    for i in range(n):
        h = fd_step * max(abs(z_map[i]), 1.0)
        zp = z_map.copy(); zp[i] += h
        zm = z_map.copy(); zm[i] -= h
        hess[:, i] = (grad_fn(zp) - grad_fn(zm)) / (2.0 * h)
    hess = 0.5 * (hess + hess.T)
    floor_used = 0.0
    try:
        c, low = cho_factor(hess)
        cov = cho_solve((c, low), np.eye(n))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(hess)
        floor_used = 1e-10 * float(np.max(np.abs(vals)))
        logger.warning("Laplace Hessian not SPD; flooring eigenvalues at %g",
                       floor_used)
        vals = np.maximum(vals, floor_used)
        hess = (vecs * vals) @ vecs.T
        cov = (vecs / vals) @ vecs.T
    cov = 0.5 * (cov + cov.T)
    return Posterior(z_map=z_map, covariance=cov, hessian=hess,
                     regularization_floor=floor_used)


def sample_at_longitudes(field_1d, grid_lons, obs_lons) -> np.ndarray:
    """Periodic linear interpolation of a gridded field at the obs points."""
    xs = np.concatenate([grid_lons, [360.0]])
    ys = np.concatenate([field_1d, field_1d[:1]])
    return np.interp(np.mod(obs_lons, 360.0), xs, ys)


def synthesize_observations(trajectory, op: ObservationOperator, grid_lons,
                            sigma_obs: float = 0.012, seed: int = 0):
    """Noisy total-AOD observations from a test trajectory.

    d = (rho_v + rho_b) sampled at the observation points plus
    N(0, sigma_obs^2) noise; returns (d, noiseless).
    """
    total = trajectory.rho_v + trajectory.rho_b
    rows = [sample_at_longitudes(total[day], grid_lons, op.longitudes)
            for day in op.days]
    noiseless = np.concatenate(rows)
    rng = np.random.default_rng(seed)
    noise = sigma_obs * rng.standard_normal(noiseless.shape) if sigma_obs > 0 else 0.0
    return noiseless + noise, noiseless
