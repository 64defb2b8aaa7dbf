"""Learned time-evolution operator for the reduced SO2 coordinates.

The state advances in transformed coordinates T(x, a, c) = (x, a, c/a):
z_{k+1} = z_k + dt * D act(N([z_k; w_k])) where N is a dense network (a
single linear layer by default), act is elementwise min(0, y), and D is a
fixed positive diagonal carrying each component's characteristic scale
(a pure preconditioning: positive scaling commutes with min(0, y), so the
function class and guarantees are unchanged).  Since c/a is proportional
to total mass, the non-positive increments make mass, center, and shape
monotonically non-increasing by construction.  Sulfate coordinates come
from SO2 through a molar-mass balance at every step.

Gradients are exact reverse-mode passes hand-rolled in the kernel layer;
no autodiff framework is involved.
"""

from dataclasses import dataclass, field, replace
from math import pi, sqrt

import numpy as np

from plume import kernels, rbf
from plume.errors import ConfigurationError, DataError, NumericalError

DEFAULT_MOLAR_MASS_SO2 = 64.066
DEFAULT_MOLAR_MASS_SULFATE = 96.06
DEFAULT_SULFATE_RATIO = 0.0544


def transform(r):
    """T(x, a, c) = (x, a, c/a); batched over the leading axes."""
    r = np.asarray(r, dtype=float)
    a = r[..., 1]
    if np.any(a <= 0.0):
        raise ValueError("shape hyperparameter must be positive")
    out = r.copy()
    out[..., 2] = r[..., 2] / a
    return out


def inverse_transform(z):
    """T^-1(x, a, m) = (x, a, m*a)."""
    z = np.asarray(z, dtype=float)
    a = z[..., 1]
    if np.any(a <= 0.0):
        raise ValueError("shape hyperparameter must be positive")
    out = z.copy()
    out[..., 2] = z[..., 2] * a
    return out


def layer_sizes(n_wind: int, hidden_layers: int = 0, width: int = 0):
    sizes = [3 + n_wind] + [width] * hidden_layers + [3]
    if hidden_layers > 0 and width < 1:
        raise ConfigurationError("hidden layers require a positive width")
    return np.asarray(sizes, dtype=np.int64)


def n_params(sizes) -> int:
    return int(sum(sizes[l + 1] * sizes[l] + sizes[l + 1]
                   for l in range(len(sizes) - 1)))


@dataclass
class FlowMapParams:
    """Weights plus the fixed metadata needed to evaluate the operator."""

    sizes: np.ndarray
    theta: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray
    state_scale: np.ndarray
    loss_scale_so2: np.ndarray
    loss_scale_sulfate: np.ndarray
    dt: float = 1.0
    molar_mass_so2: float = DEFAULT_MOLAR_MASS_SO2
    molar_mass_sulfate: float = DEFAULT_MOLAR_MASS_SULFATE
    initial_sulfate_ratio: float = DEFAULT_SULFATE_RATIO
    a_floor: float = 1e-3
    monotone_center: bool = True

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape[0] != n_params(self.sizes):
            raise ConfigurationError("theta length does not match layer sizes")
        if not np.all(np.isfinite(self.theta)):
            raise ConfigurationError("non-finite network weights")
        self.state_scale = np.asarray(self.state_scale, dtype=float)
        if np.any(self.state_scale <= 0):
            raise ConfigurationError("state_scale components must be positive")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.molar_mass_so2 <= 0 or self.molar_mass_sulfate <= 0:
            raise ConfigurationError("molar masses must be positive")
        if not (0.0 <= self.initial_sulfate_ratio <= 0.1):
            raise ConfigurationError("initial sulfate ratio outside [0, 0.1]")

    @property
    def n_wind(self) -> int:
        return int(self.sizes[0]) - 3

    @property
    def kappa(self) -> float:
        """Sulfate mass produced per unit SO2 mass depleted."""
        return self.molar_mass_sulfate / self.molar_mass_so2

    @property
    def act_mask(self) -> np.ndarray:
        mask = np.ones(3, dtype=np.int8)
        if not self.monotone_center:
            mask[0] = 0
        return mask

    def zeros_like(self) -> "FlowMapParams":
        return replace(self, theta=np.zeros_like(self.theta))


def make_params(n_wind: int, hidden_layers: int = 0, width: int = 0,
                theta=None, **kw) -> FlowMapParams:
    sizes = layer_sizes(n_wind, hidden_layers, width)
    nin = int(sizes[0])
    if theta is None:
        theta = np.zeros(n_params(sizes))
    return FlowMapParams(sizes=sizes, theta=theta,
                         input_mean=kw.pop("input_mean", np.zeros(nin)),
                         input_std=kw.pop("input_std", np.ones(nin)),
                         state_scale=kw.pop("state_scale", np.ones(3)),
                         loss_scale_so2=kw.pop("loss_scale_so2", np.ones(3)),
                         loss_scale_sulfate=kw.pop("loss_scale_sulfate", np.ones(3)),
                         **kw)


def step_z(params: FlowMapParams, z, w):
    """One forward-Euler step in transformed coordinates.

    z_next = z + dt * state_scale * min(0, N(standardized [z; w])), with
    the shape floored at a_floor and the mass floored at 0 (floors never
    lift a state: a component already below its floor is frozen).
    Accepts single states (3,) or batches (n, 3); returns the advanced
    state(s) plus the clamp flags.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    w = np.atleast_2d(np.asarray(w, dtype=float))
    z1, modes = kernels.fm_step_many(
        np.ascontiguousarray(z), np.ascontiguousarray(w), params.theta,
        params.sizes, params.input_mean, params.input_std,
        params.state_scale, params.dt, params.a_floor, params.act_mask)
    return z1, modes


def step(params: FlowMapParams, r, w):
    """One step on raw (x, a, c) coordinates; see step_z for the math."""
    r = np.asarray(r, dtype=float)
    squeeze = r.ndim == 1
    z = transform(np.atleast_2d(r))
    z1, modes = step_z(params, z, np.atleast_2d(np.asarray(w, dtype=float)))
    r1 = inverse_transform(z1)
    if squeeze:
        return r1[0], modes[0]
    return r1, modes


def sulfate_mass_z(params: FlowMapParams, m, m0, ms0):
    """Transformed sulfate mass from molar balance against the day-0 state."""
    return ms0 + params.kappa * (m0 - m)


def sulfate_from_so2(params: FlowMapParams, r_k, r_0, s_0):
    """Conservation map: sulfate coords with SO2's center/shape.

    The coefficient per basis function is set so the sulfur moles lost by
    the SO2 reappear as sulfate, using the analytic basis mass
    sqrt(pi) c/a.
    """
    r_k = np.asarray(r_k, dtype=float)
    r_0 = np.asarray(r_0, dtype=float)
    s_0 = np.asarray(s_0, dtype=float)
    zk = transform(r_k)
    z0 = transform(r_0)
    sz0 = transform(s_0)
    if np.any(zk[..., 2] > z0[..., 2] * (1.0 + 1e-12) + 1e-300):
        raise NumericalError(
            "conservation violation: SO2 mass exceeds its initial value")
    ms = sulfate_mass_z(params, zk[..., 2], z0[..., 2], sz0[..., 2])
    out = zk.copy()
    out[..., 2] = ms
    return inverse_transform(out)


def initial_sulfate(params: FlowMapParams, r_0):
    """Day-0 sulfate from the configured mass ratio (same center/shape)."""
    r_0 = np.asarray(r_0, dtype=float)
    s0 = r_0.copy()
    s0[..., 2] = r_0[..., 2] * params.initial_sulfate_ratio
    return s0


@dataclass
class Trajectory:
    """Predicted coordinate series (raw coords per day)."""

    so2: np.ndarray        # (n_days, 3)
    sulfate: np.ndarray    # (n_days, 3)
    winds: np.ndarray      # (n_days - 1, n_wind)
    clamped_steps: int = 0


def rollout(params: FlowMapParams, r_0, winds) -> Trajectory:
    """Compose the flow map over a wind series starting from raw r_0."""
    r_0 = np.asarray(r_0, dtype=float)
    winds = np.ascontiguousarray(np.asarray(winds, dtype=float))
    if winds.ndim != 2 or winds.shape[1] != params.n_wind:
        raise DataError(f"winds must be (n_steps, {params.n_wind})")
    z0 = transform(r_0)
    zs, _, _, _, modes = kernels.fm_batch_rollout(
        np.ascontiguousarray(z0), winds[None, :, :], params.theta,
        params.sizes, params.input_mean, params.input_std,
        params.state_scale, params.dt, params.a_floor, params.act_mask)
    zs = zs[0]
    so2 = inverse_transform(zs)
    ms0 = params.initial_sulfate_ratio * z0[2]
    msul = sulfate_mass_z(params, zs[:, 2], z0[2], ms0)
    sul = zs.copy()
    sul[:, 2] = msul
    sulfate = inverse_transform(sul)
    return Trajectory(so2=so2, sulfate=sulfate, winds=winds,
                      clamped_steps=int(np.count_nonzero(modes)))


def batch_rollout_z(params: FlowMapParams, z0, winds_batch):
    """Shared-initial-state rollout over many wind series (with caches)."""
    winds_batch = np.ascontiguousarray(np.asarray(winds_batch, dtype=float))
    return kernels.fm_batch_rollout(
        np.ascontiguousarray(np.asarray(z0, dtype=float)), winds_batch,
        params.theta, params.sizes, params.input_mean, params.input_std,
        params.state_scale, params.dt, params.a_floor, params.act_mask)


def batch_rollout_vjp(params: FlowMapParams, caches, zbar_all):
    _, ucache, hcache, ycache, modes = caches
    return kernels.fm_batch_rollout_vjp(
        np.ascontiguousarray(zbar_all), ucache, hcache, ycache, modes,
        params.theta, params.sizes, params.input_std, params.state_scale,
        params.dt, params.act_mask)


@dataclass
class CoordDataset:
    """Fitted coordinate series for a set of trajectories."""

    so2: np.ndarray          # (ntraj, ndays, 3) raw coords, centers unwrapped
    sulfate: np.ndarray      # (ntraj, ndays, 3)
    winds: np.ndarray        # (ntraj, ndays, n_wind)
    ensemble_index: np.ndarray
    tids: list = field(default_factory=list)

    @property
    def n_traj(self) -> int:
        return self.so2.shape[0]

    @property
    def n_days(self) -> int:
        return self.so2.shape[1]

    def subset(self, idx) -> "CoordDataset":
        idx = np.asarray(idx)
        tids = [self.tids[i] for i in idx] if self.tids else []
        return CoordDataset(self.so2[idx], self.sulfate[idx], self.winds[idx],
                            self.ensemble_index[idx], tids)


def _loss_inputs(params: FlowMapParams, data: CoordDataset):
    R = np.ascontiguousarray(data.so2)
    S = np.ascontiguousarray(data.sulfate)
    W = np.ascontiguousarray(data.winds)
    m0 = R[:, 0, 2] / R[:, 0, 1]
    ms0 = np.ascontiguousarray(params.initial_sulfate_ratio * m0)
    return R, S, W, ms0


def lookahead_loss(params: FlowMapParams, data: CoordDataset, P: int) -> float:
    """Sum of standardized SO2+sulfate misfits over all look-ahead horizons."""
    if P < 1:
        raise ConfigurationError("look-ahead horizon P must be >= 1")
    R, S, W, ms0 = _loss_inputs(params, data)
    loss, _, _, _ = kernels.fm_lookahead_loss_grad(
        R, S, W, ms0, params.theta, params.sizes, params.input_mean,
        params.input_std, params.state_scale, params.dt, params.a_floor, P,
        params.kappa, params.loss_scale_so2, params.loss_scale_sulfate,
        params.act_mask, False)
    return float(loss)


def gradient(params: FlowMapParams, data: CoordDataset, P: int):
    """Reverse-mode gradient of the look-ahead loss in the weights.

    Returns (loss, grad, info) where info carries the clamp count and the
    smallest |pre-activation| encountered (kink-distance diagnostic).
    """
    if P < 1:
        raise ConfigurationError("look-ahead horizon P must be >= 1")
    R, S, W, ms0 = _loss_inputs(params, data)
    for name, arr in (("so2 coords", R), ("sulfate coords", S),
                      ("wind coords", W)):
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"gradient: non-finite values in {name}")
    loss, grad, clamps, min_pre = kernels.fm_lookahead_loss_grad(
        R, S, W, ms0, params.theta, params.sizes, params.input_mean,
        params.input_std, params.state_scale, params.dt, params.a_floor, P,
        params.kappa, params.loss_scale_so2, params.loss_scale_sulfate,
        params.act_mask, True)
    if not np.isfinite(loss):
        raise NumericalError("gradient: loss evaluation produced non-finite value")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("gradient: backward pass produced non-finite values")
    return float(loss), grad, {"clamped_steps": int(clamps),
                               "min_abs_preactivation": float(min_pre)}


@dataclass
class TrainingConfig:
    P: int = 3
    epochs: int = 2500
    learning_rate: float = 0.15
    lr_decay: float = 0.999
    seed: int = 0
    init_scale: float = 0.05
    init_bias: float = -0.5
    hidden_layers: int = 0
    width: int = 0
    divergence_factor: float = 1e6


def standardization_stats(data: CoordDataset):
    """Input channel statistics over all (trajectory, day) states."""
    z = transform(data.so2.reshape(-1, 3))
    w = data.winds.reshape(-1, data.winds.shape[2])
    u = np.concatenate([z, w], axis=1)
    mu = u.mean(axis=0)
    sd = u.std(axis=0)
    sd[sd < 1e-12] = 1.0
    sd_r = data.so2.reshape(-1, 3).std(axis=0)
    sd_s = data.sulfate.reshape(-1, 3).std(axis=0)
    sd_r[sd_r < 1e-12] = 1.0
    sd_s[sd_s < 1e-12] = 1.0
    return mu, sd, sd_r, sd_s


def n_loss_terms(data: CoordDataset, P: int) -> int:
    """Residual component count of the look-ahead loss on a dataset."""
    ndays = data.n_days
    per_traj = sum(min(P, ndays - 1 - k) for k in range(1, ndays)) * 6
    return data.n_traj * per_traj


def ensemble_batches(ensemble_index) -> list:
    """Group trajectories into batches of 2-3 whole ensembles."""
    ens = sorted(set(int(e) for e in ensemble_index))
    groups = []
    while ens:
        take = 3 if len(ens) % 2 == 1 or len(ens) >= 6 else 2
        take = min(take, len(ens))
        groups.append(ens[:take])
        ens = ens[take:]
    idx = np.asarray(ensemble_index)
    return [np.where(np.isin(idx, g))[0] for g in groups]


def input_preconditioner(data: CoordDataset, mu, sd, floor_rel: float = 1e-2):
    """Fixed inverse covariance of the standardized inputs (plus a bias
    channel).  Right-multiplying the first-layer gradient by this matrix
    removes the cross-channel correlations that stall plain gradient
    descent; the step direction metric is frozen before training.
    Eigenvalues are floored relative to the largest so nearly-singular
    input manifolds (tiny datasets) cannot blow up the step."""
    z = transform(data.so2.reshape(-1, 3))
    w = data.winds.reshape(-1, data.winds.shape[2])
    u = (np.concatenate([z, w], axis=1) - mu) / sd
    ua = np.column_stack([u, np.ones(u.shape[0])])
    cov = ua.T @ ua / ua.shape[0]
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    vals = np.maximum(vals, floor_rel * vals[-1])
    return (vecs / vals) @ vecs.T


def _precondition(grad, sizes, cinv):
    """Apply the input metric to layer 0's weight and bias gradients."""
    nin = int(sizes[0])
    nout = int(sizes[1])
    nw = nout * nin
    g = np.column_stack([grad[:nw].reshape(nout, nin), grad[nw:nw + nout]])
    g = g @ cinv
    out = grad.copy()
    out[:nw] = g[:, :nin].ravel()
    out[nw:nw + nout] = g[:, nin]
    return out


def train(train_data: CoordDataset, val_data: CoordDataset | None,
          cfg: TrainingConfig, **param_kw):
    """Batch gradient descent over ensemble groups; keeps the best
    validation weights (or best training weights when no validation set
    is supplied).  Deterministic given the seed."""
    if train_data.n_traj < 1:
        raise DataError("training set is empty")
    n_wind = train_data.winds.shape[2]
    mu, sd, sd_r, sd_s = standardization_stats(train_data)
    rng = np.random.default_rng(cfg.seed)
    sizes = layer_sizes(n_wind, cfg.hidden_layers, cfg.width)
    theta0 = rng.standard_normal(n_params(sizes)) * cfg.init_scale
    # negative output bias keeps the min(0, y) units in their active
    # region at the start of training
    theta0[-3:] = cfg.init_bias
    params = make_params(n_wind, cfg.hidden_layers, cfg.width, theta=theta0,
                         input_mean=mu, input_std=sd, state_scale=sd[:3],
                         loss_scale_so2=sd_r, loss_scale_sulfate=sd_s,
                         **param_kw)
    cinv = input_preconditioner(train_data, mu, sd)
    batches = ensemble_batches(train_data.ensemble_index)
    subsets = [train_data.subset(b) for b in batches]

    monitor = val_data if val_data is not None and val_data.n_traj else train_data
    history = {"train_loss": [], "val_loss": [], "clamped_steps": []}
    initial_loss = lookahead_loss(params, train_data, cfg.P)
    best = (np.inf, params.theta.copy(), -1)
    lr = cfg.learning_rate
    term_counts = [max(n_loss_terms(sub, cfg.P), 1) for sub in subsets]
    for epoch in range(cfg.epochs):
        clamps = 0
        for sub, n_terms in zip(subsets, term_counts):
            loss, grad, info = gradient(params, sub, cfg.P)
            clamps += info["clamped_steps"]
            step = _precondition(grad, params.sizes, cinv)
            params.theta = params.theta - lr * step / n_terms
        lr *= cfg.lr_decay
        tr_loss = lookahead_loss(params, train_data, cfg.P)
        val_loss = lookahead_loss(params, monitor, cfg.P)
        history["train_loss"].append(tr_loss)
        history["val_loss"].append(val_loss)
        history["clamped_steps"].append(clamps)
        if val_loss < best[0]:
            best = (val_loss, params.theta.copy(), epoch)
        if not np.isfinite(tr_loss) or tr_loss > cfg.divergence_factor * max(initial_loss, 1e-300):
            raise NumericalError(
                f"training diverged at epoch {epoch}: loss {tr_loss:.3e} "
                f"vs initial {initial_loss:.3e}")
    params.theta = best[1]
    history["best_epoch"] = best[2]
    history["best_val_loss"] = best[0]
    history["initial_train_loss"] = initial_loss
    return params, history


def predict_dataset(params: FlowMapParams, data: CoordDataset) -> list:
    """Rollout from each trajectory's day-0 coords with its own winds."""
    out = []
    for i in range(data.n_traj):
        winds = data.winds[i, :-1, :]
        out.append(rollout(params, data.so2[i, 0], winds))
    return out


def params_to_dict(params: FlowMapParams) -> dict:
    return {
        "sizes": params.sizes.tolist(),
        "theta": params.theta.tolist(),
        "input_mean": params.input_mean.tolist(),
        "input_std": params.input_std.tolist(),
        "state_scale": params.state_scale.tolist(),
        "loss_scale_so2": params.loss_scale_so2.tolist(),
        "loss_scale_sulfate": params.loss_scale_sulfate.tolist(),
        "dt": params.dt,
        "molar_mass_so2": params.molar_mass_so2,
        "molar_mass_sulfate": params.molar_mass_sulfate,
        "initial_sulfate_ratio": params.initial_sulfate_ratio,
        "a_floor": params.a_floor,
        "monotone_center": params.monotone_center,
        "architecture": "forward-euler linear flow map, min(0,y) output",
    }


def params_from_dict(d: dict) -> FlowMapParams:
    return FlowMapParams(
        sizes=np.asarray(d["sizes"], dtype=np.int64),
        theta=np.asarray(d["theta"], dtype=float),
        input_mean=np.asarray(d["input_mean"], dtype=float),
        input_std=np.asarray(d["input_std"], dtype=float),
        state_scale=np.asarray(d["state_scale"], dtype=float),
        loss_scale_so2=np.asarray(d["loss_scale_so2"], dtype=float),
        loss_scale_sulfate=np.asarray(d["loss_scale_sulfate"], dtype=float),
        dt=float(d["dt"]),
        molar_mass_so2=float(d["molar_mass_so2"]),
        molar_mass_sulfate=float(d["molar_mass_sulfate"]),
        initial_sulfate_ratio=float(d["initial_sulfate_ratio"]),
        a_floor=float(d["a_floor"]),
        monotone_center=bool(d["monotone_center"]),
    )
