"""Stage implementations and the manifest-driven orchestrator.

Each stage reads upstream artifact directories and writes one output
directory.  run_stage wraps a stage with atomic output (temp dir +
rename) and a manifest recording the config hash and input-manifest
hashes; rerunning with unchanged config and inputs is a no-op.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from math import pi, sqrt
from pathlib import Path

import numpy as np

from plume import __version__, aodmap, datagen, diagnostics, flowmap, inversion, rbf, storage, windreduce
from plume.config import PipelineConfig
from plume.errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

FIELD_SOURCES = {"so2": "alpha_1d", "sulfate": "beta_1d", "aod": "rho_v"}


def parallel_map(fn, items, jobs: int = 1):
    """Order-preserving map; results identical for any jobs count."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- stages

def stage_gen_data(cfg: PipelineConfig, out_dir, jobs: int = 1):
    """Generate the synthetic campaign and write the dataset directory.

    Ensembles are pure functions of (config, seed) and generate in
    parallel; assembly order is fixed, so any jobs count reproduces the
    same bytes."""
    sim = cfg.datagen
    datagen.check_stability(sim)
    need = (sim.n_train_ensembles + sim.n_validation_ensembles
            + sim.n_test_ensembles)
    seeds = tuple(sim.ensemble_seeds)
    if len(seeds) < need:
        raise ConfigurationError(
            f"{need} ensemble seeds required for the configured splits, "
            f"got {len(seeds)}")
    plan = []
    idx = 0
    for _ in range(sim.n_train_ensembles):
        idx += 1
        plan.append((seeds[idx - 1], idx, sim.injection_masses_tg,
                     datagen.SPLIT_TRAIN))
    for _ in range(sim.n_validation_ensembles):
        idx += 1
        plan.append((seeds[idx - 1], idx, sim.injection_masses_tg,
                     datagen.SPLIT_VALIDATION))
    for _ in range(sim.n_test_ensembles):
        idx += 1
        plan.append((seeds[idx - 1], idx, sim.test_masses_tg,
                     datagen.SPLIT_TEST))
    groups = parallel_map(
        lambda item: datagen.generate_ensemble(sim, item[0], item[1],
                                               item[2], item[3]),
        plan, jobs)
    ds = datagen.RawDataset(sim, datagen.Grid.from_config(sim))
    for group in groups:
        ds.trajectories.extend(group)
    storage.write_campaign(ds, out_dir)
    return {"n_trajectories": len(ds.trajectories)}


def _fit_options(cfg: PipelineConfig) -> rbf.FitOptions:
    return rbf.FitOptions(a_min=cfg.rbf.a_min, a_max=cfg.rbf.a_max,
                          tol=cfg.rbf.tol, max_outer=cfg.rbf.max_outer)


def stage_fit_rbf(cfg: PipelineConfig, data_dir, out_dir, jobs: int = 1):
    """Fit RBF series for the SO2, sulfate, and AOD fields of every
    trajectory; one CSV row per (trajectory, field, day, basis)."""
    ds = storage.load_campaign(data_dir)
    lons = ds.grid.lons
    options = _fit_options(cfg)

    def fit_one(tr):
        out = {}
        for field, source in FIELD_SOURCES.items():
            out[field] = rbf.fit_timeseries(getattr(tr, source), lons,
                                            n_rbf=cfg.rbf.n_rbf,
                                            options=options)
        return out

    all_fits = parallel_map(fit_one, ds.trajectories, jobs)
    rows = []
    for tr, fits in zip(ds.trajectories, all_fits):
        for field in FIELD_SOURCES:
            for day, res in enumerate(fits[field]):
                c = res.coords
                for l in range(c.n_rbf):
                    rows.append((tr.tid, field, day, l,
                                 float(c.centers[l]),
                                 float(c.wrapped_centers()[l]),
                                 float(c.shapes[l]), float(c.coeffs[l]),
                                 float(res.residual),
                                 int(c.unidentifiable)))
    out_dir = Path(out_dir)
    storage.write_csv(out_dir / "rbf_fits.csv",
                      ["tid", "field", "day", "l", "x", "x_mod", "a", "c",
                       "residual", "unidentifiable"], rows)
    storage.dump_json({"n_rbf": cfg.rbf.n_rbf,
                       "fields": sorted(FIELD_SOURCES),
                       "sources": FIELD_SOURCES,
                       "options": asdict(options)},
                      out_dir / "rbf_fits.json")
    return {"n_rows": len(rows)}


def load_fits(fits_dir):
    """fits CSV -> {tid: {field: [RbfCoords per day]}} plus residuals."""
    header, rows = storage.read_csv(Path(fits_dir) / "rbf_fits.csv")
    col = {name: i for i, name in enumerate(header)}
    acc = {}
    for r in rows:
        tid, field = r[col["tid"]], r[col["field"]]
        day, l = int(r[col["day"]]), int(r[col["l"]])
        acc.setdefault(tid, {}).setdefault(field, {}).setdefault(day, {})[l] = (
            float(r[col["x"]]), float(r[col["a"]]), float(r[col["c"]]),
            float(r[col["residual"]]), int(r[col["unidentifiable"]]))
    fits = {}
    for tid, by_field in acc.items():
        fits[tid] = {}
        for field, by_day in by_field.items():
            series = []
            for day in sorted(by_day):
                entries = by_day[day]
                xs = [entries[l][0] for l in sorted(entries)]
                aa = [entries[l][1] for l in sorted(entries)]
                cc = [entries[l][2] for l in sorted(entries)]
                coords = rbf.RbfCoords(xs, aa, cc, day=day,
                                       unidentifiable=bool(entries[0][4]))
                series.append(coords)
            fits[tid][field] = series
    return fits


def stage_reduce_wind(cfg: PipelineConfig, data_dir, fits_dir, out_dir,
                      jobs: int = 1):
    """Localized KDE + PCA wind reduction; coords stored at stored_rank."""
    ds = storage.load_campaign(data_dir)
    fits = load_fits(fits_dir)
    so2_fits = {tid: f["so2"] for tid, f in fits.items()}
    wred = windreduce.reduce_campaign(
        ds, so2_fits, tau=cfg.wind.tau_g, rank=cfg.wind.rank,
        n_grid=cfg.wind.grid_points, bandwidth=cfg.wind.bandwidth,
        max_rank=cfg.wind.stored_rank)
    out_dir = Path(out_dir)
    basis = wred.basis
    storage.write_array(basis.grid, out_dir / "wind_grid.bin",
                        ("wind",), "deg/day")
    storage.write_array(basis.mean, out_dir / "pca_mean.bin",
                        ("wind",), "scaled density")
    storage.write_array(basis.components, out_dir / "pca_components.bin",
                        ("component", "wind"), "scaled density")
    storage.write_array(basis.singular_values, out_dir / "singular_values.bin",
                        ("component",), "1")
    stored = cfg.wind.stored_rank
    rows = []
    for tr in ds.trajectories:
        arr = wred.coords[tr.tid]
        for day in range(arr.shape[0]):
            for l in range(arr.shape[1]):
                rows.append((tr.tid, day, l,
                             *[float(v) for v in arr[day, l, :stored]]))
    storage.write_csv(out_dir / "wind_coords.csv",
                      ["tid", "day", "l"] + [f"w_{i+1}" for i in range(stored)],
                      rows)
    storage.dump_json({"rank": cfg.wind.rank, "stored_rank": stored,
                       "tau_g": cfg.wind.tau_g,
                       "grid_points": cfg.wind.grid_points,
                       "bandwidth": cfg.wind.bandwidth,
                       "scree": basis.scree_summary()},
                      out_dir / "pca.json")
    return {"n_pdfs": len(rows)}


def load_wind(wind_dir):
    """Wind artifacts -> (PcaBasis, {tid: (days, nrbf, stored_rank)}, meta)."""
    wind_dir = Path(wind_dir)
    meta = storage.load_json(wind_dir / "pca.json")
    grid, _ = storage.read_array(wind_dir / "wind_grid.bin")
    mean, _ = storage.read_array(wind_dir / "pca_mean.bin")
    comps, _ = storage.read_array(wind_dir / "pca_components.bin")
    sv, _ = storage.read_array(wind_dir / "singular_values.bin")
    basis = windreduce.PcaBasis(grid=grid, mean=mean, components=comps,
                                singular_values=sv, rank=int(meta["rank"]))
    header, rows = storage.read_csv(wind_dir / "wind_coords.csv")
    stored = int(meta["stored_rank"])
    acc = {}
    for r in rows:
        tid, day, l = r[0], int(r[1]), int(r[2])
        acc.setdefault(tid, {}).setdefault(day, {})[l] = [float(v) for v in r[3:3 + stored]]
    coords = {}
    for tid, by_day in acc.items():
        days = sorted(by_day)
        nrbf = len(by_day[days[0]])
        arr = np.empty((len(days), nrbf, stored))
        for d in days:
            for l in range(nrbf):
                arr[d, l] = by_day[d][l]
        coords[tid] = arr
    return basis, coords, meta


def build_coord_datasets(ds, fits, wind_coords, rank: int):
    """Per-split CoordDatasets in campaign order; centers stay unwrapped."""
    out = {}
    for split in ("train", "validation", "test"):
        trs = ds.split(split)
        if not trs:
            continue
        so2 = np.stack([np.stack([c.as_vector() for c in fits[t.tid]["so2"]])
                        for t in trs])
        sul = np.stack([np.stack([c.as_vector() for c in fits[t.tid]["sulfate"]])
                        for t in trs])
        winds = np.stack([
            wind_coords[t.tid][:, :, :rank].reshape(wind_coords[t.tid].shape[0], -1)
            for t in trs])
        out[split] = flowmap.CoordDataset(
            so2, sul, winds,
            np.array([t.ensemble_index for t in trs]),
            [t.tid for t in trs])
    return out


def _training_config(cfg: PipelineConfig, seed: int,
                     rank_override=None) -> flowmap.TrainingConfig:
    fmc = cfg.flowmap
    return flowmap.TrainingConfig(
        P=fmc.P, epochs=fmc.epochs, learning_rate=fmc.learning_rate,
        lr_decay=fmc.lr_decay, seed=seed, hidden_layers=fmc.hidden_layers,
        width=fmc.width)


def _param_kwargs(cfg: PipelineConfig) -> dict:
    fmc = cfg.flowmap
    return {
        "dt": cfg.datagen.dt_days,
        "molar_mass_so2": fmc.molar_mass_so2,
        "molar_mass_sulfate": fmc.molar_mass_sulfate,
        "initial_sulfate_ratio": fmc.initial_sulfate_ratio,
        "a_floor": cfg.rbf.a_min,
        "monotone_center": fmc.monotone_center,
    }


def stage_train(cfg: PipelineConfig, data_dir, fits_dir, wind_dir, out_dir,
                jobs: int = 1, filename: str = "flowmap.json"):
    """Train the flow map on the training split; report validation error."""
    ds = storage.load_campaign(data_dir)
    fits = load_fits(fits_dir)
    _, wind_coords, _ = load_wind(wind_dir)
    sets = build_coord_datasets(ds, fits, wind_coords, cfg.wind.rank)
    if "train" not in sets:
        raise DataError("no training split in the dataset")
    tc = _training_config(cfg, seed=cfg.seed)
    params, history = flowmap.train(sets["train"], sets.get("validation"),
                                    tc, **_param_kwargs(cfg))
    val_err = None
    if "validation" in sets:
        vtr = ds.split("validation")
        val_err = diagnostics.validation_field_error(
            params, sets["validation"],
            np.stack([t.alpha_1d for t in vtr]),
            np.stack([t.beta_1d for t in vtr]), ds.grid.lons)
    payload = {
        "params": flowmap.params_to_dict(params),
        "training": {
            "config": asdict(tc),
            "best_epoch": history["best_epoch"],
            "best_val_loss": history["best_val_loss"],
            "initial_train_loss": history["initial_train_loss"],
            "final_train_loss": history["train_loss"][-1],
            "train_loss": history["train_loss"],
            "val_loss": history["val_loss"],
            "clamped_steps": history["clamped_steps"],
        },
        "validation_field_rel_l2": val_err,
        "wind_rank": cfg.wind.rank,
    }
    storage.dump_json(payload, Path(out_dir) / filename)
    return {"validation_field_rel_l2": val_err}


def stage_fit_aod(cfg: PipelineConfig, data_dir, fits_dir, flowmap_path,
                  out_dir, jobs: int = 1, filename: str = "model.json"):
    """OLS sulfate-to-AOD coordinate map, folded into the model file."""
    ds = storage.load_campaign(data_dir)
    fits = load_fits(fits_dir)
    train = ds.split("train")
    s = np.stack([c.as_vector() for t in train for c in fits[t.tid]["sulfate"]])
    q = np.stack([c.as_vector() for t in train for c in fits[t.tid]["aod"]])
    am = aodmap.fit_aod_map(s, q)
    flowmap_path = Path(flowmap_path)
    if flowmap_path.is_dir():
        flowmap_path = flowmap_path / "flowmap.json"
    flow_payload = storage.load_json(flowmap_path)
    payload = {
        "flowmap": flow_payload["params"],
        "aod_map": aodmap.aod_map_to_dict(am),
        "wind_rank": flow_payload["wind_rank"],
        "validation_field_rel_l2": flow_payload["validation_field_rel_l2"],
    }
    storage.dump_json(payload, Path(out_dir) / filename)
    return {"aod_r2": am.r2.tolist()}


def load_model(model_path):
    payload = storage.load_json(model_path)
    params = flowmap.params_from_dict(payload["flowmap"])
    am = aodmap.aod_map_from_dict(payload["aod_map"])
    return params, am, payload


def build_prior(cfg: PipelineConfig) -> inversion.Prior:
    """Wide Gaussian prior in transformed coordinates.

    The mean is the exact RBF representation of a prior_mass_tg bump at
    the volcano longitude with the generator's initial width (for an
    exactly representable bump the fit recovers these values in closed
    form: center, shape 1/(sigma sqrt 2), mass coordinate M/sqrt(pi)).
    """
    sim, ic = cfg.datagen, cfg.inversion
    m_bar = ic.prior_mass_tg * datagen.GRAMS_PER_TG / sqrt(pi)
    mean_z = np.array([sim.volcano_lon_deg,
                       1.0 / (sim.initial_sigma_deg * sqrt(2.0)), m_bar])
    cov = np.diag([ic.prior_center_std_deg ** 2, ic.prior_shape_std ** 2,
                   (ic.prior_mass_rel_std * m_bar) ** 2])
    return inversion.Prior(mean_z=mean_z, cov=cov)


def observation_operator(cfg: PipelineConfig) -> inversion.ObservationOperator:
    return inversion.default_observation_operator(
        cfg.inversion.n_obs, cfg.datagen.n_days - 1)


def _wind_ensemble(ds, wind_coords, rank: int) -> np.ndarray:
    train = ds.split("train")
    return np.stack([
        wind_coords[t.tid][:-1, :, :rank].reshape(-1, rank)
        for t in train])


def stage_build_noise(cfg: PipelineConfig, data_dir, fits_dir, wind_dir,
                      model_path, out_dir, jobs: int = 1):
    """Background/BAE statistics plus synthesized test observations."""
    ds = storage.load_campaign(data_dir)
    _, wind_coords, _ = load_wind(wind_dir)
    params, am, _ = load_model(Path(model_path))
    op = observation_operator(cfg)
    lons = ds.grid.lons
    wind_ens = _wind_ensemble(ds, wind_coords, cfg.wind.rank)
    model = inversion.ForwardModel(flow=params, aod=am, op=op,
                                   wind_ensemble=wind_ens)
    prior = build_prior(cfg)
    train = ds.split("train")
    bg = np.stack([
        np.concatenate([inversion.sample_at_longitudes(t.rho_b[day], lons,
                                                       op.longitudes)
                        for day in op.days])
        for t in train])
    mu_nu, sigma_nu = inversion.estimate_background(bg)
    mu_bae, sigma_bae = inversion.estimate_bae(
        model, prior, estimator=cfg.inversion.bae_estimator,
        n_prior_samples=cfg.inversion.bae_prior_samples, seed=cfg.seed)
    out_dir = Path(out_dir)
    storage.write_array(wind_ens, out_dir / "wind_ensemble.bin",
                        ("sample", "step", "mode"), "1")
    storage.write_array(mu_nu, out_dir / "mu_nu.bin", ("obs",), "1")
    storage.write_array(sigma_nu, out_dir / "sigma_nu.bin", ("obs", "obs"), "1")
    storage.write_array(mu_bae, out_dir / "mu_bae.bin", ("obs",), "1")
    storage.write_array(sigma_bae, out_dir / "sigma_bae.bin", ("obs", "obs"), "1")
    storage.dump_json({
        "sigma_noise": cfg.inversion.sigma_noise,
        "bae_estimator": cfg.inversion.bae_estimator,
        "prior": {"mean_z": prior.mean_z.tolist(), "cov": prior.cov.tolist()},
        "observation": {"longitudes": op.longitudes.tolist(),
                        "days": op.days.tolist()},
        "arrays": {"mu_nu": "mu_nu.bin", "sigma_nu": "sigma_nu.bin",
                   "mu_bae": "mu_bae.bin", "sigma_bae": "sigma_bae.bin"},
    }, out_dir / "noise.json")
    # synthesized observations per test trajectory
    for t in ds.split("test"):
        seed = cfg.seed * 1000 + t.ensemble_index
        d, noiseless = inversion.synthesize_observations(
            t, op, lons, sigma_obs=cfg.inversion.sigma_obs, seed=seed)
        storage.dump_json({
            "tid": t.tid,
            "ensemble_index": t.ensemble_index,
            "mass_tg": t.mass_tg,
            "sigma_obs": cfg.inversion.sigma_obs,
            "seed": seed,
            "longitudes": op.longitudes.tolist(),
            "days": op.days.tolist(),
            "d": d.tolist(),
            "noiseless": noiseless.tolist(),
            "truth": {"so2_day0": t.alpha_1d[0].tolist(),
                      "lons": lons.tolist()},
        }, out_dir / f"obs_{t.tid}.json")
    return {"n_obs_files": len(ds.split("test"))}


def load_noise(noise_dir):
    noise_dir = Path(noise_dir)
    meta = storage.load_json(noise_dir / "noise.json")
    arrays = {}
    for key, fname in meta["arrays"].items():
        arrays[key], _ = storage.read_array(noise_dir / fname)
    like = inversion.BaeLikelihood(
        mu_nu=arrays["mu_nu"], sigma_nu=arrays["sigma_nu"],
        sigma_noise=float(meta["sigma_noise"]),
        mu_bae=arrays["mu_bae"], sigma_bae=arrays["sigma_bae"])
    prior = inversion.Prior(mean_z=np.asarray(meta["prior"]["mean_z"]),
                            cov=np.asarray(meta["prior"]["cov"]))
    op = inversion.ObservationOperator(
        np.asarray(meta["observation"]["longitudes"]),
        np.asarray(meta["observation"]["days"]))
    return like, prior, op, meta


def _day_slice(op: inversion.ObservationOperator, n_days: int):
    return slice(0, op.n_obs * n_days)


def invert_observation(cfg: PipelineConfig, model_path, noise_dir, obs_path,
                       n_starts=None, seed=None) -> dict:
    """Full inversion for one observation file; returns the report dict."""
    params, am, _ = load_model(model_path)
    like, prior, op, noise_meta = load_noise(noise_dir)
    obs = storage.load_json(obs_path)
    d = np.asarray(obs["d"], dtype=float)
    if d.size != op.n_flat:
        raise DataError(
            f"observation vector length {d.size} does not match the noise "
            f"model's {op.n_flat}")
    # the wind ensemble travels with the noise dir inputs: rebuild from meta
    noise_dir = Path(noise_dir)
    wind_ens, _ = storage.read_array(noise_dir / "wind_ensemble.bin")
    model = inversion.ForwardModel(flow=params, aod=am, op=op,
                                   wind_ensemble=wind_ens)
    n_starts = cfg.inversion.n_starts if n_starts is None else int(n_starts)
    seed = (cfg.seed * 1000 + int(obs.get("ensemble_index", 0))
            if seed is None else int(seed))
    res = inversion.map_estimate(model, prior, like, d, n_starts=n_starts,
                                 seed=seed,
                                 maxiter=cfg.inversion.max_iterations)

    def grad_fn(z):
        return inversion.negative_log_posterior(model, prior, like, d, z,
                                                with_grad=True)[1]

    post = inversion.laplace(grad_fn, res.z_map)
    samples = post.sample(cfg.inversion.posterior_samples, seed=seed + 1)

    report = {
        "tid": obs.get("tid"),
        "map": {"z": res.z_map.tolist(), "r": res.r_map.tolist(),
                "objective": res.objective, "converged": res.converged},
        "starts": res.starts,
        "laplace": {"covariance": post.covariance.tolist(),
                    "hessian": post.hessian.tolist(),
                    "regularization_floor": post.regularization_floor,
                    "trace": float(np.trace(post.covariance))},
        "posterior_samples_z": samples.tolist(),
        "seed": seed,
    }

    if "truth" in obs:
        lons = np.asarray(obs["truth"]["lons"], dtype=float)
        truth_field = np.asarray(obs["truth"]["so2_day0"], dtype=float)
        decoded = rbf.eval_basis(rbf.RbfCoords.from_vector(res.r_map),
                                 rbf.PeriodicDomain(), lons)
        report["errors"] = {
            "decoded_rel_l2": diagnostics.relative_l2(decoded, truth_field),
            "mass_rel_err": abs(sqrt(pi) * res.z_map[2]
                                - truth_field.sum() * (lons[1] - lons[0]))
            / (truth_field.sum() * (lons[1] - lons[0])),
        }
        report["decoded_so2_day0"] = decoded.tolist()

    # posterior contraction: truncate the observations to the first days
    nd_short = int(cfg.inversion.contraction_days)
    if 0 < nd_short < op.days.size:
        sl = _day_slice(op, nd_short)
        op_short = inversion.ObservationOperator(op.longitudes,
                                                 op.days[:nd_short])
        like_short = inversion.BaeLikelihood(
            mu_nu=like.mu_nu[sl], sigma_nu=like.sigma_nu[sl, sl],
            sigma_noise=like.sigma_noise, mu_bae=like.mu_bae[sl],
            sigma_bae=like.sigma_bae[sl, sl])
        model_short = inversion.ForwardModel(flow=params, aod=am, op=op_short,
                                             wind_ensemble=wind_ens)
        res_short = inversion.map_estimate(model_short, prior, like_short,
                                           d[sl], n_starts=max(2, n_starts // 2),
                                           seed=seed + 2,
                                           maxiter=cfg.inversion.max_iterations)

        def grad_short(z):
            return inversion.negative_log_posterior(
                model_short, prior, like_short, d[sl], z, with_grad=True)[1]

        post_short = inversion.laplace(grad_short, res_short.z_map)
        report["contraction"] = {
            "days_full": int(op.days.size),
            "days_short": nd_short,
            "trace_full": float(np.trace(post.covariance)),
            "trace_short": float(np.trace(post_short.covariance)),
        }

    if cfg.inversion.ablation:
        n = d.size
        like_abl = inversion.BaeLikelihood(
            mu_nu=np.zeros(n), sigma_nu=np.zeros((n, n)),
            sigma_noise=like.sigma_noise,
            mu_bae=np.zeros(n), sigma_bae=np.zeros((n, n)))
        res_abl = inversion.map_estimate(model, prior, like_abl, d,
                                         n_starts=n_starts, seed=seed + 3,
                                         maxiter=cfg.inversion.max_iterations)
        abl = {"z": res_abl.z_map.tolist(),
               "objective": res_abl.objective}
        if "truth" in obs:
            decoded_abl = rbf.eval_basis(
                rbf.RbfCoords.from_vector(res_abl.r_map),
                rbf.PeriodicDomain(), lons)
            abl["decoded_rel_l2"] = diagnostics.relative_l2(
                decoded_abl, truth_field)
        report["ablation_noise_only"] = abl
    return report


def stage_invert(cfg: PipelineConfig, model_path, noise_dir, out_dir,
                 obs_paths=None, jobs: int = 1):
    noise_dir = Path(noise_dir)
    if obs_paths is None:
        obs_paths = sorted(noise_dir.glob("obs_*.json"))
    if not obs_paths:
        raise DataError(f"no observation files found in {noise_dir}")
    out_dir = Path(out_dir)
    reports = []
    for obs_path in obs_paths:
        rep = invert_observation(cfg, model_path, noise_dir, obs_path)
        name = Path(obs_path).stem.replace("obs_", "")
        storage.dump_json(rep, out_dir / f"report_{name}.json")
        reports.append(rep)
    return {"n_reports": len(reports)}


def stage_diagnose(cfg: PipelineConfig, data_dir, fits_dir, wind_dir,
                   model_path, out_dir, inversion_dir=None, jobs: int = 1,
                   what=("reaction-rates", "mahalanobis", "mass-loss",
                         "rank-study")):
    """Validation studies; each selected item writes its own artifacts."""
    ds = storage.load_campaign(data_dir)
    fits = load_fits(fits_dir)
    _, wind_coords, wind_meta = load_wind(wind_dir)
    sets = build_coord_datasets(ds, fits, wind_coords, cfg.wind.rank)
    out_dir = Path(out_dir)
    result = {}

    if "mass-loss" in what:
        rows = []
        for t in ds.split("train"):
            curve = diagnostics.mass_loss_curve(
                t.alpha_1d, t.beta_1d, ds.grid.dx,
                fits[t.tid]["so2"], fits[t.tid]["sulfate"],
                cfg.flowmap.molar_mass_so2, cfg.flowmap.molar_mass_sulfate)
            for day in range(len(curve["raw"])):
                rows.append((t.tid, day, float(curve["raw"][day]),
                             float(curve["rbf"][day])))
        storage.write_csv(out_dir / "mass_loss.csv",
                          ["tid", "day", "raw", "rbf"], rows)
        result["mass_loss_max_deficit"] = float(max(1.0 - r[3] for r in rows))

    if "mahalanobis" in what:
        train = ds.split("train")
        rank = cfg.wind.rank
        wtrain = np.stack([
            wind_coords[t.tid][:, :, :rank].reshape(-1) for t in train])
        entries = []
        for t in ds.split("test"):
            wtest = wind_coords[t.tid][:, :, :rank].reshape(-1)
            entry = {"tid": t.tid,
                     "distance": diagnostics.mahalanobis(wtrain, wtest)}
            if inversion_dir is not None:
                rep_path = Path(inversion_dir) / f"report_{t.tid}.json"
                if rep_path.exists():
                    rep = storage.load_json(rep_path)
                    entry["map_rel_l2"] = rep.get("errors", {}).get(
                        "decoded_rel_l2")
            entries.append(entry)
        maha = {
            "covariance_rank": diagnostics.covariance_rank(wtrain),
            "n_train": len(train),
            "dimension": int(wtrain.shape[1]),
            "tests": entries,
            "reference_large_scale": diagnostics.REFERENCE_MAHALANOBIS,
        }
        errs = [e.get("map_rel_l2") for e in entries]
        if len(entries) == 2 and all(e is not None for e in errs):
            d0, d1 = entries[0]["distance"], entries[1]["distance"]
            maha["distance_error_order_consistent"] = bool(
                (d0 < d1) == (errs[0] < errs[1]))
        storage.dump_json(maha, out_dir / "mahalanobis.json")
        result["mahalanobis"] = maha

    if "reaction-rates" in what:
        study = diagnostics.reaction_rate_study(
            sets["train"], sets["validation"],
            depths=cfg.diagnostics.depths, widths=cfg.diagnostics.widths,
            networks_per_cell=cfg.diagnostics.networks_per_cell,
            n_samples=cfg.diagnostics.n_samples,
            epochs=cfg.diagnostics.study_epochs, P=cfg.flowmap.P,
            seed=cfg.seed)
        rows = [(c["depth"], c["width"], c["best_mean_std"],
                 c["reference_large_scale_std"] if c["reference_large_scale_std"]
                 is not None else "")
                for c in study["cells"]]
        storage.write_csv(out_dir / "reaction_rate_table.csv",
                          ["hidden_layers", "width", "mean_rate_std",
                           "reference_large_scale_std"], rows)
        band_rows = []
        tb = study["training_band"]
        for step in range(len(tb["band_lo"])):
            band_rows.append(("training", step, tb["band_lo"][step],
                              tb["band_hi"][step]))
        for depth, info in sorted(study["best_by_depth"].items()):
            for step in range(len(info["band_lo"])):
                band_rows.append((f"depth_{depth}", step,
                                  info["band_lo"][step], info["band_hi"][step]))
        storage.write_csv(out_dir / "reaction_rate_bands.csv",
                          ["series", "step", "lo", "hi"], band_rows)
        storage.dump_json(study, out_dir / "reaction_rate_study.json")
        from plume.report import fig_reaction_bands

        fig_reaction_bands(study, out_dir / "reaction_rate_bands.svg")
        result["reaction_rates"] = {
            str(k): v["mean_std"] for k, v in study["best_by_depth"].items()}

    if "rank-study" in what:
        train_raw = ds.split("train")
        val_raw = ds.split("validation")
        raw_so2 = np.stack([t.alpha_1d for t in val_raw])
        raw_sul = np.stack([t.beta_1d for t in val_raw])
        lons = ds.grid.lons

        def train_eval(rank, seed):
            subsets = build_coord_datasets(ds, fits, wind_coords, rank)
            tc = _training_config(cfg, seed=cfg.seed * 100 + seed)
            tc.epochs = cfg.diagnostics.rank_epochs
            params, _ = flowmap.train(subsets["train"], subsets["validation"],
                                      tc, **_param_kwargs(cfg))
            return diagnostics.validation_field_error(
                params, subsets["validation"], raw_so2, raw_sul, lons)

        study = windreduce.rank_study(cfg.diagnostics.candidate_ranks,
                                      cfg.diagnostics.rank_seeds, train_eval)
        storage.write_csv(out_dir / "rank_study.csv",
                          ["rank", "seed", "val_error"],
                          [(r["rank"], r["seed"], r["val_error"])
                           for r in study["rows"]])
        storage.dump_json(study, out_dir / "rank_study.json")
        from plume.report import fig_rank_study

        fig_rank_study(study, out_dir / "rank_study.svg")
        result["rank_study_best"] = study["best_rank"]

    return result


# ------------------------------------------------------------- orchestrator

STAGE_ORDER = ["gen-data", "fit-rbf", "reduce-wind", "train", "fit-aod",
               "build-noise", "invert", "diagnose", "report"]

STAGE_DIRS = {
    "gen-data": "data",
    "fit-rbf": "fits",
    "reduce-wind": "wind",
    "train": "model_flow",
    "fit-aod": "model",
    "build-noise": "noise",
    "invert": "inversion",
    "diagnose": "diagnostics",
    "report": "report",
}

STAGE_INPUTS = {
    "gen-data": [],
    "fit-rbf": ["gen-data"],
    "reduce-wind": ["gen-data", "fit-rbf"],
    "train": ["gen-data", "fit-rbf", "reduce-wind"],
    "fit-aod": ["gen-data", "fit-rbf", "train"],
    "build-noise": ["gen-data", "fit-rbf", "reduce-wind", "fit-aod"],
    "invert": ["fit-aod", "build-noise"],
    "diagnose": ["gen-data", "fit-rbf", "reduce-wind", "fit-aod", "invert"],
    "report": ["gen-data", "fit-rbf", "reduce-wind", "fit-aod", "build-noise",
               "invert", "diagnose"],
}


def _run_stage_impl(name, cfg, ws, tmp, jobs):
    ws = Path(ws)
    data = ws / STAGE_DIRS["gen-data"]
    fits = ws / STAGE_DIRS["fit-rbf"]
    wind = ws / STAGE_DIRS["reduce-wind"]
    model = ws / STAGE_DIRS["fit-aod"] / "model.json"
    noise = ws / STAGE_DIRS["build-noise"]
    if name == "gen-data":
        return stage_gen_data(cfg, tmp, jobs)
    if name == "fit-rbf":
        return stage_fit_rbf(cfg, data, tmp, jobs)
    if name == "reduce-wind":
        return stage_reduce_wind(cfg, data, fits, tmp, jobs)
    if name == "train":
        return stage_train(cfg, data, fits, wind, tmp, jobs)
    if name == "fit-aod":
        return stage_fit_aod(cfg, data, fits, ws / STAGE_DIRS["train"], tmp, jobs)
    if name == "build-noise":
        return stage_build_noise(cfg, data, fits, wind, model, tmp, jobs)
    if name == "invert":
        return stage_invert(cfg, model, noise, tmp, jobs=jobs)
    if name == "diagnose":
        return stage_diagnose(cfg, data, fits, wind, model, tmp,
                              inversion_dir=ws / STAGE_DIRS["invert"],
                              jobs=jobs)
    if name == "report":
        from plume import report as report_mod

        return report_mod.stage_report(cfg, ws, tmp)
    raise ConfigurationError(f"unknown stage {name!r}")


def run_stage(name: str, cfg: PipelineConfig, workspace, force: bool = False,
              jobs: int | None = None) -> dict:
    """Run one stage with manifest-based idempotence."""
    if name not in STAGE_DIRS:
        raise ConfigurationError(f"unknown stage {name!r}")
    ws = Path(workspace)
    jobs = cfg.jobs if jobs is None else jobs
    out_dir = ws / STAGE_DIRS[name]
    cfg_dict = cfg.to_dict()
    cfg_dict.pop("jobs", None)      # parallelism must not change results
    config_hash = storage.hash_obj({"stage": name, "version": __version__,
                                    "config": cfg_dict})
    inputs = {}
    for upstream in STAGE_INPUTS[name]:
        man = ws / STAGE_DIRS[upstream] / "manifest.json"
        if not man.exists():
            raise DataError(
                f"stage {name!r} needs output of stage {upstream!r}; run "
                f"`plume {upstream}` first (missing {man})")
        inputs[upstream] = storage.sha256_file(man)
    man_path = out_dir / "manifest.json"
    if man_path.exists() and not force:
        old = storage.load_json(man_path)
        if old.get("config_hash") == config_hash and old.get("inputs") == inputs:
            logger.info("stage %s: manifest hit, skipping", name)
            return {"stage": name, "skipped": True}
        logger.warning("stage %s: config or inputs changed, rerunning", name)
    with storage.atomic_dir(out_dir) as tmp:
        summary = _run_stage_impl(name, cfg, ws, tmp, jobs)
        outputs = {}
        for f in sorted(Path(tmp).rglob("*")):
            if f.is_file():
                outputs[str(f.relative_to(tmp))] = storage.sha256_file(f)
        storage.dump_json({
            "stage": name,
            "version": __version__,
            "config_hash": config_hash,
            "inputs": inputs,
            "outputs": outputs,
            "summary": summary,
        }, Path(tmp) / "manifest.json")
    return {"stage": name, "skipped": False, "summary": summary}


def run_all(cfg: PipelineConfig, workspace, force: bool = False,
            jobs: int | None = None) -> list:
    return [run_stage(name, cfg, workspace, force=force, jobs=jobs)
            for name in STAGE_ORDER]
