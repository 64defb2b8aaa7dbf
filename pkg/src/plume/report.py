"""Figure and summary emission for a completed pipeline workspace.

All figures are plain SVG from plume.svgplot; identical inputs produce
identical bytes.  Missing optional inputs skip their figure with a note
in the summary rather than failing the stage.
"""

from pathlib import Path

import numpy as np

from plume import aodmap, flowmap, inversion, pipeline, rbf, storage, svgplot, windreduce

GREY = "#9a9a9a"
DAY_COLORS = ["#1f6fb4", "#2ca02c", "#d95f02", "#d62728", "#9467bd",
              "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#555555"]


def _fig(title, xlabel, ylabel):
    return svgplot.Figure(title=title, xlabel=xlabel, ylabel=ylabel)


def fig_field_fit(tr, fits, lons, field, out_path):
    fig = _fig(f"{field} raw vs RBF fit ({tr.tid})", "longitude (deg)", field)
    raw = getattr(tr, pipeline.FIELD_SOURCES[field])
    dom = rbf.PeriodicDomain()
    for day in range(raw.shape[0]):
        fig.line(lons, raw[day], color="#111111", width=1.0, opacity=0.8)
        fit_vals = rbf.eval_basis(fits[day], dom, lons)
        fig.line(lons, fit_vals, color=DAY_COLORS[day % len(DAY_COLORS)],
                 width=1.2, dash="4,3")
    fig.save(out_path)


def fig_mass_loss(rows_by_tid, key, title, out_path):
    fig = _fig(title, "day", "S(t)/S(0)")
    for tid, rows in rows_by_tid.items():
        days = [r[0] for r in rows]
        vals = [r[1] if key == "raw" else r[2] for r in rows]
        fig.line(days, vals, color=GREY, width=1.0, opacity=0.7)
    fig.set_ylim(0.75, 1.05)
    fig.save(out_path)


def fig_wind_pdfs(ds, fits, wind_meta_dir, cfg, day, out_path):
    basis, _, _ = pipeline.load_wind(wind_meta_dir)
    fits_so2 = {tid: f["so2"] for tid, f in fits.items()}
    fig = _fig(f"plume-localized zonal wind PDFs, day {day}",
               "zonal wind (deg/day)", "density")
    for tr in ds.split("train"):
        samples, weights = windreduce.localize(
            tr.omega[day], tr.alpha_3d[day], fits_so2[tr.tid][day],
            cfg.wind.tau_g, ds.grid.lons)
        pdf = windreduce.weighted_kde(samples, weights[0], basis.grid,
                                      cfg.wind.bandwidth)
        fig.line(basis.grid, pdf.density, color=GREY, width=1.0, opacity=0.65)
    fig.save(out_path)


def fig_scree(basis, out_path):
    fig = _fig("wind PDF singular values", "index", "singular value")
    s = basis.singular_values
    n = min(20, s.size)
    fig.line(np.arange(1, n + 1), s[:n], color="#1f6fb4", width=2.0)
    fig.save(out_path)


def fig_components(basis, out_path):
    fig = _fig("leading wind PDF principal components", "zonal wind (deg/day)",
               "component")
    for i in range(min(basis.rank, 4)):
        fig.line(basis.grid, basis.components[i],
                 color=DAY_COLORS[i], width=1.5, label=f"PC {i+1}")
    fig.save(out_path)


def fig_validation_prediction(ds, sets, params, lons, field, out_path):
    fig = _fig(f"validation prediction, {field}", "longitude (deg)", field)
    data = sets["validation"]
    dom = rbf.PeriodicDomain()
    raw_attr = pipeline.FIELD_SOURCES[field]
    for i, tr in enumerate(ds.split("validation")):
        pred = flowmap.rollout(params, data.so2[i, 0], data.winds[i, :-1, :])
        coords = pred.so2 if field == "so2" else pred.sulfate
        raw = getattr(tr, raw_attr)
        for day in range(data.n_days):
            fig.line(lons, raw[day], color="#111111", width=0.8, opacity=0.6)
            vals = rbf.eval_basis(rbf.RbfCoords.from_vector(coords[day]),
                                  dom, lons)
            fig.line(lons, vals, color=DAY_COLORS[day % len(DAY_COLORS)],
                     width=1.1, dash="4,3")
    fig.save(out_path)


def fig_prior_samples(prior, lons, out_path, n=30, seed=0):
    fig = _fig("prior samples, initial SO2", "longitude (deg)", "SO2 (g/deg)")
    rng = np.random.default_rng(seed)
    dom = rbf.PeriodicDomain()
    for _ in range(n):
        z = prior.sample(rng)
        if z[1] <= 1e-3:
            continue
        r = flowmap.inverse_transform(z)
        fig.line(lons, rbf.eval_basis(rbf.RbfCoords.from_vector(r), dom, lons),
                 color=GREY, width=1.0, opacity=0.6)
    mean_field = rbf.eval_basis(
        rbf.RbfCoords.from_vector(flowmap.inverse_transform(prior.mean_z)),
        dom, lons)
    fig.line(lons, mean_field, color="#1f6fb4", width=2.0, label="prior mean")
    fig.save(out_path)


def fig_posterior(report, obs_meta, lons, out_path):
    fig = _fig(f"posterior, initial SO2 ({report['tid']})",
               "longitude (deg)", "SO2 (g/deg)")
    dom = rbf.PeriodicDomain()
    for z in report["posterior_samples_z"]:
        z = np.asarray(z)
        if z[1] <= 1e-3:
            continue
        r = flowmap.inverse_transform(z)
        fig.line(lons, rbf.eval_basis(rbf.RbfCoords.from_vector(r), dom, lons),
                 color=GREY, width=0.8, opacity=0.5)
    truth = np.asarray(obs_meta["truth"]["so2_day0"])
    fig.line(lons, truth, color="#d62728", width=2.0, dash="5,3", label="truth")
    map_field = rbf.eval_basis(
        rbf.RbfCoords.from_vector(np.asarray(report["map"]["r"])), dom, lons)
    fig.line(lons, map_field, color="#1f6fb4", width=2.0, label="MAP")
    fig.save(out_path)


def fig_prediction_fan(model, z_map, obs_meta, ds, species, day, out_path):
    """Grey curve per training wind sample at one day, truth overlaid."""
    lons = np.asarray(obs_meta["truth"]["lons"])
    dom = rbf.PeriodicDomain()
    zs, *_ = flowmap.batch_rollout_z(model.flow, z_map, model.wind_ensemble)
    fig = _fig(f"{species} prediction fan, day {day} ({obs_meta['tid']})",
               "longitude (deg)", species)
    p = model.flow
    ms0 = p.initial_sulfate_ratio * z_map[2]
    for i in range(zs.shape[0]):
        z = zs[i, day]
        if species == "so2":
            coords = flowmap.inverse_transform(z)
        else:
            msul = ms0 + p.kappa * (z_map[2] - z[2])
            s_raw = np.array([z[0], z[1], msul * z[1]])
            if species == "sulfate":
                coords = s_raw
            else:
                coords, _ = aodmap.apply_aod_map(model.aod, s_raw,
                                                 a_floor=p.a_floor)
        fig.line(lons, rbf.eval_basis(rbf.RbfCoords.from_vector(coords), dom, lons),
                 color=GREY, width=0.8, opacity=0.55)
    tr = next(t for t in ds.split("test") if t.tid == obs_meta["tid"])
    truth = {"so2": tr.alpha_1d, "sulfate": tr.beta_1d,
             "aod": tr.rho_v + tr.rho_b}[species][day]
    fig.line(lons, truth, color="#d62728", width=1.8, dash="5,3", label="test data")
    fig.save(out_path)


def fig_reaction_bands(study, out_path):
    fig = _fig("reaction-rate spread vs depth", "step", "rate")
    tb = study["training_band"]
    steps = np.arange(len(tb["band_lo"]))
    fig.band(steps, tb["band_lo"], tb["band_hi"], color="#555555",
             opacity=0.35, label="training data")
    for i, (depth, info) in enumerate(sorted(study["best_by_depth"].items())):
        fig.band(steps, info["band_lo"], info["band_hi"],
                 color=DAY_COLORS[i], opacity=0.25,
                 label=f"{depth} hidden layers")
    fig.save(out_path)


def fig_rank_study(study, out_path):
    fig = _fig("validation error vs wind rank", "wind rank",
               "mean validation rel l2")
    ranks = sorted(int(k) for k in study["mean_by_rank"])
    vals = [study["mean_by_rank"][str(r)] if str(r) in study["mean_by_rank"]
            else study["mean_by_rank"][r] for r in ranks]
    fig.line(ranks, vals, color="#1f6fb4", width=2.0)
    fig.save(out_path)


def stage_report(cfg, workspace, out_dir):
    ws = Path(workspace)
    out_dir = Path(out_dir)
    notes = []
    data_dir = ws / pipeline.STAGE_DIRS["gen-data"]
    fits_dir = ws / pipeline.STAGE_DIRS["fit-rbf"]
    wind_dir = ws / pipeline.STAGE_DIRS["reduce-wind"]
    model_path = ws / pipeline.STAGE_DIRS["fit-aod"] / "model.json"
    noise_dir = ws / pipeline.STAGE_DIRS["build-noise"]
    inv_dir = ws / pipeline.STAGE_DIRS["invert"]
    diag_dir = ws / pipeline.STAGE_DIRS["diagnose"]

    ds = storage.load_campaign(data_dir)
    lons = ds.grid.lons
    fits = pipeline.load_fits(fits_dir)
    params, am, model_payload = pipeline.load_model(model_path)
    basis, wind_coords, _ = pipeline.load_wind(wind_dir)
    sets = pipeline.build_coord_datasets(ds, fits, wind_coords, cfg.wind.rank)
    n_figures = 0

    val_tr = ds.split("validation")[0]
    fig_field_fit(val_tr, fits[val_tr.tid]["so2"], lons, "so2",
                  out_dir / "rbf_fit_so2.svg")
    fig_field_fit(val_tr, fits[val_tr.tid]["sulfate"], lons, "sulfate",
                  out_dir / "rbf_fit_sulfate.svg")
    n_figures += 2

    mass_csv = diag_dir / "mass_loss.csv"
    if mass_csv.exists():
        header, rows = storage.read_csv(mass_csv)
        by_tid = {}
        for r in rows:
            by_tid.setdefault(r[0], []).append(
                (int(r[1]), float(r[2]), float(r[3])))
        fig_mass_loss(by_tid, "raw", "total sulfur, raw fields",
                      out_dir / "mass_loss_raw.svg")
        fig_mass_loss(by_tid, "rbf", "total sulfur, RBF fits",
                      out_dir / "mass_loss_rbf.svg")
        n_figures += 2
    else:
        notes.append("mass_loss.csv missing; mass-loss figures skipped")

    for day in (1, 5, ds.config.n_days - 1):
        fig_wind_pdfs(ds, fits, wind_dir, cfg, day,
                      out_dir / f"wind_pdfs_day{day}.svg")
        n_figures += 1
    fig_scree(basis, out_dir / "wind_scree.svg")
    fig_components(basis, out_dir / "wind_pcs.svg")
    n_figures += 2

    for field in ("so2", "sulfate"):
        fig_validation_prediction(ds, sets, params, lons, field,
                                  out_dir / f"validation_prediction_{field}.svg")
        n_figures += 1

    like, prior, op, noise_meta = pipeline.load_noise(noise_dir)
    fig_prior_samples(prior, lons, out_dir / "prior_samples.svg",
                      seed=cfg.seed)
    n_figures += 1

    wind_ens, _ = storage.read_array(noise_dir / "wind_ensemble.bin")
    model = inversion.ForwardModel(flow=params, aod=am, op=op,
                                   wind_ensemble=wind_ens)
    summary_inversions = []
    for rep_path in sorted(inv_dir.glob("report_*.json")):
        rep = storage.load_json(rep_path)
        obs_path = noise_dir / f"obs_{rep['tid']}.json"
        if not obs_path.exists():
            notes.append(f"{obs_path.name} missing; posterior figure skipped")
            continue
        obs_meta = storage.load_json(obs_path)
        fig_posterior(rep, obs_meta, lons,
                      out_dir / f"posterior_{rep['tid']}.svg")
        n_figures += 1
        z_map = np.asarray(rep["map"]["z"])
        for species in ("so2", "sulfate", "aod"):
            for day in (1, 5, ds.config.n_days - 1):
                fig_prediction_fan(model, z_map, obs_meta, ds, species, day,
                                   out_dir / f"fan_{species}_day{day}_{rep['tid']}.svg")
                n_figures += 1
        summary_inversions.append({
            "tid": rep["tid"],
            "map_rel_l2": rep.get("errors", {}).get("decoded_rel_l2"),
            "objective": rep["map"]["objective"],
            "laplace_trace": rep["laplace"]["trace"],
            "contraction": rep.get("contraction"),
            "ablation_rel_l2": rep.get("ablation_noise_only", {}).get("decoded_rel_l2"),
        })

    study_path = diag_dir / "reaction_rate_study.json"
    if study_path.exists():
        fig_reaction_bands(storage.load_json(study_path),
                           out_dir / "reaction_rate_bands.svg")
        n_figures += 1
    rank_path = diag_dir / "rank_study.json"
    if rank_path.exists():
        fig_rank_study(storage.load_json(rank_path), out_dir / "rank_study.svg")
        n_figures += 1

    summary = {
        "n_figures": n_figures,
        "notes": notes,
        "validation_field_rel_l2": model_payload.get("validation_field_rel_l2"),
        "aod_map_r2": model_payload["aod_map"]["r2"],
        "wind_scree": basis.scree_summary()["ratio_5th_to_1st"],
        "inversions": summary_inversions,
    }
    storage.dump_json(summary, out_dir / "summary.json")
    lines = ["# Pipeline summary", ""]
    lines.append(f"- figures emitted: {n_figures}")
    lines.append(f"- flow map validation field rel l2: "
                 f"{summary['validation_field_rel_l2']}")
    for s in summary_inversions:
        lines.append(f"- {s['tid']}: MAP rel l2 = {s['map_rel_l2']}, "
                     f"laplace trace = {s['laplace_trace']:.4g}")
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n")
    return {"n_figures": n_figures}
