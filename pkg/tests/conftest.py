"""Shared fixtures: a tiny fast campaign and the full default pipeline."""

import time

import numpy as np
import pytest

from plume import datagen, pipeline, storage
from plume.config import PipelineConfig, config_from_dict

TINY = {
    "seed": 11,
    "datagen": {
        "n_lon": 72, "n_lat": 5, "n_alt": 5, "n_days": 6,
        "initial_sigma_deg": 14.0,
        "injection_masses_tg": [3.0, 10.0], "test_masses_tg": [7.0],
        "ensemble_seeds": [501, 502, 503, 504],
        "n_train_ensembles": 2, "n_validation_ensembles": 1,
        "n_test_ensembles": 1,
    },
    "flowmap": {"epochs": 400},
    "inversion": {"n_obs": 36, "n_starts": 2, "max_iterations": 150,
                  "posterior_samples": 16, "contraction_days": 2},
    "diagnostics": {"n_samples": 40, "depths": [0, 2], "widths": [7],
                    "networks_per_cell": 2, "study_epochs": 150,
                    "candidate_ranks": [2, 4], "rank_seeds": 1,
                    "rank_epochs": 200},
}


def tiny_config() -> PipelineConfig:
    return config_from_dict(TINY)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_ws(tmp_path_factory, tiny_cfg):
    ws = tmp_path_factory.mktemp("tiny_ws")
    pipeline.run_all(tiny_cfg, ws)
    return ws


@pytest.fixture(scope="session")
def small_campaign():
    """In-memory campaign smaller than the default but kinetically alike."""
    cfg = datagen.SimulationConfig(
        n_lon=180, n_lat=5, n_alt=5, n_days=8,
        injection_masses_tg=(3.0, 8.0, 15.0), test_masses_tg=(10.0,),
        ensemble_seeds=(21, 22, 23, 24, 25),
        n_train_ensembles=3, n_validation_ensembles=1, n_test_ensembles=1)
    return datagen.build_campaign(cfg)


@pytest.fixture(scope="session")
def campaign_ws(tmp_path_factory):
    """Default-config end-to-end pipeline run (the acceptance workspace)."""
    ws = tmp_path_factory.mktemp("campaign_ws")
    cfg = PipelineConfig()
    t0 = time.monotonic()
    pipeline.run_all(cfg, ws)
    elapsed = time.monotonic() - t0
    return {"ws": ws, "cfg": cfg, "elapsed_s": elapsed}


@pytest.fixture(scope="session")
def campaign_products(campaign_ws):
    """Loaded artifacts of the default pipeline run."""
    ws = campaign_ws["ws"]
    cfg = campaign_ws["cfg"]
    ds = storage.load_campaign(ws / "data")
    fits = pipeline.load_fits(ws / "fits")
    basis, wind_coords, wind_meta = pipeline.load_wind(ws / "wind")
    params, am, model_payload = pipeline.load_model(ws / "model" / "model.json")
    sets = pipeline.build_coord_datasets(ds, fits, wind_coords, cfg.wind.rank)
    like, prior, op, noise_meta = pipeline.load_noise(ws / "noise")
    wind_ens, _ = storage.read_array(ws / "noise" / "wind_ensemble.bin")
    return {
        "ws": ws, "cfg": cfg, "ds": ds, "fits": fits, "basis": basis,
        "wind_coords": wind_coords, "params": params, "aod": am,
        "model_payload": model_payload, "sets": sets, "like": like,
        "prior": prior, "op": op, "wind_ensemble": wind_ens,
        "elapsed_s": campaign_ws["elapsed_s"],
    }


def rng(seed=0):
    return np.random.default_rng(seed)
