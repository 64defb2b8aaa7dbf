"""Pipeline configuration: one JSON-compatible tree with embedded defaults.

Every stage reads its knobs from here; `plume config --dump` emits the
full default tree.  The PLUME_SEED environment variable overrides the
global seed at load time.
"""

import os
from dataclasses import asdict, dataclass, field, fields

from plume.datagen import SimulationConfig
from plume.errors import ConfigurationError
from plume.storage import dump_json, load_json


@dataclass
class RbfStageConfig:
    n_rbf: int = 1
    a_min: float = 1e-3
    a_max: float = 10.0
    tol: float = 1e-8
    max_outer: int = 500


@dataclass
class WindStageConfig:
    tau_g: float = 100.0
    rank: int = 4
    grid_points: int = 1000
    bandwidth: float | None = None     # None -> Silverman's rule
    stored_rank: int = 8               # coords kept on disk for rank studies


@dataclass
class FlowMapStageConfig:
    P: int = 3
    epochs: int = 2500
    learning_rate: float = 0.15
    lr_decay: float = 0.999
    hidden_layers: int = 0
    width: int = 0
    initial_sulfate_ratio: float = 0.0544
    molar_mass_so2: float = 64.066
    molar_mass_sulfate: float = 96.06
    monotone_center: bool = True


@dataclass
class InversionStageConfig:
    n_obs: int = 72
    sigma_noise: float = 0.01
    sigma_obs: float = 0.012
    n_starts: int = 8
    max_iterations: int = 400
    prior_mass_tg: float = 9.0
    prior_center_std_deg: float = 30.0
    prior_shape_std: float = 0.04
    prior_mass_rel_std: float = 0.6
    bae_estimator: str = "prior-mean"
    bae_prior_samples: int = 8
    ablation: bool = True
    contraction_days: int = 3
    posterior_samples: int = 64


@dataclass
class DiagnosticsStageConfig:
    n_samples: int = 1000
    depths: tuple = (0, 1, 2)
    widths: tuple = (7, 14, 21)
    networks_per_cell: int = 6
    study_epochs: int = 600
    candidate_ranks: tuple = (2, 4, 5, 7)
    rank_seeds: int = 5
    rank_epochs: int = 1200


@dataclass
class PipelineConfig:
    seed: int = 7
    jobs: int = 1
    datagen: SimulationConfig = field(default_factory=SimulationConfig)
    rbf: RbfStageConfig = field(default_factory=RbfStageConfig)
    wind: WindStageConfig = field(default_factory=WindStageConfig)
    flowmap: FlowMapStageConfig = field(default_factory=FlowMapStageConfig)
    inversion: InversionStageConfig = field(default_factory=InversionStageConfig)
    diagnostics: DiagnosticsStageConfig = field(default_factory=DiagnosticsStageConfig)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "datagen": SimulationConfig,
    "rbf": RbfStageConfig,
    "wind": WindStageConfig,
    "flowmap": FlowMapStageConfig,
    "inversion": InversionStageConfig,
    "diagnostics": DiagnosticsStageConfig,
}

_TUPLE_FIELDS = {
    "injection_masses_tg", "test_masses_tg", "ensemble_seeds",
    "depths", "widths", "candidate_ranks",
}


def _build_section(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(
            f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = tuple(value) if key in _TUPLE_FIELDS else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad {cls.__name__}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    sections = {}
    for name, cls in _SECTIONS.items():
        sections[name] = _build_section(cls, data.pop(name, {}))
    known = {"seed", "jobs"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
    return PipelineConfig(seed=int(data.get("seed", 7)),
                          jobs=int(data.get("jobs", 1)), **sections)


def apply_env_overrides(cfg: PipelineConfig) -> PipelineConfig:
    env_seed = os.environ.get("PLUME_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigurationError(f"PLUME_SEED={env_seed!r} is not an integer") from exc
    return cfg


def load_config(path=None) -> PipelineConfig:
    if path is None:
        cfg = PipelineConfig()
    else:
        cfg = config_from_dict(load_json(path))
    return apply_env_overrides(cfg)


def dump_config(cfg: PipelineConfig, path):
    dump_json(cfg.to_dict(), path)
