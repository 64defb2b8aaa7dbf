"""Dataset and artifact I/O.

Conventions: every array goes to disk as little-endian float64 raw binary
(C order) with a JSON sidecar recording shape, dimension names, and
units.  All JSON is written with sorted keys and a trailing newline so
reruns are byte-identical; nothing here embeds timestamps.
"""

import hashlib
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from plume.datagen import Grid, RawDataset, SimulationConfig, Trajectory
from plume.errors import DataError

FIELD_META = {
    "alpha_1d": (("day", "lon"), "g/deg"),
    "beta_1d": (("day", "lon"), "g/deg"),
    "rho_v": (("day", "lon"), "1"),
    "rho_b": (("day", "lon"), "1"),
    "alpha_3d": (("day", "lon", "lat", "alt"), "g/(deg deg km)"),
    "omega": (("day", "lon", "lat", "alt"), "deg/day"),
}


def dump_json(obj, path):
    """Canonical JSON dump: sorted keys, 2-space indent, newline at EOF."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing JSON file: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt JSON in {path}: {exc}") from exc


def write_array(arr, path, dims, units, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    meta = {
        "dtype": "<f8",
        "order": "C",
        "shape": list(arr.shape),
        "dims": list(dims),
        "units": units,
    }
    if extra:
        meta.update(extra)
    dump_json(meta, path.with_suffix(".json"))


def read_array(path):
    path = Path(path)
    meta = load_json(path.with_suffix(".json"))
    if not path.exists():
        raise DataError(f"missing binary file: {path}")
    data = np.fromfile(path, dtype="<f8")
    shape = tuple(meta["shape"])
    if data.size != int(np.prod(shape)):
        raise DataError(f"{path}: size {data.size} does not match shape {shape}")
    return data.reshape(shape), meta


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def hash_obj(obj) -> str:
    return sha256_text(json.dumps(obj, sort_keys=True))


def write_csv(path, header, rows, fmt="%.17g"):
    """Deterministic CSV: floats via repr-faithful %.17g, fixed row order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, float):
                    cells.append(fmt % v)
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing CSV file: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, rows


class atomic_dir:
    """Write stage outputs into a temp dir, rename into place on success."""

    def __init__(self, target):
        self.target = Path(target)

    def __enter__(self):
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(
            prefix=self.target.name + ".tmp.", dir=self.target.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        import shutil

        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.target.exists():
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)
        return False


def write_campaign(ds: RawDataset, out_dir):
    """Write the dataset directory: one binary per field per trajectory."""
    out_dir = Path(out_dir)
    entries = []
    for tr in ds.trajectories:
        sub = out_dir / "trajectories" / tr.tid
        extra = {
            "ensemble_index": tr.ensemble_index,
            "ensemble_seed": tr.ensemble_seed,
            "mass_tg": tr.mass_tg,
            "split": tr.split,
        }
        for name, (dims, units) in FIELD_META.items():
            write_array(getattr(tr, name), sub / f"{name}.bin", dims, units,
                        extra=extra)
        entries.append({
            "id": tr.tid,
            "dir": str(Path("trajectories") / tr.tid),
            **extra,
        })
    manifest = {
        "config": asdict(ds.config),
        "grid": {
            "lons": ds.grid.lons.tolist(),
            "lats": ds.grid.lats.tolist(),
            "alts": ds.grid.alts.tolist(),
        },
        "trajectories": entries,
    }
    dump_json(manifest, out_dir / "campaign.json")


def _config_from_dict(d) -> SimulationConfig:
    d = dict(d)
    for key in ("injection_masses_tg", "test_masses_tg", "ensemble_seeds"):
        if key in d:
            d[key] = tuple(d[key])
    return SimulationConfig(**d)


def load_campaign(data_dir) -> RawDataset:
    data_dir = Path(data_dir)
    manifest = load_json(data_dir / "campaign.json")
    cfg = _config_from_dict(manifest["config"])
    grid = Grid(np.asarray(manifest["grid"]["lons"]),
                np.asarray(manifest["grid"]["lats"]),
                np.asarray(manifest["grid"]["alts"]))
    ds = RawDataset(cfg, grid)
    for entry in manifest["trajectories"]:
        sub = data_dir / entry["dir"]
        fields = {}
        for name in FIELD_META:
            arr, _ = read_array(sub / f"{name}.bin")
            fields[name] = arr
        ds.trajectories.append(Trajectory(
            ensemble_index=entry["ensemble_index"],
            ensemble_seed=entry["ensemble_seed"],
            mass_tg=entry["mass_tg"],
            split=entry["split"],
            **fields,
        ))
    return ds
