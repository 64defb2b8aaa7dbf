"""Artifact I/O: binaries, sidecars, CSV, atomic writes."""

import numpy as np
import pytest

from plume import storage
from plume.errors import DataError


def test_array_round_trip(tmp_path):
    arr = np.arange(24.0).reshape(2, 3, 4) * np.pi
    storage.write_array(arr, tmp_path / "x.bin", ("a", "b", "c"), "g",
                        extra={"note": 1})
    back, meta = storage.read_array(tmp_path / "x.bin")
    assert (back == arr).all()
    assert meta["dims"] == ["a", "b", "c"]
    assert meta["units"] == "g"
    assert meta["note"] == 1


def test_array_shape_mismatch(tmp_path):
    arr = np.arange(6.0)
    storage.write_array(arr, tmp_path / "x.bin", ("n",), "1")
    (tmp_path / "x.bin").write_bytes(b"\x00" * 8)
    with pytest.raises(DataError):
        storage.read_array(tmp_path / "x.bin")


def test_json_corrupt_names_file(tmp_path):
    bad = tmp_path / "meta.json"
    bad.write_text("{not json")
    with pytest.raises(DataError) as err:
        storage.load_json(bad)
    assert "meta.json" in str(err.value)


def test_json_deterministic_bytes(tmp_path):
    obj = {"b": [1.5, 2.25], "a": {"y": 1e-7, "x": "s"}}
    storage.dump_json(obj, tmp_path / "a.json")
    first = (tmp_path / "a.json").read_bytes()
    storage.dump_json(obj, tmp_path / "a.json")
    assert (tmp_path / "a.json").read_bytes() == first


def test_csv_round_trip(tmp_path):
    rows = [("t1", 0, 0.1 + 0.2), ("t2", 1, 1e-17)]
    storage.write_csv(tmp_path / "r.csv", ["tid", "day", "v"], rows)
    header, back = storage.read_csv(tmp_path / "r.csv")
    assert header == ["tid", "day", "v"]
    assert float(back[0][2]) == 0.1 + 0.2
    assert float(back[1][2]) == 1e-17


def test_atomic_dir(tmp_path):
    target = tmp_path / "stage"
    with storage.atomic_dir(target) as tmp:
        (tmp / "f.txt").write_text("ok")
    assert (target / "f.txt").read_text() == "ok"
    # failure leaves the old output in place
    with pytest.raises(RuntimeError):
        with storage.atomic_dir(target) as tmp:
            (tmp / "f.txt").write_text("new")
            raise RuntimeError("boom")
    assert (target / "f.txt").read_text() == "ok"


def test_campaign_round_trip(tmp_path, small_campaign):
    storage.write_campaign(small_campaign, tmp_path / "data")
    back = storage.load_campaign(tmp_path / "data")
    assert len(back.trajectories) == len(small_campaign.trajectories)
    for a, b in zip(small_campaign.trajectories, back.trajectories):
        assert a.tid == b.tid
        assert a.split == b.split
        assert (a.alpha_1d == b.alpha_1d).all()
        assert (a.omega == b.omega).all()
