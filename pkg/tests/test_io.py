import math

import numpy as np
import pytest

from lsvgroup import io
from lsvgroup.dynamics import MapParams
from lsvgroup.ensemble import simulate
from lsvgroup.groups import CocycleSpec, golden_angle
from lsvgroup.inducing import build_return_partition
from lsvgroup.observables import ObservableSpec


@pytest.fixture(scope="module")
def ens():
    return simulate(MapParams(0.3), CocycleSpec.so2(golden_angle(), 0.5),
                    ObservableSpec("trigonometric", [1.0, 0.0], [0.0, 1.0]), [10, 100, 1000], 7,
                    seed=4, path_n=100, path_stride=10)


def test_binary_round_trip(ens, tmp_path):
    p = io.write_ensemble_binary(tmp_path / "e.lsve", ens)
    back = io.read_ensemble_binary(p)
    for name in ("grid", "phi", "laps", "path", "path_max", "status", "stream_ids", "x0"):
        a, b = getattr(ens, name), getattr(back, name)
        assert a.shape == b.shape and np.array_equal(a, b), name
    assert back.seed == ens.seed and back.path_stride == 10
    # writing again is byte-identical
    q = io.write_ensemble_binary(tmp_path / "f.lsve", back)
    assert p.read_bytes() == q.read_bytes()


def test_binary_errors(ens, tmp_path):
    raw = bytearray(io.write_ensemble_binary(tmp_path / "e.lsve", ens).read_bytes())
    bad = raw.copy()
    bad[-40] ^= 1
    (tmp_path / "bad.lsve").write_bytes(bad)
    with pytest.raises(io.ChecksumError):
        io.read_ensemble_binary(tmp_path / "bad.lsve")
    ver = raw.copy()
    ver[4] = 9
    (tmp_path / "ver.lsve").write_bytes(ver)
    with pytest.raises(io.VersionMismatch):
        io.read_ensemble_binary(tmp_path / "ver.lsve")
    (tmp_path / "junk.lsve").write_bytes(b"nope" * 20)
    with pytest.raises(io.SerializationError):
        io.read_ensemble_binary(tmp_path / "junk.lsve")


def test_ensemble_csv_round_trip(ens, tmp_path):
    back = io.read_ensemble_csv(io.write_ensemble_csv(tmp_path / "e.csv", ens))
    assert np.array_equal(back["phi"], ens.phi)
    assert np.array_equal(back["grid"], ens.grid)
    assert np.array_equal(back["traj_id"], ens.stream_ids)
    (tmp_path / "h.csv").write_text("a,b\n1,2\n")
    with pytest.raises(io.SerializationError):
        io.read_ensemble_csv(tmp_path / "h.csv")


def test_partition_csv_gamma0(tmp_path):
    part = build_return_partition(MapParams(0.0), 4, estimate=False)
    back = io.read_partition_csv(io.write_partition_csv(tmp_path / "p.csv", part))
    np.testing.assert_array_equal(back["n"], [1, 2, 3, 4])
    np.testing.assert_array_equal(back["left"], [0.75, 0.625, 0.5625, 0.53125])
    np.testing.assert_array_equal(back["right"], [1.0, 0.75, 0.625, 0.5625])
    np.testing.assert_array_equal(back["length"], [0.25, 0.125, 0.0625, 0.03125])
    assert np.all(np.isnan(back["mu_hat"]))


def test_json_conversion(tmp_path):
    obj = {"a": np.arange(3), "b": np.float64("nan"), "c": 1 + 2j, "d": np.bool_(True),
           "e": (np.int64(4), math.inf)}
    p = io.write_json(tmp_path / "r.json", obj)
    back = io.read_json(p)
    assert back == {"a": [0, 1, 2], "b": None, "c": {"re": 1.0, "im": 2.0}, "d": True,
                    "e": [4, None]}
    assert io.dumps_json({"z": 1, "a": 2}).index('"a"') < io.dumps_json({"z": 1, "a": 2}).index('"z"')
    m = io.write_meta(p, {"t": 1})
    assert m.name == "r.meta.json"


def test_float_round_trip_in_rows(tmp_path):
    vals = [0.1, 1 / 3, 5e-324, -1.7976931348623157e308]
    header, rows = io.read_rows_csv(io.write_rows_csv(tmp_path / "x.csv", ["v"], [[v] for v in vals]))
    assert [float(r[0]) for r in rows] == vals


def test_spectrum_and_density_csv(tmp_path):
    _, rows = io.read_rows_csv(io.write_spectrum_csv(tmp_path / "s.csv", [1.0, 0.5j]))
    assert float(rows[1][3]) == 0.5 and float(rows[1][4]) == pytest.approx(math.pi / 2)
    _, rows = io.read_rows_csv(io.write_density_csv(tmp_path / "d.csv", np.ones(4)))
    assert [float(r[1]) for r in rows] == [0.5, 0.625, 0.75, 0.875]
    assert float(rows[-1][2]) == 1.0
