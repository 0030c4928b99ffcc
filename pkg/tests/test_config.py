import numpy as np
import pytest
import yaml
from importlib import resources

from lsvgroup.config import ConfigError, apply_overrides, config_from_dict, load_config
from lsvgroup.groups import golden_angle

CONFIGS = ["default", "control_trivial", "dichotomy_so2", "dichotomy_so3", "operator_gamma0",
           "suppression_so2"]


def base():
    return {"simulation": {"seed": 1}}


@pytest.mark.parametrize("name", CONFIGS)
def test_packaged_configs_load(name):
    path = resources.files("lsvgroup").joinpath(f"configs/{name}.yaml")
    cfg = load_config(path)
    assert cfg.cocycle_spec().dim == cfg.group.dim
    assert cfg.observable_spec().dim == cfg.group.dim


def test_seed_mandatory():
    with pytest.raises(ConfigError):
        config_from_dict({})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"simulation": {"seed": 1, "sede": 2}})
    with pytest.raises(ConfigError):
        config_from_dict({"simulation": {"seed": 1}, "extra": {}})


@pytest.mark.parametrize("patch", [
    {"gamma": 1.0}, {"gamma": -0.1}, {"group": {"kind": "SU2"}},
    {"observable": {"mode": "sideways"}}, {"simulation": {"seed": 1, "grid": [10, 10]}},
    {"simulation": {"seed": 1, "samples": 0}}, {"observable": {"v0": [1.0, 0.0, 0.0]}},
    {"simulation": {"seed": 1, "g0": "random"}},
])
def test_validation(patch):
    data = apply_overrides(base(), {})
    for k, v in patch.items():
        if isinstance(v, dict):
            data.setdefault(k, {}).update(v)
        else:
            data[k] = v
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_echo_materialises_defaults():
    cfg = config_from_dict(base())
    d = cfg.to_dict()
    assert d["simulation"]["samples"] == 1000 and d["analysis"]["ks_threshold"] == 0.03
    assert config_from_dict(d).to_dict() == d


def test_hash_ignores_execution_settings():
    a = config_from_dict(base())
    b = config_from_dict(apply_overrides(base(), {"simulation.threads": 4,
                                                  "output.out_dir": "/tmp/elsewhere"}))
    c = config_from_dict(apply_overrides(base(), {"simulation.seed": 2}))
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert "threads" not in a.to_dict(execution=False)["simulation"]
    assert b.execution_dict() == {"output.out_dir": "/tmp/elsewhere", "simulation.threads": 4}


def test_overrides_skip_none():
    d = apply_overrides(base(), {"simulation.seed": None, "transfer.m": 64})
    assert d == {"simulation": {"seed": 1}, "transfer": {"m": 64}}


def test_cocycle_builders():
    cfg = config_from_dict(base())
    spec = cfg.cocycle_spec()
    assert spec.group_kind == "SO2"
    np.testing.assert_allclose(spec.base_generator[1, 0], golden_angle())
    cfg = config_from_dict({"simulation": {"seed": 1}, "group": {"kind": "torus", "dim": 4},
                            "observable": {"v0": [1.0, 0.0, 0.0, 0.0]}})
    assert cfg.cocycle_spec().dim == 4
    cfg = config_from_dict({"simulation": {"seed": 1}, "group": {"kind": "SO3", "dim": 3},
                            "observable": {"v0": [1.0, 0.0, 1.0], "mode": "fix",
                                           "centering": "none"}})
    np.testing.assert_allclose(cfg.observable_spec().v0, [0.0, 0.0, 1.0], atol=1e-14)


def test_yaml_equivalence(tmp_path):
    data = {"simulation": {"seed": 9, "grid": [10, 100]}, "gamma": 0.5}
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(data))
    assert load_config(p).config_hash() == config_from_dict(data).config_hash()
