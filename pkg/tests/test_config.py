import json

import pytest

from hardylab.config import ConfigError, RunConfig, load_config

BASE = {"domain": {"kind": "box", "sides": [1.0, 1.0]}, "grid": {"h": 0.05}, "operator": {"family": "H"}}


def _cfg(**blocks):
    raw = json.loads(json.dumps(BASE))
    for k, v in blocks.items():
        raw[k] = v
    return raw


@pytest.mark.parametrize("raw", [
    _cfg(domain={"kind": "torus"}),
    _cfg(grid={}),
    _cfg(grid={"h": -0.1}),
    _cfg(grid={"h": 0.1, "octant": "yes"}),
    _cfg(grid={"h": 0.1, "clearance": 1.5}),
    _cfg(operator={"family": "Hc", "c": 0.3}),
    _cfg(operator={"family": "Kc"}),
    _cfg(operator={"family": "L", "alpha": -1.0}),
    _cfg(operator={"family": "E"}),
    _cfg(operator={"family": "Q"}),
    _cfg(task={"times": []}),
    _cfg(task={"times": [0.1, -1.0]}),
    _cfg(task={"times": {"geomspace": [1.0, 0.1, 5]}}),
    _cfg(domain={"kind": "ellipse", "a": 1.0}),
    _cfg(domain={"kind": "polygon", "vertices": [[0, 0], [1, 0]]}),
    _cfg(extra={}),
    [1, 2],
])
def test_rejects(raw):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(raw)


def test_accepts_base():
    cfg = RunConfig.from_dict(BASE)
    assert cfg.grid["h"] == 0.05


def test_command_specific_kind():
    with pytest.raises(ConfigError):
        RunConfig.from_dict(dict(_cfg(task={"kind": "nonsense"}), command="hardy"))
    with pytest.raises(ConfigError):
        RunConfig.from_dict(dict(_cfg(task={"mode": "nonsense"}), command="harnack"))


def test_grid_optional_for_counterexample():
    RunConfig.from_dict({"command": "harnack", "domain": {"kind": "ball", "radius": 1, "dim": 2},
                         "task": {"mode": "counterexample"}})


def test_fingerprint_stable_and_output_excluded():
    a = RunConfig.from_dict(_cfg(output={"directory": "x"}))
    b = RunConfig.from_dict(_cfg(output={"directory": "y"}))
    assert a.fingerprint() == b.fingerprint()
    assert len(a.fingerprint()) == 16
    # key order does not matter
    raw = _cfg()
    raw["domain"] = {"sides": [1.0, 1.0], "kind": "box"}
    assert RunConfig.from_dict(raw).fingerprint() == a.fingerprint()


def test_fingerprint_sensitive_to_h():
    assert RunConfig.from_dict(_cfg(grid={"h": 0.05})).fingerprint() != \
        RunConfig.from_dict(_cfg(grid={"h": 0.04})).fingerprint()


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(BASE))
    assert load_config(p, "eig").command == "eig"
    p.write_text(json.dumps(dict(BASE, command="kernel")))
    with pytest.raises(ConfigError):
        load_config(p, "eig")
    p.write_text("[")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
