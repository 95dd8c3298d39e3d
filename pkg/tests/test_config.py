import json

import numpy as np
import pytest

from mirrorless.config import build_geometry, build_objective, build_run_config, load_config, parse_config
from mirrorless.errors import ConfigError
from mirrorless.geometry import RankOneBumpMetric
from mirrorless.potentials import NegEntropy


def minimal(**changes):
    cfg = {
        "name": "minimal",
        "seed": 1,
        "geometry": {"kind": "euclidean"},
        "objective": {"name": "quadratic", "params": {"Q": [[1, 0], [0, 1]], "b": [0, 0]}},
        "method": {"method": "ngd", "eta": 0.1, "iterations": 10, "w_init": [1, 1]},
    }
    for key, value in changes.items():
        cfg[key] = value
    return cfg


def errors_of(doc):
    with pytest.raises(ConfigError) as info:
        parse_config(json.dumps(doc))
    return info.value.errors


def test_minimal_config_is_valid():
    cfg = parse_config(json.dumps(minimal()))
    assert cfg.name == "minimal" and cfg.seed == 1 and cfg.dimension == 2
    assert cfg.data["geometry"]["params"]["dim"] == 2
    rc = build_run_config(cfg)
    assert rc.method == "ngd" and rc.iterations == 10 and rc.tol == 1e-10


def test_md_classic_requires_potential():
    doc = minimal(geometry={"kind": "rank_one_bump"})
    doc["method"]["method"] = "md_classic"
    errs = errors_of(doc)
    assert any("classic MD requires a potential" in e for e in errs)


def test_non_integer_scale_ratio():
    doc = minimal(
        geometry={"kind": "sq_euclidean"},
        objective={"name": "least_squares_stochastic", "params": {"A": [[1, 0], [0, 1]], "b": [0, 1]}},
    )
    doc["method"].update(eta=0.2, stochastic={"nu": 0.06})
    errs = errors_of(doc)
    assert any("non-integer ratio" in e for e in errs)


def test_all_schema_violations_reported():
    doc = minimal(colour="blue")
    doc["method"]["eta"] = -1
    doc["method"]["method"] = "adam"
    del doc["seed"]
    errs = errors_of(doc)
    assert len(errs) >= 4
    joined = "\n".join(errs)
    for needle in ("colour", "seed", "adam", "-1"):
        assert needle in joined


def test_malformed_json():
    with pytest.raises(ConfigError, match="malformed JSON"):
        parse_config("{not json")


def test_dimension_mismatch():
    doc = minimal()
    doc["method"]["w_init"] = [1, 1, 1]
    errs = errors_of(doc)
    assert any("dimension mismatch" in e for e in errs)


def test_missing_geometry_params():
    errs = errors_of(minimal(geometry={"kind": "diag_arcsinh"}))
    assert any("alpha" in e for e in errs)


def test_builders():
    doc = minimal(geometry={"kind": "neg_entropy"})
    cfg = parse_config(json.dumps(doc))
    assert isinstance(build_geometry(cfg), NegEntropy)
    doc = minimal(geometry={"kind": "rank_one_bump"})
    assert isinstance(build_geometry(parse_config(json.dumps(doc))), RankOneBumpMetric)
    obj = build_objective(cfg)
    assert obj.value([1.0, 1.0]) == pytest.approx(1.0)


def test_random_data_is_seeded():
    doc = minimal(objective={"name": "least_squares", "params": {"random": {"rows": 3, "cols": 2}}})
    a = parse_config(json.dumps(doc)).data["objective"]["params"]["A"]
    b = parse_config(json.dumps(doc)).data["objective"]["params"]["A"]
    doc["seed"] = 2
    c = parse_config(json.dumps(doc)).data["objective"]["params"]["A"]
    assert a == b and a != c


def test_csv_paths(tmp_path):
    np.savetxt(tmp_path / "A.csv", [[1.0, 2.0], [3.0, 4.0], [5.0, 7.0]], delimiter=",")
    np.savetxt(tmp_path / "b.csv", [1.0, 0.0, 2.0], delimiter=",")
    doc = minimal(objective={"name": "least_squares", "params": {"A": "A.csv", "b": "b.csv"}})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    assert cfg.data["objective"]["params"]["A"][2] == [5.0, 7.0]
    doc["objective"]["params"]["A"] = "missing.csv"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="cannot read CSV"):
        load_config(path)


def test_overrides():
    cfg = parse_config(json.dumps(minimal())).with_overrides(seed=9, tol=1e-8, output="/tmp/x")
    assert cfg.seed == 9 and cfg.data["method"]["tol"] == 1e-8 and cfg.data["output"] == "/tmp/x"


def test_stochastic_seed_defaults_to_config_seed():
    doc = minimal(
        seed=42,
        geometry={"kind": "sq_euclidean"},
        objective={"name": "least_squares_stochastic", "params": {"A": [[1, 0], [0, 1]], "b": [0, 1]}},
    )
    doc["method"]["stochastic"] = {"nu": 0.05}
    rc = build_run_config(parse_config(json.dumps(doc)))
    assert rc.stochastic.seed == 42 and rc.stochastic.sampling == "iid"
