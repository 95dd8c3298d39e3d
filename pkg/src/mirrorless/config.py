"""Experiment configs: JSON schema validation and object construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .errors import ConfigError
from .geometry import METRIC_NAMES, make_builtin_metric, svec_dim
from .objectives import make_builtin_objective
from .optimizers import RunConfig, StochasticBlock, scale_ratio
from .potentials import POTENTIAL_NAMES, make_builtin_potential

__all__ = [
    "ExperimentConfig",
    "load_schema",
    "parse_config",
    "load_config",
    "build_geometry",
    "build_objective",
    "build_run_config",
]

# metric kinds whose params take a vector dimension
_DIM_KINDS = {"euclidean", "rank_one_bump", "bounded_rank_one", "diag_arcsinh", "hessian_of", *POTENTIAL_NAMES}


def load_schema(name="config"):
    text = resources.files("mirrorless").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


@dataclass
class ExperimentConfig:
    """A validated experiment description.

    ``data`` is the JSON document after CSV paths and random generators in
    the objective have been resolved into inline arrays, so it echoes
    exactly what was run.
    """

    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def name(self):
        return self.data["name"]

    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def criterion(self) -> Optional[str]:
        return self.data.get("criterion")

    @property
    def analyses(self):
        return self.data.get("analyses", [])

    @property
    def dimension(self):
        return len(self.data["method"]["w_init"])

    def with_overrides(self, seed=None, tol=None, output=None):
        data = json.loads(json.dumps(self.data))
        if seed is not None:
            data["seed"] = int(seed)
        if tol is not None:
            data["method"]["tol"] = float(tol)
        if output is not None:
            data["output"] = str(output)
        return ExperimentConfig(data, self.base_dir)


def _read_csv(path, base_dir):
    p = Path(path)
    if not p.is_absolute():
        p = Path(base_dir) / p
    arr = np.loadtxt(p, delimiter=",", ndmin=2)
    return arr


def _random_least_squares(spec, rng):
    rows, cols = spec["rows"], spec["cols"]
    if spec.get("distribution", "normal") == "uniform":
        A = rng.uniform(spec.get("low", 0.0), spec.get("high", 1.0), (rows, cols))
    else:
        A = spec.get("scale", 1.0) * rng.standard_normal((rows, cols))
    if "planted" in spec:
        w = np.asarray(spec["planted"], dtype=float)
        if w.shape != (cols,):
            raise ConfigError(f"planted solution must have length {cols}")
    else:
        w = rng.uniform(spec.get("planted_low", -1.0), spec.get("planted_high", 1.0), cols)
    return A, A @ w


def _resolve_objective(data, base_dir, rng, errors):
    params = dict(data["objective"]["params"])
    if "random" in params:
        spec = params.pop("random")
        if data["objective"]["name"] not in ("least_squares", "least_squares_stochastic"):
            errors.append("objective.params.random is only supported for least squares objectives")
            return
        A, b = _random_least_squares(spec, rng)
        params["A"], params["b"] = A.tolist(), b.tolist()
    for key, value in list(params.items()):
        if isinstance(value, str):
            try:
                arr = _read_csv(value, base_dir)
            except OSError as exc:
                errors.append(f"objective.params.{key}: cannot read CSV {value!r} ({exc.strerror})")
                continue
            if key in ("b", "y", "c"):
                arr = arr.ravel()
            params[key] = arr.tolist()
    data["objective"]["params"] = params


def _objective_dim(obj_data):
    name, p = obj_data["name"], obj_data["params"]
    try:
        if name == "quadratic":
            return len(p["Q"])
        if name in ("least_squares", "least_squares_stochastic"):
            return len(p["A"][0])
        if name == "matrix_sensing":
            return svec_dim(len(p["A"][0]))
        if name == "linear":
            return len(p["c"])
    except (KeyError, IndexError, TypeError):
        return None
    return None


def _geometry_dim(geo):
    kind, p = geo["kind"], geo.get("params", {})
    if kind == "lyapunov_inverse" and "n" in p:
        return svec_dim(p["n"])
    if kind == "fixed_spd" and isinstance(p.get("H"), list):
        return len(p["H"])
    return p.get("dim")


def _semantic_checks(data, errors):
    geo = data["geometry"]
    kind = geo["kind"]
    params = geo.setdefault("params", {})
    method = data["method"]
    d = len(method["w_init"]) if isinstance(method["w_init"], list) else None

    if kind in _DIM_KINDS and "dim" not in params and d is not None:
        params["dim"] = d
    if kind == "hessian_of" and "potential" not in params:
        errors.append("geometry hessian_of requires params.potential")
    if kind in ("diag_arcsinh", "arcsinh") or params.get("potential") == "arcsinh":
        if "alpha" not in params:
            errors.append(f"geometry {kind} requires params.alpha")
    if (kind == "p_power" or params.get("potential") == "p_power") and "p" not in params:
        errors.append("geometry p_power requires params.p")
    if kind == "fixed_spd" and "H" not in params:
        errors.append("geometry fixed_spd requires params.H")
    if kind == "lyapunov_inverse" and "n" not in params:
        errors.append("geometry lyapunov_inverse requires params.n")

    gdim = _geometry_dim(geo)
    odim = _objective_dim(data["objective"])
    if d is not None:
        if gdim is not None and gdim != d:
            errors.append(f"dimension mismatch: geometry has {gdim}, w_init has {d}")
        if odim is not None and odim != d:
            errors.append(f"dimension mismatch: objective has {odim}, w_init has {d}")

    from_potential = kind in POTENTIAL_NAMES or kind == "hessian_of"
    if method["method"] == "md_classic" and not from_potential:
        errors.append("classic MD requires a potential (geometry kind must be a potential or hessian_of)")

    sto = method.get("stochastic")
    if sto is not None:
        try:
            scale_ratio(method["eta"], sto["nu"])
        except ValueError as exc:
            errors.append(f"method.stochastic: non-integer ratio ({exc})")
        if not from_potential:
            errors.append("method.stochastic requires a potential geometry")
        if data["objective"]["name"] != "least_squares_stochastic":
            errors.append("method.stochastic requires objective least_squares_stochastic")
    if data["objective"]["name"] == "least_squares_stochastic" and sto is None:
        errors.append("objective least_squares_stochastic requires method.stochastic")


def parse_config(text, base_dir=None):
    """Validate a JSON config document and return an :class:`ExperimentConfig`.

    Raises
    ------
    ConfigError
        listing every schema or consistency violation found.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from None
    validator = jsonschema.Draft202012Validator(load_schema("config"))
    errors = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        errors.append(f"{where}: {err.message}")
    if errors:
        raise ConfigError(errors)

    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    rng = np.random.default_rng(int(data["seed"]))
    if isinstance(data["method"]["w_init"], str):
        try:
            data["method"]["w_init"] = _read_csv(data["method"]["w_init"], base_dir).ravel().tolist()
        except OSError as exc:
            errors.append(f"method.w_init: cannot read CSV ({exc.strerror})")
    geo_params = data["geometry"].get("params", {})
    if isinstance(geo_params.get("H"), str):
        try:
            geo_params["H"] = _read_csv(geo_params["H"], base_dir).tolist()
        except OSError as exc:
            errors.append(f"geometry.params.H: cannot read CSV ({exc.strerror})")
    _resolve_objective(data, base_dir, rng, errors)
    if not errors:
        _semantic_checks(data, errors)
    if not errors:
        try:
            build_geometry(data)
            build_objective(data)
        except ValueError as exc:
            errors.append(str(exc))
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(data, base_dir)


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


def _data(cfg):
    return cfg.data if isinstance(cfg, ExperimentConfig) else cfg


def build_geometry(cfg):
    """Metric or potential described by ``geometry``."""
    geo = _data(cfg)["geometry"]
    kind, params = geo["kind"], dict(geo.get("params", {}))
    if kind in POTENTIAL_NAMES:
        return make_builtin_potential(kind, params)
    if kind in METRIC_NAMES:
        return make_builtin_metric(kind, params)
    raise ValueError(f"unknown geometry kind {kind!r}")


def build_objective(cfg):
    obj = _data(cfg)["objective"]
    return make_builtin_objective(obj["name"], obj["params"])


def build_run_config(cfg):
    data = _data(cfg)
    m = data["method"]
    sto = None
    if m.get("stochastic") is not None:
        s = m["stochastic"]
        sto = StochasticBlock(s["nu"], int(s.get("seed", data["seed"])), s.get("sampling", "iid"))
    return RunConfig(
        m["method"], m["eta"], m["iterations"], m["w_init"],
        tol=m.get("tol", 1e-10), stochastic=sto, verify=m.get("verify", False),
    )
