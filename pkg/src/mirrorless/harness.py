"""Experiment runner: trajectories to CSV, reports to JSON, bundled suites."""

from __future__ import annotations

import json
import math
import os
import platform
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (
    affine_chart,
    bregman_projection,
    chart_transport_check,
    cubic_chart,
    discretization_error_sweep,
    hessian_map_check,
    identity_chart,
    kkt_residual,
    rate_bound_check,
    theorem1_check,
)
from .config import ExperimentConfig, build_geometry, build_objective, build_run_config, load_config
from .errors import MirrorlessError
from .objectives import gradient_check
from .optimizers import (
    RunConfig,
    StochasticBlock,
    resolve_geometry,
    run_method,
    run_minibatch_smd,
    run_two_scale_stochastic,
)

__all__ = [
    "OUTPUT_ENV",
    "ANALYSES",
    "default_output_dir",
    "dumps",
    "format_float",
    "write_trajectory_csv",
    "run_analysis",
    "evaluate_assertions",
    "run_experiment",
    "suite_dir",
    "run_suite",
]

OUTPUT_ENV = "MIRRORLESS_OUTPUT_DIR"


def default_output_dir():
    return Path(os.environ.get(OUTPUT_ENV, "mirrorless_runs"))


# -- serialization -----------------------------------------------------------

def format_float(x):
    """Shortest round-trip decimal for a float."""
    return repr(float(x))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_trajectory_csv(traj, path):
    d = traj.points.shape[1]
    header = ["k", "t"] + [f"w_{i + 1}" for i in range(d)] + ["F", "grad_norm", "substeps"]
    lines = [",".join(header)]
    for k in range(len(traj)):
        row = [str(k), format_float(traj.times[k])]
        row += [format_float(x) for x in traj.points[k]]
        row += [format_float(traj.values[k]), format_float(traj.grad_norms[k]), str(int(traj.substeps[k]))]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


# -- analyses ----------------------------------------------------------------

def _chart_from(spec, d):
    kind = spec.get("kind", "identity")
    if kind == "cubic":
        return cubic_chart()
    if kind == "affine":
        return affine_chart(spec["S"], spec.get("shift"))
    if kind == "identity":
        return identity_chart(d)
    raise ValueError(f"unknown chart kind {kind!r}")


def _hessian_points(params, metric, seed):
    if "points" in params:
        return [np.asarray(p, dtype=float) for p in params["points"]]
    rng = np.random.default_rng([seed, 1])
    n = int(params.get("random_points", 20))
    scale = float(params.get("scale", 1.0))
    return [metric.sample_point(rng, scale) for _ in range(n)]


def _a_hessian_map(ctx, params):
    metric = ctx["metric"]
    points = _hessian_points(params, metric, ctx["seed"])
    rep = hessian_map_check(metric, points, params.get("fd_step", 1e-5), params.get("tol", 1e-3))
    return rep.to_dict()


def _a_theorem1(ctx, params):
    psi = ctx["potential"]
    if psi is None:
        raise ValueError("theorem1_check needs a potential geometry")
    rc = ctx["run_config"]
    K = int(params.get("iterations", rc.iterations))
    eta = float(params.get("eta", rc.eta))
    tol = float(params.get("tol", rc.tol))
    dev = theorem1_check(psi, ctx["objective"], rc.w_init, eta, K, tol)
    threshold = 10.0 * tol * K
    return {"max_deviation": dev, "threshold": threshold, "passed": dev <= threshold,
            "eta": eta, "iterations": K, "tol": tol}


def _a_rate_bound(ctx, params):
    rc = ctx["run_config"]
    rep = rate_bound_check(
        ctx["metric"], float(params["alpha"]), float(params["beta"]), ctx["objective"], rc.w_init,
        int(params.get("iterations", rc.iterations)), f_star=params.get("f_star"),
        eta=params.get("eta"), tol=rc.tol,
    )
    return rep.to_dict()


def _a_bregman(ctx, params):
    psi = ctx["potential"]
    if psi is None:
        raise ValueError("bregman_projection needs a potential geometry")
    p = ctx["config"].data["objective"]["params"]
    A, b = np.asarray(p["A"], dtype=float), np.asarray(p["b"], dtype=float)
    w0 = np.asarray(params.get("w0", ctx["run_config"].w_init), dtype=float)
    proj = bregman_projection(psi, w0, A, b)
    final = ctx["trajectory"].final
    denom = max(float(np.max(np.abs(proj))), 1e-300)
    return {
        "projection": proj,
        "final_vs_projection_rel_inf": float(np.max(np.abs(final - proj)) / denom),
        "kkt_residual_final": kkt_residual(psi, w0, final, A),
        "kkt_residual_projection": kkt_residual(psi, w0, proj, A),
        "projection_feasibility": float(np.linalg.norm(A @ proj - b)),
    }


def _a_kkt(ctx, params):
    psi = ctx["potential"]
    if psi is None:
        raise ValueError("kkt_residual needs a potential geometry")
    A = np.asarray(ctx["config"].data["objective"]["params"]["A"], dtype=float)
    w0 = np.asarray(params.get("w0", ctx["run_config"].w_init), dtype=float)
    return {"kkt_residual": kkt_residual(psi, w0, ctx["trajectory"].final, A)}


def _a_chart(ctx, params):
    rc = ctx["run_config"]
    chart = _chart_from(params.get("chart", {}), ctx["metric"].dimension)
    method = params.get("method", rc.method)
    eta = float(params.get("eta", rc.eta))
    K = int(params.get("iterations", rc.iterations))
    dev = chart_transport_check(ctx["metric"], chart, ctx["objective"], rc.w_init, eta, K, method, rc.tol)
    out = {"chart": chart.name, "method": method, "eta": eta, "iterations": K,
           "deviations": dev, "max_deviation": float(dev.max())}
    if params.get("eta_halving"):
        dev2 = chart_transport_check(ctx["metric"], chart, ctx["objective"], rc.w_init,
                                     eta / 2, 2 * K, method, rc.tol)
        out["max_deviation_half"] = float(dev2.max())
        out["halving_ratio"] = out["max_deviation"] / out["max_deviation_half"]
    return out


def _a_sweep(ctx, params):
    rc = ctx["run_config"]
    T = float(params.get("T", rc.eta * rc.iterations))
    etas = params.get("etas", [rc.eta, rc.eta / 2, rc.eta / 4])
    methods = params.get("methods", ["ngd", "md_mirrorless"])
    table = discretization_error_sweep(ctx["metric"], ctx["objective"], rc.w_init, T, etas,
                                       methods, rc.tol, params.get("ref_tol", 1e-12))
    if ctx.get("output_dir") is not None:
        table.write_csv(Path(ctx["output_dir"]) / "sweep.csv")
    return table.to_dict()


def _a_gradient(ctx, params):
    obj = ctx["objective"]
    rng = np.random.default_rng([ctx["seed"], 2])
    n = int(params.get("points", 20))
    pts = [ctx["metric"].sample_point(rng) for _ in range(n)]
    errs = [gradient_check(obj, p) for p in pts]
    return {"max_error": max(errs), "points": n}


def _a_two_scale(ctx, params):
    psi = ctx["potential"]
    rc = ctx["run_config"]
    if psi is None or rc.stochastic is None:
        raise ValueError("two_scale_identity needs a potential geometry and a stochastic block")
    out = {"batches": [], "max_deviation": 0.0}
    for b in params.get("batches", [1]):
        b = int(b)
        cfg = RunConfig("md_classic", rc.eta, rc.iterations, rc.w_init, rc.tol,
                        StochasticBlock(rc.eta / b, rc.stochastic.seed, rc.stochastic.sampling))
        two = run_two_scale_stochastic(cfg, psi, ctx["objective"])
        ref = run_minibatch_smd(cfg, psi, ctx["objective"], b)
        dev = float(np.max(np.abs(two.points - ref.points)))
        out["batches"].append({"b": b, "max_deviation": dev})
        out["max_deviation"] = max(out["max_deviation"], dev)
    return out


ANALYSES = {
    "hessian_map_check": _a_hessian_map,
    "theorem1_check": _a_theorem1,
    "rate_bound_check": _a_rate_bound,
    "bregman_projection": _a_bregman,
    "kkt_residual": _a_kkt,
    "chart_transport_check": _a_chart,
    "discretization_error_sweep": _a_sweep,
    "gradient_check": _a_gradient,
    "two_scale_identity": _a_two_scale,
}


def run_analysis(name, ctx, params=None):
    return ANALYSES[name](ctx, dict(params or {}))


# -- assertions --------------------------------------------------------------

def _lookup(doc, path):
    cur = doc
    for part in path.split("."):
        if isinstance(cur, dict):
            cur = cur[part]
        elif isinstance(cur, list):
            cur = cur[int(part)]
        else:
            raise KeyError(path)
    return cur


def _check(op, expected, actual, tol):
    if actual is None:
        return False
    if op == "le":
        return actual <= expected
    if op == "ge":
        return actual >= expected
    if op == "lt":
        return actual < expected
    if op == "gt":
        return actual > expected
    if op == "eq":
        if isinstance(expected, (bool, str)) or isinstance(actual, (bool, str)):
            return actual == expected
        return abs(actual - expected) <= tol
    if op == "between":
        return expected[0] <= actual <= expected[1]
    if op == "all_le":
        return all(a is not None and a <= expected for a in actual)
    if op == "all_ge":
        return all(a is not None and a >= expected for a in actual)
    if op == "all_between":
        return all(a is not None and expected[0] <= a <= expected[1] for a in actual)
    if op == "all_close":
        return len(actual) == len(expected) and all(
            a is not None and abs(a - e) <= tol for a, e in zip(actual, expected)
        )
    raise ValueError(f"unknown assertion op {op!r}")


_OPS = ("le", "ge", "lt", "gt", "eq", "between", "all_le", "all_ge", "all_between", "all_close")


def evaluate_assertions(assertions, doc, scope="summary"):
    results = []
    for spec in assertions or []:
        path = spec["path"]
        tol = float(spec.get("tol", 0.0))
        try:
            actual = _clean(_lookup(doc, path))
        except (KeyError, IndexError, ValueError):
            actual = None
        for op in _OPS:
            if op in spec:
                results.append({
                    "scope": scope, "path": path, "op": op, "expected": spec[op], "actual": actual,
                    "passed": bool(_check(op, spec[op], actual, tol)),
                })
    return results


# -- experiments -------------------------------------------------------------

def _error_record(exc, stage):
    rec = {"error": type(exc).__name__, "message": str(exc), "stage": stage}
    if getattr(exc, "iteration", None) is not None:
        rec["iteration"] = int(exc.iteration)
    if getattr(exc, "exit_time", None) is not None:
        rec["exit_time"] = float(exc.exit_time)
    return rec


def _execute(cfg):
    geometry = build_geometry(cfg)
    obj = build_objective(cfg)
    rc = build_run_config(cfg)
    metric, psi = resolve_geometry(geometry)
    if rc.stochastic is not None:
        traj = run_two_scale_stochastic(rc, psi, obj)
    else:
        traj = run_method(rc, geometry, obj)
    return {"config": cfg, "metric": metric, "potential": psi, "objective": obj,
            "run_config": rc, "trajectory": traj, "seed": cfg.seed}


def run_experiment(cfg, output_dir=None, quiet=True):
    """Run one experiment and write its artifacts.

    Writes ``trajectory.csv``, ``summary.json`` and ``run_meta.json`` into
    ``output_dir`` (default: the config's ``output``, else
    ``$MIRRORLESS_OUTPUT_DIR/<name>``). Returns the exit status: 0 when the
    run, every analysis and every assertion succeed, 1 on a run or analysis
    failure, 3 when only assertions fail.
    """
    if output_dir is None:
        output_dir = cfg.data.get("output") or default_output_dir() / cfg.name
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    summary = {
        "name": cfg.name, "criterion": cfg.criterion, "status": "ok", "passed": False,
        "method": cfg.data["method"]["method"], "dimension": cfg.dimension,
        "iterations_run": 0, "final_iterate": [], "final_objective": None,
        "final_grad_norm": None, "failure": None, "analyses": {}, "assertions": [],
    }
    try:
        ctx = _execute(cfg)
    except (MirrorlessError, ValueError, np.linalg.LinAlgError) as exc:
        summary["status"] = "error"
        summary["failure"] = _error_record(exc, "setup")
        ctx = None

    if ctx is not None:
        ctx["output_dir"] = out
        traj = ctx["trajectory"]
        write_trajectory_csv(traj, out / "trajectory.csv")
        summary.update(
            iterations_run=len(traj) - 1,
            final_iterate=traj.final,
            final_objective=float(traj.values[-1]),
            final_grad_norm=float(traj.grad_norms[-1]),
        )
        if traj.failure is not None:
            summary["status"] = "run_failed"
            summary["failure"] = dict(traj.failure, stage="run")
        for entry in cfg.analyses:
            key = entry.get("id", entry["name"])
            try:
                report = _clean(run_analysis(entry["name"], ctx, entry.get("params")))
            except (MirrorlessError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
                summary["analyses"][key] = {"error": _error_record(exc, f"analysis:{key}")}
                if summary["status"] == "ok":
                    summary["status"] = "analysis_failed"
                    summary["failure"] = _error_record(exc, f"analysis:{key}")
                continue
            summary["analyses"][key] = report
            summary["assertions"] += evaluate_assertions(entry.get("assert"), report, scope=key)
    summary["assertions"] += evaluate_assertions(cfg.data.get("assert"), _clean(summary))
    if summary["status"] == "ok" and not all(a["passed"] for a in summary["assertions"]):
        summary["status"] = "assertion_failed"
    summary["passed"] = summary["status"] == "ok"
    (out / "summary.json").write_text(dumps(summary))

    meta = {
        "config": cfg.data,
        "version": __version__,
        "seed": cfg.seed,
        "wall_time_s": time.perf_counter() - started,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }
    (out / "run_meta.json").write_text(dumps(meta))

    if not quiet:
        line = f"{cfg.name}: {summary['status']}"
        if summary["final_objective"] is not None:
            line += f" (F={summary['final_objective']:.6g}, {summary['iterations_run']} iterations)"
        print(line)
        for a in summary["assertions"]:
            mark = "PASS" if a["passed"] else "FAIL"
            print(f"  [{mark}] {a['scope']}:{a['path']} {a['op']} {a['expected']} (actual {a['actual']})")
        if summary["failure"] is not None:
            print(f"  failure: {summary['failure']['error']}: {summary['failure']['message']}")
    if summary["status"] == "ok":
        return 0
    return 3 if summary["status"] == "assertion_failed" else 1


# -- suites ------------------------------------------------------------------

def suite_dir(name):
    """Directory of a bundled suite, or ``name`` itself if it is a directory."""
    p = Path(name)
    if p.is_dir():
        return p
    bundled = resources.files("mirrorless").joinpath("suites", name)
    if not bundled.is_dir():
        raise FileNotFoundError(f"no bundled suite named {name!r}")
    return Path(str(bundled))


def _run_one(config_path, out_dir):
    cfg = load_config(config_path)
    code = run_experiment(cfg, out_dir)
    summary = json.loads((Path(out_dir) / "summary.json").read_text())
    return {"config": Path(config_path).name, "name": cfg.name, "exit_code": code,
            "passed": code == 0, "status": summary["status"],
            "failed_assertions": [a for a in summary["assertions"] if not a["passed"]]}


def run_suite(name, output_dir=None, workers=None, quiet=True):
    """Run every config in a suite and write ``suite_report.json``.

    Configs run in a process pool of ``workers`` (default: CPU count), each
    in its own subdirectory. Configs listed under ``reproducibility`` in the
    manifest are run a second time and their trajectory CSVs compared byte
    for byte. Returns ``(exit_code, report)``; exit code is 0 iff every
    criterion passes.
    """
    sdir = suite_dir(name)
    manifest_path = sdir / "suite.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing suite manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    out = Path(output_dir) if output_dir is not None else default_output_dir() / f"suite_{manifest['name']}"
    out.mkdir(parents=True, exist_ok=True)

    configs = manifest["configs"]
    for c in configs:
        if not (sdir / c).exists():
            raise FileNotFoundError(f"missing bundled config {c}")
    repro = manifest.get("reproducibility", {})
    jobs = [(str(sdir / c), str(out / Path(c).stem)) for c in configs]
    jobs += [(str(sdir / c), str(out / "_repro" / Path(c).stem)) for c in repro.get("configs", [])]

    workers = workers or os.cpu_count() or 1
    if workers == 1:
        results = [_run_one(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    main = results[: len(configs)]

    criteria = {}
    descriptions = manifest.get("criteria", {})
    for cfg_name, res in zip(configs, main):
        crit = json.loads((sdir / cfg_name).read_text()).get("criterion", res["name"])
        criteria.setdefault(crit, []).append(res)

    report_criteria = []
    for crit, runs in criteria.items():
        report_criteria.append({
            "id": crit, "description": descriptions.get(crit, ""),
            "passed": all(r["passed"] for r in runs), "runs": runs,
        })

    if repro.get("configs"):
        mismatches = []
        for c in repro["configs"]:
            a = out / Path(c).stem / "trajectory.csv"
            b = out / "_repro" / Path(c).stem / "trajectory.csv"
            if not (a.exists() and b.exists() and a.read_bytes() == b.read_bytes()):
                mismatches.append(c)
        crit = repro.get("criterion", "reproducibility")
        report_criteria.append({
            "id": crit, "description": descriptions.get(crit, "byte-identical reruns"),
            "passed": not mismatches, "runs": [{"config": c, "identical": c not in mismatches}
                                                for c in repro["configs"]],
        })
        shutil.rmtree(out / "_repro", ignore_errors=True)

    passed = all(c["passed"] for c in report_criteria)
    report = {"suite": manifest["name"], "passed": passed, "criteria": report_criteria}
    (out / "suite_report.json").write_text(dumps(report))
    if not quiet:
        for c in report_criteria:
            print(f"[{'PASS' if c['passed'] else 'FAIL'}] criterion {c['id']}: {c['description']}")
    return (0 if passed else 1), report
