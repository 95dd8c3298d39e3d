"""Discretizations of Riemannian gradient flow as iterate generators.

``ngd`` freezes both metric and gradient per step (forward Euler),
``md_classic`` is the link-function update, ``md_mirrorless`` integrates the
frozen-gradient path exactly, and ``flow_reference`` samples the flow itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError, DomainError, MirrorlessError
from .geometry import HessianMetric, MetricTensor, as_point, metric_solve
from .integrators import DEFAULT_TOL, Trajectory, integrate_flow, mirrorless_step
from .potentials import Potential, potential_to_metric

__all__ = [
    "METHODS",
    "StochasticBlock",
    "RunConfig",
    "ngd_step",
    "md_step_classic",
    "resolve_geometry",
    "run_method",
    "scale_ratio",
    "run_two_scale_stochastic",
    "run_minibatch_smd",
]

METHODS = ("ngd", "md_classic", "md_mirrorless", "flow_reference")


@dataclass(frozen=True)
class StochasticBlock:
    """Sample-refresh scale ``nu`` and the sample stream it draws from."""

    nu: float
    seed: int = 0
    sampling: str = "iid"

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.sampling not in ("iid", "cyclic"):
            raise ValueError(f"unknown sampling scheme {self.sampling!r}")


@dataclass(frozen=True)
class RunConfig:
    method: str
    eta: float
    iterations: int
    w_init: np.ndarray = field(compare=False)
    tol: float = DEFAULT_TOL
    stochastic: Optional[StochasticBlock] = None
    verify: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.eta > 0:
            raise ValueError("stepsize must be positive")
        if int(self.iterations) < 0:
            raise ValueError("iterations must be nonnegative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        object.__setattr__(self, "w_init", as_point(self.w_init))


def resolve_geometry(geometry):
    """Return ``(metric, potential or None)`` for a metric or potential."""
    if isinstance(geometry, Potential):
        return potential_to_metric(geometry), geometry
    if isinstance(geometry, HessianMetric):
        return geometry, geometry.potential
    if isinstance(geometry, MetricTensor):
        return geometry, None
    raise TypeError(f"expected a MetricTensor or Potential, got {type(geometry).__name__}")


def ngd_step(metric, obj, w, eta):
    """Forward Euler step ``w - eta H(w)^{-1} grad F(w)``."""
    w = metric.check_domain(w)
    out = w - eta * metric_solve(metric, w, obj.gradient(w))
    if not metric.in_domain(out):
        raise DomainError(f"{metric.name}: NGD step left the domain", point=out)
    return out


def md_step_classic(psi, obj, w, eta):
    """Link update ``grad psi(w+) = grad psi(w) - eta grad F(w)``."""
    w = psi.check_domain(w)
    return psi.inverse_link(psi.link(w) - eta * obj.gradient(w), w_guess=w)


def _failure(k, exc):
    rec = {"iteration": int(k), "error": type(exc).__name__, "message": str(exc)}
    exit_time = getattr(exc, "exit_time", None)
    if exit_time is not None:
        rec["exit_time"] = float(exit_time)
    return rec


def run_method(cfg, geometry, obj, raise_on_failure=False):
    """Run ``cfg.iterations`` steps of ``cfg.method``; returns a :class:`Trajectory`.

    Each mirrorless step uses the single gradient ``grad F(w_k)``. On a step
    failure the iterates so far are returned with ``failure`` set, unless
    ``raise_on_failure``.
    """
    metric, psi = resolve_geometry(geometry)
    if cfg.method == "md_classic" and psi is None:
        raise ValueError("classic MD requires a potential")
    K, eta = int(cfg.iterations), float(cfg.eta)
    w = metric.check_domain(cfg.w_init)

    if cfg.method == "flow_reference":
        if K == 0:
            g = obj.gradient(w)
            return Trajectory(np.zeros(1), w[None, :].copy(), np.array([obj.value(w)]),
                              np.array([np.linalg.norm(g)]), np.zeros(1, int), np.zeros(1))
        try:
            traj = integrate_flow(metric, obj, w, eta * K, cfg.tol, samples=K)
        except (DomainError, ConvergenceError) as exc:
            if raise_on_failure:
                raise
            g = obj.gradient(w)
            return Trajectory(np.zeros(1), w[None, :].copy(), np.array([obj.value(w)]),
                              np.array([np.linalg.norm(g)]), np.zeros(1, int), np.zeros(1),
                              failure=_failure(0, exc))
        traj.times = eta * np.arange(K + 1)
        return traj

    points = [w]
    values = [obj.value(w)]
    gnorms = []
    substeps = [0]
    errors = [0.0]
    failure = None
    for k in range(K):
        g = obj.gradient(w)
        gnorms.append(np.linalg.norm(g))
        try:
            if cfg.method == "ngd":
                w = w - eta * metric.solve(w, g)
                if not metric.in_domain(w):
                    raise DomainError(f"{metric.name}: NGD step left the domain", point=w)
                n, err = 1, 0.0
            elif cfg.method == "md_classic":
                w = psi.inverse_link(psi.link(w) - eta * g, w_guess=w)
                n, err = 0, 0.0
            else:
                info = mirrorless_step(metric, w, g, eta, cfg.tol, verify=cfg.verify, full_output=True)
                w, n, err = info.point, info.substeps, info.error
        except MirrorlessError as exc:
            if raise_on_failure:
                exc.iteration = k
                exc.args = (f"iteration {k}: {exc}",) + exc.args[1:]
                raise
            failure = _failure(k, exc)
            break
        points.append(w)
        values.append(obj.value(w))
        substeps.append(n)
        errors.append(err)
    gnorms.append(np.linalg.norm(obj.gradient(points[-1])))
    m = len(points)
    return Trajectory(
        eta * np.arange(m), np.array(points), np.array(values), np.array(gnorms),
        np.array(substeps, dtype=int), np.array(errors), failure,
    )


def scale_ratio(eta, nu, rtol=1e-9):
    """Classify the two resolutions.

    Returns ``("minibatch", b)`` when ``eta = b nu`` or ``("reuse", c)`` when
    ``nu = c eta`` for a positive integer, up to relative ``rtol``; raises
    ``ValueError`` otherwise.
    """
    r = float(eta) / float(nu)
    if r >= 1.0 and abs(r - round(r)) <= rtol * r:
        return "minibatch", int(round(r))
    inv = 1.0 / r
    if inv >= 1.0 and abs(inv - round(inv)) <= rtol * inv:
        return "reuse", int(round(inv))
    raise ValueError(f"eta/nu = {r:.6g} is not an integer or the reciprocal of one")


def _stochastic_parts(cfg, psi, sobj):
    if cfg.stochastic is None:
        raise ValueError("run needs a stochastic block with nu")
    if not isinstance(psi, Potential):
        raise TypeError("two-scale discretization needs a potential (Hessian-map geometry)")
    return cfg.stochastic


def _record(points, obj, eta, failure=None, substeps=None):
    points = np.array(points)
    values = np.array([obj.value(p) for p in points])
    gnorms = np.array([np.linalg.norm(obj.gradient(p)) for p in points])
    m = len(points)
    sub = np.zeros(m, dtype=int) if substeps is None else np.asarray(substeps, dtype=int)
    return Trajectory(eta * np.arange(m), points, values, gnorms, sub, np.zeros(m), failure)


def run_two_scale_stochastic(cfg, psi, sobj):
    """Two-resolution stochastic discretization, solved exactly in the dual.

    The gradient argument is frozen at ``w(k eta)`` over each ``eta`` interval
    while the sample refreshes every ``nu``; sample slot ``j`` covers
    ``[j nu, (j+1) nu)``. Returns iterates at multiples of ``eta``.
    """
    block = _stochastic_parts(cfg, psi, sobj)
    eta = float(cfg.eta)
    mode, ratio = scale_ratio(eta, block.nu)
    nu = float(block.nu)
    w = psi.check_domain(cfg.w_init)
    points = [w]
    subs = [0]
    failure = None
    for k in range(int(cfg.iterations)):
        try:
            if mode == "minibatch":
                z = psi.link(w)
                for i in range(ratio):
                    idx = sobj.sample_index(block.seed, k * ratio + i, block.sampling)
                    z = z - nu * sobj.sample_gradient(w, idx)
            else:
                idx = sobj.sample_index(block.seed, k // ratio, block.sampling)
                z = psi.link(w) - eta * sobj.sample_gradient(w, idx)
            w = psi.inverse_link(z, w_guess=w)
        except MirrorlessError as exc:
            failure = _failure(k, exc)
            break
        points.append(w)
        subs.append(ratio if mode == "minibatch" else 1)
    return _record(points, sobj, eta, failure, subs)


def run_minibatch_smd(cfg, psi, sobj, batch):
    """Classic (mini)batch stochastic mirror descent.

    Each step averages ``batch`` sample gradients at the current iterate,
    drawn from consecutive slots of the same stream as the two-scale run.
    """
    block = _stochastic_parts(cfg, psi, sobj)
    eta = float(cfg.eta)
    w = psi.check_domain(cfg.w_init)
    points = [w]
    for k in range(int(cfg.iterations)):
        grads = [
            sobj.sample_gradient(w, sobj.sample_index(block.seed, k * batch + i, block.sampling))
            for i in range(batch)
        ]
        g = np.mean(grads, axis=0)
        w = psi.inverse_link(psi.link(w) - eta * g, w_guess=w)
        points.append(w)
    return _record(points, sobj, eta)
