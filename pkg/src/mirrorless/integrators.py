"""Riemannian gradient flow and the frozen-gradient (mirrorless) step.

Both use fixed-step classical RK4 with global step doubling: the substep
count doubles until the endpoint moves by at most ``tol`` in the sup norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError, DomainError
from .geometry import as_point

__all__ = [
    "Trajectory",
    "StepInfo",
    "DEFAULT_TOL",
    "MAX_DOUBLINGS",
    "rk4_refine",
    "integrate_flow",
    "mirrorless_step",
]

DEFAULT_TOL = 1e-10
MAX_DOUBLINGS = 20


@dataclass
class Trajectory:
    """Iterates ``points[k]`` at ``times[k]`` with per-step diagnostics.

    ``substeps[k]`` and ``errors[k]`` describe the step that produced point
    ``k`` (both zero for the initial point). ``failure`` is set when a run
    stopped early; the arrays then hold the iterates computed so far.
    """

    times: np.ndarray
    points: np.ndarray
    values: np.ndarray
    grad_norms: np.ndarray
    substeps: np.ndarray
    errors: np.ndarray
    failure: Optional[dict] = None

    def __len__(self):
        return len(self.times)

    @property
    def final(self):
        return self.points[-1]

    @property
    def ok(self):
        return self.failure is None


@dataclass
class StepInfo:
    point: np.ndarray
    substeps: int = 0
    error: float = 0.0
    closed_form: bool = False
    grid: Optional[np.ndarray] = field(default=None, repr=False)


def _rk4(field, w0, T, n, in_domain):
    h = T / n
    out = np.empty((n + 1, w0.shape[0]))
    out[0] = w = w0
    for i in range(n):
        t = i * h
        k1 = field(w)
        y = w + 0.5 * h * k1
        if not in_domain(y):
            raise DomainError("path left the metric domain", point=y, exit_time=t + 0.5 * h)
        k2 = field(y)
        y = w + 0.5 * h * k2
        if not in_domain(y):
            raise DomainError("path left the metric domain", point=y, exit_time=t + 0.5 * h)
        k3 = field(y)
        y = w + h * k3
        if not in_domain(y):
            raise DomainError("path left the metric domain", point=y, exit_time=t + h)
        k4 = field(y)
        w = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not (np.all(np.isfinite(w)) and in_domain(w)):
            raise DomainError("path left the metric domain", point=w, exit_time=t + h)
        out[i + 1] = w
    return out


def rk4_refine(field, w0, T, tol=DEFAULT_TOL, n0=1, in_domain=None, max_doublings=MAX_DOUBLINGS):
    """Integrate ``w' = field(w)`` on ``[0, T]`` with step doubling.

    Returns ``(grid, n, err)``: the finest grid of ``n + 1`` points and the
    sup-norm endpoint change of the last doubling. A domain exit on a coarse
    grid only triggers more refinement; it is reported once it reproduces on
    three successive grids at consistent times. Overflow is never read as an
    exit.
    """
    if in_domain is None:
        def in_domain(w):
            return True
    n = int(n0)
    prev = None
    exits = []
    for _ in range(max_doublings + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                grid = _rk4(field, w0, T, n, in_domain)
        except DomainError as exc:
            if exc.point is None or not np.all(np.isfinite(exc.point)):
                # overflow from an unstable coarse grid, not a domain exit
                exits = []
            else:
                exits.append((exc.exit_time, T / n))
                if len(exits) >= 3 and n >= 64 and all(
                    abs(exits[-i][0] - exits[-i - 1][0]) <= 2.0 * exits[-i - 1][1] for i in (1, 2)
                ):
                    raise
            prev = None
            n *= 2
            continue
        exits = []
        if prev is not None:
            err = float(np.max(np.abs(grid[-1] - prev[-1])))
            if err <= tol:
                return grid, n, err
        prev = grid
        n *= 2
    raise ConvergenceError(f"step doubling did not reach tol={tol:g} in {max_doublings} doublings")


def _flow_field(metric, obj):
    solve = metric._solve
    grad = obj.gradient

    def field(w):
        return -solve(w, grad(w))

    return field


def integrate_flow(metric, obj, w0, T, tol=DEFAULT_TOL, samples=None):
    """Solve ``w' = -H(w)^{-1} grad F(w)`` from ``w0`` over ``[0, T]``.

    Parameters
    ----------
    samples : int, optional
        Number of equal output intervals. The integration grid is refined
        from ``samples`` substeps upward, so the output times are exact grid
        points. By default the whole finest grid is returned.

    Raises
    ------
    DomainError
        with ``exit_time`` when the flow leaves the metric domain.
    ConvergenceError
        when 20 doublings do not reach ``tol``.
    """
    w0 = metric.check_domain(w0)
    T = float(T)
    if not T > 0:
        raise ValueError("T must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    n0 = int(samples) if samples else 1
    grid, n, err = rk4_refine(_flow_field(metric, obj), w0, T, tol, n0, metric.in_domain)
    stride = n // n0 if samples else 1
    points = grid[::stride]
    K = points.shape[0] - 1
    times = np.linspace(0.0, T, K + 1)
    values = np.array([obj.value(p) for p in points])
    gnorms = np.array([np.linalg.norm(obj.gradient(p)) for p in points])
    substeps = np.full(K + 1, stride, dtype=int)
    substeps[0] = 0
    errors = np.full(K + 1, err)
    errors[0] = 0.0
    return Trajectory(times, points, values, gnorms, substeps, errors)


def mirrorless_step(metric, w, g, eta, tol=DEFAULT_TOL, verify=False, full_output=False):
    """One potential-free mirror descent step.

    Follows ``w'(t) = -H(w(t))^{-1} g`` from ``w`` for time ``eta`` with the
    gradient ``g`` frozen. For Hessian metrics the path is exact in the dual
    (``grad psi(w(t)) = grad psi(w) - t g``) and is used unless ``verify``
    asks for the ODE path.
    """
    w = metric.check_domain(w)
    g = as_point(g, metric.dimension)
    eta = float(eta)
    if not eta > 0:
        raise ValueError("stepsize must be positive")
    if metric.closed_form_flow and not verify:
        psi = metric.potential
        out = psi.inverse_link(psi.link(w) - eta * g, w_guess=w)
        info = StepInfo(out, closed_form=True)
    else:
        solve = metric._solve

        def field(x):
            return -solve(x, g)

        try:
            grid, n, err = rk4_refine(field, w, eta, tol, 1, metric.in_domain)
        except DomainError as exc:
            raise DomainError(
                f"{metric.name}: frozen-gradient path left the domain at t={exc.exit_time:.6g}",
                point=exc.point, exit_time=exc.exit_time,
            ) from None
        info = StepInfo(grid[-1], substeps=n, error=err, grid=grid)
    return info if full_output else info.point
