"""Numerical checks on metrics, methods and their limits."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConvergenceError, MetricError
from .geometry import MetricTensor, as_point
from .integrators import DEFAULT_TOL, integrate_flow
from .objectives import Objective
from .optimizers import RunConfig, run_method
from .potentials import potential_to_metric

__all__ = [
    "HessianMapReport",
    "hessian_map_check",
    "theorem1_check",
    "RateBoundReport",
    "rate_bound_check",
    "bregman_projection",
    "kkt_residual",
    "ChartMap",
    "affine_chart",
    "cubic_chart",
    "identity_chart",
    "PullbackMetric",
    "pullback_metric",
    "transform_objective",
    "chart_transport_check",
    "SweepTable",
    "discretization_error_sweep",
]


# -- Hessian-map test ------------------------------------------------------

@dataclass
class HessianMapReport:
    """Outcome of the third-derivative symmetry test.

    ``max_violation`` is normalized by ``1 + max|H|`` at the worst point;
    ``witness_value`` is the raw ``|d_k H_ij - d_j H_ik|`` there, with 1-based
    ``witness_indices = (i, j, k)``.
    """

    is_hessian_map: bool
    max_violation: float
    witness_point: list
    witness_indices: tuple
    witness_value: float
    points_tested: int
    fd_step: float
    tol: float

    def to_dict(self):
        out = asdict(self)
        out["witness_indices"] = list(self.witness_indices)
        return out


def _metric_derivatives(metric, w, h):
    d = metric.dimension
    dH = np.empty((d, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        dH[k] = (metric.materialize(w + e) - metric.materialize(w - e)) / (2.0 * h)
    return dH


def hessian_map_check(metric, sample_points, fd_step=1e-5, tol=1e-3):
    """Test ``d H_ij / d w_k == d H_ik / d w_j`` by central differences.

    Only pairs ``j > k`` are scanned since the difference is antisymmetric
    in ``(j, k)``.
    """
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    points = [as_point(p, metric.dimension) for p in sample_points]
    if not points:
        raise ValueError("need at least one sample point")
    d = metric.dimension
    best = (-1.0, None, (1, 1, 1), 0.0)
    for w in points:
        H0 = metric.materialize(w)
        dH = _metric_derivatives(metric, w, fd_step)
        # viol[i, j, k] = |dH[k, i, j] - dH[j, i, k]|
        viol = np.abs(np.transpose(dH, (1, 2, 0)) - np.transpose(dH, (1, 0, 2)))
        mask = np.zeros((d, d, d), dtype=bool)
        for j in range(d):
            mask[:, j, :j] = True
        if not mask.any():
            continue
        masked = np.where(mask, viol, -1.0)
        flat = int(np.argmax(masked))
        i, j, k = np.unravel_index(flat, masked.shape)
        raw = float(viol[i, j, k])
        normed = raw / (1.0 + float(np.abs(H0).max()))
        if normed > best[0]:
            best = (normed, w, (int(i) + 1, int(j) + 1, int(k) + 1), raw)
    max_violation, w_star, idx, raw = best
    max_violation = max(max_violation, 0.0)
    if w_star is None:
        w_star = points[0]
    return HessianMapReport(
        is_hessian_map=bool(max_violation <= tol),
        max_violation=float(max_violation),
        witness_point=[float(x) for x in w_star],
        witness_indices=idx,
        witness_value=raw,
        points_tested=len(points),
        fd_step=float(fd_step),
        tol=float(tol),
    )


# -- mirror descent as a discretization ------------------------------------

def theorem1_check(psi, obj, w0, eta, K, tol=DEFAULT_TOL):
    """Max sup-norm gap between link-function MD and the ODE-integrated MD path.

    The mirrorless run integrates the frozen-gradient ODE under the Hessian
    metric of ``psi`` instead of using the closed form.
    """
    classic = run_method(RunConfig("md_classic", eta, K, w0, tol), psi, obj, raise_on_failure=True)
    ode = run_method(
        RunConfig("md_mirrorless", eta, K, w0, tol, verify=True),
        potential_to_metric(psi), obj, raise_on_failure=True,
    )
    return float(np.max(np.abs(classic.points - ode.points)))


@dataclass
class RateBoundReport:
    passed: bool
    hypothesis_ok: bool
    eta: float
    rate: float
    f_star: float
    margins: list
    suboptimality: list
    eigen_violations: list = field(default_factory=list)
    failure: Optional[dict] = None

    @property
    def min_margin(self):
        return min(self.margins) if self.margins else float("nan")

    def to_dict(self):
        out = asdict(self)
        out["min_margin"] = self.min_margin
        return out


def _long_flow_minimum(metric, obj, w0, tol):
    T = 10.0
    for _ in range(8):
        traj = integrate_flow(metric, obj, w0, T, tol, samples=64)
        if traj.grad_norms[-1] <= 1e-10:
            return float(traj.values.min())
        T *= 2.0
    raise ConvergenceError("could not locate F* with a long flow run")


def rate_bound_check(metric, alpha, beta, obj, w0, K, f_star=None, eta=None, tol=DEFAULT_TOL):
    """Run mirrorless MD at ``eta = alpha^2 / (gamma beta)`` and compare with
    ``(F(w0) - F*) exp(-lambda alpha^2 k / (gamma beta^2))``.

    ``alpha`` and ``beta`` must bound the spectrum of ``H`` at every visited
    iterate; violations are listed and clear ``hypothesis_ok`` rather than
    failing the bound.
    """
    lam, gam = obj.strong_convexity, obj.smoothness
    if lam is None or gam is None:
        raise ValueError("objective needs strong_convexity and smoothness")
    if not 0 < alpha <= beta:
        raise ValueError("need 0 < alpha <= beta")
    if eta is None:
        eta = alpha ** 2 / (gam * beta)
    if f_star is None:
        f_star = obj.f_star if obj.f_star is not None else _long_flow_minimum(metric, obj, w0, tol)
    traj = run_method(RunConfig("md_mirrorless", eta, K, w0, tol), metric, obj)
    rate = lam * alpha ** 2 / (gam * beta ** 2)
    f0 = traj.values[0] - f_star
    subopt = traj.values - f_star
    bound = f0 * np.exp(-rate * np.arange(len(subopt)))
    margins = bound - subopt
    violations = []
    for k, w in enumerate(traj.points):
        ev = np.linalg.eigvalsh(metric.materialize(w))
        if ev[0] < alpha * (1 - 1e-12) or ev[-1] > beta * (1 + 1e-12):
            violations.append({"iteration": k, "min_eig": float(ev[0]), "max_eig": float(ev[-1])})
    return RateBoundReport(
        passed=bool(traj.ok and np.all(margins >= -1e-10)),
        hypothesis_ok=not violations,
        eta=float(eta),
        rate=float(rate),
        f_star=float(f_star),
        margins=[float(x) for x in margins],
        suboptimality=[float(x) for x in subopt],
        eigen_violations=violations,
        failure=traj.failure,
    )


# -- implicit bias ---------------------------------------------------------

def bregman_projection(psi, w0, A, b, max_iter=200):
    """``argmin D_psi(w, w0)`` subject to ``A w = b``.

    Solves the optimality system ``grad psi(w) = grad psi(w0) + A^T nu``,
    ``A w = b`` by damped Newton on the multiplier ``nu``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    w0 = psi.check_domain(w0)
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise ValueError("rows of A must be linearly independent")
    z0 = psi.link(w0)
    hmetric = potential_to_metric(psi)
    target = 1e-10 * (1.0 + np.linalg.norm(b))
    nu = np.zeros(A.shape[0])
    w = w0
    r = A @ w - b
    rr = r @ r
    for _ in range(max_iter):
        if np.sqrt(rr) <= target:
            return w
        Hinv_At = np.column_stack([hmetric._solve(w, a) for a in A])
        J = A @ Hinv_At
        step = -np.linalg.solve(J, r)
        t = 1.0
        for _ in range(60):
            nu_try = nu + t * step
            try:
                w_try = psi.inverse_link(z0 + A.T @ nu_try, w_guess=w)
            except (ConvergenceError, ValueError):
                t *= 0.5
                continue
            r_try = A @ w_try - b
            rr_try = r_try @ r_try
            if np.isfinite(rr_try) and rr_try <= (1.0 - 1e-4 * t) * rr:
                break
            t *= 0.5
        else:
            raise ConvergenceError("Bregman projection line search stalled (infeasible?)")
        nu, w, r, rr = nu_try, w_try, r_try, rr_try
    if np.sqrt(rr) <= target:
        return w
    raise ConvergenceError(f"Bregman projection did not converge in {max_iter} iterations")


def kkt_residual(psi, w0, w_final, A):
    """Part of ``grad psi(w_final) - grad psi(w0)`` outside the row space of ``A``,
    relative to ``1 + ||grad psi(w_final) - grad psi(w0)||``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    r = psi.link(w_final) - psi.link(w0)
    coef = np.linalg.lstsq(A.T, r, rcond=None)[0]
    return float(np.linalg.norm(r - A.T @ coef) / (1.0 + np.linalg.norm(r)))


# -- charts ----------------------------------------------------------------

@dataclass(frozen=True)
class ChartMap:
    """Invertible change of parameters ``w~ = forward(w)``."""

    forward: Callable
    inverse: Callable
    jacobian: Callable
    is_affine: bool
    name: str = "chart"


def affine_chart(S, shift=None):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if abs(np.linalg.det(S)) < 1e-14:
        raise MetricError("affine chart matrix is singular")
    c = np.zeros(S.shape[0]) if shift is None else np.asarray(shift, dtype=float)
    S_inv = np.linalg.inv(S)
    return ChartMap(
        lambda w: S @ w + c,
        lambda wt: S_inv @ (wt - c),
        lambda w: S.copy(),
        True,
        "affine",
    )


def identity_chart(d):
    return affine_chart(np.eye(d))


def _cubic_inverse(y):
    y = np.asarray(y, dtype=float)
    s = np.sqrt(0.25 * y * y + 1.0 / 27.0)
    x = np.cbrt(0.5 * y + s) + np.cbrt(0.5 * y - s)
    for _ in range(3):
        x = x - (x ** 3 + x - y) / (3.0 * x * x + 1.0)
    return x


def cubic_chart():
    """Componentwise ``w~_i = w_i + w_i^3``."""
    return ChartMap(
        lambda w: w + w ** 3,
        _cubic_inverse,
        lambda w: np.diag(1.0 + 3.0 * w * w),
        False,
        "cubic",
    )


class PullbackMetric(MetricTensor):
    """Metric in the chart ``w~``: ``J^{-T} H(w) J^{-1}`` with ``J`` the forward Jacobian at ``w``."""

    def __init__(self, metric, chart):
        super().__init__(metric.dimension)
        self.base = metric
        self.chart = chart
        self.name = f"pullback({metric.name}, {chart.name})"

    def _jac(self, wt):
        w = self.chart.inverse(wt)
        J = np.asarray(self.chart.jacobian(w), dtype=float)
        if not np.isfinite(np.linalg.cond(J)) or np.linalg.cond(J) > 1e14:
            raise MetricError(f"{self.name}: singular chart Jacobian")
        return w, J

    def in_domain(self, wt):
        w = self.chart.inverse(wt)
        return bool(np.all(np.isfinite(w))) and self.base.in_domain(w)

    def _materialize(self, wt):
        w, J = self._jac(wt)
        Jinv = np.linalg.inv(J)
        H = Jinv.T @ self.base._materialize(w) @ Jinv
        return 0.5 * (H + H.T)

    def _solve(self, wt, v):
        w, J = self._jac(wt)
        return J @ self.base._solve(w, J.T @ v)

    def sample_point(self, rng, scale=1.0):
        return self.chart.forward(self.base.sample_point(rng, scale))


def pullback_metric(metric, chart):
    return PullbackMetric(metric, chart)


def transform_objective(obj, chart):
    """``F~(w~) = F(chart.inverse(w~))`` with gradient ``J^{-T} grad F``."""

    def value(wt):
        return obj.value(chart.inverse(wt))

    def gradient(wt):
        w = chart.inverse(wt)
        return np.linalg.solve(np.asarray(chart.jacobian(w)).T, obj.gradient(w))

    hint = None
    if obj.optimum_hint is not None:
        hint = (chart.forward(np.asarray(obj.optimum_hint[0])), obj.optimum_hint[1])
    return Objective(obj.dimension, value, gradient, name=f"{obj.name}@{chart.name}", optimum_hint=hint)


def chart_transport_check(metric, chart, obj, w0, eta, K, method="md_mirrorless", tol=DEFAULT_TOL):
    """Run ``method`` in both charts and return ``||g(w_k) - w~_k||`` per iterate."""
    w0 = as_point(w0, metric.dimension)
    orig = run_method(RunConfig(method, eta, K, w0, tol), metric, obj, raise_on_failure=True)
    moved = run_method(
        RunConfig(method, eta, K, chart.forward(w0), tol),
        pullback_metric(metric, chart), transform_objective(obj, chart), raise_on_failure=True,
    )
    mapped = np.array([chart.forward(w) for w in orig.points])
    return np.linalg.norm(mapped - moved.points, axis=1)


# -- discretization error --------------------------------------------------

@dataclass
class SweepTable:
    rows: list
    reference: list
    T: float

    def errors(self, method):
        return [r["endpoint_error"] for r in self.rows if r["method"] == method]

    def ratios(self, method):
        """Error ratio between consecutive stepsizes (in the given order)."""
        e = self.errors(method)
        return [e[i] / e[i + 1] for i in range(len(e) - 1)]

    def methods(self):
        seen = []
        for r in self.rows:
            if r["method"] not in seen:
                seen.append(r["method"])
        return seen

    def to_dict(self):
        return {
            "T": self.T,
            "reference_endpoint": self.reference,
            "rows": self.rows,
            "ratios": {m: self.ratios(m) for m in self.methods()},
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["eta", "method", "endpoint_error"])
            for r in self.rows:
                writer.writerow([repr(float(r["eta"])), r["method"], repr(float(r["endpoint_error"]))])


def discretization_error_sweep(metric, obj, w0, T, etas, methods=("ngd", "md_mirrorless"),
                               tol=DEFAULT_TOL, ref_tol=1e-12):
    """Endpoint distance ``||w_K - w_flow(T)||`` for ``K = T / eta`` steps of each method."""
    w0 = as_point(w0, metric.dimension)
    steps = []
    for eta in etas:
        K = T / eta
        if not eta > 0 or abs(K - round(K)) > 1e-9 * max(1.0, K):
            raise ValueError(f"T={T} is not an integer multiple of eta={eta}")
        steps.append((float(eta), int(round(K))))
    ref = integrate_flow(metric, obj, w0, T, ref_tol).final
    rows = []
    for method in methods:
        for eta, K in steps:
            traj = run_method(RunConfig(method, eta, K, w0, tol), metric, obj, raise_on_failure=True)
            rows.append({"eta": eta, "method": method,
                         "endpoint_error": float(np.linalg.norm(traj.final - ref))})
    return SweepTable(rows, [float(x) for x in ref], float(T))
