"""Differentiable objectives, including finite-sum stochastic ones."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import svec

__all__ = [
    "Objective",
    "StochasticObjective",
    "OBJECTIVE_NAMES",
    "make_builtin_objective",
    "quadratic",
    "least_squares",
    "least_squares_stochastic",
    "linear",
    "matrix_sensing",
    "gradient_check",
]


@dataclass(frozen=True)
class Objective:
    """``F`` with gradient and optional analytic facts.

    ``strong_convexity`` and ``smoothness`` are with respect to the Euclidean
    norm. ``optimum_hint`` is ``(w_star, F_star)`` when known.
    """

    dimension: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    name: str = "objective"
    optimum_hint: Optional[tuple] = None
    strong_convexity: Optional[float] = None
    smoothness: Optional[float] = None

    def __post_init__(self):
        lam, gam = self.strong_convexity, self.smoothness
        if lam is not None and lam < 0 or gam is not None and gam < 0:
            raise ValueError("curvature constants must be nonnegative")
        if lam is not None and gam is not None and lam > gam * (1 + 1e-12):
            raise ValueError("strong convexity exceeds smoothness")
        # accept any array-like point
        value, gradient = self.value, self.gradient
        object.__setattr__(self, "value", lambda w: value(np.asarray(w, dtype=float)))
        object.__setattr__(self, "gradient", lambda w: gradient(np.asarray(w, dtype=float)))

    @property
    def f_star(self):
        return None if self.optimum_hint is None else self.optimum_hint[1]

    def scaled(self, c):
        """Objective ``c * F``."""
        c = float(c)
        hint = None
        if self.optimum_hint is not None and c > 0:
            hint = (self.optimum_hint[0], c * self.optimum_hint[1])
        return Objective(
            self.dimension,
            lambda w: c * self.value(w),
            lambda w: c * self.gradient(w),
            name=f"{c}*{self.name}",
            optimum_hint=hint,
        )


@dataclass(frozen=True)
class StochasticObjective:
    """Finite sum ``F(w) = mean_i f(w, i)`` with uniform sampling.

    Sample indices are a pure function of ``(seed, slot)`` so any stream can
    be replayed. ``sampling="cyclic"`` sweeps the pool in order instead.
    """

    base: Objective
    pool_size: int
    sample_gradient: Callable[[np.ndarray, int], np.ndarray]
    name: str = "stochastic"
    sample_value: Optional[Callable[[np.ndarray, int], float]] = field(default=None, repr=False)

    @property
    def dimension(self):
        return self.base.dimension

    def value(self, w):
        return self.base.value(w)

    def gradient(self, w):
        return self.base.gradient(w)

    def sample_index(self, seed, slot, sampling="iid"):
        if sampling == "cyclic":
            return int(slot % self.pool_size)
        if sampling != "iid":
            raise ValueError(f"unknown sampling scheme {sampling!r}")
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(slot)])
        return int(rng.integers(self.pool_size))


def _check_spd(Q, what):
    if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError(f"{what} must be symmetric")
    ev = np.linalg.eigvalsh(Q)
    if ev[0] <= 0:
        raise ValueError(f"{what} must be positive definite")
    return ev


def quadratic(Q, b=None):
    """``F(w) = 0.5 w^T Q w - b^T w`` with SPD ``Q``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = Q.shape[0]
    if Q.shape != (d, d):
        raise ValueError("Q must be square")
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
    if b.shape != (d,):
        raise ValueError("b has the wrong length for Q")
    ev = _check_spd(Q, "Q")
    w_star = np.linalg.solve(Q, b)
    f_star = -0.5 * b @ w_star
    return Objective(
        d,
        lambda w: float(0.5 * w @ Q @ w - b @ w),
        lambda w: Q @ w - b,
        name="quadratic",
        optimum_hint=(w_star, f_star),
        strong_convexity=float(ev[0]),
        smoothness=float(ev[-1]),
    )


def _ls_arrays(A, b):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != (A.shape[0],):
        raise ValueError(f"b must have length {A.shape[0]}")
    return A, b


def least_squares(A, b):
    """``F(w) = ||A w - b||^2``."""
    A, b = _ls_arrays(A, b)
    ev = np.linalg.eigvalsh(A.T @ A)
    w_star = np.linalg.lstsq(A, b, rcond=None)[0]
    r_star = A @ w_star - b
    return Objective(
        A.shape[1],
        lambda w: float(np.sum((A @ w - b) ** 2)),
        lambda w: 2.0 * A.T @ (A @ w - b),
        name="least_squares",
        optimum_hint=(w_star, float(r_star @ r_star)),
        strong_convexity=max(0.0, 2.0 * float(ev[0])),
        smoothness=2.0 * float(ev[-1]),
    )


def least_squares_stochastic(A, b):
    """Finite-sum form of :func:`least_squares`: ``f(w, i) = m (a_i^T w - b_i)^2``."""
    A, b = _ls_arrays(A, b)
    m = A.shape[0]

    def sample_gradient(w, i):
        return 2.0 * m * A[i] * (A[i] @ w - b[i])

    def sample_value(w, i):
        return float(m * (A[i] @ w - b[i]) ** 2)

    return StochasticObjective(
        least_squares(A, b), m, sample_gradient, name="least_squares_stochastic",
        sample_value=sample_value,
    )


def linear(c):
    """``F(w) = <c, w>``."""
    c = np.asarray(c, dtype=float)
    return Objective(c.shape[0], lambda w: float(c @ w), lambda w: c.copy(), name="linear")


def matrix_sensing(As, y):
    """``F(W) = sum_i (<A_i, W> - y_i)^2`` over symmetric ``W`` in svec coordinates.

    Only the symmetric part of each sensing matrix matters on symmetric ``W``.
    """
    As = np.asarray(As, dtype=float)
    y = np.asarray(y, dtype=float)
    if As.ndim != 3 or As.shape[1] != As.shape[2]:
        raise ValueError("sensing matrices must have shape (N, n, n)")
    if y.shape != (As.shape[0],):
        raise ValueError("y must have one entry per sensing matrix")
    M = np.array([svec(0.5 * (Ai + Ai.T)) for Ai in As])
    base = least_squares(M, y)
    return Objective(
        M.shape[1], base.value, base.gradient, name="matrix_sensing",
        optimum_hint=base.optimum_hint, smoothness=base.smoothness,
    )


OBJECTIVE_NAMES = ("quadratic", "least_squares", "least_squares_stochastic", "matrix_sensing", "linear")


def make_builtin_objective(name, params):
    params = dict(params)
    try:
        if name == "quadratic":
            return quadratic(params["Q"], params.get("b"))
        if name == "least_squares":
            return least_squares(params["A"], params["b"])
        if name == "least_squares_stochastic":
            return least_squares_stochastic(params["A"], params["b"])
        if name == "matrix_sensing":
            return matrix_sensing(params["A"], params["y"])
        if name == "linear":
            return linear(params["c"])
    except KeyError as exc:
        raise ValueError(f"objective {name!r} is missing parameter {exc.args[0]!r}") from None
    raise ValueError(f"unknown objective {name!r}")


def gradient_check(obj, w, eps=1e-5):
    """Max over coordinates of ``|central difference - gradient| / (1 + |gradient|)``."""
    w = np.asarray(w, dtype=float)
    g = np.asarray(obj.gradient(w), dtype=float)
    worst = 0.0
    for i in range(w.shape[0]):
        e = np.zeros_like(w)
        e[i] = eps
        fd = (obj.value(w + e) - obj.value(w - e)) / (2 * eps)
        worst = max(worst, abs(fd - g[i]) / (1.0 + abs(g[i])))
    return worst

