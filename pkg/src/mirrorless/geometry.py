"""Metric tensors on R^d.

A metric is a smoothly varying family of SPD matrices ``H(w)``. Every metric
here can be materialized as a dense matrix, applied to a vector, and solved
against a vector. Symmetric matrix spaces are handled through the isometric
vectorization :func:`svec` / :func:`smat`.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import DomainError, MetricError

__all__ = [
    "MetricTensor",
    "EuclideanMetric",
    "FixedSPDMetric",
    "RankOneBumpMetric",
    "BoundedRankOneMetric",
    "DiagArcsinhMetric",
    "LyapunovInverseMetric",
    "HessianMetric",
    "METRIC_NAMES",
    "make_builtin_metric",
    "metric_solve",
    "local_distance",
    "svec",
    "smat",
    "svec_dim",
    "as_point",
]

_SQRT2 = np.sqrt(2.0)


def as_point(w, dim=None):
    """Return ``w`` as a finite 1-d float array, checking length if given."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError(f"expected a vector, got shape {w.shape}")
    if dim is not None and w.shape[0] != dim:
        raise ValueError(f"expected length {dim}, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise ValueError("point has non-finite coordinates")
    return w


# -- symmetric matrix vectorization ---------------------------------------

def svec_dim(n):
    return n * (n + 1) // 2


def _side_from_dim(d):
    n = int(round((np.sqrt(8 * d + 1) - 1) / 2))
    if svec_dim(n) != d:
        raise ValueError(f"{d} is not a triangular number")
    return n


def svec(S):
    """Row-major upper triangle of a symmetric matrix, off-diagonals times sqrt(2).

    Preserves the Frobenius inner product: ``svec(A) @ svec(B) == trace(A @ B)``.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    iu = np.triu_indices(n)
    v = S[iu].copy()
    v[iu[0] != iu[1]] *= _SQRT2
    return v


def smat(v):
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    n = _side_from_dim(v.shape[0])
    iu = np.triu_indices(n)
    vals = v.copy()
    vals[iu[0] != iu[1]] /= _SQRT2
    S = np.zeros((n, n))
    S[iu] = vals
    return S + np.triu(S, 1).T


# -- base class ------------------------------------------------------------

class MetricTensor:
    """Family of SPD matrices ``H(w)`` over a domain of R^d.

    Subclasses implement :meth:`_materialize` and optionally faster
    :meth:`_apply` / :meth:`_solve`. The public methods check the domain first.

    Attributes
    ----------
    dimension : int
    name : str
    closed_form_flow : bool
        True when the frozen-gradient flow has an exact solution through a
        potential's link function (Hessian metrics only).
    """

    name = "metric"
    closed_form_flow = False

    def __init__(self, dimension):
        if int(dimension) < 1:
            raise ValueError("dimension must be positive")
        self.dimension = int(dimension)

    # capability flags mirror which methods are specialised
    @property
    def capabilities(self):
        cls = type(self)
        return {
            "materialize": True,
            "apply": True,
            "solve": True,
            "closed_form_flow": self.closed_form_flow,
            "native_solve": cls._solve is not MetricTensor._solve,
        }

    def in_domain(self, w):
        return True

    def check_domain(self, w):
        w = as_point(w, self.dimension)
        if not self.in_domain(w):
            raise DomainError(f"{self.name}: point outside metric domain", point=w)
        return w

    def materialize(self, w):
        w = self.check_domain(w)
        return self._materialize(w)

    def apply(self, w, v):
        w = self.check_domain(w)
        return self._apply(w, np.asarray(v, dtype=float))

    def solve(self, w, v):
        w = self.check_domain(w)
        return self._solve(w, np.asarray(v, dtype=float))

    def sample_point(self, rng, scale=1.0):
        """Draw a random point of the domain (used by property tests and checkers)."""
        return scale * rng.standard_normal(self.dimension)

    def _materialize(self, w):
        raise NotImplementedError

    def _apply(self, w, v):
        return self._materialize(w) @ v

    def _solve(self, w, v):
        H = self._materialize(w)
        try:
            factor = sla.cho_factor(H, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise MetricError(f"{self.name}: metric not SPD at w") from exc
        return sla.cho_solve(factor, v)

    def __repr__(self):
        return f"{type(self).__name__}(dimension={self.dimension})"


class EuclideanMetric(MetricTensor):
    name = "euclidean"

    def _materialize(self, w):
        return np.eye(self.dimension)

    def _apply(self, w, v):
        return v.copy()

    def _solve(self, w, v):
        return v.copy()


class FixedSPDMetric(MetricTensor):
    """Constant metric ``H(w) = H0``."""

    name = "fixed_spd"

    def __init__(self, H0):
        H0 = np.array(H0, dtype=float)
        if H0.ndim != 2 or H0.shape[0] != H0.shape[1]:
            raise ValueError("fixed_spd needs a square matrix")
        if not np.allclose(H0, H0.T, rtol=0, atol=1e-12 * max(1.0, np.abs(H0).max())):
            raise MetricError("fixed_spd matrix is not symmetric")
        try:
            self._factor = sla.cho_factor(H0)
        except np.linalg.LinAlgError as exc:
            raise MetricError("fixed_spd matrix is not positive definite") from exc
        super().__init__(H0.shape[0])
        self.H0 = H0

    def _materialize(self, w):
        return self.H0.copy()

    def _solve(self, w, v):
        return sla.cho_solve(self._factor, v)


class RankOneBumpMetric(MetricTensor):
    """``H(w) = I + w w^T``; the induced metric of the paraboloid graph of ||w||^2/2."""

    name = "rank_one_bump"

    def _materialize(self, w):
        return np.eye(self.dimension) + np.outer(w, w)

    def _apply(self, w, v):
        return v + w * (w @ v)

    def _solve(self, w, v):
        # Sherman-Morrison
        return v - w * (w @ v) / (1.0 + w @ w)


class BoundedRankOneMetric(MetricTensor):
    """``H(w) = I + w w^T / (1 + w^T w)``; eigenvalues lie in ``[1, 2)``."""

    name = "bounded_rank_one"
    eigen_bounds = (1.0, 2.0)

    def _materialize(self, w):
        return np.eye(self.dimension) + np.outer(w, w) / (1.0 + w @ w)

    def _apply(self, w, v):
        return v + w * (w @ v) / (1.0 + w @ w)

    def _solve(self, w, v):
        s = w @ w
        return v - w * (w @ v) / (1.0 + 2.0 * s)


class DiagArcsinhMetric(MetricTensor):
    """``H(w) = diag(1 / sqrt(w^2 + 4 alpha^4))``.

    Induced on ``w = u_+^2 - u_-^2`` by gradient flow on ``(u_+, u_-)``
    started at ``alpha * 1``.
    """

    name = "diag_arcsinh"

    def __init__(self, dimension, alpha):
        alpha = float(alpha)
        if not alpha > 0:
            raise ValueError("diag_arcsinh requires alpha > 0")
        super().__init__(dimension)
        self.alpha = alpha
        self._c = 4.0 * alpha ** 4

    def _inv_diag(self, w):
        return np.sqrt(w * w + self._c)

    def _materialize(self, w):
        return np.diag(1.0 / self._inv_diag(w))

    def _apply(self, w, v):
        return v / self._inv_diag(w)

    def _solve(self, w, v):
        return v * self._inv_diag(w)


class LyapunovInverseMetric(MetricTensor):
    """Metric on symmetric ``n x n`` matrices whose inverse is ``V -> W V + V W``.

    Points are ``svec``-vectorized SPD matrices, so ``dimension = n(n+1)/2``.
    This is the geometry induced on ``W = U U^T`` by gradient flow on ``U``.
    """

    name = "lyapunov_inverse"

    def __init__(self, n):
        n = int(n)
        if n < 1:
            raise ValueError("n must be positive")
        super().__init__(svec_dim(n))
        self.n = n

    def in_domain(self, w):
        W = smat(w)
        try:
            np.linalg.cholesky(W)
        except np.linalg.LinAlgError:
            return False
        return True

    def _solve(self, w, v):
        W, V = smat(w), smat(v)
        return svec(W @ V + V @ W)

    def _apply(self, w, v):
        W, V = smat(w), smat(v)
        X = sla.solve_continuous_lyapunov(W, V)
        return svec(0.5 * (X + X.T))

    def _materialize(self, w):
        W = smat(w)
        d = self.dimension
        # inverse metric in svec coordinates, then invert
        L = np.empty((d, d))
        for j, e in enumerate(np.eye(d)):
            E = smat(e)
            L[:, j] = svec(W @ E + E @ W)
        L = 0.5 * (L + L.T)
        H = np.linalg.inv(L)
        return 0.5 * (H + H.T)

    def sample_point(self, rng, scale=1.0):
        B = rng.standard_normal((self.n, self.n))
        return svec(scale * (B @ B.T / self.n + 0.5 * np.eye(self.n)))


class HessianMetric(MetricTensor):
    """``H(w) = hessian of a potential``; the frozen-gradient flow is exact in the dual."""

    closed_form_flow = True

    def __init__(self, potential):
        super().__init__(potential.dimension)
        self.potential = potential
        self.name = f"hessian_of({potential.name})"

    def in_domain(self, w):
        return self.potential.in_domain(w)

    def _materialize(self, w):
        return self.potential._hessian(w)

    def _solve(self, w, v):
        diag = self.potential._hessian_diag(w)
        if diag is not None:
            return v / diag
        return super()._solve(w, v)

    def _apply(self, w, v):
        diag = self.potential._hessian_diag(w)
        if diag is not None:
            return diag * v
        return self._materialize(w) @ v

    def sample_point(self, rng, scale=1.0):
        return self.potential.sample_point(rng, scale)


# -- factory ---------------------------------------------------------------

METRIC_NAMES = (
    "euclidean",
    "fixed_spd",
    "hessian_of",
    "rank_one_bump",
    "bounded_rank_one",
    "diag_arcsinh",
    "lyapunov_inverse",
)


def _need(params, key, name):
    if key not in params:
        raise ValueError(f"metric {name!r} requires parameter {key!r}")
    return params[key]


def make_builtin_metric(name, params=None):
    """Build one of the named metrics.

    Parameters
    ----------
    name : str
        One of :data:`METRIC_NAMES`.
    params : dict
        ``dim`` for the vector metrics, ``H`` for ``fixed_spd``, ``alpha`` for
        ``diag_arcsinh``, ``n`` for ``lyapunov_inverse``, and ``potential``
        plus that potential's parameters for ``hessian_of``.
    """
    params = dict(params or {})
    if name == "euclidean":
        return EuclideanMetric(_need(params, "dim", name))
    if name == "fixed_spd":
        return FixedSPDMetric(_need(params, "H", name))
    if name == "rank_one_bump":
        return RankOneBumpMetric(_need(params, "dim", name))
    if name == "bounded_rank_one":
        return BoundedRankOneMetric(_need(params, "dim", name))
    if name == "diag_arcsinh":
        return DiagArcsinhMetric(_need(params, "dim", name), _need(params, "alpha", name))
    if name == "lyapunov_inverse":
        return LyapunovInverseMetric(_need(params, "n", name))
    if name == "hessian_of":
        from .potentials import make_builtin_potential, potential_to_metric

        pot_name = _need(params, "potential", name)
        rest = {k: v for k, v in params.items() if k != "potential"}
        return potential_to_metric(make_builtin_potential(pot_name, rest))
    raise ValueError(f"unknown metric {name!r}")


def metric_solve(metric, w, v):
    """Return ``H(w)^{-1} v``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (metric.dimension,):
        raise ValueError(f"expected vector of length {metric.dimension}")
    return metric.solve(w, v)


def local_distance(metric, w, dw):
    """Infinitesimal distance ``sqrt(dw^T H(w) dw)``."""
    dw = np.asarray(dw, dtype=float)
    q = float(dw @ metric.apply(w, dw))
    return np.sqrt(max(q, 0.0))
