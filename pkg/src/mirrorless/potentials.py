"""Strictly convex potentials, their link functions and Bregman divergences."""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DomainError
from .geometry import HessianMetric, as_point

__all__ = [
    "Potential",
    "SqEuclidean",
    "NegEntropy",
    "PPower",
    "Arcsinh",
    "POTENTIAL_NAMES",
    "make_builtin_potential",
    "bregman_divergence",
    "potential_to_metric",
    "link_invert_newton",
]


class Potential:
    """Strictly convex ``psi`` with link ``grad psi`` and Hessian.

    Subclasses provide ``_value``, ``_link``, and either ``_hessian_diag``
    (separable potentials) or ``_hessian``. ``_inverse_link`` is optional;
    without it :meth:`inverse_link` falls back to damped Newton.
    """

    name = "potential"

    def __init__(self, dimension):
        self.dimension = int(dimension)

    def in_domain(self, w):
        return True

    def check_domain(self, w):
        w = as_point(w, self.dimension)
        if not self.in_domain(w):
            raise DomainError(f"{self.name}: point outside potential domain", point=w)
        return w

    def value(self, w):
        return float(self._value(self.check_domain(w)))

    def link(self, w):
        return self._link(self.check_domain(w))

    def hessian(self, w):
        return self._hessian(self.check_domain(w))

    def inverse_link(self, z, w_guess=None):
        z = np.asarray(z, dtype=float)
        out = self._inverse_link(z)
        if out is NotImplemented:
            if w_guess is None:
                w_guess = self.default_guess()
            return link_invert_newton(self, z, w_guess)
        if not (np.all(np.isfinite(out)) and self.in_domain(out)):
            raise DomainError(f"{self.name}: inverse link left the domain", point=out)
        return out

    def default_guess(self):
        return np.zeros(self.dimension)

    def sample_point(self, rng, scale=1.0):
        return scale * rng.standard_normal(self.dimension)

    def _inverse_link(self, z):
        return NotImplemented

    def _hessian_diag(self, w):
        return None

    def _hessian(self, w):
        diag = self._hessian_diag(w)
        if diag is None:
            raise NotImplementedError
        return np.diag(diag)

    def __repr__(self):
        return f"{type(self).__name__}(dimension={self.dimension})"


class SqEuclidean(Potential):
    name = "sq_euclidean"

    def _value(self, w):
        return 0.5 * w @ w

    def _link(self, w):
        return w.copy()

    def _hessian_diag(self, w):
        return np.ones_like(w)

    def _inverse_link(self, z):
        return z.copy()


class NegEntropy(Potential):
    """``sum w_i log w_i`` on the positive orthant."""

    name = "neg_entropy"

    def in_domain(self, w):
        return bool(np.all(w > 0))

    def _value(self, w):
        return np.sum(w * np.log(w))

    def _link(self, w):
        return np.log(w) + 1.0

    def _hessian_diag(self, w):
        return 1.0 / w

    def _inverse_link(self, z):
        return np.exp(z - 1.0)

    def default_guess(self):
        return np.ones(self.dimension)

    def sample_point(self, rng, scale=1.0):
        return scale * np.exp(rng.uniform(-1.0, 1.0, self.dimension))


class PPower(Potential):
    """Separable ``(1/p) sum |w_i|^p`` for ``1 < p <= 2``.

    For ``p < 2`` the Hessian blows up on the coordinate hyperplanes, which
    are therefore excluded from the domain.
    """

    name = "p_power"

    def __init__(self, dimension, p):
        p = float(p)
        if not 1.0 < p <= 2.0:
            raise ValueError("p_power requires 1 < p <= 2")
        super().__init__(dimension)
        self.p = p

    def in_domain(self, w):
        return self.p == 2.0 or bool(np.all(w != 0))

    def _value(self, w):
        return np.sum(np.abs(w) ** self.p) / self.p

    def _link(self, w):
        return np.sign(w) * np.abs(w) ** (self.p - 1.0)

    def _hessian_diag(self, w):
        return (self.p - 1.0) * np.abs(w) ** (self.p - 2.0)

    def _inverse_link(self, z):
        return np.sign(z) * np.abs(z) ** (1.0 / (self.p - 1.0))

    def default_guess(self):
        return np.ones(self.dimension)


class Arcsinh(Potential):
    """``sum w_i asinh(w_i / 2a^2) - sqrt(w_i^2 + 4a^4)``.

    Its Hessian is ``diag(1/sqrt(w^2 + 4a^4))``, the geometry of a diagonal
    linear network with initialization scale ``a``.
    """

    name = "arcsinh"

    def __init__(self, dimension, alpha):
        alpha = float(alpha)
        if not alpha > 0:
            raise ValueError("arcsinh requires alpha > 0")
        super().__init__(dimension)
        self.alpha = alpha
        self._s = 2.0 * alpha ** 2
        self._c = 4.0 * alpha ** 4

    def _value(self, w):
        return np.sum(w * np.arcsinh(w / self._s) - np.sqrt(w * w + self._c))

    def _link(self, w):
        return np.arcsinh(w / self._s)

    def _hessian_diag(self, w):
        return 1.0 / np.sqrt(w * w + self._c)

    def _inverse_link(self, z):
        return self._s * np.sinh(z)


POTENTIAL_NAMES = ("sq_euclidean", "neg_entropy", "p_power", "arcsinh")


def make_builtin_potential(name, params=None):
    """Build a named potential; ``params`` holds ``dim`` and ``p`` / ``alpha``."""
    params = dict(params or {})
    if "dim" not in params:
        raise ValueError(f"potential {name!r} requires parameter 'dim'")
    d = params["dim"]
    if name == "sq_euclidean":
        return SqEuclidean(d)
    if name == "neg_entropy":
        return NegEntropy(d)
    if name == "p_power":
        if "p" not in params:
            raise ValueError("potential 'p_power' requires parameter 'p'")
        return PPower(d, params["p"])
    if name == "arcsinh":
        if "alpha" not in params:
            raise ValueError("potential 'arcsinh' requires parameter 'alpha'")
        return Arcsinh(d, params["alpha"])
    raise ValueError(f"unknown potential {name!r}")


def bregman_divergence(psi, w, w_ref):
    """``D(w, w_ref) = psi(w) - psi(w_ref) - <grad psi(w_ref), w - w_ref>``."""
    w = psi.check_domain(w)
    w_ref = psi.check_domain(w_ref)
    d = psi.value(w) - psi.value(w_ref) - psi.link(w_ref) @ (w - w_ref)
    return max(float(d), 0.0)


def potential_to_metric(psi):
    return HessianMetric(psi)


def link_invert_newton(psi, z, w_guess, max_iter=100):
    """Solve ``link(w) = z`` by damped Newton with an Armijo test on the residual.

    Raises
    ------
    ConvergenceError
        if the residual is not below ``1e-10 (1 + |z|)`` after ``max_iter``
        iterations.
    DomainError
        if no step along the Newton direction stays in the domain.
    """
    z = np.asarray(z, dtype=float)
    w = psi.check_domain(w_guess).copy()
    target = 1e-10 * (1.0 + np.linalg.norm(z))
    r = psi._link(w) - z
    rr = r @ r
    for _ in range(max_iter):
        if np.sqrt(rr) <= target:
            return w
        diag = psi._hessian_diag(w)
        step = -r / diag if diag is not None else -np.linalg.solve(psi._hessian(w), r)
        t = 1.0
        for _ in range(60):
            trial = w + t * step
            if np.all(np.isfinite(trial)) and psi.in_domain(trial):
                r_trial = psi._link(trial) - z
                rr_trial = r_trial @ r_trial
                if rr_trial <= (1.0 - 1e-4 * t) * rr:
                    break
            t *= 0.5
        else:
            if not psi.in_domain(w + t * step):
                raise DomainError(f"{psi.name}: Newton line search cannot stay in domain", point=w)
            raise ConvergenceError(f"{psi.name}: Newton line search stalled")
        w, r, rr = trial, r_trial, rr_trial
    if np.sqrt(rr) <= target:
        return w
    raise ConvergenceError(
        f"{psi.name}: link inversion did not converge in {max_iter} iterations "
        f"(residual {np.sqrt(rr):.3e})"
    )
