"""Mirror descent, natural gradient descent and Riemannian gradient flow as
discretizations of one ODE, for Hessian and non-Hessian metrics alike."""

__version__ = "0.1.0"
