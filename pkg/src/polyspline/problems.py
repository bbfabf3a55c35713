"""PDE definitions, test solutions, and problem specifications.

A PDE object carries everything the discretization needs: the number of
components ``r``, the element bilinear form, and the ingredients of the
polygon consistency rows.  Consistency rows for a quadratic monomial q and a
component pair (alpha, beta) are written as

    integral_P [ m(x) . grad(phi) - s * phi ]  =  c

where ``s`` (a constant, since q is quadratic) comes from the strong form
applied to q e_alpha, and ``m(x)`` (linear in x) from the integrated-by-parts
form.  The right-hand side c integrates the same expressions, with opposite
sign, over the known cells outside the polygon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

# quadratic monomial basis in the order of the polynomial coefficients
# [1, x, y, xy, x^2, y^2]
MONOMIAL_NAMES = ("1", "x", "y", "xy", "x^2", "y^2")

# Hessians of the monomials (constant 2x2 matrices)
_MONO_HESS = {
    "1": np.zeros((2, 2)),
    "x": np.zeros((2, 2)),
    "y": np.zeros((2, 2)),
    "xy": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "x^2": np.array([[2.0, 0.0], [0.0, 0.0]]),
    "y^2": np.array([[0.0, 0.0], [0.0, 2.0]]),
}


def monomial_values(points) -> np.ndarray:
    """Values of [1, x, y, xy, x^2, y^2] at points (n, 2) -> (n, 6)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([np.ones_like(x), x, y, x * y, x * x, y * y])


def monomial_gradients(points) -> np.ndarray:
    """Gradients of the 6 monomials at points (n, 2) -> (n, 6, 2)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    z = np.zeros_like(x)
    o = np.ones_like(x)
    g = np.empty((len(p), 6, 2))
    g[:, 0] = np.column_stack([z, z])
    g[:, 1] = np.column_stack([o, z])
    g[:, 2] = np.column_stack([z, o])
    g[:, 3] = np.column_stack([y, x])
    g[:, 4] = np.column_stack([2 * x, z])
    g[:, 5] = np.column_stack([z, 2 * y])
    return g


def monomial_hessian(name: str) -> np.ndarray:
    return _MONO_HESS[name]


#: monomials that generate consistency constraints (the constant drops out)
CONSTRAINT_MONOMIALS = ("x", "y", "xy", "x^2", "y^2")
#: index of each constraint monomial in the 6-entry coefficient vector
CONSTRAINT_INDICES = (1, 2, 3, 4, 5)


class Poisson:
    """Scalar Laplace operator: -div(grad u) = f."""

    r = 1

    def consistency_pairs(self, monomial: str):
        return [(0, 0)]

    def strong_coeff(self, monomial: str, alpha: int, beta: int) -> float:
        h = monomial_hessian(monomial)
        return -float(np.trace(h))

    def flux_coeff(self, monomial: str, alpha: int, beta: int, grads: np.ndarray) -> np.ndarray:
        # grads: (n, 2) gradient of the monomial at the points
        return grads

    def __repr__(self):
        return "Poisson()"


# component pairs emitted per constraint monomial for 2D elasticity; one
# redundant pair per symmetric monomial is kept so the row count matches
# r^2 * 5 - 5 = 15, and the cross pair that is genuinely independent for xy
# is included.  Redundant-but-consistent rows are removed numerically before
# the constrained solve.
_ELASTICITY_PAIRS = {
    "x": [(0, 0), (1, 0), (0, 1)],
    "y": [(1, 1), (0, 1), (1, 0)],
    "xy": [(0, 0), (1, 1), (0, 1), (1, 0)],
    "x^2": [(0, 0), (1, 0), (0, 1)],
    "y^2": [(1, 1), (0, 1)],
}


@dataclass
class Elasticity:
    """2D linear elasticity (plane strain) with Lame parameters."""

    lam: float
    mu: float
    r = 2

    @classmethod
    def from_young_poisson(cls, E: float, nu: float) -> "Elasticity":
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
        return cls(lam=lam, mu=mu)

    def consistency_pairs(self, monomial: str):
        return list(_ELASTICITY_PAIRS[monomial])

    def strong_coeff(self, monomial: str, alpha: int, beta: int) -> float:
        h = monomial_hessian(monomial)
        s = -(self.mu + self.lam) * float(h[alpha, beta])
        if alpha == beta:
            s -= self.mu * float(np.trace(h))
        return s

    def flux_coeff(self, monomial: str, alpha: int, beta: int, grads: np.ndarray) -> np.ndarray:
        m = np.zeros_like(grads)
        if alpha == beta:
            m += self.mu * grads
        m[:, alpha] += self.mu * grads[:, beta]
        m[:, beta] += self.lam * grads[:, alpha]
        return m

    def __repr__(self):
        return f"Elasticity(lam={self.lam}, mu={self.mu})"


# ----------------------------------------------------------------------
# Franke's test function
# ----------------------------------------------------------------------

_FRANKE_COEF = (0.75, 0.75, 0.5, -0.2)


def _franke_terms(x, y):
    e1 = -((9 * x - 2) ** 2 + (9 * y - 2) ** 2) / 4.0
    e2 = -((9 * x + 1) ** 2) / 49.0 - (9 * y + 1) / 10.0
    e3 = -((9 * x - 7) ** 2 + (9 * y - 3) ** 2) / 4.0
    e4 = -((9 * x - 4) ** 2) - (9 * y - 7) ** 2
    return np.exp(e1), np.exp(e2), np.exp(e3), np.exp(e4)


def franke_2d(points) -> np.ndarray:
    """Franke's four-term exponential test function on (n, 2) points."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    t = _franke_terms(x, y)
    return sum(c * ti for c, ti in zip(_FRANKE_COEF, t))


def franke_2d_gradient(points) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    t = _franke_terms(x, y)
    dx = (
        -9 * (9 * x - 2) / 2.0,
        -18 * (9 * x + 1) / 49.0,
        -9 * (9 * x - 7) / 2.0,
        -18 * (9 * x - 4),
    )
    dy = (
        -9 * (9 * y - 2) / 2.0,
        -9 / 10.0 * np.ones_like(y),
        -9 * (9 * y - 3) / 2.0,
        -18 * (9 * y - 7),
    )
    gx = sum(c * ti * dxi for c, ti, dxi in zip(_FRANKE_COEF, t, dx))
    gy = sum(c * ti * dyi for c, ti, dyi in zip(_FRANKE_COEF, t, dy))
    return np.column_stack([gx, gy])


def franke_2d_laplacian(points) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    t = _franke_terms(x, y)
    dx = (
        -9 * (9 * x - 2) / 2.0,
        -18 * (9 * x + 1) / 49.0,
        -9 * (9 * x - 7) / 2.0,
        -18 * (9 * x - 4),
    )
    dy = (
        -9 * (9 * y - 2) / 2.0,
        -9 / 10.0 * np.ones_like(y),
        -9 * (9 * y - 3) / 2.0,
        -18 * (9 * y - 7),
    )
    dxx = (-81 / 2.0, -162 / 49.0, -81 / 2.0, -162.0)
    dyy = (-81 / 2.0, 0.0, -81 / 2.0, -162.0)
    out = np.zeros_like(x)
    for c, ti, dxi, dyi, xxi, yyi in zip(_FRANKE_COEF, t, dx, dy, dxx, dyy):
        out += c * ti * (dxi**2 + dyi**2 + xxi + yyi)
    return out


# ----------------------------------------------------------------------
# Problem specifications
# ----------------------------------------------------------------------

@dataclass
class ProblemSpec:
    """A PDE together with its data and (optionally) the exact solution.

    ``source``, ``dirichlet`` and ``neumann`` take (n, 2) point arrays and
    return (n,) for scalar problems or (n, r) for vector ones.
    ``dirichlet_region`` selects the Dirichlet part of the boundary from
    edge-midpoint coordinates; None fixes the whole boundary.
    """

    pde: object
    source: Callable
    dirichlet: Callable
    neumann: Optional[Callable] = None
    dirichlet_region: Optional[Callable] = None
    exact_value: Optional[Callable] = None
    exact_grad: Optional[Callable] = None


def franke_poisson() -> ProblemSpec:
    """Poisson problem whose exact solution is Franke's function."""
    return ProblemSpec(
        pde=Poisson(),
        source=lambda p: -franke_2d_laplacian(p),
        dirichlet=franke_2d,
        exact_value=franke_2d,
        exact_grad=franke_2d_gradient,
    )


def quadratic_poisson(coeffs=(2.0, 1.0, 0.0, 1.0, 1.0, -1.0)) -> ProblemSpec:
    """Poisson problem with an exact quadratic solution (patch test).

    ``coeffs`` orders [1, x, y, xy, x^2, y^2]; the default is
    u = x^2 + xy - y^2 + x + 2.
    """
    c = np.asarray(coeffs, dtype=float)

    def value(p):
        return monomial_values(p) @ c

    def grad(p):
        return np.einsum("nmk,m->nk", monomial_gradients(p), c)

    lap = 2.0 * (c[4] + c[5])
    return ProblemSpec(
        pde=Poisson(),
        source=lambda p: np.full(len(np.atleast_2d(p)), -lap),
        dirichlet=value,
        exact_value=value,
        exact_grad=grad,
    )


def cubic_poisson() -> ProblemSpec:
    """Poisson problem with the cubic exact solution x^3 + y^3 + x^2 y.

    Quadratic bases cannot represent it, but the bulk approximation constant
    is tiny, which makes errors from nonconforming polygon cells visible at
    coarse resolutions (used by the constraint-ablation study).
    """

    def value(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        return x**3 + y**3 + x * x * y

    def grad(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        return np.column_stack([3 * x * x + 2 * x * y, 3 * y * y + x * x])

    def source(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        return -(6 * x + 8 * y)

    return ProblemSpec(pde=Poisson(), source=source, dirichlet=value,
                       exact_value=value, exact_grad=grad)


def manufactured_elasticity(E: float = 200.0, nu: float = 0.35,
                            a: float = 0.1, b: float = 0.05) -> ProblemSpec:
    """Linear elasticity with a smooth manufactured displacement field

    u = (a sin(pi x) sin(pi y),  b cos(pi x) cos(pi y)).
    """
    pde = Elasticity.from_young_poisson(E, nu)
    lam, mu = pde.lam, pde.mu
    pi = np.pi

    def value(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        return np.column_stack([a * np.sin(pi * x) * np.sin(pi * y),
                                b * np.cos(pi * x) * np.cos(pi * y)])

    def grad(p):
        # (n, r, 2): grad[i, comp, axis]
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        g = np.empty((len(p), 2, 2))
        g[:, 0, 0] = a * pi * np.cos(pi * x) * np.sin(pi * y)
        g[:, 0, 1] = a * pi * np.sin(pi * x) * np.cos(pi * y)
        g[:, 1, 0] = -b * pi * np.sin(pi * x) * np.cos(pi * y)
        g[:, 1, 1] = -b * pi * np.cos(pi * x) * np.sin(pi * y)
        return g

    def source(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        s = np.sin(pi * x) * np.sin(pi * y)
        c = np.cos(pi * x) * np.cos(pi * y)
        f1 = pi**2 * (2 * mu * a + (mu + lam) * (a - b)) * s
        f2 = pi**2 * (2 * mu * b - (mu + lam) * (a - b)) * c
        return np.column_stack([f1, f2])

    return ProblemSpec(
        pde=pde,
        source=source,
        dirichlet=value,
        exact_value=value,
        exact_grad=grad,
    )
