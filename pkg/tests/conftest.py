"""Shared benchmark configurations used across the test suite."""

import numpy as np
import pytest

from polypi.poly import Box, Polynomial, basis, parse_poly
from polypi.systems import CostSpec, Policy, PolySystem, ValueFn

x = Polynomial.variable(1, 0)


def scalar_benchmark():
    """Scalar plant xdot = 0.01 x^2 + u with quartic state cost.

    Known quantities: quartic initial value 10(x^2+x^4) with stabilizer
    -0.1x - 0.1x^3, design degrees r=2 / d=3, performance box [-1, 1], and a
    closed-form optimal value (see `scalar_optimal_value`).
    """
    sys = PolySystem.single_input([0.01 * x ** 2], [Polynomial.constant(1, 1.0)])
    cost = CostSpec(q=0.01 * x ** 2 + 0.01 * x ** 4, R=np.array([[1.0]]))
    V0 = ValueFn.from_polynomial(10 * (x ** 2 + x ** 4), r=2)
    u1 = Policy.from_polynomials([-0.1 * x - 0.1 * x ** 3], d=3)
    omega = Box((-1.0,), (1.0,))
    return sys, cost, V0, u1, omega


def scalar_optimal_value(a=0.01, b=1.0, q2=0.01, q4=0.01, rho=1.0):
    """Closed-form optimal value for xdot = a x^2 + b u, q = q2 x^2 + q4 x^4.

    Solving the scalar HJB quadratic for V' and integrating gives
        V(x) = (2 rho / b^2) [ a x^3 / 3 + (k x^2 + c2)^{3/2} / (3k)
                               - c2^{3/2} / (3k) ],
    with c2 = b^2 q2 / rho and k = a^2 + b^2 q4 / rho.
    """
    c2 = b * b * q2 / rho
    k = a * a + b * b * q4 / rho

    def V(xv):
        xv = np.asarray(xv, dtype=float)
        return (2 * rho / (b * b)) * (a * xv ** 3 / 3.0
                                      + (k * xv ** 2 + c2) ** 1.5 / (3 * k)
                                      - c2 ** 1.5 / (3 * k))

    return V


def planar_benchmark():
    """Uncertain planar plant used for the robust feasibility workflow.

    xdot1 = x2,  xdot2 = b1 x1 - b2 x2^3 + u,  with b1, b2 in [0.5, 1]:
    a saddle at the origin for every parameter choice, softened by uncertain
    cubic damping.  The conservative stabilizer handles every vertex.
    """
    from polypi.systems import PolyFamily

    names = ("x1", "x2", "b1", "b2")
    f = (parse_poly("x2", 4, names),
         parse_poly("b1*x1 - b2*x2^3", 4, names))
    g = ((Polynomial.zero(4),), (Polynomial.constant(4, 1.0),))
    family = PolyFamily(n=2, f=f, g=g,
                        param_box=Box((0.5, 0.5), (1.0, 1.0)))
    x1, x2 = (Polynomial.variable(2, i) for i in range(2))
    cost = CostSpec(q=x1 ** 2 + x2 ** 2, R=np.array([[1.0]]))
    u1 = Policy.from_polynomials([-2 * x1 - x2], d=3)
    omega = Box((-1.0, -1.0), (1.0, 1.0))
    return family, cost, u1, omega


@pytest.fixture(scope="session")
def scalar_cfg():
    return scalar_benchmark()


@pytest.fixture(scope="session")
def scalar_vstar():
    return scalar_optimal_value()


@pytest.fixture(scope="session")
def planar_cfg():
    return planar_benchmark()
