"""Loop closure written out point by point, independent of LoopModel.

Used as a reference for the package solvers: builds each joint position
from the layout, then closes the four chains with scipy's root finder.
"""

import cmath
import math

import numpy as np
from scipy.optimize import root


def points(g, lx, qB, q1, q2, qK, qD, qG, qN, c1, c2, lLM):
    e = lambda a: cmath.exp(1j * a)
    K = g.l_LK * e(g.q_LK)
    N = K + g.l_KN * e(g.q_KN)
    B = K + g.l_BK * e(qK)
    body = e(qK + qB)
    A = B - g.l_AB * body
    C = B + g.l_BC * body
    I_cpl = C + g.side_CI * g.l_CI * body
    D = C + g.side_CD * g.l_CD * body
    H = K + g.side_KH * g.l_KH * e(qK)
    G = H + g.side_HG * g.l_HG * e(qK)
    E = D + g.l_DE * e(qD)
    J_cpl = E + g.side_EJ * g.l_EJ * e(qD)
    F = E + g.side_EF * g.l_EF * e(qD)
    u1, u2 = e(-q1), e(-(q1 + q2))
    I_fin = (c1 + 1j * g.h_I) * u1
    M = lLM * u1
    J_fin = M + (c2 + 1j * g.h_J) * u2
    A_act = N + (g.l_act + lx) * e(qN)
    F_link = G + g.l_GF * e(qG)
    return [A_act - A, I_cpl - I_fin, J_cpl - J_fin, F_link - F]


def residual(g, z):
    r = points(g, *z)
    return np.array([v for c in r for v in (c.real, c.imag)])


IK = (0, 1, 4, 5, 6, 7, 8, 9)


def solve_ik(g, q1, q2, guess):
    """Root of the eight closure equations in the inverse unknowns."""
    z = np.array(guess, dtype=float)
    z[2], z[3] = q1, q2

    def f(u):
        zz = z.copy()
        zz[list(IK)] = u
        return residual(g, zz)

    sol = root(f, z[list(IK)], tol=1e-13, method="hybr")
    z[list(IK)] = sol.x
    return z, sol.success and np.max(np.abs(f(sol.x))) < 1e-9


def wrap(a):
    return math.remainder(a, 2 * math.pi)
