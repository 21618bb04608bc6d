"""Independent reference computations used only by the tests."""

from itertools import permutations

import numpy as np
from scipy.linalg import solve_continuous_are


def brute_force_w2(a, b):
    """Minimum over all N! permutations of sqrt(mean |a_i - b_s(i)|^2); returns (value, perm)."""
    a = np.asarray(a, dtype=float).reshape(len(a), -1)
    b = np.asarray(b, dtype=float).reshape(len(b), -1)
    best, arg = np.inf, None
    for perm in permutations(range(len(a))):
        c = np.mean(np.sum((a - b[list(perm)]) ** 2, axis=1))
        if c < best:
            best, arg = c, perm
    return float(np.sqrt(best)), np.array(arg)


def fd_gradient(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-5):
    """Jacobian of a vector-valued f at a flat vector x, shape (len f, len x)."""
    x = np.array(x, dtype=float).ravel()
    cols = []
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.ravel(f(xp)) - np.ravel(f(xm))) / (2 * h))
    return np.array(cols).T


def kron_lyapunov(A, W):
    """Solve A E + E A' + W = 0 through the Kronecker vectorisation (column-major vec)."""
    n = A.shape[0]
    I = np.eye(n)
    K = np.kron(I, A) + np.kron(A, I)
    return np.linalg.solve(K, -W.reshape(-1, order="F")).reshape(n, n, order="F")


def care_oracle(A, B, Huu, Q):
    """Stabilising solution of A'P + PA + Q + P B Huu^{-1} B' P = 0 with Huu negative definite.

    Rewritten as the standard control Riccati equation with R = -Huu.
    """
    A = np.atleast_2d(A)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return solve_continuous_are(A, B, np.atleast_2d(Q), -np.atleast_2d(Huu))


def scalar_riccati(a, b):
    """Closed form for ScalarLQ: 2aP + 2 - b^2 P^2 / 2 = 0, positive root."""
    return (2 * a + np.sqrt(4 * a * a + 4 * b * b)) / (b * b)
