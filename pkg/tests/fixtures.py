"""Small models used as negative or degenerate test fixtures."""

import numpy as np

from mfturnpike.model import ControlProblem


class ControlOnlyCost(ControlProblem):
    """v = 0, L = u^2 (feasible for every control)."""

    d = m = 1
    name = "control_only"

    def v(self, mu, x, u):
        return np.zeros((len(x), 1))

    def L(self, mu, x, u):
        return u[:, 0] ** 2

    def dv_x(self, mu, x, u):
        return np.zeros((len(x), 1, 1))

    def dv_u(self, mu, x, u):
        return np.zeros((len(x), 1, 1))

    def dv_mu(self, mu, x, u, y):
        return np.zeros((len(x), len(y), 1, 1))

    def dL_x(self, mu, x, u):
        return np.zeros((len(x), 1))

    def dL_u(self, mu, x, u):
        return 2 * u

    def dL_mu(self, mu, x, u, y):
        return np.zeros((len(x), len(y), 1))

    def d2L_uu(self, mu, x, u):
        return np.full((len(x), 1, 1), 2.0)


class QuadraticInControl(ControlOnlyCost):
    """v = x u^2: not affine in the control."""

    name = "quadratic_in_control"

    def v(self, mu, x, u):
        return x * u ** 2

    def dv_x(self, mu, x, u):
        return (u ** 2)[:, :, None]

    def dv_u(self, mu, x, u):
        return (2 * x * u)[:, :, None]

    def d2v_xu(self, mu, x, u):
        return (2 * u)[:, :, None, None]

    def d2v_uu(self, mu, x, u):
        return (2 * x)[:, :, None, None]


class ZeroModel(ControlOnlyCost):
    """v = 0 and L = 0."""

    name = "zero"

    def L(self, mu, x, u):
        return np.zeros(len(x))

    def dL_u(self, mu, x, u):
        return np.zeros_like(u)

    def d2L_uu(self, mu, x, u):
        return np.zeros((len(x), 1, 1))


class SignedControl(ControlOnlyCost):
    """v = 1 - u^2: feasible at u = +-1 but not at their average."""

    name = "signed_control"

    def v(self, mu, x, u):
        return 1.0 - u ** 2

    def dv_u(self, mu, x, u):
        return (-2 * u)[:, :, None]

    def d2v_uu(self, mu, x, u):
        return np.full((len(x), 1, 1, 1), -2.0)
