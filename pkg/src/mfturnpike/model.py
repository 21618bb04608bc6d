"""Mean-field control problems evaluated on particle ensembles.

Shape conventions used by every evaluator:

* ``mu``: (Nmu, d) particle array; the measure is its uniform empirical law.
* ``x``: (n, d) evaluation points, ``u``: (n, m) controls, ``y``, ``w``: probe points.
* Measure derivatives are returned for every pair of evaluation/probe points,
  e.g. ``dv_mu(mu, x, u, y)`` has shape (n, n2, d, d) with entry
  ``[i, j, c, b] = d v_c(mu, x_i, u_i) / d(mass at y_j moved along b)``.
* Trailing derivative axes follow the order in the method name, so
  ``dv_mu_x[i, j, c, b, a]`` differentiates ``dv_mu[i, j, c, b]`` in ``x_a``.

Second-order kernels default to zero; models override what they need.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, ModelEvaluationError


def _as_matrix(a, rows, cols, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != (rows, cols):
        raise DimensionError(f"{name} must have shape {(rows, cols)}, got {a.shape}")
    return a


def _as_vector(a, n, name):
    if a is None:
        return np.zeros(n)
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise DimensionError(f"{name} must have length {n}, got {a.shape}")
    return a


def _symmetric(a, name):
    if not np.allclose(a, a.T, atol=1e-12):
        raise DimensionError(f"{name} must be symmetric")
    return 0.5 * (a + a.T)


class ControlProblem:
    """Base class: dynamics v(mu, x, u), running cost L(mu, x, u), terminal cost phi(mu)."""

    d = 1
    m = 1
    name = "problem"

    # first order -------------------------------------------------------
    def v(self, mu, x, u):
        raise NotImplementedError

    def L(self, mu, x, u):
        raise NotImplementedError

    def phi(self, mu):
        return 0.0

    def dv_x(self, mu, x, u):
        raise NotImplementedError

    def dv_u(self, mu, x, u):
        raise NotImplementedError

    def dv_mu(self, mu, x, u, y):
        raise NotImplementedError

    def dL_x(self, mu, x, u):
        raise NotImplementedError

    def dL_u(self, mu, x, u):
        raise NotImplementedError

    def dL_mu(self, mu, x, u, y):
        raise NotImplementedError

    def dphi_mu(self, mu, y):
        return np.zeros((len(y), self.d))

    # second order, pointwise ------------------------------------------------
    def d2v_xx(self, mu, x, u):
        return np.zeros((len(x), self.d, self.d, self.d))

    def d2v_xu(self, mu, x, u):
        return np.zeros((len(x), self.d, self.d, self.m))

    def d2v_uu(self, mu, x, u):
        return np.zeros((len(x), self.d, self.m, self.m))

    def d2L_xx(self, mu, x, u):
        return np.zeros((len(x), self.d, self.d))

    def d2L_xu(self, mu, x, u):
        return np.zeros((len(x), self.d, self.m))

    def d2L_uu(self, mu, x, u):
        raise NotImplementedError

    # second order, measure kernels --------------------------------------
    def dv_mu_x(self, mu, x, u, y):
        return np.zeros((len(x), len(y), self.d, self.d, self.d))

    def dv_mu_u(self, mu, x, u, y):
        return np.zeros((len(x), len(y), self.d, self.d, self.m))

    def dv_mu_y(self, mu, x, u, y):
        return np.zeros((len(x), len(y), self.d, self.d, self.d))

    def dv_mu2(self, mu, x, u, y, w):
        return np.zeros((len(x), len(y), len(w), self.d, self.d, self.d))

    def dL_mu_x(self, mu, x, u, y):
        return np.zeros((len(x), len(y), self.d, self.d))

    def dL_mu_u(self, mu, x, u, y):
        return np.zeros((len(x), len(y), self.d, self.m))

    def dL_mu_y(self, mu, x, u, y):
        return np.zeros((len(x), len(y), self.d, self.d))

    def dL_mu2(self, mu, x, u, y, w):
        return np.zeros((len(x), len(y), len(w), self.d, self.d))

    def dphi_mu_x(self, mu, y):
        return np.zeros((len(y), self.d, self.d))

    def dphi_mu2(self, mu, y, w):
        return np.zeros((len(y), len(w), self.d, self.d))

    # lifted first-order quantities used by the time integrators -----------
    closed_form_control = None

    def lifted_drift(self, X, Psi, U):
        """Lifted gradient of the Hamiltonian in X at mu = law(X)."""
        n = len(X)
        gx = np.einsum("nca,nc->na", self.dv_x(X, X, U), Psi) - self.dL_x(X, X, U)
        kv = self.dv_mu(X, X, U, X)        # [i, k, c, b] = D_mu v(z_i)(x_k)
        kl = self.dL_mu(X, X, U, X)        # [i, k, b]
        return gx + (np.einsum("ikcb,ic->kb", kv, Psi) - kl.sum(axis=0)) / n

    # helpers -----------------------------------------------------------------
    def check_arrays(self, mu, x=None, u=None):
        """Validate shapes and finiteness of particle arrays; returns float copies."""
        out = []
        for arr, k, label in ((mu, self.d, "mu"), (x, self.d, "x"), (u, self.m, "u")):
            if arr is None:
                out.append(None)
                continue
            a = np.asarray(arr, dtype=float)
            if a.ndim != 2 or a.shape[1] != k:
                raise DimensionError(f"{label} must have shape (n, {k}), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ModelEvaluationError(f"{label} contains non-finite entries")
            out.append(a)
        return out

    def terminal_functional(self):
        from .lift import LawInvariantFunctional

        return LawInvariantFunctional(
            value=self.phi, grad=self.dphi_mu, local_hess=self.dphi_mu_x,
            kernel_hess=self.dphi_mu2, d=self.d, name=f"{self.name}.phi")


class LQMeanField(ControlProblem):
    """Linear dynamics with a mean-field drift and quadratic costs.

    v = A x + Abar mean(mu) + B u + c
    L = 1/2 (x - r)' Q (x - r) + 1/2 (x - mean)' Qbar (x - mean) + 1/2 u' R u
    phi = 1/2 int x' Phi x dmu + 1/2 mean' Phibar mean
    """

    name = "lq_mean_field"

    def __init__(self, A, Abar, B, Q, Qbar, R, c=None, r=None, Phi=None, Phibar=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        d = A.shape[0]
        B = np.asarray(B, dtype=float).reshape(d, -1)
        m = B.shape[1]
        self.d, self.m = d, m
        self.A = _as_matrix(A, d, d, "A")
        self.Abar = _as_matrix(Abar, d, d, "Abar")
        self.B = B
        self.Q = _symmetric(_as_matrix(Q, d, d, "Q"), "Q")
        self.Qbar = _symmetric(_as_matrix(Qbar, d, d, "Qbar"), "Qbar")
        self.R = _symmetric(_as_matrix(R, m, m, "R"), "R")
        self.c = _as_vector(c, d, "c")
        self.r = _as_vector(r, d, "r")
        self.Phi = np.zeros((d, d)) if Phi is None else _symmetric(_as_matrix(Phi, d, d, "Phi"), "Phi")
        self.Phibar = (np.zeros((d, d)) if Phibar is None
                       else _symmetric(_as_matrix(Phibar, d, d, "Phibar"), "Phibar"))
        self._gain = self.B @ np.linalg.inv(self.R)

    def v(self, mu, x, u):
        mean = mu.sum(axis=0) / len(mu)
        return x @ self.A.T + self.Abar @ mean + u @ self.B.T + self.c

    def closed_form_control(self, x, psi):
        # maximiser of <psi, B u> - u'Ru/2; broadcasts over leading axes
        return psi @ self._gain

    def lifted_drift(self, X, Psi, U):
        # the mean-field part of the running cost contributes sum_i Qbar (x_i - mean) = 0
        n = len(X)
        mean = X.sum(axis=0) / n
        return (Psi @ self.A - (X - self.r) @ self.Q - (X - mean) @ self.Qbar
                + (Psi.sum(axis=0) / n) @ self.Abar)

    def L(self, mu, x, u):
        mean = mu.sum(axis=0) / len(mu)
        dx, dm = x - self.r, x - mean
        return 0.5 * (np.einsum("ia,ab,ib->i", dx, self.Q, dx)
                      + np.einsum("ia,ab,ib->i", dm, self.Qbar, dm)
                      + np.einsum("ij,jk,ik->i", u, self.R, u))

    def phi(self, mu):
        mean = mu.mean(axis=0)
        return 0.5 * (np.mean(np.einsum("ia,ab,ib->i", mu, self.Phi, mu)) + mean @ self.Phibar @ mean)

    def dv_x(self, mu, x, u):
        return np.broadcast_to(self.A, (len(x), self.d, self.d)).copy()

    def dv_u(self, mu, x, u):
        return np.broadcast_to(self.B, (len(x), self.d, self.m)).copy()

    def dv_mu(self, mu, x, u, y):
        return np.broadcast_to(self.Abar, (len(x), len(y), self.d, self.d)).copy()

    def dL_x(self, mu, x, u):
        return (x - self.r) @ self.Q + (x - mu.mean(axis=0)) @ self.Qbar

    def dL_u(self, mu, x, u):
        return u @ self.R

    def dL_mu(self, mu, x, u, y):
        g = -(x - mu.mean(axis=0)) @ self.Qbar
        return np.broadcast_to(g[:, None, :], (len(x), len(y), self.d)).copy()

    def dphi_mu(self, mu, y):
        return y @ self.Phi + self.Phibar @ mu.mean(axis=0)

    def d2L_xx(self, mu, x, u):
        return np.broadcast_to(self.Q + self.Qbar, (len(x), self.d, self.d)).copy()

    def d2L_uu(self, mu, x, u):
        return np.broadcast_to(self.R, (len(x), self.m, self.m)).copy()

    def dL_mu_x(self, mu, x, u, y):
        return np.broadcast_to(-self.Qbar, (len(x), len(y), self.d, self.d)).copy()

    def dL_mu2(self, mu, x, u, y, w):
        return np.broadcast_to(self.Qbar, (len(x), len(y), len(w), self.d, self.d)).copy()

    def dphi_mu_x(self, mu, y):
        return np.broadcast_to(self.Phi, (len(y), self.d, self.d)).copy()

    def dphi_mu2(self, mu, y, w):
        return np.broadcast_to(self.Phibar, (len(y), len(w), self.d, self.d)).copy()


class ScalarLQ(LQMeanField):
    """v = a x + b u, L = x^2 + u^2, phi = (terminal_weight / 2) int x^2 dmu."""

    name = "scalar_lq"

    def __init__(self, a=1.0, b=1.0, terminal_weight=0.0):
        self.a, self.b = float(a), float(b)
        super().__init__(A=[[a]], Abar=[[0.0]], B=[[b]], Q=[[2.0]], Qbar=[[0.0]], R=[[2.0]],
                         Phi=[[terminal_weight]])


class NonlinearAttraction(ControlProblem):
    """Particles attract through a smooth pair kernel W and are steered by B u.

    v = -int grad W(x - y) dmu(y) + B u
    L = 1/2 (x - r)' Q (x - r) + 1/2 u' R u,   phi = 1/2 int (x - r)' Phi (x - r) dmu
    with W(z) = (kappa/2)|z|^2 + gamma s^2 exp(-|z|^2 / (2 s^2)).
    """

    name = "nonlinear_attraction"

    def __init__(self, d=1, kappa=1.0, gamma=0.3, s=1.0, B=None, Q=None, R=None, r=None, Phi=None):
        self.d = d
        B = np.eye(d) if B is None else np.asarray(B, dtype=float).reshape(d, -1)
        self.m = B.shape[1]
        self.B = B
        self.kappa, self.gamma, self.s = float(kappa), float(gamma), float(s)
        if self.s <= 0:
            raise ConfigError("kernel width s must be positive")
        self.Q = _symmetric(_as_matrix(np.eye(d) if Q is None else Q, d, d, "Q"), "Q")
        self.R = _symmetric(_as_matrix(np.eye(self.m) if R is None else R, self.m, self.m, "R"), "R")
        self.r = _as_vector(r, d, "r")
        self.Phi = np.zeros((d, d)) if Phi is None else _symmetric(_as_matrix(Phi, d, d, "Phi"), "Phi")

    def _k(self):
        return self.kappa, self.gamma, self.s

    def _pair(self, x, y):
        return x[:, None, :] - y[None, :, :]

    def v(self, mu, x, u):
        return -kernels.grad(self._pair(x, mu), *self._k()).mean(axis=1) + u @ self.B.T

    def L(self, mu, x, u):
        dx = x - self.r
        return 0.5 * (np.einsum("ia,ab,ib->i", dx, self.Q, dx) + np.einsum("ij,jk,ik->i", u, self.R, u))

    def phi(self, mu):
        dx = mu - self.r
        return 0.5 * np.mean(np.einsum("ia,ab,ib->i", dx, self.Phi, dx))

    def dv_x(self, mu, x, u):
        return -kernels.hess(self._pair(x, mu), *self._k()).mean(axis=1)

    def dv_u(self, mu, x, u):
        return np.broadcast_to(self.B, (len(x), self.d, self.m)).copy()

    def dv_mu(self, mu, x, u, y):
        return kernels.hess(self._pair(x, y), *self._k())

    def dL_x(self, mu, x, u):
        return (x - self.r) @ self.Q

    def dL_u(self, mu, x, u):
        return u @ self.R

    def dL_mu(self, mu, x, u, y):
        return np.zeros((len(x), len(y), self.d))

    def dphi_mu(self, mu, y):
        return (y - self.r) @ self.Phi

    def d2v_xx(self, mu, x, u):
        return -kernels.third(self._pair(x, mu), *self._k()).mean(axis=1)

    def d2L_xx(self, mu, x, u):
        return np.broadcast_to(self.Q, (len(x), self.d, self.d)).copy()

    def d2L_uu(self, mu, x, u):
        return np.broadcast_to(self.R, (len(x), self.m, self.m)).copy()

    def dv_mu_x(self, mu, x, u, y):
        return kernels.third(self._pair(x, y), *self._k())

    def dv_mu_y(self, mu, x, u, y):
        return -kernels.third(self._pair(x, y), *self._k())

    def dphi_mu_x(self, mu, y):
        return np.broadcast_to(self.Phi, (len(y), self.d, self.d)).copy()


MODELS = {
    "scalar_lq": ScalarLQ,
    "lq_mean_field": LQMeanField,
    "nonlinear_attraction": NonlinearAttraction,
}


def build_problem(name, params):
    """Instantiate a library model from its registry name and keyword parameters."""
    if name not in MODELS:
        raise ConfigError(f"unknown model {name!r}; choose one of {sorted(MODELS)}")
    try:
        return MODELS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from exc
    except DimensionError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from exc


# ---------------------------------------------------------------------------
# hypothesis validation
# ---------------------------------------------------------------------------

@dataclass
class HypothesisReport:
    affinity_residual: float
    min_control_curvature: float
    max_derivative_error: float
    derivative_errors: dict = field(default_factory=dict)
    affinity_tol: float = 1e-12
    derivative_tol: float = 1e-6

    @property
    def passed(self):
        return (self.affinity_residual <= self.affinity_tol and self.min_control_curvature > 0
                and self.max_derivative_error <= self.derivative_tol)

    def failures(self):
        out = []
        if self.affinity_residual > self.affinity_tol:
            out.append(f"v not affine in u (residual {self.affinity_residual:.3e})")
        if not self.min_control_curvature > 0:
            out.append(f"L not strongly convex in u (min eigenvalue {self.min_control_curvature:.3e})")
        if self.max_derivative_error > self.derivative_tol:
            worst = max(self.derivative_errors, key=self.derivative_errors.get)
            out.append(f"derivative {worst} disagrees with finite differences "
                       f"({self.max_derivative_error:.3e})")
        return out

    def to_dict(self):
        return {
            "affinity_residual": self.affinity_residual,
            "min_control_curvature": self.min_control_curvature,
            "max_derivative_error": self.max_derivative_error,
            "derivative_errors": dict(sorted(self.derivative_errors.items())),
            "passed": self.passed,
        }


def _central_diff(fun, arr, h):
    """Jacobian of fun(arr) with respect to every entry of arr: shape fun.shape + arr.shape."""
    arr = np.array(arr, dtype=float)
    base = np.asarray(fun(arr), dtype=float)
    out = np.zeros(base.shape + arr.shape)
    for idx in np.ndindex(arr.shape):
        ap, am = arr.copy(), arr.copy()
        ap[idx] += h
        am[idx] -= h
        out[(Ellipsis,) + idx] = (np.asarray(fun(ap)) - np.asarray(fun(am))) / (2 * h)
    return out


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def derivative_errors(problem, mu, x, u, y, h=1e-5):
    """Finite-difference errors of every derivative evaluator at one sample.

    ``x``, ``u``, ``y`` are single points (shape (1, d) / (1, m)). Errors are
    ||analytic - fd|| / max(1, ||fd||).
    """
    P, d, m = problem, problem.d, problem.m
    n_mu = len(mu)
    err = {}

    def at_mu(j, fn):
        # derivative with respect to the position of particle j, scaled to a measure derivative
        def g(p):
            mm = mu.copy()
            mm[j] = p
            return fn(mm)
        return n_mu * _central_diff(g, mu[j], h)

    for name, fn in (("v", P.v), ("L", P.L)):
        fx = _central_diff(lambda z: fn(mu, z[None], u)[0], x[0], h)
        fu = _central_diff(lambda z: fn(mu, x, z[None])[0], u[0], h)
        fm = at_mu(0, lambda mm: fn(mm, x, u)[0])
        dx_ = getattr(P, f"d{name}_x")(mu, x, u)[0]
        du_ = getattr(P, f"d{name}_u")(mu, x, u)[0]
        dm_ = getattr(P, f"d{name}_mu")(mu, x, u, mu[:1])[0, 0]
        err[f"d{name}_x"] = _rel(dx_, fx)
        err[f"d{name}_u"] = _rel(du_, fu)
        err[f"d{name}_mu"] = _rel(dm_, fm)

        first_x = getattr(P, f"d{name}_x")
        first_u = getattr(P, f"d{name}_u")
        kern = getattr(P, f"d{name}_mu")
        err[f"d2{name}_xx"] = _rel(getattr(P, f"d2{name}_xx")(mu, x, u)[0],
                                   _central_diff(lambda z: first_x(mu, z[None], u)[0], x[0], h))
        err[f"d2{name}_xu"] = _rel(getattr(P, f"d2{name}_xu")(mu, x, u)[0],
                                   _central_diff(lambda z: first_x(mu, x, z[None])[0], u[0], h))
        err[f"d2{name}_uu"] = _rel(getattr(P, f"d2{name}_uu")(mu, x, u)[0],
                                   _central_diff(lambda z: first_u(mu, x, z[None])[0], u[0], h))
        err[f"d{name}_mu_x"] = _rel(getattr(P, f"d{name}_mu_x")(mu, x, u, y)[0, 0],
                                    _central_diff(lambda z: kern(mu, z[None], u, y)[0, 0], x[0], h))
        err[f"d{name}_mu_u"] = _rel(getattr(P, f"d{name}_mu_u")(mu, x, u, y)[0, 0],
                                    _central_diff(lambda z: kern(mu, x, z[None], y)[0, 0], u[0], h))
        err[f"d{name}_mu_y"] = _rel(getattr(P, f"d{name}_mu_y")(mu, x, u, y)[0, 0],
                                    _central_diff(lambda z: kern(mu, x, u, z[None])[0, 0], y[0], h))
        err[f"d{name}_mu2"] = _rel(getattr(P, f"d{name}_mu2")(mu, x, u, y, mu[1:2])[0, 0, 0],
                                   at_mu(1, lambda mm: kern(mm, x, u, y)[0, 0]))

    err["dphi_mu"] = _rel(P.dphi_mu(mu, mu[:1])[0], at_mu(0, lambda mm: P.phi(mm)))
    err["dphi_mu_x"] = _rel(P.dphi_mu_x(mu, y)[0],
                            _central_diff(lambda z: P.dphi_mu(mu, z[None])[0], y[0], h))
    err["dphi_mu2"] = _rel(P.dphi_mu2(mu, y, mu[1:2])[0, 0],
                           at_mu(1, lambda mm: P.dphi_mu(mm, y)[0]))
    return err


def validate_hypotheses(problem, samples=100, seed=0, n_particles=5):
    """Sample random (mu, x, u) and check affinity in u, convexity of L in u, and derivatives."""
    rng = np.random.default_rng(seed)
    d, m = problem.d, problem.m
    aff, curv, derr = 0.0, np.inf, {}
    for _ in range(samples):
        mu = rng.normal(size=(max(n_particles, 2), d))
        x, y = rng.normal(size=(1, d)), rng.normal(size=(1, d))
        u, w = rng.normal(size=(1, m)), rng.normal(size=(1, m))
        alpha = rng.uniform()
        mix = problem.v(mu, x, (1 - alpha) * u + alpha * w)
        lin = (1 - alpha) * problem.v(mu, x, u) + alpha * problem.v(mu, x, w)
        if not (np.all(np.isfinite(mix)) and np.all(np.isfinite(lin))):
            raise ModelEvaluationError(f"{problem.name}: non-finite dynamics value")
        aff = max(aff, float(np.max(np.abs(mix - lin))))
        huu = problem.d2L_uu(mu, x, u)[0]
        curv = min(curv, float(np.linalg.eigvalsh(0.5 * (huu + huu.T))[0]))
        for k, e in derivative_errors(problem, mu, x, u, y).items():
            if not np.isfinite(e):
                raise ModelEvaluationError(f"{problem.name}: non-finite derivative {k}")
            derr[k] = max(derr.get(k, 0.0), e)
    return HypothesisReport(aff, curv, max(derr.values()), derr)
