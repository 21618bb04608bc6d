"""Static (stationary) problem: Newton solve of the lifted KKT system and Eulerian checks.

A stationary triple (X, Psi, u) is a zero of the lifted Hamiltonian gradient,
i.e. v(mu, x_i, u_i) = 0, the costate balance grad_X H = 0 and the control
condition grad_u H = 0 at every atom.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, DimensionError, ModelAssumptionError, NonconvergenceError
from .hamiltonian import hamiltonian_gradient, hamiltonian_value, lifted_blocks
from .lift import LiftedOperator, lifted_norm
from .measure import GROUP_TOL, EmpiricalMeasure, barycentric_projection, group_by_position


def lifted_hamiltonian(problem, X, Psi, U):
    X, U = problem.check_arrays(X, None, U)[0::2]
    Psi = problem.check_arrays(Psi)[0]
    return hamiltonian_value(problem, X, Psi, U)


def lifted_hamiltonian_gradient(problem, X, Psi, U):
    """Stacked lifted gradient, an (N, 2d + m) array [grad_X, grad_Psi, grad_u]."""
    X, U = problem.check_arrays(X, None, U)[0::2]
    Psi = problem.check_arrays(Psi)[0]
    return np.concatenate(hamiltonian_gradient(problem, X, Psi, U), axis=1)


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    cond_max: float = 1e12
    armijo: float = 1e-4
    min_step: float = 2.0 ** -20
    restarts: int = 0
    restart_scale: float = 0.1
    seed: int = 0


@dataclass
class StationaryTriple:
    X: np.ndarray
    Psi: np.ndarray
    U: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    trace: list = field(default_factory=list)

    @property
    def N(self):
        return self.X.shape[0]

    def state_costate(self):
        """Atoms of the joint state-costate law."""
        return EmpiricalMeasure(np.hstack([self.X, self.Psi]))

    def joint(self):
        """Atoms of the joint state-costate-control law."""
        return np.hstack([self.X, self.Psi, self.U])

    def multiplier(self, tol=GROUP_TOL):
        """Barycentric multiplier: per distinct position, the mean costate."""
        return barycentric_projection(self.state_costate(), self.X.shape[1], tol)


def _pack(X, Psi, U):
    return np.concatenate([X.ravel(), Psi.ravel(), U.ravel()])


def _unpack(z, n, d, m):
    return (z[:n * d].reshape(n, d), z[n * d:2 * n * d].reshape(n, d), z[2 * n * d:].reshape(n, m))


def _residual(problem, z, n, d, m):
    X, Psi, U = _unpack(z, n, d, m)
    g = np.concatenate([a.ravel() for a in hamiltonian_gradient(problem, X, Psi, U)])
    return g, float(np.sqrt(g @ g / n))


def _newton(problem, z, opts):
    n, d, m = len(z) // (2 * problem.d + problem.m), problem.d, problem.m
    g, res = _residual(problem, z, n, d, m)
    trace = [res]
    for it in range(opts.max_iter + 1):
        if res <= opts.tol:
            return z, res, it, trace
        if it == opts.max_iter:
            break
        J = lifted_blocks(problem, *_unpack(z, n, d, m)).full()
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > opts.cond_max:
            raise DegeneracyError(f"KKT Jacobian condition number {cond:.3e} exceeds {opts.cond_max:.1e}")
        step = np.linalg.solve(J, -g)
        s = 1.0
        while True:
            z_new = z + s * step
            g_new, res_new = _residual(problem, z_new, n, d, m)
            if np.isfinite(res_new) and res_new <= (1 - opts.armijo * s) * res:
                break
            s *= 0.5
            if s < opts.min_step:
                raise NonconvergenceError("Newton line search failed", trace)
        z, g, res = z_new, g_new, res_new
        trace.append(res)
    raise NonconvergenceError(f"Newton did not reach {opts.tol:.1e} in {opts.max_iter} iterations "
                              f"(residual {res:.3e})", trace)


def solve_stationary(problem, initial_guess, opts=None):
    """Newton's method with backtracking on the lifted Hamiltonian gradient.

    ``initial_guess`` is an (X, Psi, U) tuple of (N, d), (N, d), (N, m) arrays.
    """
    opts = opts or NewtonOptions()
    X0, Psi0, U0 = initial_guess
    X0, U0 = problem.check_arrays(X0, None, U0)[0::2]
    Psi0 = problem.check_arrays(Psi0)[0]
    if not (len(X0) == len(Psi0) == len(U0)):
        raise DimensionError("X, Psi and U must have the same number of atoms")
    huu = problem.d2L_uu(X0, X0, U0)
    if np.min(np.linalg.eigvalsh(0.5 * (huu + huu.transpose(0, 2, 1)))) <= 0:
        raise ModelAssumptionError("running cost is not strictly convex in the control")
    rng = np.random.default_rng(opts.seed)
    z0 = _pack(X0, Psi0, U0)
    last = None
    for attempt in range(opts.restarts + 1):
        start = z0 if attempt == 0 else z0 + opts.restart_scale * rng.normal(size=z0.shape)
        try:
            z, res, it, trace = _newton(problem, start, opts)
        except NonconvergenceError as exc:
            last = exc
            continue
        X, Psi, U = _unpack(z, len(X0), problem.d, problem.m)
        return StationaryTriple(X.copy(), Psi.copy(), U.copy(), res, it, trace)
    raise last


def constraint_differential(problem, X, U):
    """Differential of (X, u) -> v(mu_X, X, u) as a lifted operator from R^{d+m} to R^d atoms."""
    X, U = problem.check_arrays(X, None, U)[0::2]
    n = len(X)
    mult = np.concatenate([problem.dv_x(X, X, U), problem.dv_u(X, X, U)], axis=2)
    kv = problem.dv_mu(X, X, U, X)
    kern = np.concatenate([kv, np.zeros(kv.shape[:3] + (problem.m,))], axis=3)
    return LiftedOperator.from_parts(mult, kern, np.full(n, 1.0 / n))


@dataclass
class SurjectivityReport:
    pointwise_min: float          # min over atoms of sigma_min([D_x v, D_u v])
    lifted_min: float             # smallest singular value of the lifted differential
    threshold: float

    @property
    def passed(self):
        return self.pointwise_min > self.threshold and self.lifted_min > self.threshold


def surjectivity_diagnostics(problem, X, U, threshold=1e-8):
    X, U = problem.check_arrays(X, None, U)[0::2]
    blocks = np.concatenate([problem.dv_x(X, X, U), problem.dv_u(X, X, U)], axis=2)
    pointwise = min(np.linalg.svd(b, compute_uv=False)[-1] for b in blocks)
    sv = np.linalg.svd(constraint_differential(problem, X, U).matrix, compute_uv=False)
    return SurjectivityReport(float(pointwise), float(sv[-1]), threshold)


# ---------------------------------------------------------------------------
# Lagrangian <-> Eulerian transfer
# ---------------------------------------------------------------------------

def lagrangian_cost(problem, X, U):
    return float(np.mean(problem.L(X, X, U)))


def eulerian_cost(problem, X, part, uE):
    """Cost of a feedback uE (one control per distinct position of X) under the law of X."""
    return float(np.sum(part.weights * problem.L(X, part.representatives, uE)))


@dataclass
class Transfer:
    X: np.ndarray
    U: np.ndarray
    partition: object
    uE: np.ndarray
    cost_lagrangian: float
    cost_eulerian: float


def transfer_eulerian_to_lagrangian(problem, X, uE, tol=GROUP_TOL):
    """Compose a feedback on the positions of X with X; the cost is unchanged."""
    X = problem.check_arrays(X)[0]
    part = group_by_position(X, tol)
    uE = np.asarray(uE, dtype=float).reshape(part.n_groups, problem.m)
    U = uE[part.labels]
    return Transfer(X, U, part, uE, lagrangian_cost(problem, X, U), eulerian_cost(problem, X, part, uE))


def transfer_lagrangian_to_eulerian(problem, X, U, tol=GROUP_TOL, feas_tol=1e-9):
    """Average a Lagrangian control over atoms sharing a position.

    Affinity of v in u keeps the averaged control feasible; convexity of L in u
    makes the Eulerian cost no larger than the Lagrangian one.
    """
    X, U = problem.check_arrays(X, None, U)[0::2]
    scale = max(1.0, np.max(np.abs(U)))
    if np.max(np.abs(problem.v(X, X, U))) > feas_tol * scale:
        raise ValueError("Lagrangian pair is not feasible")
    part = group_by_position(X, tol)
    uE = part.group_means(U)
    resid = np.max(np.abs(problem.v(X, part.representatives, uE)))
    if resid > feas_tol * scale:
        raise ModelAssumptionError(f"averaged control is infeasible (residual {resid:.3e}); "
                                   "dynamics are not affine in the control")
    return Transfer(X, U, part, uE, lagrangian_cost(problem, X, U), eulerian_cost(problem, X, part, uE))


# ---------------------------------------------------------------------------
# Eulerian KKT residuals
# ---------------------------------------------------------------------------

@dataclass
class EulerianKKTReport:
    multiplier: float         # residual of the KKT system with the barycentric multiplier
    state_costate: float      # residual tested against functions of (x, p)
    hamiltonian: float        # norm of the Eulerian Hamiltonian gradient
    feasibility: float        # norm of v on the support

    @property
    def value(self):
        return self.multiplier


def _eulerian_terms(problem, mu, x, u, p, weights):
    """Cost gradient and constraint adjoint terms on weighted support points (x, u, p)."""
    w = weights
    # grad of the cost: grad_x L + sum_j w_j grad_mu L(x_j, u_j)(x_i), grad_u L
    cost_x = problem.dL_x(mu, x, u) + np.einsum("j,jib->ib", w, problem.dL_mu(mu, x, u, x))
    cost_u = problem.dL_u(mu, x, u)
    # adjoint of the constraint differential applied to p
    adj_x = (np.einsum("ica,ic->ia", problem.dv_x(mu, x, u), p)
             + np.einsum("j,jicb,jc->ib", w, problem.dv_mu(mu, x, u, x), p))
    adj_u = np.einsum("icj,ic->ij", problem.dv_u(mu, x, u), p)
    return cost_x - adj_x, cost_u - adj_u


def _weighted_norm(arrs, w):
    return float(np.sqrt(sum(np.sum(w * np.sum(a * a, axis=1)) for a in arrs)))


def eulerian_kkt_residual(problem, triple, tol=GROUP_TOL):
    """Residuals of the Eulerian optimality system at the law of a stationary triple.

    The multiplier is the barycentric projection of the costate; the control is the
    group mean of the Lagrangian control over atoms sharing a position.
    """
    X, Psi, U = triple.X, triple.Psi, triple.U
    part, lam = triple.multiplier(tol)
    reps, w = part.representatives, part.weights
    uE = part.group_means(U)
    rx, ru = _eulerian_terms(problem, X, reps, uE, lam, w)
    mult = _weighted_norm([rx, ru], w)

    # state-costate form: support of the joint law of (x, p) with the feedback control
    sc = group_by_position(np.hstack([X, Psi]), tol)
    sreps, sw = sc.representatives, sc.weights
    d = problem.d
    sx, sp = sreps[:, :d], sreps[:, d:]
    su = uE[group_by_position(X, tol).labels[[sc.members(g)[0] for g in range(sc.n_groups)]]]
    qx, qu = _eulerian_terms(problem, X, sx, su, sp, sw)
    sc_res = _weighted_norm([qx, qu], sw)
    vel = problem.v(X, sx, su)
    ham = _weighted_norm([qx, vel, qu], sw)
    return EulerianKKTReport(mult, sc_res, ham, _weighted_norm([vel], sw))
