"""Finite-horizon optimal control of the particle system.

Time stepping is classical RK4 on a uniform grid of K steps. Controls, states and
costates are kept on the half-step grid (2K + 1 points) so that every RK4 stage
sees 4th-order accurate data; midpoint states come from cubic Hermite
interpolation of the nodal values and velocities.

Two sweeps solve the optimality system X' = grad_Psi H, Psi' = -grad_X H,
Psi(T) = -grad phi(X(T)), u = argmax_u h:

* ``sweep``: integrate X forward for the current control, Psi backward, replace the
  control by the pointwise maximiser with relaxation (plus Anderson mixing).
* ``diagonal``: integrate in the coordinates (Y, Lambda) given by the Riccati /
  Lyapunov transform at a stationary triple. Y is stable forward in time and
  Lambda is stable backward, so each pass is well conditioned even for long
  horizons; the two passes only talk through the boundary conditions.

``direct_gradient_descent`` minimises the same discretised cost over the control
grid and serves as an independent check.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DimensionError, InstabilityError, ModelAssumptionError, NonconvergenceError
from .hamiltonian import costate_drift, hamiltonian_value, pointwise_control_gradient
from .lift import lifted_hessian


@dataclass
class PMPOptions:
    method: str = "auto"          # "auto", "sweep" or "diagonal"
    tol: float = 1e-10
    max_sweeps: int = 300
    theta: float = 0.5
    anderson: int = 6
    control_tol: float = 1e-13
    blowup: float = 1e8


@dataclass
class GDOptions:
    max_iter: int = 2000
    gtol: float = 1e-9
    armijo: float = 1e-4
    step0: float = 0.5
    ftol: float = 1e-15           # stop when the relative cost decrease stalls below this
    coarsen: int = 10             # warm start from a grid this many times coarser (0 disables)


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray
    Psi: np.ndarray
    U: np.ndarray
    U_fine: np.ndarray
    X_fine: np.ndarray = None
    Psi_fine: np.ndarray = None
    cost: float = np.nan
    iterations: int = 0
    trace: list = field(default_factory=list)
    method: str = ""
    control_residual: float = np.nan
    transversality_residual: float = np.nan
    gradient_norm: float = np.nan

    @property
    def T(self):
        return float(self.t[-1])

    @property
    def K(self):
        return len(self.t) - 1

    @property
    def pmp_residual(self):
        last = self.trace[-1] if self.trace and self.method != "gradient" else 0.0
        return float(max(self.control_residual, self.transversality_residual, last))


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def maximize_hamiltonian_pointwise(problem, mu, x, psi, u_init, tol=1e-13, max_iter=50):
    """Newton ascent on u -> h(mu, x_i, psi_i, u) at every point (strictly concave in u)."""
    u = np.array(u_init, dtype=float)
    for _ in range(max_iter):
        g = pointwise_control_gradient(problem, mu, x, psi, u)
        if np.max(np.abs(g)) <= tol * max(1.0, np.max(np.abs(u))):
            return u
        hess = np.einsum("nc,ncjk->njk", psi, problem.d2v_uu(mu, x, u)) - problem.d2L_uu(mu, x, u)
        try:
            np.linalg.cholesky(-hess)
        except np.linalg.LinAlgError as exc:
            raise ModelAssumptionError("Hamiltonian is not strictly concave in the control") from exc
        u = u - np.linalg.solve(hess, g[..., None])[..., 0]
    raise NonconvergenceError("pointwise Hamiltonian maximisation did not converge")


def _best_control(problem, X, Psi, U_guess, tol):
    if problem.closed_form_control is not None:
        return problem.closed_form_control(X, Psi)
    return maximize_hamiltonian_pointwise(problem, X, X, Psi, U_guess, tol)


def _rk4(field_fn, y0, h, K, forward, blowup):
    """RK4 over K steps; field_fn(j, y) takes a half-step grid index j. Returns nodal values and slopes."""
    ys = np.empty((K + 1,) + y0.shape)
    fs = np.empty_like(ys)
    if forward:
        ys[0] = y0
        order, s = range(K), h
    else:
        ys[K] = y0
        order, s = range(K - 1, -1, -1), -h
    for k in order:
        j0, jm, j1 = (2 * k, 2 * k + 1, 2 * k + 2) if forward else (2 * k + 2, 2 * k + 1, 2 * k)
        a = k if forward else k + 1
        b = k + 1 if forward else k
        y = ys[a]
        k1 = field_fn(j0, y)
        k2 = field_fn(jm, y + 0.5 * s * k1)
        k3 = field_fn(jm, y + 0.5 * s * k2)
        k4 = field_fn(j1, y + s * k3)
        fs[a] = k1
        ys[b] = y + s / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.abs(ys[b]).max() <= blowup:   # also catches NaN
            raise InstabilityError(f"integration blew up at step {k}")
    last = K if forward else 0
    fs[last] = field_fn(2 * last, ys[last])
    return ys, fs


def _fine(ys, fs, h):
    """Half-step grid values from nodal values and slopes (cubic Hermite midpoints)."""
    K = len(ys) - 1
    out = np.empty((2 * K + 1,) + ys.shape[1:])
    out[0::2] = ys
    out[1::2] = 0.5 * (ys[:-1] + ys[1:]) + h / 8.0 * (fs[:-1] - fs[1:])
    return out


def simpson_weights(K, h):
    w = np.full(2 * K + 1, 0.0)
    w[0::2] = 2.0
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 6.0


def _state_pass(problem, X0, U_fine, h, K, blowup):
    def f(j, X):
        return problem.v(X, X, U_fine[j])
    return _rk4(f, X0, h, K, True, blowup)


def _costate_pass(problem, X_fine, U_fine, h, K, blowup):
    XT = X_fine[-1]
    psiT = -problem.dphi_mu(XT, XT)

    def f(j, Psi):
        return -costate_drift(problem, X_fine[j], Psi, U_fine[j])
    return _rk4(f, psiT, h, K, False, blowup)


def rollout_cost(problem, X0, U_fine, T, K, blowup=1e8):
    """Discretised cost: RK4 states, Simpson quadrature of the running cost, terminal cost."""
    h = T / K
    xs, fs = _state_pass(problem, X0, U_fine, h, K, blowup)
    X_fine = _fine(xs, fs, h)
    run = np.array([np.mean(problem.L(X_fine[j], X_fine[j], U_fine[j])) for j in range(2 * K + 1)])
    return float(simpson_weights(K, h) @ run + problem.phi(xs[-1])), X_fine


def _controls(problem, X_fine, Psi_fine, U_guess, tol):
    if problem.closed_form_control is not None:
        return problem.closed_form_control(X_fine, Psi_fine)
    return np.stack([maximize_hamiltonian_pointwise(problem, X_fine[j], X_fine[j], Psi_fine[j],
                                                    U_guess[j], tol)
                     for j in range(len(X_fine))])


def _finish(problem, X0, T, K, X_fine, Psi_fine, U_fine, method, iterations, trace):
    h = T / K
    cost, _ = rollout_cost(problem, X0, U_fine, T, K)
    ctrl = max(float(np.max(np.abs(pointwise_control_gradient(problem, X_fine[j], X_fine[j],
                                                              Psi_fine[j], U_fine[j]))))
               for j in range(0, 2 * K + 1))
    XT = X_fine[-1]
    trans = float(np.max(np.abs(Psi_fine[-1] + problem.dphi_mu(XT, XT))))
    return Trajectory(np.linspace(0.0, T, K + 1), X_fine[0::2].copy(), Psi_fine[0::2].copy(),
                      U_fine[0::2].copy(), U_fine, X_fine, Psi_fine, cost, iterations, trace,
                      method, ctrl, trans)


def _check_inputs(problem, X0, T, K):
    X0 = problem.check_arrays(X0)[0]
    if not (T > 0):
        raise DimensionError("horizon T must be positive")
    if int(K) != K or K < 10:
        raise DimensionError("number of time steps K must be an integer >= 10")
    return X0


# ---------------------------------------------------------------------------
# classical sweep
# ---------------------------------------------------------------------------

def _sweep(problem, X0, T, K, opts, U_init):
    h = T / K
    N, m = len(X0), problem.m
    U = np.zeros((2 * K + 1, N, m)) if U_init is None else np.array(U_init, dtype=float)
    theta = opts.theta
    hist_u, hist_r = [], []
    trace, best = [], np.inf

    def image(U):
        xs, fs = _state_pass(problem, X0, U, h, K, opts.blowup)
        Xf = _fine(xs, fs, h)
        ps, gs = _costate_pass(problem, Xf, U, h, K, opts.blowup)
        Pf = _fine(ps, gs, h)
        return _controls(problem, Xf, Pf, U, opts.control_tol), Xf, Pf

    for it in range(1, opts.max_sweeps + 1):
        G, Xf, Pf = image(U)
        r = G - U
        res = float(np.max(np.abs(r)))
        trace.append(res)
        if res < opts.tol:
            return _finish(problem, X0, T, K, Xf, Pf, G, "sweep", it, trace)
        if res > 10 * best:
            # residual grew: damp harder and forget the mixing history
            theta *= 0.5
            hist_u, hist_r = [], []
        best = min(best, res)
        u_flat, r_flat = U.reshape(-1), r.reshape(-1)
        hist_u.append(u_flat.copy())
        hist_r.append(r_flat.copy())
        if len(hist_u) > opts.anderson + 1:
            hist_u.pop(0)
            hist_r.pop(0)
        step = theta * r_flat
        if opts.anderson and len(hist_u) > 1:
            dU = np.diff(np.array(hist_u), axis=0).T
            dR = np.diff(np.array(hist_r), axis=0).T
            gamma, *_ = np.linalg.lstsq(dR, r_flat, rcond=None)
            step = step - (dU + theta * dR) @ gamma
        U = (u_flat + step).reshape(U.shape)
    raise NonconvergenceError(f"sweep did not converge in {opts.max_sweeps} iterations "
                              f"(last increment {trace[-1]:.3e})", trace)


# ---------------------------------------------------------------------------
# sweep in Riccati-diagonalised coordinates
# ---------------------------------------------------------------------------

def _diagonal(problem, X0, T, K, opts, triple, cert):
    h = T / K
    N, d, m = len(X0), problem.d, problem.m
    n = N * d
    P, E = cert.P, cert.E
    if P.shape != (n, n):
        raise DimensionError(f"certificate is for dimension {P.shape[0]}, trajectory needs {n}")
    IPE = np.eye(n) + P @ E
    Xbar, Psibar = triple.X.reshape(-1), triple.Psi.reshape(-1)
    dX0 = X0.reshape(-1) - Xbar
    phi_fn = problem.terminal_functional()
    ubuf = {"u": triple.U.copy()}

    def state(Y, Lam):
        dX = Y - E @ Lam
        X = (Xbar + dX).reshape(N, d)
        Psi = (Psibar + Lam - P @ dX).reshape(N, d)
        return X, Psi

    def velocities(Y, Lam):
        X, Psi = state(Y, Lam)
        u = _best_control(problem, X, Psi, ubuf["u"], opts.control_tol)
        ubuf["u"] = u
        xdot = problem.v(X, X, u).reshape(-1)
        psidot = -costate_drift(problem, X, Psi, u).reshape(-1)
        lamdot = P @ xdot + psidot
        return xdot + E @ lamdot, lamdot

    def terminal_lambda(YT, lam):
        for _ in range(50):
            XT = (Xbar + YT - E @ lam).reshape(N, d)
            F = lam - P @ (YT - E @ lam) + phi_fn.grad(XT, XT).reshape(-1) + Psibar
            if np.max(np.abs(F)) < 1e-14 * max(1.0, np.max(np.abs(lam))):
                break
            J = IPE - lifted_hessian(phi_fn, XT).matrix @ E
            lam = lam - np.linalg.solve(J, F)
        return lam

    Lam_f = np.zeros((2 * K + 1, n))
    Y_f = np.zeros((2 * K + 1, n))
    trace = []
    for it in range(1, opts.max_sweeps + 1):
        Y0 = dX0 + E @ Lam_f[0]
        ys, fs = _rk4(lambda j, Y: velocities(Y, Lam_f[j])[0], Y0, h, K, True, opts.blowup)
        Y_new = _fine(ys, fs, h)
        lamT = terminal_lambda(Y_new[-1], Lam_f[-1])
        ls, gs = _rk4(lambda j, L: velocities(Y_new[j], L)[1], lamT, h, K, False, opts.blowup)
        Lam_new = _fine(ls, gs, h)
        inc = max(float(np.max(np.abs(Y_new - Y_f))), float(np.max(np.abs(Lam_new - Lam_f))))
        Y_f, Lam_f = Y_new, Lam_new
        trace.append(inc)
        if inc < opts.tol:
            break
    else:
        raise NonconvergenceError(f"diagonal sweep did not converge in {opts.max_sweeps} iterations "
                                  f"(last increment {trace[-1]:.3e})", trace)

    dX_f = Y_f - Lam_f @ E.T
    X_f = (Xbar + dX_f).reshape(2 * K + 1, N, d)
    Psi_f = (Psibar + Lam_f - dX_f @ P.T).reshape(2 * K + 1, N, d)
    U_f = _controls(problem, X_f, Psi_f, np.repeat(triple.U[None], 2 * K + 1, axis=0), opts.control_tol)
    return _finish(problem, X0, T, K, X_f, Psi_f, U_f, "diagonal", it, trace)


def solve_pmp(problem, X0, T, K, opts=None, triple=None, certificate=None, U_init=None):
    """Solve the finite-horizon optimality system for initial particles X0.

    With a stationary ``triple`` the default method is the diagonalised sweep (a
    certificate is computed when not supplied); otherwise the classical sweep runs.
    """
    opts = opts or PMPOptions()
    X0 = _check_inputs(problem, X0, T, K)
    method = opts.method
    if method == "auto":
        method = "diagonal" if triple is not None else "sweep"
    if method == "sweep":
        return _sweep(problem, X0, T, K, opts, U_init)
    if method == "diagonal":
        if triple is None:
            raise ValueError("the diagonal sweep needs a stationary triple")
        if certificate is None:
            from .spectral import certify
            certificate = certify(problem, triple)
        return _diagonal(problem, X0, T, K, opts, triple, certificate)
    raise ValueError(f"unknown method {opts.method!r}")


# ---------------------------------------------------------------------------
# direct method
# ---------------------------------------------------------------------------

def prolong_controls(U_fine, T, n_points):
    """Cubic-spline interpolation of a control history onto a uniform grid of n_points."""
    t_old = np.linspace(0.0, T, len(U_fine))
    return CubicSpline(t_old, U_fine, axis=0)(np.linspace(0.0, T, n_points))


def control_gradient(problem, X0, U_fine, T, K, blowup=1e8):
    """Cost, L^2 gradient -grad_u H on the half-step grid, and the states/costates used."""
    h = T / K
    xs, fs = _state_pass(problem, X0, U_fine, h, K, blowup)
    X_fine = _fine(xs, fs, h)
    ps, gs = _costate_pass(problem, X_fine, U_fine, h, K, blowup)
    Psi_fine = _fine(ps, gs, h)
    g = -np.stack([pointwise_control_gradient(problem, X_fine[j], X_fine[j], Psi_fine[j], U_fine[j])
                   for j in range(2 * K + 1)])
    return g, X_fine, Psi_fine


def direct_gradient_descent(problem, X0, T, K, opts=None, U_init=None):
    """Minimise the discretised cost over the control grid with Barzilai-Borwein steps and Armijo backtracking."""
    opts = opts or GDOptions()
    X0 = _check_inputs(problem, X0, T, K)
    h = T / K
    N, m = len(X0), problem.m
    w = simpson_weights(K, h)[:, None, None] / N

    def inner(a, b):
        return float(np.sum(w * a * b))

    if U_init is None and opts.coarsen and K // opts.coarsen >= 10:
        Kc = K // opts.coarsen
        coarse = direct_gradient_descent(problem, X0, T, Kc, opts)
        U_init = prolong_controls(coarse.U_fine, T, 2 * K + 1)
    U = np.zeros((2 * K + 1, N, m)) if U_init is None else np.array(U_init, dtype=float)
    J, _ = rollout_cost(problem, X0, U, T, K)
    g, Xf, Pf = control_gradient(problem, X0, U, T, K)
    step = opts.step0
    trace = [J]
    gnorm = np.sqrt(inner(g, g))
    it = 0
    for it in range(1, opts.max_iter + 1):
        if gnorm <= opts.gtol:
            break
        gg = inner(g, g)
        s = step
        while True:
            U_try = U - s * g
            J_try, _ = rollout_cost(problem, X0, U_try, T, K)
            if J_try <= J - opts.armijo * s * gg:
                break
            s *= 0.5
            if s < 1e-14:
                break
        if s < 1e-14:
            # no further decrease available at this resolution
            break
        g_new, Xf, Pf = control_gradient(problem, X0, U_try, T, K)
        du, dg = U_try - U, g_new - g
        curv = inner(du, dg)
        step = inner(du, du) / curv if curv > 0 else opts.step0
        stalled = J - J_try <= opts.ftol * max(1.0, abs(J))
        U, J, g = U_try, J_try, g_new
        gnorm = np.sqrt(inner(g, g))
        trace.append(J)
        if stalled:
            break
    traj = _finish(problem, X0, T, K, Xf, Pf, U, "gradient", it, trace)
    traj.gradient_norm = float(gnorm)
    return traj


# ---------------------------------------------------------------------------
# diagnostics on a trajectory
# ---------------------------------------------------------------------------

def hamiltonian_series(problem, traj):
    return np.array([hamiltonian_value(problem, traj.X[k], traj.Psi[k], traj.U[k])
                     for k in range(traj.K + 1)])


def hamiltonian_defect(problem, traj):
    """max - min of the lifted Hamiltonian along the nodes (constant for autonomous problems)."""
    H = hamiltonian_series(problem, traj)
    return float(H.max() - H.min())


def eulerian_curve(traj):
    """Atoms of the state-costate law at every node, shape (K + 1, N, 2d)."""
    return np.concatenate([traj.X, traj.Psi], axis=2)


def continuity_residual(problem, traj, degree=2):
    """Weak continuity-equation defect for monomial test functions in (x, p) of degree <= degree.

    Compares central differences of t -> mean zeta(x_i, p_i) with mean grad zeta . (x', p').
    """
    from itertools import combinations_with_replacement

    Z = eulerian_curve(traj)
    K, N, k = Z.shape
    h = traj.t[1] - traj.t[0]
    vel = np.stack([np.concatenate([problem.v(traj.X[j], traj.X[j], traj.U[j]),
                                    -costate_drift(problem, traj.X[j], traj.Psi[j], traj.U[j])], axis=1)
                    for j in range(K)])
    worst = 0.0
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(k), deg):
            val = np.prod(Z[..., list(combo)], axis=-1)
            lhs = (val[2:].mean(axis=1) - val[:-2].mean(axis=1)) / (2 * h)
            grad = np.zeros_like(Z)
            for pos, c in enumerate(combo):
                rest = list(combo[:pos] + combo[pos + 1:])
                grad[..., c] += np.prod(Z[..., rest], axis=-1) if rest else 1.0
            rhs = np.sum(grad * vel, axis=-1).mean(axis=1)[1:-1]
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst
