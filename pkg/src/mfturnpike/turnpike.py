"""Distance of a finite-horizon solution to the stationary triple, and its exponential envelope.

The turnpike bound has the shape d(t) <= c (exp(-alpha t) + exp(-alpha (T - t))).
``fit_envelope`` estimates alpha from the interior of the horizon and reports the
tightest c for that alpha.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar, nnls

from .errors import DimensionError
from .lift import lifted_hessian, lifted_norm
from .measure import group_by_position, wasserstein2

FLOOR = 1e-300
C_FAIL = 1e3


def _match(traj, triple):
    shape = traj.X.shape[1:]
    if triple.X.shape != shape or triple.Psi.shape != shape or triple.U.shape != traj.U.shape[1:]:
        raise DimensionError(f"trajectory atoms {shape} do not match the stationary triple {triple.X.shape}")


def deviation_series(traj, triple):
    """Per node (|X - Xs|, |Psi - Psis|, |u - us|) in the lifted norm, shape (K + 1, 3)."""
    _match(traj, triple)
    out = np.empty((len(traj.t), 3))
    for k in range(len(traj.t)):
        out[k] = (lifted_norm(traj.X[k] - triple.X), lifted_norm(traj.Psi[k] - triple.Psi),
                  lifted_norm(traj.U[k] - triple.U))
    return out


def eulerian_deviation(traj, triple):
    """Per node (W2 of the state-costate laws, best-permutation control discrepancy), shape (K + 1, 2)."""
    _match(traj, triple)
    bar_sc = np.hstack([triple.X, triple.Psi])
    out = np.empty((len(traj.t), 2))
    for k in range(len(traj.t)):
        out[k] = (wasserstein2(np.hstack([traj.X[k], traj.Psi[k]]), bar_sc),
                  wasserstein2(traj.U[k], triple.U))
    return out


@dataclass
class EnvelopeFit:
    alpha: float
    c: float
    satisfied: bool
    amplitudes: tuple = (np.nan, np.nan)
    beta_ratio: float = np.nan       # alpha / (beta / 2) when a prediction is supplied

    def envelope(self, t, T):
        return self.c * (np.exp(-self.alpha * t) + np.exp(-self.alpha * (T - t)))

    def to_dict(self):
        return {"alpha": self.alpha, "c": self.c, "satisfied": self.satisfied,
                "amplitudes": list(self.amplitudes), "alpha_over_beta_half": self.beta_ratio}


def _amplitudes(alpha, t, d, T):
    """Non-negative least squares for d ~ a e^{-alpha t} + b e^{-alpha (T - t)} in relative error."""
    basis = np.stack([np.exp(-alpha * t), np.exp(-alpha * (T - t))], axis=1) / d[:, None]
    coef, res = nnls(basis, np.ones_like(d))
    return coef, res


def fit_envelope(series, t, T=None, window=(0.10, 0.45), predicted_beta_half=None):
    """Fit alpha on the window [w0 T, w1 T] and set c to the tightest constant over all nodes.

    The rate comes from a two-amplitude fit (one term per boundary layer), seeded
    by the least-squares slope of log d; for a single decaying exponential both
    agree. Returns an EnvelopeFit; ``satisfied`` is False when c exceeds 1e3.
    """
    d = np.maximum(np.asarray(series, dtype=float), FLOOR)
    t = np.asarray(t, dtype=float)
    if d.shape != t.shape:
        raise DimensionError("series and time grid differ in length")
    T = float(t[-1]) if T is None else float(T)
    sel = (t >= window[0] * T - 1e-12) & (t <= window[1] * T + 1e-12)
    if sel.sum() < 4:
        raise ValueError(f"fit window holds {int(sel.sum())} nodes, at least 4 are needed")
    tw, dw = t[sel], d[sel]
    slope = -np.polyfit(tw, np.log(dw), 1)[0]
    alpha = slope
    coef = (np.nan, np.nan)
    if slope > 0:
        res = minimize_scalar(lambda a: _amplitudes(a, tw, dw, T)[1], bounds=(0.25 * slope, 4.0 * slope),
                              method="bounded", options={"xatol": 1e-13 * slope, "maxiter": 500})
        if res.fun <= _amplitudes(slope, tw, dw, T)[1]:
            alpha = float(res.x)
        coef = tuple(float(x) for x in _amplitudes(alpha, tw, dw, T)[0])
    alpha = float(max(alpha, FLOOR))
    c = float(np.max(d / (np.exp(-alpha * t) + np.exp(-alpha * (T - t)))))
    ratio = alpha / predicted_beta_half if predicted_beta_half else np.nan
    return EnvelopeFit(alpha, c, bool(c <= C_FAIL), coef, float(ratio))


def operator_norm(matrix, max_iter=200, rtol=1e-10, seed=0):
    """Largest singular value by power iteration on M'M."""
    M = np.asarray(matrix, dtype=float)
    if not np.any(M):
        return 0.0
    x = np.random.default_rng(seed).normal(size=M.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = M.T @ (M @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        new = np.sqrt(ny)
        if abs(new - est) <= rtol * new:
            return float(new)
        est = new
    return float(est)


def smallness_report(problem, triple, X0):
    """Size of the initial offset, the terminal mismatch and the terminal curvature.

    The Lagrangian quantities are lifted norms; the Eulerian ones are measured on
    the laws (W2, integrals against the stationary state-costate law, sup over support).
    """
    X0 = problem.check_arrays(X0)[0]
    Xs, Psis = triple.X, triple.Psi
    phi = problem.terminal_functional()
    trans = phi.grad(Xs, Xs) + Psis
    lag = {
        "initial_offset": lifted_norm(X0 - Xs),
        "transversality": lifted_norm(trans),
        "terminal_hessian": operator_norm(lifted_hessian(phi, Xs).matrix),
    }
    # Eulerian: integrate over the support of the stationary state-costate law
    sc = group_by_position(np.hstack([Xs, Psis]))
    xs, ps = sc.representatives[:, :problem.d], sc.representatives[:, problem.d:]
    t_e = phi.grad(Xs, xs) + ps
    pos = group_by_position(Xs).representatives
    local = phi.local_hess(Xs, pos)
    kern = phi.kernel_hess(Xs, pos, pos)
    eul = {
        "initial_distance": wasserstein2(X0, Xs),
        "transversality": float(np.sqrt(np.sum(sc.weights * np.sum(t_e * t_e, axis=1)))),
        "local_hessian_sup": float(np.max(np.linalg.norm(local, ord=2, axis=(-2, -1)))),
        "kernel_hessian_sup": float(np.max(np.linalg.norm(kern, ord=2, axis=(-2, -1)))),
    }
    return {"lagrangian": lag, "eulerian": eul}


@dataclass
class TurnpikeReport:
    t: np.ndarray
    deviation_series: np.ndarray
    eulerian_series: np.ndarray
    fit: EnvelopeFit
    eulerian_fit: EnvelopeFit
    smallness: dict
    predicted_beta_half: float = np.nan
    extras: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.deviation_series.sum(axis=1)

    @property
    def eulerian_total(self):
        return self.eulerian_series.sum(axis=1)

    @property
    def fitted_alpha(self):
        return self.fit.alpha

    @property
    def fitted_c(self):
        return self.fit.c

    @property
    def envelope_satisfied(self):
        return self.fit.satisfied

    @property
    def eulerian_dominated(self):
        """Eulerian deviations never exceed the Lagrangian ones (coupling inequality)."""
        slack = 1e-12 * (1.0 + self.deviation_series[:, :2].sum(axis=1))
        sc_lag = np.sqrt(self.deviation_series[:, 0] ** 2 + self.deviation_series[:, 1] ** 2)
        return bool(np.all(self.eulerian_series[:, 0] <= sc_lag + slack)
                    and np.all(self.eulerian_series[:, 1] <= self.deviation_series[:, 2] + slack))

    def midpoint_deviation(self):
        return float(np.interp(0.5 * self.t[-1], self.t, self.total))

    def to_dict(self):
        return {
            "horizon": float(self.t[-1]),
            "nodes": len(self.t),
            "fitted_alpha": self.fit.alpha,
            "fitted_c": self.fit.c,
            "envelope_satisfied": self.fit.satisfied,
            "lagrangian_fit": self.fit.to_dict(),
            "eulerian_fit": self.eulerian_fit.to_dict(),
            "eulerian_dominated": self.eulerian_dominated,
            "midpoint_deviation": self.midpoint_deviation(),
            "predicted_beta_half": self.predicted_beta_half,
            "smallness": self.smallness,
            **self.extras,
        }

    def plot_rows(self):
        """Rows (t, d(t), envelope(t), eulerian d(t), eulerian envelope(t))."""
        T = self.t[-1]
        return np.column_stack([self.t, self.total, self.fit.envelope(self.t, T),
                                self.eulerian_total, self.eulerian_fit.envelope(self.t, T)])


def turnpike_report(problem, traj, triple, certificate=None, X0=None, window=(0.10, 0.45)):
    beta_half = 0.5 * certificate.beta if certificate is not None else np.nan
    lag = deviation_series(traj, triple)
    eul = eulerian_deviation(traj, triple)
    pred = beta_half if np.isfinite(beta_half) else None
    fit = fit_envelope(lag.sum(axis=1), traj.t, window=window, predicted_beta_half=pred)
    efit = fit_envelope(eul.sum(axis=1), traj.t, window=window, predicted_beta_half=pred)
    X0 = traj.X[0] if X0 is None else X0
    return TurnpikeReport(traj.t, lag, eul, fit, efit, smallness_report(problem, triple, X0), beta_half)
