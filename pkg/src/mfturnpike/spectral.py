"""Linearisation at a stationary triple: Riccati/Lyapunov certificates and hypothesis checks.

Eliminating the control from the linearised optimality system leaves

    dX' = A dX - S dPsi,     dPsi' = Q dX - A' dPsi,

with A = H_PX - H_Pu H_uu^{-1} H_uX, S = H_Pu H_uu^{-1} H_uP (negative semidefinite)
and Q = H_Xu H_uu^{-1} H_uX - H_XX = C'C. The stabilising solution P of
A'P + PA + Q + PSP = 0 and the solution E of A_cl E + E A_cl' + S = 0, with
A_cl = A + SP, block-diagonalise the system into a stable forward part and a
stable backward part.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, schur, solve_continuous_lyapunov
from scipy.optimize import minimize_scalar

from .errors import DegeneracyError, HypothesisFailure, InstabilityError, RiccatiError, StructureError
from .hamiltonian import hamiltonian_blocks, lifted_blocks
from .lift import horizontal_vertical_split
from .measure import group_by_position


@dataclass
class ReducedSystem:
    A: np.ndarray          # state matrix after eliminating the control
    B: np.ndarray          # H_Pu
    Huu_inv: np.ndarray
    Q: np.ndarray          # C'C
    C: np.ndarray
    S: np.ndarray          # B Huu_inv B'
    huu_cond: float
    q_min_eig: float


def psd_factor(Q, tol=1e-9):
    """Return (C, min eigenvalue) with C'C = Q after clipping tiny negative eigenvalues."""
    Q = 0.5 * (Q + Q.T)
    vals, vecs = np.linalg.eigh(Q)
    scale = max(1.0, np.max(np.abs(vals))) if len(vals) else 1.0
    clipped = np.where(vals < tol * scale, 0.0, vals)
    return np.sqrt(clipped)[:, None] * vecs.T, float(vals[0]) if len(vals) else 0.0


def reduce_blocks(Hxx, Hxu, Hux, Hpx, Hpu, Huu, cond_max=1e12):
    cond = float(np.linalg.cond(Huu)) if Huu.size else 1.0
    if not np.isfinite(cond) or cond > cond_max:
        raise DegeneracyError(f"H_uu is singular (condition number {cond:.3e})")
    Huu_inv = np.linalg.inv(Huu)
    A = Hpx - Hpu @ Huu_inv @ Hux
    Q = Hxu @ Huu_inv @ Hux - Hxx
    Q = 0.5 * (Q + Q.T)
    S = Hpu @ Huu_inv @ Hpu.T
    S = 0.5 * (S + S.T)
    C, qmin = psd_factor(Q)
    return ReducedSystem(A, Hpu, Huu_inv, Q, C, S, cond, qmin)


def schur_reduce(bh, cond_max=1e12):
    """Eliminate the control from the full lifted blocks."""
    def M(a, b):
        return bh[(a, b)].matrix
    return reduce_blocks(M("X", "X"), M("X", "u"), M("u", "X"), M("P", "X"), M("P", "u"), M("u", "u"),
                         cond_max)


@dataclass
class HautusResult:
    passed: bool
    margin: float          # min over unstable-or-marginal eigenvalues of sigma_min([A - lam I, B])
    worst_eigenvalue: complex


def hautus(A, B, tol=1e-8):
    """Hautus test for stabilisability of (A, B)."""
    A = np.atleast_2d(A)
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    scale = max(1.0, np.linalg.norm(np.hstack([A, B]), 2))
    margin, worst = np.inf, None
    for lam in np.linalg.eigvals(A):
        if lam.real < -tol * scale:
            continue
        s = np.linalg.svd(np.hstack([A - lam * np.eye(n), B]), compute_uv=False)[-1] if n else np.inf
        if s < margin:
            margin, worst = float(s), complex(lam)
    passed = margin > tol * scale
    return HautusResult(bool(passed), float(margin), worst)


def riccati_residual(A, S, Q, P):
    return A.T @ P + P @ A + Q + P @ S @ P


def solve_riccati(A, B, Huu_inv, C=None, Q=None, refine=5, tol=1e-9):
    """Stabilising solution P >= 0 of A'P + PA + C'C + P S P = 0 with S = B Huu_inv B'.

    Ordered real Schur form of the Hamiltonian matrix [[A, S], [-Q, -A']] followed by
    Newton-Kleinman polishing.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    S = B @ np.atleast_2d(Huu_inv) @ B.T
    S = 0.5 * (S + S.T)
    if Q is None:
        C = np.atleast_2d(np.asarray(C, dtype=float))
        Q = C.T @ C
    Q = 0.5 * (np.atleast_2d(Q) + np.atleast_2d(Q).T)
    ham = np.block([[A, S], [-Q, -A.T]])
    eig = np.linalg.eigvals(ham)
    scale = max(1.0, np.linalg.norm(ham, 2))
    if np.min(np.abs(eig.real)) <= tol * scale:
        raise RiccatiError("Hamiltonian matrix has eigenvalues on the imaginary axis")
    T, Z, sdim = schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise RiccatiError(f"stable invariant subspace has dimension {sdim}, expected {n}")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U1) > 1e12:
        raise RiccatiError("stable subspace is not a graph over the state coordinates")
    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)
    res = np.linalg.norm(riccati_residual(A, S, Q, P))
    for _ in range(refine):
        Acl = A + S @ P
        P_new = solve_continuous_lyapunov(Acl.T, -(Q - P @ S @ P))
        P_new = 0.5 * (P_new + P_new.T)
        res_new = np.linalg.norm(riccati_residual(A, S, Q, P_new))
        if not res_new < res:
            break
        P, res = P_new, res_new
    if np.max(np.linalg.eigvals(A + S @ P).real) >= 0:
        raise RiccatiError("Riccati solution is not stabilising")
    if np.linalg.eigvalsh(P)[0] < -1e-8 * max(1.0, np.linalg.norm(P)):
        raise RiccatiError("Riccati solution is not positive semidefinite")
    return P


def solve_lyapunov(A_cl, S):
    """Solve A_cl E + E A_cl' + S = 0 (Bartels-Stewart)."""
    if np.max(np.linalg.eigvals(A_cl).real) >= 0:
        raise InstabilityError("closed-loop matrix is not Hurwitz")
    E = solve_continuous_lyapunov(A_cl, -S)
    return 0.5 * (E + E.T)


def build_transform(P, E):
    """T = [[I + EP, E], [P, I]] and its inverse [[I, -E], [-P, I + PE]]."""
    n = P.shape[0]
    I = np.eye(n)
    T = np.block([[I + E @ P, E], [P, I]])
    Tinv = np.block([[I, -E], [-P, I + P @ E]])
    return T, Tinv


def linearized_matrix(A, S, Q):
    """Generator of (dX, dPsi) for the linearised optimality system."""
    return np.block([[A, -S], [Q, -A.T]])


def diagonalization_residual(A, S, Q, P, E):
    """Max-abs defect of T M T^{-1} = diag(A_cl, -A_cl')."""
    T, Tinv = build_transform(P, E)
    Acl = A + S @ P
    n = A.shape[0]
    target = np.block([[Acl, np.zeros((n, n))], [np.zeros((n, n)), -Acl.T]])
    return float(np.max(np.abs(T @ linearized_matrix(A, S, Q) @ Tinv - target)))


def decay_constants(A_cl, margin=0.05, max_points=400):
    """(M, beta) with |exp(t A_cl)| <= M exp(-beta t), beta = -(spectral abscissa)(1 - margin).

    M is the largest value of |exp(t A_cl)| exp(beta t) on a geometric time grid,
    refined by a bounded scalar search around the best grid point.
    """
    alpha0 = float(np.max(np.linalg.eigvals(A_cl).real))
    if alpha0 >= 0:
        raise InstabilityError(f"closed-loop spectral abscissa {alpha0:.3e} is not negative")
    beta = -alpha0 * (1.0 - margin)
    rate = -alpha0
    t_max = (40.0 / (margin * rate)) if margin > 0 else 50.0 / rate

    def growth(t):
        return np.linalg.norm(expm(t * A_cl), 2) * np.exp(beta * t)

    ts, vals = [0.0], [1.0]
    t, falling = 1e-3 / rate, 0
    for _ in range(max_points):
        val = growth(t)
        falling = falling + 1 if val < vals[-1] else 0
        ts.append(t)
        vals.append(val)
        if (falling >= 8 and val < 1e-3 * max(vals)) or t > t_max:
            break
        t *= 1.15
    i = int(np.argmax(vals))
    M = vals[i]
    if 0 < i < len(ts) - 1:
        res = minimize_scalar(lambda s: -growth(s), bounds=(ts[i - 1], ts[i + 1]), method="bounded",
                              options={"xatol": 1e-10 * ts[i + 1]})
        M = max(M, -float(res.fun))
    return float(M), float(beta)


def detectability_feedback(A, C):
    """Gain K with A' + C'K Hurwitz, from the Riccati equation of the dual pair (A', C')."""
    n = A.shape[0]
    Y = solve_riccati(A.T, C.T, -np.eye(C.shape[0]), Q=np.eye(n))
    return -C @ Y


@dataclass
class LTReport:
    huu_invertible: bool
    q_psd: bool
    stabilizable: bool
    detectable: bool
    huu_cond: float
    q_min_eig: float
    stabilizable_margin: float
    detectable_margin: float

    @property
    def passed(self):
        return self.huu_invertible and self.q_psd and self.stabilizable and self.detectable

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in self.__dict__.items()} | {"passed": bool(self.passed)}


def _check_reduced(blocks, tol, cond_max):
    Hxx, Hxu, Hux, Hpx, Hpu, Huu = blocks
    try:
        red = reduce_blocks(Hxx, Hxu, Hux, Hpx, Hpu, Huu, cond_max)
    except DegeneracyError:
        cond = float(np.linalg.cond(Huu))
        return LTReport(False, False, False, False, cond, np.nan, 0.0, 0.0), None
    scale = max(1.0, np.linalg.norm(red.Q, 2))
    q_ok = red.q_min_eig >= -tol * scale
    st = hautus(red.A, red.B, tol)
    de = hautus(red.A.T, red.C.T, tol)
    return LTReport(True, bool(q_ok), st.passed, de.passed, red.huu_cond, red.q_min_eig,
                    st.margin, de.margin), red


def check_lt_hypotheses(bh, tol=1e-8, cond_max=1e12):
    """Invertible H_uu, Q >= 0, stabilisability and detectability on the full lifted blocks."""
    def M(a, b):
        return bh[(a, b)].matrix
    report, _ = _check_reduced((M("X", "X"), M("X", "u"), M("u", "X"), M("P", "X"), M("P", "u"),
                                M("u", "u")), tol, cond_max)
    return report


@dataclass
class ETReport:
    structure_ok: bool
    horizontal: LTReport
    vertical_atoms: list
    vertical_invertible_psd: bool
    vertical_stabilizable: bool
    vertical_detectable: bool
    failing_atoms: list = field(default_factory=list)
    intrinsic_mismatch: float = 0.0
    leakage: float = 0.0

    @property
    def horizontal_passed(self):
        return self.structure_ok and self.horizontal is not None and self.horizontal.passed

    @property
    def vertical_passed(self):
        return self.vertical_invertible_psd and self.vertical_stabilizable and self.vertical_detectable

    @property
    def passed(self):
        return self.horizontal_passed and self.vertical_passed

    def to_dict(self):
        return {
            "structure_ok": bool(self.structure_ok),
            "horizontal": None if self.horizontal is None else self.horizontal.to_dict(),
            "vertical_atoms": [int(i) for i in self.vertical_atoms],
            "vertical_invertible_psd": bool(self.vertical_invertible_psd),
            "vertical_stabilizable": bool(self.vertical_stabilizable),
            "vertical_detectable": bool(self.vertical_detectable),
            "failing_atoms": [int(i) for i in self.failing_atoms],
            "intrinsic_mismatch": float(self.intrinsic_mismatch),
            "leakage": float(self.leakage),
            "passed": bool(self.passed),
        }


def eulerian_blocks(problem, triple, tol=1e-9):
    """Intrinsic Hamiltonian blocks on the distinct atoms of the joint law, in the group basis."""
    part = group_by_position(triple.joint(), tol)
    first = [part.members(g)[0] for g in range(part.n_groups)]
    return hamiltonian_blocks(problem, triple.X, triple.X[first], triple.Psi[first], triple.U[first],
                              part.weights), part


def check_et_hypotheses(problem, triple, bh=None, tol=1e-8, group_tol=1e-9, cond_max=1e12):
    """Horizontal checks on the group-compressed blocks, vertical checks on per-atom symbols."""
    bh = bh if bh is not None else lifted_blocks(problem, triple.X, triple.Psi, triple.U)
    part = group_by_position(triple.joint(), group_tol)
    keys = [("X", "X"), ("X", "u"), ("u", "X"), ("P", "X"), ("P", "u"), ("u", "u")]

    structure_ok, hor, leak, mismatch = True, None, 0.0, 0.0
    comp = {}
    try:
        for key in keys + [("X", "P"), ("u", "P")]:
            sp = horizontal_vertical_split(part, bh[key], name=f"H_{key[0]}{key[1]}")
            comp[key] = sp.horizontal
            leak = max(leak, sp.leakage)
    except StructureError:
        structure_ok = False
    if structure_ok:
        hor, _ = _check_reduced(tuple(comp[k] for k in keys), tol, cond_max)
        intrinsic, _ = eulerian_blocks(problem, triple, group_tol)
        mismatch = max(float(np.max(np.abs(comp[k] - intrinsic[k].matrix))) for k in comp)

    vertical_atoms = [i for i in range(part.N) if part.sizes[part.labels[i]] > 1]
    inv_psd = stab = det = True
    failing = []
    sym = {k: bh.symbol(*k) for k in keys}
    for i in vertical_atoms:
        rep, red = _check_reduced(tuple(sym[k][i] for k in keys), tol, cond_max)
        ok_iv = rep.huu_invertible and rep.q_psd
        inv_psd &= ok_iv
        stab &= rep.stabilizable
        det &= rep.detectable
        if not (ok_iv and rep.stabilizable and rep.detectable):
            failing.append(i)
    return ETReport(structure_ok, hor, vertical_atoms, bool(inv_psd), bool(stab), bool(det),
                    failing, mismatch, leak)


@dataclass
class TurnpikeCertificate:
    P: np.ndarray
    E: np.ndarray
    A_cl: np.ndarray
    T: np.ndarray
    Tinv: np.ndarray
    M: float
    beta: float
    spectral_abscissa: float
    feedback: np.ndarray            # detectability gain K with A' + C'K Hurwitz
    diagonalization_residual: float
    riccati_residual: float
    lt: LTReport
    reduced: ReducedSystem

    def to_dict(self):
        return {
            "M": self.M,
            "beta": self.beta,
            "spectral_abscissa": self.spectral_abscissa,
            "diagonalization_residual": self.diagonalization_residual,
            "riccati_residual": self.riccati_residual,
            "hypotheses": self.lt.to_dict(),
            "P": self.P.tolist(),
            "E": self.E.tolist(),
            "A_cl": self.A_cl.tolist(),
            "feedback": self.feedback.tolist(),
        }


def certify(problem=None, triple=None, margin=0.05, bh=None, tol=1e-8):
    """Check the lifted hypotheses and compute P, E, T, (M, beta) at a stationary triple."""
    bh = bh if bh is not None else lifted_blocks(problem, triple.X, triple.Psi, triple.U)
    lt = check_lt_hypotheses(bh, tol)
    if not lt.passed:
        raise HypothesisFailure("linearised hypotheses fail at the stationary triple", lt)
    red = schur_reduce(bh)
    return certificate_from_reduced(red, lt, margin)


def certificate_from_reduced(red, lt, margin=0.05):
    P = solve_riccati(red.A, red.B, red.Huu_inv, Q=red.Q)
    Acl = red.A + red.S @ P
    E = solve_lyapunov(Acl, red.S)
    T, Tinv = build_transform(P, E)
    M, beta = decay_constants(Acl, margin)
    alpha0 = float(np.max(np.linalg.eigvals(Acl).real))
    K = detectability_feedback(red.A, red.C)
    return TurnpikeCertificate(
        P, E, Acl, T, Tinv, M, beta, alpha0, K,
        diagonalization_residual(red.A, red.S, red.Q, P, E),
        float(np.max(np.abs(riccati_residual(red.A, red.S, red.Q, P)))), lt, red)
