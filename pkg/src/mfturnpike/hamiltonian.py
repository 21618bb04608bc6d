"""Pointwise Hamiltonian h = <p, v(mu, x, u)> - L(mu, x, u) and its lifted derivatives.

The lifted Hamiltonian is H(X, Psi, u) = (1/N) sum_i h(mu_X, x_i, psi_i, u_i). Its
gradient and second derivatives are assembled here for any ControlProblem. The
same assembly run on weighted distinct support points gives the intrinsic
(Eulerian) blocks; the lifted ones use N atoms of weight 1/N.
"""

from dataclasses import dataclass

import numpy as np

from .lift import LiftedOperator

SLOTS = ("X", "P", "u")


def hamiltonian_value(problem, X, Psi, U):
    return float(np.mean(np.sum(Psi * problem.v(X, X, U), axis=1) - problem.L(X, X, U)))


def pointwise_control_gradient(problem, mu, x, psi, u):
    """d h / d u at each point: D_u v' psi - grad_u L."""
    return np.einsum("ncj,nc->nj", problem.dv_u(mu, x, u), psi) - problem.dL_u(mu, x, u)


def costate_drift(problem, X, Psi, U):
    """Lifted gradient of H in X (the negative costate velocity)."""
    return problem.lifted_drift(X, Psi, U)


def hamiltonian_gradient(problem, X, Psi, U):
    """Lifted gradient (grad_X H, grad_Psi H, grad_u H), each an (N, .) array."""
    return (costate_drift(problem, X, Psi, U), problem.v(X, X, U),
            pointwise_control_gradient(problem, X, X, Psi, U))


@dataclass
class BlockHessian:
    """Second derivatives of the Hamiltonian in the slots X (state), P (costate), u (control).

    ``blocks[(a, b)]`` is a LiftedOperator carrying its multiplication/kernel split.
    """

    blocks: dict
    N: int
    d: int
    m: int

    def __getitem__(self, key):
        return self.blocks[key]

    def dims(self):
        return {"X": self.d, "P": self.d, "u": self.m}

    def full(self):
        """Dense matrix on the stacked vector [X, Psi, u] (each block atom-major)."""
        return np.block([[self.blocks[(a, b)].matrix for b in SLOTS] for a in SLOTS])

    def symbol(self, a, b):
        return self.blocks[(a, b)].symbols()

    def replace_symbol(self, a, b, atom, value):
        """Copy with the multiplication symbol of block (a, b) (and its transpose) changed at one atom."""
        new = dict(self.blocks)
        for (s, t, val) in ((a, b, np.asarray(value, dtype=float)),
                            (b, a, np.asarray(value, dtype=float).T)):
            op = new[(s, t)]
            p, q = op.k_out, op.k_in
            mult, mat = op.mult.copy(), op.matrix.copy()
            sl = (slice(atom * p, (atom + 1) * p), slice(atom * q, (atom + 1) * q))
            mat[sl] += val - mult[sl]
            mult[sl] = val
            new[(s, t)] = LiftedOperator(mat, op.N, p, q, mult, op.kernel)
            if s == t:
                break
        return BlockHessian(new, self.N, self.d, self.m)


def hamiltonian_blocks(problem, mu, x, psi, u, weights):
    """Assemble all nine Hamiltonian blocks on support points (x, psi, u) with weights.

    ``mu`` is the particle array defining the measure at which derivatives are taken.
    """
    P = problem
    d, m = P.d, P.m
    n = len(x)
    w = np.asarray(weights, dtype=float)

    dvx, dvu = P.dv_x(mu, x, u), P.dv_u(mu, x, u)
    kv = P.dv_mu(mu, x, u, x)                                   # [i,k,c,b]

    # psi-contracted second derivatives of h
    hxx = np.einsum("nc,ncab->nab", psi, P.d2v_xx(mu, x, u)) - P.d2L_xx(mu, x, u)
    hxu = np.einsum("nc,ncaj->naj", psi, P.d2v_xu(mu, x, u)) - P.d2L_xu(mu, x, u)
    huu = np.einsum("nc,ncjk->njk", psi, P.d2v_uu(mu, x, u)) - P.d2L_uu(mu, x, u)
    kx = np.einsum("ic,ikcba->ikba", psi, P.dv_mu_x(mu, x, u, x)) - P.dL_mu_x(mu, x, u, x)
    ku = np.einsum("ic,ikcbj->ikbj", psi, P.dv_mu_u(mu, x, u, x)) - P.dL_mu_u(mu, x, u, x)
    ky = np.einsum("ic,ikcbe->ikbe", psi, P.dv_mu_y(mu, x, u, x)) - P.dL_mu_y(mu, x, u, x)
    k2 = np.einsum("ic,iklcbe->iklbe", psi, P.dv_mu2(mu, x, u, x, x)) - P.dL_mu2(mu, x, u, x, x)

    mult_xx = hxx + np.einsum("i,ikbe->kbe", w, ky)
    # D_mu grad_x h(z_k)(x_l) + d_x grad_mu h(z_l)(x_k) + sum_i w_i grad_mu^2 h(z_i)(x_k, x_l)
    kern_xx = kx.transpose(0, 1, 3, 2) + kx.transpose(1, 0, 2, 3) + np.einsum("i,iklbe->klbe", w, k2)

    zero_dd = np.zeros((n, d, d))
    blocks = {
        ("X", "X"): (mult_xx, kern_xx),
        ("X", "P"): (dvx.transpose(0, 2, 1), kv.transpose(1, 0, 3, 2)),
        ("P", "X"): (dvx, kv),
        ("X", "u"): (hxu, ku.transpose(1, 0, 2, 3)),
        ("u", "X"): (hxu.transpose(0, 2, 1), ku.transpose(0, 1, 3, 2)),
        ("P", "P"): (zero_dd, None),
        ("P", "u"): (dvu, None),
        ("u", "P"): (dvu.transpose(0, 2, 1), None),
        ("u", "u"): (huu, None),
    }
    ops = {key: LiftedOperator.from_parts(mb, kb, w) for key, (mb, kb) in blocks.items()}
    return BlockHessian(ops, n, d, m)


def lifted_blocks(problem, X, Psi, U):
    n = len(X)
    return hamiltonian_blocks(problem, X, X, Psi, U, np.full(n, 1.0 / n))
