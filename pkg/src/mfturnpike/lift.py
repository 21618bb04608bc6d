"""Lifted (Lagrangian) calculus on N-atom probability spaces.

A random vector is an (N, k) array of atom values; the inner product is
<X, Y> = (1/N) sum_i <x_i, y_i>. Operators are dense (N k_out) x (N k_in)
matrices in atom-major order (index i * k + c). Because every atom has the same
weight, the adjoint of an operator is its plain transpose.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from . import kernels
from .errors import DimensionError, StructureError
from .measure import GROUP_TOL, EmpiricalMeasure, Partition, group_by_position


@dataclass
class RandomVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DimensionError("random vector values must be an (N, k) array")
        self.values = v

    @property
    def N(self):
        return self.values.shape[0]

    @property
    def k(self):
        return self.values.shape[1]

    def flat(self):
        return self.values.reshape(-1)

    def law(self):
        return EmpiricalMeasure(self.values)

    def inner(self, other):
        return float(np.sum(self.values * _vals(other)) / self.N)

    def norm(self):
        return lifted_norm(self.values)


def _vals(x):
    if isinstance(x, RandomVector):
        return x.values
    a = np.asarray(x, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def lifted_norm(values):
    """sqrt((1/N) sum_i |x_i|^2) for an (N, k) array (or (N,) array)."""
    a = np.asarray(values, dtype=float)
    n = a.shape[0]
    return float(np.sqrt(np.sum(a * a) / n))


def block_diag_matrix(blocks):
    """Dense matrix with the (n, p, q) blocks on its diagonal."""
    n, p, q = blocks.shape
    out = np.zeros((n * p, n * q))
    for i in range(n):
        out[i * p:(i + 1) * p, i * q:(i + 1) * q] = blocks[i]
    return out


def pair_block_matrix(kern, scale=1.0):
    """Dense matrix whose (i, j) block is scale_ij * kern[i, j] for an (n, n, p, q) kernel."""
    n, n2, p, q = kern.shape
    k = kern * (np.asarray(scale)[..., None, None] if np.ndim(scale) else scale)
    return k.transpose(0, 2, 1, 3).reshape(n * p, n2 * q)


@dataclass
class LiftedOperator:
    """Bounded operator between lifted spaces with its multiplication/kernel split.

    ``matrix = mult + kernel`` when both parts are recorded.
    """

    matrix: np.ndarray
    N: int
    k_out: int
    k_in: int
    mult: np.ndarray = None
    kernel: np.ndarray = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (self.N * self.k_out, self.N * self.k_in):
            raise DimensionError(f"operator matrix has shape {self.matrix.shape}, expected "
                                 f"{(self.N * self.k_out, self.N * self.k_in)}")

    @classmethod
    def from_parts(cls, mult_blocks, kernel_blocks, weights):
        """Build from per-atom symbols (n, p, q) and a kernel (n, n, p, q) on weighted atoms."""
        n, p, q = mult_blocks.shape
        mult = block_diag_matrix(mult_blocks)
        if kernel_blocks is None:
            kern = np.zeros_like(mult)
        else:
            sw = np.sqrt(np.asarray(weights, dtype=float))
            kern = pair_block_matrix(kernel_blocks, np.outer(sw, sw))
        return cls(mult + kern, n, p, q, mult, kern)

    def apply(self, H):
        v = _vals(H)
        if v.shape != (self.N, self.k_in):
            raise DimensionError(f"operator expects a ({self.N}, {self.k_in}) input, got {v.shape}")
        return RandomVector((self.matrix @ v.reshape(-1)).reshape(self.N, self.k_out))

    def adjoint(self):
        return LiftedOperator(self.matrix.T.copy(), self.N, self.k_in, self.k_out,
                              None if self.mult is None else self.mult.T.copy(),
                              None if self.kernel is None else self.kernel.T.copy())

    def symbols(self):
        """Per-atom diagonal blocks of the multiplication part, shape (N, k_out, k_in)."""
        if self.mult is None:
            raise StructureError("operator has no recorded multiplication part")
        p, q = self.k_out, self.k_in
        return np.stack([self.mult[i * p:(i + 1) * p, i * q:(i + 1) * q] for i in range(self.N)])


# ---------------------------------------------------------------------------
# law-invariant functionals
# ---------------------------------------------------------------------------

@dataclass
class LawInvariantFunctional:
    """Phi(mu) with its measure derivatives evaluated on particle arrays.

    grad(mu, y) -> (n, d); local_hess(mu, y) -> (n, d, d) is the x-derivative of the
    gradient kernel; kernel_hess(mu, y, w) -> (n, n2, d, d) is the second measure derivative.
    """

    value: callable
    grad: callable
    local_hess: callable
    kernel_hess: callable
    d: int
    name: str = "functional"

    def lifted_value(self, X):
        return float(self.value(_vals(X)))


def second_moment(d):
    """Phi(mu) = int |x|^2 dmu."""
    return LawInvariantFunctional(
        value=lambda mu: np.mean(np.sum(mu * mu, axis=1)),
        grad=lambda mu, y: 2.0 * y,
        local_hess=lambda mu, y: np.broadcast_to(2.0 * np.eye(d), (len(y), d, d)).copy(),
        kernel_hess=lambda mu, y, w: np.zeros((len(y), len(w), d, d)),
        d=d, name="second_moment")


def squared_mean(d):
    """Phi(mu) = |int x dmu|^2."""
    return LawInvariantFunctional(
        value=lambda mu: float(np.sum(mu.mean(axis=0) ** 2)),
        grad=lambda mu, y: np.broadcast_to(2.0 * mu.mean(axis=0), (len(y), d)).copy(),
        local_hess=lambda mu, y: np.zeros((len(y), d, d)),
        kernel_hess=lambda mu, y, w: np.broadcast_to(2.0 * np.eye(d), (len(y), len(w), d, d)).copy(),
        d=d, name="squared_mean")


def linear_mean(direction):
    """Phi(mu) = <a, int x dmu>."""
    a = np.asarray(direction, dtype=float).reshape(-1)
    d = len(a)
    return LawInvariantFunctional(
        value=lambda mu: float(mu.mean(axis=0) @ a),
        grad=lambda mu, y: np.broadcast_to(a, (len(y), d)).copy(),
        local_hess=lambda mu, y: np.zeros((len(y), d, d)),
        kernel_hess=lambda mu, y, w: np.zeros((len(y), len(w), d, d)),
        d=d, name="linear_mean")


def interaction_energy(d, kappa=0.0, gamma=1.0, s=1.0):
    """Phi(mu) = 1/2 int int W(x - y) dmu dmu for the smooth even kernel in ``kernels``."""
    k = (kappa, gamma, s)

    def pair(y, w):
        return y[:, None, :] - w[None, :, :]

    return LawInvariantFunctional(
        value=lambda mu: 0.5 * float(np.mean(kernels.value(pair(mu, mu), *k))),
        grad=lambda mu, y: kernels.grad(pair(y, mu), *k).mean(axis=1),
        local_hess=lambda mu, y: kernels.hess(pair(y, mu), *k).mean(axis=1),
        kernel_hess=lambda mu, y, w: -kernels.hess(pair(y, w), *k),
        d=d, name="interaction_energy")


def builtin_functionals(d):
    return [second_moment(d), squared_mean(d), linear_mean(np.linspace(1.0, -0.5, d)),
            interaction_energy(d, kappa=0.5, gamma=1.0, s=0.8)]


def lifted_gradient(F, X):
    """Gradient of X -> Phi(law X) in the lifted inner product: atom i gets grad Phi(mu)(x_i)."""
    x = _vals(X)
    if x.shape[1] != F.d:
        raise DimensionError(f"{F.name} acts on R^{F.d}, got atoms in R^{x.shape[1]}")
    return RandomVector(F.grad(x, x))


def lifted_hessian(F, X):
    """Hessian operator of the lift: local part D_x grad Phi(x_i), kernel part (1/N) hess(x_i, x_j)."""
    x = _vals(X)
    if x.shape[1] != F.d:
        raise DimensionError(f"{F.name} acts on R^{F.d}, got atoms in R^{x.shape[1]}")
    n = len(x)
    return LiftedOperator.from_parts(F.local_hess(x, x), F.kernel_hess(x, x, x), np.full(n, 1.0 / n))


def intrinsic_hessian(F, X, tol=GROUP_TOL):
    """Hessian of Phi on L^2 of the law of X, written in the orthonormal group basis.

    Rows/columns are ordered (group, coordinate); entry blocks are
    D_x grad Phi(y_g) delta_gh + sqrt(w_g w_h) hess Phi(y_g, y_h).
    """
    x = _vals(X)
    part = group_by_position(x, tol)
    reps, w = part.representatives, part.weights
    return LiftedOperator.from_parts(F.local_hess(x, reps), F.kernel_hess(x, reps, reps), w).matrix


# ---------------------------------------------------------------------------
# conditional expectation, composition, horizontal/vertical split
# ---------------------------------------------------------------------------

def _partition(X, tol):
    if isinstance(X, Partition):
        return X
    return group_by_position(_vals(X), tol)


def group_basis(part, k):
    """Orthonormal basis (N k, G k) of the random vectors that are constant on each group.

    Column (g, c) is the normalised indicator of group g in coordinate c; in the lifted
    inner product the same vectors scaled by sqrt(N) are orthonormal.
    """
    n, G = part.N, part.n_groups
    W = np.zeros((n * k, G * k))
    sizes = part.sizes
    for i, g in enumerate(part.labels):
        for c in range(k):
            W[i * k + c, g * k + c] = 1.0 / np.sqrt(sizes[g])
    return W


def vertical_basis(part, k):
    """Orthonormal basis of random vectors with zero mean on every group."""
    n = part.N
    cols = []
    for g in range(part.n_groups):
        idx = part.members(g)
        if len(idx) < 2:
            continue
        comp = null_space(np.ones((1, len(idx))))
        for j in range(comp.shape[1]):
            for c in range(k):
                col = np.zeros(n * k)
                col[idx * k + c] = comp[:, j]
                cols.append(col)
    if not cols:
        return np.zeros((n * k, 0))
    return np.column_stack(cols)


def conditional_expectation(X, tol=GROUP_TOL, k=None):
    """Projection onto sigma(X)-measurable random vectors in R^k (default: k = dim of X)."""
    x = _vals(X) if not isinstance(X, Partition) else None
    part = _partition(X, tol)
    k = (x.shape[1] if x is not None else 1) if k is None else k
    W = group_basis(part, k)
    return LiftedOperator(W @ W.T, part.N, k, k)


def composition_matrix(part, k):
    """Matrix of xi -> xi o X from group values (G k) to atom values (N k)."""
    C = np.zeros((part.N * k, part.n_groups * k))
    for i, g in enumerate(part.labels):
        for c in range(k):
            C[i * k + c, g * k + c] = 1.0
    return C


def adjoint_composition_matrix(part, k):
    """Matrix of H -> group means of H, the adjoint of composition for L^2 of the law."""
    C = composition_matrix(part, k)
    scale = np.repeat(1.0 / part.sizes, k)
    return scale[:, None] * C.T


def composition_operator(X, xi, tol=GROUP_TOL):
    """Evaluate a map given by its values on the distinct positions of X at every atom."""
    part = _partition(X, tol)
    vals = np.asarray(xi, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != part.n_groups:
        raise DimensionError(f"map has {vals.shape[0]} values but X takes {part.n_groups} distinct positions")
    return RandomVector(vals[part.labels])


def adjoint_composition(X, H, tol=GROUP_TOL):
    """Group means of H over the positions of X (a map on the support of law X)."""
    part = _partition(X, tol)
    h = _vals(H)
    if h.shape[0] != part.N:
        raise DimensionError("H and X have different atom counts")
    return part.group_means(h)


@dataclass
class HorizontalVerticalSplit:
    horizontal: np.ndarray
    vertical: np.ndarray
    basis_out: np.ndarray
    basis_in: np.ndarray
    vertical_basis_out: np.ndarray
    vertical_basis_in: np.ndarray
    leakage: float


def horizontal_vertical_split(X, A, tol=GROUP_TOL, check=1e-9, name="operator"):
    """Compress A to the group-constant (horizontal) and group-mean-zero (vertical) subspaces.

    Raises StructureError when A maps one subspace into the other beyond ``check``
    (relative to the size of A).
    """
    part = _partition(X, tol)
    M = A.matrix if isinstance(A, LiftedOperator) else np.asarray(A, dtype=float)
    n = part.N
    if M.shape[0] % n or M.shape[1] % n:
        raise DimensionError(f"{name}: matrix shape {M.shape} is not a multiple of N={n}")
    ko, ki = M.shape[0] // n, M.shape[1] // n
    Wo, Wi = group_basis(part, ko), group_basis(part, ki)
    Vo, Vi = vertical_basis(part, ko), vertical_basis(part, ki)
    scale = max(1.0, np.linalg.norm(M))
    leak = 0.0
    if Vo.shape[1]:
        leak = max(leak, np.linalg.norm(Vo.T @ M @ Wi))
    if Vi.shape[1]:
        leak = max(leak, np.linalg.norm(Wo.T @ M @ Vi))
    if leak > check * scale:
        raise StructureError(f"{name} mixes horizontal and vertical directions (leakage {leak:.3e})")
    return HorizontalVerticalSplit(Wo.T @ M @ Wi, Vo.T @ M @ Vi, Wo, Wi, Vo, Vi, float(leak))
