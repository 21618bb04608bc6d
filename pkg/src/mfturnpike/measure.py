"""Uniform empirical measures, position groups and quadratic Wasserstein distances."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DimensionError

GROUP_TOL = 1e-9      # absolute tolerance for treating two particles as the same position


@dataclass
class EmpiricalMeasure:
    """Uniform law of N atoms in R^k (duplicates allowed)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or len(pts) == 0:
            raise DimensionError("an empirical measure needs a non-empty (N, k) array")
        self.points = pts

    @property
    def N(self):
        return self.points.shape[0]

    @property
    def k(self):
        return self.points.shape[1]

    def mean(self):
        return self.points.mean(axis=0)


def _points(a):
    if isinstance(a, EmpiricalMeasure):
        return a.points
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


@dataclass
class Partition:
    """Atoms grouped by (approximately) equal position.

    ``labels[i]`` is the group of atom i; groups are numbered by first occurrence.
    """

    labels: np.ndarray
    representatives: np.ndarray

    @property
    def n_groups(self):
        return len(self.representatives)

    @property
    def N(self):
        return len(self.labels)

    @property
    def sizes(self):
        return np.bincount(self.labels, minlength=self.n_groups)

    @property
    def weights(self):
        return self.sizes / self.N

    def members(self, g):
        return np.flatnonzero(self.labels == g)

    def group_means(self, values):
        values = np.asarray(values, dtype=float)
        sums = np.zeros((self.n_groups,) + values.shape[1:])
        np.add.at(sums, self.labels, values)
        return sums / self.sizes.reshape((-1,) + (1,) * (values.ndim - 1))


def group_by_position(points, tol=GROUP_TOL):
    """Partition atoms into groups: transitive closure of |x_i - x_j| <= tol."""
    pts = _points(points)
    n = len(pts)
    pairs = cKDTree(pts).query_pairs(r=tol, output_type="ndarray") if n > 1 else np.zeros((0, 2), int)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, raw = connected_components(graph, directed=False)
    # renumber by first occurrence so the labelling is deterministic
    order = {}
    labels = np.empty(n, dtype=int)
    for i, r in enumerate(raw):
        labels[i] = order.setdefault(r, len(order))
    first = np.array([np.flatnonzero(labels == g)[0] for g in range(len(order))])
    return Partition(labels, pts[first].copy())


@dataclass
class TransportPlan:
    """A coupling of two N-atom uniform measures.

    Either a permutation (atom i of the source goes to atom perm[i] of the target)
    or a dense matrix with all row and column sums equal to 1/N.
    """

    perm: np.ndarray = None
    matrix: np.ndarray = None

    def __post_init__(self):
        if (self.perm is None) == (self.matrix is None):
            raise ValueError("give exactly one of perm or matrix")
        if self.matrix is not None:
            g = np.asarray(self.matrix, dtype=float)
            n = g.shape[0]
            if g.shape != (n, n) or np.any(g < -1e-15):
                raise ValueError("plan matrix must be square and nonnegative")
            if not (np.allclose(g.sum(0), 1 / n, atol=1e-12) and np.allclose(g.sum(1), 1 / n, atol=1e-12)):
                raise ValueError("plan matrix marginals must be uniform")
            self.matrix = g
        else:
            p = np.asarray(self.perm, dtype=int)
            if sorted(p.tolist()) != list(range(len(p))):
                raise ValueError("perm is not a permutation")
            self.perm = p

    def as_matrix(self):
        if self.matrix is not None:
            return self.matrix
        n = len(self.perm)
        g = np.zeros((n, n))
        g[np.arange(n), self.perm] = 1.0 / n
        return g


def _check_pair(a, b):
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"measures have different atom counts {a.shape[0]} and {b.shape[0]}")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"measures live in different dimensions {a.shape[1]} and {b.shape[1]}")


def optimal_assignment(mu, nu):
    """Optimal permutation for the squared Euclidean cost between two N-atom measures."""
    a, b = _points(mu), _points(nu)
    _check_pair(a, b)
    if a.shape[1] == 1:
        perm = np.empty(len(a), dtype=int)
        perm[np.argsort(a[:, 0], kind="stable")] = np.argsort(b[:, 0], kind="stable")
        return TransportPlan(perm=perm)
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(a), dtype=int)
    perm[rows] = cols
    return TransportPlan(perm=perm)


def weighted_wasserstein(plan, mu, nu):
    """Transport cost sqrt(sum_ij plan_ij |x_i - y_j|^2) of a given coupling."""
    a, b = _points(mu), _points(nu)
    _check_pair(a, b)
    if plan.perm is not None:
        if len(plan.perm) != len(a):
            raise DimensionError("plan size does not match the measures")
        return float(np.sqrt(np.mean(((a - b[plan.perm]) ** 2).sum(-1))))
    if plan.matrix.shape[0] != len(a):
        raise DimensionError("plan size does not match the measures")
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(max(0.0, np.sum(plan.matrix * cost))))


def wasserstein2(mu, nu):
    """Exact W2 distance between two uniform N-atom measures."""
    return weighted_wasserstein(optimal_assignment(mu, nu), mu, nu)


def barycentric_projection(nu, split, tol=GROUP_TOL):
    """Group the atoms of nu on R^{k1+k2} by their first ``split`` coordinates.

    Returns the partition and, per group, the mean of the remaining coordinates.
    """
    pts = _points(nu)
    if not 0 < split < pts.shape[1]:
        raise DimensionError("split must leave both coordinate blocks non-empty")
    part = group_by_position(pts[:, :split], tol)
    return part, part.group_means(pts[:, split:])
