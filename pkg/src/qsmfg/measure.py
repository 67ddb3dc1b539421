"""Probability densities on T^d, joint state-control measures, and W1 distances.

The joint measures produced by the solvers are always graph measures: one
control per grid node, obtained by pushing the state density forward through
a control field.  Distances between them use the sum ground metric

    dist((x,a), (x',a')) = dist_torus(x,x') + |a - a'|,

so functions that are 1-Lipschitz in each argument are 1-Lipschitz jointly.
Two independent engines are provided: an exact linear-program solve on the
atom bipartite graph (the default, exact at desk scale) and, for d=1 state
marginals, the circle CDF reduction.  They are implemented without shared
code so they can cross-check each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.optimize import linprog

from .grid import Grid, GridField, torus_distance

__all__ = [
    "DensityField",
    "ControlField",
    "JointMeasure",
    "pushforward",
    "wasserstein1_joint",
    "wasserstein1_state",
    "sinkhorn_w1",
    "set_transport_limits",
    "uniform_density",
    "von_mises_density",
    "two_bump_density",
]

MASS_TOL = 1e-12
NEGATIVE_TOL = 1e-13
DEFAULT_ATOM_CAP = 4096

# process-wide transport limits; runs configure them once at startup
_TRANSPORT_LIMITS = {"atom_cap": DEFAULT_ATOM_CAP, "lp_maxiter": None}


def set_transport_limits(atom_cap: int | None = None, lp_maxiter: int | None = None) -> None:
    """Configure the atom cap and LP iteration cap used by default."""
    if atom_cap is not None:
        _TRANSPORT_LIMITS["atom_cap"] = int(atom_cap)
    if lp_maxiter is not None:
        _TRANSPORT_LIMITS["lp_maxiter"] = int(lp_maxiter)


@dataclass(frozen=True)
class DensityField:
    """Nonnegative grid function integrating to one (probability per volume)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("density contains non-finite values")
        if v.min() < -NEGATIVE_TOL:
            raise ValueError(f"density has negative value {v.min():.3e}")
        v[v < 0] = 0.0
        mass = v.sum() * self.grid.cell_volume
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"density mass {mass!r} deviates from 1 by more than {MASS_TOL}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, grid: Grid, values: np.ndarray, normalize: bool = False) -> "DensityField":
        v = np.asarray(values, dtype=float).reshape(grid.shape).copy()
        if normalize:
            v = np.maximum(v, 0.0)
            total = v.sum() * grid.cell_volume
            if total <= 0:
                raise ValueError("cannot normalize a density with nonpositive mass")
            v /= total
        return cls(grid, v)

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def as_field(self) -> GridField:
        return GridField(self.grid, self.values)

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def uniform_density(grid: Grid) -> DensityField:
    return DensityField(grid, np.ones(grid.shape))


def von_mises_density(grid: Grid, center: float | tuple = 0.5, concentration: float = 4.0) -> DensityField:
    """Smooth periodic bump, the product of 1d von Mises profiles."""
    centers = np.broadcast_to(np.atleast_1d(np.asarray(center, dtype=float)), (grid.d,))
    x = grid.axis_coordinates()
    profiles = [np.exp(concentration * np.cos(2.0 * np.pi * (x - c))) for c in centers]
    v = profiles[0]
    for p in profiles[1:]:
        v = np.outer(v, p)
    return DensityField.from_values(grid, v.reshape(grid.shape), normalize=True)


def two_bump_density(
    grid: Grid,
    centers: tuple = (0.25, 0.75),
    concentration: float = 6.0,
    weights: tuple[float, float] = (0.5, 0.5),
) -> DensityField:
    """Mixture of two smooth bumps; stays in H^1 for any concentration."""
    c0, c1 = centers
    b0 = von_mises_density(grid, c0, concentration).values
    b1 = von_mises_density(grid, c1, concentration).values
    return DensityField.from_values(grid, weights[0] * b0 + weights[1] * b1, normalize=True)


@dataclass(frozen=True)
class ControlField:
    """One control vector per grid node; values live in the model's control set."""

    grid: Grid
    values: np.ndarray  # shape (*grid.shape, k)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim == self.grid.d:
            v = v[..., np.newaxis]
        if v.shape[:-1] != self.grid.shape:
            raise ValueError(f"control values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("control field contains non-finite values")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[-1]

    def flat(self) -> np.ndarray:
        return self.values.reshape(self.grid.size, self.k)


@dataclass(frozen=True)
class JointMeasure:
    """Weighted atoms (x_i, a_i, w_i) on T^d x A.

    Solver-produced measures are probability measures with one atom per grid
    node; memory-kernel aggregates may carry any nonnegative total mass.
    """

    x: np.ndarray  # (N, d)
    a: np.ndarray  # (N, k)
    w: np.ndarray  # (N,)
    grid: Grid | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if x.shape[0] != a.shape[0] or x.shape[0] != w.shape[0]:
            raise ValueError("atom arrays disagree on atom count")
        if w.size and w.min() < -NEGATIVE_TOL:
            raise ValueError(f"negative atom weight {w.min():.3e}")
        w = np.maximum(w, 0.0)
        for arr in (x, a, w):
            if not np.all(np.isfinite(arr)):
                raise ValueError("joint measure contains non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "w", w)

    @property
    def n_atoms(self) -> int:
        return self.w.shape[0]

    def mass(self) -> float:
        return float(self.w.sum())

    def mean_control(self) -> np.ndarray:
        """Unnormalized control moment: integral of a against the measure."""
        if self.n_atoms == 0:
            return np.zeros(1)
        return self.a.T @ self.w

    def scaled(self, factor: float) -> "JointMeasure":
        return JointMeasure(self.x, self.a, self.w * factor, grid=self.grid)

    @classmethod
    def empty(cls, d: int = 1, k: int = 1) -> "JointMeasure":
        return cls(np.zeros((0, d)), np.zeros((0, k)), np.zeros(0))


def pushforward(m: DensityField, policy: ControlField) -> JointMeasure:
    """Image of the density under x -> (x, a(x)); weights are m(x_i) h^d.

    The first marginal of the result is m exactly: atom i sits at node i with
    weight m_i h^d, no aggregation or re-binning happens.
    """
    if policy.grid != m.grid:
        raise ValueError("density and control field live on different grids")
    grid = m.grid
    return JointMeasure(
        grid.coordinates(),
        policy.flat(),
        m.flat() * grid.cell_volume,
        grid=grid,
    )


def _dedupe(nu: JointMeasure) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    keep = nu.w > 0.0
    return nu.x[keep], nu.a[keep], nu.w[keep]


def joint_cost_matrix(x1, a1, x2, a2) -> np.ndarray:
    """Ground costs dist_torus(x,x') + |a-a'| for all atom pairs."""
    xc = torus_distance(x1[:, None, :], x2[None, :, :])
    ac = np.linalg.norm(a1[:, None, :] - a2[None, :, :], axis=-1)
    return xc + ac


def _transport_lp(cost: np.ndarray, w1: np.ndarray, w2: np.ndarray, maxiter=None) -> float:
    """Exact optimal transport cost via the HiGHS linear-program solver."""
    n1, n2 = cost.shape
    ii = np.repeat(np.arange(n1), n2)
    jj = np.tile(np.arange(n2), n1)
    var = np.arange(n1 * n2)
    rows = np.concatenate([ii, n1 + jj])
    cols = np.concatenate([var, var])
    a_eq = sparse.coo_matrix(
        (np.ones(2 * n1 * n2), (rows, cols)), shape=(n1 + n2, n1 * n2)
    ).tocsr()[:-1]  # drop one redundant marginal row
    b_eq = np.concatenate([w1, w2])[:-1]
    options = {} if maxiter is None else {"maxiter": int(maxiter)}
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs", options=options)
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def wasserstein1_joint(
    nu1: JointMeasure,
    nu2: JointMeasure,
    atom_cap: int | None = None,
    lp_maxiter: int | None = None,
) -> float:
    """Exact W1 between joint measures under the sum ground metric.

    Requires equal total masses (within 1e-10); measures above the configured
    atom cap are rejected, since the LP is only intended for desk scale.
    """
    if atom_cap is None:
        atom_cap = _TRANSPORT_LIMITS["atom_cap"]
    if lp_maxiter is None:
        lp_maxiter = _TRANSPORT_LIMITS["lp_maxiter"]
    if abs(nu1.mass() - nu2.mass()) > 1e-10:
        raise ValueError(f"mass mismatch: {nu1.mass()!r} vs {nu2.mass()!r}")
    x1, a1, w1 = _dedupe(nu1)
    x2, a2, w2 = _dedupe(nu2)
    if len(w1) == 0 and len(w2) == 0:
        return 0.0
    if max(len(w1), len(w2)) > atom_cap:
        raise ValueError(f"atom count {max(len(w1), len(w2))} exceeds cap {atom_cap}")
    if a1.shape[1] != a2.shape[1] or x1.shape[1] != x2.shape[1]:
        raise ValueError("joint measures live on different product spaces")
    cost = joint_cost_matrix(x1, a1, x2, a2)
    return _transport_lp(cost, w1, w2, maxiter=lp_maxiter)


def _circle_w1(p: np.ndarray, q: np.ndarray, h: float) -> float:
    """Exact W1 on the discrete circle via cumulative sums.

    The transport cost equals the minimum over rotations theta of the L1 norm
    of the CDF difference; the minimizer is the median of the cumulative
    mass-difference sequence.
    """
    c = np.cumsum(p - q)
    theta = np.median(c)
    return float(h * np.abs(c - theta).sum())


def wasserstein1_state(m1: DensityField, m2: DensityField) -> float:
    """W1 between state densities: circle CDF method for d=1, atom LP for d=2."""
    if m1.grid != m2.grid:
        raise ValueError("densities live on different grids")
    grid = m1.grid
    vol = grid.cell_volume
    if grid.d == 1:
        return _circle_w1(m1.flat() * vol, m2.flat() * vol, grid.h)
    coords = grid.coordinates()
    zeros = np.zeros((grid.size, 1))
    nu1 = JointMeasure(coords, zeros, m1.flat() * vol, grid=grid)
    nu2 = JointMeasure(coords, zeros, m2.flat() * vol, grid=grid)
    return wasserstein1_joint(nu1, nu2)


def state_marginal_w1(nu1: JointMeasure, nu2: JointMeasure) -> float:
    """W1 between the state marginals of two joint measures (atom LP)."""
    if abs(nu1.mass() - nu2.mass()) > 1e-10:
        raise ValueError("mass mismatch between marginals")
    x1, a1, w1 = _dedupe(nu1)
    x2, a2, w2 = _dedupe(nu2)
    if len(w1) == 0 and len(w2) == 0:
        return 0.0
    cost = torus_distance(x1[:, None, :], x2[None, :, :])
    return _transport_lp(cost, w1, w2)


def sinkhorn_w1(
    nu1: JointMeasure,
    nu2: JointMeasure,
    epsilon: float = 1e-2,
    max_iter: int = 5000,
    tol: float = 1e-10,
) -> float:
    """Entropically regularized transport cost (log-domain Sinkhorn).

    Accelerated alternative to the exact LP with a bias of order
    epsilon * log(atom count); use only where the documented bias is
    acceptable.  Returns the transport cost of the regularized plan.
    """
    if abs(nu1.mass() - nu2.mass()) > 1e-10:
        raise ValueError(f"mass mismatch: {nu1.mass()!r} vs {nu2.mass()!r}")
    x1, a1, w1 = _dedupe(nu1)
    x2, a2, w2 = _dedupe(nu2)
    cost = joint_cost_matrix(x1, a1, x2, a2)
    total = w1.sum()
    w1 = w1 / total
    w2 = w2 / total
    log_w1 = np.log(w1)
    log_w2 = np.log(w2)
    f = np.zeros(len(w1))
    g = np.zeros(len(w2))
    for _ in range(max_iter):
        f_prev = f
        g = -epsilon * _logsumexp((f[:, None] - cost) / epsilon + log_w1[:, None], axis=0)
        f = -epsilon * _logsumexp((g[None, :] - cost) / epsilon + log_w2[None, :], axis=1)
        if np.max(np.abs(f - f_prev)) < tol:
            break
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon + log_w1[:, None] + log_w2[None, :])
    return float((plan * cost).sum() * total)


def _logsumexp(mat: np.ndarray, axis: int) -> np.ndarray:
    m = mat.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(mat - m).sum(axis=axis, keepdims=True))).ravel()


def joint_measure_to_csv(nu: JointMeasure, path: str) -> None:
    d = nu.x.shape[1]
    k = nu.a.shape[1]
    header = ",".join([f"x{i}" for i in range(d)] + [f"a{i}" for i in range(k)] + ["w"])
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for i in range(nu.n_atoms):
            row = [format(v, ".17g") for v in nu.x[i]] + [format(v, ".17g") for v in nu.a[i]]
            row.append(format(nu.w[i], ".17g"))
            fh.write(",".join(row) + "\n")
