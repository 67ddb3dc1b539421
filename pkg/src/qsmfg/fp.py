"""Conservative implicit time stepping for the Fokker-Planck equation.

The continuous equation is dm/dt = lap(m) + div(m g) with g the optimal
drift of the value function.  The spatial discretization combines the
periodic central Laplacian with upwind fluxes of the transport velocity -g
evaluated at cell interfaces; its generator has zero column sums (exact mass
conservation) and nonnegative off-diagonal entries, so the implicit Euler
matrix I - dt*L is an M-matrix and every step preserves positivity
unconditionally.  The drift is frozen at its left-endpoint value over each
step, matching the quasi-stationary reading of the coupled system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .grid import Grid, GridField
from .measure import DensityField

__all__ = [
    "FpTrajectory",
    "fp_step",
    "fp_evolve",
    "transport_generator",
    "holder_report",
    "trajectory_to_csv",
    "trajectory_to_binary",
    "trajectory_from_binary",
]

STEP_MASS_TOL = 1e-12
STEP_NEGATIVE_TOL = 1e-13


@dataclass(frozen=True)
class FpTrajectory:
    """Densities on the uniform time grid t_j = j*dt, with the drifts used."""

    grid: Grid
    dt: float
    times: np.ndarray
    densities: tuple[DensityField, ...]
    drifts: tuple[tuple[GridField, ...], ...]

    @property
    def n_steps(self) -> int:
        return len(self.densities) - 1

    def values(self) -> np.ndarray:
        """Stacked density values, shape (n_steps+1, *grid.shape)."""
        return np.stack([m.values for m in self.densities])


def _as_drift_array(grid: Grid, g: Sequence[GridField]) -> np.ndarray:
    if len(g) != grid.d:
        raise ValueError(f"drift needs {grid.d} components, got {len(g)}")
    return np.stack([comp.values for comp in g])


def transport_generator(grid: Grid, g: Sequence[GridField]) -> sparse.csr_matrix:
    """Spatial generator L with L m = lap_h(m) + div_h(m g).

    Advection uses upwind fluxes of the velocity v = -g averaged to cell
    interfaces.  Column sums vanish identically and off-diagonal entries are
    nonnegative, which is what the mass and positivity guarantees rest on.
    """
    garr = _as_drift_array(grid, g)
    n = grid.size
    h = grid.h
    idx_grid = np.arange(n).reshape(grid.shape)
    rows, cols, data = [], [], []
    diag = np.zeros(grid.shape)
    for ax in range(grid.d):
        plus = np.roll(idx_grid, -1, axis=ax)
        # interface velocity between node i and its +1 neighbor along ax
        v_iface = -0.5 * (garr[ax] + np.roll(garr[ax], -1, axis=ax))
        vp = np.maximum(v_iface, 0.0)
        vm = np.minimum(v_iface, 0.0)
        # diffusion
        diag += -2.0 / h**2
        rows += [idx_grid.ravel(), idx_grid.ravel()]
        cols += [plus.ravel(), np.roll(idx_grid, 1, axis=ax).ravel()]
        data += [np.full(n, 1.0 / h**2), np.full(n, 1.0 / h**2)]
        # upwind advection: L[i,i] -= (vp[i+1/2] - vm[i-1/2])/h,
        # L[i,i+1] -= vm[i+1/2]/h, L[i,i-1] += vp[i-1/2]/h
        diag += -(vp - np.roll(vm, 1, axis=ax)) / h
        rows.append(idx_grid.ravel())
        cols.append(plus.ravel())
        data.append((-vm / h).ravel())
        rows.append(idx_grid.ravel())
        cols.append(np.roll(idx_grid, 1, axis=ax).ravel())
        data.append((np.roll(vp, 1, axis=ax) / h).ravel())
    rows.append(idx_grid.ravel())
    cols.append(idx_grid.ravel())
    data.append(diag.ravel())
    mat = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return mat.tocsr()


def fp_step(m: DensityField, g: Sequence[GridField], dt: float) -> DensityField:
    """One implicit Euler step of dm/dt = lap(m) + div(m g)."""
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    grid = m.grid
    gen = transport_generator(grid, g)
    mat = sparse.identity(grid.size, format="csr") - dt * gen
    new = spla.spsolve(mat.tocsc(), m.flat())
    if not np.all(np.isfinite(new)):
        raise RuntimeError("Fokker-Planck linear solve produced non-finite values")
    min_val = new.min()
    if min_val < -STEP_NEGATIVE_TOL:
        raise RuntimeError(
            f"positivity lost in Fokker-Planck step (min {min_val:.3e}); "
            "the M-matrix property should forbid this"
        )
    new = np.maximum(new, 0.0)
    mass = new.sum() * grid.cell_volume
    if abs(mass - 1.0) > STEP_MASS_TOL:
        raise RuntimeError(f"mass drift {mass - 1.0:.3e} exceeds tolerance in one step")
    return DensityField(grid, (new / mass).reshape(grid.shape))


def fp_evolve(
    m0: DensityField,
    drift_provider: Callable[[int, float], Sequence[GridField]],
    T: float,
    dt: float,
) -> FpTrajectory:
    """Sequential implicit steps; drift_provider(j, t_j) supplies g on [t_j, t_{j+1})."""
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizon T={T} is not a multiple of dt={dt}")
    times = np.arange(n_steps + 1) * dt
    densities = [m0]
    drifts = []
    m = m0
    for j in range(n_steps):
        g = tuple(drift_provider(j, times[j]))
        m = fp_step(m, g, dt)
        densities.append(m)
        drifts.append(g)
    return FpTrajectory(
        grid=m0.grid,
        dt=dt,
        times=times,
        densities=tuple(densities),
        drifts=tuple(drifts),
    )


def holder_report(
    traj: FpTrajectory,
    w1: Callable[[DensityField, DensityField], float] | None = None,
    max_pairs: int = 2000,
    seed: int = 0,
) -> float:
    """Empirical Holder-1/2 constant: max over time pairs of W1(m_j, m_k) / sqrt|t_j - t_k|."""
    if len(traj.densities) < 2:
        raise ValueError("trajectory needs at least two time levels")
    if w1 is None:
        from .measure import wasserstein1_state

        w1 = wasserstein1_state
    n = len(traj.densities)
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    if len(pairs) > max_pairs:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[int(c)] for c in chosen]
    best = 0.0
    for j, k in pairs:
        gap = abs(traj.times[k] - traj.times[j])
        dist = w1(traj.densities[j], traj.densities[k])
        best = max(best, dist / np.sqrt(gap))
    return float(best)


# ---------------------------------------------------------------------------
# trajectory serialization


def trajectory_to_csv(traj: FpTrajectory, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("t,node,value\n")
        for j, m in enumerate(traj.densities):
            t = traj.times[j]
            for node, v in enumerate(m.flat()):
                fh.write(f"{format(t, '.17g')},{node},{format(v, '.17g')}\n")


def trajectory_to_binary(traj: FpTrajectory, path: str) -> None:
    """JSON header line, then C-order float64 bytes of the stacked densities."""
    header = {
        "d": traj.grid.d,
        "n": traj.grid.n,
        "dt": traj.dt,
        "T": float(traj.times[-1]),
        "steps": traj.n_steps,
    }
    payload = traj.values().astype(np.float64).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        fh.write(payload)


def trajectory_from_binary(path: str) -> tuple[Grid, float, np.ndarray]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    grid = Grid(header["d"], header["n"])
    arr = np.frombuffer(raw, dtype=np.float64).reshape(
        (header["steps"] + 1,) + grid.shape
    )
    return grid, header["dt"], arr
