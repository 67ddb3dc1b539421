"""Periodic grids on the unit torus and finite-difference operators.

Every operator wraps indices modulo n on each axis and is a pure function of
immutable value objects, so fields can be shared freely across threads.
Central stencils are second order where the underlying function is smooth;
one-sided differences selected by drift sign keep the linear systems built on
top of them M-matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid",
    "GridField",
    "laplacian",
    "gradient_central",
    "gradient_upwind",
    "torus_distance",
    "field_to_csv",
    "field_from_csv",
    "field_to_json",
    "field_from_json",
]


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the unit torus [0,1)^d with nodes x_i = i/n."""

    d: int
    n: int

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.d}")
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"grid needs an integer n >= 8 nodes per axis, got {self.n}")

    @property
    def h(self) -> float:
        # spacing is derived from n, never stored, so n*h cannot drift
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def axis_coordinates(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def coordinates(self) -> np.ndarray:
        """All node coordinates as an (n^d, d) array in C order."""
        axes = [self.axis_coordinates()] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class GridField:
    """Real values on the nodes of a periodic grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {v.size}")
        v = v.reshape(self.grid.shape).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("grid field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "GridField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> "GridField":
        return cls.constant(grid, 0.0)

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def torus_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Quotient metric on T^d: sum over axes of min(|x-y|, 1-|x-y|).

    Broadcasts over leading axes; the last axis holds coordinates.
    """
    diff = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    diff = np.minimum(diff, 1.0 - diff)
    return diff.sum(axis=-1)


def laplacian(f: GridField) -> GridField:
    """Second-order periodic Laplacian; node sums vanish to machine precision."""
    v = f.values
    h2 = f.grid.h**2
    out = np.zeros_like(v)
    for ax in range(f.grid.d):
        out += (np.roll(v, -1, axis=ax) + np.roll(v, 1, axis=ax) - 2.0 * v) / h2
    return GridField(f.grid, out)


def gradient_central(f: GridField) -> tuple[GridField, ...]:
    """Second-order periodic central gradient, one component per axis."""
    v = f.values
    h = f.grid.h
    return tuple(
        GridField(f.grid, (np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2.0 * h))
        for ax in range(f.grid.d)
    )


def gradient_upwind(f: GridField, drift: tuple[GridField, ...]) -> tuple[GridField, ...]:
    """One-sided differences selected per node by the sign of the drift.

    Positive drift takes the forward difference, negative drift the backward
    one; exactly zero drift falls back to the central difference.  This is the
    stencil choice that makes drift terms of the form b . grad(u) assemble
    into M-matrices.
    """
    if len(drift) != f.grid.d:
        raise ValueError(f"drift needs {f.grid.d} components, got {len(drift)}")
    v = f.values
    h = f.grid.h
    out = []
    for ax in range(f.grid.d):
        b = drift[ax].values
        fwd = (np.roll(v, -1, axis=ax) - v) / h
        bwd = (v - np.roll(v, 1, axis=ax)) / h
        ctr = 0.5 * (fwd + bwd)
        out.append(GridField(f.grid, np.where(b > 0, fwd, np.where(b < 0, bwd, ctr))))
    return tuple(out)


# ---------------------------------------------------------------------------
# serialization: decimal text with 17 significant digits round-trips doubles


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def field_to_csv(f: GridField, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        if f.grid.d == 1:
            fh.write("i,value\n")
            for i, v in enumerate(f.values):
                fh.write(f"{i},{_fmt(v)}\n")
        else:
            fh.write("i,j,value\n")
            for i in range(f.grid.n):
                for j in range(f.grid.n):
                    fh.write(f"{i},{j},{_fmt(f.values[i, j])}\n")


def field_from_csv(grid: Grid, path: str) -> GridField:
    values = np.zeros(grid.shape)
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        ncols = len(header)
        if ncols != grid.d + 1:
            raise ValueError(f"csv has {ncols} columns, expected {grid.d + 1}")
        for line in fh:
            parts = line.strip().split(",")
            idx = tuple(int(p) for p in parts[:-1])
            values[idx] = float(parts[-1])
    return GridField(grid, values)


def field_to_json(f: GridField) -> str:
    payload = {
        "d": f.grid.d,
        "n": f.grid.n,
        "values": [_fmt(v) for v in f.flat()],
    }
    return json.dumps(payload)


def field_from_json(text: str) -> GridField:
    payload = json.loads(text)
    grid = Grid(payload["d"], payload["n"])
    return GridField(grid, np.array([float(v) for v in payload["values"]]))
