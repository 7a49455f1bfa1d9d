"""Evaluation quantities: perturbation energy, field error, near-wall
velocity slice, and cell-centered vorticity for visualization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cavity import CavityFlow, Grid

__all__ = [
    "MetricSeries",
    "energy",
    "field_error",
    "u_slice",
    "slice_row_index",
    "vorticity",
]


@dataclass
class MetricSeries:
    """A labelled time series."""

    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        if not np.isfinite(self.values).all():
            raise ValueError("metric series contains non-finite values")


def energy(v: np.ndarray) -> float:
    """Perturbation energy: squared 2-norm of the fluctuation vector.

    The grid is uniform, so no quadrature weights are applied.
    """
    v = np.asarray(v, dtype=float)
    return float(v @ v)


def field_error(v_fom: np.ndarray, v_rom: np.ndarray) -> float:
    """Absolute field error: 2-norm of the pointwise difference."""
    v_fom = np.asarray(v_fom, dtype=float)
    v_rom = np.asarray(v_rom, dtype=float)
    if v_fom.shape != v_rom.shape:
        raise ValueError(f"shape mismatch: {v_fom.shape} vs {v_rom.shape}")
    return float(np.linalg.norm(v_fom - v_rom))


def slice_row_index(grid: Grid, y_target: float = 0.05) -> int:
    """Index of the u-face row nearest ``y_target`` (ties resolve downward)."""
    y = (np.arange(grid.ny) + 0.5) * grid.dy
    return int(np.argmin(np.abs(y - y_target)))


def u_slice(v: np.ndarray, grid: Grid, y_target: float = 0.05) -> tuple[np.ndarray, int]:
    """u-fluctuation along the horizontal row nearest ``y_target``.

    Returns the values over x (state u-faces ``i = 1 .. nx``) and the chosen
    row index so outputs can record the slice location.
    """
    j = slice_row_index(grid, y_target)
    u_part = np.asarray(v, dtype=float)[: grid.nx * grid.ny].reshape(grid.nx, grid.ny)
    return u_part[:, j].copy(), j


def vorticity(v: np.ndarray, grid: Grid, solver: CavityFlow | None = None) -> np.ndarray:
    """Cell-centered vorticity of a packed fluctuation state.

    Second-order: corner values ``dv/dx - du/dy`` are averaged to cell
    centers.  Fluctuations satisfy homogeneous no-slip walls, which enter
    through the same linear ghost extrapolation the solver uses.
    """
    solver = CavityFlow(grid) if solver is None else solver
    f = solver.unpack(np.asarray(v, dtype=float))
    nx, ny, dx, dy = grid.nx, grid.ny, grid.dx, grid.dy
    # pad with ghost values: tangential components reflect across walls
    ug = np.empty((nx + 1, ny + 2))
    ug[:, 1:-1] = f.u
    ug[:, 0] = -f.u[:, 0]
    ug[:, -1] = -f.u[:, -1]
    vg = np.empty((nx + 2, ny + 1))
    vg[1:-1, :] = f.v
    vg[0, :] = -f.v[0, :]
    vg[-1, :] = -f.v[-1, :]
    # vorticity on the (nx+1) x (ny+1) corner lattice
    omega = (vg[1:, :] - vg[:-1, :]) / dx - (ug[:, 1:] - ug[:, :-1]) / dy
    # average the four surrounding corners onto cell centers
    return 0.25 * (omega[:-1, :-1] + omega[1:, :-1] + omega[:-1, 1:] + omega[1:, 1:])
