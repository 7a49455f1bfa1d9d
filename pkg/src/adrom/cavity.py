"""Full-order solver: 2-D incompressible lid-driven cavity with localized forcing.

Second-order finite-volume discretization on a fully staggered (MAC) uniform
grid over the unit square.  No-slip walls, lid velocity U=1 at the top, and a
Gaussian body force on the x-momentum equation near the upper-right corner.
Time integration is explicit two-step Adams-Bashforth followed by a pressure
projection; the pure-Neumann Poisson problem is solved exactly with a
type-2 cosine transform (nullspace pinned by zeroing the mean mode).

State-vector indexing
---------------------
The flat state holds velocity fluctuations about the steady base flow.  Each
velocity component is stored as an ``nx * ny`` block, for a total of
``n = 2 * nx * ny`` entries (20000 on the reference 100 x 100 grid):

* x-velocity ``u[i, j]`` lives on vertical faces ``x = i*dx``,
  ``y = (j+1/2)*dy``.  The state keeps faces ``i = 1 .. nx`` (row-major in
  ``i`` then ``j``); the left-wall face ``i = 0`` is excluded, and the
  right-wall faces ``i = nx`` are retained as identically-zero entries.
* y-velocity ``v[i, j]`` lives on horizontal faces ``x = (i+1/2)*dx``,
  ``y = j*dy``.  The state keeps faces ``j = 1 .. ny``; the bottom-wall
  faces are excluded and the top-lid faces ``j = ny`` are retained as
  identically-zero entries.

Physical trajectories therefore carry exactly ``2*nx*ny`` degrees of freedom
of which the ``nx + ny`` wall-pinned entries never move.  Tangential wall
conditions enter through linearly extrapolated ghost values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

__all__ = [
    "Grid",
    "VelocityField",
    "ForcingConfig",
    "SteadyStateError",
    "forcing_signal",
    "input_map",
    "CavityFlow",
]


@dataclass(frozen=True)
class Grid:
    """Uniform staggered grid on the unit square."""

    nx: int
    ny: int
    dx: float
    dy: float

    @classmethod
    def uniform(cls, nx: int, ny: int | None = None) -> "Grid":
        ny = nx if ny is None else ny
        return cls(nx=nx, ny=ny, dx=1.0 / nx, dy=1.0 / ny)

    @property
    def ndof(self) -> int:
        """Length of the flat state vector."""
        return 2 * self.nx * self.ny

    def x_ufaces(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates (x, y) of the u-faces kept in the state, shape (nx, ny)."""
        x = (np.arange(1, self.nx + 1) * self.dx)[:, None]
        y = ((np.arange(self.ny) + 0.5) * self.dy)[None, :]
        return np.broadcast_to(x, (self.nx, self.ny)), np.broadcast_to(y, (self.nx, self.ny))


@dataclass
class VelocityField:
    """Staggered velocity arrays, walls included.

    ``u`` has shape ``(nx+1, ny)`` (vertical faces, ``u[0]``/``u[nx]`` on the
    side walls); ``v`` has shape ``(nx, ny+1)`` (horizontal faces,
    ``v[:, 0]``/``v[:, ny]`` on bottom/top).
    """

    u: np.ndarray
    v: np.ndarray

    def copy(self) -> "VelocityField":
        return VelocityField(self.u.copy(), self.v.copy())

    @classmethod
    def zeros(cls, grid: Grid) -> "VelocityField":
        return cls(np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))


@dataclass(frozen=True)
class ForcingConfig:
    """Gaussian x-momentum forcing, amplitude * sin(frequency * t) in time."""

    amplitude: float = 0.1
    frequency: float = 4.0
    center: tuple[float, float] = (0.95, 0.95)
    stiffness: float = 5000.0

    def __post_init__(self):
        if self.amplitude <= 0 or self.frequency <= 0 or self.stiffness <= 0:
            raise ValueError("forcing parameters must be strictly positive")
        xc, yc = self.center
        if not (0.0 < xc < 1.0 and 0.0 < yc < 1.0):
            raise ValueError("forcing center must lie inside the unit square")


def forcing_signal(t: float, config: ForcingConfig = ForcingConfig()) -> float:
    """Scalar input w(t) = amplitude * sin(frequency * t)."""
    return config.amplitude * np.sin(config.frequency * t)


def input_map(grid: Grid, config: ForcingConfig = ForcingConfig()) -> np.ndarray:
    """Flat input pattern: Gaussian bump on interior u-faces, zero elsewhere.

    Faces pinned by the walls (including the retained right-wall entries)
    receive exactly zero since no body force can move them.
    """
    x, y = grid.x_ufaces()
    xc, yc = config.center
    bu = np.exp(-config.stiffness * ((x - xc) ** 2 + (y - yc) ** 2))
    bu[-1, :] = 0.0  # right-wall faces are pinned
    out = np.zeros(grid.ndof)
    out[: grid.nx * grid.ny] = bu.ravel()
    return out


class SteadyStateError(RuntimeError):
    """Raised when the pseudo-time march fails to reach the residual target."""

    def __init__(self, message: str, history: list[tuple[int, float]]):
        super().__init__(message)
        self.history = history


class _NeumannPoisson:
    """Exact pure-Neumann Poisson solve on the cell-centered grid via DCT-II."""

    def __init__(self, grid: Grid):
        lx = (2.0 * np.cos(np.pi * np.arange(grid.nx) / grid.nx) - 2.0) / grid.dx**2
        ly = (2.0 * np.cos(np.pi * np.arange(grid.ny) / grid.ny) - 2.0) / grid.dy**2
        den = lx[:, None] + ly[None, :]
        den[0, 0] = 1.0  # nullspace mode, zeroed below
        self._den = den

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        fh = sfft.dctn(rhs, type=2)
        fh /= self._den
        fh[0, 0] = 0.0  # pin mean to zero
        return sfft.idctn(fh, type=2)


class CavityFlow:
    """Lid-driven cavity solver and fluctuation-dynamics interface.

    An instance owns mutable integrator history (the previous momentum RHS
    for Adams-Bashforth) and a cached base flow; it is single-threaded but
    cheap to construct, and all operations are deterministic.

    Parameters
    ----------
    grid : Grid
    re : float
        Reynolds number (lid velocity 1, unit cavity).
    dt : float
        Time step of the explicit scheme.
    forcing : ForcingConfig
        Spatial/temporal shape of the input; the scalar signal may be
        overridden per step.
    """

    def __init__(self, grid: Grid, re: float = 8300.0, dt: float = 0.0025,
                 forcing: ForcingConfig = ForcingConfig()):
        if re <= 0:
            raise ValueError("re must be positive")
        self.grid = grid
        self.re = float(re)
        self.dt = float(dt)
        self.forcing = forcing
        self._poisson = _NeumannPoisson(grid)
        self._bu = input_map(grid, forcing)[: grid.nx * grid.ny].reshape(grid.nx, grid.ny)
        self._prev_rhs: tuple[np.ndarray, np.ndarray] | None = None
        self._base: VelocityField | None = None
        self._base_rhs_proj: tuple[np.ndarray, np.ndarray] | None = None
        self.step_count = 0

    # ------------------------------------------------------------------
    # state packing
    # ------------------------------------------------------------------

    def pack(self, f: VelocityField) -> np.ndarray:
        """Flatten a field into the state layout (see module docstring)."""
        g = self.grid
        out = np.empty(g.ndof)
        out[: g.nx * g.ny] = f.u[1:, :].ravel()
        out[g.nx * g.ny:] = f.v[:, 1:].ravel()
        return out

    def unpack(self, x: np.ndarray) -> VelocityField:
        """Inverse of :meth:`pack`; excluded wall faces are restored as zero."""
        g = self.grid
        u = np.zeros((g.nx + 1, g.ny))
        v = np.zeros((g.nx, g.ny + 1))
        u[1:, :] = x[: g.nx * g.ny].reshape(g.nx, g.ny)
        v[:, 1:] = x[g.nx * g.ny:].reshape(g.nx, g.ny)
        return VelocityField(u, v)

    # ------------------------------------------------------------------
    # spatial operators
    # ------------------------------------------------------------------

    def divergence(self, f: VelocityField) -> np.ndarray:
        g = self.grid
        return (f.u[1:, :] - f.u[:-1, :]) / g.dx + (f.v[:, 1:] - f.v[:, :-1]) / g.dy

    def project(self, f: VelocityField) -> VelocityField:
        """Remove the discrete divergence; interior faces only are corrected."""
        g = self.grid
        phi = self._poisson.solve(self.divergence(f))
        out = f.copy()
        out.u[1:-1, :] -= (phi[1:, :] - phi[:-1, :]) / g.dx
        out.v[:, 1:-1] -= (phi[:, 1:] - phi[:, :-1]) / g.dy
        return out

    def _input_pattern(self, cfg: ForcingConfig) -> np.ndarray:
        if cfg == self.forcing:
            return self._bu
        g = self.grid
        return input_map(g, cfg)[: g.nx * g.ny].reshape(g.nx, g.ny)

    def _momentum_rhs(self, f: VelocityField, lid: float, w: float,
                      bu: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Convective + viscous + forcing acceleration (no pressure).

        Returns arrays shaped like ``f.u`` / ``f.v`` that are zero on every
        wall-pinned face.  ``lid`` is the tangential lid velocity used in the
        ghost extrapolation (1 for full fields, 0 for fluctuations).
        """
        g = self.grid
        dx, dy, nu = g.dx, g.dy, 1.0 / self.re
        u, v = f.u, f.v

        # ghost layers: tangential no-slip / lid via linear extrapolation
        ug = np.empty((g.nx + 1, g.ny + 2))
        ug[:, 1:-1] = u
        ug[:, 0] = -u[:, 0]
        ug[:, -1] = 2.0 * lid - u[:, -1]
        vg = np.empty((g.nx + 2, g.ny + 1))
        vg[1:-1, :] = v
        vg[0, :] = -v[0, :]
        vg[-1, :] = -v[-1, :]

        fu = np.zeros_like(u)
        fv = np.zeros_like(v)

        # --- x-momentum on interior vertical faces (i = 1 .. nx-1) ---
        uc = 0.5 * (u[1:, :] + u[:-1, :])              # u at cell centers
        dudx2 = (uc[1:, :] ** 2 - uc[:-1, :] ** 2) / dx
        ucor = 0.5 * (ug[1:-1, 1:] + ug[1:-1, :-1])    # u at corners, i=1..nx-1
        vcor = 0.5 * (v[:-1, :] + v[1:, :])            # v at corners, i=1..nx-1
        duvdy = (ucor[:, 1:] * vcor[:, 1:] - ucor[:, :-1] * vcor[:, :-1]) / dy
        lap_u = ((u[2:, :] - 2.0 * u[1:-1, :] + u[:-2, :]) / dx**2
                 + (ug[1:-1, 2:] - 2.0 * ug[1:-1, 1:-1] + ug[1:-1, :-2]) / dy**2)
        fu[1:-1, :] = -dudx2 - duvdy + nu * lap_u
        if w != 0.0:
            fu[1:, :] += w * (self._bu if bu is None else bu)

        # --- y-momentum on interior horizontal faces (j = 1 .. ny-1) ---
        vc = 0.5 * (v[:, 1:] + v[:, :-1])              # v at cell centers
        dvdy2 = (vc[:, 1:] ** 2 - vc[:, :-1] ** 2) / dy
        vcor2 = 0.5 * (vg[1:, 1:-1] + vg[:-1, 1:-1])   # v at corners, j=1..ny-1
        ucor2 = 0.5 * (u[:, 1:] + u[:, :-1])           # u at corners, j=1..ny-1
        duvdx = (vcor2[1:, :] * ucor2[1:, :] - vcor2[:-1, :] * ucor2[:-1, :]) / dx
        lap_v = ((vg[2:, 1:-1] - 2.0 * vg[1:-1, 1:-1] + vg[:-2, 1:-1]) / dx**2
                 + (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) / dy**2)
        fv[:, 1:-1] = -dvdy2 - duvdx + nu * lap_v

        return fu, fv

    # ------------------------------------------------------------------
    # time stepping
    # ------------------------------------------------------------------

    def reset_history(self) -> None:
        """Invalidate the AB2 history; the next step starts with Euler."""
        self._prev_rhs = None

    def step(self, f: VelocityField, t: float, forcing: ForcingConfig | None = None,
             *, lid: float = 1.0, forced: bool = True) -> VelocityField:
        """Advance one time step (AB2, Euler on a cold start) and project.

        ``t`` is the time at the *start* of the step.  Raises on NaN/Inf with
        the offending step index.
        """
        cfg = self.forcing if forcing is None else forcing
        w = forcing_signal(t, cfg) if forced else 0.0
        fu, fv = self._momentum_rhs(f, lid, w, bu=self._input_pattern(cfg))
        out = f.copy()
        if self._prev_rhs is None:
            out.u += self.dt * fu
            out.v += self.dt * fv
        else:
            pu, pv = self._prev_rhs
            out.u += self.dt * (1.5 * fu - 0.5 * pu)
            out.v += self.dt * (1.5 * fv - 0.5 * pv)
        out = self.project(out)
        self._prev_rhs = (fu, fv)
        self.step_count += 1
        if not (np.isfinite(out.u).all() and np.isfinite(out.v).all()):
            raise FloatingPointError(f"non-finite velocity after step {self.step_count}")
        return out

    # ------------------------------------------------------------------
    # base flow and fluctuation dynamics
    # ------------------------------------------------------------------

    def steady_state(self, *, tol: float = 1e-10, target: float = 1e-11,
                     max_steps: int = 4_000_000, dt: float | None = None,
                     start: VelocityField | None = None, check_every: int = 200,
                     ) -> tuple[VelocityField, list[tuple[int, float]]]:
        """Unforced pseudo-time march to the steady base flow.

        Marches from rest (or ``start``) until the projected-RHS residual
        ``||P N(V)|| / ||V||`` drops below ``target`` (an absolute-quality
        goal tighter than the ``tol`` contract) or stalls at roundoff.
        Returns the field and the ``(step, relative residual)`` history;
        raises :class:`SteadyStateError` if ``tol`` was not met.
        """
        dt = self.dt if dt is None else dt
        saved_dt, self.dt = self.dt, dt
        f = VelocityField.zeros(self.grid) if start is None else start.copy()
        self.reset_history()
        history: list[tuple[int, float]] = []
        best = np.inf
        stall = 0
        try:
            for k in range(1, max_steps + 1):
                f = self.step(f, 0.0, forced=False)
                if k % check_every == 0:
                    res = self._steady_residual(f)
                    history.append((k, res))
                    if res < target:
                        break
                    if res < best * 0.999:
                        best, stall = min(best, res), 0
                    else:
                        stall += 1
                        if stall >= 20:  # roundoff floor reached
                            break
        finally:
            self.dt = saved_dt
            self.reset_history()
        final = self._steady_residual(f)
        history.append((self.step_count, final))
        if final > tol:
            raise SteadyStateError(
                f"steady-state march stalled at relative residual {final:.3e} "
                f"(tolerance {tol:.1e})", history)
        return f, history

    def _steady_residual(self, f: VelocityField) -> float:
        fu, fv = self._momentum_rhs(f, 1.0, 0.0)
        pr = self.project(VelocityField(fu, fv))
        num = np.sqrt(np.sum(pr.u[1:, :] ** 2) + np.sum(pr.v[:, 1:] ** 2))
        den = np.sqrt(np.sum(f.u**2) + np.sum(f.v**2))
        return num / max(den, 1e-30)

    def set_base_flow(self, base: VelocityField) -> None:
        """Install the steady base flow; enables the fluctuation interface."""
        self._base = base.copy()
        fu, fv = self._momentum_rhs(base, 1.0, 0.0)
        pr = self.project(VelocityField(fu, fv))
        self._base_rhs_proj = (pr.u, pr.v)

    @property
    def base_flow(self) -> VelocityField:
        if self._base is None:
            raise RuntimeError("base flow not set; call set_base_flow first")
        return self._base

    def rhs_fluctuation(self, x: np.ndarray, w: float) -> np.ndarray:
        """Time derivative of the packed fluctuation state.

        Evaluates ``P[N(Vbar + v) - N(Vbar)] + w * P[B]`` so the origin is an
        exact fixed point regardless of the residual left in the cached base
        flow.  Exactly quadratic in ``x`` and linear in ``w``.
        """
        base = self.base_flow
        v = self.unpack(x)
        full = VelocityField(base.u + v.u, base.v + v.v)
        fu, fv = self._momentum_rhs(full, 1.0, w)
        pr = self.project(VelocityField(fu, fv))
        bu, bv = self._base_rhs_proj
        out = self.pack(VelocityField(pr.u - bu, pr.v - bv))
        if not np.isfinite(out).all():
            raise FloatingPointError("non-finite fluctuation RHS")
        return out

    def step_fluctuation(self, x: np.ndarray, t: float) -> np.ndarray:
        """One full-field step starting from fluctuation ``x``; returns the
        new fluctuation.  Uses whatever AB2 history the instance holds."""
        base = self.base_flow
        v = self.unpack(x)
        full = self.step(VelocityField(base.u + v.u, base.v + v.v), t)
        return self.pack(VelocityField(full.u - base.u, full.v - base.v))

    def run(self, x0: np.ndarray, t0: float, nsteps: int,
            callback=None) -> np.ndarray:
        """March ``nsteps`` forced steps in fluctuation form from ``x0``.

        ``callback(k, t, x)`` is invoked after every step with the one-based
        step index.  Returns the final fluctuation state.  History is reset
        so the first step is Euler.
        """
        base = self.base_flow
        v = self.unpack(x0)
        f = VelocityField(base.u + v.u, base.v + v.v)
        self.reset_history()
        for k in range(1, nsteps + 1):
            f = self.step(f, t0 + (k - 1) * self.dt)
            if callback is not None:
                fluct = self.pack(VelocityField(f.u - base.u, f.v - base.v))
                callback(k, t0 + k * self.dt, fluct)
        return self.pack(VelocityField(f.u - base.u, f.v - base.v))
