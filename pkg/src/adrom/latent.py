"""Quadratic latent dynamics dz/dt = A z + H:(z z^T) + B u and its integrator.

``H`` is an r x r x r tensor kept exactly symmetric in its trailing indices;
regression and persistence work with the s = r(r+1)/2 unique monomials
``z_j z_k`` (j <= k) ordered row-major as produced by ``np.triu_indices(r)``:
(0,0), (0,1), ..., (0,r-1), (1,1), ..., (r-1,r-1).  The binary operator
record is little-endian ``{r u32, m u32, A row-major f64, H packed-unique
f64, B row-major f64}`` in that column order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "PolynomialOperators",
    "ReducedTrajectory",
    "monomials",
    "eval_rhs",
    "ab2_update",
    "step_ab2",
    "simulate",
    "save_operators",
    "load_operators",
]


def _symmetrize(H: np.ndarray) -> np.ndarray:
    return 0.5 * (H + H.transpose(0, 2, 1))


@dataclass
class PolynomialOperators:
    """Reduced tensors (A, H, B); H trailing-index symmetric by construction."""

    A: np.ndarray
    H: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.H = _symmetrize(np.asarray(self.H, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        r = self.A.shape[0]
        if self.A.shape != (r, r) or self.H.shape != (r, r, r):
            raise ValueError("A must be r x r and H must be r x r x r")
        if self.B.ndim != 2 or self.B.shape[0] != r:
            raise ValueError("B must be r x m")
        for name, t in (("A", self.A), ("H", self.H), ("B", self.B)):
            if not np.isfinite(t).all():
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def r(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @classmethod
    def zeros(cls, r: int, m: int = 1) -> "PolynomialOperators":
        return cls(np.zeros((r, r)), np.zeros((r, r, r)), np.zeros((r, m)))

    def packed_quadratic(self) -> np.ndarray:
        """Coefficients against unique monomials: r x s with s = r(r+1)/2.

        Off-diagonal pairs absorb both symmetric entries, so
        ``packed @ monomials(z) == H:(z z^T)`` exactly.
        """
        r = self.r
        iu, ju = np.triu_indices(r)
        packed = self.H[:, iu, ju].copy()
        packed[:, iu != ju] *= 2.0
        return packed

    @classmethod
    def from_packed(cls, A: np.ndarray, packed: np.ndarray, B: np.ndarray) -> "PolynomialOperators":
        r = A.shape[0]
        iu, ju = np.triu_indices(r)
        coeff = packed.copy()
        coeff[:, iu != ju] *= 0.5
        H = np.zeros((r, r, r))
        H[:, iu, ju] = coeff
        H[:, ju, iu] = coeff
        return cls(A, H, B)


@dataclass
class ReducedTrajectory:
    """Uniformly sampled latent trajectory with its inputs."""

    times: np.ndarray   # (nsteps+1,)
    states: np.ndarray  # (nsteps+1, r)
    inputs: np.ndarray  # (nsteps+1, m)

    def __len__(self) -> int:
        return self.times.size


def monomials(z: np.ndarray) -> np.ndarray:
    """Unique quadratic monomials of z in triu row-major order."""
    z = np.asarray(z, dtype=float)
    iu, ju = np.triu_indices(z.shape[-1])
    return z[..., iu] * z[..., ju]


def eval_rhs(ops: PolynomialOperators, z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """A z + H:(z z^T) + B u with (H:(z z^T))_i = sum_jk H_ijk z_j z_k."""
    return ops.A @ z + (ops.H @ z) @ z + ops.B @ u


def ab2_update(z: np.ndarray, f_cur: np.ndarray, f_prev: np.ndarray | None,
               dt: float) -> np.ndarray:
    """One Adams-Bashforth-2 update; explicit Euler when no history exists."""
    if f_prev is None:
        return z + dt * f_cur
    return z + dt * (1.5 * f_cur - 0.5 * f_prev)


def step_ab2(ops: PolynomialOperators, z_prev_rhs: np.ndarray | None,
             z: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Advance one step from z; ``z_prev_rhs=None`` flags an Euler restart."""
    out = ab2_update(z, eval_rhs(ops, z, u), z_prev_rhs, dt)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite latent state after step")
    return out


def simulate(ops: PolynomialOperators, z0: np.ndarray, inputs: np.ndarray,
             steps: int, dt: float, t0: float = 0.0) -> ReducedTrajectory:
    """Roll the latent dynamics forward ``steps`` steps.

    ``inputs`` must supply u at every step start, shape (steps, m) or
    (steps+1, m); the trailing row, when present, is stored with the final
    state for bookkeeping.  Raises with the step index if the state leaves
    the finite range.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] not in (steps, steps + 1):
        raise ValueError(f"inputs must have {steps} or {steps + 1} rows")
    z = np.asarray(z0, dtype=float).copy()
    states = np.empty((steps + 1, z.size))
    states[0] = z
    f_prev = None
    for k in range(steps):
        f_cur = eval_rhs(ops, z, inputs[k])
        z = ab2_update(z, f_cur, f_prev, dt)
        if not np.isfinite(z).all():
            raise FloatingPointError(f"non-finite latent state at step {k + 1}")
        states[k + 1] = z
        f_prev = f_cur
    u_full = np.zeros((steps + 1, inputs.shape[1]))
    u_full[: inputs.shape[0]] = inputs
    times = t0 + dt * np.arange(steps + 1)
    return ReducedTrajectory(times, states, u_full)


def save_operators(path: str | Path, ops: PolynomialOperators) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", ops.r, ops.m))
        fh.write(np.ascontiguousarray(ops.A, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ops.packed_quadratic(), dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ops.B, dtype="<f8").tobytes())


def load_operators(path: str | Path) -> PolynomialOperators:
    with open(path, "rb") as fh:
        r, m = struct.unpack("<II", fh.read(8))
        s = r * (r + 1) // 2
        A = np.frombuffer(fh.read(8 * r * r), dtype="<f8").reshape(r, r)
        packed = np.frombuffer(fh.read(8 * r * s), dtype="<f8").reshape(r, s)
        B = np.frombuffer(fh.read(8 * r * m), dtype="<f8").reshape(r, m)
    return PolynomialOperators.from_packed(A.copy(), packed.copy(), B.copy())
