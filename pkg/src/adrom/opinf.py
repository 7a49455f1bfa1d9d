"""Operator inference: ridge regression of quadratic latent dynamics, the
weakly intrusive Galerkin baseline, and the two-stage adaptive update
(windowed basis refresh followed by an operator refit).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .basis import (IncrementalSVD, PodResult, ProjectionPair, _complete_basis,
                    _fix_signs, windowed_pod)
from .latent import PolynomialOperators, monomials

__all__ = [
    "RegressionData",
    "RankDeficientData",
    "build_regression_data",
    "default_penalty",
    "fit",
    "galerkin_project",
    "adapt_opinf",
]


class RankDeficientData(ValueError):
    """Unregularized fit on rank-deficient data; retry with penalty > 0."""


@dataclass
class RegressionData:
    """Design matrix with rows [z^T, unique-monomials(z)^T, u^T] and targets."""

    design: np.ndarray   # (M, r + r(r+1)/2 + m)
    targets: np.ndarray  # (M, r)
    penalty: float
    r: int
    m: int


def build_regression_data(states: np.ndarray, derivs: np.ndarray,
                          inputs: np.ndarray, penalty: float | None) -> RegressionData:
    """Assemble the least-squares system from latent samples.

    ``states``/``derivs`` are (M, r); ``inputs`` is (M, m).  ``penalty=None``
    selects the default rule ``1e-8 * trace(D^T D) / ncols``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    derivs = np.atleast_2d(np.asarray(derivs, dtype=float))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if states.shape != derivs.shape or states.shape[0] != inputs.shape[0]:
        raise ValueError("states, derivs and inputs disagree on sample count")
    design = np.hstack([states, monomials(states), inputs])
    if penalty is None:
        penalty = default_penalty(design)
    if penalty < 0:
        raise ValueError("penalty must be non-negative")
    return RegressionData(design, derivs, float(penalty),
                          states.shape[1], inputs.shape[1])


def default_penalty(design: np.ndarray) -> float:
    return 1e-8 * float(np.einsum("ij,ij->", design, design)) / design.shape[1]


def fit(states: np.ndarray, derivs: np.ndarray, inputs: np.ndarray,
        penalty: float | None = None) -> PolynomialOperators:
    """Ridge-regress (A, H, B) against latent derivative samples.

    Minimizes ``sum ||dz - f(z, u)||^2 + penalty * ||Theta||_F^2``
    column-wise through an orthogonal factorization of the augmented matrix
    ``[D; sqrt(penalty) I]``, so the returned solution satisfies the normal
    equations ``D^T (D Theta - Y) + penalty * Theta = 0``.  With
    ``penalty=0`` the data must have full column rank, otherwise
    :class:`RankDeficientData` is raised.
    """
    data = build_regression_data(states, derivs, inputs, penalty)
    D, Y = data.design, data.targets
    ncol = D.shape[1]
    if data.penalty == 0.0:
        theta, _, rank, _ = np.linalg.lstsq(D, Y, rcond=None)
        if rank < ncol:
            raise RankDeficientData(
                f"design matrix rank {rank} < {ncol} columns with penalty=0; "
                "pass penalty > 0 to regularize")
    else:
        aug = np.vstack([D, np.sqrt(data.penalty) * np.eye(ncol)])
        rhs = np.vstack([Y, np.zeros((ncol, Y.shape[1]))])
        theta, _, _, _ = np.linalg.lstsq(aug, rhs, rcond=None)
    r, m = data.r, data.m
    s = r * (r + 1) // 2
    A = theta[:r].T
    packed = theta[r:r + s].T
    B = theta[r + s:].T
    return PolynomialOperators.from_packed(A, packed, B)


def galerkin_project(fom_rhs, Phi: np.ndarray, m: int = 1,
                     resid_tol: float = 1e-8) -> PolynomialOperators:
    """Project exactly quadratic full-order dynamics onto an orthonormal basis.

    Touches the solver only through RHS evaluations ``fom_rhs(x, u)``: the
    linear part comes from odd probes ``(f(c) - f(-c)) / 2`` and the
    quadratic part from symmetric polarization ``(f(c) + f(-c)) / 2 - f(0)``
    over single columns and column pairs.  A cubic (or worse) leftover in
    the probes above ``resid_tol`` raises, flagging a non-quadratic RHS.
    """
    Phi = np.asarray(Phi, dtype=float)
    n, r = Phi.shape
    if np.abs(Phi.T @ Phi - np.eye(r)).max() > 1e-10:
        raise ValueError("Phi must have orthonormal columns")
    zero_u = np.zeros(m)
    c = fom_rhs(np.zeros(n), zero_u)

    A = np.empty((r, r))
    H = np.zeros((r, r, r))
    quad_diag = []
    for k in range(r):
        fp = fom_rhs(Phi[:, k], zero_u)
        fm = fom_rhs(-Phi[:, k], zero_u)
        A[:, k] = Phi.T @ (0.5 * (fp - fm))
        qd = 0.5 * (fp + fm) - c
        quad_diag.append(qd)
        H[:, k, k] = Phi.T @ qd
    for j in range(r):
        for k in range(j + 1, r):
            direction = Phi[:, j] + Phi[:, k]
            gp = fom_rhs(direction, zero_u)
            gm = fom_rhs(-direction, zero_u)
            qs = 0.5 * (gp + gm) - c
            cross = 0.5 * (qs - quad_diag[j] - quad_diag[k])
            H[:, j, k] = H[:, k, j] = Phi.T @ cross

    B = np.empty((r, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        B[:, i] = Phi.T @ (fom_rhs(np.zeros(n), e) - c)

    ops = PolynomialOperators(A, H, B)

    # cubic-leftover gate: quadratic dynamics must reproduce fresh probes
    rng = np.random.default_rng(0)
    c_lat = Phi.T @ c
    for _ in range(3):
        z = rng.standard_normal(r)
        u = rng.standard_normal(m)
        probe = Phi.T @ fom_rhs(Phi @ z, u)
        model = c_lat + ops.A @ z + (ops.H @ z) @ z + ops.B @ u
        scale = max(np.linalg.norm(probe), 1.0)
        resid = np.linalg.norm(probe - model) / scale
        if resid > resid_tol:
            raise ValueError(
                f"probe residual {resid:.2e} exceeds {resid_tol:.1e}: "
                "full-order RHS is not quadratic along this path")
    return ops


def _filled_basis(pod: PodResult, r: int, prev_basis: np.ndarray | None) -> np.ndarray:
    """Keep informative POD directions; fill the rest from the previous basis."""
    if pod.rank >= r and pod.basis.shape[1] >= r:
        return pod.basis[:, :r]
    keep = pod.basis[:, :pod.rank]
    if prev_basis is not None:
        warnings.warn(f"window rank {pod.rank} < r={r}; "
                      "retaining previous basis directions")
        cols = [keep[:, k] for k in range(keep.shape[1])]
        for j in range(prev_basis.shape[1]):
            if len(cols) == r:
                break
            cand = prev_basis[:, j].copy()
            for ccol in cols:
                cand -= (ccol @ cand) * ccol
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                cols.append(cand / norm)
        keep = np.column_stack(cols)
    if keep.shape[1] < r:
        warnings.warn(f"window rank {keep.shape[1]} < r={r}; "
                      "completing with canonical directions")
        keep = _complete_basis(keep, r)
    return _fix_signs(keep)


def adapt_opinf(window, r: int, penalty: float | None = None, *,
                basis_update: str = "windowed-svd",
                prev_basis: np.ndarray | None = None,
                isvd: IncrementalSVD | None = None,
                ) -> tuple[np.ndarray, PolynomialOperators]:
    """Two-stage online update: refresh the basis, then refit the operators.

    ``window`` is a :class:`~adrom.online.MovingWindow` (or anything exposing
    ``states()``, ``derivs()`` and ``inputs()`` as (M, .) arrays).  With
    ``basis_update="isvd"`` the caller owns the :class:`IncrementalSVD`
    state, which must already include the newest snapshot.
    Returns the new trial basis and the refit operators.
    """
    X = window.states()
    if X.shape[0] < 2:
        raise ValueError("window must hold at least 2 samples")
    if basis_update == "windowed-svd":
        pod = windowed_pod(X.T, min(r, *X.shape))
    elif basis_update == "isvd":
        if isvd is None:
            raise ValueError("basis_update='isvd' requires the isvd state")
        pod = isvd.pod_result()
    else:
        raise ValueError(f"unknown basis_update {basis_update!r}")
    Phi = _filled_basis(pod, r, prev_basis)
    Z = X @ Phi
    dZ = window.derivs() @ Phi
    ops = fit(Z, dZ, window.inputs(), penalty)
    return Phi, ops
