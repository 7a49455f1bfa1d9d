"""Joint optimization of projection bases and latent dynamics on the product
manifold (Grassmann x Stiefel x Euclidean operator spaces).

The objective is the mean squared reconstruction error of a latent rollout
against the window samples: the latent state starts from the encoded oldest
sample and is advanced by the package's own AB2/Euler integrator at the
window's sample spacing.  Gradients are computed by a discrete adjoint of
exactly that rollout (reverse sweep through the integrator recursion), then
projected to the manifold tangent spaces.  Descent uses plain Riemannian
gradient steps with Armijo backtracking and thin-QR retractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .basis import ProjectionPair
from .latent import PolynomialOperators, _symmetrize
from .opinf import adapt_opinf

__all__ = [
    "NitromParams",
    "TangentUpdate",
    "ArrayWindow",
    "cost",
    "gradient",
    "retract",
    "optimize",
    "adapt_nitrom",
    "hybrid_adapt",
    "random_tangent",
]

BLOWUP_PENALTY = 1e12
_TANGENT_TOL = 1e-10


@dataclass
class NitromParams:
    """A point on the product manifold: projection pair plus operators."""

    pair: ProjectionPair
    ops: PolynomialOperators

    @property
    def r(self) -> int:
        return self.pair.r

    @classmethod
    def from_orthogonal(cls, Phi: np.ndarray, ops: PolynomialOperators) -> "NitromParams":
        return cls(ProjectionPair.orthogonal(Phi), ops)


@dataclass
class TangentUpdate:
    """Tangent vector: horizontal dPhi, Stiefel-tangent dPsi, Euclidean rest."""

    dPhi: np.ndarray
    dPsi: np.ndarray
    dA: np.ndarray
    dH: np.ndarray
    dB: np.ndarray

    def scale(self, a: float) -> "TangentUpdate":
        return TangentUpdate(a * self.dPhi, a * self.dPsi, a * self.dA,
                             a * self.dH, a * self.dB)

    def inner(self, other: "TangentUpdate") -> float:
        return float(np.vdot(self.dPhi, other.dPhi) + np.vdot(self.dPsi, other.dPsi)
                     + np.vdot(self.dA, other.dA) + np.vdot(self.dH, other.dH)
                     + np.vdot(self.dB, other.dB))

    def norm(self) -> float:
        return np.sqrt(self.inner(self))

    def check_tangent(self, params: NitromParams, tol: float = _TANGENT_TOL) -> None:
        Phi, Psi = params.pair.Phi, params.pair.Psi
        scale = max(self.norm(), 1.0)
        horiz = np.abs(Phi.T @ self.dPhi).max(initial=0.0)
        pp = Psi.T @ self.dPsi
        skew = np.abs(pp + pp.T).max(initial=0.0)
        sym = np.abs(self.dH - self.dH.transpose(0, 2, 1)).max(initial=0.0)
        if max(horiz, skew, sym) > tol * scale:
            raise ValueError(
                f"direction violates tangent structure (horizontality {horiz:.2e}, "
                f"skewness {skew:.2e}, H-symmetry {sym:.2e})")


@dataclass
class ArrayWindow:
    """Plain-array training window: rows of states, sample times, inputs."""

    X: np.ndarray      # (M, n)
    T: np.ndarray      # (M,)
    U: np.ndarray      # (M, m)
    _sum_x2: float | None = dataclass_field(default=None, repr=False)

    def states(self) -> np.ndarray:
        return self.X

    def times(self) -> np.ndarray:
        return self.T

    def inputs(self) -> np.ndarray:
        return self.U

    def sum_sq(self) -> float:
        if self._sum_x2 is None:
            self._sum_x2 = float(np.einsum("ij,ij->", self.X, self.X))
        return self._sum_x2


def _window_arrays(window):
    X = np.atleast_2d(np.asarray(window.states(), dtype=float))
    T = np.asarray(window.times(), dtype=float)
    U = np.atleast_2d(np.asarray(window.inputs(), dtype=float))
    sum_x2 = window.sum_sq() if hasattr(window, "sum_sq") else float(
        np.einsum("ij,ij->", X, X))
    return X, T, U, sum_x2


def _rollout(params: NitromParams, X, T, U):
    """Latent rollout at the window spacing; returns (Z, F, prev_idx, blown_up).

    Step sizes come from consecutive sample times; the first step is Euler
    and the rest AB2.  Zero-length gaps (duplicated sample times) are
    no-ops that leave the integrator history untouched, so repeated samples
    only reweight the cost.  ``prev_idx[k]`` is the index of the RHS used as
    AB2 history by step k, or -1 for an Euler step; -2 marks a skipped step.
    """
    ops = params.ops
    M = X.shape[0]
    z = params.pair.Psi.T @ X[0]
    limit = 1e8 * (1.0 + float(np.linalg.norm(z)))
    Z = np.empty((M, z.size))
    Z[0] = z
    F = np.zeros((max(M - 1, 0), z.size))
    prev_idx = np.full(max(M - 1, 0), -2, dtype=int)
    last_live = -1
    for k in range(M - 1):
        h = T[k + 1] - T[k]
        if h == 0.0:
            Z[k + 1] = z
            continue
        f = ops.A @ z + (ops.H @ z) @ z + ops.B @ U[k]
        F[k] = f
        if last_live < 0:
            prev_idx[k] = -1
            z = z + h * f
        else:
            prev_idx[k] = last_live
            z = z + h * (1.5 * f - 0.5 * F[last_live])
        if not np.isfinite(z).all() or np.abs(z).max() > limit:
            return Z, F, prev_idx, True
        Z[k + 1] = z
        last_live = k
    return Z, F, prev_idx, False


def _forward(params: NitromParams, window):
    X, T, U, sum_x2 = _window_arrays(window)
    M = X.shape[0]
    Z, F, prev_idx, blown = _rollout(params, X, T, U)
    if blown:
        return {"J": BLOWUP_PENALTY * sum_x2 / M, "blowup": True,
                "X": X, "T": T, "U": U, "M": M}
    W = params.pair.decoder
    XW = X @ W                       # (M, r)
    G = W.T @ W
    J = (sum_x2 - 2.0 * float(np.einsum("mr,mr->", XW, Z))
         + float(np.einsum("mi,ij,mj->", Z, G, Z))) / M
    return {"J": max(J, 0.0), "blowup": False, "X": X, "T": T, "U": U,
            "M": M, "Z": Z, "F": F, "prev_idx": prev_idx, "W": W,
            "XW": XW, "G": G}


def cost(params: NitromParams, window) -> float:
    """Mean squared reconstruction error of the window rollout.

    A diverging rollout yields the finite penalty ``1e12 * mean window
    energy`` so line searches can reject the step; use :func:`cost_info`
    when the blow-up flag is needed.
    """
    return _forward(params, window)["J"]


def cost_info(params: NitromParams, window) -> tuple[float, bool]:
    fwd = _forward(params, window)
    return fwd["J"], fwd["blowup"]


def _gradient_from_forward(params: NitromParams, fwd) -> TangentUpdate:
    if fwd["blowup"]:
        raise FloatingPointError("cost blew up; gradient undefined at this point")
    X, T, U, M = fwd["X"], fwd["T"], fwd["U"], fwd["M"]
    Z, F, prev_idx = fwd["Z"], fwd["F"], fwd["prev_idx"]
    W, XW, G = fwd["W"], fwd["XW"], fwd["G"]
    pair, ops = params.pair, params.ops
    Phi, Psi, S = pair.Phi, pair.Psi, pair._coupling_inv
    r = Z.shape[1]

    # reconstruction terms, identical for every sample
    bar_z = (2.0 / M) * (Z @ G - XW)            # (M, r)
    bar_W = (2.0 / M) * (W @ (Z.T @ Z) - X.T @ Z)

    # reverse sweep through the AB2 recursion z_{k+1} = z_k + h(c1 f_k - c0 f_prev)
    bar_F = np.zeros_like(F)
    for k in range(M - 2, -1, -1):
        g = bar_z[k + 1]
        bar_z[k] += g
        if prev_idx[k] == -2:       # zero-length gap: identity step
            continue
        h = T[k + 1] - T[k]
        c1 = 1.0 if prev_idx[k] == -1 else 1.5
        bar_F[k] += (h * c1) * g
        if prev_idx[k] >= 0:
            bar_F[prev_idx[k]] -= (0.5 * h) * g
        # bar_F[k] is now complete (any AB2-history use of f_k was handled by
        # the later live step, already visited); pull it back through f(z_k, u_k)
        bar_z[k] += ops.A.T @ bar_F[k] + 2.0 * (ops.H @ Z[k]).T @ bar_F[k]

    if M > 1:
        Zf = Z[:-1]
        bar_A = bar_F.T @ Zf
        bar_H = np.einsum("mi,mj,mk->ijk", bar_F, Zf, Zf)
        bar_B = bar_F.T @ U[:-1]
    else:
        bar_A = np.zeros((r, r))
        bar_H = np.zeros((r, r, r))
        bar_B = np.zeros_like(ops.B)

    # decoder chain: W = Phi S, S = (Psi^T Phi)^{-1}
    bar_T = -S.T @ (Phi.T @ bar_W) @ S.T
    bar_Phi = bar_W @ S.T + Psi @ bar_T
    bar_Psi = Phi @ bar_T.T + np.outer(X[0], bar_z[0])

    # manifold projections
    g_Phi = bar_Phi - Phi @ (Phi.T @ bar_Phi)
    PtP = Psi.T @ bar_Psi
    g_Psi = bar_Psi - Psi @ (0.5 * (PtP + PtP.T))
    return TangentUpdate(g_Phi, g_Psi, bar_A, _symmetrize(bar_H), bar_B)


def gradient(params: NitromParams, window) -> TangentUpdate:
    """Riemannian gradient of :func:`cost` (discrete adjoint of the rollout)."""
    return _gradient_from_forward(params, _forward(params, window))


def _qf(mat: np.ndarray, label: str) -> np.ndarray:
    """Thin-QR orthonormal factor with positive-diagonal sign fix."""
    q, rr = np.linalg.qr(mat)
    d = np.diag(rr)
    col_scale = np.abs(mat).max(initial=0.0)
    if np.abs(d).min() <= 1e-12 * max(col_scale, 1e-300):
        raise np.linalg.LinAlgError(
            f"QR retraction breakdown in factor {label}: rank-deficient update")
    return q * np.sign(d)


def retract(params: NitromParams, direction: TangentUpdate, step: float) -> NitromParams:
    """Move along a tangent direction and restore all manifold constraints."""
    if step == 0.0:
        return params
    direction.check_tangent(params)
    Phi = _qf(params.pair.Phi + step * direction.dPhi, "Phi")
    Psi = _qf(params.pair.Psi + step * direction.dPsi, "Psi")
    ops = PolynomialOperators(params.ops.A + step * direction.dA,
                              params.ops.H + step * direction.dH,
                              params.ops.B + step * direction.dB)
    return NitromParams(ProjectionPair(Phi, Psi), ops)


def optimize(params: NitromParams, window, K: int, *,
             armijo_c: float = 1e-4, shrink: float = 0.5,
             max_backtracks: int = 30,
             ) -> tuple[NitromParams, list[float], dict]:
    """K Riemannian gradient-descent iterations with Armijo backtracking.

    The first trial step is ``1 / (1 + ||grad||)``; later iterations start
    from twice the previously accepted step.  Returns the final point, the
    cost history (entry value followed by each accepted value, non-increasing
    by construction), and an info dict with per-iteration records
    ``(iter, J, step, backtracks)``, manifold-hygiene residuals, and a
    ``stalled`` flag set after ``max_backtracks`` consecutive rejections.
    """
    if K < 1:
        raise ValueError("optimization budget K must be >= 1")
    fwd = _forward(params, window)
    history = [fwd["J"]]
    records: list[tuple[int, float, float, int]] = []
    hygiene: list[tuple[float, float]] = []
    info = {"records": records, "hygiene": hygiene, "stalled": False}
    step_prev: float | None = None
    for it in range(1, K + 1):
        if fwd["blowup"]:
            info["stalled"] = True
            break
        grad = _gradient_from_forward(params, fwd)
        gnorm2 = grad.inner(grad)
        descent = grad.scale(-1.0)
        step = 1.0 / (1.0 + np.sqrt(gnorm2)) if step_prev is None else 2.0 * step_prev
        backtracks = 0
        accepted = False
        while backtracks <= max_backtracks:
            try:
                cand = retract(params, descent, step)
            except np.linalg.LinAlgError:
                step *= shrink
                backtracks += 1
                continue
            cand_fwd = _forward(cand, window)
            if (not cand_fwd["blowup"]
                    and cand_fwd["J"] <= fwd["J"] - armijo_c * step * gnorm2):
                accepted = True
                break
            step *= shrink
            backtracks += 1
        if not accepted:
            info["stalled"] = True
            break
        params, fwd = cand, cand_fwd
        step_prev = step
        history.append(fwd["J"])
        records.append((it, fwd["J"], step, backtracks))
        hygiene.append((
            float(np.abs(params.pair.Phi.T @ params.pair.Phi - np.eye(params.r)).max()),
            float(np.abs(params.pair.Psi.T @ params.pair.Psi - np.eye(params.r)).max()),
        ))
    return params, history, info


def adapt_nitrom(prev: NitromParams, window, K: int,
                 ) -> tuple[NitromParams, list[float], dict]:
    """Warm-started online update: optimize the window cost starting at prev."""
    return optimize(prev, window, K)


def hybrid_adapt(prev: NitromParams, window, K_refine: int, *,
                 penalty: float | None = None,
                 basis_update: str = "windowed-svd",
                 isvd=None,
                 ) -> tuple[NitromParams, list[float], dict]:
    """Regression jump-start followed by manifold refinement.

    Runs the two-stage OpInf update on the window, lifts the result to the
    manifold with ``Phi = Psi`` = the refreshed basis, then (for
    ``K_refine >= 1``) refines with :func:`optimize`.  ``K_refine=0``
    returns the lifted OpInf update unchanged.
    """
    r = prev.r
    Phi, ops = adapt_opinf(window, r, penalty,
                           basis_update=basis_update,
                           prev_basis=prev.pair.Phi, isvd=isvd)
    jumped = NitromParams.from_orthogonal(Phi, ops)
    if K_refine == 0:
        return jumped, [cost(jumped, window)], {"records": [], "hygiene": [],
                                                "stalled": False}
    return optimize(jumped, window, K_refine)
