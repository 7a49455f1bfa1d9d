"""Trial/test bases and the oblique projector P = Phi (Psi^T Phi)^-1 Psi^T.

Provides windowed POD (dense SVD of the current data window), a streaming
rank-r incremental SVD for cheap basis updates, and the encode/decode maps
shared by every reduced model in the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ProjectionPair",
    "PodResult",
    "windowed_pod",
    "pod_basis",
    "IncrementalSVD",
    "encode",
    "decode",
    "apply_projector",
]

_ORTHO_TOL = 1e-12
_COND_LIMIT = 1e10


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Flip column signs so each column's largest-magnitude entry is positive.

    Ties in magnitude resolve to the lowest index via argmax, which makes the
    convention deterministic and platform-independent.
    """
    idx = np.abs(basis).argmax(axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


@dataclass
class ProjectionPair:
    """Orthonormal trial basis ``Phi`` and test basis ``Psi`` (both n x r).

    The pair defines the rank-r oblique projector
    ``P = Phi (Psi^T Phi)^{-1} Psi^T``; with ``Psi = Phi`` the projector is
    orthogonal.  Construction validates orthonormality of both factors and
    invertibility of ``Psi^T Phi``.
    """

    Phi: np.ndarray
    Psi: np.ndarray
    _coupling_inv: np.ndarray = field(init=False, repr=False)
    _decoder: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.Phi = np.asarray(self.Phi, dtype=float)
        self.Psi = np.asarray(self.Psi, dtype=float)
        if self.Phi.shape != self.Psi.shape or self.Phi.ndim != 2:
            raise ValueError("Phi and Psi must share an n x r shape")
        r = self.r
        for name, mat in (("Phi", self.Phi), ("Psi", self.Psi)):
            err = np.abs(mat.T @ mat - np.eye(r)).max()
            if err > _ORTHO_TOL * max(1.0, np.sqrt(mat.shape[0])):
                raise ValueError(f"{name} is not orthonormal (deviation {err:.2e})")
        coupling = self.Psi.T @ self.Phi
        svals = np.linalg.svd(coupling, compute_uv=False)
        if svals[-1] <= 1e-10:
            raise ValueError(
                f"Psi^T Phi is numerically singular (smallest sv {svals[-1]:.2e})")
        if svals[0] / svals[-1] > _COND_LIMIT:
            raise ValueError(
                f"Psi^T Phi condition number {svals[0] / svals[-1]:.2e} exceeds 1e10")
        self._coupling_inv = np.linalg.inv(coupling)
        self._decoder = self.Phi @ self._coupling_inv

    @property
    def r(self) -> int:
        return self.Phi.shape[1]

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    @property
    def decoder(self) -> np.ndarray:
        """The n x r decoder matrix ``Phi (Psi^T Phi)^{-1}``."""
        return self.Phi @ self._coupling_inv

    @classmethod
    def orthogonal(cls, Phi: np.ndarray) -> "ProjectionPair":
        return cls(Phi, Phi)


@dataclass
class PodResult:
    """Leading left singular vectors plus rank diagnostics."""

    basis: np.ndarray
    svals: np.ndarray
    rank: int  # numerical rank of the window; columns beyond it are suspect


def windowed_pod(snapshots: np.ndarray, r: int, *, rank_tol: float = 1e-12) -> PodResult:
    """Rank-r POD of a snapshot window via a dense SVD.

    ``snapshots`` is n x m (columns are states).  Requires ``r <= min(n, m)``.
    Columns past the numerical rank are reported through ``rank`` rather than
    raised, so the caller can decide how to fill deficient directions.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    n, m = snapshots.shape
    if r > min(n, m):
        raise ValueError(f"r={r} exceeds min(n, m)={min(n, m)}")
    left, svals, _ = np.linalg.svd(snapshots, full_matrices=False)
    rank = int(np.sum(svals > rank_tol * max(svals[0], 1e-300)))
    return PodResult(_fix_signs(left[:, :r]).copy(), svals[:r].copy(), min(rank, r))


def pod_basis(snapshots: np.ndarray, r: int) -> PodResult:
    """POD sized for large offline snapshot sets.

    Uses the method of snapshots (eigendecomposition of the m x m Gram
    matrix) when the window is wide, which is dramatically cheaper than a
    dense SVD for n >> m; otherwise defers to :func:`windowed_pod`.  The
    branch depends only on the shape, so results stay reproducible.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    n, m = snapshots.shape
    if m <= 512 or m > n:
        return windowed_pod(snapshots, r)
    if r > m:
        raise ValueError(f"r={r} exceeds column count {m}")
    gram = snapshots.T @ snapshots
    w, vec = np.linalg.eigh(gram)
    order = np.argsort(w)[::-1][:r]
    w = np.maximum(w[order], 0.0)
    svals = np.sqrt(w)
    good = svals > 1e-12 * max(svals[0], 1e-300)
    basis = snapshots @ (vec[:, order[good]] / svals[good])
    # re-orthonormalize to absorb Gram-matrix roundoff
    q, rr = np.linalg.qr(basis)
    q = q * np.sign(np.diag(rr))
    rank = int(good.sum())
    if rank < r:
        warnings.warn(f"snapshot set has numerical rank {rank} < r={r}; "
                      "completing with canonical directions")
        q = _complete_basis(q, r)
    return PodResult(_fix_signs(q).copy(), svals, rank)


def _complete_basis(basis: np.ndarray, r: int) -> np.ndarray:
    """Deterministically extend orthonormal columns to r using unit vectors."""
    n = basis.shape[0]
    cols = [basis[:, k] for k in range(basis.shape[1])]
    for j in range(n):
        if len(cols) == r:
            break
        cand = np.zeros(n)
        cand[j] = 1.0
        for c in cols:
            cand -= (c @ cand) * c
        norm = np.linalg.norm(cand)
        if norm > 1e-8:
            cols.append(cand / norm)
    return np.column_stack(cols)


class IncrementalSVD:
    """Streaming rank-r thin SVD with single-column appends.

    Maintains ``U`` (n x k) and singular values ``s``; each append projects
    the new column, absorbs the residual direction when significant, and
    truncates back to rank r.  Every ``reorth_every`` updates the left factor
    is re-orthonormalized to bound drift.
    """

    def __init__(self, initial: np.ndarray, r: int, *, reorth_every: int = 50,
                 residual_tol: float = 1e-12):
        initial = np.atleast_2d(np.asarray(initial, dtype=float))
        pod = windowed_pod(initial, min(r, min(initial.shape)))
        keep = pod.svals > residual_tol * max(pod.svals[0], 1e-300)
        self.U = pod.basis[:, keep].copy()
        self.s = pod.svals[keep].copy()
        self.r = r
        self.reorth_every = reorth_every
        self.residual_tol = residual_tol
        self._updates = 0

    @property
    def basis(self) -> np.ndarray:
        return self.U

    def update(self, column: np.ndarray) -> "IncrementalSVD":
        """Fold one new snapshot into the factorization (in place)."""
        c = np.asarray(column, dtype=float).ravel()
        proj = self.U.T @ c
        resid = c - self.U @ proj
        rho = float(np.linalg.norm(resid))
        scale = max(float(self.s[0]) if self.s.size else 0.0, float(np.linalg.norm(c)), 1e-300)
        k = self.s.size
        if rho > self.residual_tol * scale:
            core = np.zeros((k + 1, k + 1))
            core[:k, :k] = np.diag(self.s)
            core[:k, k] = proj
            core[k, k] = rho
            uu, ss, _ = np.linalg.svd(core)
            extended = np.hstack([self.U, (resid / rho)[:, None]])
            keep = min(self.r, k + 1)
            self.U = extended @ uu[:, :keep]
            self.s = ss[:keep]
        else:
            # in-span update: rotate the existing factors only
            core = np.hstack([np.diag(self.s), proj[:, None]])
            uu, ss, _ = np.linalg.svd(core, full_matrices=False)
            keep = min(self.r, k)
            self.U = self.U @ uu[:, :keep]
            self.s = ss[:keep]
        self._updates += 1
        if self._updates % self.reorth_every == 0:
            q, rr = np.linalg.qr(self.U)
            self.U = q * np.sign(np.diag(rr))
        return self

    def pod_result(self) -> PodResult:
        basis = _fix_signs(self.U)
        return PodResult(basis.copy(), self.s.copy(), self.s.size)


def isvd_update(state: IncrementalSVD, new_snap: np.ndarray) -> IncrementalSVD:
    """Functional alias for :meth:`IncrementalSVD.update`."""
    return state.update(new_snap)


def encode(pair: ProjectionPair, x: np.ndarray) -> np.ndarray:
    """Latent coordinates ``z = Psi^T x`` (columns allowed)."""
    return pair.Psi.T @ x


def decode(pair: ProjectionPair, z: np.ndarray) -> np.ndarray:
    """Reconstruction ``Phi (Psi^T Phi)^{-1} z``; decode(encode(x)) = P x."""
    return pair.decoder @ z


def apply_projector(pair: ProjectionPair, x: np.ndarray) -> np.ndarray:
    """Apply the oblique projector P without forming it."""
    return decode(pair, encode(pair, x))
