"""Stable/unstable spectral data at a steady state and the terminal projection.

Sign convention: the dynamics are ``M u' = -G(u)``, so a generalised
eigenvalue ``Lam`` of ``G_u^T phi = Lam M phi`` corresponds to the dynamics
eigenvalue ``mu = -Lam``.  Stable directions have ``Re Lam > 0``.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DegenerateSpectrumError, ProjectionError, SpectralError

log = logging.getLogger(__name__)

CENTER_TOL = 1e-10
DEFAULT_CT = 15.0


@dataclass
class Projection:
    eigenvalues: np.ndarray  # Lam, as solved from the adjoint problem
    defect: int
    psi: np.ndarray
    suggested_T: float

    @property
    def has_spp(self):
        return self.defect == 0

    @property
    def dynamics_eigenvalues(self):
        return -self.eigenvalues


def adjoint_eig(state, check=True, max_dense=4000):
    """All pairs of ``G_u(u)^T phi = Lam M phi`` via dense QZ."""
    system = state.system
    if system.size > max_dense:
        raise SpectralError(f"dense eigensolve of size {system.size} exceeds {max_dense}")
    if system.size > 1200:
        log.warning("dense adjoint eigenproblem of size %d", system.size)
    A = system.jacobian(state.u, state.params).toarray()
    B = system.M_blk.toarray()
    return adjoint_eig_dense(A, B, check=check)


def adjoint_eig_dense(Gu, M, check=True):
    Gu = np.asarray(Gu, dtype=float)
    M = np.asarray(M, dtype=float)
    try:
        lam, phi = la.eig(Gu.T, M)
    except la.LinAlgError as exc:
        raise SpectralError(f"eigensolver failed: {exc}") from None
    if not np.all(np.isfinite(lam)):
        raise SpectralError("infinite generalized eigenvalues (singular mass matrix?)")
    if check:
        res = np.linalg.norm(Gu.T @ phi - (M @ phi) * lam, axis=0)
        scale = np.linalg.norm(phi, axis=0)
        bad = res > 1e-8 * scale * max(1.0, np.abs(lam).max())
        if np.any(bad):
            raise SpectralError(f"{int(bad.sum())} eigenpairs with large residual")
    return lam, phi


def defect(lam, N, n):
    """``#{Re Lam > 0} - N n``; zero means the saddle-point property holds."""
    lam = np.asarray(lam)
    if np.any(np.abs(lam.real) < CENTER_TOL):
        raise DegenerateSpectrumError("eigenvalue on the imaginary axis; stability undecided")
    return int(np.count_nonzero(lam.real > 0)) - N * n


def build_psi(lam, phi, M, rank_tol=1e-10):
    """Orthonormal rows spanning ``{(M phi_j)^T : Re Lam_j < 0}``.

    Complex pairs contribute their real and imaginary parts once.  The
    kernel of the result is the stable eigenspace of the dynamics.
    """
    lam = np.asarray(lam)
    M = np.asarray(M.toarray() if hasattr(M, "toarray") else M, dtype=float)
    rows = []
    for j in np.flatnonzero(lam.real < 0):
        w = M @ phi[:, j]
        if abs(lam[j].imag) <= 1e-12 * max(1.0, abs(lam[j])):
            rows.append(np.real(w))
        elif lam[j].imag > 0:
            rows.append(np.real(w))
            rows.append(np.imag(w))
    if not rows:
        return np.zeros((0, M.shape[0]))
    R = np.array(rows)
    q, r = la.qr(R.T, mode="economic")
    d = np.abs(np.diag(r))
    if d.min() <= rank_tol * d.max():
        raise ProjectionError("projection rows are rank deficient")
    return q.T


def suggest_T(lam, rho=None, c_T=DEFAULT_CT):
    """Truncation time ``c_T / min |Re mu|`` over stable dynamics eigenvalues."""
    lam = np.asarray(lam)
    stable = lam.real[lam.real > 0]
    if stable.size == 0:
        raise ProjectionError("no stable directions: no canonical path can end here")
    return float(c_T / stable.min())


def spectral_symmetry_gap(lam, rho):
    """Largest distance of a dynamics eigenvalue ``mu`` to the reflected set
    ``{rho - conj(mu)}``, relative to ``1 + max |mu|``."""
    mu = -np.asarray(lam)
    refl = rho - np.conj(mu)
    dist = np.abs(mu[:, None] - refl[None, :]).min(axis=1)
    return float(dist.max() / (1.0 + np.abs(mu).max()))


def projection(state, c_T=DEFAULT_CT):
    """Eigenvalues, defect, ``Psi`` and suggested ``T`` at a steady state."""
    lam, phi = adjoint_eig(state)
    N, n = state.model.n_states, state.system.n
    d = defect(lam, N, n)
    psi = build_psi(lam, phi, state.system.M_blk)
    try:
        T = suggest_T(lam, state.rho, c_T)
    except ProjectionError:
        T = float("nan")
    return Projection(eigenvalues=lam, defect=d, psi=psi, suggested_T=T)


def right_stable_vectors(state):
    """Right eigenvectors ``xi`` of the dynamics with ``Re mu < 0``."""
    system = state.system
    A = system.jacobian(state.u, state.params).toarray()
    lam, xi = la.eig(A, system.M_blk.toarray())
    keep = lam.real > 0
    return lam[keep], xi[:, keep]
