"""Truncated time boundary value problem for canonical paths.

On a time mesh ``0 = t_0 < ... < t_{m-1} = T`` the dynamics ``M u' = -G(u)``
are discretised with the trapezoidal rule

    M (u_{i+1} - u_i) / h_i + (G(u_{i+1}) + G(u_i)) / 2 = 0,

closed by the initial condition on the states and the terminal projection
``Psi (u(T) - u_hat) = 0``.  The whole space-time Jacobian is sparse and is
factorised with SuperLU in one go.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, EvaluationError, NewtonFailure, ProjectionError

log = logging.getLogger(__name__)


def make_graded_mesh(T, m, s=1.0):
    """``t_i = T (i/(m-1))^s``; ``s > 1`` clusters points near ``t = 0``."""
    if not T > 0 or not np.isfinite(T):
        raise ConfigurationError(f"T must be positive, got {T}")
    if int(m) != m or m < 3:
        raise ConfigurationError(f"need at least 3 time points, got {m}")
    if not s >= 1.0:
        raise ConfigurationError(f"grading exponent must be >= 1, got {s}")
    return T * np.linspace(0.0, 1.0, int(m)) ** s


@dataclass
class CanonicalPath:
    t: np.ndarray
    values: np.ndarray  # (size, m), column i is u(t_i)
    alpha: float
    value: float = None
    converged: bool = False
    max_residual: float = float("nan")
    iterations: int = 0

    @property
    def T(self):
        return float(self.t[-1])

    @property
    def m(self):
        return self.t.size

    def at(self, i):
        return self.values[:, i]

    def interpolate(self, t_new):
        """Piecewise linear interpolation onto ``t_new``."""
        t_new = np.asarray(t_new, dtype=float)
        vals = np.empty((self.values.shape[0], t_new.size))
        for k in range(self.values.shape[0]):
            vals[k] = np.interp(t_new, self.t, self.values[k])
        return replace(self, t=t_new.copy(), values=vals, converged=False)


def constant_path(u_hat, t, alpha=0.0):
    u_hat = np.asarray(u_hat, dtype=float)
    return CanonicalPath(t=np.asarray(t, float).copy(), values=np.repeat(u_hat[:, None], len(t), axis=1),
                         alpha=alpha)


@dataclass
class ArcRow:
    """Pseudo-arclength row ``<s, u(0) - u_prev> + s_alpha (alpha - alpha_prev) = sigma``."""

    s: np.ndarray
    s_alpha: float
    sigma: float
    u0_prev: np.ndarray
    alpha_prev: float

    def value(self, u0, alpha):
        return float(self.s @ (u0 - self.u0_prev) + self.s_alpha * (alpha - self.alpha_prev) - self.sigma)


@dataclass
class BvpBc:
    """Boundary data: ``u_i(0) = alpha v_start + (1 - alpha) v_hat`` for
    ``i in init_index`` and ``psi (u(T) - u_hat) = 0``.

    With ``arc`` set, ``alpha`` becomes an unknown fixed by the arclength row.
    """

    init_index: np.ndarray
    v_start: np.ndarray
    v_hat: np.ndarray
    u_hat: np.ndarray
    psi: np.ndarray
    alpha: float = 1.0
    arc: ArcRow = None

    def __post_init__(self):
        self.init_index = np.asarray(self.init_index, dtype=int)
        self.v_start = np.asarray(self.v_start, dtype=float)
        self.v_hat = np.asarray(self.v_hat, dtype=float)
        self.u_hat = np.asarray(self.u_hat, dtype=float)
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        k = self.init_index.size
        if self.v_start.shape != (k,) or self.v_hat.shape != (k,):
            raise ConfigurationError("initial data does not match the initial index set")
        if self.psi.shape[1] != self.u_hat.size:
            raise ConfigurationError("projection and terminal point have different sizes")

    @property
    def extended(self):
        return self.arc is not None

    def initial_value(self, alpha):
        return alpha * self.v_start + (1.0 - alpha) * self.v_hat


def canonical_bc(system, v_start, u_hat, psi, alpha=1.0):
    """Boundary data for paths of a canonical system ending at ``u_hat``."""
    nn = system.model.n_states * system.n
    u_hat = np.asarray(u_hat, dtype=float)
    return BvpBc(init_index=np.arange(nn), v_start=v_start, v_hat=u_hat[:nn], u_hat=u_hat, psi=psi,
                 alpha=alpha)


@dataclass
class BvpSettings:
    tol: float = 1e-8  # scaled by max(1, |u|_inf)
    max_iter: int = 30
    max_halvings: int = 8
    terminal_tol: float = 1e-3


class _Assembler:
    def __init__(self, system, params, t, bc):
        self.system = system
        self.params = params
        self.t = np.asarray(t, dtype=float)
        self.h = np.diff(self.t)
        if np.any(self.h <= 0):
            raise ConfigurationError("time mesh must be strictly increasing")
        self.bc = bc
        self.S = system.size
        self.m = self.t.size
        self.nk = bc.init_index.size
        self.r = bc.psi.shape[0]
        if self.nk + self.r != self.S:
            raise ProjectionError(
                f"{self.r} terminal conditions and {self.nk} initial conditions do not close a system "
                f"of size {self.S} (target lacks the saddle-point property)")
        self.n_u = self.m * self.S
        self.n_z = self.n_u + (1 if bc.extended else 0)
        M = system.M_blk.tocoo()
        self.Mrow, self.Mcol, self.Mdata = M.row, M.col, M.data
        self.M = system.M_blk
        self._static = self._static_part()

    def split(self, z):
        U = z[: self.n_u].reshape(self.m, self.S)
        alpha = z[self.n_u] if self.bc.extended else self.bc.alpha
        return U, alpha

    def join(self, U, alpha):
        z = U.ravel()
        return np.append(z, alpha) if self.bc.extended else z.copy()

    def _eval_G(self, U):
        try:
            return self.system.residual(U, self.params)
        except EvaluationError as exc:
            raise EvaluationError(str(exc), node=exc.node, time_index=exc.time_index) from None

    def residual(self, z):
        U, alpha = self.split(z)
        bc = self.bc
        G = self._eval_G(U)
        dU = np.diff(U, axis=0) / self.h[:, None]
        coll = (self.M @ dU.T).T + 0.5 * (G[1:] + G[:-1])
        r0 = U[0, bc.init_index] - bc.initial_value(alpha)
        rT = bc.psi @ (U[-1] - bc.u_hat)
        parts = [r0, coll.ravel(), rT]
        if bc.extended:
            parts.append([bc.arc.value(U[0], alpha)])
        return np.concatenate(parts)

    def _static_part(self):
        """Mass and boundary entries, which do not depend on the iterate."""
        S, nk, bc = self.S, self.nk, self.bc
        rows, cols, vals = [], [], []
        rows.append(np.arange(nk))
        cols.append(bc.init_index)
        vals.append(np.ones(nk))
        for i in range(self.m - 1):
            r0 = nk + i * S
            w = self.Mdata / self.h[i]
            rows += [r0 + self.Mrow, r0 + self.Mrow]
            cols += [i * S + self.Mcol, (i + 1) * S + self.Mcol]
            vals += [-w, w]
        rT = nk + (self.m - 1) * S
        pr, pc = np.nonzero(bc.psi)
        rows.append(rT + pr)
        cols.append((self.m - 1) * S + pc)
        vals.append(bc.psi[pr, pc])
        if bc.extended:
            a = self.n_u
            rows.append(np.arange(nk))
            cols.append(np.full(nk, a))
            vals.append(-(bc.v_start - bc.v_hat))
            rows += [np.full(S, self.n_z - 1), [self.n_z - 1]]
            cols += [np.arange(S), [a]]
            vals += [bc.arc.s, [bc.arc.s_alpha]]
        return (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))

    def jacobian(self, z):
        U, _ = self.split(z)
        S, nk = self.S, self.nk
        J = 0.5 * self.system.jacobian_values(U, self.params)  # (m, nnz)
        pr, pc = self.system.pattern_rows, self.system.pattern_cols
        i = np.arange(self.m - 1)[:, None]
        base = nk + i * S
        rows = np.concatenate([(base + pr).ravel(), (base + pr).ravel()])
        cols = np.concatenate([(i * S + pc).ravel(), ((i + 1) * S + pc).ravel()])
        vals = np.concatenate([J[:-1].ravel(), J[1:].ravel()])
        sr, sc, sv = self._static
        A = sp.csc_matrix((np.concatenate([vals, sv]), (np.concatenate([rows, sr]), np.concatenate([cols, sc]))),
                          shape=(self.n_z, self.n_z))
        return A

    def scale(self, z):
        U, _ = self.split(z)
        return max(1.0, float(np.max(np.abs(U))))


def _residual_norm(asm, z):
    return float(np.max(np.abs(asm.residual(z))))


def solve_bvp(system, params, bc, guess, settings=None):
    """Damped Newton for the discrete canonical path.

    ``guess`` supplies the time mesh, the initial iterate and (in extended
    mode) the initial ``alpha``.  Raises :class:`NewtonFailure` when the
    iteration stalls or the iteration budget is spent.
    """
    settings = settings or BvpSettings()
    asm = _Assembler(system, np.asarray(params, float), guess.t, bc)
    z = asm.join(guess.values.T, guess.alpha if bc.extended else bc.alpha)
    try:
        res = _residual_norm(asm, z)
    except EvaluationError:
        raise
    tol = settings.tol * asm.scale(z)
    it = 0
    while not res <= tol:
        if it >= settings.max_iter:
            raise NewtonFailure(f"time BVP: no convergence after {it} iterations", residual=res,
                                iterate=_to_path(asm, z, False, res, it))
        A = asm.jacobian(z)
        try:
            lu = spla.splu(A, permc_spec="COLAMD")
            dz = lu.solve(asm.residual(z))
        except RuntimeError as exc:
            raise NewtonFailure(f"time BVP: singular Jacobian ({exc})", residual=res,
                                iterate=_to_path(asm, z, False, res, it)) from None
        if not np.all(np.isfinite(dz)):
            raise NewtonFailure("time BVP: non-finite Newton step", residual=res,
                                iterate=_to_path(asm, z, False, res, it))
        step = 1.0
        for _ in range(settings.max_halvings + 1):
            z_new = z - step * dz
            try:
                res_new = _residual_norm(asm, z_new)
            except EvaluationError:
                res_new = np.inf
            if res_new < res or res_new <= tol:
                break
            step *= 0.5
        else:
            raise NewtonFailure(f"time BVP: line search failed at iteration {it}", residual=res,
                                iterate=_to_path(asm, z, False, res, it))
        z, res = z_new, res_new
        tol = settings.tol * asm.scale(z)
        it += 1
        log.debug("tbvp it %d |F| = %.3e step %.3g", it, res, step)
    path = _to_path(asm, z, True, res, it)
    return path


def _to_path(asm, z, converged, res, it):
    U, alpha = asm.split(z)
    return CanonicalPath(t=asm.t.copy(), values=U.T.copy(), alpha=float(alpha), converged=converged,
                         max_residual=float(res), iterations=it)


def bvp_residual(system, params, bc, path):
    """Full residual vector of ``path`` for the given boundary data."""
    asm = _Assembler(system, np.asarray(params, float), path.t, bc)
    return asm.residual(asm.join(path.values.T, path.alpha if bc.extended else bc.alpha))


def terminal_distance(path, u_hat):
    """``|u(T) - u_hat|_inf`` relative to ``max(1, |u_hat|_inf)``."""
    u_hat = np.asarray(u_hat, dtype=float)
    return float(np.max(np.abs(path.values[:, -1] - u_hat)) / max(1.0, np.max(np.abs(u_hat))))


def check_terminal(path, u_hat, tol=1e-3):
    """Warn when ``u(T)`` has not settled near the target; returns the distance."""
    d = terminal_distance(path, u_hat)
    if d > tol:
        log.warning("path ends %.2e away from the target; consider a larger T", d)
    return d


def error_indicator(path):
    """Per-interval indicator ``h_i^2 |u''|`` from second divided differences,
    relative to ``max(1, |u|_inf)``."""
    t, U = path.t, path.values
    h = np.diff(t)
    slope = np.diff(U, axis=1) / h
    d2 = 2.0 * np.diff(slope, axis=1) / (h[1:] + h[:-1])
    d2n = np.max(np.abs(d2), axis=0)
    node = np.concatenate([[d2n[0]], d2n, [d2n[-1]]])
    curv = np.maximum(node[:-1], node[1:])
    return h ** 2 * curv / max(1.0, float(np.max(np.abs(U))))


def refine_mesh(system, params, bc, path, factor=4.0, err_tol=1e-4, max_points=400, settings=None):
    """Equidistribute ``h^2 |u''|`` and re-solve.

    The new mesh targets an indicator of ``max(err_tol, eta_max / factor)``;
    if the current maximum is already below ``err_tol`` the path is returned
    unchanged.
    """
    eta = error_indicator(path)
    eta_max = float(eta.max())
    if eta_max <= err_tol:
        return path
    target = max(err_tol, eta_max / factor)
    h = np.diff(path.t)
    curv = eta / h ** 2
    mon = np.sqrt(curv + 1e-12 * curv.max())
    W = np.concatenate([[0.0], np.cumsum(mon * h)])
    m_new = int(np.ceil(W[-1] / np.sqrt(target))) + 1
    m_new = min(max(m_new, path.m), max_points)
    t_new = np.interp(np.linspace(0.0, W[-1], m_new), W, path.t)
    t_new[0], t_new[-1] = path.t[0], path.t[-1]
    guess = path.interpolate(t_new)
    return solve_bvp(system, params, bc, guess, settings)
