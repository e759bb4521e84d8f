"""Initial-state continuation of canonical paths.

The initial states are moved along the segment ``alpha v_start + (1 - alpha) v_hat``
from the target's own states (``alpha = 0``, where the constant path solves the
problem) towards the desired start (``alpha = 1``).  ``iscnat`` steps ``alpha``
directly; ``iscarc`` treats ``alpha`` as an unknown and follows the solution
family in arclength, which gets around folds in ``alpha``.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (ConfigurationError, EvaluationError, NewtonFailure, NoProgressError, PathFailure,
                     ProjectionError)
from .spectral import DEFAULT_CT, projection
from .tbvp import (ArcRow, BvpSettings, canonical_bc, check_terminal, constant_path, make_graded_mesh,
                   refine_mesh, solve_bvp)
from .value import path_value

log = logging.getLogger(__name__)

_SOLVE_ERRORS = (NewtonFailure, EvaluationError, PathFailure, np.linalg.LinAlgError)


@dataclass
class IscSettings:
    alvin: tuple = (0.1, 0.25, 0.5, 0.75, 1.0)
    sig: float = 0.1
    sig_min: float = 1e-3
    sig_max: float = 1.0
    n_steps: int = 20
    msw: int = 0
    xi_arc: float = 0.5
    start_alvin: tuple = (0.2, 0.25)
    alpha_margin: float = 0.05
    T: float = None  # None: suggested from the target spectrum
    m: int = 10
    s: float = 1.0
    tol_bvp: float = 1e-8
    c_T: float = DEFAULT_CT
    refine: bool = False
    refine_factor: float = 4.0
    refine_err: float = 1e-4
    max_points: int = 400
    fast_iters: int = 3
    grow: float = 1.2
    retain: bool = False

    def __post_init__(self):
        self.alvin = tuple(float(a) for a in self.alvin)
        self.start_alvin = tuple(float(a) for a in self.start_alvin)
        if not 0 < self.sig_min <= self.sig <= self.sig_max:
            raise ConfigurationError("need 0 < sig_min <= sig <= sig_max")
        for name in ("alvin", "start_alvin"):
            a = np.asarray(getattr(self, name))
            if a.size and (np.any(np.diff(a) <= 0) or a[0] < 0 or a[-1] > 1):
                raise ConfigurationError(f"{name} must increase within [0, 1]")
        if not 0 < self.xi_arc < 1:
            raise ConfigurationError("xi_arc must lie in (0, 1)")
        if self.msw not in (0, 1):
            raise ConfigurationError("msw must be 0 or 1")

    def bvp(self):
        return BvpSettings(tol=self.tol_bvp)


@dataclass
class IscProblem:
    """Everything fixed along one continuation: target, projection, mesh and BC template."""

    system: object
    params: np.ndarray
    target: object
    proj: object
    T: float
    t: np.ndarray
    bc: object

    @property
    def u_hat(self):
        return self.target.u

    def value(self, path):
        return path_value(path, self.system, self.params)

    def trivial_path(self):
        p = constant_path(self.u_hat, self.t, alpha=0.0)
        p.converged = True
        p.max_residual = 0.0
        p.value = self.value(p)
        return p


def setup_problem(start, target, settings=None):
    """Check the target for the saddle-point property and build the BC template.

    ``start`` is a CSS (its states are used) or a plain vector of initial states.
    """
    settings = settings or IscSettings()
    proj = projection(target, settings.c_T)
    if proj.defect != 0:
        raise ProjectionError(f"target has defect {proj.defect}; no saddle-point property")
    system = target.system
    nn = system.model.n_states * system.n
    v_start = start.states() if hasattr(start, "states") else np.asarray(start, dtype=float)
    if v_start.shape != (nn,):
        raise ConfigurationError(f"initial states need {nn} values, got {v_start.shape}")
    T = float(settings.T) if settings.T else proj.suggested_T
    t = make_graded_mesh(T, settings.m, settings.s)
    bc = canonical_bc(system, v_start, target.u, proj.psi, alpha=0.0)
    return IscProblem(system=system, params=target.params.copy(), target=target, proj=proj, T=T, t=t, bc=bc)


@dataclass
class ArcState:
    """Data needed to resume arclength continuation: the last two paths and the stepsize."""

    prev: object
    last: object
    sigma: float


@dataclass
class IscResult:
    alv: list
    vv: list
    last_path: object
    problem: IscProblem
    history: list = field(default_factory=list)
    fold_detected: bool = False
    fold_alpha: float = None
    stalled: bool = False
    message: str = ""
    resume: ArcState = None

    @property
    def reached(self):
        return bool(self.alv) and abs(self.alv[-1] - 1.0) <= 1e-12


def space_time_norm(path_values, t):
    """Trapezoid-in-time 2-norm, normalised by ``T`` so a constant path has
    the Euclidean norm of its value."""
    w = np.zeros_like(t)
    h = np.diff(t)
    w[:-1] += h / 2
    w[1:] += h / 2
    return float(np.sqrt(np.sum(w * np.sum(path_values ** 2, axis=0)) / (t[-1] - t[0])))


def _on_mesh(path, t):
    if path.t.shape == t.shape and np.array_equal(path.t, t):
        return path
    return path.interpolate(t)


def _solve(problem, bc, guess, settings):
    path = solve_bvp(problem.system, problem.params, bc, guess, settings.bvp())
    if settings.refine:
        path = refine_mesh(problem.system, problem.params, bc, path, factor=settings.refine_factor,
                           err_tol=settings.refine_err, max_points=settings.max_points,
                           settings=settings.bvp())
    path.value = problem.value(path)
    check_terminal(path, problem.u_hat, 1e-2)
    return path


def _natural_predictor(p_prev, p_last, d_alpha):
    """Secant predictor ``u_last + d_alpha * tau`` with a unit space-time secant."""
    p_prev = _on_mesh(p_prev, p_last.t)
    diff = p_last.values - p_prev.values
    nrm = space_time_norm(diff, p_last.t)
    if nrm == 0:
        return p_last
    return replace(p_last, values=p_last.values + d_alpha * diff / nrm, converged=False)


def iscnat(start, target, settings=None, problem=None, prev=None):
    """Natural continuation in ``alpha`` through ``settings.alvin``.

    ``prev`` optionally gives one or two converged paths (oldest first) to
    continue from instead of the trivial ``alpha = 0`` path.
    """
    settings = settings or IscSettings()
    problem = problem or setup_problem(start, target, settings)
    paths = list(prev) if prev else [problem.trivial_path()]
    alv, vv, history = [], [], []
    message = ""
    for a in settings.alvin:
        last = paths[-1]
        if settings.msw == 1 and len(paths) >= 2:
            guess = _natural_predictor(paths[-2], last, a - last.alpha)
        else:
            guess = last
        bc = replace(problem.bc, alpha=a)
        try:
            path = _solve(problem, bc, guess, settings)
        except _SOLVE_ERRORS as exc:
            message = f"no convergence at alpha={a:g}: {exc}"
            if not alv and len(paths) == 1 and not prev:
                raise NoProgressError(message, residual=getattr(exc, "residual", float("nan"))) from None
            log.info("iscnat stops: %s", message)
            break
        path.alpha = a
        paths = [paths[-1], path]
        alv.append(a)
        vv.append(path.value)
        if settings.retain:
            history.append(path)
        log.info("iscnat alpha=%.4g J=%.10g m=%d", a, path.value, path.m)
    last = paths[-1]
    resume = ArcState(prev=paths[0], last=last, sigma=settings.sig) if len(paths) == 2 else None
    return IscResult(alv=alv, vv=vv, last_path=last, problem=problem, history=history,
                     stalled=bool(message), message=message, resume=resume)


def arc_row(prev, last, sigma, xi):
    """Secant-based row data ``(s, s_alpha)`` normalised in the Euclidean norm."""
    prev = _on_mesh(prev, last.t)
    d0 = last.values[:, 0] - prev.values[:, 0]
    nrm = np.linalg.norm(d0)
    s = xi * d0 / nrm if nrm > 0 else np.zeros_like(d0)
    s_alpha = 1.0 - xi
    scale = np.hypot(np.linalg.norm(s), s_alpha)
    return ArcRow(s=s / scale, s_alpha=s_alpha / scale, sigma=sigma, u0_prev=last.values[:, 0].copy(),
                  alpha_prev=last.alpha)


def arc_predictor(prev, last, sigma, xi):
    prev = _on_mesh(prev, last.t)
    diff = last.values - prev.values
    nrm = space_time_norm(diff, last.t)
    tau = xi * diff / nrm if nrm > 0 else np.zeros_like(diff)
    return replace(last, values=last.values + sigma * tau, alpha=last.alpha + sigma * (1.0 - xi),
                   converged=False)


def iscarc(start, target, resume=None, settings=None, problem=None):
    """Pseudo-arclength continuation with ``alpha`` free.

    Without ``resume`` a natural startup through ``settings.start_alvin``
    provides the two paths needed for the first secant; those startup points
    are reported in ``alv``.  ``settings.n_steps`` counts arclength steps only.
    """
    settings = settings or IscSettings()
    problem = problem or setup_problem(start, target, settings)
    alv, vv, history = [], [], []
    if resume is None:
        nat = iscnat(start, target, replace(settings, alvin=settings.start_alvin, msw=0), problem=problem)
        if len(nat.alv) < len(settings.start_alvin) or nat.resume is None:
            return replace(nat, stalled=True, message=nat.message or "startup failed")
        alv, vv, history = list(nat.alv), list(nat.vv), list(nat.history)
        state = ArcState(prev=nat.resume.prev, last=nat.resume.last, sigma=settings.sig)
    else:
        state = ArcState(prev=resume.prev, last=resume.last, sigma=resume.sigma)
    xi = settings.xi_arc
    stalled, message = False, ""
    a_hi = 1.0 + settings.alpha_margin
    for step in range(settings.n_steps):
        prev, last, sigma = state.prev, state.last, state.sigma
        while True:
            row = arc_row(prev, last, sigma, xi)
            guess = arc_predictor(prev, last, sigma, xi)
            bc = replace(problem.bc, arc=row)
            try:
                path = _solve(problem, bc, guess, settings)
                message = ""
                break
            except _SOLVE_ERRORS as exc:
                message = str(exc)
            if sigma / 2 < settings.sig_min:
                stalled = True
                break
            sigma /= 2
            log.info("iscarc: halving sigma to %.3g", sigma)
        if stalled:
            message = f"arclength stall at alpha={last.alpha:.6g}: {message}"
            log.warning(message)
            break
        if path.iterations <= settings.fast_iters:
            sigma = min(sigma * settings.grow, settings.sig_max)
        state = ArcState(prev=last, last=path, sigma=sigma)
        alv.append(path.alpha)
        vv.append(path.value)
        if settings.retain:
            history.append(path)
        log.info("iscarc step %d alpha=%.6g J=%.10g sigma=%.3g", step, path.alpha, path.value, sigma)
        if path.alpha > 1.0 and last.alpha <= 1.0:
            try:
                p1 = correct_at_alpha(problem, path, 1.0, settings)
                alv.append(1.0)
                vv.append(p1.value)
                if settings.retain:
                    history.append(p1)
                path = p1
            except _SOLVE_ERRORS as exc:
                log.warning("could not land on alpha=1: %s", exc)
        if not 0.0 <= path.alpha <= a_hi:
            break
    fold, fold_alpha = detect_fold(alv)
    return IscResult(alv=alv, vv=vv, last_path=state.last, problem=problem, history=history,
                     fold_detected=fold, fold_alpha=fold_alpha, stalled=stalled, message=message,
                     resume=state)


def detect_fold(alv):
    """Sign change of consecutive increments; returns the alpha at the first reversal."""
    d = np.diff(np.asarray(alv, dtype=float))
    for i in range(len(d) - 1):
        if d[i] * d[i + 1] < 0:
            return True, float(alv[i + 1])
    return False, None


def correct_at_alpha(problem, path, alpha, settings=None):
    """Re-solve at fixed ``alpha`` using ``path`` as the initial guess."""
    settings = settings or IscSettings()
    bc = replace(problem.bc, alpha=float(alpha), arc=None)
    out = _solve(problem, bc, _on_mesh(path, path.t), settings)
    out.alpha = float(alpha)
    return out
