"""Objective values of steady states and canonical paths, and Skiba scans."""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EvaluationError, OcpdeError, PathFailure

log = logging.getLogger(__name__)


def _exp_weights(t, rho):
    """Weights ``w`` with ``w @ g = int exp(-rho t) g(t) dt`` for ``g`` piecewise linear on ``t``."""
    h = np.diff(t)
    x = rho * h
    small = np.abs(x) < 0.1
    # a = int_0^1 exp(-x s) ds, b = int_0^1 s exp(-x s) ds
    a = np.empty_like(x)
    b = np.empty_like(x)
    xs = x[~small]
    a[~small] = -np.expm1(-xs) / xs
    b[~small] = (1.0 - np.exp(-xs) * (1.0 + xs)) / xs ** 2
    xs = x[small]
    k = np.arange(14)
    fact = np.cumprod(np.concatenate([[1.0], np.arange(1.0, 16.0)]))
    terms = (-xs[:, None]) ** k
    a[small] = terms @ (1.0 / fact[k + 1])
    b[small] = terms @ ((k + 1) / fact[k + 2])
    e0 = np.exp(-rho * t[:-1]) * h
    w = np.zeros_like(t)
    w[:-1] += e0 * (a - b)
    w[1:] += e0 * b
    return w


def path_value(path, system, params, tail=False):
    """``int_0^T exp(-rho t) J_ca(u(t)) dt`` with ``J_ca`` interpolated linearly
    on the path's mesh and the exponential integrated exactly.

    With ``tail`` the steady-state remainder ``exp(-rho T) J_ca(u(T)) / rho``
    is added, which estimates the infinite-horizon objective.
    """
    params = np.asarray(params, dtype=float)
    rho = float(params[system.model.rho_index])
    U = np.asarray(path.values, dtype=float).T
    try:
        jca = system.j_ca(U, params)
    except EvaluationError as exc:
        raise EvaluationError(str(exc), node=exc.node, time_index=exc.time_index) from None
    jca = np.atleast_1d(jca)
    val = float(_exp_weights(np.asarray(path.t, dtype=float), rho) @ jca)
    if tail:
        if rho <= 0:
            raise ConfigurationError("the infinite-horizon tail needs rho > 0")
        val += float(np.exp(-rho * path.t[-1]) * jca[-1] / rho)
    return val


def css_value(state):
    """``(J_ca, J_ca / rho)`` of a steady state."""
    jca = state.system.j_ca(state.u, state.params)
    rho = state.rho
    if rho == 0:
        raise ConfigurationError("discounted value undefined for rho = 0")
    return float(jca), float(jca / rho)


@dataclass
class SkibaResult:
    alpha_star: float
    grid: list  # (alpha, J_A, J_B)
    path_A: object = None
    path_B: object = None
    value_gap: float = float("nan")
    bracket: tuple = None
    found: bool = False
    degenerate: bool = False
    message: str = ""


@dataclass
class SkibaSettings:
    skiba_tol: float = 0.05
    alpha_tol: float = 1e-3
    max_bisect: int = 30
    degenerate_tol: float = 1e-9  # relative to max(1, |J|)
    alvin_B: tuple = (0.1, 0.25, 0.5, 0.75, 1.0)
    tail: bool = True  # compare infinite-horizon estimates; the targets differ


def _nearest(history, alpha):
    return min(history, key=lambda p: abs(p.alpha - alpha))


def skiba_scan(start, target_A, target_B, alpha_grid=None, settings=None, isc_settings=None, a_paths=None,
               problem_A=None):
    """Compare paths to two targets from initial states on the segment
    ``alpha v_start + (1 - alpha) v_hat_A``.

    ``a_paths`` is a list of converged paths to ``target_A`` (for instance the
    retained history of an arclength run).  Grid points missing from it are
    computed by natural continuation.  Paths to ``target_B`` start from the
    initial slice of the corresponding A path and are computed with a natural
    homotopy from ``target_B``.
    """
    from .isc import IscSettings, correct_at_alpha, iscnat, setup_problem

    settings = settings or SkibaSettings()
    isc_settings = isc_settings or IscSettings()
    if not np.array_equal(target_A.params, target_B.params):
        raise ConfigurationError("the two targets belong to different parameter values")
    problem_A = problem_A or setup_problem(start, target_A, isc_settings)
    n_states = problem_A.system.model.n_states * problem_A.system.n
    b_settings = IscSettings(**{**isc_settings.__dict__, "alvin": tuple(settings.alvin_B), "msw": 0})

    def value(path, system):
        return path_value(path, system, target_A.params, tail=settings.tail)

    def a_path(alpha, near=None):
        if near is None and a_paths:
            near = _nearest(a_paths, alpha)
        if near is not None:
            if abs(near.alpha - alpha) <= 1e-14:
                return near
            return correct_at_alpha(problem_A, near, alpha, isc_settings)
        res = iscnat(start, target_A, IscSettings(**{**isc_settings.__dict__, "alvin": (alpha,)}),
                     problem=problem_A)
        return res.last_path

    def b_path(path_A):
        v0 = path_A.values[:n_states, 0]
        res = iscnat(v0, target_B, b_settings)
        if not res.reached:
            raise PathFailure(f"path to second target not reached: {res.message}")
        return res.last_path

    def sample(alpha, near=None):
        pa = a_path(alpha, near)
        pb = b_path(pa)
        ja, jb = value(pa, problem_A.system), value(pb, target_B.system)
        return alpha, pa, pb, ja - jb, ja, jb

    # along a retained history the continuation order is kept, so both sides of a fold stay apart
    if alpha_grid is None:
        if not a_paths:
            raise ConfigurationError("need an alpha grid or a path history")
        todo = [(p.alpha, p) for p in a_paths]
    else:
        todo = [(float(a), None) for a in alpha_grid]
    grid, samples = [], []
    for a, near in todo:
        try:
            smp = sample(a, near)
        except (OcpdeError, np.linalg.LinAlgError) as exc:
            log.warning("skiba grid point alpha=%g skipped: %s", a, exc)
            continue
        _, _, _, _, ja, jb = smp
        grid.append((a, ja, jb))
        samples.append(smp)
        log.info("skiba alpha=%.4g J_A=%.8g J_B=%.8g", a, ja, jb)
    if not samples:
        return SkibaResult(alpha_star=float("nan"), grid=grid, message="no grid point could be evaluated")
    gaps = np.array([smp[3] for smp in samples])
    scale = max(1.0, max(max(abs(smp[4]), abs(smp[5])) for smp in samples))
    if np.all(np.abs(gaps) <= settings.degenerate_tol * scale):
        _, pa, pb = samples[0][:3]
        return SkibaResult(alpha_star=float("nan"), grid=grid, path_A=pa, path_B=pb, value_gap=0.0,
                           degenerate=True, message="values coincide on the whole grid")
    k = next((i for i in range(len(gaps) - 1) if gaps[i] * gaps[i + 1] <= 0), None)
    if k is None:
        return SkibaResult(alpha_star=float("nan"), grid=grid, message="no sign change on the grid")
    lo, hi = samples[k], samples[k + 1]
    for _ in range(settings.max_bisect):
        if abs(hi[0] - lo[0]) <= settings.alpha_tol or min(abs(lo[3]), abs(hi[3])) <= settings.skiba_tol / 10:
            break
        try:
            mid = sample(0.5 * (lo[0] + hi[0]), near=lo[1])
        except (OcpdeError, np.linalg.LinAlgError) as exc:
            log.warning("skiba bisection stopped: %s", exc)
            break
        if mid[3] * lo[3] <= 0:
            hi = mid
        else:
            lo = mid
    g_lo, g_hi = lo[3], hi[3]
    a_star = lo[0] + (hi[0] - lo[0]) * g_lo / (g_lo - g_hi) if g_lo != g_hi else 0.5 * (lo[0] + hi[0])
    best = lo if abs(g_lo) <= abs(g_hi) else hi
    gap = abs(best[3])
    return SkibaResult(alpha_star=float(a_star), grid=grid, path_A=best[1], path_B=best[2], value_gap=gap,
                       bracket=(lo[0], hi[0], float(g_lo), float(g_hi)), found=True,
                       message="" if gap <= settings.skiba_tol else "bracket closed with gap above tolerance")
