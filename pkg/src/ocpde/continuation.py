"""Newton solver and pseudo-arclength continuation of steady states.

The extended unknown is ``(u, lam)`` with ``lam`` the active parameter.
Arclength inner products weight the PDE part by ``xi`` and the parameter
by ``1 - xi``.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BranchSwitchError, ConfigurationError, EvaluationError, NewtonFailure
from .fem1d import l2norm

log = logging.getLogger(__name__)

POINT_TYPES = ("regular", "bifurcation", "fold", "user-target")


@dataclass
class ContinuationSettings:
    ds_init: float = 0.1
    ds_min: float = 1e-6
    ds_max: float = 0.5
    lam_min: float = -math.inf
    lam_max: float = math.inf
    usrlam: tuple = ()
    newton_tol: float = 1e-8
    newton_max_iter: int = 20
    xi: float = None  # None -> 1/(2Nn)
    bifcheck: bool = True
    n_eig_watch: int = 50
    max_steps: int = 100
    bif_tol: float = 1e-6
    dense_eig_max: int = 1200
    grow_factor: float = 1.3
    fast_iters: int = 3

    def __post_init__(self):
        if not 0 < self.ds_min <= self.ds_max:
            raise ConfigurationError("need 0 < ds_min <= ds_max")
        if self.newton_tol <= 0:
            raise ConfigurationError("newton_tol must be positive")
        if self.xi is not None and not 0 < self.xi <= 1:
            raise ConfigurationError("xi must lie in (0, 1]")
        self.usrlam = tuple(sorted(float(x) for x in self.usrlam))

    def xi_for(self, size):
        return self.xi if self.xi is not None else 1.0 / size


@dataclass
class Tangent:
    du: np.ndarray
    dlam: float

    def normalized(self, xi):
        nrm = math.sqrt(xi * float(self.du @ self.du) + (1.0 - xi) * self.dlam**2)
        return Tangent(self.du / nrm, self.dlam / nrm)

    def dot(self, other, xi):
        return xi * float(self.du @ other.du) + (1.0 - xi) * self.dlam * other.dlam


@dataclass
class BranchRecord:
    index: int
    point_type: str
    n_unstable: int
    param: float
    l2norm: float
    j_ca: float
    j_disc: float
    point_file: str = ""


@dataclass
class BranchPoint:
    record: BranchRecord
    state: object
    tangent: Tangent


@dataclass
class Branch:
    records: list = field(default_factory=list)
    points: list = field(default_factory=list)
    stop_reason: str = ""

    def special(self, kind):
        return [p for p in self.points if p.record.point_type == kind]

    def at_param(self, value, tol=1e-12, kind=None):
        return [p for p in self.points
                if abs(p.record.param - value) <= tol and (kind is None or p.record.point_type == kind)]


def _inf_norm(r):
    return float(np.max(np.abs(r))) if r.size else 0.0


def newton_correct(state, settings=None):
    """Damped Newton at fixed parameters; returns ``(state, residual_history)``."""
    settings = settings or ContinuationSettings()
    system = state.system
    u = state.u.copy()
    params = state.params
    r = system.residual(u, params)
    res = _inf_norm(r)
    history = [res]
    for _ in range(settings.newton_max_iter):
        if res <= settings.newton_tol:
            return state.with_u(u), history
        J = system.jacobian(u, params).tocsc()
        try:
            step = spla.spsolve(J, -r)
        except RuntimeError as exc:
            raise NewtonFailure(f"singular Jacobian: {exc}", res, u) from None
        if not np.all(np.isfinite(step)):
            raise NewtonFailure("singular Jacobian", res, u)
        t = 1.0
        for _halving in range(11):
            try:
                trial = u + t * step
                r_trial = system.residual(trial, params)
                res_trial = _inf_norm(r_trial)
            except EvaluationError:
                res_trial = math.inf
            if res_trial < res or res_trial <= settings.newton_tol:
                break
            t *= 0.5
        else:
            raise NewtonFailure(f"line search failed at |G|={res:.3e}", res, u)
        u, r, res = trial, r_trial, res_trial
        history.append(res)
    if res <= settings.newton_tol:
        return state.with_u(u), history
    raise NewtonFailure(f"no convergence after {settings.newton_max_iter} steps, |G|={res:.3e}",
                        res, u)


def _bordered(system, u, params, index, tangent, xi):
    Gu = system.jacobian(u, params)
    Gl = system.param_derivative(u, params, index)
    row = sp.csr_matrix(np.concatenate([xi * tangent.du, [(1.0 - xi) * tangent.dlam]])[None, :])
    return sp.vstack([sp.hstack([Gu, sp.csr_matrix(Gl[:, None])]), row], format="csc")


def arclength_correct(state, pred_u, pred_lam, tangent, settings, xi):
    """Newton on ``G(u, lam) = 0`` plus the arclength row through the predictor.

    Returns ``(state, n_iterations)``; raises ``NewtonFailure``.
    """
    system = state.system
    idx = state.active_param
    params = state.params.copy()
    u, lam = pred_u.copy(), float(pred_lam)

    def residual(u, lam):
        params[idx] = lam
        g = system.residual(u, params)
        a = xi * float(tangent.du @ (u - pred_u)) + (1.0 - xi) * tangent.dlam * (lam - pred_lam)
        return g, a

    try:
        g, a = residual(u, lam)
    except EvaluationError as exc:
        raise NewtonFailure(f"predictor not admissible: {exc}") from None
    res = max(_inf_norm(g), abs(a))
    for it in range(settings.newton_max_iter + 1):
        if _inf_norm(g) <= settings.newton_tol and abs(a) <= 1e-12:
            params[idx] = lam
            return state.with_u(u, lam), it
        if it == settings.newton_max_iter:
            break
        params[idx] = lam
        A = _bordered(system, u, params, idx, tangent, xi)
        try:
            step = spla.spsolve(A, -np.concatenate([g, [a]]))
        except RuntimeError:
            break
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        for _halving in range(11):
            try:
                g_t, a_t = residual(u + t * step[:-1], lam + t * step[-1])
                res_t = max(_inf_norm(g_t), abs(a_t))
            except EvaluationError:
                res_t = math.inf
            if res_t < res:
                break
            t *= 0.5
        else:
            break
        u, lam = u + t * step[:-1], lam + t * step[-1]
        g, a, res = g_t, a_t, res_t
    raise NewtonFailure(f"arclength corrector failed, residual {res:.3e}", res, u)


def compute_tangent(state, prev_tangent, xi):
    """Tangent at a converged point, oriented along ``prev_tangent``."""
    system = state.system
    A = _bordered(system, state.u, state.params, state.active_param, prev_tangent, xi)
    rhs = np.zeros(system.size + 1)
    rhs[-1] = 1.0
    z = spla.spsolve(A, rhs)
    return Tangent(z[:-1], float(z[-1])).normalized(xi)


def initial_tangent(state, xi, direction=1.0):
    """Tangent with positive parameter component (natural-parameter direction)."""
    seed = Tangent(np.zeros(state.system.size), 1.0)
    tau = compute_tangent(state, seed, xi)
    return tau if direction >= 0 else Tangent(-tau.du, -tau.dlam)


def generalized_spectrum(state, vectors=False):
    """Eigenvalues of ``G_u phi = Lam M phi`` (dense QZ)."""
    system = state.system
    A = system.jacobian(state.u, state.params).toarray()
    B = system.M_blk.toarray()
    if vectors:
        return la.eig(A, B)
    return la.eigvals(A, B)


def count_unstable(state, settings=None):
    """Number of eigenvalues of ``G_u`` (w.r.t. ``M``) with negative real part.

    These are the growing directions of ``M u' = -G(u)``.
    """
    settings = settings or ContinuationSettings()
    system = state.system
    if system.size <= settings.dense_eig_max:
        lam = generalized_spectrum(state)
        lam = lam[np.isfinite(lam)]
        return int(np.count_nonzero(lam.real < 0))
    # large problems: eigenvalues nearest the origin by shift-invert
    A = system.jacobian(state.u, state.params).tocsc()
    k = min(settings.n_eig_watch, system.size - 2)
    vals = spla.eigs(A, k=k, M=system.M_blk.tocsc(), sigma=0.0, return_eigenvectors=False)
    return int(np.count_nonzero(vals.real < 0))


def record_for(state, index, point_type, n_unstable, point_file=""):
    system = state.system
    try:
        jca = system.j_ca(state.u, state.params)
    except EvaluationError:
        jca = math.nan
    rho = state.rho
    U = system.unpack(state.u)
    norm = math.sqrt(sum(l2norm(system.fem, U[c]) ** 2 for c in range(system.nc)) / system.fem.volume)
    return BranchRecord(
        index=index,
        point_type=point_type,
        n_unstable=int(n_unstable),
        param=state.lam,
        l2norm=norm,
        j_ca=jca,
        j_disc=jca / rho if rho != 0 else math.nan,
        point_file=point_file,
    )


class _Runner:
    """One continuation run; owns the branch and the output directory."""

    prefixes = {"regular": "pt", "user-target": "pt", "bifurcation": "bpt", "fold": "fpt"}

    def __init__(self, settings, out_dir, save_regular, start_index=0):
        self.settings = settings
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.save_regular = save_regular
        self.branch = Branch()
        self.counters = {"pt": 0, "bpt": 0, "fpt": 0}
        self.index = start_index

    def emit(self, state, tangent, point_type, n_unstable, index=None):
        fname = ""
        prefix = self.prefixes[point_type]
        if self.out_dir is not None and (point_type != "regular" or self.save_regular):
            from .files import save_point

            if prefix == "pt":
                num = self.index if index is None else index
            else:
                self.counters[prefix] += 1
                num = self.counters[prefix]
            fname = f"{prefix}{num}.csv"
            rec = record_for(state, self.index if index is None else index, point_type, n_unstable, fname)
            save_point(self.out_dir / fname, state, point_type, n_unstable, rec.j_ca,
                       self.settings.newton_tol, tangent=(tangent.du, tangent.dlam))
        rec = record_for(state, self.index if index is None else index, point_type, n_unstable, fname)
        self.branch.records.append(rec)
        self.branch.points.append(BranchPoint(rec, state, tangent))
        return rec


def _step(state, tangent, ds, settings, xi):
    pred_u = state.u + ds * tangent.du
    pred_lam = state.lam + ds * tangent.dlam
    new, its = arclength_correct(state, pred_u, pred_lam, tangent, settings, xi)
    return new, its


def _localize(a_state, a_tan, s_hi, same_as_a, settings, xi, lam_tol, max_iter=60):
    """Bisection in arclength from point A for the place where ``same_as_a``
    flips.  Returns ``(state, tangent, s_lo, s_hi)`` at the A-side end."""
    s_lo = 0.0
    lo_state, lo_tan = a_state, a_tan
    hi_state = None
    for _ in range(max_iter):
        s_mid = 0.5 * (s_lo + s_hi)
        try:
            mid, _ = _step(a_state, a_tan, s_mid, settings, xi)
        except NewtonFailure:
            log.warning("localisation corrector failed; point flagged approximate")
            break
        mid_tan = compute_tangent(mid, a_tan, xi)
        if same_as_a(mid, mid_tan):
            s_lo, lo_state, lo_tan = s_mid, mid, mid_tan
        else:
            s_hi, hi_state = s_mid, mid
        if hi_state is not None and abs(hi_state.lam - lo_state.lam) <= lam_tol and (s_hi - s_lo) <= 1e-6:
            break
        if (s_hi - s_lo) <= 1e-12:
            break
    return lo_state, lo_tan, hi_state


def _natural_target(prev, cur, target, settings):
    """Land exactly on ``lam = target`` between two converged points."""
    w = (target - prev.lam) / (cur.lam - prev.lam)
    guess = prev.with_u((1.0 - w) * prev.u + w * cur.u, target)
    new, _ = newton_correct(guess, settings)
    new.params[new.active_param] = target
    return new


def continue_branch(state, tangent=None, settings=None, out_dir=None, save_regular=True,
                    start_type="regular", direction=1.0):
    """Pseudo-arclength continuation from a converged state.

    ``direction`` flips the initial tangent when none is given; a negative
    ``settings.ds_init`` has the same effect.
    """
    settings = settings or ContinuationSettings()
    system = state.system
    xi = settings.xi_for(system.size)
    ds = abs(settings.ds_init)
    if settings.ds_init < 0:
        direction = -direction
    if tangent is None:
        tangent = initial_tangent(state, xi, direction)
    else:
        tangent = tangent.normalized(xi)
    runner = _Runner(settings, out_dir, save_regular)
    lam0 = state.lam
    if not settings.lam_min <= lam0 <= settings.lam_max:
        runner.branch.stop_reason = "start outside parameter window"
        return runner.branch
    n_unst = count_unstable(state, settings) if settings.bifcheck else -1
    if start_type == "regular" and any(abs(lam0 - t) <= 1e-12 for t in settings.usrlam):
        start_type = "user-target"
    runner.emit(state, tangent, start_type, n_unst)
    cur, cur_tan = state, tangent
    steps = 0
    while steps < settings.max_steps:
        try:
            new, its = _step(cur, cur_tan, ds, settings, xi)
            new_tan = compute_tangent(new, cur_tan, xi)
        except (NewtonFailure, RuntimeError) as exc:
            if ds / 2 < settings.ds_min:
                runner.branch.stop_reason = f"corrector failed at ds_min: {exc}"
                log.warning("branch terminated: %s", exc)
                break
            ds /= 2
            continue
        new_unst = count_unstable(new, settings) if settings.bifcheck else -1
        fold = np.sign(new_tan.dlam) != np.sign(cur_tan.dlam) and cur_tan.dlam != 0
        n_events = abs(new_unst - n_unst) if settings.bifcheck else 0
        if n_events > 1 and ds / 2 >= settings.ds_min:
            ds /= 2
            continue
        steps += 1
        runner.index += 1
        if not settings.lam_min <= new.lam <= settings.lam_max:
            # land on the window edge would need an extra solve; stop cleanly instead
            for t in settings.usrlam:
                if min(cur.lam, new.lam) < t < max(cur.lam, new.lam):
                    _emit_target(runner, cur, new, t, settings, n_unst)
            runner.index -= 1
            runner.branch.stop_reason = "left parameter window"
            break
        if fold:
            fold_state, fold_tan, _ = _localize(
                cur, cur_tan, ds, lambda s, t: np.sign(t.dlam) == np.sign(cur_tan.dlam),
                settings, xi, settings.bif_tol)
            runner.emit(fold_state, fold_tan, "fold", n_unst)
            runner.index += 1
        elif settings.bifcheck and n_events == 1:
            bif_state, bif_tan, _ = _localize(
                cur, cur_tan, ds, lambda s, t: count_unstable(s, settings) == n_unst,
                settings, xi, settings.bif_tol)
            runner.emit(bif_state, bif_tan, "bifurcation", n_unst)
            runner.index += 1
        for t in settings.usrlam:
            if min(cur.lam, new.lam) < t < max(cur.lam, new.lam):
                _emit_target(runner, cur, new, t, settings, n_unst)
                runner.index += 1
        ptype = "user-target" if any(abs(new.lam - t) <= 1e-12 for t in settings.usrlam) else "regular"
        runner.emit(new, new_tan, ptype, new_unst)
        cur, cur_tan, n_unst = new, new_tan, new_unst
        if its <= settings.fast_iters:
            ds = min(ds * settings.grow_factor, settings.ds_max)
    else:
        runner.branch.stop_reason = "max_steps reached"
    return runner.branch


def _emit_target(runner, prev, cur, target, settings, n_unst):
    try:
        st = _natural_target(prev, cur, target, settings)
    except NewtonFailure as exc:
        log.warning("could not land on usrlam %g: %s", target, exc)
        return
    xi = settings.xi_for(st.system.size)
    seed = Tangent(cur.u - prev.u, cur.lam - prev.lam).normalized(xi)
    tan = compute_tangent(st, seed, xi)
    runner.emit(st, tan, "user-target", count_unstable(st, settings) if settings.bifcheck else n_unst)


def detect_bifurcation(prev, cur, settings=None, prev_tangent=None):
    """Localise a change of the unstable-eigenvalue count between two points.

    Returns ``(state, tangent)`` at the crossing or ``None`` when the counts
    agree.
    """
    settings = settings or ContinuationSettings()
    n0 = count_unstable(prev, settings)
    n1 = count_unstable(cur, settings)
    if n0 == n1:
        return None
    xi = settings.xi_for(prev.system.size)
    if prev_tangent is None:
        prev_tangent = Tangent(cur.u - prev.u, cur.lam - prev.lam).normalized(xi)
    ds = prev_tangent.dot(Tangent(cur.u - prev.u, cur.lam - prev.lam), xi)
    state, tan, _ = _localize(prev, prev_tangent, ds, lambda s, t: count_unstable(s, settings) == n0,
                              settings, xi, settings.bif_tol)
    return state, tan


def kernel_vector(state, rel_gap=10.0):
    """Real eigenvector of ``G_u`` for the eigenvalue closest to zero.

    Raises ``BranchSwitchError`` unless that eigenvalue is isolated
    (next one at least ``rel_gap`` times farther from zero).
    """
    lam, vec = generalized_spectrum(state, vectors=True)
    ok = np.isfinite(lam)
    lam, vec = lam[ok], vec[:, ok]
    order = np.argsort(np.abs(lam))
    l0, l1 = lam[order[0]], lam[order[1]]
    if abs(l1) < rel_gap * abs(l0) or abs(l0.imag) > 1e-8 * max(1.0, abs(l0)):
        raise BranchSwitchError(
            f"kernel not one-dimensional: nearest eigenvalues {l0:.3e}, {l1:.3e}")
    phi = np.real(vec[:, order[0]])
    return phi / np.linalg.norm(phi), l0


def branch_switch(bif_state, old_tangent, direction=1.0, ds=0.05, settings=None):
    """Step off a bifurcation point along the kernel direction.

    Returns the converged first point on the new branch and its tangent.
    """
    settings = settings or ContinuationSettings()
    xi = settings.xi_for(bif_state.system.size)
    phi, _ = kernel_vector(bif_state)
    old = old_tangent.normalized(xi)
    new = Tangent(phi.copy(), 0.0)
    new = Tangent(new.du - new.dot(old, xi) * old.du, -new.dot(old, xi) * old.dlam).normalized(xi)
    step = float(np.sign(direction)) * abs(ds)
    pred_u = bif_state.u + step * new.du
    pred_lam = bif_state.lam + step * new.dlam
    oriented = new if step > 0 else Tangent(-new.du, -new.dlam)
    try:
        state, _ = arclength_correct(bif_state, pred_u, pred_lam, oriented, settings, xi)
    except NewtonFailure as exc:
        raise BranchSwitchError(f"corrector failed after branch switch: {exc}") from None
    tangent = compute_tangent(state, oriented, xi)
    return state, tangent
