from dataclasses import replace

import numpy as np
import pytest

from ocpde.errors import ConfigurationError, NewtonFailure, ProjectionError
from ocpde.fem1d import assemble, build_mesh
from ocpde.models import CanonicalSystem, LinearModel
from ocpde.tbvp import (ArcRow, BvpBc, BvpSettings, bvp_residual, constant_path, error_indicator,
                        make_graded_mesh, refine_mesh, solve_bvp, terminal_distance)


def _decay_setup(a=1.0, n=3):
    system = CanonicalSystem(LinearModel(np.diag([-a, a])), assemble(build_mesh(0.0, 1.0, n)))
    psi = np.hstack([np.zeros((n, n)), np.eye(n)])
    bc = BvpBc(init_index=np.arange(n), v_start=np.ones(n), v_hat=np.zeros(n), u_hat=np.zeros(2 * n),
               psi=psi, alpha=1.0)
    return system, bc


def test_graded_mesh():
    t = make_graded_mesh(10.0, 5, 2.0)
    assert t[0] == 0.0 and t[-1] == 10.0
    assert np.all(np.diff(np.diff(t)) > 0)
    for bad in [(0.0, 5, 1.0), (1.0, 2, 1.0), (1.0, 5, 0.5), (np.inf, 5, 1.0)]:
        with pytest.raises(ConfigurationError):
            make_graded_mesh(*bad)


def test_constant_solution_needs_no_iteration():
    system, bc = _decay_setup()
    bc = replace(bc, alpha=0.0)
    path = solve_bvp(system, [0.0, 0.0], bc, constant_path(np.zeros(6), make_graded_mesh(5.0, 20)))
    assert path.converged and path.iterations == 0 and path.max_residual == 0.0


def test_linear_problem_converges_in_one_newton_step():
    system, bc = _decay_setup(a=2.0)
    t = make_graded_mesh(4.0, 41)
    path = solve_bvp(system, [0.0, 0.0], bc, constant_path(np.zeros(6), t))
    assert path.iterations == 1
    assert np.max(np.abs(bvp_residual(system, [0.0, 0.0], bc, path))) < 1e-12
    assert np.allclose(path.values[:3].T, np.exp(-2.0 * t)[:, None], atol=5e-3)
    assert np.allclose(path.values[3:], 0.0)


def test_extended_mode_fixes_alpha_by_arclength_row():
    system, bc = _decay_setup()
    n = 3
    row = ArcRow(s=np.zeros(2 * n), s_alpha=1.0, sigma=0.3, u0_prev=np.zeros(2 * n), alpha_prev=0.0)
    ext = replace(bc, arc=row)
    guess = replace(constant_path(np.zeros(6), make_graded_mesh(3.0, 21)), alpha=0.0)
    path = solve_bvp(system, [0.0, 0.0], ext, guess)
    assert path.alpha == pytest.approx(0.3)
    assert np.allclose(path.values[:n, 0], 0.3)


def test_mismatched_projection_raises():
    system, bc = _decay_setup()
    bad = replace(bc, psi=bc.psi[:2])
    with pytest.raises(ProjectionError):
        solve_bvp(system, [0.0, 0.0], bad, constant_path(np.zeros(6), make_graded_mesh(1.0, 5)))


def test_iteration_budget_raises_newton_failure():
    system, bc = _decay_setup()
    with pytest.raises(NewtonFailure) as info:
        solve_bvp(system, [0.0, 0.0], bc, constant_path(np.zeros(6), make_graded_mesh(1.0, 5)),
                  BvpSettings(max_iter=0))
    assert info.value.iterate is not None and info.value.residual > 0


def test_refinement_reduces_indicator():
    system, bc = _decay_setup(a=5.0)
    path = solve_bvp(system, [0.0, 0.0], bc, constant_path(np.zeros(6), make_graded_mesh(10.0, 20)))
    eta0 = error_indicator(path).max()
    fine = refine_mesh(system, [0.0, 0.0], bc, path, factor=4.0, err_tol=1e-8)
    assert error_indicator(fine).max() <= eta0 / 3
    assert fine.converged and fine.m >= path.m


def test_refinement_is_noop_below_tolerance():
    system, bc = _decay_setup()
    path = solve_bvp(system, [0.0, 0.0], bc, constant_path(np.zeros(6), make_graded_mesh(2.0, 30)))
    assert refine_mesh(system, [0.0, 0.0], bc, path, err_tol=1.0) is path


def test_interpolate_and_terminal_distance():
    t = np.linspace(0.0, 1.0, 3)
    p = constant_path(np.array([1.0, 2.0]), t)
    p.values = p.values * np.array([1.0, 2.0, 3.0])
    q = p.interpolate([0.25, 0.75])
    assert np.allclose(q.values, [[1.5, 2.5], [3.0, 5.0]])
    assert terminal_distance(p, [3.0, 6.0]) == 0.0
    assert error_indicator(constant_path(np.ones(2), np.linspace(0, 1, 6))).max() == 0.0
