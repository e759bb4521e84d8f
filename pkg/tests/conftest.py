"""Shared fixtures: the shallow-lake setup at desk scale and a results table
for the acceptance criteria."""

import numpy as np
import pytest

from ocpde.continuation import ContinuationSettings, branch_switch, continue_branch, newton_correct
from ocpde.fem1d import assemble, build_mesh
from ocpde.models import CanonicalSystem, SlocModel, VegocModel, constant_state

SLOC_L = 2 * np.pi / 0.44
SLOC_N = 51
SLOC_B = 0.65
SLOC_PARAMS = np.array([0.03, 0.55, 0.5, 0.5])

_criteria = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _criteria[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_criteria):
            terminalreporter.write_line(_criteria[k])


def sloc_flat_oracle(b, rho=0.03, gamma=0.5):
    """Flat steady states ``(P, q)`` from the scalar equation in ``P`` (grid plus brentq)."""
    from scipy.optimize import brentq

    def F(P):
        den = P ** 2 / (1 + P ** 2) - b * P
        return 2 * gamma * P + (rho + b - 2 * P / (1 + P ** 2) ** 2) / den

    # q = 1/den < 0 needs P/(1+P^2) < b
    Ps = np.linspace(1e-6, 1.0 / b, 40001)
    ok = Ps / (1 + Ps ** 2) < b
    v = F(Ps)
    roots = []
    for i in range(Ps.size - 1):
        if ok[i] and ok[i + 1] and np.sign(v[i]) != np.sign(v[i + 1]):
            P = brentq(F, Ps[i], Ps[i + 1], xtol=1e-15, rtol=1e-15)
            roots.append((P, 1.0 / (P ** 2 / (1 + P ** 2) - b * P)))
    return roots


@pytest.fixture(scope="session")
def sloc_system():
    return CanonicalSystem(SlocModel(), assemble(build_mesh(-SLOC_L, SLOC_L, SLOC_N)))


@pytest.fixture(scope="session")
def sloc_css(sloc_system):
    """Flat CSS at ``b = 0.65`` keyed ``FSC`` (lowest P), ``FSI``, ``FSM``."""
    params = SLOC_PARAMS.copy()
    params[1] = SLOC_B
    out = {}
    for name, (P, q) in zip(("FSC", "FSI", "FSM"), sloc_flat_oracle(SLOC_B)):
        guess = constant_state(sloc_system, None, [P * 1.02, q * 0.98], params=params)
        out[name], _ = newton_correct(guess)
    return out


@pytest.fixture(scope="session")
def sloc_flat_branch(sloc_system):
    start = constant_state(sloc_system, None, [0.3, -13.0], params=SLOC_PARAMS)
    start, _ = newton_correct(start)
    settings = ContinuationSettings(usrlam=(SLOC_B,), lam_min=0.549, lam_max=0.8, ds_max=0.5, max_steps=100)
    return continue_branch(start, settings=settings)


@pytest.fixture(scope="session")
def sloc_p1(sloc_flat_branch):
    """First patterned branch, switched at the first bifurcation in continuation order."""
    bp = sloc_flat_branch.special("bifurcation")[0]
    state, tangent = branch_switch(bp.state, bp.tangent, direction=1, ds=0.05)
    settings = ContinuationSettings(usrlam=(SLOC_B,), lam_min=0.549, lam_max=0.8, ds_max=0.3, max_steps=150)
    return continue_branch(state, tangent, settings=settings)


@pytest.fixture(scope="session")
def sloc_p1_at_b(sloc_p1):
    return [p for p in sloc_p1.points if p.record.point_type == "user-target"]


VEG_R = 28.0


@pytest.fixture(scope="session")
def veg_system():
    return CanonicalSystem(VegocModel(), assemble(build_mesh(-5.0, 5.0, 51)))


@pytest.fixture(scope="session")
def veg_flat_branch(veg_system):
    start = constant_state(veg_system, None, [510.5, 9.21, 0.564, 1.242])
    start, _ = newton_correct(start)
    settings = ContinuationSettings(usrlam=(VEG_R,), lam_min=20, lam_max=35, ds_init=0.5, ds_max=2,
                                    max_steps=150)
    return continue_branch(start, settings=settings, direction=-1)


@pytest.fixture(scope="session")
def veg_patterned(veg_flat_branch):
    bp = veg_flat_branch.special("bifurcation")[0]
    state, tangent = branch_switch(bp.state, bp.tangent, direction=1, ds=0.1)
    settings = ContinuationSettings(usrlam=(VEG_R,), lam_min=15, lam_max=60, ds_max=2, max_steps=400)
    return continue_branch(state, tangent, settings=settings)


@pytest.fixture(scope="session")
def veg_css(veg_flat_branch, veg_patterned):
    """At ``R = 28``: the flat state and the two patterned states in branch order."""
    flat = veg_flat_branch.at_param(VEG_R, kind="user-target")[0].state
    pat = veg_patterned.at_param(VEG_R, kind="user-target")
    return {"FSS": flat, "lower": pat[0].state, "upper": pat[1].state}
