import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocpde.errors import ConfigurationError
from ocpde.isc import IscSettings
from ocpde.models import make_state
from ocpde.tbvp import constant_path, make_graded_mesh
from ocpde.value import SkibaSettings, _exp_weights, css_value, path_value, skiba_scan


@settings(max_examples=50, deadline=None)
@given(rho=st.floats(0.0, 3.0), T=st.floats(0.1, 200.0), m=st.integers(3, 60), s=st.floats(1.0, 3.0))
def test_weights_integrate_exponential_exactly(rho, T, m, s):
    t = make_graded_mesh(T, m, s)
    w = _exp_weights(t, rho)
    exact = T if rho == 0 else -np.expm1(-rho * T) / rho
    assert w.sum() == pytest.approx(exact, rel=1e-12)
    # linear integrand: int t exp(-rho t) dt
    x = rho * T
    if x > 1e-3:
        lin = (1 - np.exp(-x) * (1 + x)) / rho ** 2
    else:
        lin = T ** 2 * (0.5 - x / 3 + x ** 2 / 8 - x ** 3 / 30)
    assert w @ t == pytest.approx(lin, rel=1e-10, abs=1e-12)


def test_constant_path_value_and_tail(sloc_css):
    fsc = sloc_css["FSC"]
    jca, jdisc = css_value(fsc)
    assert jdisc == pytest.approx(jca / 0.03)
    p = constant_path(fsc.u, make_graded_mesh(80.0, 50, 2.0))
    assert path_value(p, fsc.system, fsc.params) == pytest.approx(jca * -np.expm1(-0.03 * 80) / 0.03, rel=1e-13)
    assert path_value(p, fsc.system, fsc.params, tail=True) == pytest.approx(jdisc, rel=1e-13)


def test_zero_discount_rejected(sloc_css):
    fsc = sloc_css["FSC"]
    s0 = make_state(fsc.system, None, u=fsc.u, params=np.r_[0.0, fsc.params[1:]])
    with pytest.raises(ConfigurationError):
        css_value(s0)
    p = constant_path(fsc.u, make_graded_mesh(10.0, 5))
    with pytest.raises(ConfigurationError):
        path_value(p, s0.system, s0.params, tail=True)


def test_skiba_needs_grid_or_history(sloc_css, sloc_p1_at_b):
    with pytest.raises(ConfigurationError):
        skiba_scan(sloc_p1_at_b[0].state, sloc_css["FSC"], sloc_css["FSM"],
                   isc_settings=IscSettings(T=100.0, m=20, s=2.0))


def test_identical_targets_are_degenerate(sloc_css, sloc_p1_at_b):
    fsc = sloc_css["FSC"]
    st = IscSettings(T=100.0, m=30, s=2.0)
    res = skiba_scan(sloc_p1_at_b[0].state, fsc, fsc, alpha_grid=(0.5, 1.0),
                     settings=SkibaSettings(alvin_B=(0.5, 1.0)), isc_settings=st)
    assert res.degenerate and not res.found
    assert len(res.grid) == 2


def test_same_sign_grid_reports_none(sloc_css, sloc_p1_at_b):
    st = IscSettings(T=100.0, m=30, s=2.0)
    res = skiba_scan(sloc_p1_at_b[1].state, sloc_css["FSC"], sloc_css["FSM"], alpha_grid=(0.55, 0.6),
                     isc_settings=st)
    assert not res.found and "no sign change" in res.message
