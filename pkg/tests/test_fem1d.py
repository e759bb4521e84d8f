import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from ocpde.errors import ConfigurationError, DimensionError
from ocpde.fem1d import Mesh1D, assemble, build_mesh, integrate, l2norm


def test_mass_and_stiffness_basic_identities():
    fem = assemble(build_mesh(-2.0, 3.0, 11))
    one = np.ones(fem.n)
    assert one @ fem.M @ one == pytest.approx(5.0, rel=1e-14)
    assert np.allclose(fem.K @ one, 0.0, atol=1e-13)
    assert np.allclose((fem.M - fem.M.T).toarray(), 0.0)
    assert np.all(np.linalg.eigvalsh(fem.M.toarray()) > 0)


def test_mass_entries_match_quadrature_of_hat_functions():
    mesh = Mesh1D(np.array([0.0, 0.3, 1.0, 1.2]))
    fem = assemble(mesh)
    x = mesh.nodes

    def hat(i, s):
        e = np.zeros(x.size)
        e[i] = 1.0
        return np.interp(s, x, e)

    for i in range(x.size):
        for j in range(x.size):
            m = sum(quad(lambda s: hat(i, s) * hat(j, s), x[k], x[k + 1])[0] for k in range(x.size - 1))
            assert fem.M[i, j] == pytest.approx(m, abs=1e-14)


def test_stiffness_energy_of_linear_field():
    fem = assemble(build_mesh(0.0, 2.0, 9))
    x = fem.mesh.nodes
    w = 3.0 * x - 1.0
    assert w @ fem.K @ w == pytest.approx(9.0 * 2.0, rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), n=st.integers(3, 40))
def test_integrate_exact_for_linear_fields(a, b, n):
    fem = assemble(build_mesh(-1.0, 2.0, n))
    w = a + b * fem.mesh.nodes
    exact = 3.0 * a + b * (4.0 - 1.0) / 2.0
    assert integrate(fem, w) == pytest.approx(exact, abs=1e-11)


def test_l2norm_and_stacked_integrate():
    fem = assemble(build_mesh(0.0, 4.0, 5))
    assert l2norm(fem, np.full(5, 2.0)) == pytest.approx(4.0)
    out = integrate(fem, np.ones((3, 5)))
    assert out.shape == (3,) and np.allclose(out, 4.0)
    with pytest.raises(DimensionError):
        integrate(fem, np.ones(4))


@pytest.mark.parametrize("args", [(1.0, 0.0, 5), (0.0, 1.0, 2), (0.0, np.inf, 5), (0.0, 1.0, 4.5)])
def test_bad_meshes_raise(args):
    with pytest.raises(ConfigurationError):
        build_mesh(*args)


def test_non_monotone_nodes_raise():
    with pytest.raises(ConfigurationError):
        Mesh1D(np.array([0.0, 2.0, 1.0]))
