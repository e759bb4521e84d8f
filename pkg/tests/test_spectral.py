import numpy as np
import pytest
import scipy.linalg as la

from ocpde.errors import DegenerateSpectrumError, ProjectionError
from ocpde.fem1d import assemble, build_mesh
from ocpde.models import CanonicalSystem, LinearModel, constant_state
from ocpde.spectral import (adjoint_eig_dense, build_psi, defect, projection, right_stable_vectors,
                            spectral_symmetry_gap, suggest_T)


def _linear_state(rho=0.1, a=0.5, n=8):
    # canonical structure: state block -a, costate block rho + a
    A = np.diag([-a, rho + a])
    system = CanonicalSystem(LinearModel(A, diffusion=[0.2]), assemble(build_mesh(0.0, 3.0, n)))
    return constant_state(system, None, [0.0, 0.0], params=[rho, 0.0])


def test_adjoint_eig_matches_scipy():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((6, 6))
    M = np.eye(6) + 0.1 * np.diag(np.ones(5), 1) + 0.1 * np.diag(np.ones(5), -1)
    lam, phi = adjoint_eig_dense(G, M)
    ref = la.eigvals(G.T, M)
    assert np.allclose(np.sort_complex(lam), np.sort_complex(ref))


def test_defect_counts_and_degenerate():
    assert defect(np.array([1.0, 2.0, -1.0]), 1, 2) == 0
    assert defect(np.array([1.0, -2.0, -1.0]), 1, 2) == -1
    with pytest.raises(DegenerateSpectrumError):
        defect(np.array([1.0, 1e-14, -1.0]), 1, 2)


def test_linear_canonical_system_has_spp_and_symmetry():
    s = _linear_state()
    pr = projection(s)
    assert pr.defect == 0 and pr.has_spp
    assert spectral_symmetry_gap(pr.eigenvalues, s.rho) < 1e-12
    # slowest stable dynamics rate is a = 0.5
    assert pr.suggested_T == pytest.approx(15.0 / 0.5)
    _, xi = right_stable_vectors(s)
    assert np.max(np.abs(pr.psi @ xi)) < 1e-12
    assert np.allclose(pr.psi @ pr.psi.T, np.eye(pr.psi.shape[0]), atol=1e-12)


def test_psi_from_complex_pairs_is_real_and_orthonormal():
    lam = np.array([-1 + 2j, -1 - 2j, 3.0])
    rng = np.random.default_rng(0)
    v = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    v[:, 1] = np.conj(v[:, 0])
    v[:, 2] = v[:, 2].real
    psi = build_psi(lam, v, np.eye(3))
    assert psi.shape == (2, 3) and np.isrealobj(psi)
    assert np.allclose(psi @ psi.T, np.eye(2))


def test_suggest_T_needs_stable_directions():
    with pytest.raises(ProjectionError):
        suggest_T(np.array([-1.0, -2.0]))


def test_symmetry_gap_detects_asymmetry():
    mu = np.array([-1.0, 1.1, 0.2 + 1j, -0.1 + 1j])  # rho = 0.1: pairs (-1, 1.1), (0.2+i, -0.1+i)
    assert spectral_symmetry_gap(-mu, 0.1) < 1e-14
    assert spectral_symmetry_gap(-mu, 0.3) > 1e-2
