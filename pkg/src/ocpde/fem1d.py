"""P1 finite elements on an interval with natural (homogeneous Neumann) BCs."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise ConfigurationError("a mesh needs at least 3 nodes")
        if not np.all(np.diff(x) > 0):
            raise ConfigurationError("mesh nodes must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def n(self):
        return self.nodes.size

    @property
    def element_lengths(self):
        return np.diff(self.nodes)

    @property
    def domain_length(self):
        return float(self.nodes[-1] - self.nodes[0])

    @property
    def x_min(self):
        return float(self.nodes[0])

    @property
    def x_max(self):
        return float(self.nodes[-1])


@dataclass(frozen=True)
class FemOps:
    """Consistent mass matrix ``M`` and stiffness matrix ``K`` (CSR)."""

    M: sp.csr_matrix
    K: sp.csr_matrix
    mesh: Mesh1D
    ones: np.ndarray = field(repr=False, default=None)

    @property
    def n(self):
        return self.mesh.n

    @property
    def volume(self):
        return self.mesh.domain_length


def build_mesh(x_min, x_max, n_nodes):
    """Uniform mesh with ``n_nodes`` nodes on ``[x_min, x_max]``."""
    if not np.isfinite(x_min) or not np.isfinite(x_max) or not x_min < x_max:
        raise ConfigurationError(f"invalid interval ({x_min}, {x_max})")
    if int(n_nodes) != n_nodes or n_nodes < 3:
        raise ConfigurationError(f"n_nodes must be an integer >= 3, got {n_nodes}")
    return Mesh1D(np.linspace(x_min, x_max, int(n_nodes)))


def assemble(mesh):
    h = mesh.element_lengths
    n = mesh.n
    # element contributions: mass h/6*[[2,1],[1,2]], stiffness 1/h*[[1,-1],[-1,1]]
    main_m = np.zeros(n)
    main_m[:-1] += h / 3.0
    main_m[1:] += h / 3.0
    off_m = h / 6.0
    main_k = np.zeros(n)
    main_k[:-1] += 1.0 / h
    main_k[1:] += 1.0 / h
    off_k = -1.0 / h
    M = sp.diags([off_m, main_m, off_m], [-1, 0, 1], format="csr")
    K = sp.diags([off_k, main_k, off_k], [-1, 0, 1], format="csr")
    return FemOps(M=M, K=K, mesh=mesh, ones=M @ np.ones(n))


def integrate(fem, w):
    """Approximate the integral of the nodal field ``w`` as ``1^T M w``."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != fem.n:
        raise DimensionError(f"field has {w.shape[-1]} values, mesh has {fem.n} nodes")
    return fem.ones @ w if w.ndim == 1 else w @ fem.ones


def l2norm(fem, w):
    w = np.asarray(w, dtype=float)
    return float(np.sqrt(w @ (fem.M @ w)))
