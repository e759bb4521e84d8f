"""Canonical-system models and the FEM residual ``G(u) = K_D u - M_blk f(u)``.

Nodal data ``u`` of length ``2N*n`` is ordered component-major: all nodes of
the first state, then the next state, ..., then the costates in the same
order.  Model callbacks receive the reshaped array ``U`` of shape
``(..., 2N, n)`` and must broadcast over the leading axes.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DimensionError, EvaluationError
from .fem1d import integrate


def _first_node(mask):
    idx = np.argwhere(mask)[0]
    node = int(idx[-1])
    time_index = int(idx[0]) if mask.ndim >= 2 else None
    return node, time_index


def _raise_at(mask, message):
    node, time_index = _first_node(mask)
    raise EvaluationError(f"{message} at node {node}", node=node, time_index=time_index)


class ModelSpec:
    """Base class for canonical-system models.

    Subclasses set the class attributes and implement ``reaction``,
    ``control``, ``local_value`` and ``hamiltonian``.  Leaving
    ``reaction_jac`` unimplemented selects central finite differences.
    """

    name = "model"
    n_states = 1
    component_names = ("v", "lam")
    param_names = ()
    default_params = ()
    active_param_default = 0
    rho_index = 0
    analytic_jacobian = False

    @property
    def n_comps(self):
        return 2 * self.n_states

    @property
    def n_params(self):
        return len(self.param_names)

    def param_index(self, name):
        try:
            return self.param_names.index(name)
        except ValueError:
            raise ConfigurationError(
                f"model {self.name!r} has no parameter {name!r}; known: {self.param_names}"
            ) from None

    def diffusion(self, params):
        raise NotImplementedError

    def reaction(self, U, params):
        raise NotImplementedError

    def reaction_jac(self, U, params):
        """Nodal Jacobian ``df_i/du_j`` with shape ``(..., 2N, 2N, n)``."""
        return fd_local_jacobian(self.reaction, U, params)

    def control(self, U, params):
        raise NotImplementedError

    def local_value(self, U, params, k=None):
        """Local current value ``J_c`` at control ``k`` (extracted if None)."""
        raise NotImplementedError

    def hamiltonian(self, U, params, k):
        """Control-dependent part of the nodal Hamiltonian ``J_c + lam^T g_1``."""
        raise NotImplementedError

    def j_c(self, U, params):
        return self.local_value(U, params)

    def admissibility(self, U, params):
        """List of human-readable admissibility violations (empty if fine)."""
        return []

    def options(self):
        """Constructor keyword arguments needed to rebuild this model."""
        return {}


def fd_local_jacobian(reaction, U, params, rel_step=1e-6):
    """Central finite differences of a nodal reaction term.

    Reaction terms act node by node, so perturbing one component at all nodes
    simultaneously yields the full nodal Jacobian in ``2 * 2N`` evaluations.
    """
    U = np.asarray(U, dtype=float)
    nc = U.shape[-2]
    jac = np.empty(U.shape[:-2] + (nc, nc, U.shape[-1]))
    for c in range(nc):
        h = rel_step * np.maximum(1.0, np.abs(U[..., c, :]))
        up = U.copy()
        um = U.copy()
        up[..., c, :] += h
        um[..., c, :] -= h
        jac[..., :, c, :] = (reaction(up, params) - reaction(um, params)) / (2.0 * h[..., None, :])
    return jac


class SlocModel(ModelSpec):
    """Shallow-lake phosphorus model; states (P,), costates (q,), control k = -1/q."""

    name = "sloc"
    n_states = 1
    component_names = ("P", "q")
    param_names = ("rho", "b", "gamma", "D")
    default_params = (0.03, 0.55, 0.5, 0.5)
    active_param_default = 1
    rho_index = 0
    analytic_jacobian = True

    def diffusion(self, params):
        return np.array([params[3]], dtype=float)

    def _unpack(self, U, params):
        P = U[..., 0, :]
        q = U[..., 1, :]
        if np.any(q >= 0):
            _raise_at(np.asarray(q >= 0), "SLOC costate q must be negative")
        return P, q

    def reaction(self, U, params):
        rho, b, gamma = params[0], params[1], params[2]
        P, q = self._unpack(U, params)
        s = 1.0 + P**2
        f1 = -1.0 / q - b * P + P**2 / s
        f2 = 2.0 * gamma * P + q * (rho + b - 2.0 * P / s**2)
        return np.stack([f1, f2], axis=-2)

    def reaction_jac(self, U, params):
        rho, b, gamma = params[0], params[1], params[2]
        P, q = self._unpack(U, params)
        s = 1.0 + P**2
        jac = np.empty(U.shape[:-2] + (2, 2, U.shape[-1]))
        jac[..., 0, 0, :] = -b + 2.0 * P / s**2
        jac[..., 0, 1, :] = 1.0 / q**2
        jac[..., 1, 0, :] = 2.0 * gamma - 2.0 * q * (1.0 - 3.0 * P**2) / s**3
        jac[..., 1, 1, :] = rho + b - 2.0 * P / s**2
        return jac

    def control(self, U, params):
        _, q = self._unpack(U, params)
        return -1.0 / q

    def local_value(self, U, params, k=None):
        P = U[..., 0, :]
        if k is None:
            k = self.control(U, params)
        return np.log(k) - params[2] * P**2

    def hamiltonian(self, U, params, k):
        P, q = U[..., 0, :], U[..., 1, :]
        b = params[1]
        return np.log(k) - params[2] * P**2 + q * (k - b * P + P**2 / (1.0 + P**2))

    def admissibility(self, U, params):
        q = U[..., 1, :]
        out = []
        if np.any(q >= 0):
            out.append(f"q >= 0 at {int(np.count_nonzero(q >= 0))} node(s)")
        if np.any(U[..., 0, :] < 0):
            out.append("P < 0 somewhere")
        return out


class VegocModel(ModelSpec):
    """Vegetation/soil-water grazing model; states (v, w), costates (lam, mu).

    The harvesting effort is ``E = ((p - lam)(1 - alpha)/c)^(1/alpha) v`` and
    the harvest ``H = v^alpha E^(1 - alpha)``.
    """

    name = "vegoc"
    n_states = 2
    component_names = ("v", "w", "lam", "mu")
    param_names = ("rho", "g", "eta", "d", "delta", "beta", "xi", "R",
                   "r_u", "r_w", "c", "p", "alpha")
    default_params = (0.03, 1e-3, 0.5, 0.03, 0.005, 0.9, 1e-3, 34.0,
                      0.01, 0.1, 1.0, 1.1, 0.3)
    active_param_default = 7
    rho_index = 0

    def __init__(self, d1=0.05, d2=10.0):
        self.d1 = d1
        self.d2 = d2

    def diffusion(self, params):
        return np.array([self.d1, self.d2])

    def options(self):
        return {"d1": self.d1, "d2": self.d2}

    def _gas(self, lam, params, strict=True):
        c, p, alpha = params[10], params[11], params[12]
        if strict and np.any(lam >= p):
            _raise_at(np.asarray(lam >= p), "vegOC requires lam < p")
        return ((p - lam) * (1.0 - alpha) / c) ** (1.0 / alpha)

    def _check_v(self, v):
        if np.any(v <= 0):
            _raise_at(np.asarray(v <= 0), "vegOC requires v > 0")

    def effort(self, U, params):
        v, lam = U[..., 0, :], U[..., 2, :]
        self._check_v(v)
        return self._gas(lam, params) * v

    def reaction(self, U, params):
        (rho, g, eta, d, delta, beta, xi, R, r_u, r_w, c, p, alpha) = params
        v, w, lam, mu = (U[..., i, :] for i in range(4))
        self._check_v(v)
        gas = self._gas(lam, params)
        # H = v^alpha E^(1-alpha) = gas^(1-alpha) v; H/v = gas^(1-alpha)
        hv = gas ** (1.0 - alpha)
        h = hv * v
        veta = v**eta
        f1 = (g * w * veta - d * (1.0 + delta * v)) * v - h
        f2 = R * (beta + xi * v) - (r_u * v + r_w) * w
        f3 = (rho * lam - p * alpha * hv
              - lam * (g * (eta + 1.0) * w * veta - 2.0 * d * delta * v - d - alpha * hv)
              - mu * (R * xi - r_u * w))
        f4 = rho * mu - lam * g * v ** (eta + 1.0) + mu * (r_u * v + r_w)
        return np.stack([f1, f2, f3, f4], axis=-2)

    def control(self, U, params):
        return self.effort(U, params)

    def local_value(self, U, params, k=None):
        c, p, alpha = params[10], params[11], params[12]
        v = U[..., 0, :]
        E = self.effort(U, params) if k is None else k
        return p * v**alpha * E ** (1.0 - alpha) - c * E

    def hamiltonian(self, U, params, k):
        c, p, alpha = params[10], params[11], params[12]
        v, lam = U[..., 0, :], U[..., 2, :]
        H = v**alpha * k ** (1.0 - alpha)
        return p * H - c * k - lam * H

    def admissibility(self, U, params):
        out = []
        v, w, lam = U[..., 0, :], U[..., 1, :], U[..., 2, :]
        if np.any(v <= 0):
            out.append("v <= 0 somewhere")
        if np.any(w <= 0):
            out.append("w <= 0 somewhere")
        if np.any(lam >= params[11]):
            out.append("lam >= p somewhere")
        return out


class LinearModel(ModelSpec):
    """Linear test model ``f(u) = A u + lam * c`` with a constant nodal matrix ``A``.

    Parameters are ``(rho, lam)``; the diffusion constants are fixed.
    """

    name = "linear"
    param_names = ("rho", "lam")
    default_params = (0.0, 0.0)
    active_param_default = 1
    analytic_jacobian = True

    def __init__(self, A, diffusion=None, c=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1] or A.shape[0] % 2:
            raise ConfigurationError("A must be square with an even dimension")
        self.A = A
        self.n_states = A.shape[0] // 2
        self.component_names = tuple(f"u{i}" for i in range(A.shape[0]))
        self.D = np.zeros(self.n_states) if diffusion is None else np.asarray(diffusion, float)
        self.c = np.zeros(A.shape[0]) if c is None else np.asarray(c, float)

    def diffusion(self, params):
        return self.D

    def reaction(self, U, params):
        return np.einsum("ij,...jn->...in", self.A, U) + params[1] * self.c[:, None]

    def reaction_jac(self, U, params):
        return np.broadcast_to(self.A[..., None], U.shape[:-2] + self.A.shape + (U.shape[-1],)).copy()

    def control(self, U, params):
        return np.zeros(U.shape[:-2] + U.shape[-1:])

    def local_value(self, U, params, k=None):
        return -0.5 * np.sum(U[..., : self.n_states, :] ** 2, axis=-2)


MODELS = {"sloc": SlocModel, "vegoc": VegocModel}


def register_model(name, factory):
    MODELS[name] = factory


def get_model(name, **kwargs):
    try:
        return MODELS[name](**kwargs)
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; registered: {sorted(MODELS)}") from None


class CanonicalSystem:
    """FEM discretisation of one model: residual, Jacobian and helpers.

    The Jacobian pattern is fixed (every component block has the tridiagonal
    pattern of ``M``), so Jacobians for many time slices are assembled from a
    cached index set.
    """

    def __init__(self, model, fem):
        self.model = model
        self.fem = fem
        self.n = fem.n
        self.nc = model.n_comps
        self.size = self.nc * self.n
        M = fem.M.tocoo()
        K = fem.K.tocsr()
        self._Mrow, self._Mcol, self._Mdata = M.row, M.col, M.data
        self._Kdata = np.asarray(K[M.row, M.col]).ravel()
        nc = self.nc
        ci, cj = np.meshgrid(np.arange(nc), np.arange(nc), indexing="ij")
        self.pattern_rows = (ci[..., None] * self.n + M.row).ravel()
        self.pattern_cols = (cj[..., None] * self.n + M.col).ravel()
        self.M_blk = sp.block_diag([fem.M] * nc, format="csr")

    def unpack(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.size:
            raise DimensionError(f"expected {self.size} nodal values, got {u.shape[-1]}")
        return u.reshape(u.shape[:-1] + (self.nc, self.n))

    def pack(self, U):
        U = np.asarray(U, dtype=float)
        return U.reshape(U.shape[:-2] + (self.size,))

    def signed_diffusion(self, params):
        D = np.asarray(self.model.diffusion(params), dtype=float)
        return np.concatenate([D, -D])

    def stiffness_blk(self, params):
        return sp.block_diag([d * self.fem.K for d in self.signed_diffusion(params)], format="csr")

    def reaction(self, u, params):
        U = self.unpack(u)
        f = self.model.reaction(U, params)
        if not np.all(np.isfinite(f)):
            _raise_at(~np.isfinite(f).all(axis=-2), f"non-finite reaction in model {self.model.name!r}")
        return f

    def residual(self, u, params):
        """``G(u) = K_D u - M_blk f(u)``; accepts a stack of states ``(..., size)``."""
        U = self.unpack(u)
        f = self.reaction(u, params)
        sd = self.signed_diffusion(params)
        X = U.reshape(-1, self.n).T
        F = f.reshape(-1, self.n).T
        KU = (self.fem.K @ X).T.reshape(U.shape)
        MF = (self.fem.M @ F).T.reshape(U.shape)
        return self.pack(sd[:, None] * KU - MF)

    def local_jacobian(self, u, params):
        U = self.unpack(u)
        self.reaction(u, params)
        jf = self.model.reaction_jac(U, params)
        if not np.all(np.isfinite(jf)):
            _raise_at(~np.isfinite(jf).all(axis=(-3, -2)), "non-finite reaction Jacobian")
        return jf

    def jacobian_values(self, u, params):
        """Values on the fixed pattern; shape ``(..., nc*nc*nnz(M))``."""
        jf = self.local_jacobian(u, params)
        sd = self.signed_diffusion(params)
        vals = -self._Mdata * jf[..., self._Mcol]
        diag = np.arange(self.nc)
        vals[..., diag, diag, :] += sd[:, None] * self._Kdata
        return vals.reshape(vals.shape[:-3] + (-1,))

    def jacobian(self, u, params):
        vals = self.jacobian_values(u, params)
        return sp.csr_matrix(
            (vals, (self.pattern_rows, self.pattern_cols)), shape=(self.size, self.size)
        )

    def param_derivative(self, u, params, index, rel_step=1e-6):
        params = np.array(params, dtype=float)
        h = rel_step * max(1.0, abs(params[index]))
        pp, pm = params.copy(), params.copy()
        pp[index] += h
        pm[index] -= h
        return (self.residual(u, pp) - self.residual(u, pm)) / (2.0 * h)

    def j_ca(self, u, params):
        """Spatial average of the local current value (one value per state)."""
        jc = self.model.j_c(self.unpack(u), params)
        if not np.all(np.isfinite(jc)):
            _raise_at(~np.isfinite(np.atleast_2d(jc)), "non-finite local current value")
        out = integrate(self.fem, jc) / self.fem.volume
        return float(out) if np.ndim(out) == 0 else out


@dataclass
class SystemState:
    """Nodal unknowns of a steady-state problem plus its parameter vector."""

    u: np.ndarray
    params: np.ndarray
    active_param: int
    system: CanonicalSystem = field(repr=False)

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float)
        self.params = np.array(self.params, dtype=float)
        if self.u.shape != (self.system.size,):
            raise DimensionError(f"u has shape {self.u.shape}, expected ({self.system.size},)")
        if self.params.shape != (self.model.n_params,):
            raise DimensionError(f"expected {self.model.n_params} parameters")

    @property
    def model(self):
        return self.system.model

    @property
    def fem(self):
        return self.system.fem

    @property
    def U(self):
        return self.system.unpack(self.u)

    @property
    def lam(self):
        return float(self.params[self.active_param])

    @property
    def rho(self):
        return float(self.params[self.model.rho_index])

    def with_u(self, u, lam=None):
        params = self.params.copy()
        if lam is not None:
            params[self.active_param] = lam
        return replace(self, u=np.array(u, dtype=float), params=params)

    def states(self):
        """Nodal state values (first N components), flattened."""
        return self.u[: self.model.n_states * self.system.n].copy()

    def check(self):
        """Warn about admissibility violations; used when loading files."""
        for msg in self.model.admissibility(self.U, self.params):
            warnings.warn(f"{self.model.name}: {msg}", RuntimeWarning, stacklevel=2)


def make_state(model, fem, u=None, params=None, active_param=None):
    system = model if isinstance(model, CanonicalSystem) else CanonicalSystem(model, fem)
    m = system.model
    if params is None:
        params = m.default_params
    if isinstance(active_param, str):
        active_param = m.param_index(active_param)
    if active_param is None:
        active_param = m.active_param_default
    if u is None:
        u = np.zeros(system.size)
    return SystemState(u=u, params=params, active_param=active_param, system=system)


def constant_state(model, fem, values, params=None, active_param=None):
    """State that is spatially constant with per-component ``values``."""
    system = model if isinstance(model, CanonicalSystem) else CanonicalSystem(model, fem)
    values = np.asarray(values, dtype=float)
    if values.shape != (system.nc,):
        raise DimensionError(f"need {system.nc} component values")
    u = np.repeat(values, system.n)
    return make_state(system, None, u=u, params=params, active_param=active_param)


def assemble_G(state):
    return state.system.residual(state.u, state.params)


def assemble_G_jac(state):
    return state.system.jacobian(state.u, state.params)


def j_ca(state):
    return state.system.j_ca(state.u, state.params)


def sloc_reaction(u, params):
    """SLOC reaction for a flat or nodal ``(P, q)`` pair array of shape ``(2, n)``."""
    return SlocModel().reaction(np.asarray(u, dtype=float), params)


def vegoc_reaction(u, params):
    return VegocModel().reaction(np.asarray(u, dtype=float), params)
