"""Text formats for CSS points, canonical paths and CSV reports.

Every number is written with 17 significant digits, which round-trips IEEE
doubles exactly.  Point and path files carry ``# key = value`` header lines
followed by one CSV header row and the data rows.
"""

import csv
import os
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .fem1d import assemble, build_mesh
from .models import CanonicalSystem, SystemState, get_model

POINT_FORMAT = "ocpde-point 1"
PATH_FORMAT = "ocpde-path 1"


def fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _fmt_vec(v):
    return " ".join(fmt(x) for x in np.ravel(v))


def _parse_vec(s):
    s = s.strip()
    return np.array([float(t) for t in s.split()]) if s else np.zeros(0)


def _write_table(fh, header, columns):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in zip(*columns):
        writer.writerow([fmt(x) for x in row])


def _read_header_and_table(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    meta = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        if "=" in body:
            key, val = body.split("=", 1)
            meta[key.strip()] = val.strip()
        elif body:
            meta["format"] = body
        i += 1
    if i >= len(lines):
        raise FileFormatError(f"{path}: missing column header")
    header = lines[i].split(",")
    rows = [ln.split(",") for ln in lines[i + 1:] if ln.strip()]
    try:
        data = np.array(rows, dtype=float) if rows else np.zeros((0, len(header)))
    except ValueError as exc:
        raise FileFormatError(f"{path}: bad numeric data ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FileFormatError(f"{path}: ragged table")
    return meta, header, data


def _require(meta, keys, path):
    missing = [k for k in keys if k not in meta]
    if missing:
        raise FileFormatError(f"{path}: missing header field(s) {missing}")


def _model_options_str(model):
    return " ".join(f"{k}={fmt(v)}" for k, v in model.options().items())


def _parse_model_options(s):
    out = {}
    for tok in s.split():
        k, v = tok.split("=", 1)
        out[k] = float(v)
    return out


def system_from_meta(meta, path="<meta>"):
    _require(meta, ["model", "n_nodes", "x_min", "x_max"], path)
    try:
        model = get_model(meta["model"], **_parse_model_options(meta.get("model_options", "")))
        mesh = build_mesh(float(meta["x_min"]), float(meta["x_max"]), int(meta["n_nodes"]))
    except (ValueError, TypeError) as exc:
        raise FileFormatError(f"{path}: {exc}") from None
    return CanonicalSystem(model, assemble(mesh))


def save_point(path, state, point_type="regular", n_unstable=-1, j_ca=float("nan"),
               newton_tol=1e-8, tangent=None, extra=None):
    """Write a steady state; ``tangent`` is ``(du, dlam)`` when known."""
    system = state.system
    model = state.model
    mesh = system.fem.mesh
    residual = float(np.max(np.abs(system.residual(state.u, state.params))))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "model": model.name,
        "model_options": _model_options_str(model),
        "param_names": " ".join(model.param_names),
        "params": _fmt_vec(state.params),
        "active_param": model.param_names[state.active_param],
        "n_nodes": mesh.n,
        "x_min": fmt(mesh.x_min),
        "x_max": fmt(mesh.x_max),
        "point_type": point_type,
        "n_unstable": int(n_unstable),
        "j_ca": fmt(j_ca),
        "residual": fmt(residual),
        "newton_tol": fmt(newton_tol),
    }
    U = system.unpack(state.u)
    header = ["x"] + list(model.component_names)
    columns = [mesh.nodes] + [U[c] for c in range(system.nc)]
    if tangent is not None:
        du, dlam = tangent
        meta["tangent_dlam"] = fmt(dlam)
        dU = system.unpack(du)
        header += [f"tau_{c}" for c in model.component_names]
        columns += [dU[c] for c in range(system.nc)]
    for k, v in (extra or {}).items():
        meta[k] = v
    with open(path, "w") as fh:
        fh.write(f"# {POINT_FORMAT}\n")
        for k, v in meta.items():
            fh.write(f"# {k} = {v}\n")
        _write_table(fh, header, columns)
    return path


class PointData:
    """Contents of a point file."""

    def __init__(self, state, meta, tangent=None):
        self.state = state
        self.meta = meta
        self.tangent = tangent

    @property
    def point_type(self):
        return self.meta.get("point_type", "regular")

    @property
    def n_unstable(self):
        return int(self.meta.get("n_unstable", -1))

    @property
    def j_ca(self):
        return float(self.meta.get("j_ca", "nan"))

    @property
    def residual(self):
        return float(self.meta.get("residual", "nan"))


def load_point(path, check=True):
    """Read a point file; with ``check`` the FEM residual must stay within
    ten times the Newton tolerance the point was saved with."""
    meta, header, data = _read_header_and_table(path)
    if meta.get("format") != POINT_FORMAT:
        raise FileFormatError(f"{path}: not a point file")
    _require(meta, ["params", "active_param"], path)
    system = system_from_meta(meta, path)
    model = system.model
    if data.shape[0] != system.n:
        raise FileFormatError(f"{path}: {data.shape[0]} rows for {system.n} nodes")
    names = list(model.component_names)
    if header[: 1 + len(names)] != ["x"] + names:
        raise FileFormatError(f"{path}: unexpected columns {header}")
    params = _parse_vec(meta["params"])
    u = data[:, 1 : 1 + system.nc].T.ravel()
    try:
        state = SystemState(u=u, params=params, active_param=model.param_index(meta["active_param"]),
                            system=system)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from None
    tangent = None
    if "tangent_dlam" in meta:
        du = data[:, 1 + system.nc : 1 + 2 * system.nc].T.ravel()
        tangent = (du, float(meta["tangent_dlam"]))
    if check:
        res = float(np.max(np.abs(system.residual(state.u, state.params))))
        tol = 10.0 * float(meta.get("newton_tol", "1e-8"))
        if not res <= tol:
            raise FileFormatError(f"{path}: stale point, |G|_inf = {res:.3e} > {tol:.1e}")
        state.check()
    return PointData(state, meta, tangent)


def save_path(path_file, path, system, params, extra=None):
    """Write a canonical path: one row per time point, columns ``t`` and all nodal values."""
    mesh = system.fem.mesh
    model = system.model
    meta = {
        "model": model.name,
        "model_options": _model_options_str(model),
        "param_names": " ".join(model.param_names),
        "params": _fmt_vec(params),
        "n_nodes": mesh.n,
        "x_min": fmt(mesh.x_min),
        "x_max": fmt(mesh.x_max),
        "alpha": fmt(path.alpha),
        "T": fmt(path.T),
        "m": len(path.t),
        "value": fmt(path.value if path.value is not None else float("nan")),
        "converged": int(bool(path.converged)),
        "max_residual": fmt(path.max_residual),
    }
    meta.update(extra or {})
    header = ["t"] + [f"{c}_{j}" for c in model.component_names for j in range(system.n)]
    columns = [path.t] + list(path.values)
    path_file = Path(path_file)
    path_file.parent.mkdir(parents=True, exist_ok=True)
    with open(path_file, "w") as fh:
        fh.write(f"# {PATH_FORMAT}\n")
        for k, v in meta.items():
            fh.write(f"# {k} = {v}\n")
        _write_table(fh, header, columns)
    return path_file


def load_path(path_file):
    from .tbvp import CanonicalPath

    meta, header, data = _read_header_and_table(path_file)
    if meta.get("format") != PATH_FORMAT:
        raise FileFormatError(f"{path_file}: not a path file")
    _require(meta, ["params", "alpha"], path_file)
    system = system_from_meta(meta, path_file)
    if data.shape[1] != 1 + system.size:
        raise FileFormatError(f"{path_file}: expected {1 + system.size} columns")
    value = float(meta.get("value", "nan"))
    path = CanonicalPath(
        t=data[:, 0].copy(),
        values=data[:, 1:].T.copy(),
        alpha=float(meta["alpha"]),
        value=None if np.isnan(value) else value,
        converged=bool(int(meta.get("converged", "0"))),
        max_residual=float(meta.get("max_residual", "nan")),
    )
    return path, system, _parse_vec(meta["params"]), meta


def write_csv(path, header, rows):
    """Write a CSV with one header row; numeric cells get 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([x if isinstance(x, str) else fmt(x) for x in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def resolve_point(spec, base=None):
    """Accept ``dir/name``, ``dir/name.pt`` or a plain file path."""
    p = Path(spec)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    for cand in (p, p.with_suffix(".csv"), Path(os.fspath(p) + ".csv")):
        if cand.is_file():
            return cand
    return p
