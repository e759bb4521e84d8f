"""Command-line interface.

Every command reads an optional INI run configuration and writes plain CSV
files.  Exit codes: 0 success, 1 partial progress, 2 hard failure.
"""

import argparse
import ast
import configparser
import logging
import math
import operator
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .continuation import (ContinuationSettings, Tangent, branch_switch, continue_branch, newton_correct)
from .errors import ConfigurationError, FileFormatError, OcpdeError
from .fem1d import assemble, build_mesh
from .files import (fmt, load_path, load_point, resolve_point, save_path, write_csv)
from .isc import IscSettings, iscarc, iscnat
from .models import CanonicalSystem, constant_state, get_model
from .spectral import projection
from .value import SkibaSettings, css_value, path_value, skiba_scan

log = logging.getLogger("ocpde")

EXIT_OK, EXIT_PARTIAL, EXIT_FAIL = 0, 1, 2

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
        ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}
_NAMES = {"pi": math.pi, "e": math.e, "inf": math.inf}


def eval_number(text):
    """Evaluate a numeric literal or a small arithmetic expression such as ``2*pi/0.44``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError
    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except (ValueError, SyntaxError, ZeroDivisionError, TypeError):
        raise ConfigurationError(f"not a number: {text!r}") from None


def _numbers(text):
    return tuple(eval_number(t) for t in text.replace(",", " ").split())


class RunConfig:
    """Parsed run configuration.

    Sections: ``[model]`` (name, active, model options), ``[params]``,
    ``[domain]`` (x_min, x_max, n_nodes), ``[start]`` (constant initial
    guess per component), ``[continuation]``, ``[path]``, ``[isc]``,
    ``[output]`` (out_dir).
    """

    def __init__(self, parser=None):
        if parser is None:
            parser = configparser.ConfigParser()
            parser.optionxform = str
        self.cp = parser

    @classmethod
    def read(cls, path):
        cfg = cls()
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such config file: {path}")
        try:
            cfg.cp.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        return cfg

    def section(self, name):
        return dict(self.cp[name]) if self.cp.has_section(name) else {}

    def model(self):
        sec = self.section("model")
        if "name" not in sec:
            raise ConfigurationError("[model] needs a name")
        opts = {k: eval_number(v) for k, v in sec.items() if k not in ("name", "active")}
        model = get_model(sec["name"], **opts)
        return model

    def params(self, model):
        values = list(model.default_params)
        for k, v in self.section("params").items():
            try:
                values[model.param_index(k)] = eval_number(v)
            except (KeyError, ValueError):
                raise ConfigurationError(f"model {model.name!r} has no parameter {k!r}") from None
        return np.array(values, dtype=float)

    def active(self, model):
        name = self.section("model").get("active")
        if name is None:
            return model.active_param_default
        try:
            return model.param_index(name.strip())
        except (KeyError, ValueError):
            raise ConfigurationError(f"unknown active parameter {name!r}") from None

    def system(self, model):
        d = self.section("domain")
        try:
            mesh = build_mesh(eval_number(d["x_min"]), eval_number(d["x_max"]), int(eval_number(d["n_nodes"])))
        except KeyError as exc:
            raise ConfigurationError(f"[domain] misses {exc}") from None
        return CanonicalSystem(model, assemble(mesh))

    def start_state(self):
        model = self.model()
        system = self.system(model)
        sec = self.section("start")
        try:
            values = [eval_number(sec[c]) for c in model.component_names]
        except KeyError as exc:
            raise ConfigurationError(f"[start] misses component {exc}") from None
        return constant_state(system, None, values, params=self.params(model), active_param=self.active(model))

    @staticmethod
    def _settings(cls, raw, section, overrides=None):
        kw = {}
        names = {f.name: f for f in fields(cls)}
        for k, v in raw.items():
            if k not in names:
                raise ConfigurationError(f"[{section}] unknown key {k!r}")
            default = names[k].default
            if isinstance(default, tuple):
                kw[k] = _numbers(v)
            elif isinstance(default, bool):
                kw[k] = v.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[k] = int(eval_number(v))
            elif k == "T" and v.strip().lower() == "auto":
                kw[k] = None
            else:
                kw[k] = eval_number(v)
        kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**kw)

    def continuation(self, **overrides):
        return self._settings(ContinuationSettings, self.section("continuation"), "continuation", overrides)

    def isc(self, **overrides):
        raw = {**self.section("path"), **self.section("isc")}
        return self._settings(IscSettings, raw, "path/isc", overrides)

    def skiba(self, **overrides):
        return self._settings(SkibaSettings, self.section("skiba"), "skiba", overrides)

    def out_dir(self, default="."):
        return self.section("output").get("out_dir", default)


def _config(args):
    return RunConfig.read(args.config) if getattr(args, "config", None) else RunConfig()


BRANCH_HEADER = ["index", "point_type", "n_unstable", "param", "l2norm", "j_ca", "j_disc", "point_file"]


def _write_branch(out_dir, branch, name="branch.csv"):
    rows = [[r.index, r.point_type, r.n_unstable, r.param, r.l2norm, r.j_ca, r.j_disc, r.point_file]
            for r in branch.records]
    return write_csv(Path(out_dir) / name, BRANCH_HEADER, rows)


def _report_branch(branch):
    for r in branch.records:
        if r.point_type != "regular":
            print(f"{r.point_type:12s} index={r.index} param={fmt(r.param)} n_unstable={r.n_unstable} "
                  f"j_ca={fmt(r.j_ca)}")
    print(f"{len(branch.records)} points; stop: {branch.stop_reason}")


def cmd_css_cont(args):
    cfg = _config(args)
    if args.start:
        pd = load_point(resolve_point(args.start))
        state = pd.state
        tangent = Tangent(*pd.tangent) if pd.tangent is not None else None
    else:
        state = cfg.start_state()
        tangent = None
    settings = cfg.continuation(max_steps=args.steps)
    try:
        state, hist = newton_correct(state, settings)
    except OcpdeError as exc:
        print(f"error: Newton failed at start: {exc} (residual {getattr(exc, 'residual', float('nan')):.3e})",
              file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out or cfg.out_dir())
    branch = continue_branch(state, tangent, settings, out_dir=out, direction=args.dir)
    _write_branch(out, branch)
    _report_branch(branch)
    return EXIT_OK


def cmd_branch_switch(args):
    cfg = _config(args)
    pd = load_point(resolve_point(args.bif))
    if pd.point_type != "bifurcation" or pd.tangent is None:
        raise FileFormatError(f"{args.bif}: not a bifurcation point with tangent")
    settings = cfg.continuation(max_steps=args.steps)
    state, tangent = branch_switch(pd.state, Tangent(*pd.tangent), direction=args.dir, ds=args.ds,
                                   settings=settings)
    out = Path(args.out or cfg.out_dir())
    branch = continue_branch(state, tangent, settings, out_dir=out)
    _write_branch(out, branch)
    _report_branch(branch)
    return EXIT_OK


def cmd_spectral(args):
    pd = load_point(resolve_point(args.point))
    proj = projection(pd.state, c_T=args.c_T)
    lam = proj.eigenvalues
    order = np.lexsort((lam.imag, lam.real))
    if args.out:
        write_csv(args.out, ["re", "im"], [[lam[i].real, lam[i].imag] for i in order])
    print(f"defect={proj.defect} spp={str(proj.has_spp).lower()} suggested_T={fmt(proj.suggested_T)} "
          f"n_eig={lam.size}")
    return EXIT_OK


def _isc_common(args):
    cfg = _config(args)
    a, b = resolve_point(args.start), resolve_point(args.to)
    if args.flip:
        a, b = b, a
    start = load_point(a).state
    target = load_point(b).state
    over = {"T": args.T, "m": args.m, "s": args.s}
    return cfg, start, target, over


def _write_isc(out, res, prefix):
    out = Path(out)
    write_csv(out / f"{prefix}_alpha_J.csv", ["alpha", "J"], list(zip(res.alv, res.vv)))
    system, params = res.problem.system, res.problem.params
    if res.alv:
        save_path(out / f"{prefix}_last_path.csv", res.last_path, system, params)
    for j, p in enumerate(res.history):
        save_path(out / f"{prefix}_path{j + 1}.csv", p, system, params)


def cmd_isc_nat(args):
    cfg, start, target, over = _isc_common(args)
    if args.alvin:
        over["alvin"] = _numbers(args.alvin)
    settings = cfg.isc(**over)
    res = iscnat(start, target, settings)
    _write_isc(args.out or cfg.out_dir(), res, "iscnat")
    for a, v in zip(res.alv, res.vv):
        print(f"alpha={fmt(a)} J={fmt(v)}")
    if res.message:
        print(res.message)
    return EXIT_OK if res.reached or (res.alv and res.alv[-1] == settings.alvin[-1]) else EXIT_PARTIAL


def cmd_isc_arc(args):
    cfg, start, target, over = _isc_common(args)
    over["n_steps"] = args.steps
    settings = cfg.isc(**over)
    res = iscarc(start, target, settings=settings)
    _write_isc(args.out or cfg.out_dir(), res, "iscarc")
    for a, v in zip(res.alv, res.vv):
        print(f"alpha={fmt(a)} J={fmt(v)}")
    if res.fold_detected:
        print(f"fold in alpha at {fmt(res.fold_alpha)}")
    if res.stalled:
        print(res.message)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_skiba(args):
    cfg = _config(args)
    start = load_point(resolve_point(args.start)).state
    ta = load_point(resolve_point(args.to_a)).state
    tb = load_point(resolve_point(args.to_b)).state
    isc_settings = cfg.isc(T=args.T, m=args.m, s=args.s)
    grid = _numbers(args.grid) if args.grid else tuple(np.round(np.arange(0.1, 1.0 + 1e-9, 0.1), 12))
    hist = iscnat(start, ta, IscSettings(**{**isc_settings.__dict__, "alvin": grid, "retain": True}))
    sk = skiba_scan(start, ta, tb, settings=cfg.skiba(), isc_settings=isc_settings, a_paths=hist.history)
    out = Path(args.out or cfg.out_dir())
    write_csv(out / "skiba.csv", ["alpha", "J_A", "J_B", "J_A_minus_J_B"],
              [[a, ja, jb, ja - jb] for a, ja, jb in sk.grid])
    write_csv(out / "skiba_summary.csv", ["found", "alpha_star", "value_gap"],
              [[int(sk.found), sk.alpha_star, sk.value_gap]])
    if sk.found:
        print(f"alpha_star={fmt(sk.alpha_star)} gap={fmt(sk.value_gap)}")
    else:
        print(f"none found: {sk.message}")
    return EXIT_OK


def cmd_value(args):
    if args.point:
        pd = load_point(resolve_point(args.point))
        jca, jdisc = css_value(pd.state)
        print(f"J_ca={fmt(jca)} J={fmt(jdisc)}")
    else:
        path, system, params, _ = load_path(args.path)
        print(f"J={fmt(path_value(path, system, params))} alpha={fmt(path.alpha)} T={fmt(path.T)}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="ocpde", description="Steady states and canonical paths of PDE optimal "
                                 "control problems")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("css-cont", help="continue a branch of steady states")
    p.add_argument("--config", required=True)
    p.add_argument("--from", dest="start", help="warm-start point file")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.add_argument("--dir", type=float, default=1.0, help="initial direction in the parameter")
    p.set_defaults(func=cmd_css_cont)

    p = sub.add_parser("branch-switch", help="switch branches at a bifurcation point and continue")
    p.add_argument("--bif", required=True)
    p.add_argument("--dir", type=float, default=1.0)
    p.add_argument("--ds", type=float, default=0.05)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_branch_switch)

    p = sub.add_parser("spectral", help="spectrum, defect and suggested T at a steady state")
    p.add_argument("--point", required=True)
    p.add_argument("--out")
    p.add_argument("--c-T", dest="c_T", type=float, default=15.0)
    p.set_defaults(func=cmd_spectral)

    for name, func in (("isc-nat", cmd_isc_nat), ("isc-arc", cmd_isc_arc)):
        p = sub.add_parser(name, help="initial-state continuation of a canonical path")
        p.add_argument("--from", dest="start", required=True)
        p.add_argument("--to", required=True)
        p.add_argument("--flip", action="store_true", help="interchange start and target")
        p.add_argument("--config")
        p.add_argument("--out")
        p.add_argument("--T", type=float)
        p.add_argument("--m", type=int)
        p.add_argument("--s", type=float)
        if name == "isc-nat":
            p.add_argument("--alvin")
        else:
            p.add_argument("--steps", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("skiba", help="scan for equal-value initial states between two targets")
    p.add_argument("--from", dest="start", required=True)
    p.add_argument("--to-a", required=True)
    p.add_argument("--to-b", required=True)
    p.add_argument("--grid")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--T", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--s", type=float)
    p.set_defaults(func=cmd_skiba)

    p = sub.add_parser("value", help="objective value of a point or path file")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--point")
    g.add_argument("--path")
    p.set_defaults(func=cmd_value)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OcpdeError, FileNotFoundError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
