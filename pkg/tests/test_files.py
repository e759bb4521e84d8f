import numpy as np
import pytest

from ocpde.errors import FileFormatError
from ocpde.files import (fmt, load_path, load_point, read_csv, resolve_point, save_path, save_point,
                         write_csv)
from ocpde.tbvp import constant_path, make_graded_mesh


def test_fmt_round_trips_doubles():
    rng = np.random.default_rng(7)
    x = np.concatenate([rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200), [np.pi, 1 / 3]])
    assert all(float(fmt(v)) == v for v in x)
    assert fmt(3) == "3"


def test_point_round_trip_with_tangent(tmp_path, sloc_css):
    s = sloc_css["FSM"]
    tan = (np.linspace(-1, 1, s.u.size) / 7.0, 0.123456789)
    f = save_point(tmp_path / "a.csv", s, point_type="fold", n_unstable=4, j_ca=-1.5, tangent=tan)
    pd = load_point(f)
    assert np.array_equal(pd.state.u, s.u) and np.array_equal(pd.state.params, s.params)
    assert pd.state.active_param == s.active_param
    assert np.array_equal(pd.tangent[0], tan[0]) and pd.tangent[1] == tan[1]
    assert pd.point_type == "fold" and pd.n_unstable == 4 and pd.j_ca == -1.5


def test_stale_point_is_rejected(tmp_path, sloc_css):
    s = sloc_css["FSC"]
    f = save_point(tmp_path / "a.csv", s.with_u(s.u * 1.01))
    with pytest.raises(FileFormatError):
        load_point(f)
    assert load_point(f, check=False).state.u.size == s.u.size


def test_wrong_kind_of_file(tmp_path, sloc_css):
    s = sloc_css["FSC"]
    p = constant_path(s.u, make_graded_mesh(10.0, 4))
    f = save_path(tmp_path / "p.csv", p, s.system, s.params)
    with pytest.raises(FileFormatError):
        load_point(f)
    g = save_point(tmp_path / "q.csv", s)
    with pytest.raises(FileFormatError):
        load_path(g)
    bad = tmp_path / "bad.csv"
    bad.write_text("# ocpde-point 1\n# params = 1\nx,P\n1,abc\n")
    with pytest.raises(FileFormatError):
        load_point(bad)
    with pytest.raises(FileNotFoundError):
        load_point(tmp_path / "missing.csv")


def test_csv_and_resolution(tmp_path):
    f = write_csv(tmp_path / "sub" / "t.csv", ["a", "b"], [[1.0 / 3, "x"], [2, 1e-300]])
    header, rows = read_csv(f)
    assert header == ["a", "b"] and float(rows[0][0]) == 1.0 / 3 and rows[1][0] == "2"
    assert resolve_point(tmp_path / "sub" / "t") == f
