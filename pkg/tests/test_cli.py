import numpy as np
import pytest

from ocpde.cli import RunConfig, eval_number, main
from ocpde.errors import ConfigurationError
from ocpde.files import read_csv, save_point

INI = """
[model]
name = sloc
active = b
[params]
b = 0.55
[domain]
x_min = -2*pi/0.44
x_max = 2*pi/0.44
n_nodes = 21
[start]
P = 0.3
q = -13
[continuation]
lam_min = 0.549
lam_max = 0.8
usrlam = 0.6
max_steps = 15
[path]
T = 100
m = 20
s = 2
"""


def test_eval_number():
    assert eval_number("2*pi/0.44") == pytest.approx(2 * np.pi / 0.44)
    assert eval_number("-1e-3") == -1e-3
    for bad in ["__import__('os')", "x", "1/0", "[1]"]:
        with pytest.raises(ConfigurationError):
            eval_number(bad)


def test_config_parsing(tmp_path):
    f = tmp_path / "c.ini"
    f.write_text(INI)
    cfg = RunConfig.read(f)
    st = cfg.continuation()
    assert st.usrlam == (0.6,) and st.max_steps == 15
    isc = cfg.isc(m=40)
    assert isc.T == 100 and isc.m == 40 and isc.s == 2
    state = cfg.start_state()
    assert state.lam == 0.55 and state.system.n == 21
    f.write_text(INI + "\n[skiba]\nnope = 1\n")
    with pytest.raises(ConfigurationError):
        RunConfig.read(f).skiba()


def test_css_cont_writes_branch(tmp_path, capsys):
    f = tmp_path / "c.ini"
    f.write_text(INI)
    assert main(["css-cont", "--config", str(f), "--out", str(tmp_path / "o")]) == 0
    header, rows = read_csv(tmp_path / "o" / "branch.csv")
    assert header[:4] == ["index", "point_type", "n_unstable", "param"]
    assert any(r[1] == "user-target" for r in rows)
    assert "stop" in capsys.readouterr().out


def test_error_exit_codes(tmp_path, capsys):
    assert main(["css-cont", "--config", str(tmp_path / "none.ini")]) == 2
    f = tmp_path / "c.ini"
    f.write_text(INI.replace("name = sloc", "name = unknown"))
    assert main(["css-cont", "--config", str(f)]) == 2
    assert main(["value", "--point", str(tmp_path / "none.csv")]) == 2
    (tmp_path / "bad.csv").write_text("not a point\n")
    assert main(["branch-switch", "--bif", str(tmp_path / "bad.csv")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["no-such-command"])


def test_point_commands(tmp_path, capsys, sloc_css, sloc_p1_at_b):
    a = save_point(tmp_path / "fsc.csv", sloc_css["FSC"])
    b = save_point(tmp_path / "p1.csv", sloc_p1_at_b[0].state)
    i = save_point(tmp_path / "fsi.csv", sloc_css["FSI"])
    assert main(["spectral", "--point", str(a), "--out", str(tmp_path / "ev.csv")]) == 0
    out = capsys.readouterr().out
    assert "defect=0" in out and "spp=true" in out
    assert len(read_csv(tmp_path / "ev.csv")[1]) == sloc_css["FSC"].u.size
    assert main(["value", "--point", str(a)]) == 0
    assert "J_ca=" in capsys.readouterr().out
    rc = main(["isc-nat", "--from", str(b), "--to", str(a), "--alvin", "0.5 1", "--T", "100", "--m", "30",
               "--s", "2", "--out", str(tmp_path / "n")])
    assert rc == 0
    hdr, rows = read_csv(tmp_path / "n" / "iscnat_alpha_J.csv")
    assert [float(r[0]) for r in rows] == [0.5, 1.0]
    assert main(["value", "--path", str(tmp_path / "n" / "iscnat_last_path.csv")]) == 0
    assert "alpha=1" in capsys.readouterr().out
    rc = main(["isc-nat", "--from", str(a), "--to", str(b), "--flip", "--alvin", "0.5 1", "--T", "100",
               "--m", "30", "--s", "2", "--out", str(tmp_path / "f")])
    assert rc == 0
    assert read_csv(tmp_path / "f" / "iscnat_alpha_J.csv") == (hdr, rows)
    # a target without the saddle-point property is an error
    assert main(["isc-nat", "--from", str(b), "--to", str(i), "--T", "100"]) == 2
