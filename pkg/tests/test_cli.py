import json
import subprocess
import sys

import numpy as np
import pytest

from ugdyn.analysis import read_table
from ugdyn.cli import main
from ugdyn.instance import read_instance


@pytest.fixture
def inst_file(tmp_path):
    p = tmp_path / "inst.2link"
    assert main(["gen", "--k", "2", "--nx", "3", "--unsat", "1", "--seed", "7", "-o", str(p)]) == 0
    return p


def test_gen_encode_header(tmp_path, inst_file):
    cnf = tmp_path / "inst.cnf"
    assert main(["encode", "-i", str(inst_file), "-o", str(cnf)]) == 0
    header = [ln for ln in cnf.read_text().splitlines() if ln.startswith("p ")]
    assert header == ["p cnf 12 18"]
    assert read_instance(inst_file).n_eq == 3


def test_simulate_and_analyze(tmp_path, inst_file):
    traj = tmp_path / "traj.csv"
    assert main(["simulate", "-i", str(inst_file), "--alpha", "2", "--tmax", "600",
                 "--seed", "1", "-o", str(traj)]) == 0
    meta, cols, rows = read_table(traj)
    t = np.array([float(r[0]) for r in rows])
    assert np.all(np.diff(t) > 0) and t[-1] == pytest.approx(600)
    assert meta["config.seed"] == "1" and "instance_hash" in meta
    y = tmp_path / "y.csv"
    assert main(["analyze", "-i", str(traj), "--deltas", "0.33,0.66", "-o", str(y)]) == 0
    meta, cols, rows = read_table(y)
    vals = [float(r[cols.index("Y")]) for r in rows]
    if meta["empty"] == "1":
        # literal radius-0.1 ball never reached; the empty result is flagged, not an error
        assert all(np.isnan(vals))
    else:
        assert vals[0] >= vals[1]
    # the same trajectory re-thresholded with the per-spin ball
    assert main(["analyze", "-i", str(traj), "--deltas", "0.33,0.66", "--radius", "0.2",
                 "--norm", "per_spin", "-o", str(y)]) == 0
    meta, cols, rows = read_table(y)
    vals = [float(r[cols.index("Y")]) for r in rows]
    assert meta["empty"] == "0" and vals[0] >= vals[1]


def test_state_restart(tmp_path, inst_file):
    state = tmp_path / "s.npz"
    assert main(["simulate", "-i", str(inst_file), "--tmax", "5", "--seed", "1",
                 "--state-out", str(state), "-o", str(tmp_path / "a.csv")]) == 0
    assert main(["simulate", "-i", str(inst_file), "--tmax", "10", "--state-in", str(state),
                 "-o", str(tmp_path / "b.csv")]) == 0
    _, _, rows = read_table(tmp_path / "b.csv")
    assert float(rows[0][0]) == pytest.approx(5.0)


def test_config_file_overridden_by_flags(tmp_path, inst_file):
    cfg = tmp_path / "run.conf"
    cfg.write_text("# run settings\ntmax = 3\nseed = 4\nalpha = 1.5\n")
    out = tmp_path / "t.csv"
    assert main(["simulate", "-i", str(inst_file), "--config", str(cfg), "--seed", "9",
                 "-o", str(out)]) == 0
    meta, _, rows = read_table(out)
    assert meta["config.seed"] == "9" and meta["config.alpha"] == "1.5"
    assert float(rows[-1][0]) == pytest.approx(3.0)
    cfg.write_text(json.dumps({"tmax": 2}))
    assert main(["simulate", "-i", str(inst_file), "--config", str(cfg), "-o", str(out)]) == 0


def test_input_errors(tmp_path, capsys):
    bad = tmp_path / "bad.2link"
    bad.write_text("p 2link 2 3 1\ne 0 0 1\n")
    assert main(["encode", "-i", str(bad)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("ugdyn-error code=2 type=ParseError") and "line 2" in err
    assert main(["encode", "-i", str(tmp_path / "missing")]) == 2
    assert main(["gen", "--k", "2", "--nx", "3", "--unsat", "5"]) == 2
    cfg = tmp_path / "c.conf"
    cfg.write_text("nonsense = 1\n")
    assert main(["gen", "--k", "2", "--nx", "3", "--config", str(cfg)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2


def test_numerical_failure_exit_code(tmp_path, inst_file, monkeypatch, capsys):
    from ugdyn import cli
    from ugdyn.exceptions import StiffnessError

    def boom(*a, **k):
        raise StiffnessError(12.0, 40.0)

    monkeypatch.setattr(cli, "integrate", boom)
    assert main(["simulate", "-i", str(inst_file), "-o", str(tmp_path / "x.csv")]) == 3
    assert "type=StiffnessError" in capsys.readouterr().err


def test_sweep_cli_and_partial(tmp_path, monkeypatch):
    args = ["sweep", "--k-list", "2", "--eps-list", "0.2", "--nx", "4", "--neq", "5",
            "--ensemble", "2", "--tmax", "10", "--deltas", "0.5,1.0"]
    assert main(args + ["-o", str(tmp_path / "ok")]) == 0
    man = json.loads((tmp_path / "ok" / "manifest.json").read_text())
    assert man["config"]["n_x"] == 4
    from ugdyn import sweep
    from ugdyn.exceptions import StiffnessError

    def boom(*a, **k):
        raise StiffnessError(1.0, 30.0)

    monkeypatch.setattr(sweep, "integrate", boom)
    assert main(args + ["-o", str(tmp_path / "bad")]) == 4


def test_fsle_cli(tmp_path, inst_file):
    out = tmp_path / "f.csv"
    assert main(["fsle", "-i", str(inst_file), "--alphas", "1,2", "--seeds", "1",
                 "--segments", "1", "--warmup", "10", "-o", str(out)]) == 0
    meta, cols, rows = read_table(out)
    assert [float(r[0]) for r in rows] == [1.0, 2.0]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ugdyn", "encode", "-i", str(tmp_path / "nope")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert proc.stderr.startswith("ugdyn-error code=2")
