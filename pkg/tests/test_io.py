import numpy as np
import pytest

from ugdyn.analysis import read_table, residency, write_table
from ugdyn.cnf import encode
from ugdyn.dynamics import DynamicsConfig, integrate
from ugdyn.exceptions import InvalidInputError, ParseError
from ugdyn.instance import generate_polygon_instance
from ugdyn.io import load_state, read_trajectory_csv, save_state, write_trajectory_csv


@pytest.fixture(scope="module")
def run():
    inst = generate_polygon_instance(4, 3, 1, seed=4)
    f = encode(inst)
    return inst, f, integrate(f, DynamicsConfig(seed=2, t_end=60))


def test_trajectory_round_trip(tmp_path, run):
    inst, f, rec = run
    path = tmp_path / "traj.csv"
    write_trajectory_csv(rec, f, inst, path, decoded=True)
    tab = read_trajectory_csv(path)
    assert tab.meta["instance_hash"] == inst.content_hash()
    for key in ("vicinity_space", "y_denominator", "version", "config.alpha"):
        assert key in tab.meta
    assert np.allclose(tab.columns["t"], rec.t)
    assert np.array_equal(tab.columns["sat_count"], rec.sat_count)
    assert np.array_equal(tab.columns["x0"], rec.decoded[:, 0])
    assert np.all(np.diff(tab.columns["t"]) > 0)
    # the table reproduces the in-memory residency under both conventions
    deltas = [0.25, 0.5, 0.75, 1.0]
    from ugdyn.analysis import residency_from_series

    for radius, norm in [(0.1, "total"), (0.2, "per_spin"), (1.0, "total")]:
        direct = residency(rec, f, inst, deltas, radius, norm=norm)
        again = residency_from_series(tab.series(radius, norm), inst.n_eq, deltas, radius)
        assert np.allclose(direct.y_values, again.y_values, equal_nan=True)
        assert direct.vicinity_time == pytest.approx(again.vicinity_time)


def test_stored_labels_match(run):
    inst, f, rec = run
    text = write_trajectory_csv(rec, f, inst, None, radius=0.2, norm="per_spin")
    tab = read_trajectory_csv(text)
    assert np.array_equal(tab.series().inside, tab.series(0.2, "per_spin").inside)


def test_not_a_trajectory(tmp_path):
    p = tmp_path / "x.csv"
    write_table(p, ["a", "b"], [(1, 2)])
    with pytest.raises(ParseError):
        read_trajectory_csv(p)
    with pytest.raises(InvalidInputError):
        read_table("# only=header\n\n")


def test_state_dump(tmp_path, run):
    _, _, rec = run
    p = tmp_path / "state.npz"
    save_state(p, rec.final_state, {"note": "x"})
    state, meta = load_state(p)
    assert np.array_equal(state.s, rec.final_state.s)
    assert np.array_equal(state.log_a, rec.final_state.log_a)
    assert state.t == rec.final_state.t and meta == {"note": "x"}


def test_table_header_round_trip(tmp_path):
    text = write_table(None, ["x"], [(0.1,), (True,)], {"beta": 1.0})
    meta, cols, rows = read_table(text)
    assert meta["beta"] == "1.0" and meta["tool"] == "ugdyn"
    assert rows == [["0.1"], ["1"]]
