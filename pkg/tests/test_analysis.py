import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import corner_x_spins, make_record
from ugdyn.analysis import (TRANSIENT, UndefinedExponent, check_delta_grid, clause_series,
                            episodes, ergodicity_diagnostics, exponent_order_key, fit_beta,
                            fsle, fsle_to_csv, mle_lower_bound, read_table, residency,
                            residency_from_series, ResidencySeries, scaling_exponent_f,
                            vicinity_episode_labels)
from ugdyn.cnf import encode
from ugdyn.dynamics import DynamicsConfig, integrate
from ugdyn.exceptions import InvalidInputError
from ugdyn.instance import TwoLinInstance, generate_polygon_instance, satisfied_count


def find_assignment(instance, count):
    for x in itertools.product(range(instance.k), repeat=instance.n_x):
        if satisfied_count(instance, x) == count:
            return x
    raise AssertionError("no such assignment")


def test_vicinity_examples(three_cycle):
    f = encode(three_cycle)
    corner = corner_x_spins((0, 1, 0), 2)
    bumped = corner.copy()
    bumped[0] -= 0.05
    rec = make_record(three_cycle, [0, 1, 2], [corner, np.zeros(6), bumped])
    lab = vicinity_episode_labels(rec, f, three_cycle)
    assert lab.inside.tolist() == [True, False, True]
    assert lab.distance[0] == 0.0
    assert lab.distance[1] == pytest.approx(3 * 2)  # (k-1)*1 + 1 per block
    assert lab.distance[2] == pytest.approx(0.05)
    assert lab.assignment_id[1] == TRANSIENT
    assert lab.assignment_id[0] == lab.assignment_id[2]
    with pytest.raises(InvalidInputError):
        vicinity_episode_labels(rec, f, three_cycle, radius=0)


def test_per_spin_norm(three_cycle):
    f = encode(three_cycle)
    xs = corner_x_spins((0, 1, 0), 2)
    xs[:2] = [0.5, -0.5]  # block 0 off by 1.0 in total
    rec = make_record(three_cycle, [0, 1], [xs, xs])
    assert not vicinity_episode_labels(rec, f, three_cycle, 0.1).inside.any()
    lab = vicinity_episode_labels(rec, f, three_cycle, 0.2, "per_spin")
    assert lab.inside.all() and lab.distance[0] == pytest.approx(1.0 / 6)


@pytest.fixture
def cycle3():
    # x0 - x1 = 1 and x1 - x2 = 1 force x0 - x2 = 2, so at most 2 of 3 hold
    return TwoLinInstance(3, 3, ((0, 1, 1), (1, 2, 1), (0, 2, 1)))


def synthetic_record(inst):
    """3 units at a 2/3 corner, 1 unit at a 1/3 corner, 6 units transient."""
    two = corner_x_spins(find_assignment(inst, 2), 3)
    one = corner_x_spins(find_assignment(inst, 1), 3)
    rows = [two] * 3 + [one] + [np.zeros(9)] * 7
    return make_record(inst, np.arange(11.0), rows)


def test_residency_hand_example(cycle3):
    f = encode(cycle3)
    tab = residency(synthetic_record(cycle3), f, cycle3, [1 / 3, 2 / 3, 0.9])
    assert np.allclose(tab.y_values, [1.0, 0.75, 0.0])
    assert tab.vicinity_time == 4 and tab.transient_time == 6 and tab.total_time == 10
    assert np.allclose(tab.y_values_total, [0.4, 0.3, 0.0])
    assert not tab.is_empty and tab.ensemble_size == 1


def test_residency_pinned_solution(consistent_cycle):
    f = encode(consistent_cycle)
    xs = corner_x_spins((1, 0, 1), 2)
    rec = make_record(consistent_cycle, np.arange(5.0), [xs] * 5)
    tab = residency(rec, f, consistent_cycle, [0.25, 0.5, 1.0])
    assert np.all(tab.y_values == 1.0)


def test_residency_empty_is_not_an_error(three_cycle):
    f = encode(three_cycle)
    rec = make_record(three_cycle, np.arange(4.0), [np.zeros(6)] * 4)
    tab = residency(rec, f, three_cycle, [0.5])
    assert tab.is_empty and np.isnan(tab.y_values).all()
    assert tab.transient_time == tab.total_time == 3


def test_residency_burn_in(cycle3):
    f = encode(cycle3)
    tab = residency(synthetic_record(cycle3), f, cycle3, [1 / 3, 2 / 3], burn_in=3)
    assert np.allclose(tab.y_values, [1.0, 0.0])
    assert tab.total_time == 7


def test_delta_grid_validation():
    for bad in ([], [0.0, 0.5], [0.5, 0.4], [1.2]):
        with pytest.raises(InvalidInputError):
            check_delta_grid(bad)


@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40),
       st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8, unique=True))
@settings(max_examples=80, deadline=None)
def test_residency_invariants(samples, deltas):
    deltas = sorted(deltas)
    counts = np.array([c for c, _ in samples])
    inside = np.array([i for _, i in samples])
    t = np.cumsum(np.r_[0, np.random.default_rng(len(samples)).uniform(0.1, 1, len(samples) - 1)])
    tab = residency_from_series(ResidencySeries(t, counts, inside), 6, deltas, 0.1)
    assert tab.vicinity_time + tab.transient_time == pytest.approx(tab.total_time)
    if not tab.is_empty:
        y = tab.y_values
        assert np.all(np.diff(y) <= 1e-12)
        assert np.all((y >= 0) & (y <= 1))
        # nothing above the best visited count
        best = counts[:-1][inside[:-1]].max() if inside[:-1].any() else -1
        assert np.all(y[np.asarray(deltas) * 6 > best + 1e-9] == 0)


def test_scaling_exponent_identities():
    assert scaling_exponent_f(math.exp(-11), 11) == pytest.approx(1.0)
    assert scaling_exponent_f(math.exp(-121), 11) == pytest.approx(2.0)
    assert scaling_exponent_f(math.exp(-math.sqrt(11)), 11) == pytest.approx(0.5)
    und = scaling_exponent_f(0.5, 11)
    assert isinstance(und, UndefinedExponent) and und.raw == pytest.approx(math.log(2))
    assert math.isnan(float(und))
    assert isinstance(scaling_exponent_f(0.0, 11), UndefinedExponent)
    with pytest.raises(InvalidInputError):
        scaling_exponent_f(1.5, 11)


def test_exponent_order_key_monotone():
    ys = [1.0, 0.5, 1e-3, 1e-9, 0.0]
    keys = [exponent_order_key(y) for y in ys]
    assert keys == sorted(keys)


def test_fit_beta_recovers_synthetic():
    n = np.array([6, 8, 10, 12])
    beta, f = 2.0, 0.7
    y = np.exp(np.log(beta) - n**f)
    b_hat, f_hat = fit_beta(n, y)
    assert b_hat == pytest.approx(beta, rel=1e-3) and f_hat == pytest.approx(f, abs=1e-3)
    with pytest.raises(InvalidInputError):
        fit_beta([8, 8], [0.1, 0.2])


def test_clause_bound_constant_record(three_cycle):
    # K = 0.25 on a binary clause at s = 0
    f = encode(three_cycle)
    rec = make_record(three_cycle, np.arange(5.0), [np.zeros(6)] * 5)
    assert np.allclose(clause_series(rec, f, 0), 0.25)
    assert mle_lower_bound(rec, f, 2.0, 0) == pytest.approx(0.0625)
    # witness spins are not stored in an x-only record
    with pytest.raises(InvalidInputError):
        clause_series(rec, f, f.or_clause(0))


def test_clause_bound_dynamics():
    sat = generate_polygon_instance(4, 2, 0, seed=0)
    f = encode(sat)
    short = integrate(f, DynamicsConfig(seed=0, t_end=100, store="full"))
    long = integrate(f, DynamicsConfig(seed=0, t_end=400, store="full"))
    g = f.or_clause(0)
    assert mle_lower_bound(long, f, 2.0, g) < mle_lower_bound(short, f, 2.0, g)
    unsat = generate_polygon_instance(4, 2, 1, seed=0)
    fu = encode(unsat)
    rec = integrate(fu, DynamicsConfig(seed=0, t_end=200, store="full"))
    bad = [q for q in range(unsat.n_eq) if unsat.eq_array[q, 2] != 0][0]
    assert mle_lower_bound(rec, fu, 1.0, fu.or_clause(bad)) > 0


def test_episodes_and_ergodicity(cycle3):
    f = encode(cycle3)
    rec = synthetic_record(cycle3)
    eps = episodes(vicinity_episode_labels(rec, f, cycle3), rec.t)
    assert [e.duration for e in eps] == [3.0, 1.0, 6.0]
    summary = ergodicity_diagnostics(rec, f, cycle3)
    assert summary.n_distinct == 2 and summary.max_dwell == 3.0 and summary.recurrence_count == 1


def test_ergodicity_sat_fixed_point():
    inst = generate_polygon_instance(4, 2, 0, seed=0)
    f = encode(inst)
    rec = integrate(f, DynamicsConfig(seed=1, t_end=200))
    s = ergodicity_diagnostics(rec, f, inst)
    assert s.n_distinct == 1
    assert s.max_dwell > 150


def test_ergodicity_unsat_cycle(three_cycle):
    f = encode(three_cycle)
    short = integrate(f, DynamicsConfig(seed=0, t_end=300))
    long = integrate(f, DynamicsConfig(seed=0, t_end=600))
    a = ergodicity_diagnostics(short, f, three_cycle, 0.2, "per_spin").n_distinct
    b = ergodicity_diagnostics(long, f, three_cycle, 0.2, "per_spin").n_distinct
    assert b >= 2 and b >= a


def test_fsle_converged_sat():
    inst = generate_polygon_instance(4, 2, 0, seed=0)
    est = fsle(encode(inst), DynamicsConfig(), seed=1, n_segments=3)
    assert est.converged and est.lambda_mean <= 0


def test_fsle_unsat_positive_and_reproducible():
    inst = generate_polygon_instance(5, 3, 1, seed=11)
    f = encode(inst)
    cfg = DynamicsConfig(alpha=1.0)
    a = fsle(f, cfg, seed=3, n_segments=3)
    b = fsle(f, cfg, seed=3, n_segments=3)
    assert np.array_equal(a.rates, b.rates)
    assert a.lambda_mean > 0 and not a.converged
    text = fsle_to_csv([a])
    meta, cols, rows = read_table(text)
    assert cols[0] == "alpha" and float(rows[0][1]) == pytest.approx(a.lambda_mean)


def test_fsle_validation(three_cycle):
    f = encode(three_cycle)
    with pytest.raises(InvalidInputError):
        fsle(f, DynamicsConfig(), delta0=1e-3, delta1=1e-4)
    with pytest.raises(InvalidInputError):
        fsle(f, DynamicsConfig(), n_segments=0)
