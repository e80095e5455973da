import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ugdyn.exceptions import CapacityError, InvalidInputError, ParseError
from ugdyn.instance import (TwoLinInstance, brute_force_optimum, equation_satisfied,
                            format_instance, generate_polygon_instance, max_satisfied,
                            parse_instance, read_instance, satisfied_count, satisfied_counts,
                            write_instance)


def oracle_count(instance, x):
    # plain loop over the equations
    return sum(1 for e in instance.equations if x[e.i] == (x[e.j] + e.b) % instance.k)


def oracle_optimum(instance):
    return max(oracle_count(instance, x)
               for x in itertools.product(range(instance.k), repeat=instance.n_x))


@st.composite
def instances(draw, max_nx=4, max_k=4, max_eq=6):
    k = draw(st.integers(2, max_k))
    n_x = draw(st.integers(2, max_nx))
    n_eq = draw(st.integers(n_x - 1, max_eq))
    pairs = [(i, j) for i in range(n_x) for j in range(n_x) if i != j]
    eqs = [(*draw(st.sampled_from(pairs)), draw(st.integers(0, k - 1))) for _ in range(n_eq)]
    # a spanning path keeps every variable in use
    eqs[: n_x - 1] = [(i, i + 1, draw(st.integers(0, k - 1))) for i in range(n_x - 1)]
    return TwoLinInstance(k, n_x, tuple(eqs))


def test_three_cycle_count(three_cycle):
    assert satisfied_count(three_cycle, (0, 1, 0)) == 2


def test_zero_satisfying_assignment():
    inst = TwoLinInstance(3, 3, ((0, 1, 0), (1, 2, 0), (0, 2, 1)))
    zero = [x for x in itertools.product(range(3), repeat=3) if oracle_count(inst, x) == 0]
    assert zero
    assert satisfied_count(inst, zero[0]) == 0


@pytest.mark.parametrize("c", [0, 1, 2, 3])
def test_identity_shift(c):
    inst = TwoLinInstance(4, 2, ((0, 1, 0),))
    assert satisfied_count(inst, (c, c)) == 1


def test_bad_assignment_shape(three_cycle):
    with pytest.raises(InvalidInputError):
        satisfied_count(three_cycle, (0, 1))
    with pytest.raises(InvalidInputError):
        satisfied_count(three_cycle, (0, 1, 2))


def test_invalid_instances():
    with pytest.raises(InvalidInputError):
        TwoLinInstance(2, 3, ((0, 1, 2),))
    with pytest.raises(InvalidInputError):
        TwoLinInstance(2, 3, ((0, 0, 1), (1, 2, 0)))
    with pytest.raises(InvalidInputError):
        TwoLinInstance(2, 3, ((0, 1, 1),))  # x2 unused
    with pytest.raises(InvalidInputError):
        TwoLinInstance(1, 3, ((0, 1, 0),))


@given(instances())
@settings(max_examples=60, deadline=None)
def test_counts_match_oracle(inst):
    rng = np.random.default_rng(0)
    xs = rng.integers(0, inst.k, size=(8, inst.n_x))
    assert satisfied_counts(inst, xs).tolist() == [oracle_count(inst, x) for x in xs]
    assert equation_satisfied(inst, xs[0]).sum() == oracle_count(inst, xs[0])


def test_brute_force_examples(three_cycle, consistent_cycle):
    x, frac = brute_force_optimum(three_cycle)
    assert frac == Fraction(2, 3)
    assert satisfied_count(three_cycle, x) == 2
    x, frac = brute_force_optimum(consistent_cycle)
    assert frac == 1
    assert satisfied_count(consistent_cycle, (1, 0, 1)) == 3
    one = TwoLinInstance(5, 2, ((1, 0, 3),))
    assert brute_force_optimum(one)[1] == 1


def test_brute_force_tie_break_is_lexicographic(three_cycle):
    best = [x for x in itertools.product(range(2), repeat=3) if oracle_count(three_cycle, x) == 2]
    assert tuple(brute_force_optimum(three_cycle)[0]) == min(best)


def test_brute_force_budget(three_cycle):
    with pytest.raises(CapacityError, match="bound=7"):
        brute_force_optimum(three_cycle, budget=7)


@given(instances())
@settings(max_examples=60, deadline=None)
def test_optimum_matches_oracle(inst):
    best = oracle_optimum(inst)
    assert brute_force_optimum(inst)[1] == Fraction(best, inst.n_eq)
    assert max_satisfied(inst) == best


def test_generator_spec_example():
    for seed in range(5):
        inst = generate_polygon_instance(3, 2, 1, seed=seed)
        assert inst.n_eq == 3
        assert inst.designed_opt == Fraction(2, 3)
        assert brute_force_optimum(inst)[1] == Fraction(2, 3)


def test_generator_sat_reference():
    inst = generate_polygon_instance(5, 4, 0, seed=3)
    x, frac = brute_force_optimum(inst)
    assert frac == 1
    assert satisfied_count(inst, inst.reference) == inst.n_eq


def test_generator_deterministic():
    a = generate_polygon_instance(6, 3, 2, seed=42)
    b = generate_polygon_instance(6, 3, 2, seed=42)
    assert a == b and format_instance(a) == format_instance(b)
    assert a != generate_polygon_instance(6, 3, 2, seed=43)


@pytest.mark.parametrize("n_x,k,u,seed", [(5, 3, 2, 1), (6, 2, 3, 2), (6, 4, 4, 3), (4, 4, 2, 4)])
def test_generator_certified_optimum(n_x, k, u, seed):
    inst = generate_polygon_instance(n_x, k, u, seed=seed)
    assert inst.certificate in ("path", "cut", "exact")
    assert max_satisfied(inst) == inst.n_eq - u
    assert satisfied_count(inst, inst.reference) == inst.n_eq - u


def test_generator_infeasible():
    with pytest.raises(InvalidInputError):
        generate_polygon_instance(3, 2, 2)
    with pytest.raises(InvalidInputError):
        generate_polygon_instance(4, 3, 1, n_eq=10)
    with pytest.raises(InvalidInputError):
        generate_polygon_instance(2, 3, 0)


def test_round_trip(tmp_path, three_cycle):
    p = tmp_path / "c.2link"
    write_instance(three_cycle, p)
    assert read_instance(p) == three_cycle
    inst = generate_polygon_instance(6, 3, 2, seed=1)
    assert parse_instance(format_instance(inst)) == inst


@given(instances())
@settings(max_examples=40, deadline=None)
def test_round_trip_property(inst):
    assert parse_instance(format_instance(inst)) == inst


@pytest.mark.parametrize("text,line", [
    ("p 2link 2 3 3\ne 0 1 1\ne 1 2 1\n", 3),
    ("p 2link 2 3 1\ne 0 0 1\n", 2),
    ("p 2link 2 3 1\ne 0 5 1\n", 2),
    ("p 2link 2 3 1\ne 0 1 2\n", 2),
    ("p 2link 2 x 1\n", 1),
    ("e 0 1 1\n", 1),
    ("q 1\n", 1),
])
def test_parse_errors(text, line):
    with pytest.raises(ParseError) as err:
        parse_instance(text)
    assert err.value.line == line


def test_parse_missing_header():
    with pytest.raises(ParseError):
        parse_instance("# nothing\n")
