import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sharpmdp.flat import SolverConfig, value_iteration
from sharpmdp.generators import (
    ArenaSpec,
    WarehouseSpec,
    complement,
    generate_arenas,
    generate_warehouse,
    wall_mask,
    warehouse_closed_form,
)
from sharpmdp.mdp import ModelError, Objective, serialize_model


def test_n2_rmin():
    m, f = generate_warehouse(WarehouseSpec(2, "nw", "rmin"))
    assert m.num_states == 4
    v = value_iteration(m, Objective.rmin(), SolverConfig(epsilon=1e-12)).values
    assert v[m.initial] == pytest.approx(2.5, abs=1e-9)


@pytest.mark.parametrize("n", [8, 64])
def test_pmax_closed_form(n):
    spec = WarehouseSpec(n, "nw", "pmax")
    m, _ = generate_warehouse(spec)
    v = value_iteration(m, Objective.pmax(), SolverConfig(epsilon=1e-12)).values
    hops = 2 * (n - 1)
    assert v[m.initial] == pytest.approx((0.9 / 0.9005) ** hops, abs=1e-8)
    assert warehouse_closed_form(spec) == pytest.approx((0.9 / 0.9005) ** hops, rel=1e-15)


@pytest.mark.parametrize("n", [3, 16, 40])
def test_rmin_closed_form(n):
    spec = WarehouseSpec(n, "nw", "rmin")
    m, _ = generate_warehouse(spec)
    v = value_iteration(m, Objective.rmin(), SolverConfig(epsilon=1e-10)).values
    assert v[m.initial] == pytest.approx(2 * (n - 1) / 0.8, abs=1e-7)


@pytest.mark.parametrize("layout", ["sw", "mw"])
def test_walls_keep_manhattan_optimum(layout):
    spec = WarehouseSpec(32, layout, "rmin")
    m, _ = generate_warehouse(spec)
    v = value_iteration(m, Objective.rmin(), SolverConfig(epsilon=1e-10)).values
    assert v[m.initial] == pytest.approx(warehouse_closed_form(spec), abs=1e-7)


def test_counts_small():
    n = 16
    m, f = generate_warehouse(WarehouseSpec(n, "nw", "rmin"))
    assert m.num_states == n * n
    # goal has one self-loop; blocked moves merge into the stay outcome
    assert m.num_choices == 4 * (n * n - 1) + 1
    m2, _ = generate_warehouse(WarehouseSpec(n, "nw", "pmax"))
    assert m2.num_states == n * n + 1
    assert m2.labels["sink"].tolist() == [n * n]
    assert f["x"][m.initial] == 0 and f["y"][m.initial] == 0


def test_transition_magnitudes_512():
    # published sizes for the open 512 grid, rounded to two decimals in millions
    counts = {}
    for variant in ("rmin", "pmax"):
        m, _ = generate_warehouse(WarehouseSpec(512, "nw", variant))
        counts[variant] = round(m.num_transitions / 1e6, 2)
    assert counts == {"rmin": 2.10, "pmax": 3.14}


def test_distributions_sum_exactly():
    for variant in ("pmax", "rmin"):
        for p in (0.9, 0.8, 0.7):
            m, _ = generate_warehouse(WarehouseSpec(12, "mw", variant, p_succ=p, p_move=p))
            sums = [math.fsum(m.probs[m.trans_ptr[r]:m.trans_ptr[r + 1]]) for r in range(m.num_choices)]
            assert all(s == 1.0 for s in sums)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(1e-4, 0.3), min_size=1, max_size=3))
def test_complement_is_exact(ps):
    c = complement(*ps)
    assert math.fsum(ps + [c]) == 1.0


def test_actions_move_as_named():
    m, f = generate_warehouse(WarehouseSpec(5, "nw", "rmin"))
    s = m.initial
    up = m.distribution(m.choice_row(s, 0))[0]
    right = m.distribution(m.choice_row(s, 3))[0]
    moved_up = [t for t in up.tolist() if t != s][0]
    moved_right = [t for t in right.tolist() if t != s][0]
    assert (f["x"][moved_up], f["y"][moved_up]) == (0, 1)
    assert (f["x"][moved_right], f["y"][moved_right]) == (1, 0)
    assert m.action_names[0] == "up"


def test_goal_and_sink_absorbing():
    m, _ = generate_warehouse(WarehouseSpec(6, "sw", "pmax"))
    assert m.absorbing[m.labels["goal"]].all()
    assert m.absorbing[m.labels["sink"]].all()
    assert m.absorbing.sum() == 2


def test_randmw_reproducible():
    a = serialize_model(generate_warehouse(WarehouseSpec(24, "randmw", "rmin", seed=7, wall_count=6))[0])
    b = serialize_model(generate_warehouse(WarehouseSpec(24, "randmw", "rmin", seed=7, wall_count=6))[0])
    c = serialize_model(generate_warehouse(WarehouseSpec(24, "randmw", "rmin", seed=8, wall_count=6))[0])
    assert a == b and a != c


@pytest.mark.parametrize("seed", range(10))
def test_walls_never_disconnect(seed):
    spec = WarehouseSpec(20, "randmw", "rmin", seed=seed, wall_count=8)
    walls = wall_mask(spec)
    assert not walls[0, 0] and not walls[-1, -1]
    m, _ = generate_warehouse(spec)
    v = value_iteration(m, Objective.rmin()).values
    assert np.isfinite(v).all()


def test_disconnecting_layout_rejected():
    shelves = tuple((x, 2) for x in range(6))
    with pytest.raises(ModelError):
        generate_warehouse(WarehouseSpec(6, "custom", "rmin", shelves=shelves))


def test_spec_validation():
    with pytest.raises(ValueError):
        WarehouseSpec(1)
    with pytest.raises(ValueError):
        WarehouseSpec(8, variant="pmax", p_succ=0.9, p_fail=0.2)
    with pytest.raises(ValueError):
        WarehouseSpec(8, variant="rmin", p_move=0.0)
    with pytest.raises(ValueError):
        ArenaSpec(0, 4)
    with pytest.raises(ValueError):
        ArenaSpec(2, 1)


def test_arena_minimal():
    m, f = generate_arenas(ArenaSpec(1, 2))
    assert m.num_states == 3
    assert m.labels["finished"].tolist() == [2]
    assert f["arena"].tolist() == [0, 0, 1]
    assert (m.costs[m.choice_state != 2] == 1).all()


def test_arena_counter_monotone_along_paths():
    m, f = generate_arenas(ArenaSpec(2, 3, seed=1))
    arena = f["arena"]
    assert (arena[m.targets] >= arena[m.transition_source]).all()


def test_arena_solvable():
    m, _ = generate_arenas(ArenaSpec(3, 10, seed=2))
    v = value_iteration(m, Objective.rmin("finished")).values
    assert np.isfinite(v).all() and v[m.initial] > 0
