import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_mdp
from sharpmdp.flat import (
    NO_ACTION,
    Method,
    SolverConfig,
    bellman_backup,
    extract_policy,
    pin_states,
    value_iteration,
)
from sharpmdp.generators import WarehouseSpec, generate_warehouse
from sharpmdp.mdp import INFINITY, Mdp, ModelError, Objective
from sharpmdp.oracle import evaluate_policy


def chain3():
    # s0 -> s1 -> s2 (goal); each move advances w.p. 0.8, else stays
    return Mdp.from_lists(3, 0, [[(0, {0: 0.2, 1: 0.8})], [(0, {1: 0.2, 2: 0.8})], [(0, {2: 1.0})]],
                          costs={(0, 0): 1.0, (1, 0): 1.0}, labels={"goal": [2]})


def test_backup_one_step_goal():
    m = Mdp.from_lists(2, 0, [[(0, {1: 1.0})], [(0, {1: 1.0})]], labels={"goal": [1]})
    assert bellman_backup(m, Objective.pmax(), np.array([0.0, 1.0]), 0) == (1.0, 0)


def test_backup_dominated_action():
    m = Mdp.from_lists(2, 0, [[(0, {1: 1.0}), (1, {1: 1.0})], [(0, {1: 1.0})]],
                       costs={(0, 0): 1.0, (0, 1): 2.0}, labels={"goal": [1]})
    assert bellman_backup(m, Objective.rmin(), np.zeros(2), 0) == (1.0, 0)


def test_backup_hand_sum():
    m = Mdp.from_lists(2, 0, [[(0, {0: 0.2, 1: 0.8})], [(0, {1: 1.0})]], labels={"goal": [1]})
    v, a = bellman_backup(m, Objective.pmax(), np.array([0.0, 1.0]), 0)
    assert v == pytest.approx(0.8) and a == 0


def test_backup_infinite_successor():
    m = Mdp.from_lists(3, 0, [[(0, {1: 1.0}), (1, {2: 1.0})], [(0, {1: 1.0})], [(0, {2: 1.0})]],
                       costs={(0, 0): 1.0, (0, 1): 5.0}, labels={"goal": [2]})
    v, a = bellman_backup(m, Objective.rmin(), np.array([0.0, INFINITY, 0.0]), 0)
    assert (v, a) == (5.0, 1)


def test_initial_goal():
    m = Mdp.from_lists(1, 0, [[(0, {0: 1.0})]], labels={"goal": [0]})
    res = value_iteration(m, Objective.pmax())
    assert res.values[0] == 1.0 and res.iterations == 0 and res.converged


def test_chain_closed_form():
    values, policy, _ = value_iteration(chain3(), Objective.rmin(), SolverConfig(epsilon=1e-12))
    assert values[0] == pytest.approx(2.5, abs=1e-10)
    assert values[1] == pytest.approx(1.25, abs=1e-10)
    assert policy.tolist() == [0, 0, NO_ACTION]


def test_gauss_seidel_agrees():
    m = chain3()
    a = value_iteration(m, Objective.rmin())
    b = value_iteration(m, Objective.rmin(), SolverConfig(method=Method.GAUSS_SEIDEL))
    assert np.abs(a.values - b.values).max() <= 2e-6


@pytest.mark.parametrize("layout", ["nw", "sw", "mw", "randmw"])
@pytest.mark.parametrize("variant", ["pmax", "rmin"])
def test_gs_and_vi_agree_on_warehouses(layout, variant):
    m, _ = generate_warehouse(WarehouseSpec(24, layout, variant, seed=3))
    obj = Objective.parse(variant)
    a = value_iteration(m, obj, SolverConfig(check_monotone=True))
    b = value_iteration(m, obj, SolverConfig(method=Method.GAUSS_SEIDEL, check_monotone=True))
    assert a.converged and b.converged
    assert np.abs(a.values - b.values).max() <= 2 * 1e-6
    if variant == "pmax":
        assert a.values.min() >= 0 and a.values.max() <= 1


def test_max_iterations_flags_non_convergence():
    res = value_iteration(chain3(), Objective.rmin(), SolverConfig(max_iterations=3))
    assert not res.converged and res.iterations == 3


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(epsilon=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)


def test_rmin_improper_states_get_infinity():
    m = Mdp.from_lists(3, 0, [[(0, {1: 0.5, 2: 0.5})], [(0, {1: 1.0})], [(0, {2: 1.0})]],
                       costs={(0, 0): 1.0, (1, 0): 1.0}, labels={"goal": [2]})
    res = value_iteration(m, Objective.rmin())
    assert np.isinf(res.values[:2]).all() and res.values[2] == 0
    assert res.warnings and res.policy[:2].tolist() == [NO_ACTION, NO_ACTION]


def test_precomputation_pins_prob0():
    m, _ = generate_warehouse(WarehouseSpec(6, "nw", "pmax"))
    pins = pin_states(m, Objective.pmax(), use_precomputation=True)
    assert pins.pinned[m.labels["sink"]].all()
    a = value_iteration(m, Objective.pmax(), SolverConfig(use_precomputation=True))
    b = value_iteration(m, Objective.pmax())
    assert np.abs(a.values - b.values).max() < 1e-6


def test_policy_points_into_goal():
    m = Mdp.from_lists(2, 0, [[(0, {0: 1.0}), (1, {1: 1.0})], [(0, {1: 1.0})]], labels={"goal": [1]})
    v = np.array([0.0, 1.0])
    assert extract_policy(m, Objective.pmax(), v).tolist() == [1, NO_ACTION]


def test_policy_tie_lowest_action():
    m = Mdp.from_lists(2, 0, [[(2, {1: 1.0}), (5, {1: 1.0})], [(0, {1: 1.0})]], labels={"goal": [1]})
    assert extract_policy(m, Objective.pmax(), np.array([1.0, 1.0]))[0] == 2


@pytest.mark.parametrize("seed", range(50))
def test_extracted_policy_value_matches(seed):
    m = random_mdp(seed)
    for obj in (Objective.pmax(), Objective.rmin()):
        res = value_iteration(m, obj, SolverConfig(epsilon=1e-12))
        vs = evaluate_policy(m, obj, res.policy)
        fin = np.isfinite(res.values)
        assert np.array_equal(fin, np.isfinite(vs))
        assert np.abs(vs[fin] - res.values[fin]).max(initial=0) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_monotone_and_final_residual(seed):
    m = random_mdp(seed)
    for obj in (Objective.pmax(), Objective.rmin()):
        res = value_iteration(m, obj, SolverConfig(check_monotone=True))
        pins = pin_states(m, obj)
        for s in pins.updated:
            v, _ = bellman_backup(m, obj, res.values, int(s))
            assert abs(v - res.values[s]) <= 1e-6 or (np.isinf(v) and np.isinf(res.values[s]))


def test_deterministic():
    m, _ = generate_warehouse(WarehouseSpec(16, "mw", "rmin"))
    a = value_iteration(m, Objective.rmin())
    b = value_iteration(m, Objective.rmin())
    assert a.values.tobytes() == b.values.tobytes()
    assert a.policy.tobytes() == b.policy.tobytes()


def test_backup_needs_action():
    m = chain3()
    with pytest.raises(IndexError):
        bellman_backup(m, Objective.rmin(), np.zeros(3), 7)
    assert issubclass(ModelError, ValueError)
