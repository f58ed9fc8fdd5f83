"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (collected again in the terminal summary).
Reference values come from closed forms, from the flat solver run tighter,
or from exhaustive policy enumeration; the three published warehouse values
(1277.50, 0.567, 0.278) are compared directly.

Runtime on one core: about eight minutes.  The million-state case runs only
with SHARPMDP_FULL=1.
"""

import numpy as np
import pytest

from helpers import random_mdp, verdict
from sharpmdp import bench
from sharpmdp.cli import main
from sharpmdp.engine import SharpConfig, sharp_solve
from sharpmdp.flat import SolverConfig, value_iteration
from sharpmdp.generators import WarehouseSpec, generate_warehouse, warehouse_closed_form
from sharpmdp.hierarchy import PartitionStrategy
from sharpmdp.mdp import Objective
from sharpmdp.oracle import enumerate_policies, evaluate_policy

GRID8 = PartitionStrategy.grid(8, 8)


@pytest.fixture(scope="module")
def desk():
    """The desk-scale suite: every warehouse layout and objective at n = 64, 128, 256, plus arenas."""
    return bench.run_suite(bench.desk_suite())


# 1 ------------------------------------------------------------------------

def test_c1_open_grid_expected_cost():
    results = []
    for n, expected in ((64, None), (128, None), (512, 1277.50)):
        spec = WarehouseSpec(n, "nw", "rmin")
        closed = warehouse_closed_form(spec)
        target = closed if expected is None else expected
        m, f = generate_warehouse(spec)
        flat = value_iteration(m, Objective.rmin()).values[m.initial]
        rep = sharp_solve(m, Objective.rmin(), f, SharpConfig(GRID8, theta=500))
        ok = abs(flat - target) <= 0.01 and abs(rep.initial_value - target) <= 0.01
        ok &= rep.num_leaves == 64 and rep.refinement_count == 0
        results.append((ok, f"n={n} target={target:.2f} flat={flat:.4f} sharp={rep.initial_value:.4f}"))
    assert warehouse_closed_form(WarehouseSpec(64)) == pytest.approx(157.50)
    assert warehouse_closed_form(WarehouseSpec(128)) == pytest.approx(317.50)
    verdict("C1 open-grid expected cost", all(ok for ok, _ in results), "; ".join(d for _, d in results))


# 2 ------------------------------------------------------------------------

def _pmax_start(n, p_succ):
    spec = WarehouseSpec(n, "nw", "pmax", p_succ=p_succ)
    m, f = generate_warehouse(spec)
    flat = value_iteration(m, Objective.pmax()).values[m.initial]
    rep = sharp_solve(m, Objective.pmax(), f, SharpConfig(GRID8, theta=0.5))
    return flat, rep.initial_value


def test_c2_open_grid_reach_probability():
    details, ok = [], True
    for n in (8, 64):
        spec = WarehouseSpec(n, "nw", "pmax")
        m, _ = generate_warehouse(spec)
        v = value_iteration(m, Objective.pmax(), SolverConfig(epsilon=1e-12)).values[m.initial]
        ok &= abs(v - warehouse_closed_form(spec)) <= 1e-8
        details.append(f"n={n} solved={v:.10f} formula={warehouse_closed_form(spec):.10f}")
    flat, sharp = _pmax_start(512, 0.9)
    ok &= abs(flat - 0.567) <= 1e-3 and abs(sharp - 0.567) <= 1e-3
    details.append(f"n=512 flat={flat:.5f} sharp={sharp:.5f} (target 0.567)")
    verdict("C2 open-grid reach probability", ok, "; ".join(details))


@pytest.mark.slow
def test_c2_million_state_grid():
    flat, sharp = _pmax_start(1024, 0.8)
    ok = abs(flat - 0.278) <= 1e-3 and abs(sharp - 0.278) <= 1e-3
    verdict("C2 n=1024 reach probability", ok, f"flat={flat:.5f} sharp={sharp:.5f} (target 0.278)")


# 3 ------------------------------------------------------------------------

def test_c3_engine_agreement(desk):
    failed = [r for r in desk.rows if r.status != "ok"]
    worst = max(desk.gaps, key=lambda g: g.sup_gap)
    ok = not failed and worst.sup_gap <= 1e-3 and len(desk.gaps) == len(desk.rows)
    verdict("C3 engine agreement", ok,
            f"{len(desk.gaps)} runs, {len(failed)} failed, worst sup-norm gap {worst.sup_gap:.2e} "
            f"({worst.instance} {worst.config})")


# 4 ------------------------------------------------------------------------

def test_c4_oracle_equivalence():
    worst_flat = worst_sharp = 0.0
    mismatched = []
    for seed in range(200):
        m = random_mdp(seed)
        for obj in (Objective.pmax(), Objective.rmin()):
            ref = enumerate_policies(m, obj).values
            flat = value_iteration(m, obj, SolverConfig(epsilon=1e-10)).values
            rep = sharp_solve(m, obj, None, SharpConfig(PartitionStrategy.scc(), max_depth=2, theta=0.01,
                                                        epsilon=1e-10))
            fin = np.isfinite(ref)
            for name, v in (("flat", flat), ("sharp", rep.values)):
                if not np.array_equal(np.isfinite(v), fin):
                    mismatched.append((seed, obj.kind.value, name))
                    continue
                err = float(np.max(np.abs(v[fin] - ref[fin]), initial=0.0))
                if name == "flat":
                    worst_flat = max(worst_flat, err)
                else:
                    worst_sharp = max(worst_sharp, err)
    ok = not mismatched and worst_flat <= 1e-8 and worst_sharp <= 1e-8
    verdict("C4 oracle equivalence", ok,
            f"200 models x 2 objectives; worst flat {worst_flat:.1e}, worst sharp {worst_sharp:.1e}, "
            f"infinite-set mismatches {mismatched[:3]}")


# 5 ------------------------------------------------------------------------

def test_c5_residual_and_error_bounds(desk):
    sharp_rows = [r for r in desk.rows if r.engine == "sharp"]
    bad = [r for r in sharp_rows if r.converged is True and not r.residual <= r.epsilon + r.eta + 1e-9]
    details = [f"residual bound on {len(sharp_rows)} suite runs: {len(bad)} violations"]
    ok = not bad
    worst_ratio = 0.0
    configs = [(GRID8, 1, 0.5), (GRID8, 2, 0.1), (PartitionStrategy.grid(4, 4), 3, 0.05)]
    for n in (32, 64):
        for layout in ("nw", "sw", "mw"):
            spec = WarehouseSpec(n, layout, "pmax")
            m, f = generate_warehouse(spec)
            ref = value_iteration(m, Objective.pmax(), SolverConfig(epsilon=1e-12)).values
            for strategy, depth, theta in configs:
                cfg = SharpConfig(strategy, max_depth=depth, theta=theta)
                rep = sharp_solve(m, Objective.pmax(), f, cfg)
                err = float(np.max(np.abs(rep.values - ref)))
                bound = (cfg.epsilon + rep.eta_measured) / spec.p_fail
                ok &= rep.converged and err <= bound
                ok &= rep.global_residual <= cfg.epsilon + rep.eta_measured + 1e-9
                worst_ratio = max(worst_ratio, err / bound)
    details.append(f"error bound on 18 grid runs: worst error/bound = {worst_ratio:.3f}")
    verdict("C5 residual and error bounds", ok, "; ".join(details))


# 6 ------------------------------------------------------------------------

def test_c6_policy_quality():
    worst_ratio, ok = 0.0, True
    for layout in ("nw", "sw", "mw"):
        spec = WarehouseSpec(32, layout, "pmax")
        m, f = generate_warehouse(spec)
        best = value_iteration(m, Objective.pmax(), SolverConfig(epsilon=1e-12)).values
        for strategy, depth, theta in [(GRID8, 1, 0.5), (GRID8, 2, 0.1), (PartitionStrategy.grid(4, 4), 3, 0.05)]:
            cfg = SharpConfig(strategy, max_depth=depth, theta=theta)
            rep = sharp_solve(m, Objective.pmax(), f, cfg)
            v_sigma = evaluate_policy(m, Objective.pmax(), rep.policy)
            gap = float(np.max(np.abs(v_sigma - best)))
            bound = (2 * cfg.epsilon + 2 * rep.eta_measured) / spec.p_fail
            ok &= gap <= bound
            worst_ratio = max(worst_ratio, gap / bound)
    verdict("C6 composed-policy quality", ok, f"9 runs on 32x32 grids; worst gap/bound = {worst_ratio:.3f}")


# 7 ------------------------------------------------------------------------

def test_c7_eta_threshold_transition():
    cases = bench.eta_ablation_suite()
    res = bench.run_suite(cases, reference=bench.suite_reference("eta-ablation"))
    optimum = res.gaps[0].reference_value
    by_depth = {}
    for g, row in zip(res.gaps, (r for r in res.rows if r.status == "ok")):
        by_depth.setdefault(row.depth, []).append((row.eta_thr, g.gap))
    ok = all(r.status == "ok" for r in res.rows)
    details = []
    for depth, pts in sorted(by_depth.items()):
        small = max(gap for eta, gap in pts if eta <= 0.5)
        top = [gap for eta, gap in pts if eta == 1.0][0]
        ok &= small <= 1e-3 and top > 10 * optimum
        details.append(f"D={depth}: max gap(eta<=0.5)={small:.1e}, gap(eta=1)={top:.3g}")
    verdict("C7 eta-threshold transition", ok, f"V*={optimum:.2f}; " + "; ".join(details))


# 8 ------------------------------------------------------------------------

def test_c8_depth_ablation():
    res = bench.run_suite(bench.depth_ablation_suite(), reference=bench.suite_reference("depth-ablation"))
    gaps = [g.gap for g in res.gaps]
    ok = len(gaps) == 5 and gaps[0] > gaps[1] > gaps[2]
    # plateau: each further level changes the gap by at most 10 percent
    ok = ok and all(abs(gaps[d] - gaps[d - 1]) <= 0.1 * gaps[d - 1] for d in (3, 4))
    verdict("C8 depth ablation", ok, "gaps D1..D5 = " + ", ".join(f"{g:.3g}" for g in gaps))


# 9 ------------------------------------------------------------------------

def test_c9_termination_and_determinism(desk, tmp_path):
    unconverged = [r for r in desk.rows if r.converged is not True]
    runs = [
        ["--gen", "warehouse:n=64:layout=mw:variant=pmax", "--partition", "grid:4x4", "--depth", "3",
         "--theta", "0.05"],
        ["--gen", "warehouse:n=64:layout=sw:variant=rmin", "--depth", "2", "--theta", "200"],
        ["--gen", "arenas:k=4:size=64", "--partition", "scc", "--depth", "2", "--spread", "normalized"],
    ]
    identical = True
    for i, args in enumerate(runs):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{i}{rep}"
            assert main(["solve", *args, "--out", str(out)]) == 0
            outs.append(out)
        for name in ("values.csv", "policy.csv"):
            identical &= (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    verdict("C9 termination and determinism", not unconverged and identical,
            f"{len(desk.rows) - len(unconverged)}/{len(desk.rows)} suite runs converged; "
            f"repeated CLI solves byte-identical: {identical}")
