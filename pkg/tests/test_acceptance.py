"""Acceptance criteria, one test each, printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the
lines interleaved with pytest output; they are printed either way).
"""

import math
import time

import numpy as np
import pytest

from moistcol.ensemble import (
    CellLaw, InitialEnsemble, Profile, marginal, marginal_distance, mc_tolerance, run_ensemble,
)
from moistcol.rearrange import ColumnState, step
from moistcol.saturation import SaturationModel, max_timestep
from moistcol.simulate import bounds_for, run
from moistcol.verify import (
    check_continuity, check_dry_persistence, check_energy, check_increment_formula, check_jump_structure,
    check_overtake, check_step_invariants, check_tv, check_wet_measure_all,
)

from helpers import random_case
from reference import linear_theta, reference_step

SWEEP_RUNS = 200
SWEEP_SEED = 12345


def announce(capsys, number, ok, summary):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'} {summary}")


@pytest.fixture(scope="module")
def sweep():
    """200 random runs: n in 4..64, random linear model and admissible initial data."""
    rng = np.random.default_rng(SWEEP_SEED)
    start = time.perf_counter()
    out = []
    for _ in range(SWEEP_RUNS):
        model, state, horizon, dt = random_case(rng, n_range=(4, 64))
        out.append(run(state, horizon, dt, model))
    return out, time.perf_counter() - start


def test_1_step_invariants(sweep, capsys):
    trajs, run_time = sweep
    start = time.perf_counter()
    reports = [check_step_invariants(tr) for tr in trajs]
    total = run_time + time.perf_counter() - start
    resid = max(r.constants["conservation_residual"] for r in reports)
    slack_ok = all(r.constants["saturation_excess"] <= r.tolerances["saturation"] for r in reports)
    ok = all(r.passed for r in reports) and resid <= 1e-12 and slack_ok and total <= 60
    announce(capsys, 1, ok, f"runs={len(trajs)} max_residual={resid:.2e} saturation_ok={slack_ok} "
                            f"time={total:.1f}s (limit 60s)")
    assert ok


def test_2_worked_examples(capsys):
    model = SaturationModel.linear(1.0, 0.5, 1.0, 0.2)
    inv = linear_theta(1.0, 0.5, 1.0, 0.2)
    cases = [
        ([0.0, 0.1], [0.5, 0.0], [0.1, 0.334667], [2, 1], [(2, (1,), (1,), 1)]),
        ([0.0, 0.05, 0.1], [2 / 3, 0.358333, 0.0], [0.05, 0.1, 0.445778], [3, 1, 2], [(3, (1, 2), (1, 2), 1)]),
    ]
    ok, worst = True, 0.0
    for theta, q, expect, beta_expect, events in cases:
        s = ColumnState.initial(theta, q)
        new, beta, rep = step(s, 0.01, model)
        ref = reference_step(theta, list(range(1, len(theta) + 1)), list(s.theta_m), 0.0, 0.01, inv)
        worst = max(worst, float(np.abs(new.theta - expect).max()))
        ok &= bool(np.abs(new.theta - expect).max() <= 1e-6)
        ok &= bool(np.abs(new.theta - ref[0]).max() <= 1e-12)
        ok &= beta.tolist() == beta_expect and new.labels.tolist() == ref[2]
        ok &= [(x.k, x.wet, x.eligible, x.jumper) for x in rep.substeps] == events == ref[3]
    announce(capsys, 2, ok, f"max |theta - fixture| = {worst:.2e} (tol 1e-6); permutations and events match")
    assert ok


def test_3_structural_properties(sweep, capsys):
    trajs, _ = sweep
    jump = [check_jump_structure(tr) for tr in trajs]
    over = [check_overtake(tr, exhaustive_max_n=64) for tr in trajs]
    applies = sum(r.details["rate_bound_applies"] for r in over)
    exhaustive = all(r.details["exhaustive"] for r in over)
    rate = max(r.constants["max_rate"] for r in over)
    ok = all(r.passed for r in jump + over) and exhaustive
    announce(capsys, 3, ok, f"jump_structure {sum(r.passed for r in jump)}/{len(jump)}, "
                            f"overtake {sum(r.passed for r in over)}/{len(over)}, exhaustive rate scan, "
                            f"max #J/(l-k) = {rate:.3f} (bound 2, applied on {applies} runs)")
    assert ok


def test_4_hard_constants(sweep, capsys):
    trajs, _ = sweep
    tv = [check_tv(tr) for tr in trajs]
    dry = [check_dry_persistence(tr) for tr in trajs]
    slack = min(r.constants["min_jump_slack"] for r in tv)
    jumps = sum(r.details["jumps"] for r in tv)
    ok = all(r.passed for r in tv + dry)
    announce(capsys, 4, ok, f"per-jump events={jumps} min slack={slack:.2e} (tol -1e-9), "
                            f"PV bound {sum(r.passed for r in tv)}/{len(tv)}, "
                            f"dry persistence {sum(r.passed for r in dry)}/{len(dry)}")
    assert ok


def refinement_run(n, model, horizon=2.5):
    z = np.arange(1, n + 1) / n
    theta = 0.2 * z
    state = ColumnState.initial(theta, model(theta, z, 0.0))
    bounds = bounds_for(state, model, horizon)
    return run(state, horizon, max_timestep(bounds, n, horizon), model, validate=False,
               keep_reports=False, bounds=bounds)


def l1_between(a, b):
    m = math.lcm(a.size, b.size)
    return float(np.abs(np.repeat(a, m // a.size) - np.repeat(b, m // b.size)).mean())


def test_5_refinement_stability(capsys):
    model = SaturationModel.linear(1.0, 0.5, 1.0, 0.2)
    start = time.perf_counter()
    ns = [16, 32, 64, 128]
    trajs = {n: refinement_run(n, model) for n in ns}
    consts = {}
    for n, tr in trajs.items():
        c = check_continuity(tr)
        consts[n] = (check_increment_formula(tr).constants["C4"], c.constants["C5"], c.constants["C6"])
    times = [2.5 * (2 * i + 1) / 8 for i in range(4)]
    l1 = {t: [l1_between(trajs[a].theta[trajs[a].index_at(t)], trajs[b].theta[trajs[b].index_at(t)])
              for a, b in zip(ns, ns[1:])] for t in times}
    elapsed = time.perf_counter() - start
    spreads = [max(consts[n][i] for n in ns) / min(consts[n][i] for n in ns) for i in range(3)]
    decreasing = all(all(b < a for a, b in zip(v, v[1:])) for v in l1.values())
    ok = all(s < 2 for s in spreads) and decreasing and elapsed <= 300
    table = "; ".join(f"n={n} C4={c[0]:.4g} C5={c[1]:.4g} C6={c[2]:.4g}" for n, c in consts.items())
    announce(capsys, 5, ok, f"spread C4={spreads[0]:.3f} C5={spreads[1]:.3f} C6={spreads[2]:.3f} (limit 2); "
                            f"L1 decreasing at {len(times)} times={decreasing}; time={elapsed:.1f}s\n  {table}\n  "
                            + "; ".join(f"t={t:g}: " + ", ".join(f"{x:.3e}" for x in v) for t, v in l1.items()))
    assert ok


def test_6_energy_minimality(sweep, capsys):
    trajs, _ = sweep
    small = [tr for tr in trajs if tr.n <= 8]
    rng = np.random.default_rng(SWEEP_SEED + 6)
    for _ in range(40):
        model, state, horizon, dt = random_case(rng, n_range=(2, 8))
        small.append(run(state, horizon, dt, model))
    reports = [check_energy(tr) for tr in small]
    snaps = sum(tr.steps + 1 for tr in small)
    ok = all(r.passed for r in reports)
    announce(capsys, 6, ok, f"runs={len(small)} snapshots={snaps} all certified minimal={ok}")
    assert ok


def test_7_ensemble(capsys):
    model = SaturationModel.linear(1.0, 0.5, 1.0, 0.2)
    s = ColumnState.initial([0.0, 0.05, 0.1], [2 / 3, 0.358333, 0.0])
    dirac = run_ensemble(InitialEnsemble.dirac(s, model), 0.05, 0.01)
    direct = run(s, 0.05, 0.01, model, bounds=dirac.bounds)
    tr = dirac.runs[0].trajectory
    bit_exact = (len(dirac.runs) == 1 and tr.theta.tobytes() == direct.theta.tobytes()
                 and tr.q.tobytes() == direct.q.tobytes() and np.array_equal(tr.positions, direct.positions))

    cells = [CellLaw([2 / 3, 0.3], [0.3, 0.7]), CellLaw([0.408333, 0.1], [0.5, 0.5]),
             CellLaw([0.1, 0.12], [0.6, 0.4])]
    profiles = [Profile(0.6, [0.0, 0.05, 0.1], cells),
                Profile(0.4, [0.0, 0.1, 0.1], [CellLaw([0.5, 0.2], [0.5, 0.5]), CellLaw.dirac(0.1),
                                               CellLaw([0.1, 0.15], [0.2, 0.8])])]
    ens = InitialEnsemble(3, 1.0, profiles, model)
    exact = run_ensemble(ens, 0.05, 0.01)
    mc = run_ensemble(ens, 0.05, 0.01, mode="montecarlo", samples=10_000, seed=SWEEP_SEED)
    weight_err = abs(exact.total_weight - 1)
    uniform, worst_ratio, compared = True, 0.0, 0
    for t in (0.0, 0.01, 0.02, 0.03, 0.04):
        a, b = marginal(exact, t), marginal(mc, t)
        uniform &= bool(np.allclose(a.position_law(), 1 / 3, atol=1e-15))
        uniform &= bool(np.allclose(b.position_law(), 1 / 3, atol=1e-15))
        for name in ("theta", "thetaM", "flow"):
            for cell in (1, 2, 3):
                d = marginal_distance(a, b, (name, cell))
                tol = mc_tolerance(a, (name, cell), 10_000)
                compared += 1
                worst_ratio = max(worst_ratio, d / tol if tol > 0 else (0.0 if d == 0 else math.inf))
    ok = bit_exact and weight_err <= 1e-12 and uniform and worst_ratio <= 1
    announce(capsys, 7, ok, f"dirac bit-exact={bit_exact} weight error={weight_err:.1e} uniform positions={uniform} "
                            f"MC/exact max W1/tol={worst_ratio:.3f} over {compared} comparisons")
    assert ok


def test_8_wet_measure(sweep, capsys):
    trajs, _ = sweep
    reports = [check_wet_measure_all(tr) for tr in trajs]
    labels = sum(tr.n for tr in trajs)
    jumps = sum(r.constants["jumps"] for r in reports)
    # the jump tolerance scales with dt, so compare runs by their ratio to it
    ratio = max(r.constants["max_jump_mismatch"] / r.tolerances["tol"] for r in reports)
    ok = all(r.passed for r in reports)
    announce(capsys, 8, ok, f"label paths={labels} theta increments={jumps} "
                            f"max |df - (dg)+|/tol={ratio:.3f}; runs passing {sum(r.passed for r in reports)}/{len(reports)}")
    assert ok

