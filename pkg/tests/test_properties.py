"""Randomised properties of whole runs."""

import numpy as np
from hypothesis import HealthCheck, given, settings, strategies as st

from moistcol.ensemble import CellLaw, InitialEnsemble, Profile, marginal, run_ensemble
from moistcol.saturation import DomainBox, compute_bounds, max_timestep
from moistcol.simulate import compose, run
from moistcol.verify import (
    certify_energy, check_dry_persistence, check_jump_structure, check_overtake, check_step_invariants,
    check_tv, check_wet_measure_all, energy,
)

from helpers import random_case, random_column, random_model

seeds = st.integers(0, 2**32 - 1)
SLOW = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@SLOW
@given(seeds)
def test_run_passes_structural_checks(seed):
    model, s, horizon, dt = random_case(np.random.default_rng(seed), n_range=(2, 32), steps_range=(4, 16))
    tr = run(s, horizon, dt, model)
    for rep in (check_step_invariants(tr), check_jump_structure(tr), check_overtake(tr), check_tv(tr),
                check_dry_persistence(tr), check_wet_measure_all(tr)):
        assert rep.passed, rep.line()


@SLOW
@given(seeds)
def test_snapshots_minimise_energy(seed):
    model, s, horizon, dt = random_case(np.random.default_rng(seed), n_range=(2, 6), steps_range=(4, 10))
    tr = run(s, horizon, dt, model)
    for th in tr.theta:
        assert certify_energy(th)[2]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=7))
def test_sorted_profile_is_energy_minimal(values):
    v = np.array(values)
    e, best, ok = certify_energy(np.sort(v))
    assert ok
    assert energy(v) >= best - 1e-12 * max(1.0, abs(best))


@SLOW
@given(seeds)
def test_positions_are_composed_step_permutations(seed):
    model, s, horizon, dt = random_case(np.random.default_rng(seed), n_range=(2, 24), steps_range=(4, 12))
    tr = run(s, horizon, dt, model)
    acc = tr.positions[0]
    for perm in tr.step_perms:
        acc = compose(perm, acc)
    assert np.array_equal(acc, tr.positions[-1])


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_ensemble_weights_and_uniform_positions(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng)
    n = int(rng.integers(2, 5))
    base = random_column(rng, model, n)
    s0 = base.theta + base.q
    cells = []
    for i in range(n):
        # a second, drier atom keeps the constraint
        p = rng.uniform(0.1, 0.9)
        cells.append(CellLaw([s0[i], s0[i] - rng.uniform(0.01, 0.3)], [p, 1 - p]))
    ens = InitialEnsemble(n, float(np.abs(s0).max()) + 1, [Profile(1.0, base.theta, cells)], model)
    dt = 0.8 * max_timestep(compute_bounds(model, DomainBox(ens.w_max, 1.0)), n, 1.0)
    res = run_ensemble(ens, 4 * dt, dt)
    assert abs(res.total_weight - 1) <= 1e-12
    for t in (0.0, 2 * dt):
        assert np.allclose(marginal(res, t).position_law(), 1 / n, atol=1e-15)
