import csv

import numpy as np
import pytest

from moistcol.errors import ConfigError, StepInvariantError
from moistcol.rearrange import ColumnState
from moistcol.saturation import SaturationModel
from moistcol.simulate import (
    FlowMap, compose, flow_map, lagrangian_paths, read_jsonl, run, step_count, theta_bar, write_csv,
    write_flow_maps, write_jsonl,
)

from helpers import random_case
from reference import linear_theta, reference_run

INV = linear_theta(1.0, 0.5, 1.0, 0.2)


def two(model, horizon=0.02):
    return run(ColumnState.initial([0.0, 0.1], [0.5, 0.0]), horizon, 0.01, model)


def three(model, horizon=0.02):
    return run(ColumnState.initial([0.0, 0.05, 0.1], [2 / 3, 0.358333, 0.0]), horizon, 0.01, model)


def test_step_count():
    assert step_count(1.0, 0.1) == 10
    assert step_count(1.0, 0.3) == 4
    assert step_count(0.3, 0.1) == 3


def test_all_dry_run_is_constant(model):
    s = ColumnState.initial([0.0, 0.5, 1.0], [0.0, 0.0, 0.0])
    tr = run(s, 0.1, 0.01, model)
    assert tr.steps == 10 and tr.jump_count == 0
    assert np.all(tr.theta == s.theta) and np.all(tr.positions == [1, 2, 3])


def test_two_parcel_run(model):
    tr = two(model)
    ref = reference_run([0.0, 0.1], [0.5, 0.0], 0.0, 0.01, 2, INV)
    for k, (th, q, labels) in enumerate(ref):
        assert np.allclose(tr.theta[k], th, atol=1e-12)
        assert np.allclose(tr.q[k], q, atol=1e-12)
        assert tr.positions[k].tolist() == labels
    assert np.round(tr.theta[2], 6).tolist() == [0.1, 0.336]
    assert round(tr.q[2, 1], 6) == 0.164
    assert tr.jump_count == 2
    assert tr.conservation_residual() < 1e-14


def test_three_parcel_run(model):
    tr = three(model)
    ref = reference_run([0.0, 0.05, 0.1], [2 / 3, 0.358333, 0.0], 0.0, 0.01, 2, INV)
    for k, (th, _, labels) in enumerate(ref):
        assert np.allclose(tr.theta[k], th, atol=1e-12)
        assert tr.positions[k].tolist() == labels


def test_run_matches_reference_on_random_cases():
    rng = np.random.default_rng(7)
    for _ in range(10):
        model, s, horizon, dt = random_case(rng, n_range=(2, 20), steps_range=(3, 10))
        tr = run(s, horizon, dt, model)
        inv = linear_theta(model.qstar, model.a, model.b, model.c)
        ref = reference_run(list(s.theta), list(s.q), 0.0, dt, tr.steps, inv)
        assert np.allclose(tr.theta, [r[0] for r in ref], atol=1e-9)
        assert np.array_equal(tr.positions, [r[2] for r in ref])


def test_step_perms_compose_to_positions(model):
    tr = three(model, 0.05)
    for k in range(1, tr.steps + 1):
        assert np.array_equal(tr.positions[k], compose(tr.step_perms[k - 1], tr.positions[k - 1]))


def test_dt_too_large_is_rejected(model):
    s = ColumnState.initial([0.0, 0.1], [0.5, 0.0])
    with pytest.raises(ConfigError, match="admissible"):
        run(s, 4.0, 2.0, model)
    # exactly the admissible step is accepted
    tr = run(s, 2.5, 1.25, model)
    assert tr.steps == 2


def test_invalid_initial_state(model):
    with pytest.raises(ConfigError, match="initial"):
        run(ColumnState.initial([0.2, 0.1], [0.0, 0.0]), 0.1, 0.01, model)
    with pytest.raises(ConfigError):
        run(ColumnState.initial([0.0, 0.1], [0.5, 0.0]), 0.0, 0.01, model)


def test_step_failure_carries_index(model, monkeypatch):
    import moistcol.simulate as sim
    monkeypatch.setattr(sim, "default_tol_sat", lambda *a, **k: -1.0)
    monkeypatch.setattr(sim, "initial_violations", lambda *a, **k: [])
    with pytest.raises(StepInvariantError) as info:
        run(ColumnState.initial([0.0, 0.1], [0.5, 0.0]), 0.02, 0.01, model)
    assert info.value.step_index == 1 and info.value.report is not None


def test_horizon_not_multiple_of_dt(model):
    tr = three(model, 0.025)
    assert tr.steps == 3
    assert tr.times[-1] == pytest.approx(0.03)
    assert tr.index_at(0.0249) == 2


def test_index_at_boundary_convention(model):
    tr = two(model)
    assert tr.index_at(0.0) == 0
    assert tr.index_at(0.01) == 1
    assert tr.index_at(0.0099999) == 0
    assert tr.index_at(0.0199) == 1
    # the horizon itself maps to the final snapshot
    assert tr.index_at(0.02) == 2
    for bad in (-0.001, 0.021, 1.0):
        with pytest.raises(ConfigError):
            tr.index_at(bad)


def test_flow_map_examples(model):
    tr = two(model)
    assert isinstance(flow_map(tr, 0.0), FlowMap)
    assert flow_map(tr, 0.0).grid().tolist() == [0.5, 1.0]
    fm = flow_map(tr, 0.01)
    assert fm.grid().tolist() == [1.0, 0.5]
    assert fm(0.25) == pytest.approx(0.75)
    assert fm(0.75) == pytest.approx(0.25)
    assert flow_map(three(model), 0.015).grid() == pytest.approx([1.0, 1 / 3, 2 / 3])


def test_flow_map_preserves_measure(model):
    tr = three(model, 0.05)
    z = (np.arange(3000) + 0.5) / 3000
    for t in (0.0, 0.01, 0.04):
        img = flow_map(tr, t)(z)
        counts = np.histogram(img, bins=3, range=(0, 1))[0]
        assert counts.tolist() == [1000, 1000, 1000]


def test_compose_examples():
    a = np.array([2, 3, 1])
    b = np.array([3, 1, 2])
    assert compose(b, a).tolist() == [1, 2, 3]
    assert compose(a).tolist() == a.tolist()


def test_lagrangian_paths(model):
    p = lagrangian_paths(two(model))
    assert p[0].z.tolist() == [0.5, 1.0, 1.0]
    assert p[0].theta_hat[0] == 0.0 and round(p[0].theta_hat[1], 6) == 0.334667
    assert p[0].positive_variation() == pytest.approx(0.5)
    assert p[1].total_variation() == pytest.approx(0.5)
    assert p[0].at(0.015)[0] == 1.0
    p3 = lagrangian_paths(three(model))
    assert p3[1].z == pytest.approx([2 / 3, 1 / 3, 1 / 3])
    assert np.all(p3[1].theta_hat == 0.05)
    assert p3[1].positive_variation() == 0.0


def test_theta_bar(model):
    tr = two(model)
    mid = theta_bar(tr, 0.005)
    assert mid == pytest.approx(0.5 * (tr.theta[0] + tr.theta[1]))
    assert theta_bar(tr, 0.0) == pytest.approx(tr.theta[0])


def test_csv_and_flow_outputs(tmp_path, model):
    tr = two(model)
    write_csv(tr, tmp_path / "t.csv")
    write_flow_maps(tr, tmp_path / "f.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert len(rows) == 6
    assert list(rows[0]) == ["t", "position_index", "z", "theta", "q", "label"]
    last = rows[-1]
    assert float(last["theta"]) == tr.theta[2, 1] and last["label"] == "1"
    flows = list(csv.reader(open(tmp_path / "f.csv")))
    assert flows[0] == ["t", "label_1", "label_2"] and flows[2][1:] == ["2", "1"]


def test_jsonl_round_trip(tmp_path, model):
    tr = three(model, 0.05)
    write_jsonl(tr, tmp_path / "s.jsonl")
    back = read_jsonl(tmp_path / "s.jsonl")
    assert np.array_equal(back.theta, tr.theta)
    assert np.array_equal(back.q, tr.q)
    assert np.array_equal(back.positions, tr.positions)
    assert np.array_equal(back.theta_hat, tr.theta_hat)
    assert back.reports == tr.reports
    assert back.dt == tr.dt and back.bounds == tr.bounds


def test_jsonl_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"type": "state"}\n')
    with pytest.raises(ConfigError):
        read_jsonl(p)


def test_tabulated_model_run_matches_linear(tmp_path, model):
    path = tmp_path / "q.csv"
    with open(path, "w") as fh:
        fh.write("theta,z,t,q\n")
        for a in np.linspace(-2, 2, 9):
            for b in np.linspace(0, 1, 3):
                for c in np.linspace(0, 0.2, 3):
                    fh.write(f"{float(a)!r},{float(b)!r},{float(c)!r},{float(model(a, b, c))!r}\n")
    tab = SaturationModel.from_csv(path)
    s = ColumnState.initial([0.0, 0.05, 0.1], [2 / 3, 0.358333, 0.0])
    a = run(s, 0.05, 0.01, tab, resolution=8)
    b = run(s, 0.05, 0.01, model)
    assert np.array_equal(a.positions, b.positions)
    assert np.allclose(a.theta, b.theta, atol=1e-10)
