import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moistcol.errors import ConfigError, ModelError, SolverError
from moistcol.saturation import (
    DomainBox, ModelKind, SaturationModel, SolverConfig, ThetaBounds, compute_bounds, eval_qsat,
    max_timestep, theta_inverse,
)

from reference import bisect_theta, linear_theta


def test_eval_linear_examples(model):
    assert eval_qsat(model, 0.0, 0.5, 0.0) == 0.5
    assert eval_qsat(model, 0.0, 0.0, 0.0) == 1.0
    assert eval_qsat(model, 1.0, 1.0, 0.01) == pytest.approx(0.498, abs=1e-15)


def test_eval_rejects_heights_outside_column(model):
    with pytest.raises(ConfigError):
        eval_qsat(model, 0.0, 1.1, 0.0)
    # tiny overshoot from float noise is clamped
    assert eval_qsat(model, 0.0, 1.0 + 1e-14, 0.0) == eval_qsat(model, 0.0, 1.0, 0.0)


def test_theta_inverse_examples(model):
    assert theta_inverse(model, 2.5, 0.0, 0.0) == pytest.approx(1.0, abs=1e-12)
    w = 0.3 + eval_qsat(model, 0.3, 0.7, 0.05)
    assert theta_inverse(model, w, 0.7, 0.05) == pytest.approx(0.3, abs=1e-12)
    assert theta_inverse(model, 0.5, 1.0, 0.01) == pytest.approx(0.502 / 1.5, abs=1e-12)
    assert round(theta_inverse(model, 0.5, 1.0, 0.01), 6) == 0.334667


def test_theta_inverse_is_batch_independent(model):
    w = np.linspace(-2, 2, 7)
    batch = theta_inverse(model, w, 0.3, 0.1)
    single = [theta_inverse(model, x, 0.3, 0.1) for x in w]
    assert np.array_equal(batch, single)


def test_theta_inverse_fails_for_decreasing_residual():
    class Broken:
        def __call__(self, theta, z, t):
            return -2.0 * np.asarray(theta)

    with pytest.raises(SolverError):
        theta_inverse(Broken(), 1.0, 0.5, 0.0, SolverConfig(max_iter=30))


@pytest.mark.parametrize("kw", [dict(a=0.0), dict(a=-1.0), dict(b=0.0), dict(c=-0.1)])
def test_linear_model_validation(kw):
    with pytest.raises(ModelError):
        SaturationModel.linear(**kw)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(tolerance=0.0)
    with pytest.raises(ConfigError):
        SolverConfig(max_iter=0)


def test_bounds_examples():
    b = compute_bounds(SaturationModel.linear(1, 0.5, 1, 0.2), DomainBox(1.0, 1.0))
    assert b.inf_dz_theta == pytest.approx(2 / 3)
    assert b.sup_dt_theta == pytest.approx(2 / 15)
    assert b.cfl == pytest.approx(0.2)
    assert b.inf_dw_theta == pytest.approx(2 / 3)
    b = compute_bounds(SaturationModel.linear(1, 1, 1, 0), DomainBox(1.0, 1.0))
    assert b.sup_dt_theta == 0 and b.cfl == 0
    b = compute_bounds(SaturationModel.linear(1, 0.5, 2, 0.2), DomainBox(1.0, 1.0))
    assert b.inf_dz_theta == pytest.approx(4 / 3)
    assert b.cfl == pytest.approx(0.1)


def test_bounds_sup_abs_theta_matches_corners(model):
    inv = linear_theta(1, 0.5, 1, 0.2)
    b = compute_bounds(model, DomainBox(2.0, 0.5))
    corners = [abs(inv(w, z, t)) for w in (-2, 2) for z in (0, 1) for t in (0, 0.5)]
    assert b.sup_abs_theta == pytest.approx(max(corners))


def test_max_timestep_examples():
    b = compute_bounds(SaturationModel.linear(1, 0.5, 1, 0.2), DomainBox(1.0, 1.0))
    assert max_timestep(b, 2) == pytest.approx(1.25)
    assert max_timestep(b, 1000) == pytest.approx(0.0025)
    b0 = compute_bounds(SaturationModel.linear(1, 1, 1, 0), DomainBox(1.0, 1.0))
    assert max_timestep(b0, 10, horizon=1.0) == pytest.approx(0.1)
    with pytest.raises(ConfigError):
        max_timestep(b, 0)


def test_bounds_dict_round_trip(model):
    b = compute_bounds(model, DomainBox(1.5, 2.0))
    assert ThetaBounds.from_dict(b.to_dict()) == b


def _linear_table_csv(path, model, theta=np.linspace(-3, 3, 13), z=np.linspace(0, 1, 5), t=np.linspace(0, 2, 3)):
    with open(path, "w") as fh:
        fh.write("theta,z,t,q\n")
        for a in theta:
            for b in z:
                for c in t:
                    fh.write(f"{float(a)!r},{float(b)!r},{float(c)!r},{float(model(a, b, c))!r}\n")


def test_tabulated_reproduces_linear_model(tmp_path, model):
    path = tmp_path / "q.csv"
    _linear_table_csv(path, model)
    tab = SaturationModel.from_csv(path)
    assert tab.kind is ModelKind.TABULATED
    w = np.linspace(-1, 1, 9)
    assert np.allclose(theta_inverse(tab, w, 0.37, 0.4), theta_inverse(model, w, 0.37, 0.4), atol=1e-11)
    b_tab = compute_bounds(tab, DomainBox(1.0, 1.0), resolution=16)
    b_lin = compute_bounds(model, DomainBox(1.0, 1.0))
    for key in ("inf_dz_theta", "sup_dt_theta", "inf_dw_theta", "sup_dtheta_q"):
        assert getattr(b_tab, key) == pytest.approx(getattr(b_lin, key), rel=1e-6)
    again = SaturationModel.from_config(tab.to_config())
    assert np.array_equal(again.table.values, tab.table.values)


def test_tabulated_rejects_non_monotone(tmp_path):
    bad = SaturationModel.linear(1, 0.5, 1, 0.2)
    path = tmp_path / "q.csv"
    _linear_table_csv(path, bad)
    text = path.read_text().splitlines()
    # make Q increase with z in one place
    head, rows = text[0], [r.split(",") for r in text[1:]]
    for r in rows:
        if float(r[1]) == 1.0:
            r[3] = repr(float(r[3]) + 10)
    path.write_text("\n".join([head] + [",".join(r) for r in rows]) + "\n")
    with pytest.raises(ModelError):
        SaturationModel.from_csv(path)


def test_tabulated_rejects_incomplete_grid(tmp_path, model):
    path = tmp_path / "q.csv"
    _linear_table_csv(path, model)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ConfigError):
        SaturationModel.from_csv(path)


def test_model_config_errors():
    with pytest.raises(ConfigError):
        SaturationModel.from_config({"kind": "cubic"})
    with pytest.raises(ConfigError):
        SaturationModel.from_config({"kind": "linear", "d": 1})
    with pytest.raises(ConfigError):
        SaturationModel.from_config({"kind": "tabulated"})


params = st.tuples(st.floats(0.5, 2.0), st.floats(0.1, 2.0), st.floats(0.5, 2.0), st.floats(0.0, 0.5))
points = st.tuples(st.floats(-3, 3), st.floats(0, 1), st.floats(0, 2))


@settings(max_examples=200, deadline=None)
@given(params, points)
def test_inverse_property(p, pt):
    model = SaturationModel.linear(*p)
    w, z, t = pt
    cfg = SolverConfig()
    th = theta_inverse(model, w, z, t, cfg)
    assert abs(th + model(th, z, t) - w) <= 2 * cfg.tolerance + 1e-15 * (1 + abs(w))
    assert abs(th - linear_theta(*p)(w, z, t)) <= cfg.tolerance
    assert abs(th - bisect_theta(lambda a, b, c: float(model(a, b, c)), w, z, t)) <= cfg.tolerance


@settings(max_examples=200, deadline=None)
@given(params, points, st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_inverse_monotone(p, pt, dw, dz):
    model = SaturationModel.linear(*p)
    w, z, t = pt
    tol = SolverConfig().tolerance
    base = theta_inverse(model, w, z, t)
    assert theta_inverse(model, w + dw, z, t) > base - tol
    assert theta_inverse(model, w, min(z + dz, 1.0), t) > base - tol
    assert not math.isnan(base)
