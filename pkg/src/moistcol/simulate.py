"""Time-march a column and keep its history.

A :class:`Trajectory` stores the parcel permutations at every step plus the
values of ``theta`` that parcels acquire when they saturate.  Profiles are
rebuilt from those on demand, which is exact because a parcel's ``theta``
only changes when it saturates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, StepInvariantError
from .rearrange import ColumnState, StepReport, default_tol_sat, step, step_violations
from .saturation import (
    DEFAULT_SOLVER, DomainBox, SaturationModel, SolverConfig, ThetaBounds,
    compute_bounds, max_timestep,
)

DT_SLACK = 1e-12


def step_count(horizon, dt):
    """Number of steps ``ceil(horizon / dt)``, ignoring float noise in the ratio."""
    return max(1, math.ceil(horizon / dt - 1e-9))


def bounds_for(initial, model, horizon, resolution=64, cfg=DEFAULT_SOLVER):
    """Bounds over the box ``|w| <= max|theta| + max|q|`` and ``[0, horizon]``."""
    w_max = float(np.abs(initial.theta).max() + np.abs(initial.q).max())
    return compute_bounds(model, DomainBox(max(w_max, 1e-12), horizon), resolution, cfg)


@dataclass(eq=False)
class Trajectory:
    """History of one column run.

    ``positions[k, j - 1]`` is the position of parcel ``j`` after ``k``
    steps (the cumulative flow map).  ``events`` holds ``(k, label, theta)``
    for each parcel whose ``theta`` changed during step ``k``.
    """

    t0: float
    dt: float
    horizon: float
    theta_m: np.ndarray
    theta0: np.ndarray
    q0: np.ndarray
    positions: np.ndarray
    events: np.ndarray  # (m, 3) rows: step index (1-based end snapshot), label, value
    model: SaturationModel
    bounds: ThetaBounds
    cfg: SolverConfig = DEFAULT_SOLVER
    reports: list | None = None
    step_perms: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.theta_m.size

    @property
    def steps(self):
        return self.positions.shape[0] - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @cached_property
    def theta_hat(self):
        """``theta`` along each parcel, shape ``(steps + 1, n)``, label-indexed."""
        out = np.empty((self.steps + 1, self.n))
        out[0] = self.theta0[self.positions[0] - 1]
        ev = self.events
        order = np.argsort(ev[:, 0], kind="stable") if len(ev) else []
        ev = ev[order] if len(ev) else ev
        cursor = 0
        for k in range(1, self.steps + 1):
            out[k] = out[k - 1]
            while cursor < len(ev) and int(ev[cursor, 0]) == k:
                out[k, int(ev[cursor, 1]) - 1] = ev[cursor, 2]
                cursor += 1
        out.setflags(write=False)
        return out

    @cached_property
    def theta(self):
        """Position-indexed profiles, shape ``(steps + 1, n)``."""
        out = np.empty_like(self.theta_hat)
        rows = np.arange(self.steps + 1)[:, None]
        out[rows, self.positions - 1] = self.theta_hat
        out.setflags(write=False)
        return out

    @cached_property
    def occupants(self):
        occ = np.empty_like(self.positions)
        rows = np.arange(self.steps + 1)[:, None]
        occ[rows, self.positions - 1] = np.arange(1, self.n + 1)[None, :]
        return occ

    @cached_property
    def q(self):
        out = self.theta_m[self.occupants - 1] - self.theta
        out[0] = self.q0
        out.setflags(write=False)
        return out

    def index_at(self, t):
        """Snapshot index for time ``t``; a time on a step boundary belongs to the new step."""
        end = self.t0 + self.horizon
        if not (self.t0 <= t < end + DT_SLACK * max(1.0, abs(end))):
            raise ConfigError(f"time {t} outside [{self.t0}, {end})")
        return min(int(math.floor((t - self.t0) / self.dt + 1e-9)), self.steps)

    def state(self, k):
        return ColumnState(float(self.times[k]), self.theta[k], self.q[k], self.positions[k], self.theta_m)

    @property
    def states(self):
        return [self.state(k) for k in range(self.steps + 1)]

    @property
    def jump_count(self):
        return int(len(self.events))

    def conservation_residual(self):
        occ = self.occupants - 1
        return float(np.abs(self.theta + self.q - self.theta_m[occ]).max())


def run(initial, horizon, dt, model, cfg=DEFAULT_SOLVER, validate=True,
        keep_reports=True, bounds=None, resolution=64):
    """Integrate ``initial`` over ``[t0, t0 + horizon]`` with step ``dt``.

    Runs ``ceil(horizon / dt)`` steps.  With ``validate`` every step is
    checked against the four column invariants and a failure raises
    :class:`StepInvariantError` carrying that step's report.
    """
    if not (horizon > 0 and dt > 0):
        raise ConfigError("horizon and dt must be positive")
    n = initial.n
    k_steps = step_count(horizon, dt)
    if bounds is None:
        bounds = bounds_for(initial, model, k_steps * dt, resolution, cfg)
    dt_max = max_timestep(bounds, n, horizon)
    if dt > dt_max * (1 + DT_SLACK):
        raise ConfigError(f"dt={dt} exceeds the admissible step {dt_max} for n={n}")
    tol_sat = default_tol_sat(model, cfg)
    problems = initial_violations(initial, model, cfg, tol_sat)
    if problems:
        raise ConfigError("initial state: " + "; ".join(problems))

    positions = np.empty((k_steps + 1, n), dtype=np.int64)
    positions[0] = initial.labels
    perms = np.empty((k_steps, n), dtype=np.int64)
    events = []
    reports = [] if keep_reports else None
    state = initial
    for k in range(1, k_steps + 1):
        # times are t0 + k*dt rather than accumulated sums
        state = state.replace(t=initial.t + (k - 1) * dt)
        try:
            new, beta0, report = step(state, dt, model, cfg, validate=validate, tol_sat=tol_sat)
        except StepInvariantError as exc:
            exc.step_index = k
            raise
        new = new.replace(t=initial.t + k * dt)
        changed = np.flatnonzero(new.theta_hat() != state.theta_hat())
        events.extend((k, j + 1, float(v)) for j, v in zip(changed, new.theta_hat()[changed]))
        positions[k] = new.labels
        perms[k - 1] = beta0
        if keep_reports:
            reports.append(report)
        state = new
    ev = np.array(events, dtype=float).reshape(-1, 3)
    return Trajectory(initial.t, dt, horizon, np.array(initial.theta_m), np.array(initial.theta),
                      np.array(initial.q), positions, ev, model, bounds, cfg, reports, perms)


def initial_violations(state, model, cfg=DEFAULT_SOLVER, tol_sat=None):
    """Monotone profile and saturation checks for a starting state."""
    return step_violations(None, state, model, cfg, tol_sat)


@dataclass(frozen=True)
class FlowMap:
    """Measure-preserving map translating cell ``J_i`` onto ``J_perm[i - 1]``."""

    perm: np.ndarray

    @property
    def n(self):
        return self.perm.size

    def __call__(self, z):
        z = np.asarray(z, float)
        cell = np.clip(np.floor(z * self.n).astype(np.int64), 0, self.n - 1)
        return z + (self.perm[cell] - 1 - cell) / self.n

    def grid(self):
        """Image of the cell right endpoints ``i / n``, indexed by cell."""
        return self.perm / self.n


def flow_map(traj, t):
    return FlowMap(traj.positions[traj.index_at(t)].copy())


def compose(*perms):
    """Compose position maps right to left: ``compose(b, a)[p] = b[a[p]]``."""
    out = np.arange(1, len(perms[0]) + 1)
    for perm in reversed(perms):
        out = np.asarray(perm)[out - 1]
    return out


@dataclass(frozen=True)
class LagrangianPath:
    """Position and ``theta`` of one parcel at each snapshot time."""

    label: int
    times: np.ndarray
    z: np.ndarray
    theta_hat: np.ndarray
    s: float

    def positive_variation(self):
        return float(np.clip(np.diff(self.z), 0, None).sum())

    def total_variation(self):
        return float(np.abs(np.diff(self.z)).sum())

    def at(self, t):
        k = int(np.clip(np.searchsorted(self.times, t + 1e-12, side="right") - 1, 0, self.times.size - 1))
        return self.z[k], self.theta_hat[k]


def lagrangian_paths(traj):
    times = traj.times
    z = traj.positions / traj.n
    return [
        LagrangianPath(j + 1, times, z[:, j].copy(), traj.theta_hat[:, j].copy(), float(traj.theta_m[j]))
        for j in range(traj.n)
    ]


def theta_bar(traj, t):
    """Profile linearly interpolated in time between neighbouring snapshots."""
    k = traj.index_at(t)
    if k >= traj.steps:
        return np.array(traj.theta[-1])
    frac = (t - traj.times[k]) / traj.dt
    return (1 - frac) * traj.theta[k] + frac * traj.theta[k + 1]


def _g(x):
    return format(float(x), ".17g")


def write_csv(traj, path, stride=1):
    """Rows ``t,position_index,z,theta,q,label`` for every ``stride``-th snapshot."""
    occ = traj.occupants
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "position_index", "z", "theta", "q", "label"])
        for k in range(0, traj.steps + 1, stride):
            t = traj.times[k]
            for p in range(traj.n):
                w.writerow([_g(t), p + 1, _g((p + 1) / traj.n), _g(traj.theta[k, p]),
                            _g(traj.q[k, p]), int(occ[k, p])])


def write_flow_maps(traj, path):
    """One line per snapshot: time followed by the label-to-position permutation."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"label_{j}" for j in range(1, traj.n + 1)])
        for k in range(traj.steps + 1):
            w.writerow([_g(traj.times[k])] + traj.positions[k].tolist())


def write_jsonl(traj, path):
    """Header line with run metadata, then one line per snapshot (with its step report)."""
    header = {
        "type": "header", "n": traj.n, "t0": traj.t0, "dt": traj.dt, "horizon": traj.horizon,
        "model": traj.model.to_config(), "bounds": traj.bounds.to_dict(),
        "solver": {"tolerance": traj.cfg.tolerance, "max_iter": traj.cfg.max_iter},
        "theta_m": traj.theta_m.tolist(), "meta": traj.meta,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for k in range(traj.steps + 1):
            rec = {"type": "state", "k": k, "t": float(traj.times[k]),
                   "theta": traj.theta[k].tolist(), "q": traj.q[k].tolist(),
                   "labels": traj.positions[k].tolist()}
            if k > 0 and traj.reports is not None:
                rec["report"] = traj.reports[k - 1].to_dict()
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path, base_dir=None):
    """Load a trajectory written by :func:`write_jsonl`."""
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ConfigError(f"{path}: missing header line")
    head = lines[0]
    states = [rec for rec in lines[1:] if rec.get("type") == "state"]
    if not states:
        raise ConfigError(f"{path}: no states")
    states.sort(key=lambda r: r["k"])
    model = SaturationModel.from_config(head["model"], base_dir)
    theta = np.array([r["theta"] for r in states], dtype=float)
    positions = np.array([r["labels"] for r in states], dtype=np.int64)
    theta_m = np.array(head["theta_m"], dtype=float)
    n = theta_m.size
    if theta.shape[1] != n or positions.shape[1] != n:
        raise ConfigError(f"{path}: state width does not match n={n}")
    rows = np.arange(len(states))[:, None]
    hat = theta[rows, positions - 1]
    events = [(k, j + 1, hat[k, j]) for k in range(1, len(states))
              for j in np.flatnonzero(hat[k] != hat[k - 1])]
    reports = None
    if all("report" in r for r in states[1:]):
        reports = [StepReport.from_dict(r["report"]) for r in states[1:]]
    solver = SolverConfig(**head.get("solver", {}))
    traj = Trajectory(float(head["t0"]), float(head["dt"]), float(head["horizon"]), theta_m,
                      theta[0], np.array(states[0]["q"], dtype=float), positions,
                      np.array(events, dtype=float).reshape(-1, 3), model,
                      ThetaBounds.from_dict(head["bounds"]), solver, reports, None, head.get("meta", {}))
    # the file may have been edited: keep the stored profiles, not the replayed ones
    traj.__dict__["theta"] = theta
    traj.__dict__["q"] = np.array([r["q"] for r in states], dtype=float)
    return traj
