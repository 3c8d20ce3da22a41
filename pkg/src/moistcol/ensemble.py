"""Finite ensembles over random moisture assignments.

Initial data is a weighted mixture of ``theta`` profiles.  For each profile
every cell carries a discrete law of the conserved value ``s = theta + q``.
An assignment ``sigma`` picks one atom per cell; each assignment gives one
deterministic column run, weighted by the product of its atom
probabilities (exhaustive mode) or by sampling frequency (Monte Carlo).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError, EnsembleMemberError, MoistcolError
from .rearrange import ColumnState
from .report import CheckReport
from .saturation import DEFAULT_SOLVER, DomainBox, compute_bounds, theta_inverse
from .simulate import run, step_count

ENUMERATION_CAP = 10**6
PROB_TOL = 1e-12


@dataclass(frozen=True)
class CellLaw:
    """Atoms ``values`` with probabilities ``probs`` for one cell."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, float))
        p = np.atleast_1d(np.asarray(self.probs, float))
        if v.shape != p.shape or v.size == 0:
            raise ConfigError("a cell needs matching, nonempty atom values and probabilities")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def dirac(cls, value):
        return cls([value], [1.0])


@dataclass(frozen=True)
class Profile:
    weight: float
    theta: np.ndarray
    cells: tuple  # one CellLaw per cell, bottom to top

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, float))
        object.__setattr__(self, "cells", tuple(self.cells))
        if len(self.cells) != self.theta.size:
            raise ConfigError(f"profile has {self.theta.size} values but {len(self.cells)} cell laws")

    @property
    def sigma_count(self):
        return math.prod(c.values.size for c in self.cells)

    def state(self, sigma, t0=0.0):
        """Column state for the assignment ``sigma`` (0-based atom index per cell)."""
        s = np.array([c.values[j] for c, j in zip(self.cells, sigma)])
        return ColumnState.initial(self.theta, s - self.theta, t0)


@dataclass(frozen=True)
class InitialEnsemble:
    """Discretised initial data: weighted profiles with per-cell atom laws.

    ``shift_c`` is the downward shift applied to atoms built from
    histograms (None when atoms were given directly).  Construction does
    not validate; use :func:`check_admissibility`.
    """

    n: int
    K: float
    profiles: tuple
    model: object
    shift_c: float | None = None
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise ConfigError("ensemble needs at least one profile")
        for p in self.profiles:
            if p.theta.size != self.n:
                raise ConfigError(f"profile of length {p.theta.size} in an n={self.n} ensemble")

    @classmethod
    def dirac(cls, state, model, K=None):
        """Single-profile ensemble with one atom per cell, reproducing ``state``."""
        if np.any(state.labels != np.arange(1, state.n + 1)):
            raise ConfigError("Dirac ensembles start from the identity labelling")
        s = state.theta + state.q
        K = float(np.abs(s).max()) if K is None else K
        prof = Profile(1.0, state.theta, [CellLaw.dirac(v) for v in s])
        return cls(state.n, K, (prof,), model, None, state.t)

    @property
    def w_max(self):
        """Largest ``|theta| + |q|`` over every profile and atom."""
        out = 0.0
        for p in self.profiles:
            s = np.concatenate([c.values for c in p.cells])
            q = np.concatenate([c.values - th for c, th in zip(p.cells, p.theta)])
            out = max(out, float(np.abs(p.theta).max() + np.abs(q).max()), float(np.abs(s).max()))
        return max(out, 1e-12)


def discretize_profile(theta, n, tol=0.0):
    """Sample a nondecreasing profile at ``z_i = i / n``.

    ``theta`` is a callable of ``z`` or an array of nodal values at
    ``l / m`` for ``l = 1..m`` with ``n`` dividing ``m``.
    """
    if callable(theta):
        vals = np.asarray(theta(np.arange(1, n + 1) / n), float) * np.ones(n)
        check = vals
    else:
        arr = np.asarray(theta, float).ravel()
        m = arr.size
        if m == 0 or m % n:
            raise ConfigError(f"profile of length {m} cannot be sampled at n={n}")
        vals = arr[m // n - 1 :: m // n]
        check = arr
    if not np.all(np.isfinite(check)):
        raise ConfigError("profile has non-finite values")
    if np.any(np.diff(check) < -tol):
        raise ConfigError("profile must be nondecreasing in z")
    return vals.copy()


def bin_right_edges(n_bins, K):
    """Right endpoints ``w_j = -K + 2K j / n_bins`` of the moisture bins."""
    return -K + 2.0 * K * np.arange(1, n_bins + 1) / n_bins


def default_shift(K, bounds):
    return 2.0 * K + bounds.sup_dz_theta / bounds.inf_dw_theta + 1.0


def histogram_from_samples(s, z, n, K, n_bins=None):
    """Per-cell mass histogram of ``(s, z)`` samples, shape ``(n, n_bins)``.

    Cell ``i`` is ``[(i-1)/n, i/n)``; bin ``j`` is the first whose right
    endpoint is ``>= s``.
    """
    s = np.asarray(s, float).ravel()
    z = np.asarray(z, float).ravel()
    n_bins = n if n_bins is None else n_bins
    if s.shape != z.shape:
        raise ConfigError("s and z samples differ in length")
    if np.any(np.abs(s) > K):
        raise ConfigError(f"samples with |s| > K={K}")
    if np.any((z < 0) | (z > 1)):
        raise ConfigError("z samples outside [0, 1]")
    cell = np.minimum((z * n).astype(np.int64), n - 1)
    j = np.minimum(np.searchsorted(bin_right_edges(n_bins, K), s, side="left"), n_bins - 1)
    masses = np.zeros((n, n_bins))
    np.add.at(masses, (cell, j), 1.0 / s.size)
    return masses


def discretize_conditional(masses, n, K, bounds, shift_c=None, theta=None, model=None,
                           cfg=DEFAULT_SOLVER):
    """Turn per-cell bin masses into atom laws.

    Mass in bin ``j`` of cell ``i`` becomes an atom at ``w_j - shift_c / n``
    with probability proportional to that mass.  When ``theta`` and
    ``model`` are given the shifted atoms are checked against the
    saturation constraint at ``t = 0``.

    Returns ``(cells, shift_c)``.
    """
    masses = np.asarray(masses, float)
    if masses.ndim != 2 or masses.shape[0] != n:
        raise ConfigError(f"masses must have shape (n={n}, bins)")
    if np.any(masses < 0) or not np.all(np.isfinite(masses)):
        raise ConfigError("masses must be finite and nonnegative")
    totals = masses.sum(axis=1)
    if np.any(totals <= 0):
        raise ConfigError(f"empty cells: {(np.flatnonzero(totals <= 0) + 1).tolist()}")
    floor_c = 2.0 * K + bounds.sup_dz_theta / bounds.inf_dw_theta
    if shift_c is None:
        shift_c = floor_c + 1.0
    elif not shift_c > floor_c:
        raise ConfigError(f"shift constant {shift_c} must exceed {floor_c}")
    edges = bin_right_edges(masses.shape[1], K)
    cells = []
    for i in range(n):
        keep = masses[i] > 0
        cells.append(CellLaw(edges[keep] - shift_c / n, masses[i, keep] / totals[i]))
    if theta is not None and model is not None:
        theta = np.asarray(theta, float)
        z = np.arange(1, n + 1) / n
        for i, cell in enumerate(cells):
            floor = theta_inverse(model, cell.values, z[i], 0.0, cfg)
            if np.any(theta[i] < floor - cfg.tolerance):
                raise ConfigError(f"cell {i + 1}: shifted atoms violate the saturation constraint")
    return cells, shift_c


def from_histograms(profiles, weights, masses, K, model, shift_c=None, bounds=None,
                    cfg=DEFAULT_SOLVER):
    """Build an ensemble from profiles and per-profile histograms of ``s``."""
    profiles = [np.asarray(p, float) for p in profiles]
    n = profiles[0].size
    if len(masses) != len(profiles) or len(weights) != len(profiles):
        raise ConfigError("need one weight and one histogram per profile")
    if bounds is None:
        w_max = max(K, max(float(np.abs(p).max()) for p in profiles)) * 2 + 1
        bounds = compute_bounds(model, DomainBox(w_max, 1.0), cfg=cfg)
    out = []
    for th, w, mass in zip(profiles, weights, masses):
        cells, shift_c = discretize_conditional(mass, n, K, bounds, shift_c, th, model, cfg)
        out.append(Profile(float(w), th, cells))
    return InitialEnsemble(n, K, out, model, shift_c)


def enumerate_sigmas(ens, m, cap=ENUMERATION_CAP):
    """All assignments for profile ``m`` with their product probabilities, in lexicographic order."""
    prof = ens.profiles[m]
    if prof.sigma_count > cap:
        raise ConfigError(f"{prof.sigma_count} assignments exceed the enumeration cap {cap}; sample instead")
    out = []
    for sigma in itertools.product(*(range(c.values.size) for c in prof.cells)):
        p = 1.0
        for c, j in zip(prof.cells, sigma):
            p *= c.probs[j]
        out.append((sigma, p))
    return out


def sample_sigmas(ens, m, count, seed):
    """``count`` independent assignments for profile ``m``, shape ``(count, n)``.

    ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    if count < 1:
        raise ConfigError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((count, ens.n))
    out = np.empty((count, ens.n), dtype=np.int64)
    for i, cell in enumerate(ens.profiles[m].cells):
        cdf = np.cumsum(cell.probs)
        cdf /= cdf[-1]
        out[:, i] = np.minimum(np.searchsorted(cdf, u[:, i], side="right"), cell.values.size - 1)
    return out


@dataclass
class EnsembleRun:
    profile: int
    sigma: tuple
    weight: float
    trajectory: object
    count: int = 1


@dataclass
class EnsembleResult:
    runs: list
    mode: str
    ensemble: InitialEnsemble
    dt: float
    horizon: float
    bounds: object
    seed: int | None = None
    samples: int | None = None

    @property
    def total_weight(self):
        return math.fsum(r.weight for r in self.runs)


def _run_member(args):
    state, horizon, dt, model, cfg, validate, bounds = args
    return run(state, horizon, dt, model, cfg, validate=validate, keep_reports=False, bounds=bounds)


def run_ensemble(ens, horizon, dt, mode="exhaustive", samples=10_000, seed=0, workers=1,
                 cfg=DEFAULT_SOLVER, validate=True, cap=ENUMERATION_CAP):
    """Run every member of ``ens`` and weight the trajectories.

    In Monte Carlo mode each profile draws ``samples`` assignments from its
    own child seed; repeated assignments share one run whose weight is
    ``w_m * count / samples``.  Results are ordered by (profile, sigma)
    whatever the worker count.
    """
    if mode not in ("exhaustive", "montecarlo"):
        raise ConfigError(f"unknown ensemble mode {mode!r}")
    k_steps = step_count(horizon, dt)
    bounds = compute_bounds(ens.model, DomainBox(ens.w_max, k_steps * dt), cfg=cfg)
    members = []
    if mode == "exhaustive":
        for m, prof in enumerate(ens.profiles):
            for sigma, p in enumerate_sigmas(ens, m, cap):
                members.append((m, sigma, prof.weight * p, 1))
    else:
        children = np.random.SeedSequence(seed).spawn(len(ens.profiles))
        for m, prof in enumerate(ens.profiles):
            draws = sample_sigmas(ens, m, samples, children[m])
            uniq, counts = np.unique(draws, axis=0, return_counts=True)
            for sigma, cnt in zip(uniq, counts):
                members.append((m, tuple(int(x) for x in sigma), prof.weight * cnt / samples, int(cnt)))
    jobs = [(ens.profiles[m].state(sigma, ens.t0), horizon, dt, ens.model, cfg, validate, bounds)
            for m, sigma, _, _ in members]
    trajs = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_member, job) for job in jobs]
            for (m, sigma, _, _), fut in zip(members, futures):
                try:
                    trajs.append(fut.result())
                except MoistcolError as exc:
                    raise EnsembleMemberError(f"member {(m, sigma)} failed: {exc}", (m, sigma)) from exc
    else:
        for (m, sigma, _, _), job in zip(members, jobs):
            try:
                trajs.append(_run_member(job))
            except MoistcolError as exc:
                raise EnsembleMemberError(f"member {(m, sigma)} failed: {exc}", (m, sigma)) from exc
    runs = [EnsembleRun(m, tuple(sigma), w, tr, cnt) for (m, sigma, w, cnt), tr in zip(members, trajs)]
    return EnsembleResult(runs, mode, ens, dt, horizon, bounds,
                          seed if mode == "montecarlo" else None,
                          samples if mode == "montecarlo" else None)


@dataclass(frozen=True)
class EmpiricalMarginal:
    """Weighted samples at time ``t``.

    ``theta`` is position-indexed; ``theta_m`` and ``positions`` are
    label-indexed, and a label is its starting cell.
    """

    t: float
    weights: np.ndarray
    theta: np.ndarray
    theta_m: np.ndarray
    positions: np.ndarray

    @property
    def n(self):
        return self.theta.shape[1]

    def occupants(self):
        occ = np.empty_like(self.positions)
        rows = np.arange(len(self.weights))[:, None]
        occ[rows, self.positions - 1] = np.arange(1, self.n + 1)[None, :]
        return occ

    def position_law(self):
        """Weighted distribution of positions over all labels (uniform when measure-preserving)."""
        out = np.zeros(self.n)
        for w, pos in zip(self.weights, self.positions):
            np.add.at(out, pos - 1, w / self.n)
        return out

    def observable(self, name, cell=None):
        """Per-sample scalar values of an observable at cell ``cell`` (1-based)."""
        if name == "theta":
            return self.theta[:, cell - 1]
        if name == "thetaM":
            occ = self.occupants()[:, cell - 1]
            return self.theta_m[np.arange(len(self.weights)), occ - 1]
        if name == "flow":
            return self.positions[:, cell - 1] / self.n
        raise ConfigError(f"unknown observable {name!r}")


def marginal(res, t):
    """Empirical marginal of an ensemble at time ``t`` (new-step convention on boundaries)."""
    rows = []
    for r in res.runs:
        k = r.trajectory.index_at(t)
        rows.append((r.weight, r.trajectory.theta[k], r.trajectory.theta_m, r.trajectory.positions[k]))
    w, th, tm, pos = zip(*rows)
    return EmpiricalMarginal(float(t), np.array(w), np.array(th), np.array(tm), np.array(pos))


def w1_1d(x, wx, y, wy):
    """Wasserstein-1 distance between two weighted point sets on the line."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    wx = np.asarray(wx, float) / np.sum(wx)
    wy = np.asarray(wy, float) / np.sum(wy)
    pts = np.concatenate([x, y])
    mass = np.concatenate([wx, -wy])
    order = np.argsort(pts, kind="stable")
    pts, mass = pts[order], mass[order]
    gap = np.diff(pts)
    return float(np.sum(np.abs(np.cumsum(mass)[:-1]) * gap))


def _dedup_rows(rows, weights):
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    w = np.zeros(len(uniq))
    np.add.at(w, inv.ravel(), weights)
    return uniq, w


def profile_w1(a, b):
    """Transport distance between profile laws with the ``L2`` ground metric, solved exactly as an LP."""
    xa, wa = _dedup_rows(a.theta, a.weights / a.weights.sum())
    xb, wb = _dedup_rows(b.theta, b.weights / b.weights.sum())
    cost = np.sqrt(((xa[:, None, :] - xb[None, :, :]) ** 2).mean(axis=2))
    na, nb = len(wa), len(wb)
    if na == 1 or nb == 1:
        return float(np.sum(cost * (wa[:, None] * wb[None, :])))
    rows_a = np.kron(np.eye(na), np.ones(nb))
    rows_b = np.kron(np.ones(na), np.eye(nb))
    res = linprog(cost.ravel(), A_eq=np.vstack([rows_a, rows_b]), b_eq=np.concatenate([wa, wb]),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise MoistcolError(f"transport LP failed: {res.message}")
    return float(res.fun)


def marginal_distance(a, b, observable):
    """Distance between two marginals under ``observable``.

    ``observable`` is ``("theta", i)``, ``("thetaM", i)``, ``("flow", i)``
    with ``i`` a 1-based cell, or ``"profile"`` for the transport distance
    between whole profiles.
    """
    if observable == "profile":
        return profile_w1(a, b)
    try:
        name, cell = observable
    except (TypeError, ValueError):
        raise ConfigError(f"unknown observable {observable!r}") from None
    if not 1 <= int(cell) <= a.n:
        raise ConfigError(f"cell {cell} outside 1..{a.n}")
    return w1_1d(a.observable(name, int(cell)), a.weights, b.observable(name, int(cell)), b.weights)


def mc_tolerance(exact, observable, count, k_sigma=3.0):
    """``k_sigma`` times the expected sampling error of a 1-D CDF with ``count`` draws.

    Integrates the pointwise binomial standard deviation
    ``sqrt(F (1 - F) / count)`` of the exact CDF ``F``.
    """
    name, cell = observable
    x = exact.observable(name, int(cell))
    w = exact.weights / exact.weights.sum()
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cdf = np.cumsum(w)[:-1]
    sd = np.sqrt(np.clip(cdf * (1 - cdf), 0, None) / count)
    return float(k_sigma * np.sum(sd * np.diff(x)))


def check_admissibility(ens, cfg=DEFAULT_SOLVER, bounds=None):
    """Clause-by-clause validity report for an initial ensemble."""
    clauses = {}
    worst = None

    def record(name, ok, detail, where=None):
        nonlocal worst
        clauses[name] = {"passed": bool(ok), "detail": detail}
        if not ok and worst is None:
            worst = {"clause": name, **(where or {})}

    weights = np.array([p.weight for p in ens.profiles])
    record("weights", np.all(weights > 0) and abs(weights.sum() - 1) <= PROB_TOL,
           f"sum={weights.sum():.17g}")

    bad = [(m, int(np.argmin(np.diff(p.theta))) + 1) for m, p in enumerate(ens.profiles)
           if p.theta.size > 1 and np.diff(p.theta).min() < 0]
    record("monotone", not bad, f"decreasing pairs (profile, position): {bad}",
           {"profile": bad[0][0], "position": bad[0][1]} if bad else None)

    bad = [(m, i + 1) for m, p in enumerate(ens.profiles) for i, c in enumerate(p.cells)
           if np.any(c.probs < 0) or abs(c.probs.sum() - 1) > PROB_TOL]
    record("probabilities", not bad, f"bad cells (profile, cell): {bad}",
           {"profile": bad[0][0], "cell": bad[0][1]} if bad else None)

    lim = ens.K + 1
    bad = [(m, i + 1) for m, p in enumerate(ens.profiles) for i, c in enumerate(p.cells)
           if np.any(np.abs(c.values[c.probs > 0]) > lim)]
    record("support", not bad, f"atoms outside [-{lim}, {lim}] (profile, cell): {bad}",
           {"profile": bad[0][0], "cell": bad[0][1]} if bad else None)

    z = np.arange(1, ens.n + 1) / ens.n
    gap, where = np.inf, None
    for m, p in enumerate(ens.profiles):
        for i, c in enumerate(p.cells):
            live = c.values[c.probs > 0]
            if live.size == 0:
                continue
            margin = p.theta[i] - theta_inverse(ens.model, live, z[i], ens.t0, cfg)
            if margin.min() < gap:
                gap, where = float(margin.min()), {"profile": m, "cell": i + 1}
    record("constraint", gap >= -cfg.tolerance, f"min theta - Theta(s) = {gap:.3e}",
           where)

    if ens.shift_c is not None:
        if bounds is None:
            bounds = compute_bounds(ens.model, DomainBox(ens.w_max + ens.K + 1, 1.0), cfg=cfg)
        floor_c = 2 * ens.K + bounds.sup_dz_theta / bounds.inf_dw_theta
        record("shift", ens.shift_c > floor_c, f"C={ens.shift_c} vs floor {floor_c}", {"shift_c": ens.shift_c})

    passed = all(c["passed"] for c in clauses.values())
    return CheckReport("admissibility", passed, worst if not passed else None,
                       tolerances={"probability": PROB_TOL, "theta": cfg.tolerance},
                       details={"clauses": clauses})


def read_histogram_csv(path, n, n_bins=None):
    """Read ``cell,binIndex,mass`` rows (1-based indices) into an ``(n, n_bins)`` array."""
    n_bins = n if n_bins is None else n_bins
    masses = np.zeros((n, n_bins))
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"cell", "binIndex", "mass"} <= set(reader.fieldnames):
                raise ConfigError(f"{path}: expected columns cell,binIndex,mass")
            for line, row in enumerate(reader, start=2):
                try:
                    i, j, mass = int(row["cell"]), int(row["binIndex"]), float(row["mass"])
                except (TypeError, ValueError):
                    raise ConfigError(f"{path}:{line}: unparseable row {row}") from None
                if not (1 <= i <= n and 1 <= j <= n_bins):
                    raise ConfigError(f"{path}:{line}: cell or bin out of range")
                masses[i - 1, j - 1] += mass
    except OSError as exc:
        raise ConfigError(f"cannot read histogram {path}: {exc}") from exc
    return masses


def write_members_jsonl(res, path):
    """One summary line per member run."""
    with open(path, "w") as fh:
        head = {"type": "header", "mode": res.mode, "n": res.ensemble.n, "K": res.ensemble.K,
                "shift_c": res.ensemble.shift_c, "dt": res.dt, "horizon": res.horizon,
                "seed": res.seed, "samples": res.samples, "bounds": res.bounds.to_dict()}
        fh.write(json.dumps(head) + "\n")
        for r in res.runs:
            tr = r.trajectory
            fh.write(json.dumps({
                "type": "member", "profile": r.profile, "sigma": list(r.sigma), "weight": r.weight,
                "count": r.count, "jumps": tr.jump_count, "theta_m": tr.theta_m.tolist(),
                "final_theta": tr.theta[-1].tolist(), "final_positions": tr.positions[-1].tolist(),
            }) + "\n")


def write_marginal_csv(marg, path):
    """Rows ``sample,weight,position_index,z,theta,label,s`` for each weighted sample."""
    occ = marg.occupants()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "weight", "position_index", "z", "theta", "label", "s"])
        for r in range(len(marg.weights)):
            for p in range(marg.n):
                lab = int(occ[r, p])
                w.writerow([r, format(marg.weights[r], ".17g"), p + 1, format((p + 1) / marg.n, ".17g"),
                            format(marg.theta[r, p], ".17g"), lab, format(marg.theta_m[r, lab - 1], ".17g")])
