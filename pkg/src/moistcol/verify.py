"""Executable checks of the structural properties and a-priori estimates.

Every check takes a :class:`~moistcol.simulate.Trajectory` and returns a
:class:`~moistcol.report.CheckReport`.  Checks whose constant comes from
an explicit proof (per-jump inequality, variation bound, dry persistence
window, overtake rate) are hard pass/fail.  The remaining ones measure a
constant and pass when it is finite and below an optional cap; their
stability under refinement is tested separately.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rearrange import CONSERVATION_TOL, default_tol_sat
from .report import CheckReport
from .saturation import eval_qsat, theta_inverse

HARD_TOL = 1e-9
ENERGY_BRUTE_MAX_N = 8


def _theta_sat(traj, s, z, t):
    return theta_inverse(traj.model, s, z, t, traj.cfg)


def _loc(k, label=None, position=None, **extra):
    out = {"k": int(k)}
    if label is not None:
        out["label"] = int(label)
    if position is not None:
        out["position"] = int(position)
    out.update(extra)
    return out


def check_step_invariants(traj, tol_sat=None):
    """Monotone profile, conservation, nondecreasing parcel ``theta`` and saturation at every snapshot."""
    tol = traj.cfg.tolerance
    if tol_sat is None:
        tol_sat = default_tol_sat(traj.model, traj.cfg)
    n = traj.n
    theta, q, occ = np.asarray(traj.theta), np.asarray(traj.q), traj.occupants
    z = np.arange(1, n + 1) / n
    failures = []

    perm_ok = np.all(np.sort(traj.positions, axis=1) == np.arange(1, n + 1)[None, :])
    if not perm_ok:
        k = int(np.flatnonzero(np.any(np.sort(traj.positions, axis=1) != np.arange(1, n + 1), axis=1))[0])
        failures.append(("bijection", 1.0, _loc(k)))

    drop = -np.diff(theta, axis=1) if n > 1 else np.zeros((len(theta), 0))
    worst_drop = float(drop.max()) if drop.size else 0.0
    if worst_drop > tol:
        k, p = np.unravel_index(np.argmax(drop), drop.shape)
        failures.append(("monotone", worst_drop, _loc(k, position=p + 1)))

    resid = np.abs(theta + q - traj.theta_m[occ - 1])
    worst_res = float(resid.max())
    if worst_res > CONSERVATION_TOL:
        k, p = np.unravel_index(np.argmax(resid), resid.shape)
        failures.append(("conservation", worst_res, _loc(k, label=occ[k, p], position=p + 1)))

    rows = np.arange(theta.shape[0])[:, None]
    hat = theta[rows, traj.positions - 1]
    fall = -np.diff(hat, axis=0)
    worst_fall = float(fall.max()) if fall.size else 0.0
    if worst_fall > CONSERVATION_TOL:
        k, j = np.unravel_index(np.argmax(fall), fall.shape)
        failures.append(("parcel_theta_monotone", worst_fall, _loc(k + 1, label=j + 1)))

    qsat = eval_qsat(traj.model, theta, z[None, :], traj.times[:, None])
    excess = q - qsat
    worst_excess = float(excess.max())
    if worst_excess > tol_sat:
        k, p = np.unravel_index(np.argmax(excess), excess.shape)
        failures.append(("saturation", worst_excess, _loc(k, label=occ[k, p], position=p + 1)))

    return CheckReport(
        "step_invariants", not failures,
        None if not failures else {"clause": failures[0][0], "value": failures[0][1], **failures[0][2]},
        constants={"conservation_residual": worst_res, "saturation_excess": worst_excess,
                   "monotone_drop": worst_drop, "parcel_theta_drop": worst_fall},
        tolerances={"conservation": CONSERVATION_TOL, "saturation": tol_sat, "monotone": tol},
        details={"failures": [{"clause": c, "value": v, **w} for c, v, w in failures]},
    )


def _require_reports(traj):
    if traj.reports is None:
        raise ConfigError("this check needs per-step reports; run with keep_reports=True")


def check_jump_structure(traj):
    """Replay each step's recorded jumps and check the lift/push-down structure.

    Per step: the replay reproduces the stored permutation; each jumper is
    eligible and has the largest ``theta_m`` (ties to the higher position);
    no label is lifted twice; a lifted label keeps its level; a pushed-down
    label is never lifted; a label dry at or below the current level only
    moves down.
    """
    _require_reports(traj)
    n = traj.n
    thm = traj.theta_m
    small = traj.bounds.cfl * n * traj.dt < 1
    failures = []
    lifts_total = 0

    def fail(clause, k, **where):
        failures.append({"clause": clause, **_loc(k, **where)})

    for k, rep in enumerate(traj.reports, start=1):
        occ = traj.occupants[k - 1].copy()
        pos = traj.positions[k - 1].copy()
        lifted_at = np.zeros(n, np.int64)
        pushed = np.zeros(n, bool)
        dry_watch = np.zeros(n, bool)
        seen_levels = set()
        for sub in rep.substeps:
            level = sub.k
            if level in seen_levels:
                fail("one_jumper_per_level", k, level=level)
            seen_levels.add(level)
            wet = set(sub.wet)
            if not set(sub.eligible) <= wet:
                fail("eligible_subset_of_wet", k, level=level)
            dry_now = np.array([p not in wet for p in range(1, level + 1)])
            dry_watch[occ[:level][dry_now] - 1] = True
            if sub.jumper is None:
                continue
            js = sub.jumper
            if js not in sub.eligible:
                fail("jumper_eligible", k, position=js, level=level)
            best = max(sub.eligible, key=lambda p: (thm[occ[p - 1] - 1], p)) if sub.eligible else None
            if best != js:
                fail("jumper_choice", k, position=js, level=level)
            label = int(occ[js - 1])
            if sub.jumper_label is not None and sub.jumper_label != label:
                fail("jumper_label", k, label=label, level=level)
            if lifted_at[label - 1]:
                fail("single_lift", k, label=label, level=level)
            if js < level:
                if pushed[label - 1]:
                    fail("pushed_then_lifted", k, label=label, level=level)
                if dry_watch[label - 1]:
                    fail("dry_lifted", k, label=label, level=level)
                lifted_at[label - 1] = level
                lifts_total += 1
                moved = occ[js:level].copy()
                pushed[moved - 1] = True
                occ[js - 1:level - 1] = moved
                occ[level - 1] = label
                pos[moved - 1] -= 1
                pos[label - 1] = level
            elif js > level:
                fail("jump_above_level", k, position=js, level=level)
            if small:
                held = np.flatnonzero(lifted_at)
                off = held[pos[held] != lifted_at[held]]
                if off.size:
                    fail("post_lift_fixity", k, label=off[0] + 1, level=level)
        if not np.array_equal(occ, traj.occupants[k]):
            fail("replay_matches_positions", k)
        if not np.array_equal(rep.lifted, lifted_at > 0):
            fail("lifted_flags", k)
        if not np.array_equal(rep.lift_target, lifted_at):
            fail("lift_targets", k)
        if not np.array_equal(rep.pushed_down, pushed):
            fail("pushed_down_flags", k)
        if traj.step_perms is not None:
            start = traj.positions[k - 1]
            beta = np.empty(n, np.int64)
            beta[start - 1] = traj.positions[k]
            if not np.array_equal(beta, traj.step_perms[k - 1]):
                fail("step_permutation", k)

    return CheckReport(
        "jump_structure", not failures, failures[0] if failures else None,
        constants={"lifts": lifts_total, "steps": len(traj.reports)},
        details={"post_lift_fixity_applies": bool(small), "failures": failures[:50]},
    )


def check_overtake(traj, exhaustive_max_n=64, sample_labels=16, seed=0):
    """Crossing pairs need strictly larger ``theta_m``; pairs cross at most once; ``#J <= 2 (l - k)``.

    The rate bound is checked for every label and every pair of steps when
    ``n <= exhaustive_max_n``, otherwise for ``sample_labels`` seeded labels.
    """
    n = traj.n
    pos = np.asarray(traj.positions)
    thm = traj.theta_m
    failures = []
    changes = np.zeros((n, n), np.int64)
    crossings = 0
    for k in range(traj.steps):
        before = pos[k][:, None] > pos[k][None, :]
        after = pos[k + 1][:, None] > pos[k + 1][None, :]
        cross = ~before & after  # row label overtakes column label
        if cross.any():
            j1, j2 = np.nonzero(cross)
            crossings += j1.size
            bad = thm[j1] <= thm[j2]
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                failures.append({"clause": "strict_theta_m", **_loc(k + 1, label=j1[i] + 1), "other": int(j2[i] + 1)})
            changes[j1, j2] += 1
            changes[j2, j1] += 1
    twice = np.argwhere(np.triu(changes, 1) > 1)
    if twice.size:
        failures.append({"clause": "single_crossing", "label": int(twice[0, 0] + 1),
                         "other": int(twice[0, 1] + 1), "k": -1})

    applies = traj.bounds.cfl * n * traj.dt <= 0.5 + 1e-12
    if n <= exhaustive_max_n:
        probes = np.arange(n)
    else:
        probes = np.sort(np.random.default_rng(seed).choice(n, size=min(sample_labels, n), replace=False))
    steps = np.arange(traj.steps + 1)
    gap = steps[None, :] - steps[:, None]
    upper = gap > 0
    worst_ratio, worst_where = 0.0, None
    for j0 in probes:
        below = (pos < pos[:, [j0]]).astype(np.float32)
        above = (pos > pos[:, [j0]]).astype(np.float32)
        counts = below @ above.T  # counts[k, l] = #{below at k, above at l}
        if not upper.any():
            break
        ratio = np.where(upper, counts / np.maximum(gap, 1), 0.0)
        idx = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[idx] > worst_ratio:
            worst_ratio = float(ratio[idx])
            worst_where = {"label": int(j0 + 1), "k": int(idx[0]), "l": int(idx[1]), "count": int(counts[idx])}
    if applies and worst_ratio > 2 + 1e-9:
        failures.append({"clause": "rate_bound", **worst_where})

    return CheckReport(
        "overtake", not failures, failures[0] if failures else None,
        constants={"crossings": crossings, "max_rate": worst_ratio},
        tolerances={"rate": 2.0},
        details={"rate_bound_applies": bool(applies), "exhaustive": bool(n <= exhaustive_max_n),
                 "worst_rate_location": worst_where, "failures": failures[:50]},
    )


def check_tv(traj, tol=HARD_TOL):
    """Variation of parcel heights against the rise in parcel ``theta``.

    Each step must satisfy ``d theta_hat >= inf dz Theta * (d z)+``; the
    positive variation of each path is then at most
    ``2 ||theta_hat||_inf / inf dz Theta`` and the total variation at most
    twice that plus 2.
    """
    hat = np.asarray(traj.theta_hat)
    z = traj.positions / traj.n
    inf_dz = traj.bounds.inf_dz_theta
    dz = np.diff(z, axis=0)
    dhat = np.diff(hat, axis=0)
    slack = dhat - inf_dz * np.clip(dz, 0, None)
    pv = np.clip(dz, 0, None).sum(axis=0)
    tv = np.abs(dz).sum(axis=0)
    sup = np.abs(hat).max(axis=0)
    bound = 2 * sup / inf_dz
    failures = []
    if slack.size and slack.min() < -tol:
        k, j = np.unravel_index(np.argmin(slack), slack.shape)
        failures.append({"clause": "per_jump", **_loc(k + 1, label=j + 1), "value": float(slack[k, j])})
    over = pv - bound
    if over.max() > tol:
        j = int(np.argmax(over))
        failures.append({"clause": "positive_variation", "label": j + 1, "k": -1, "value": float(pv[j])})
    over_tv = tv - (2 * bound + 2)
    if over_tv.max() > tol:
        j = int(np.argmax(over_tv))
        failures.append({"clause": "total_variation", "label": j + 1, "k": -1, "value": float(tv[j])})
    sup_all = float(np.abs(hat).max())
    return CheckReport(
        "tv", not failures, failures[0] if failures else None,
        constants={"C3": float(pv.max() / sup_all) if sup_all > 0 else 0.0,
                   "max_pv": float(pv.max()), "max_tv": float(tv.max()),
                   "min_jump_slack": float(slack.min()) if slack.size else 0.0},
        tolerances={"hard": tol},
        details={"jumps": int(np.count_nonzero(dz > 0)), "failures": failures},
    )


def epsilon_grid(traj):
    """``dt * 2**i`` up to a quarter of the horizon (at least one value)."""
    out = [traj.dt]
    while out[-1] * 2 <= traj.horizon / 4:
        out.append(out[-1] * 2)
    return np.array(out)


def _next_event(flags):
    """``out[k]`` = first ``l > k`` with ``flags[l - 1]`` true (``len(flags) + 1`` if none), per column."""
    steps, n = flags.shape
    out = np.empty((steps + 1, n), np.int64)
    nxt = np.full(n, steps + 1)
    out[steps] = nxt
    for k in range(steps - 1, -1, -1):
        nxt = np.where(flags[k], k + 1, nxt)
        out[k] = nxt
    return out


def dry_margin(traj):
    """``theta_hat - Theta(s, z, t)`` per snapshot and label."""
    s = np.broadcast_to(traj.theta_m, traj.positions.shape)
    sat = _theta_sat(traj, s, traj.positions / traj.n, traj.times[:, None] * np.ones(traj.n))
    return traj.theta_hat - sat


def check_dry_persistence(traj, epsilons=None, tol=HARD_TOL):
    """A parcel more than ``eps`` above saturation keeps its ``theta`` and does not rise for ``eps / (2 sup|dt Theta|)``.

    Checked at every snapshot and every ``eps`` in the grid.
    """
    eps_list = epsilon_grid(traj) if epsilons is None else np.asarray(epsilons, float)
    margin = dry_margin(traj)
    hat = np.asarray(traj.theta_hat)
    change = _next_event(np.abs(np.diff(hat, axis=0)) > 0)
    rise = _next_event(np.diff(traj.positions, axis=0) > 0)
    first = np.minimum(change, rise)
    c2 = 2 * traj.bounds.sup_dt_theta
    failures, tested = [], 0
    ks = np.arange(traj.steps + 1)[:, None]
    for eps in eps_list:
        window = math.inf if c2 == 0 else eps / c2
        steps = traj.steps if math.isinf(window) else int(math.floor(window / traj.dt + 1e-9))
        if steps == 0:
            continue
        dry = margin > eps + tol
        tested += int(dry.sum())
        bad = dry & (first <= np.minimum(ks + steps, traj.steps))
        if bad.any():
            k, j = np.argwhere(bad)[0]
            failures.append({"clause": "persistence", **_loc(k, label=j + 1), "eps": float(eps),
                             "window_steps": steps, "event_step": int(first[k, j])})
    return CheckReport(
        "dry_persistence", not failures, failures[0] if failures else None,
        constants={"tested": tested, "C2": c2},
        tolerances={"margin": tol},
        details={"epsilons": eps_list.tolist(), "failures": failures[:50]},
    )


def check_increment_formula(traj, samples=32, seed=0, epsilons=None, c_max=math.inf):
    """Measure ``|d theta_hat - (d Theta(s, z, t))+| / (eps + dt)`` over ``t +- eps``.

    ``samples`` seeded base times are drawn per label and ``eps``.
    """
    rng = np.random.default_rng(seed)
    eps_list = epsilon_grid(traj) if epsilons is None else np.asarray(epsilons, float)
    n, t0, end = traj.n, traj.t0, traj.t0 + traj.horizon
    worst, where = 0.0, None
    for eps in eps_list:
        lo, hi = t0 + eps, end - eps
        if hi <= lo:
            continue
        t = rng.uniform(lo, hi, size=(n, samples))
        a = np.minimum(np.floor((t - eps - t0) / traj.dt + 1e-9).astype(np.int64), traj.steps)
        b = np.minimum(np.floor((t + eps - t0) / traj.dt + 1e-9).astype(np.int64), traj.steps)
        lab = np.broadcast_to(np.arange(n)[:, None], t.shape)
        s = traj.theta_m[lab]
        za = traj.positions[a, lab] / n
        zb = traj.positions[b, lab] / n
        sat = _theta_sat(traj, np.stack([s, s]), np.stack([zb, za]), np.stack([t + eps, t - eps]))
        kappa = traj.theta_hat[b, lab] - traj.theta_hat[a, lab] - np.clip(sat[0] - sat[1], 0, None)
        ratio = np.abs(kappa) / (eps + traj.dt)
        i = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[i] > worst:
            worst = float(ratio[i])
            where = {"label": int(i[0] + 1), "t": float(t[i]), "eps": float(eps), "k": int(a[i])}
    passed = math.isfinite(worst) and worst <= c_max
    return CheckReport(
        "increment_formula", passed, where if not passed else None,
        constants={"C4": worst}, tolerances={"c_max": c_max},
        details={"worst": where, "samples": samples, "seed": seed, "epsilons": eps_list.tolist()},
    )


def _snapshot_pairs(steps, max_pairs, rng):
    total = (steps + 1) * steps // 2
    if total <= max_pairs:
        i, j = np.triu_indices(steps + 1, 1)
        return i, j
    i = rng.integers(0, steps + 1, size=max_pairs)
    j = rng.integers(0, steps + 1, size=max_pairs)
    keep = i != j
    return np.minimum(i, j)[keep], np.maximum(i, j)[keep]


def check_continuity(traj, max_pairs=20_000, seed=0, c_max=math.inf):
    """Measure ``||theta(t) - theta(s)||_1`` and ``||F_t - F_s||_1`` against ``sqrt(t - s + dt)``."""
    rng = np.random.default_rng(seed)
    i, j = _snapshot_pairs(traj.steps, max_pairs, rng)
    if i.size == 0:
        return CheckReport("continuity", True, constants={"C5": 0.0, "C6": 0.0})
    scale = np.sqrt((j - i) * traj.dt + traj.dt)
    theta = np.asarray(traj.theta)
    z = traj.positions / traj.n
    c5 = np.abs(theta[j] - theta[i]).mean(axis=1) / scale
    c6 = np.abs(z[j] - z[i]).mean(axis=1) / scale
    c5max, c6max = float(c5.max()), float(c6.max())
    passed = c5max <= c_max and c6max <= c_max
    where = None
    if not passed:
        m = int(np.argmax(np.maximum(c5, c6)))
        where = {"k": int(i[m]), "l": int(j[m])}
    return CheckReport("continuity", passed, where, constants={"C5": c5max, "C6": c6max},
                       tolerances={"c_max": c_max}, details={"pairs": int(i.size)})


def check_linf(traj, tol=None):
    """``|theta| <= max(M, sup|Theta|)`` and ``|q| <= M + max(M, sup|Theta|)`` with ``M = max|theta_m|``."""
    tol = traj.cfg.tolerance if tol is None else tol
    m = float(np.abs(traj.theta_m).max())
    cap = max(m, traj.bounds.sup_abs_theta, float(np.abs(traj.theta[0]).max()))
    th = float(np.abs(traj.theta).max())
    qq = float(np.abs(traj.q).max())
    failures = []
    if th > cap + tol:
        k, p = np.unravel_index(np.argmax(np.abs(traj.theta)), traj.theta.shape)
        failures.append({"clause": "theta", **_loc(k, position=p + 1)})
    if qq > m + cap + tol:
        k, p = np.unravel_index(np.argmax(np.abs(traj.q)), traj.q.shape)
        failures.append({"clause": "q", **_loc(k, position=p + 1)})
    return CheckReport("linf", not failures, failures[0] if failures else None,
                       constants={"max_abs_theta": th, "max_abs_q": qq},
                       tolerances={"theta_bound": cap, "q_bound": m + cap, "tol": tol})


@dataclass(frozen=True)
class WetnessPath:
    """Lagrangian saturation record of one parcel.

    ``f`` is its ``theta`` and ``g = s - Q(f, gamma, t)`` the lowest
    ``theta`` compatible with saturation; both are sampled at the snapshot
    times and held constant in between.
    """

    label: int
    times: np.ndarray
    f: np.ndarray
    g: np.ndarray
    gamma: np.ndarray
    s: float
    tol: float
    g_rate: float

    @property
    def wet(self):
        return np.abs(self.f - self.g) <= self.tol


def wet_tolerance(traj):
    """Closeness to saturation in ``g`` units: a ``theta`` gap of ``tol + sup|dt Theta| dt`` scaled by ``1 + sup dtheta Q``."""
    b = traj.bounds
    return (traj.cfg.tolerance + b.sup_dt_theta * traj.dt) * (1 + b.sup_dtheta_q)


def wetness_path(traj, label):
    j = label - 1
    f = np.array(traj.theta_hat[:, j])
    gamma = traj.positions[:, j] / traj.n
    s = float(traj.theta_m[j])
    g = s - eval_qsat(traj.model, f, gamma, traj.times)
    return WetnessPath(label, traj.times, f, np.asarray(g, float), gamma, s,
                       wet_tolerance(traj), traj.bounds.sup_abs_dt_q)


def wetness_paths(traj):
    return [wetness_path(traj, j) for j in range(1, traj.n + 1)]


def check_wet_measure(path, tol=None, rate=None):
    """Discrete form of the increment-measure property for one path.

    (a) ``f`` only increases from wet times; (b) each increase equals the
    positive part of the ``g`` increment; (c) over dry steps ``f`` is
    constant and ``g`` grows at most ``rate * dt``; (d) summed over wet
    steps, the ``f`` increase matches the positive ``g`` variation within
    one ``tol`` per wet step.  ``f >= g - tol`` is checked throughout.
    """
    tol = path.tol if tol is None else tol
    rate = path.g_rate if rate is None else rate
    f, g = path.f, path.g
    df = np.diff(f)
    if df.size and df.min() < -CONSERVATION_TOL:
        raise ConfigError(f"label {path.label}: f is not nondecreasing")
    dg = np.diff(g)
    dt = np.diff(path.times)
    wet = path.wet[:-1]
    rises = df > CONSERVATION_TOL
    failures = []

    def fail(clause, k, value):
        failures.append({"clause": clause, **_loc(k, label=path.label), "value": float(value)})

    below = g - f
    if below.max() > tol:
        k = int(np.argmax(below))
        fail("constraint", k, below[k])
    off_wet = rises & ~wet
    if off_wet.any():
        k = int(np.flatnonzero(off_wet)[0])
        fail("increment_on_wet_set", k, abs(f[k] - g[k]))
    mismatch = np.abs(df - np.clip(dg, 0, None))
    bad = rises & (mismatch > tol)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        fail("jump_size", k, mismatch[k])
    dry = ~wet
    if np.any(rises & dry):
        k = int(np.flatnonzero(rises & dry)[0])
        fail("dry_constant", k, df[k])
    excess = np.where(dry, dg - rate * dt, -np.inf)
    if excess.size and excess.max() > tol:
        k = int(np.argmax(excess))
        fail("dry_g_rate", k, excess[k])
    total_f = float(df[wet].sum())
    total_g = float(np.clip(dg[wet], 0, None).sum())
    budget = max(int(wet.sum()), 1) * tol
    if abs(total_f - total_g) > budget:
        fail("aggregate", -1, total_f - total_g)
    measured_rate = float(np.max(np.where(dry, dg / dt, -np.inf))) if np.any(dry) else 0.0
    return CheckReport(
        "wet_measure", not failures, failures[0] if failures else None,
        constants={"f_increase": total_f, "g_positive_variation": total_g,
                   "max_jump_mismatch": float(mismatch[rises].max()) if rises.any() else 0.0,
                   "dry_g_rate": measured_rate},
        tolerances={"tol": tol, "rate": rate, "aggregate": budget},
        details={"label": path.label, "jumps": int(rises.sum()), "wet_steps": int(wet.sum()),
                 "failures": failures},
    )


def check_wet_measure_all(traj, tol=None):
    """Run :func:`check_wet_measure` on every label and merge the results.

    A path whose ``f`` decreases is reported as a failing label rather than
    aborting the whole check.
    """
    reports, bad = [], []
    for p in wetness_paths(traj):
        try:
            rep = check_wet_measure(p, tol)
        except ConfigError as exc:
            k = int(np.argmin(np.diff(p.f)))
            rep = CheckReport("wet_measure", False,
                              {"clause": "f_monotone", **_loc(k + 1, label=p.label), "error": str(exc)},
                              details={"label": p.label, "jumps": 0})
        reports.append(rep)
        if not rep.passed:
            bad.append(rep)
    good = [r for r in reports if r.constants]
    return CheckReport(
        "wet_measure", not bad, bad[0].worst if bad else None,
        constants={"max_jump_mismatch": max((r.constants["max_jump_mismatch"] for r in good), default=0.0),
                   "jumps": sum(r.details["jumps"] for r in reports)},
        tolerances=good[0].tolerances if good else {},
        details={"failing_labels": [r.details["label"] for r in bad]},
    )


def energy(theta):
    """Discrete energy ``-sum_j z_j theta_j / n`` of a position-indexed profile."""
    theta = np.asarray(theta, float)
    n = theta.shape[-1]
    z = np.arange(1, n + 1) / n
    return -(theta * z).sum(axis=-1) / n


def brute_force_min_energy(theta):
    """Smallest energy over every rearrangement of ``theta`` (``n <= 8``)."""
    theta = np.asarray(theta, float)
    if theta.size > ENERGY_BRUTE_MAX_N:
        raise ConfigError(f"exhaustive search limited to n <= {ENERGY_BRUTE_MAX_N}")
    perms = np.array(list(itertools.permutations(range(theta.size))))
    return float(energy(theta[perms]).min())


def certify_energy(theta, tol=1e-12):
    """``(energy, minimum, minimal)`` with the minimum from exhaustive search."""
    e = float(energy(theta))
    best = brute_force_min_energy(theta)
    return e, best, e <= best + tol * max(1.0, abs(best))


def check_energy(traj):
    """Every snapshot profile has the least energy among its rearrangements."""
    if traj.n > ENERGY_BRUTE_MAX_N:
        raise ConfigError(f"energy certificate needs n <= {ENERGY_BRUTE_MAX_N}")
    failures, values = [], []
    for k in range(traj.steps + 1):
        e, best, ok = certify_energy(traj.theta[k])
        values.append(e)
        if not ok:
            failures.append({"k": k, "energy": e, "minimum": best})
    return CheckReport("energy", not failures, failures[0] if failures else None,
                       constants={"final_energy": values[-1]}, details={"energies": values})


def run_checks(traj, include_energy=None, seed=0):
    """All trajectory checks in a fixed order."""
    reports = [
        check_step_invariants(traj),
        check_linf(traj),
        check_tv(traj),
        check_overtake(traj, seed=seed),
        check_dry_persistence(traj),
        check_increment_formula(traj, seed=seed),
        check_continuity(traj, seed=seed),
        check_wet_measure_all(traj),
    ]
    if traj.reports is not None:
        reports.insert(1, check_jump_structure(traj))
    if include_energy or (include_energy is None and traj.n <= ENERGY_BRUTE_MAX_N):
        reports.append(check_energy(traj))
    return reports
