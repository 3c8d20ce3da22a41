"""One time step of the parcel rearrangement.

Positions, labels and the cascade index ``k`` are 1-based throughout the
public API, with ``z_p = p / n``.  Arrays are stored 0-based, so the value
at position ``p`` is ``theta[p - 1]``.

Within a step the target level ``k`` runs from ``n`` down to 1.  At each
level the wet parcels at or below ``k`` that beat every parcel between
themselves and ``k`` are eligible; the eligible parcel with the largest
conserved ``theta + q`` moves to ``k`` and takes the saturated ``theta``
there, while the parcels it passes shift down by one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StepInvariantError
from .saturation import DEFAULT_SOLVER, ModelKind, eval_qsat, theta_inverse

CONSERVATION_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ColumnState:
    """A discrete column at time ``t``.

    ``theta`` and ``q`` are indexed by position; ``labels[j - 1]`` is the
    current position of parcel ``j`` and ``theta_m[j - 1]`` its conserved
    ``theta + q`` fixed at construction.
    """

    t: float
    theta: np.ndarray
    q: np.ndarray
    labels: np.ndarray
    theta_m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))
        object.__setattr__(self, "q", _frozen(self.q))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "theta_m", _frozen(self.theta_m))
        n = self.theta.size
        if not (self.q.size == self.labels.size == self.theta_m.size == n) or n == 0:
            raise ConfigError("theta, q, labels and theta_m must have the same nonzero length")
        if not np.array_equal(np.sort(self.labels), np.arange(1, n + 1)):
            raise ConfigError("labels must be a permutation of 1..n")

    @classmethod
    def initial(cls, theta, q, t=0.0):
        """Column with parcel ``j`` at position ``j`` and ``theta_m = theta + q``."""
        theta = np.asarray(theta, float)
        q = np.asarray(q, float)
        if theta.shape != q.shape or theta.ndim != 1:
            raise ConfigError("theta and q must be 1-d arrays of equal length")
        return cls(float(t), theta, q, np.arange(1, theta.size + 1), theta + q)

    @property
    def n(self):
        return self.theta.size

    @property
    def z(self):
        return np.arange(1, self.n + 1) / self.n

    def occupants(self):
        """Label at each position (inverse of ``labels``)."""
        occ = np.empty(self.n, dtype=np.int64)
        occ[self.labels - 1] = np.arange(1, self.n + 1)
        return occ

    def theta_m_at_positions(self):
        return self.theta_m[self.occupants() - 1]

    def theta_hat(self):
        """``theta`` read along each parcel, indexed by label."""
        return self.theta[self.labels - 1]

    def replace(self, **changes):
        fields = dict(t=self.t, theta=self.theta, q=self.q, labels=self.labels, theta_m=self.theta_m)
        fields.update(changes)
        return ColumnState(**fields)

    def to_dict(self):
        return {
            "t": self.t, "theta": self.theta.tolist(), "q": self.q.tolist(),
            "labels": self.labels.tolist(), "theta_m": self.theta_m.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["t"]), d["theta"], d["q"], d["labels"], d["theta_m"])


@dataclass(frozen=True)
class SubStep:
    """Record of the decision for target level ``k``."""

    k: int
    wet: tuple
    eligible: tuple
    jumper: int | None = None
    jumper_label: int | None = None

    def to_dict(self):
        return {"k": self.k, "wet": list(self.wet), "eligible": list(self.eligible),
                "jumper": self.jumper, "jumper_label": self.jumper_label}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["k"]), tuple(d["wet"]), tuple(d["eligible"]), d.get("jumper"), d.get("jumper_label"))


@dataclass(eq=False)
class StepReport:
    """Everything decided during one step.

    Only levels with a nonempty wet set are recorded; below the lowest
    recorded level nothing moves.  ``lift_target[j - 1]`` is 0 unless
    parcel ``j`` was lifted.
    """

    t: float
    t_next: float
    n: int
    substeps: list = field(default_factory=list)
    lifted: np.ndarray = None
    lift_target: np.ndarray = None
    pushed_down: np.ndarray = None

    def __post_init__(self):
        if self.lifted is None:
            self.lifted = np.zeros(self.n, bool)
        if self.lift_target is None:
            self.lift_target = np.zeros(self.n, np.int64)
        if self.pushed_down is None:
            self.pushed_down = np.zeros(self.n, bool)

    @property
    def jumps(self):
        return [s for s in self.substeps if s.jumper is not None]

    def to_dict(self):
        return {
            "t": self.t, "t_next": self.t_next, "n": self.n,
            "substeps": [s.to_dict() for s in self.substeps],
            "lifted": (np.flatnonzero(self.lifted) + 1).tolist(),
            "lift_target": self.lift_target.tolist(),
            "pushed_down": (np.flatnonzero(self.pushed_down) + 1).tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    def __eq__(self, other):
        if not isinstance(other, StepReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @classmethod
    def from_dict(cls, d):
        n = int(d["n"])
        lifted = np.zeros(n, bool)
        lifted[np.asarray(d["lifted"], dtype=np.int64) - 1] = True
        pushed = np.zeros(n, bool)
        pushed[np.asarray(d["pushed_down"], dtype=np.int64) - 1] = True
        return cls(float(d["t"]), float(d["t_next"]), n,
                   [SubStep.from_dict(s) for s in d["substeps"]],
                   lifted, np.asarray(d["lift_target"], dtype=np.int64), pushed)


def wet_set(state, t_next, k, model, cfg=DEFAULT_SOLVER):
    """Positions whose parcel is below its saturated ``theta`` at ``t_next``.

    ``k`` only documents the cascade level; membership is over all
    positions.  A parcel counts as wet only if it is more than the solver
    tolerance below saturation.
    """
    own = theta_inverse(model, state.theta_m_at_positions(), state.z, t_next, cfg)
    return set((np.flatnonzero(state.theta < own - cfg.tolerance) + 1).tolist())


def eligible_set(state, t_next, k, wet, model, cfg=DEFAULT_SOLVER):
    """Wet positions that can rise to level ``k``.

    A wet parcel at ``j0 < k`` must beat every parcel at ``j0 < j <= k``:
    a dry parcel by having a saturated ``theta`` above its ``theta``, a wet
    one by having strictly larger ``theta_m``.  Wet positions ``>= k`` are
    eligible by convention.
    """
    if not wet:
        return set()
    thm = state.theta_m_at_positions()
    out = set()
    for j0 in sorted(wet):
        if j0 >= k:
            out.add(j0)
            continue
        between = np.arange(j0 + 1, k + 1)
        sat = theta_inverse(model, np.full(between.size, thm[j0 - 1]), between / state.n, t_next, cfg)
        ok = True
        for j, s in zip(between.tolist(), np.atleast_1d(sat).tolist()):
            if j in wet:
                ok = thm[j0 - 1] > thm[j - 1]
            else:
                ok = state.theta[j - 1] < s - cfg.tolerance
            if not ok:
                break
        if ok:
            out.add(j0)
    return out


def select_jumper(state, eligible):
    """Eligible position whose parcel has the largest ``theta_m``; ties go to the higher position."""
    if not eligible:
        return None
    thm = state.theta_m_at_positions()
    return max(eligible, key=lambda p: (thm[p - 1], p))


def apply_jump(state, k, jstar, t_next, model, cfg=DEFAULT_SOLVER):
    """Move the parcel at ``jstar`` to level ``k`` and shift ``(jstar, k]`` down by one.

    Returns the new state (time unchanged) and the position map ``sigma``
    as an array with ``sigma[p - 1]`` the new position of the parcel at ``p``.
    """
    n = state.n
    if not 1 <= jstar <= k <= n:
        raise StepInvariantError(f"jump from {jstar} to level {k} is not upward within 1..{n}")
    sigma = np.arange(1, n + 1)
    sigma[jstar - 1] = k
    sigma[jstar:k] -= 1
    occ = state.occupants()
    new_occ = np.empty_like(occ)
    new_occ[sigma - 1] = occ
    theta = np.empty(n)
    theta[sigma - 1] = state.theta
    label = occ[jstar - 1]
    theta[k - 1] = theta_inverse(model, state.theta_m[label - 1], k / n, t_next, cfg)
    labels = np.empty(n, dtype=np.int64)
    labels[new_occ - 1] = np.arange(1, n + 1)
    q = state.theta_m[new_occ - 1] - theta
    return state.replace(theta=theta, q=q, labels=labels), sigma


def step(state, dt, model, cfg=DEFAULT_SOLVER, validate=True, tol_sat=None):
    """Advance one step of length ``dt``.

    Returns ``(new_state, beta0, report)`` where ``beta0[p - 1]`` is the
    end-of-step position of the parcel that started at ``p``.

    Saturated values are computed once per step: only parcels wet at the
    start can be wet later in the step (shifting down only dries a parcel),
    so a table over those parcels and all positions covers every lookup.
    """
    n = state.n
    tol = cfg.tolerance
    t_next = state.t + dt
    z = state.z
    lab = state.occupants() - 1
    theta = np.array(state.theta)
    thm = state.theta_m
    report = StepReport(state.t, t_next, n)

    own = theta_inverse(model, thm[lab], z, np.full(n, t_next), cfg)
    wet_labels = lab[theta < own - tol]
    origin = np.arange(n)
    if wet_labels.size:
        table = theta_inverse(model, thm[wet_labels][:, None], z[None, :], t_next, cfg)
        table = np.atleast_2d(table)
        row = np.full(n, -1)
        row[wet_labels] = np.arange(wet_labels.size)
        for k in range(n, 0, -1):
            prefix = lab[:k]
            r = row[prefix]
            cand = np.flatnonzero(r >= 0)
            if cand.size == 0:
                break
            wet_pos = cand[theta[cand] < table[r[cand], cand] - tol]
            if wet_pos.size == 0:
                break
            wet_mask = np.zeros(k, bool)
            wet_mask[wet_pos] = True
            thm_prefix = thm[prefix]
            cols = np.arange(k)
            beats = np.where(
                wet_mask[None, :],
                thm_prefix[wet_pos][:, None] > thm_prefix[None, :],
                theta[None, :k] < table[r[wet_pos]][:, :k] - tol,
            )
            beats |= cols[None, :] <= wet_pos[:, None]
            eligible = wet_pos[beats.all(axis=1)]
            jstar = None
            jlabel = None
            if eligible.size:
                # largest theta_m, ties to the highest position
                order = np.lexsort((eligible, thm_prefix[eligible]))
                js = int(eligible[order[-1]])
                jl = int(lab[js])
                jstar, jlabel = js + 1, jl + 1
                kk = k - 1
                if js < kk:
                    jo = origin[js]
                    report.lifted[jl] = True
                    report.lift_target[jl] = k
                    report.pushed_down[lab[js + 1:k]] = True
                    lab[js:kk] = lab[js + 1:k].copy()
                    theta[js:kk] = theta[js + 1:k].copy()
                    origin[js:kk] = origin[js + 1:k].copy()
                    origin[kk] = jo
                    lab[kk] = jl
                theta[kk] = table[row[jl], kk]
            report.substeps.append(SubStep(
                k, tuple((wet_pos + 1).tolist()), tuple(sorted((eligible + 1).tolist())), jstar, jlabel))

    beta0 = np.empty(n, dtype=np.int64)
    beta0[origin] = np.arange(1, n + 1)
    labels = np.empty(n, dtype=np.int64)
    labels[lab] = np.arange(1, n + 1)
    new = ColumnState(t_next, theta, thm[lab] - theta, labels, thm)
    if validate:
        problems = step_violations(state, new, model, cfg, tol_sat)
        if problems:
            raise StepInvariantError("; ".join(problems), report=report)
    return new, beta0, report


def step_violations(before, after, model, cfg=DEFAULT_SOLVER, tol_sat=None):
    """Return a list of the four step invariants that ``after`` breaks (empty if none).

    (i) position-monotone ``theta``; (ii) per-parcel ``theta + q`` equals its
    initial value; (iii) ``theta`` read along each parcel never decreases;
    (iv) ``q <= Q(theta, z, t)`` up to ``tol_sat``.
    """
    if tol_sat is None:
        tol_sat = default_tol_sat(model, cfg)
    problems = []
    drop = np.diff(after.theta)
    if drop.size and drop.min() < -cfg.tolerance:
        p = int(np.argmin(drop)) + 1
        problems.append(f"theta decreases between positions {p} and {p + 1} by {-drop.min():.3e}")
    resid = np.abs(after.theta_hat() + after.q[after.labels - 1] - after.theta_m)
    if resid.max() > CONSERVATION_TOL:
        j = int(np.argmax(resid)) + 1
        problems.append(f"parcel {j} conservation residual {resid.max():.3e}")
    if before is not None:
        fall = after.theta_hat() - before.theta_hat()
        if fall.min() < -CONSERVATION_TOL:
            j = int(np.argmin(fall)) + 1
            problems.append(f"parcel {j} theta decreased by {-fall.min():.3e}")
    excess = after.q - eval_qsat(model, after.theta, after.z, after.t)
    if excess.max() > tol_sat:
        p = int(np.argmax(excess)) + 1
        problems.append(f"position {p} supersaturated by {excess.max():.3e}")
    return problems


def default_tol_sat(model, cfg=DEFAULT_SOLVER):
    """``2 * tolerance * (1 + dQ/dtheta)`` with the exact slope for the linear family."""
    if model.kind is ModelKind.LINEAR:
        slope = model.a
    else:
        tab = model.table
        slope = float((np.diff(tab.values, axis=0) / np.diff(tab.theta)[:, None, None]).max())
    return 2.0 * cfg.tolerance * (1.0 + slope)
