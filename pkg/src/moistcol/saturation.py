"""Saturation function, its implicit inverse, and the derived step-size constants.

The saturation moisture ``Q(theta, z, t)`` must increase with ``theta`` and
decrease with height ``z``.  The inverse ``Theta(w, z, t)`` is the unique
``theta`` with ``theta + Q(theta, z, t) = w``; a parcel with conserved
``w = theta + q`` satisfies ``q <= Q`` exactly when ``theta >= Theta(w, z, t)``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigError, ModelError, SolverError

Z_SLACK = 1e-12


class ModelKind(str, enum.Enum):
    LINEAR = "linear"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class SaturationTable:
    """Q sampled on a full tensor grid, interpolated linearly in each axis."""

    theta: np.ndarray
    z: np.ndarray
    t: np.ndarray
    values: np.ndarray  # shape (len(theta), len(z), len(t))
    source: str | None = None
    _interp: RegularGridInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("theta", "z", "t"):
            axis = getattr(self, name)
            if axis.ndim != 1 or axis.size < 2 or np.any(np.diff(axis) <= 0):
                raise ConfigError(f"table axis {name!r} needs >= 2 strictly increasing values")
        expected = (self.theta.size, self.z.size, self.t.size)
        if self.values.shape != expected:
            raise ConfigError(f"table values have shape {self.values.shape}, expected {expected}")
        interp = RegularGridInterpolator(
            (self.theta, self.z, self.t), self.values,
            method="linear", bounds_error=False, fill_value=None,
        )
        object.__setattr__(self, "_interp", interp)

    def __call__(self, theta, z, t):
        theta, z, t = np.broadcast_arrays(theta, z, t)
        pts = np.stack([theta.ravel(), z.ravel(), t.ravel()], axis=-1)
        return self._interp(pts).reshape(theta.shape)


@dataclass(frozen=True)
class SaturationModel:
    """Saturation moisture ``Q(theta, z, t)``.

    ``LINEAR`` is ``qstar + a*theta - b*z - c*t`` with ``a, b > 0`` and
    ``c >= 0``; ``c > 0`` makes saturation fall with time, which is what
    drives convection.  ``TABULATED`` wraps a :class:`SaturationTable`.
    """

    kind: ModelKind = ModelKind.LINEAR
    qstar: float = 1.0
    a: float = 0.5
    b: float = 1.0
    c: float = 0.2
    table: SaturationTable | None = None

    def __post_init__(self):
        if self.kind is ModelKind.LINEAR:
            if not (self.a > 0 and self.b > 0 and self.c >= 0):
                raise ModelError(
                    f"linear model needs a > 0, b > 0, c >= 0 (got a={self.a}, b={self.b}, c={self.c})")
        elif self.table is None:
            raise ModelError("tabulated model requires a table")
        else:
            _validate_table_monotone(self.table)

    @classmethod
    def linear(cls, qstar=1.0, a=0.5, b=1.0, c=0.2):
        return cls(ModelKind.LINEAR, float(qstar), float(a), float(b), float(c))

    @classmethod
    def tabulated(cls, theta, z, t, values, source=None):
        table = SaturationTable(
            np.asarray(theta, float), np.asarray(z, float), np.asarray(t, float),
            np.asarray(values, float), source,
        )
        return cls(ModelKind.TABULATED, math.nan, math.nan, math.nan, math.nan, table)

    @classmethod
    def from_csv(cls, path):
        """Load a table from CSV with columns ``theta,z,t,q`` covering a full grid."""
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"theta", "z", "t", "q"} - set(reader.fieldnames or ())
            if missing:
                raise ConfigError(f"{path}: missing columns {sorted(missing)}")
            for line_no, row in enumerate(reader, start=2):
                try:
                    rows.append(tuple(float(row[k]) for k in ("theta", "z", "t", "q")))
                except ValueError as exc:
                    raise ConfigError(f"{path}:{line_no}: {exc}") from None
        if not rows:
            raise ConfigError(f"{path}: empty table")
        data = np.array(rows)
        axes = [np.unique(data[:, i]) for i in range(3)]
        shape = tuple(ax.size for ax in axes)
        if data.shape[0] != np.prod(shape):
            raise ConfigError(f"{path}: {data.shape[0]} rows do not form a full {shape} grid")
        values = np.full(shape, np.nan)
        idx = tuple(np.searchsorted(axes[i], data[:, i]) for i in range(3))
        values[idx] = data[:, 3]
        if np.isnan(values).any():
            raise ConfigError(f"{path}: duplicate grid points")
        return cls.tabulated(*axes, values, source=str(path))

    @classmethod
    def from_config(cls, block, base_dir=None):
        kind = str(block.get("kind", "linear")).lower()
        if kind in ("linear", "linearbuiltin"):
            unknown = set(block) - {"kind", "qstar", "a", "b", "c"}
            if unknown:
                raise ConfigError(f"unknown model keys {sorted(unknown)}")
            return cls.linear(block.get("qstar", 1.0), block.get("a", 0.5),
                              block.get("b", 1.0), block.get("c", 0.2))
        if kind in ("tabulated", "usertabulated"):
            if "table" not in block:
                raise ConfigError("tabulated model needs a 'table' CSV path")
            path = Path(block["table"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return cls.from_csv(path)
        raise ConfigError(f"unknown model kind {kind!r}")

    def to_config(self):
        if self.kind is ModelKind.LINEAR:
            return {"kind": "linear", "qstar": self.qstar, "a": self.a, "b": self.b, "c": self.c}
        if self.table.source is None:
            raise ConfigError("an in-memory table cannot be serialised; load it from CSV")
        return {"kind": "tabulated", "table": self.table.source}

    def __call__(self, theta, z, t):
        if self.kind is ModelKind.LINEAR:
            return self.qstar + self.a * theta - self.b * z - self.c * t
        return self.table(np.asarray(theta, float), np.asarray(z, float), np.asarray(t, float))


def _validate_table_monotone(table):
    # Linear interpolation is monotone iff the nodal differences are.
    d_theta = np.diff(table.values, axis=0)
    d_z = np.diff(table.values, axis=1)
    if not np.all(d_theta > 0):
        raise ModelError("tabulated Q must be strictly increasing in theta")
    if not np.all(d_z < 0):
        raise ModelError("tabulated Q must be strictly decreasing in z")


@dataclass(frozen=True)
class DomainBox:
    """Bound ``w_max`` on ``|theta + q|`` and the time horizon."""

    w_max: float
    horizon: float

    def __post_init__(self):
        if not (self.w_max > 0 and self.horizon > 0):
            raise ConfigError(f"domain box needs w_max > 0 and horizon > 0, got {self}")


@dataclass(frozen=True)
class ThetaBounds:
    """Derivative bounds of ``Theta`` over a :class:`DomainBox`.

    ``cfl = sup_dt_theta / inf_dz_theta`` is the constant that limits how
    many parcels can overtake a given one per step.  ``sup_dtheta_q`` and
    ``sup_abs_dt_q`` are bounds on ``Q`` itself, used to turn tolerances on
    ``theta`` into tolerances on moisture.
    """

    inf_dz_theta: float
    sup_dz_theta: float
    sup_dt_theta: float
    inf_dw_theta: float
    sup_abs_theta: float
    sup_dtheta_q: float
    sup_abs_dt_q: float
    horizon: float
    w_max: float

    def __post_init__(self):
        if not (self.inf_dz_theta > 0 and self.inf_dw_theta > 0):
            raise ModelError(f"Theta must increase in w and z on the box: {self}")
        if self.sup_dt_theta < 0:
            raise ModelError("sup |dTheta/dt| cannot be negative")

    @property
    def cfl(self):
        return self.sup_dt_theta / self.inf_dz_theta

    def to_dict(self):
        return {
            "inf_dz_theta": self.inf_dz_theta, "sup_dz_theta": self.sup_dz_theta,
            "sup_dt_theta": self.sup_dt_theta, "inf_dw_theta": self.inf_dw_theta,
            "sup_abs_theta": self.sup_abs_theta, "sup_dtheta_q": self.sup_dtheta_q,
            "sup_abs_dt_q": self.sup_abs_dt_q, "horizon": self.horizon,
            "w_max": self.w_max, "cfl": self.cfl,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items() if k != "cfl"})


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        if not (self.tolerance > 0 and self.max_iter >= 1):
            raise ConfigError(f"invalid solver config {self}")


DEFAULT_SOLVER = SolverConfig()


def _check_z(z):
    z = np.asarray(z, dtype=float)
    if np.any(z < -Z_SLACK) or np.any(z > 1 + Z_SLACK):
        raise ConfigError(f"height outside [0, 1]: {z[(z < -Z_SLACK) | (z > 1 + Z_SLACK)][:5]}")
    return np.clip(z, 0.0, 1.0)


def eval_qsat(model, theta, z, t):
    """Evaluate ``Q(theta, z, t)``; ``z`` is clamped to [0, 1] after validation."""
    out = model(np.asarray(theta, float), _check_z(z), np.asarray(t, float))
    return float(out) if np.ndim(out) == 0 else out


def theta_inverse(model, w, z, t, cfg=DEFAULT_SOLVER):
    """Solve ``theta + Q(theta, z, t) = w`` for ``theta`` by bisection.

    Broadcasts over array arguments.  Each element is solved independently
    (converged entries are frozen), so the value for a given ``(w, z, t)``
    does not depend on what else is in the batch.

    Since ``theta -> theta + Q`` has slope at least 1, the root lies within
    ``|h(g)|`` of any guess ``g`` where ``h`` is the residual; the bracket
    is grown only if a tabulated model breaks that.
    """
    w, z, t = np.broadcast_arrays(np.asarray(w, float), _check_z(z), np.asarray(t, float))
    scalar = w.ndim == 0
    shape = w.shape
    w, z, t = (np.array(a, dtype=float).ravel() for a in (w, z, t))
    if not np.all(np.isfinite(w)):
        raise ConfigError("non-finite w passed to theta_inverse")

    def resid(theta, idx):
        return theta + model(theta, z[idx], t[idx]) - w[idx]

    everything = np.arange(w.size)
    guess = w - model(np.zeros_like(w), z, t)
    half = np.maximum(np.abs(resid(guess, everything)), cfg.tolerance)
    lo, hi = guess - half, guess + half
    for _ in range(cfg.max_iter):
        bad = (resid(lo, everything) > 0) | (resid(hi, everything) < 0)
        if not bad.any():
            break
        half = np.where(bad, 2 * half, half)
        lo, hi = guess - half, guess + half
    else:
        raise SolverError("theta_inverse: could not bracket the root; is Q monotone in theta?")

    active = (hi - lo) > cfg.tolerance
    for _ in range(cfg.max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        a, b = lo[idx], hi[idx]
        mid = 0.5 * (a + b)
        r = resid(mid, idx)
        lo[idx] = np.where(r <= 0, mid, a)
        hi[idx] = np.where(r < 0, b, mid)
        stuck = (mid == a) | (mid == b)
        active[idx] = ((hi[idx] - lo[idx]) > cfg.tolerance) & ~stuck
    else:
        raise SolverError(f"theta_inverse: no convergence in {cfg.max_iter} iterations")

    out = (0.5 * (lo + hi)).reshape(shape)
    return float(out) if scalar else out


def compute_bounds(model, box, resolution=64, cfg=DEFAULT_SOLVER):
    """Derivative bounds of ``Theta`` on ``|w| <= box.w_max``, ``z in [0,1]``, ``t in [0, horizon]``.

    Exact for the linear family; tabulated models are sampled on a
    ``resolution``-per-axis grid with centred differences.
    """
    if model.kind is ModelKind.LINEAR:
        a, b, c = model.a, model.b, model.c
        corners = [
            abs((w - model.qstar + b * zz + c * tt) / (1 + a))
            for w in (-box.w_max, box.w_max) for zz in (0.0, 1.0) for tt in (0.0, box.horizon)
        ]
        return ThetaBounds(
            inf_dz_theta=b / (1 + a), sup_dz_theta=b / (1 + a),
            sup_dt_theta=c / (1 + a), inf_dw_theta=1 / (1 + a),
            sup_abs_theta=max(corners), sup_dtheta_q=a, sup_abs_dt_q=c,
            horizon=box.horizon, w_max=box.w_max,
        )

    res = int(resolution)
    if res < 3:
        raise ConfigError("grid resolution must be at least 3")
    ws = np.linspace(-box.w_max, box.w_max, res)
    zs = np.linspace(0.0, 1.0, res)
    ts = np.linspace(0.0, box.horizon, res)
    W, Z, T = np.meshgrid(ws, zs, ts, indexing="ij")
    theta = theta_inverse(model, W, Z, T, cfg)
    d_w, d_z, d_t = np.gradient(theta, ws, zs, ts)

    s = float(np.max(np.abs(theta)))
    th = np.linspace(-s, s, res) if s > 0 else np.linspace(-1.0, 1.0, res)
    TH, Z2, T2 = np.meshgrid(th, zs, ts, indexing="ij")
    q = model(TH, Z2, T2)
    dq_theta, _, dq_t = np.gradient(q, th, zs, ts)
    return ThetaBounds(
        inf_dz_theta=float(d_z.min()), sup_dz_theta=float(np.abs(d_z).max()),
        sup_dt_theta=float(np.abs(d_t).max()), inf_dw_theta=float(d_w.min()),
        sup_abs_theta=s, sup_dtheta_q=float(dq_theta.max()),
        sup_abs_dt_q=float(np.abs(dq_t).max()),
        horizon=box.horizon, w_max=box.w_max,
    )


def max_timestep(bounds, n, horizon=None):
    """Largest admissible step ``1 / (2 * cfl * n)``; ``horizon / n`` when ``cfl == 0``."""
    if n < 1:
        raise ConfigError("parcel count must be >= 1")
    if bounds.cfl > 0:
        return 1.0 / (2.0 * bounds.cfl * n)
    return (bounds.horizon if horizon is None else horizon) / n


def saturation_slack(bounds, cfg=DEFAULT_SOLVER):
    """Moisture tolerance matching a ``theta`` tolerance of ``cfg.tolerance``."""
    return 2.0 * cfg.tolerance * (1.0 + bounds.sup_dtheta_q)
