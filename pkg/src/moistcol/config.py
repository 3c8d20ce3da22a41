"""Run configuration files (TOML).

Blocks: ``[model]`` (see :meth:`SaturationModel.from_config`),
``[initial]``, optional ``[ensemble]``, ``[numerics]`` and ``[output]``.
Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ensemble import (
    CellLaw, InitialEnsemble, Profile, discretize_conditional, discretize_profile, read_histogram_csv,
)
from .errors import ConfigError
from .rearrange import ColumnState
from .saturation import DEFAULT_SOLVER, DomainBox, SaturationModel, SolverConfig, compute_bounds, max_timestep
from .simulate import bounds_for

NUMERIC_KEYS = {"n", "T", "dt", "seed", "mode", "samples", "n_list", "times", "tolerance",
                "max_iter", "resolution", "enumeration_cap"}


@dataclass
class Numerics:
    n: int | None = None
    T: float = 1.0
    dt: float | str = "auto"
    seed: int = 0
    mode: str = "exhaustive"
    samples: int = 10_000
    n_list: list = field(default_factory=lambda: [8, 16, 32, 64])
    times: list | None = None
    resolution: int = 64
    enumeration_cap: int = 10**6


@dataclass
class Output:
    dir: Path = Path("out")
    formats: tuple = ("csv", "jsonl")
    stride: int = 1


@dataclass
class RunConfig:
    model: SaturationModel
    initial: dict
    numerics: Numerics
    output: Output
    solver: SolverConfig = DEFAULT_SOLVER
    ensemble: dict | None = None
    base_dir: Path = Path(".")

    def sample_times(self):
        if self.numerics.times is not None:
            return [float(t) for t in self.numerics.times]
        T = self.numerics.T
        return [0.0, T / 4, T / 2, 3 * T / 4]


def _need(block, key, where):
    if key not in block:
        raise ConfigError(f"[{where}] missing key {key!r}")
    return block[key]


def load(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse(raw, path.parent)


def parse(raw, base_dir="."):
    base_dir = Path(base_dir)
    unknown = set(raw) - {"model", "initial", "ensemble", "numerics", "output"}
    if unknown:
        raise ConfigError(f"unknown config blocks {sorted(unknown)}")
    model = SaturationModel.from_config(raw.get("model", {}), base_dir)
    num = raw.get("numerics", {})
    bad = set(num) - NUMERIC_KEYS
    if bad:
        raise ConfigError(f"unknown [numerics] keys {sorted(bad)}")
    try:
        numerics = Numerics(
            n=int(num["n"]) if "n" in num else None,
            T=float(num.get("T", 1.0)),
            dt=num.get("dt", "auto") if num.get("dt", "auto") == "auto" else float(num["dt"]),
            seed=int(num.get("seed", 0)),
            mode=str(num.get("mode", "exhaustive")).lower().replace("_", ""),
            samples=int(num.get("samples", 10_000)),
            n_list=[int(x) for x in num.get("n_list", [8, 16, 32, 64])],
            times=num.get("times"),
            resolution=int(num.get("resolution", 64)),
            enumeration_cap=int(num.get("enumeration_cap", 10**6)),
        )
        solver = SolverConfig(float(num.get("tolerance", 1e-12)), int(num.get("max_iter", 200)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[numerics]: {exc}") from None
    if not numerics.T > 0:
        raise ConfigError("[numerics] T must be positive")
    if numerics.dt != "auto" and not numerics.dt > 0:
        raise ConfigError("[numerics] dt must be positive or 'auto'")
    if numerics.mode == "mc":
        numerics.mode = "montecarlo"
    out = raw.get("output", {})
    fmts = out.get("formats", ["csv", "jsonl"])
    if isinstance(fmts, str):
        fmts = [fmts]
    if set(fmts) - {"csv", "jsonl"}:
        raise ConfigError(f"[output] unknown formats {sorted(set(fmts) - {'csv', 'jsonl'})}")
    out_dir = Path(out.get("dir", "out"))
    output = Output(out_dir if out_dir.is_absolute() else base_dir / out_dir, tuple(fmts), int(out.get("stride", 1)))
    if output.stride < 1:
        raise ConfigError("[output] stride must be >= 1")
    return RunConfig(model, raw.get("initial", {}), numerics, output, solver, raw.get("ensemble"), base_dir)


def profile_function(desc, base_dir="."):
    """Callable ``theta(z)`` from a profile description.

    Kinds: ``constant`` (``value``), ``linear`` (``offset + slope * z``),
    ``table`` (``values`` at ``z``, default evenly spaced on (0, 1],
    or a CSV ``path`` with columns ``z,theta``), interpolated linearly.
    """
    kind = str(desc.get("kind", "linear")).lower()
    if kind == "constant":
        v = float(desc.get("value", 0.0))
        return lambda z: np.full(np.shape(z), v)
    if kind == "linear":
        off, slope = float(desc.get("offset", 0.0)), float(desc.get("slope", 0.0))
        if slope < 0:
            raise ConfigError("profile slope must be >= 0")
        return lambda z: off + slope * np.asarray(z, float)
    if kind == "table":
        if "path" in desc:
            p = Path(desc["path"])
            p = p if p.is_absolute() else Path(base_dir) / p
            try:
                data = np.genfromtxt(p, delimiter=",", names=True)
                zs, vals = np.atleast_1d(data["z"]), np.atleast_1d(data["theta"])
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read profile table {p}: {exc}") from exc
        else:
            vals = np.asarray(_need(desc, "values", "initial.profile"), float)
            zs = np.asarray(desc.get("z", np.arange(1, vals.size + 1) / vals.size), float)
        if zs.shape != vals.shape or np.any(np.diff(zs) <= 0):
            raise ConfigError("profile table needs increasing z matching its values")
        if np.any(np.diff(vals) < 0):
            raise ConfigError("profile must be nondecreasing in z")
        return lambda z: np.interp(z, zs, vals)
    raise ConfigError(f"unknown profile kind {kind!r}")


def moisture_values(desc, theta, model, n, t0=0.0):
    """Moisture at the cell tops for a moisture description."""
    z = np.arange(1, n + 1) / n
    kind = str(desc.get("kind", "saturated")).lower()
    qsat = model(theta, z, t0)
    if kind == "saturated":
        return np.asarray(qsat, float)
    if kind == "relative":
        frac = float(desc.get("fraction", 1.0))
        if not 0 <= frac <= 1:
            raise ConfigError("relative moisture fraction must lie in [0, 1]")
        return frac * np.asarray(qsat, float)
    if kind == "constant":
        return np.full(n, float(desc.get("value", 0.0)))
    raise ConfigError(f"unknown moisture kind {kind!r}")


def initial_state(cfg, n=None):
    """Deterministic starting column, discretised at ``n`` when given as a continuum description."""
    block = cfg.initial
    t0 = float(block.get("t0", 0.0))
    if "theta" in block:
        theta = np.asarray(block["theta"], float)
        if n is not None and n != theta.size:
            theta = discretize_profile(theta, n)
            if "q" in block:
                raise ConfigError("explicit q cannot be re-discretised; use a moisture description")
        q = np.asarray(block["q"], float) if "q" in block else None
        if q is not None and q.shape != theta.shape:
            raise ConfigError("[initial] theta and q differ in length")
    elif "profile" in block:
        n = n or cfg.numerics.n
        if n is None:
            raise ConfigError("a profile description needs [numerics] n")
        theta = discretize_profile(profile_function(block["profile"], cfg.base_dir), n)
        q = None
    else:
        raise ConfigError("[initial] needs theta (and q) or a profile description")
    if q is None:
        q = moisture_values(block.get("moisture", {"kind": "saturated"}), theta, cfg.model, theta.size, t0)
    if np.any(np.diff(theta) < 0):
        raise ConfigError("initial theta must be nondecreasing")
    return ColumnState.initial(theta, q, t0)


def resolve_dt(cfg, state, bounds=None):
    """Step size from ``[numerics] dt``; ``auto`` gives the largest admissible step.

    ``auto`` does not round the step to divide ``T``: keeping ``dt``
    proportional to ``1 / n`` keeps refinement studies on nested time grids.
    """
    T = cfg.numerics.T
    if cfg.numerics.dt != "auto":
        return float(cfg.numerics.dt), bounds
    if bounds is None:
        bounds = bounds_for(state, cfg.model, T, cfg.numerics.resolution, cfg.solver)
    return max_timestep(bounds, state.n, T), bounds


def build_ensemble(cfg):
    """Ensemble from ``[ensemble]``.

    Each ``[[ensemble.profiles]]`` entry has ``weight`` and either ``theta``
    or ``profile``, plus per-cell atoms (``values`` and ``probs`` as lists
    of lists) or a ``histogram`` CSV (``cell,binIndex,mass``).  Without an
    ``[ensemble]`` block the deterministic initial state is used.
    """
    block = cfg.ensemble
    if block is None:
        state = initial_state(cfg)
        return InitialEnsemble.dirac(state, cfg.model)
    K = float(_need(block, "K", "ensemble"))
    n = cfg.numerics.n
    raw_profiles = _need(block, "profiles", "ensemble")
    shift_c = block.get("shift_c")
    profiles = []
    for m, p in enumerate(raw_profiles):
        if "theta" in p:
            theta = np.asarray(p["theta"], float)
            theta = discretize_profile(theta, n) if n and n != theta.size else discretize_profile(theta, theta.size)
        elif "profile" in p:
            if n is None:
                raise ConfigError("a profile description needs [numerics] n")
            theta = discretize_profile(profile_function(p["profile"], cfg.base_dir), n)
        else:
            raise ConfigError(f"ensemble profile {m}: needs theta or profile")
        n_here = theta.size
        if "histogram" in p:
            path = Path(p["histogram"])
            path = path if path.is_absolute() else cfg.base_dir / path
            masses = read_histogram_csv(path, n_here, int(p.get("bins", n_here)))
            bounds = compute_bounds(cfg.model, DomainBox(2 * (K + float(np.abs(theta).max())) + 1, cfg.numerics.T),
                                    cfg.numerics.resolution, cfg.solver)
            cells, shift_c = discretize_conditional(masses, n_here, K, bounds, shift_c, theta, cfg.model, cfg.solver)
        elif "values" in p:
            vals, probs = p["values"], p.get("probs")
            if len(vals) != n_here:
                raise ConfigError(f"ensemble profile {m}: need atoms for each of {n_here} cells")
            if probs is None:
                probs = [[1.0 / len(v)] * len(v) for v in vals]
            cells = [CellLaw(v, pr) for v, pr in zip(vals, probs)]
        else:
            raise ConfigError(f"ensemble profile {m}: needs values/probs or a histogram")
        profiles.append(Profile(float(p.get("weight", 1.0)), theta, cells))
    return InitialEnsemble(profiles[0].theta.size, K, profiles, cfg.model, shift_c)
