"""Command-line front end: ``moistcol {simulate,ensemble,verify,converge,energy}``.

Exit status: 0 success, 1 configuration or input error, 2 a check
failed, 3 runtime failure (step invariant, solver, ensemble member).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .ensemble import (
    check_admissibility, marginal, run_ensemble, w1_1d, write_marginal_csv, write_members_jsonl,
)
from .errors import ConfigError, MoistcolError, StepInvariantError
from .report import render_table
from .saturation import DomainBox, compute_bounds
from .simulate import read_jsonl, run, write_csv, write_flow_maps, write_jsonl
from .verify import (
    ENERGY_BRUTE_MAX_N, certify_energy, check_continuity, check_increment_formula, energy, run_checks,
)

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_RUNTIME = 0, 1, 2, 3


def _g(x):
    return format(float(x), ".17g")


def _out_dir(args, cfg=None):
    out = Path(args.out) if args.out else (cfg.output.dir if cfg else Path("out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg.numerics.seed = args.seed
    return cfg


def _simulate(cfg, validate, n=None, keep_reports=True):
    state = config_mod.initial_state(cfg, n)
    dt, bounds = config_mod.resolve_dt(cfg, state)
    traj = run(state, cfg.numerics.T, dt, cfg.model, cfg.solver, validate=validate,
               keep_reports=keep_reports, resolution=cfg.numerics.resolution)
    traj.meta.update({"dt": dt, "dt_max_rule": "1/(2*cfl*n)"})
    return traj


def cmd_simulate(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    try:
        traj = _simulate(cfg, not args.no_validate)
    except StepInvariantError as exc:
        if exc.report is not None:
            (out / "failed_step.json").write_text(
                json.dumps({"step": exc.step_index, "error": str(exc), "report": exc.report.to_dict()}) + "\n")
        raise
    if "csv" in cfg.output.formats:
        write_csv(traj, out / "trajectory.csv", cfg.output.stride)
        write_flow_maps(traj, out / "flow_maps.csv")
    if "jsonl" in cfg.output.formats:
        write_jsonl(traj, out / "states.jsonl")
    print(f"n={traj.n} steps={traj.steps} dt={_g(traj.dt)} jumps={traj.jump_count} "
          f"conservation_residual={traj.conservation_residual():.3e}")
    return EXIT_OK


def cmd_ensemble(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    ens = config_mod.build_ensemble(cfg)
    adm = check_admissibility(ens, cfg.solver)
    (out / "admissibility.json").write_text(adm.to_json(indent=2) + "\n")
    if not adm.passed:
        print(adm.line())
        return EXIT_CONFIG
    probe = ens.profiles[0].state([0] * ens.n, ens.t0)
    bounds = compute_bounds(cfg.model, DomainBox(ens.w_max, cfg.numerics.T), cfg.numerics.resolution, cfg.solver)
    dt, _ = config_mod.resolve_dt(cfg, probe, bounds)
    res = run_ensemble(ens, cfg.numerics.T, dt, cfg.numerics.mode, cfg.numerics.samples,
                       cfg.numerics.seed, args.threads, cfg.solver, not args.no_validate,
                       cfg.numerics.enumeration_cap)
    write_members_jsonl(res, out / "members.jsonl")
    for t in cfg.sample_times():
        write_marginal_csv(marginal(res, t), out / f"marginal_t{t:.10g}.csv")
    print(f"members={len(res.runs)} mode={res.mode} total_weight={_g(res.total_weight)} dt={_g(dt)}")
    return EXIT_OK


def cmd_verify(args):
    if args.trajectory:
        traj = read_jsonl(args.trajectory, Path(args.trajectory).parent)
        cfg = None
    else:
        cfg = _load(args)
        traj = _simulate(cfg, not args.no_validate)
    seed = args.seed if args.seed is not None else (cfg.numerics.seed if cfg else 0)
    reports = run_checks(traj, seed=seed)
    doc = {"n": traj.n, "dt": traj.dt, "steps": traj.steps, "passed": all(r.passed for r in reports),
           "reports": [r.to_dict() for r in reports]}
    if args.out or cfg is not None:
        out = _out_dir(args, cfg)
        (out / "checks.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(render_table(reports))
    for r in reports:
        if not r.passed:
            print(r.line())
    return EXIT_OK if doc["passed"] else EXIT_CHECK


def _l1_between(a, b):
    """``L1`` distance of two cell profiles on [0, 1] with possibly different resolutions."""
    m = math.lcm(a.size, b.size)
    return float(np.abs(np.repeat(a, m // a.size) - np.repeat(b, m // b.size)).mean())


def cmd_converge(args):
    cfg = _load(args)
    n_list = [int(x) for x in args.n_list.split(",")] if args.n_list else cfg.numerics.n_list
    if not n_list:
        raise ConfigError("empty n list")
    times = cfg.sample_times()
    trajs, consts = {}, {}
    for n in n_list:
        traj = _simulate(cfg, not args.no_validate, n, keep_reports=False)
        trajs[n] = traj
        inc = check_increment_formula(traj, seed=cfg.numerics.seed)
        cont = check_continuity(traj, seed=cfg.numerics.seed)
        consts[n] = (inc.constants["C4"], cont.constants["C5"], cont.constants["C6"])
    rows = []
    for a, b in zip(n_list, n_list[1:]):
        for t in times:
            pa = trajs[a].theta[trajs[a].index_at(t)]
            pb = trajs[b].theta[trajs[b].index_at(t)]
            w1 = w1_1d(pa, np.full(a, 1 / a), pb, np.full(b, 1 / b))
            rows.append((a, b, t, _l1_between(pa, pb), w1))
    out = _out_dir(args, cfg)
    with open(out / "converge.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "n_next", "t", "l1", "w1_theta_values"])
        for a, b, t, l1, w1 in rows:
            w.writerow([a, b, _g(t), _g(l1), _g(w1)])
    with open(out / "constants.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "dt", "C4", "C5", "C6"])
        for n in n_list:
            w.writerow([n, _g(trajs[n].dt), *(_g(c) for c in consts[n])])
    print(f"{'n':>6} {'dt':>12} {'C4':>10} {'C5':>10} {'C6':>10}")
    for n in n_list:
        c4, c5, c6 = consts[n]
        print(f"{n:>6} {trajs[n].dt:>12.4g} {c4:>10.4g} {c5:>10.4g} {c6:>10.4g}")
    print(f"{'n':>6} {'n_next':>6} {'t':>10} {'L1':>12} {'W1':>12}")
    for a, b, t, l1, w1 in rows:
        print(f"{a:>6} {b:>6} {t:>10.4g} {l1:>12.4e} {w1:>12.4e}")
    return EXIT_OK


def cmd_energy(args):
    if args.profile:
        profiles = [np.array([float(x) for x in args.profile.split(",")])]
        times = [0.0]
    elif args.trajectory:
        traj = read_jsonl(args.trajectory, Path(args.trajectory).parent)
        profiles, times = list(traj.theta), list(traj.times)
    elif args.config:
        traj = _simulate(_load(args), not args.no_validate)
        profiles, times = list(traj.theta), list(traj.times)
    else:
        raise ConfigError("energy needs --trajectory, --config or --profile")
    certify = profiles[0].size <= ENERGY_BRUTE_MAX_N
    rows, ok = [], True
    for k, (t, th) in enumerate(zip(times, profiles)):
        if certify:
            e, best, minimal = certify_energy(th)
            ok &= minimal
            rows.append((k, t, e, best, minimal))
        else:
            rows.append((k, t, float(energy(th)), None, None))
    print(f"{'k':>5} {'t':>10} {'energy':>22} {'minimum':>22} certified")
    for k, t, e, best, minimal in rows:
        cert = "-" if minimal is None else ("minimal" if minimal else "NOT minimal")
        best_s = "-" if best is None else _g(best)
        print(f"{k:>5} {t:>10.4g} {_g(e):>22} {best_s:>22} {cert}")
    if args.out:
        with open(_out_dir(args) / "energy.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t", "energy", "minimum", "minimal"])
            for k, t, e, best, minimal in rows:
                w.writerow([k, _g(t), _g(e), "" if best is None else _g(best), "" if minimal is None else int(minimal)])
    return EXIT_OK if ok else EXIT_CHECK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--seed", type=int, help="master seed (overrides [numerics] seed)")
    common.add_argument("--threads", type=int, default=1, help="worker processes for ensembles")
    common.add_argument("--no-validate", action="store_true", help="skip per-step invariant checks")

    parser = argparse.ArgumentParser(prog="moistcol", description="Moist column rearrangement runs and checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one deterministic column").set_defaults(func=cmd_simulate)
    sub.add_parser("ensemble", parents=[common], help="run an ensemble and write marginals").set_defaults(func=cmd_ensemble)
    p = sub.add_parser("verify", parents=[common], help="run every trajectory check")
    p.add_argument("--trajectory", help="states JSON-lines file written by simulate")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("converge", parents=[common], help="refinement study over several n")
    p.add_argument("--n-list", help="comma-separated resolutions (overrides [numerics] n_list)")
    p.set_defaults(func=cmd_converge)
    p = sub.add_parser("energy", parents=[common], help="energy per snapshot with a minimality certificate")
    p.add_argument("--trajectory", help="states JSON-lines file")
    p.add_argument("--profile", help="comma-separated position-ordered profile")
    p.set_defaults(func=cmd_energy)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MoistcolError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
