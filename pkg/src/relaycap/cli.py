"""Batch runner: ``relaycap --config run.toml [--workers N] [--out DIR] [--seed-override K]``.

Exit codes: 0 success, 1 configuration or contract error (and failed
invariants), 2 model violation, 3 convergence failure.  Failures print one
line ``relaycap: error=<kind> exit=<code> reason=<json string>`` on stderr.
"""
from __future__ import annotations

import argparse
import io
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, load_config
from .errors import (ConfigError, ContractError, ConvergenceError, DomainError, ModelViolation,
                     StructuralError)
from .measures import dumps, measure_to_dict
from .model import sample_population, typical_measure

__all__ = ["main", "run"]

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_CONVERGENCE = 0, 1, 2, 3


class _Writer:
    """Collects artifacts in memory, then writes them in sorted order."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.files: dict[str, str] = {}

    def csv(self, name: str, text: str):
        if "csv" in self.cfg.formats:
            self.files[name] = text

    def json(self, name: str, obj):
        if "json" in self.cfg.formats or name == "summary.json":
            self.files[name] = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"

    def flush(self):
        out = self.cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.files):
            (out / name).write_text(self.files[name], encoding="utf-8", newline="\n")


@contextmanager
def _pool(workers: int):
    if workers <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        yield ex


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None if np.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


# ------------------------------------------------------------------ modes

def _simulate_rep(args):
    from .ldp import replication_seeds
    from .simulator import simulate_exact, simulate_marked, write_frustration_csv
    cfg_parts, rep = args
    domain, spatial_law, time_law, kernel, relays, lam, seed, simulator = cfg_parts
    pop_seed, sel_seed = replication_seeds(seed, 0, rep)
    pop = sample_population(domain, lam, spatial_law, time_law, pop_seed)
    if simulator == "marked":
        atoms, _ = simulate_marked(pop, relays.r_lambda, lam)
    else:
        atoms, _ = simulate_exact(pop, relays, kernel, sel_seed)
    buf = io.StringIO()
    write_frustration_csv(buf, atoms, rep, pop_seed)
    return buf.getvalue(), atoms.total_mass, len(pop), pop_seed, sel_seed


def _mode_simulate(cfg: ExperimentConfig, w: _Writer, ex):
    lam = cfg.run["lambda"]
    relays = cfg.relays(lam)
    parts = (cfg.domain, cfg.spatial_law, cfg.time_law, cfg.kernel, relays, lam, cfg.seed, cfg.run["simulator"])
    mapper = ex.map if ex is not None else map
    results = list(mapper(_simulate_rep, [(parts, i) for i in range(cfg.run["reps"])]))
    seeds = []
    rows = ["replication,population_seed,selection_seed,transmitters,frustrated_mass"]
    for i, (text, mass, n, ps, ss) in enumerate(results):
        w.csv(f"frustration_{i:04d}.csv", text)
        rows.append(f"{i},{ps},{ss},{n},{mass!r}")
        seeds.append([ps, ss])
    w.csv("replications.csv", "\n".join(rows) + "\n")
    masses = np.array([r[1] for r in results])
    summary = {"lambda": lam, "relays": relays.n, "r_lambda": relays.r_lambda, "reps": len(results),
               "simulator": cfg.run["simulator"], "mean_frustrated_mass": float(masses.mean()),
               "std_frustrated_mass": float(masses.std(ddof=1)) if len(masses) > 1 else 0.0}
    return summary, seeds


def _typical(cfg: ExperimentConfig):
    return typical_measure(cfg.domain, cfg.spatial_law, cfg.time_law, cfg.run["n_s"], cfg.run["n_t"])


def _mode_fluid(cfg: ExperimentConfig, w: _Writer, ex):
    from .fluid import beta, gamma_fluid
    mu = _typical(cfg)
    r = cfg.r
    traj = (beta(mu, r, cfg.run["tol"], cfg.run["substeps"], cfg.run["max_halvings"])
            if cfg.run["delta"] is None else None)
    delta = traj.delta_used if traj is not None else cfg.run["delta"]
    if traj is None:
        from .fluid import solve_sysode
        state = solve_sysode(mu.scaled(1.0 / r), delta, cfg.run["substeps"])
        times, values = state.times[:-1], r * (1.0 - state.idle[:-1])
        bound, bounds = None, []
    else:
        state, times, values, bound, bounds = traj.state, traj.times, traj.values, traj.error_bound, list(traj.bounds)
    g = gamma_fluid(mu, r, delta=delta, substeps=cfg.run["substeps"])
    rows = ["time,beta"] + [f"{t!r},{v!r}" for t, v in zip(times.tolist(), values.tolist())]
    w.csv("beta.csv", "\n".join(rows) + "\n")
    w.csv("fluid_state.csv", state.to_csv())
    w.json("driving_measure.json", json.loads(dumps(measure_to_dict(mu))))
    summary = {"r": r, "delta_used": delta, "error_bound": bound, "bounds": bounds,
               "beta_final": float(values[-1]), "gamma_mass": g.total_mass,
               "driving_mass": mu.total_mass, "final_critical_mass": state.final_crit()}
    return summary, []


def _mode_spatial(cfg: ExperimentConfig, w: _Writer, ex):
    from .spatial import (build_partition, cube_frustrated_masses, flatten_kernel, gamma_spatial_disintegrated,
                          kernel_l1_error, spatial_measure, write_cube_masses_csv)
    lam = cfg.run["lambda"]
    relays = cfg.relays(lam)
    part = build_partition(cfg.domain, cfg.run["delta_space"])
    nq = cfg.run["n_quad"]
    disc = flatten_kernel(cfg.kernel, relays, "mu_R", part, base="mu_R", n_quad=nq)
    mu = _typical(cfg)
    n = spatial_measure(mu, disc, n_quad=nq)
    delta = cfg.run["delta"]
    if delta is None:
        from .ldp import resolve_delta
        delta = min(resolve_delta(c, float(rm), cfg.run["tol"], substeps=cfg.run["substeps"],
                                  max_halvings=cfg.run["max_halvings"])
                    for c, rm in zip(n.cubes, n.relay_mass) if c is not None)
    masses = cube_frustrated_masses(n, delta=delta, substeps=cfg.run["substeps"])
    whole = gamma_spatial_disintegrated(mu, disc, delta=delta, substeps=cfg.run["substeps"], n_quad=nq)
    counts = np.bincount(part.locate(relays.positions), minlength=len(part)) / lam
    w.csv("cube_masses.csv", write_cube_masses_csv(masses))
    w.json("partition.json", part.to_dict())
    w.json("flattened_kernel.json", disc.to_dict())
    l1 = {m: kernel_l1_error(cfg.kernel, relays, part, m, cfg.spatial_law, n_quad=nq)
          for m in ("mu_vs_l", "l_vs_exact", "mu_vs_exact")}
    summary = {"cubes": len(part), "delta": delta, "gamma_total": float(masses.sum()),
               "gamma_whole_domain": whole, "decomposition_gap": abs(float(masses.sum()) - whole),
               "relay_mass_mu_R": n.relay_mass.tolist(), "relay_mass_counts": counts.tolist(),
               "kernel_l1": l1}
    return summary, []


def _mode_ldp(cfg: ExperimentConfig, w: _Writer, ex):
    from .fluid import gamma_mass
    from .ldp import TiltSpec, estimate_rare_event, ladder_csv, rate_curve_csv, rate_upper_bound, resolve_delta
    mu = _typical(cfg)
    r = cfg.r
    t = cfg.run["tilt"] or {"family": "mass-tilt", "theta_grid": list(np.round(np.linspace(0.5, 3.0, 11), 6))}
    tilt = TiltSpec(t["family"], tuple(t["theta_grid"]))
    sub = cfg.run["substeps"]
    delta = cfg.run["delta"] or resolve_delta(mu, r, cfg.run["tol"], tilt, sub, cfg.run["max_halvings"])
    typical = gamma_mass(mu, r, delta=delta, substeps=sub)
    target = cfg.run["target_mass"] if cfg.run["target_mass"] is not None else cfg.run["target_factor"] * typical
    bound = rate_upper_bound(mu, r, target, tilt, delta=delta, substeps=sub)
    ladder = estimate_rare_event(cfg.domain, cfg.spatial_law, cfg.time_law, cfg.kernel, cfg.run["lambda_ladder"],
                                 target, cfg.run["reps"], cfg.seed, r, executor=ex)
    w.csv("rate_curve.csv", rate_curve_csv(bound))
    w.csv("slope_ladder.csv", ladder_csv(ladder))
    best = bound.best.entropy if bound.best is not None else None
    top = ladder[-1]
    summary = {"delta": delta, "typical_gamma_mass": typical, "target_mass": target,
               "best_entropy": _clean(best), "best_theta": bound.best.theta if bound.best else None,
               "slopes": [_clean(p.slope) for p in ladder],
               "zero_hit_levels": [p.lam for p in ladder if p.zero_hits],
               "sandwich_holds": bool(best is not None and top.slope <= best + 3 * top.ci_width)}
    return summary, []


def _mode_invariants(cfg: ExperimentConfig, w: _Writer, ex):
    from .invariants import run_battery
    results = run_battery(cfg.seed, cfg.run["cases"], cfg.run["checks"])
    rows = ["check,passed,worst,tol,cases"] + [f"{r.name},{int(r.passed)},{r.worst!r},{r.tol!r},{r.cases}"
                                               for r in results]
    w.csv("invariants.csv", "\n".join(rows) + "\n")
    failed = [r.name for r in results if not r.passed]
    summary = {"checks": len(results), "failed": failed, "all_passed": not failed}
    return summary, []


_MODES = {"simulate": _mode_simulate, "fluid": _mode_fluid, "spatial": _mode_spatial,
          "ldp-slope": _mode_ldp, "invariant-suite": _mode_invariants}


# ------------------------------------------------------------------ driver

def _versions() -> dict:
    import numba
    import scipy
    return {"relaycap": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _fail(kind: str, code: int, msg: str) -> int:
    print(f"relaycap: error={kind} exit={code} reason={json.dumps(msg)}", file=sys.stderr)
    return code


def run(config_path, workers: int = 1, out: str | None = None, seed_override: int | None = None) -> int:
    """Execute one configuration; returns the process exit code."""
    t0 = time.time()
    try:
        cfg = load_config(config_path, seed_override, out)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, str(exc))
    w = _Writer(cfg)
    code, status = EXIT_OK, "ok"
    summary, seeds = {}, []
    try:
        with _pool(workers) as ex:
            summary, seeds = _MODES[cfg.mode](cfg, w, ex)
    except ModelViolation as exc:
        code, status = _fail("model-violation", EXIT_MODEL, str(exc)), "model-violation"
    except ConvergenceError as exc:
        code, status = _fail("convergence", EXIT_CONVERGENCE, str(exc)), "convergence"
    except (ConfigError, DomainError, StructuralError, ContractError) as exc:
        code, status = _fail("config", EXIT_CONFIG, str(exc)), "config"
    if code == EXIT_OK and cfg.mode == "invariant-suite" and not summary.get("all_passed", False):
        code, status = _fail("invariant", EXIT_CONFIG, "failed checks: " + ",".join(summary["failed"])), "invariant"
    if summary:
        w.json("summary.json", {"mode": cfg.mode, "seed": cfg.seed, **{k: _clean(v) for k, v in summary.items()}})
    manifest = {"config_hash": config_hash(cfg.raw), "config": cfg.raw, "mode": cfg.mode, "seed": cfg.seed,
                "replication_seeds": seeds, "versions": _versions(), "workers": workers,
                "status": status, "exit_code": code, "artifacts": sorted(w.files),
                "wall_time_s": round(time.time() - t0, 6),
                "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    w.files["manifest.json"] = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    try:
        w.flush()
    except OSError as exc:
        return _fail("io", EXIT_CONFIG, f"cannot write {cfg.output_dir}: {exc.strerror}")
    return code


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="relaycap", description="Run a relay-network experiment from a config file.")
    p.add_argument("--config", required=True, help="TOML or JSON experiment config (schema v1)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for replications")
    p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    p.add_argument("--seed-override", type=int, default=None, help="replace run.seed")
    args = p.parse_args(argv)
    if args.workers < 1:
        return _fail("config", EXIT_CONFIG, "--workers must be at least 1")
    return run(args.config, args.workers, args.out, args.seed_override)


if __name__ == "__main__":
    sys.exit(main())
