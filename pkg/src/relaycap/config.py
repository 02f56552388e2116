"""Experiment configuration, schema ``v1`` (TOML or JSON).

Example::

    schema = "v1"

    [model]
    domain = { box = [[0.0, 1.0]], t_f = 1.0 }
    relays = { layout = "grid", r = 1.0 }
    kernel = { family = "flat" }
    time_law = { family = "independent-uniform-pair" }
    spatial_law = { mass = 1.0 }

    [run]
    mode = "simulate"
    lambda = 50
    reps = 10
    seed = 1

    [output]
    directory = "out"
"""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import (DomainSpec, Kernel, RelayConfig, SpatialLaw, TimeLaw, kernel_from_dict)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ExperimentConfig", "load_config", "parse_config", "config_hash", "MODES"]

MODES = ("simulate", "fluid", "spatial", "ldp-slope", "invariant-suite")

_TOP = {"schema", "model", "run", "output"}
_MODEL = {"domain", "relays", "kernel", "time_law", "spatial_law"}
_RUN = {"mode", "lambda", "lambda_ladder", "reps", "seed", "delta", "delta_space", "tol", "substeps",
        "n_s", "n_t", "simulator", "target_mass", "target_factor", "tilt", "cases", "checks", "n_quad", "max_halvings"}
_OUTPUT = {"directory", "formats"}
_DEFAULT_RUN = {"lambda": 50.0, "reps": 10, "seed": 0, "delta": None, "delta_space": 0.25, "tol": 1e-3,
                "substeps": 100, "n_s": 16, "n_t": 16, "simulator": "exact", "target_mass": None,
                "target_factor": 1.5, "tilt": None, "cases": 10, "checks": None, "n_quad": 8,
                "lambda_ladder": None, "max_halvings": 16}


def _unknown(section: str, d: dict, allowed: set):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown keys in {section}: {', '.join(extra)}")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    raw: dict
    domain: DomainSpec
    relay_spec: dict
    kernel: Kernel
    time_law: TimeLaw
    spatial_law: SpatialLaw
    run: dict
    output_dir: Path
    formats: tuple[str, ...]

    @property
    def mode(self) -> str:
        return self.run["mode"]

    @property
    def seed(self) -> int:
        return int(self.run["seed"])

    @property
    def r(self) -> float:
        return float(self.relay_spec.get("r", 1.0))

    def relays(self, lam: float) -> RelayConfig:
        spec = self.relay_spec
        layout = spec.get("layout", "grid")
        if layout == "grid":
            return RelayConfig.grid(self.domain, lam, self.r)
        if layout == "explicit":
            return RelayConfig.explicit(spec["positions"], lam, self.domain)
        n = int(spec.get("n", max(1, round(self.r * lam))))
        return RelayConfig.iid(self.domain, lam, n, int(spec.get("seed", 0)))


def _num(v, what, positive=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{what} must be a number")
    if integer and int(v) != v:
        raise ConfigError(f"{what} must be an integer")
    if positive and not v > 0:
        raise ConfigError(f"{what} must be positive")
    return int(v) if integer else float(v)


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a raw configuration mapping.

    Raises:
        ConfigError: schema violations, with the offending key named.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    _unknown("top level", raw, _TOP)
    if raw.get("schema") != "v1":
        raise ConfigError(f"unsupported schema {raw.get('schema')!r}; expected 'v1'")
    model = raw.get("model")
    run = raw.get("run")
    if not isinstance(model, dict) or not isinstance(run, dict):
        raise ConfigError("model and run sections are required")
    _unknown("model", model, _MODEL)
    _unknown("run", run, _RUN)
    output = raw.get("output", {})
    _unknown("output", output, _OUTPUT)

    try:
        dom = model.get("domain", {"box": [[0.0, 1.0]], "t_f": 1.0})
        _unknown("model.domain", dom, {"box", "t_f"})
        box = tuple((float(a), float(b)) for a, b in dom["box"])
        domain = DomainSpec(box, _num(dom.get("t_f", 1.0), "t_f", positive=True))
        relays = dict(model.get("relays", {"layout": "grid", "r": 1.0}))
        _unknown("model.relays", relays, {"layout", "r", "positions", "n", "seed"})
        if relays.get("layout", "grid") not in ("grid", "explicit", "iid"):
            raise ConfigError(f"unknown relay layout {relays.get('layout')!r}")
        if "r" in relays:
            _num(relays["r"], "relays.r", positive=True)
        if relays.get("layout") == "explicit" and "positions" not in relays:
            raise ConfigError("explicit relay layout needs positions")
        kernel = kernel_from_dict(dict(model.get("kernel", {"family": "flat"})))
        tl = dict(model.get("time_law", {"family": "independent-uniform-pair"}))
        _unknown("model.time_law", tl, {"family", "rate", "s_edges", "t_edges", "st_mass"})
        time_law = TimeLaw(tl["family"], domain.t_f, float(tl.get("rate", 1.0)),
                           tl.get("s_edges"), tl.get("t_edges"), tl.get("st_mass"))
        sl = dict(model.get("spatial_law", {"mass": 1.0}))
        _unknown("model.spatial_law", sl, {"mass", "edges"})
        if "edges" in sl:
            spatial_law = SpatialLaw(tuple(np.asarray(e, float) for e in sl["edges"]), np.asarray(sl["mass"], float))
        else:
            spatial_law = SpatialLaw.uniform(domain, _num(sl.get("mass", 1.0), "spatial_law.mass", positive=True))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid model section: {exc}") from None

    merged = dict(_DEFAULT_RUN)
    merged.update(run)
    if merged.get("mode") not in MODES:
        raise ConfigError(f"run.mode must be one of {', '.join(MODES)}")
    merged["lambda"] = _num(merged["lambda"], "run.lambda", positive=True)
    merged["reps"] = _num(merged["reps"], "run.reps", positive=True, integer=True)
    merged["seed"] = _num(merged["seed"], "run.seed", integer=True)
    merged["tol"] = _num(merged["tol"], "run.tol", positive=True)
    merged["substeps"] = _num(merged["substeps"], "run.substeps", positive=True, integer=True)
    merged["delta_space"] = _num(merged["delta_space"], "run.delta_space", positive=True)
    for key in ("n_s", "n_t", "cases", "n_quad", "max_halvings"):
        merged[key] = _num(merged[key], f"run.{key}", positive=True, integer=True)
    if merged["delta"] is not None:
        merged["delta"] = _num(merged["delta"], "run.delta", positive=True)
    if merged["simulator"] not in ("exact", "marked"):
        raise ConfigError("run.simulator must be 'exact' or 'marked'")
    if merged["simulator"] == "marked" and not kernel.is_flat:
        raise ConfigError("the marked simulator is only valid for the flat kernel")
    if merged["lambda_ladder"] is not None:
        merged["lambda_ladder"] = [_num(v, "run.lambda_ladder", positive=True) for v in merged["lambda_ladder"]]
    if merged["mode"] == "ldp-slope" and not merged["lambda_ladder"]:
        raise ConfigError("ldp-slope needs run.lambda_ladder")
    tilt = merged["tilt"]
    if tilt is not None:
        _unknown("run.tilt", tilt, {"family", "theta_grid"})

    directory = Path(output.get("directory", "out"))
    if base_dir is not None and not directory.is_absolute():
        directory = base_dir / directory
    formats = tuple(output.get("formats", ["csv", "json"]))
    bad = set(formats) - {"csv", "json"}
    if bad:
        raise ConfigError(f"unsupported output formats: {', '.join(sorted(bad))}")
    return ExperimentConfig(raw, domain, relays, kernel, time_law, spatial_law, merged, directory, formats)


def _read(path: Path) -> dict:
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def load_config(path, seed_override: int | None = None, out_dir=None) -> ExperimentConfig:
    path = Path(path)
    raw = copy.deepcopy(_read(path))
    if seed_override is not None:
        raw.setdefault("run", {})["seed"] = int(seed_override)
    cfg = parse_config(raw, base_dir=Path.cwd())
    if out_dir is not None:
        cfg = ExperimentConfig(cfg.raw, cfg.domain, cfg.relay_spec, cfg.kernel, cfg.time_law, cfg.spatial_law,
                               cfg.run, Path(out_dir), cfg.formats)
    return cfg


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode()).hexdigest()
