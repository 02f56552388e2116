"""Entropy costs of tilted driving measures and rare-event slope estimates.

`rate_upper_bound` scans a one-parameter family of distortions of the typical
measure and keeps the cheapest member whose fluid frustrated mass reaches a
target; this bounds the rate from above.  `estimate_rare_event` estimates
``-log P(frustrated mass >= target) / lam`` by plain Monte Carlo.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .errors import ConfigError, DomainError
from .fluid import beta, gamma_mass
from .measures import INFINITE, ProductDensity, relative_entropy
from .model import (DomainSpec, Kernel, RelayConfig, SpatialLaw, TimeLaw, sample_population)
from .simulator import simulate_exact

__all__ = [
    "TiltSpec",
    "RateCurvePoint",
    "RateBound",
    "LadderPoint",
    "tilt_measure",
    "resolve_delta",
    "rate_upper_bound",
    "estimate_rare_event",
    "rate_curve_csv",
    "ladder_csv",
]

FAMILIES = ("mass-tilt", "time-tilt", "exit-tilt")


@dataclass(frozen=True)
class TiltSpec:
    """A tilt family and the parameters to scan.

    ``mass-tilt`` multiplies the density by ``theta`` (null at 1).
    ``time-tilt`` and ``exit-tilt`` reweight entrance or exit times by
    ``exp(theta * t / t_f)`` at fixed total mass (null at 0).
    """

    family: str
    theta_grid: tuple[float, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown tilt family {self.family!r}")
        grid = tuple(float(v) for v in self.theta_grid)
        if not grid:
            raise ConfigError("empty theta grid")
        if self.family == "mass-tilt" and min(grid) < 0:
            raise ConfigError("mass tilts must be nonnegative")
        object.__setattr__(self, "theta_grid", grid)

    @property
    def null(self) -> float:
        return 1.0 if self.family == "mass-tilt" else 0.0


@dataclass(frozen=True)
class RateCurvePoint:
    theta: float
    entropy: float
    gamma_mass: float
    feasible: bool


@dataclass(frozen=True)
class RateBound:
    best: RateCurvePoint | None
    curve: tuple[RateCurvePoint, ...]
    delta: float

    @property
    def feasible(self) -> bool:
        return self.best is not None


def _cell_exp_mean(edges: np.ndarray, c: float) -> np.ndarray:
    # mean of exp(c t) over each cell; the value at the point for zero-width cells
    a, b = edges[:-1], edges[1:]
    w = b - a
    if c == 0:
        return np.ones(a.size)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.exp(c * a) * np.expm1(c * w) / (c * w)
    return np.where(w > 0, avg, np.exp(c * a))


def tilt_measure(mu: ProductDensity, family: str, theta: float) -> ProductDensity:
    """The member ``theta`` of a tilt family applied to ``mu``."""
    if family == "mass-tilt":
        if theta < 0:
            raise DomainError("mass tilt must be nonnegative")
        return mu.scaled(theta)
    tf = mu.t_f
    if family == "time-tilt":
        st = mu.st_mass * _cell_exp_mean(mu.s_edges, theta / tf)[:, None]
    elif family == "exit-tilt":
        st = mu.st_mass * _cell_exp_mean(mu.t_edges, theta / tf)[None, :]
    else:
        raise ConfigError(f"unknown tilt family {family!r}")
    tot = st.sum()
    return mu.with_st_mass(st * (mu.total_mass / tot) if tot > 0 else st)


def resolve_delta(mu: ProductDensity, r: float, tol: float, tilt: TiltSpec | None = None,
                  substeps: int = 100, max_halvings: int = 24) -> float:
    """Window length meeting ``tol`` for ``mu`` and every member of ``tilt``.

    Evaluating a whole family at one window length keeps the curve free of
    ladder jumps, and the typical value can be recomputed at the same length.
    """
    members = [mu] if tilt is None else [mu] + [tilt_measure(mu, tilt.family, t) for t in tilt.theta_grid]
    return min(beta(m, r, tol, substeps, max_halvings).delta_used for m in members if m.total_mass > 0)


def _point(mu, r, target, family, theta, delta, substeps, rel=1e-12):
    nu = tilt_measure(mu, family, theta)
    h = relative_entropy(nu, mu)
    g = gamma_mass(nu, r, delta=delta, substeps=substeps) if nu.total_mass > 0 else 0.0
    h = math.inf if h is INFINITE else float(h)
    return RateCurvePoint(float(theta), h, g, g >= target - rel * max(1.0, abs(target)))


def rate_upper_bound(mu: ProductDensity, r: float, target_mass: float, tilt: TiltSpec, tol: float = 1e-3,
                     delta: float | None = None, substeps: int = 100, refine: bool = True,
                     theta_tol: float = 1e-10) -> RateBound:
    """Cheapest tilt whose fluid frustrated mass reaches ``target_mass``.

    The grid is evaluated first.  With ``refine``, every adjacent pair of grid
    points that straddles feasibility is bisected down to ``theta_tol`` and
    the feasible end of the bracket joins the candidates.  Returns an
    infeasible result (``best is None``) instead of raising.
    """
    if not r > 0:
        raise DomainError("r must be positive")
    if delta is None:
        delta = resolve_delta(mu, r, tol, tilt, substeps)
    thetas = sorted(set(tilt.theta_grid) | {tilt.null})
    curve = [_point(mu, r, target_mass, tilt.family, th, delta, substeps) for th in thetas]
    cands = [p for p in curve if p.feasible]
    if refine:
        for a, b in zip(curve[:-1], curve[1:]):
            if a.feasible == b.feasible:
                continue
            lo, hi = (a, b) if b.feasible else (b, a)
            while abs(hi.theta - lo.theta) > theta_tol:
                mid = _point(mu, r, target_mass, tilt.family, 0.5 * (lo.theta + hi.theta), delta, substeps)
                if mid.feasible:
                    hi = mid
                else:
                    lo = mid
            cands.append(hi)
    best = min(cands, key=lambda p: (p.entropy, abs(p.theta - tilt.null))) if cands else None
    return RateBound(best, tuple(curve), float(delta))


# ----------------------------------------------------------- Monte Carlo

@dataclass(frozen=True)
class LadderPoint:
    lam: float
    reps: int
    hits: int
    p_hat: float
    p_lo: float
    p_hi: float
    slope: float
    slope_lo: float
    slope_hi: float
    zero_hits: bool

    @property
    def ci_width(self) -> float:
        return self.slope_hi - self.slope_lo


def _neg_log_rate(p: float, lam: float) -> float:
    return math.inf if p <= 0 else -math.log(p) / lam


def _rep_mass(args) -> float:
    domain, spatial_law, time_law, kernel, r, lam, pop_seed, sel_seed = args
    relays = RelayConfig.grid(domain, lam, r)
    pop = sample_population(domain, lam, spatial_law, time_law, pop_seed)
    atoms, _ = simulate_exact(pop, relays, kernel, sel_seed)
    return atoms.total_mass


def replication_seeds(seed: int, level: int, rep: int) -> tuple[int, int]:
    """Population and selection seeds of one replication, independent of scheduling."""
    a, b = np.random.SeedSequence([int(seed), int(level), int(rep)]).generate_state(2, dtype=np.uint64)
    return int(a), int(b)


def estimate_rare_event(domain: DomainSpec, spatial_law: SpatialLaw, time_law: TimeLaw, kernel: Kernel,
                        lambda_ladder, target_mass: float, reps: int, seed: int = 0, r: float = 1.0,
                        confidence: float = 0.95, executor=None) -> list[LadderPoint]:
    """Frequency of ``frustrated mass >= target_mass`` at each ``lam``.

    Relays sit on a grid with about ``r * lam`` points.  Slope bounds come
    from the Wilson interval of the frequency; with zero hits only the lower
    slope bound is finite and the point is flagged.

    ``executor`` may be any object with an ordered ``map`` (a process pool,
    for instance); results do not depend on it.
    """
    if reps < 1:
        raise ConfigError("reps must be positive")
    mapper = executor.map if executor is not None else map
    out = []
    for level, lam in enumerate(lambda_ladder):
        lam = float(lam)
        jobs = [(domain, spatial_law, time_law, kernel, r, lam) + replication_seeds(seed, level, i)
                for i in range(reps)]
        masses = np.fromiter(mapper(_rep_mass, jobs), float, count=reps)
        hits = int(np.sum(masses >= target_mass - 1e-12))
        ci = binomtest(hits, reps).proportion_ci(confidence_level=confidence, method="wilson")
        p = hits / reps
        out.append(LadderPoint(lam, reps, hits, p, float(ci.low), float(ci.high),
                               _neg_log_rate(p, lam), _neg_log_rate(float(ci.high), lam),
                               _neg_log_rate(float(ci.low), lam), hits == 0))
    return out


def _fmt(v: float) -> str:
    return repr(float(v))


def rate_curve_csv(bound: RateBound) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "entropy", "gamma_mass", "feasible"])
    for p in bound.curve:
        w.writerow([_fmt(p.theta), _fmt(p.entropy), _fmt(p.gamma_mass), int(p.feasible)])
    return buf.getvalue()


def ladder_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "reps", "hits", "p_hat", "slope", "ci_lo", "ci_hi", "zero_hits"])
    for p in points:
        w.writerow([_fmt(p.lam), p.reps, p.hits, _fmt(p.p_hat), _fmt(p.slope),
                    _fmt(p.slope_lo), _fmt(p.slope_hi), int(p.zero_hits)])
    return buf.getvalue()
