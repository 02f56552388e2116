"""Randomized invariant battery.

Every check draws its own random cases from a seed, evaluates one inequality
or identity on each, and reports the worst violation against a tolerance.
The same battery backs the ``invariant-suite`` run mode and the test suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fluid import (beta, beta_residual, gamma_mass, solve_scalar_depletion, solve_sysode,
                    solve_sysode_coupled, solve_sysode_renormalized, window_mass_sup)
from .measures import (EmpiricalMeasure, FrustrationAtoms, ProductDensity, query, relative_entropy,
                       tv_distance)
from .model import (DomainSpec, FlatKernel, GaussianKernel, MinKernel, RelayConfig, SpatialLaw, TimeLaw,
                    sample_population, typical_measure)
from .simulator import simulate_coupled, simulate_exact, simulate_marked

__all__ = ["CheckResult", "CHECKS", "run_battery", "random_empirical", "random_density",
           "random_density_pair", "dominated_atoms"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    tol: float
    cases: int

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} worst={self.worst:.3e} tol={self.tol:.1e} cases={self.cases}"


def _result(name, worst, tol, cases):
    worst = float(worst)
    return CheckResult(name, bool(worst <= tol), worst, float(tol), int(cases))


# ------------------------------------------------------------ random drivers

def random_empirical(rng: np.random.Generator, max_atoms: int = 30, t_f: float = 1.0,
                     weight: float | None = None) -> EmpiricalMeasure:
    n = int(rng.integers(1, max_atoms + 1))
    w = weight if weight is not None else 1.0 / int(rng.integers(5, 40))
    return EmpiricalMeasure(rng.random(n) * t_f, rng.random(n) * t_f, rng.random((n, 1)), rng.random(n),
                            np.full(n, w), t_f, ((0.0, 1.0),))


def random_density(rng: np.random.Generator, t_f: float = 1.0) -> ProductDensity:
    n_s = int(rng.choice([2, 4, 8]))
    n_t = int(rng.choice([2, 4, 8]))
    st = rng.gamma(1.0, 1.0, (n_s, n_t)) + 1e-3
    st *= rng.uniform(0.3, 2.0) / st.sum()
    um = rng.dirichlet(np.ones(3))
    ue = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, 2)), [1.0]])
    return ProductDensity(np.linspace(0, t_f, n_s + 1), np.linspace(0, t_f, n_t + 1), st,
                          (np.array([0.0, 1.0]),), np.ones(1), ue, um)


def random_density_pair(rng: np.random.Generator):
    """``(nu, nu_up)`` with ``nu <= nu_up`` cellwise on the (s, t) factor."""
    up = random_density(rng)
    return up.with_st_mass(up.st_mass * rng.uniform(0.0, 1.0, up.st_mass.shape)), up


def dominated_atoms(rng: np.random.Generator):
    up = random_empirical(rng)
    keep = rng.random(len(up)) < 0.6
    return up.subset(keep), up


def _grid_times(*states) -> np.ndarray:
    return np.unique(np.concatenate([s.times for s in states]))


# --------------------------------------------------------------- fluid side

def check_conservation_atoms(rng, n):
    worst = 0.0
    for _ in range(n):
        nu = random_empirical(rng)
        for delta in (0.25, 0.125, 1 / 32):
            worst = max(worst, solve_sysode(nu, delta).conservation_error())
            rho = float(rng.uniform(1.01, 2.0))
            worst = max(worst, solve_sysode_renormalized(nu, rho, delta).conservation_error())
        lo, up = dominated_atoms(rng)
        worst = max(worst, solve_sysode_coupled(lo, up, 0.125).conservation_error())
    return _result("conservation_atoms", worst, 1e-9, n)


def check_conservation_density(rng, n, substeps=50):
    # Euler bookkeeping is conservative by construction; the budget only
    # guards against transfer mistakes
    ratio = 0.0
    for _ in range(n):
        nu = random_density(rng)
        delta = 0.125
        dens = float((nu.st_mass.sum(axis=1) / np.diff(nu.s_edges)).max())
        budget = 5.0 * (delta / substeps) * dens
        err = solve_sysode(nu, delta, substeps).conservation_error()
        lo, up = random_density_pair(rng)
        err = max(err, solve_sysode_coupled(lo, up, delta, substeps).conservation_error())
        ratio = max(ratio, err / budget)
    return _result("conservation_density", ratio, 1.0, n)


def check_scalar_order(rng, n):
    """Depletion solutions keep the order of their initial values."""
    worst = -math.inf
    for i in range(n):
        if i % 2 == 0:
            nu = random_empirical(rng)
            w = float(nu.w[0])
            k = int(rng.integers(0, 10))
            a, a2 = k * w, (k + int(rng.integers(1, 10))) * w
            tol = 1e-9
        else:
            nu = random_density(rng)
            a = float(rng.uniform(0, 1))
            a2 = a + float(rng.uniform(1e-3, 1))
            tol = 1e-6
        lo = float(rng.uniform(0, 0.5))
        rng_ = (lo, float(rng.uniform(lo, 1.0)))
        _, b = solve_scalar_depletion(nu, a, rng_, steps=400)
        _, b2 = solve_scalar_depletion(nu, a2, rng_, steps=400)
        worst = max(worst, float(np.max(b - b2)) - tol)
    return _result("scalar_depletion_order", worst, 0.0, n)


def check_idle_monotone_in_halving(rng, n, substeps=40):
    """Idle mass at half the window length is pointwise at least the coarse one."""
    worst = 0.0
    for _ in range(n):
        nu = random_density(rng)
        coarse = solve_sysode(nu, 0.125, substeps)
        fine = solve_sysode(nu, 0.0625, substeps)
        t = coarse.times
        worst = max(worst, float(np.max(coarse.at("idle", t) - fine.at("idle", t))))
    return _result("idle_monotone_in_halving", worst, 1e-6, n)


def check_halving_gap_bound(rng, n, substeps=20):
    """Refining the windows moves idle mass by at most the certified bound."""
    worst = -math.inf
    for _ in range(n):
        nu = random_density(rng)
        delta = 0.125
        base = solve_sysode(nu, delta, substeps)
        bound = base.final_crit() + 2 * window_mass_sup(nu, delta)
        for k in range(1, 5):
            fine = solve_sysode(nu, delta / 2 ** k, substeps)
            t = _grid_times(base)
            gap = float(np.max(fine.at("idle", t) - base.at("idle", t)))
            worst = max(worst, gap - bound)
    return _result("halving_gap_bound", worst, 1e-6, n)


def check_critical_vanishes(rng, n, substeps=10):
    """Critical mass shrinks along halvings; atoms reach exactly zero once times separate."""
    worst = 0.0
    for i in range(n):
        if i % 2 == 0:
            nu = random_density(rng)
            delta, prev = 0.125, math.inf
            for _ in range(12):
                c = solve_sysode(nu, delta, substeps).final_crit()
                worst = max(worst, c - prev)
                prev = c
                if c < 1e-3:
                    break
                delta /= 2
            worst = max(worst, 0.0 if prev < 1e-3 else prev)
        else:
            nu = random_empirical(rng)
            pts = np.unique(np.concatenate([nu.s, nu.t]))
            gap = float(np.min(np.diff(pts))) if pts.size > 1 else 1.0
            delta = 0.125
            while delta >= gap:
                delta /= 2
            worst = max(worst, solve_sysode(nu, delta).final_crit())
    return _result("critical_mass_vanishes", worst, 1e-9, n)


def check_beta_residual(rng, n, tol=1e-3, substeps=20):
    """``beta`` satisfies the occupancy integral equation up to ``tol * r`` plus an Euler budget."""
    worst = -math.inf
    for _ in range(n):
        nu = random_density(rng)
        r = float(rng.uniform(0.5, 2.0))
        traj = beta(nu, r, tol, substeps)
        t = np.linspace(0, nu.t_f, 33)
        res = beta_residual(nu, traj, t)
        dens = float((nu.st_mass.sum(axis=1) / np.diff(nu.s_edges)).max())
        budget = tol * r + 5.0 * (traj.delta_used / substeps) * dens
        worst = max(worst, res - budget)
    return _result("beta_integral_residual", worst, 0.0, n)


def check_coupled_domination(rng, n, substeps=40):
    """The coupled idle mass sits below both single-driver idle masses, within the critical slack."""
    worst = -math.inf
    for i in range(n):
        if i % 2 == 0:
            lo, up = dominated_atoms(rng)
            tol, args = 1e-9, ()
        else:
            lo, up = random_density_pair(rng)
            tol, args = 1e-6, (substeps,)
        delta = 0.125
        c = solve_sysode_coupled(lo, up, delta, *args)
        a = solve_sysode(lo, delta, *args)
        b = solve_sysode(up, delta, *args)
        t = _grid_times(c, a, b)
        ic, ia, ib = c.at("idle", t), a.at("idle", t), b.at("idle", t)
        slack = c.at("crit", t) + c.at("crit2", t)
        v = max(float(np.max(ic - np.minimum(ia, ib))),
                float(np.max(np.maximum(ia, ib) - ic - slack)))
        worst = max(worst, v - tol)
    return _result("coupled_idle_domination", worst, 0.0, n)


def check_renormalized_domination(rng, n):
    """Renormalized idle mass against the plain system and its rescaled driver.

    The comparison with the rescaled driver compares jump processes started
    ``rho - 1`` apart, so ``rho - 1`` is drawn on the atom-weight lattice.
    Off the lattice that bound can fail by up to one atom weight.
    """
    worst = 0.0
    for _ in range(n):
        nu = random_empirical(rng)
        rho = 1.0 + float(nu.w[0]) * int(rng.integers(1, 8))
        delta = float(rng.choice([0.25, 0.125, 0.0625]))
        ren = solve_sysode_renormalized(nu, rho, delta)
        plain = solve_sysode(nu, delta)
        scaled = solve_sysode(nu.scaled(1.0 / rho), delta)
        t = _grid_times(ren, plain, scaled)
        ir, ip, isc = ren.at("idle", t), plain.at("idle", t), rho * scaled.at("idle", t)
        slack = ren.at("crit", t) + ren.at("crit2", t)
        v = max(float(np.max(ir - np.minimum(ip, isc))),
                float(np.max(ip - ir - slack)),
                float(np.max(isc - ir - slack - (rho - 1))))
        worst = max(worst, v)
    return _result("renormalized_idle_domination", worst, 1e-9, n)


def check_beta_tv_lipschitz(rng, n, tol=1e-3, substeps=20):
    """``|beta(nu) - beta(nu_up)| <= 2 ||nu_up - nu||`` for dominated pairs."""
    worst = -math.inf
    for _ in range(n):
        lo, up = random_density_pair(rng)
        a = beta(lo, 1.0, tol, substeps)
        b = beta(up, 1.0, tol, substeps)
        t = np.linspace(0, up.t_f, 65)
        diff = float(np.max(np.abs(a.at(t) - b.at(t))))
        bound = 2 * (up.total_mass - lo.total_mass) + a.error_bound + b.error_bound
        worst = max(worst, diff - bound)
    return _result("beta_tv_lipschitz", worst, 0.0, n)


# ------------------------------------------------------------ measures side

def check_query_additivity(rng, n):
    worst = 0.0
    for i in range(n):
        nu = random_empirical(rng) if i % 2 == 0 else random_density(rng)
        a, c = sorted(rng.uniform(0, 1, 2))
        b = float(rng.uniform(a, c))
        whole = query(nu, s_range=(a, c))
        parts = query(nu, s_range=(a, b)) + query(nu, s_range=(b, c))
        ulo, uhi = sorted(rng.uniform(0, 1, 2))
        worst = max(worst, abs(whole - parts))
        whole_u = query(nu, u_range=(ulo, uhi))
        worst = max(worst, 0.0 if whole_u <= nu.total_mass + 1e-12 else whole_u)
    return _result("query_additivity", worst, 1e-12, n)


def check_entropy_nonnegative(rng, n):
    worst = 0.0
    for _ in range(n):
        mu = random_density(rng)
        nu = mu.with_st_mass(mu.st_mass * rng.uniform(0.1, 3.0, mu.st_mass.shape))
        h = relative_entropy(nu, mu)
        worst = max(worst, -float(h), abs(float(relative_entropy(mu, mu))))
    return _result("entropy_nonnegative", worst, 1e-12, n)


def check_tv_metric(rng, n):
    worst = 0.0
    for _ in range(n):
        pool = rng.random((6, 3))

        def atoms():
            m = rng.random(6) < 0.5
            return FrustrationAtoms(pool[m, 0], pool[m, 1], pool[m, 2:], rng.random(int(m.sum())))

        a, b, c = atoms(), atoms(), atoms()
        worst = max(worst, abs(tv_distance(a, b) - tv_distance(b, a)), tv_distance(a, a),
                    tv_distance(a, c) - tv_distance(a, b) - tv_distance(b, c))
    return _result("tv_metric", worst, 1e-12, n)


# ------------------------------------------------------------ simulator side

_DOM = DomainSpec(((0.0, 1.0),), 1.0)
_TL = TimeLaw("independent-uniform-pair", 1.0)
_SL = SpatialLaw.uniform(_DOM)


def check_no_overlap(rng, n, lam=40.0):
    bad = 0
    for _ in range(n):
        seed = int(rng.integers(2 ** 32))
        pop = sample_population(_DOM, lam, _SL, _TL, seed)
        relays = RelayConfig.grid(_DOM, lam, float(rng.uniform(0.3, 1.5)))
        _, tl = simulate_exact(pop, relays, GaussianKernel(sigma=0.2), seed + 1)
        counts = tl.count_at(np.linspace(0, 1, 51))
        bad += int(tl.overlaps()) + int(np.any(counts > relays.n))
    return _result("relay_intervals_disjoint", bad, 0, n)


def check_coupled_tv_bound(rng, n, lam=100.0):
    """Frustration measures of coupled kernels differ by at most the mass pointing at critical relays."""
    worst = -math.inf
    ka = GaussianKernel(sigma=0.3)
    kb = MinKernel(ka, GaussianKernel(sigma=0.15))
    for _ in range(n):
        seed = int(rng.integers(2 ** 32))
        pop = sample_population(_DOM, lam, _SL, _TL, seed)
        relays = RelayConfig.grid(_DOM, lam, 1.0)
        ga, gb, rep = simulate_coupled(pop, relays, ka, kb, seed + 1)
        worst = max(worst, tv_distance(ga, gb) - rep.pointing_mass)
    return _result("coupled_tv_pointing_bound", worst, 1e-12, n)


def check_capacity_monotone(rng, n, lam=50.0):
    """More relay mass never frustrates more transmitters under shared marks."""
    worst = 0.0
    for _ in range(n):
        pop = sample_population(_DOM, lam, _SL, _TL, int(rng.integers(2 ** 32)))
        r = float(rng.uniform(0.2, 1.5))
        small, _ = simulate_marked(pop, r, lam)
        large, _ = simulate_marked(pop, r + 1.0 / lam, lam)
        worst = max(worst, large.total_mass - small.total_mass)
    return _result("capacity_monotone", worst, 1e-12, n)


# ------------------------------------------------------------ spatial and ldp

def check_spatial_identities(rng, n, substeps=10):
    from .spatial import (build_partition, flatten_kernel, gamma_spatial, gamma_spatial_disintegrated,
                          spatial_measure)
    worst = 0.0
    for _ in range(n):
        lam = float(rng.integers(20, 80))
        relays = RelayConfig.grid(_DOM, lam, float(rng.uniform(0.5, 1.5)))
        part = build_partition(_DOM, float(rng.choice([0.5, 0.3, 0.25])))
        ker = GaussianKernel(sigma=float(rng.uniform(0.1, 0.5)))
        x = rng.random((5, 1))
        idx = part.locate(x)
        worst = max(worst, abs(part.volumes().sum() - _DOM.volume),
                    float(np.any((idx < 0) | (idx >= len(part)))))
        for nu_r in ("l_lambda", "mu_R"):
            d = flatten_kernel(ker, relays, nu_r, part, base=nu_r)
            cm = d.cube_mass(x)
            if nu_r == "l_lambda":
                vals = d.value(x, relays.positions) / relays.lam
                own = part.locate(relays.positions)
                avg = np.stack([vals[:, own == i].sum(axis=1) for i in range(len(part))], axis=1)
                worst = max(worst, float(np.max(np.abs(avg - cm))))
            worst = max(worst, float(np.max(np.abs(cm.sum(axis=1) - 1.0))))
        d = flatten_kernel(ker, relays, "mu_R", part, base="mu_R")
        mu = typical_measure(_DOM, _SL, _TL, 4, 4)
        g = gamma_spatial(spatial_measure(mu, d), delta=1 / 32, substeps=substeps).total_mass
        h = gamma_spatial_disintegrated(mu, d, delta=1 / 32, substeps=substeps)
        worst = max(worst, abs(g - h))
    return _result("spatial_identities", worst, 1e-8, n)


def check_mass_tilt_monotone(rng, n, substeps=20):
    from .ldp import tilt_measure
    worst = 0.0
    for _ in range(n):
        mu = random_density(rng)
        r = float(rng.uniform(0.5, 2.0))
        thetas = np.sort(rng.uniform(0.2, 3.0, 5))
        g = [gamma_mass(tilt_measure(mu, "mass-tilt", th), r, delta=1 / 64, substeps=substeps) for th in thetas]
        worst = max(worst, float(np.max(-np.diff(g))), abs(float(relative_entropy(tilt_measure(mu, "mass-tilt", 1.0), mu))))
    return _result("mass_tilt_monotone", worst, 1e-9, n)


CHECKS: dict[str, Callable] = {
    "conservation_atoms": check_conservation_atoms,
    "conservation_density": check_conservation_density,
    "scalar_depletion_order": check_scalar_order,
    "idle_monotone_in_halving": check_idle_monotone_in_halving,
    "halving_gap_bound": check_halving_gap_bound,
    "critical_mass_vanishes": check_critical_vanishes,
    "beta_integral_residual": check_beta_residual,
    "coupled_idle_domination": check_coupled_domination,
    "renormalized_idle_domination": check_renormalized_domination,
    "beta_tv_lipschitz": check_beta_tv_lipschitz,
    "query_additivity": check_query_additivity,
    "entropy_nonnegative": check_entropy_nonnegative,
    "tv_metric": check_tv_metric,
    "relay_intervals_disjoint": check_no_overlap,
    "coupled_tv_pointing_bound": check_coupled_tv_bound,
    "capacity_monotone": check_capacity_monotone,
    "spatial_identities": check_spatial_identities,
    "mass_tilt_monotone": check_mass_tilt_monotone,
}


def run_battery(seed: int = 0, cases: int = 10, names=None) -> list[CheckResult]:
    """Run the named checks (all by default), each from its own seeded stream."""
    names = list(CHECKS) if names is None else list(names)
    out = []
    for i, name in enumerate(names):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        out.append(CHECKS[name](rng, cases))
    return out
