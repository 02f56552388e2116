"""Network configuration and random transmitter populations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, DomainError, ModelViolation
from .measures import EmpiricalMeasure, ProductDensity

__all__ = [
    "DomainSpec",
    "RelayConfig",
    "Kernel",
    "FlatKernel",
    "GaussianKernel",
    "InversePowerKernel",
    "TabulatedKernel",
    "MinKernel",
    "NormalizedKernel",
    "kernel_from_dict",
    "TimeLaw",
    "SpatialLaw",
    "TransmitterEvent",
    "Population",
    "sample_population",
    "select_relay",
    "selection_probabilities",
    "kernel_row_mass",
    "typical_measure",
]

SELECTION_NORMALIZED = "selection-normalized"
RAW_INTENSITY = "raw-intensity"


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box ``W`` and time horizon ``t_f``."""

    box: tuple[tuple[float, float], ...]
    t_f: float = 1.0

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        if not box or any(b <= a for a, b in box):
            raise ConfigError(f"box {box} must have positive volume")
        if not self.t_f > 0:
            raise ConfigError("t_f must be positive")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "t_f", float(self.t_f))

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in self.box)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        lo = np.array([a for a, _ in self.box])
        hi = np.array([b for _, b in self.box])
        return np.all((x >= lo) & (x <= hi), axis=1)


@dataclass(frozen=True, eq=False)
class RelayConfig:
    """Relay positions at scale ``lam``; ``r_lambda = n / lam``."""

    positions: np.ndarray
    lam: float
    layout: str = "explicit"

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def r_lambda(self) -> float:
        return self.n / self.lam

    @classmethod
    def grid(cls, domain: DomainSpec, lam: float, r: float = 1.0) -> "RelayConfig":
        """Cell-midpoint grid with about ``r * lam`` relays.

        In dimension ``d > 1`` each axis gets ``round((r*lam)**(1/d))`` points,
        so ``r_lambda`` is the realized count over ``lam``, not ``r`` itself.
        """
        m = max(1, int(round((r * lam) ** (1.0 / domain.dim))))
        axes = [a + (np.arange(m) + 0.5) * (b - a) / m for a, b in domain.box]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(np.column_stack([g.ravel() for g in mesh]), lam, "grid")

    @classmethod
    def explicit(cls, positions, lam: float, domain: DomainSpec | None = None) -> "RelayConfig":
        cfg = cls(positions, lam, "explicit")
        if domain is not None and not domain.contains(cfg.positions).all():
            raise DomainError("relay positions outside W")
        return cfg

    @classmethod
    def iid(cls, domain: DomainSpec, lam: float, n: int, seed: int,
            law: "SpatialLaw | None" = None) -> "RelayConfig":
        law = law or SpatialLaw.uniform(domain)
        return cls(law.sample(np.random.default_rng(seed), n), lam, "iid")


# ------------------------------------------------------------------ kernels

class Kernel:
    """Preference kernel ``kappa(x, y)``; subclasses implement `evaluate`."""

    normalization: str = SELECTION_NORMALIZED
    kappa_inf: float | None = None

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Kernel matrix of shape ``(len(x), len(y))``."""
        raise NotImplementedError

    def __call__(self, x, y) -> np.ndarray:
        return self.evaluate(np.atleast_2d(np.asarray(x, float)), np.atleast_2d(np.asarray(y, float)))

    @property
    def is_flat(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


def _sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)


@dataclass(frozen=True)
class FlatKernel(Kernel):
    normalization: str = SELECTION_NORMALIZED
    kappa_inf: float = 1.0

    def evaluate(self, x, y):
        return np.ones((x.shape[0], y.shape[0]))

    @property
    def is_flat(self) -> bool:
        return True

    def to_dict(self):
        return {"family": "flat", "normalization": self.normalization}


@dataclass(frozen=True)
class GaussianKernel(Kernel):
    sigma: float = 0.1
    normalization: str = SELECTION_NORMALIZED
    kappa_inf: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("gaussian sigma must be positive")

    def evaluate(self, x, y):
        return np.exp(-_sqdist(x, y) / (2.0 * self.sigma ** 2))

    def to_dict(self):
        return {"family": "gaussian", "sigma": self.sigma, "normalization": self.normalization}


@dataclass(frozen=True)
class InversePowerKernel(Kernel):
    """``min(1, (cutoff / |x - y|) ** alpha)``."""

    alpha: float = 2.0
    cutoff: float = 0.05
    normalization: str = SELECTION_NORMALIZED
    kappa_inf: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.cutoff > 0):
            raise ConfigError("inverse-power kernel needs alpha > 0 and cutoff > 0")

    def evaluate(self, x, y):
        d = np.sqrt(_sqdist(x, y))
        return (self.cutoff / np.maximum(d, self.cutoff)) ** self.alpha

    def to_dict(self):
        return {"family": "inverse-power", "alpha": self.alpha, "cutoff": self.cutoff,
                "normalization": self.normalization}


@dataclass(frozen=True, eq=False)
class TabulatedKernel(Kernel):
    """Kernel given by a table over relay points (and optionally x cells).

    ``values`` has shape ``(k,)`` for an x-independent kernel or
    ``(n_x_cells, k)`` together with 1-D ``x_edges``.  A relay position is
    matched to the nearest tabulated point.
    """

    points: np.ndarray = None
    values: np.ndarray = None
    x_edges: np.ndarray | None = None
    normalization: str = SELECTION_NORMALIZED
    kappa_inf: float | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, float))
        vals = np.asarray(self.values, float)
        if vals.ndim == 1:
            vals = vals[None, :]
            if self.x_edges is not None:
                raise ConfigError("x_edges given for an x-independent table")
        elif self.x_edges is None or vals.shape[0] != len(self.x_edges) - 1:
            raise ConfigError("x_edges must match the table rows")
        if vals.shape[1] != pts.shape[0]:
            raise ConfigError("table columns must match tabulated points")
        if vals.min() < 0:
            raise ConfigError("kernel values must be nonnegative")
        kinf = self.kappa_inf if self.kappa_inf is not None else float(vals.max())
        if vals.max() > kinf:
            raise ConfigError("kernel values exceed kappa_inf")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kappa_inf", kinf)
        if self.x_edges is not None:
            object.__setattr__(self, "x_edges", np.asarray(self.x_edges, float))

    def evaluate(self, x, y):
        col = np.argmin(_sqdist(y, self.points), axis=1)
        if self.x_edges is None:
            row = np.zeros(x.shape[0], dtype=int)
        else:
            row = np.clip(np.searchsorted(self.x_edges, x[:, 0], side="right") - 1, 0, self.values.shape[0] - 1)
        return self.values[np.ix_(row, col)]

    def to_dict(self):
        d = {"family": "tabulated", "points": self.points.tolist(), "normalization": self.normalization}
        if self.x_edges is None:
            d["values"] = self.values[0].tolist()
        else:
            d["values"] = self.values.tolist()
            d["x_edges"] = self.x_edges.tolist()
        return d


@dataclass(frozen=True, eq=False)
class MinKernel(Kernel):
    """Pointwise minimum of two kernels."""

    a: Kernel = None
    b: Kernel = None
    normalization: str = SELECTION_NORMALIZED

    @property
    def kappa_inf(self):
        vals = [k.kappa_inf for k in (self.a, self.b) if k.kappa_inf is not None]
        return min(vals) if vals else None

    def evaluate(self, x, y):
        return np.minimum(self.a.evaluate(x, y), self.b.evaluate(x, y))

    def to_dict(self):
        return {"family": "min", "a": self.a.to_dict(), "b": self.b.to_dict()}


@dataclass(frozen=True, eq=False)
class NormalizedKernel(Kernel):
    """``kappa(x, y) / kappa_row_mass(x)``: the density of the selection law against ``l_lambda``."""

    base: Kernel = None
    relays: RelayConfig = None
    normalization: str = SELECTION_NORMALIZED

    def evaluate(self, x, y):
        row = kernel_row_mass(x, self.relays, self.base)
        if np.any(row <= 0):
            bad = x[np.argmax(row <= 0)]
            raise ModelViolation(f"zero kernel row at x={bad.tolist()}")
        return self.base.evaluate(x, y) / row[:, None]

    def to_dict(self):
        return {"family": "normalized", "base": self.base.to_dict()}


def kernel_from_dict(d: dict) -> Kernel:
    fam = d.get("family")
    norm = d.get("normalization", SELECTION_NORMALIZED)
    if norm not in (SELECTION_NORMALIZED, RAW_INTENSITY):
        raise ConfigError(f"unknown kernel normalization {norm!r}")
    if fam == "flat":
        return FlatKernel(normalization=norm)
    if fam == "gaussian":
        return GaussianKernel(sigma=float(d["sigma"]), normalization=norm)
    if fam == "inverse-power":
        return InversePowerKernel(alpha=float(d["alpha"]), cutoff=float(d["cutoff"]), normalization=norm)
    if fam == "tabulated":
        return TabulatedKernel(points=d["points"], values=d["values"], x_edges=d.get("x_edges"),
                               normalization=norm)
    raise ConfigError(f"unknown kernel family {fam!r}")


# --------------------------------------------------------------- time laws

_GL_NODES, _GL_WEIGHTS = leggauss(32)


@dataclass(frozen=True, eq=False)
class TimeLaw:
    """Joint law of entrance and exit times on ``[0, t_f]^2``.

    Families:
        ``independent-uniform-pair``: S, T iid uniform.
        ``shifted-exponential``: S uniform, T = S + E with E exponential of
            ``rate`` conditioned on ``S + E <= t_f``.
        ``exit-at-horizon``: S uniform, T = t_f (degenerate, for tests).
        ``tabulated``: cell masses on an (s, t) grid, uniform within cells.
    """

    family: str
    t_f: float = 1.0
    rate: float = 1.0
    s_edges: np.ndarray | None = None
    t_edges: np.ndarray | None = None
    st_mass: np.ndarray | None = None

    FAMILIES = ("independent-uniform-pair", "shifted-exponential", "exit-at-horizon", "tabulated")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ConfigError(f"unknown time law {self.family!r}")
        if self.family == "shifted-exponential" and not self.rate > 0:
            raise ConfigError("exponential rate must be positive")
        if self.family == "tabulated":
            se = np.asarray(self.s_edges, float)
            te = np.asarray(self.t_edges, float)
            m = np.asarray(self.st_mass, float)
            if m.shape != (se.size - 1, te.size - 1) or m.min() < 0 or not np.isfinite(m).all():
                raise ConfigError("tabulated time law has an invalid mass table")
            if not m.sum() > 0:
                raise ConfigError("tabulated time law is not integrable to a positive mass")
            if se[0] != 0 or te[0] != 0 or se[-1] != self.t_f or te[-1] != self.t_f:
                raise ConfigError("tabulated time law must span [0, t_f]^2")
            object.__setattr__(self, "s_edges", se)
            object.__setattr__(self, "t_edges", te)
            object.__setattr__(self, "st_mass", m / m.sum())

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        tf = self.t_f
        if self.family == "tabulated":
            cell = rng.choice(self.st_mass.size, size=n, p=self.st_mass.ravel())
            i, j = np.unravel_index(cell, self.st_mass.shape)
            a, b = rng.random(n), rng.random(n)
            s = self.s_edges[i] + a * (self.s_edges[i + 1] - self.s_edges[i])
            t = self.t_edges[j] + b * (self.t_edges[j + 1] - self.t_edges[j])
            return s, t
        s = rng.random(n) * tf
        if self.family == "independent-uniform-pair":
            return s, rng.random(n) * tf
        if self.family == "exit-at-horizon":
            return s, np.full(n, tf)
        v = rng.random(n)
        # inverse CDF of the exponential truncated to [0, t_f - s]
        e = -np.log1p(v * np.expm1(-self.rate * (tf - s))) / self.rate
        return s, np.minimum(s + e, tf)

    def st_grid(self, n_s: int = 32, n_t: int = 32):
        """Cell masses of the law on an (s, t) grid, as used by `ProductDensity`."""
        tf = self.t_f
        if self.family == "tabulated":
            return self.s_edges, self.t_edges, self.st_mass
        se = np.linspace(0.0, tf, n_s + 1)
        if self.family == "independent-uniform-pair":
            te = np.linspace(0.0, tf, n_t + 1)
            return se, te, np.full((n_s, n_t), 1.0 / (n_s * n_t))
        if self.family == "exit-at-horizon":
            m = np.zeros((n_s, 2))
            m[:, 1] = 1.0 / n_s
            return se, np.array([0.0, tf, tf]), m
        te = np.linspace(0.0, tf, n_t + 1)
        m = np.zeros((n_s, n_t))
        for i in range(n_s):
            a, b = se[i], se[i + 1]
            s = 0.5 * (b - a) * _GL_NODES + 0.5 * (a + b)
            wq = 0.5 * (b - a) * _GL_WEIGHTS / tf
            cdf = self._exit_cdf(s[:, None], te[None, :])
            m[i] = wq @ np.diff(cdf, axis=1)
        return se, te, m / m.sum()

    def _exit_cdf(self, s, tau):
        # P(T <= tau | S = s) for the truncated shifted exponential
        num = -np.expm1(-self.rate * np.clip(tau - s, 0.0, None))
        den = -np.expm1(-self.rate * (self.t_f - s))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(den > 0, num / np.where(den > 0, den, 1.0), (tau >= s).astype(float))
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        d = {"family": self.family, "t_f": self.t_f}
        if self.family == "shifted-exponential":
            d["rate"] = self.rate
        if self.family == "tabulated":
            d.update(s_edges=self.s_edges.tolist(), t_edges=self.t_edges.tolist(), st_mass=self.st_mass.tolist())
        return d


@dataclass(frozen=True, eq=False)
class SpatialLaw:
    """Piecewise-constant transmitter intensity over the box; ``mass`` holds cell masses."""

    edges: tuple[np.ndarray, ...]
    mass: np.ndarray

    def __post_init__(self):
        edges = tuple(np.asarray(e, float) for e in self.edges)
        mass = np.asarray(self.mass, float)
        if mass.shape != tuple(e.size - 1 for e in edges):
            raise ConfigError("spatial law mass shape does not match edges")
        if mass.min() < 0 or not np.isfinite(mass).all():
            raise ConfigError("spatial law must be a nonnegative finite density")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def uniform(cls, domain: DomainSpec, mass: float = 1.0) -> "SpatialLaw":
        return cls(tuple(np.array(b) for b in domain.box), np.full((1,) * domain.dim, float(mass)))

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        d = len(self.edges)
        if self.mass.size == 1:
            cells = [np.zeros(n, dtype=int)] * d
        else:
            flat = rng.choice(self.mass.size, size=n, p=(self.mass / self.mass.sum()).ravel())
            cells = np.unravel_index(flat, self.mass.shape)
        v = rng.random((n, d))
        cols = [e[c] + v[:, j] * (e[c + 1] - e[c]) for j, (e, c) in enumerate(zip(self.edges, cells))]
        return np.column_stack(cols) if n else np.zeros((0, d))

    def to_dict(self) -> dict:
        return {"edges": [e.tolist() for e in self.edges], "mass": self.mass.tolist()}


# -------------------------------------------------------------- populations

@dataclass(frozen=True)
class TransmitterEvent:
    s: float
    t_exit: float
    x: tuple[float, ...]
    u: float | None = None
    relay_idx: int | None = None
    id: int = 0


class Population(Sequence):
    """Array-backed, entrance-ordered list of transmitter events."""

    def __init__(self, s, t, x, u=None, ids=None, t_f: float = 1.0,
                 box: tuple[tuple[float, float], ...] | None = None):
        self.s = np.asarray(s, dtype=float).reshape(-1)
        n = self.s.size
        self.t = np.asarray(t, dtype=float).reshape(n)
        x = np.asarray(x, dtype=float)
        self.x = x.reshape(n, -1) if n else x.reshape(0, len(box) if box else (x.shape[-1] if x.ndim == 2 else 1))
        self.u = None if u is None else np.asarray(u, dtype=float).reshape(n)
        self.ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64).reshape(n)
        self.t_f = float(t_f)
        self.box = box if box is not None else tuple((0.0, 1.0) for _ in range(self.x.shape[1]))

    @classmethod
    def from_events(cls, events: Sequence[TransmitterEvent], t_f: float = 1.0, box=None) -> "Population":
        if isinstance(events, Population):
            return events
        events = list(events)
        d = len(events[0].x) if events else (len(box) if box else 1)
        u = None
        if events and all(e.u is not None for e in events):
            u = [e.u for e in events]
        return cls([e.s for e in events], [e.t_exit for e in events],
                   np.array([e.x for e in events], float).reshape(len(events), d),
                   u, [e.id for e in events], t_f, box)

    def __len__(self):
        return self.s.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            idx = np.arange(len(self))[i]
            return Population(self.s[idx], self.t[idx], self.x[idx],
                              None if self.u is None else self.u[idx], self.ids[idx], self.t_f, self.box)
        return TransmitterEvent(float(self.s[i]), float(self.t[i]), tuple(self.x[i].tolist()),
                                None if self.u is None else float(self.u[i]), None, int(self.ids[i]))

    def __iter__(self) -> Iterator[TransmitterEvent]:
        for i in range(len(self)):
            yield self[i]

    def is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        ds = np.diff(self.s)
        return bool(np.all((ds > 0) | ((ds == 0) & (np.diff(self.ids) > 0))))

    def to_empirical(self, lam: float) -> EmpiricalMeasure:
        """The scaled empirical measure ``lam^{-1} sum delta_(S, T, X, U)``."""
        if self.u is None:
            raise DomainError("population carries no marks")
        return EmpiricalMeasure(self.s, self.t, self.x, self.u, np.full(len(self), 1.0 / lam),
                                self.t_f, self.box)


def sample_population(domain: DomainSpec, lam: float, spatial_law: SpatialLaw,
                      time_law: TimeLaw, seed) -> Population:
    """Poisson population with intensity ``lam`` times the typical measure.

    ``seed`` may be an int or a `numpy.random.SeedSequence`.  Events are
    returned in entrance order; ids record generation order and break ties.
    """
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    if not math.isclose(time_law.t_f, domain.t_f):
        raise ConfigError("time law horizon differs from the domain horizon")
    mass = spatial_law.total_mass
    if not math.isfinite(mass):
        raise ConfigError("spatial law is not integrable")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(lam * mass))
    x = spatial_law.sample(rng, n)
    s, t = time_law.sample(rng, n)
    u = rng.random(n)
    order = np.argsort(s, kind="stable")
    return Population(s[order], t[order], x[order], u[order], order, domain.t_f, domain.box)


# -------------------------------------------------------------- selection

def kernel_row_mass(x, relays: RelayConfig, kernel: Kernel) -> np.ndarray | float:
    """``lam^{-1} sum_k kappa(x, y_k)``; scalar for a single point."""
    xa = np.atleast_2d(np.asarray(x, float))
    out = kernel.evaluate(xa, relays.positions).sum(axis=1) / relays.lam
    return float(out[0]) if np.ndim(x) == 1 else out


def selection_probabilities(x: np.ndarray, relays: RelayConfig, kernel: Kernel) -> np.ndarray:
    """Row-normalized selection probabilities, shape ``(len(x), n_relays)``."""
    x = np.atleast_2d(np.asarray(x, float))
    k = kernel.evaluate(x, relays.positions)
    tot = k.sum(axis=1)
    if np.any(tot <= 0):
        bad = x[np.argmax(tot <= 0)]
        raise ModelViolation(f"all-zero kernel row at x={bad.tolist()}")
    return k / tot[:, None]


def _inverse_cdf(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF selection, one row of weights per draw."""
    cum = np.cumsum(weights, axis=1)
    tot = cum[:, -1]
    if np.any(tot <= 0):
        raise ModelViolation("all-zero kernel row")
    idx = (cum <= (u * tot)[:, None]).sum(axis=1)
    last = weights.shape[1] - 1 - np.argmax(weights[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


def select_relay(x, relays: RelayConfig, kernel: Kernel, u: float) -> int:
    """Relay chosen by the uniform draw ``u`` with probability ``kappa(x, y_k) / sum_j kappa(x, y_j)``."""
    xa = np.atleast_2d(np.asarray(x, float))
    w = kernel.evaluate(xa, relays.positions)
    if w.sum() <= 0:
        raise ModelViolation(f"all-zero kernel row at x={xa[0].tolist()}")
    return int(_inverse_cdf(w, np.array([u]))[0])


def select_relays(x: np.ndarray, relays: RelayConfig, kernel: Kernel, u: np.ndarray,
                  chunk: int = 4096) -> np.ndarray:
    """`select_relay` for many points at once."""
    n = x.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if kernel.is_flat:
        return np.minimum((u * relays.n).astype(np.int64), relays.n - 1)
    out = np.empty(n, dtype=np.int64)
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        w = kernel.evaluate(x[a:b], relays.positions)
        tot = w.sum(axis=1)
        if np.any(tot <= 0):
            bad = x[a + int(np.argmax(tot <= 0))]
            raise ModelViolation(f"all-zero kernel row at x={bad.tolist()}")
        out[a:b] = _inverse_cdf(w, u[a:b])
    return out


def typical_measure(domain: DomainSpec, spatial_law: SpatialLaw, time_law: TimeLaw,
                    n_s: int = 32, n_t: int = 32) -> ProductDensity:
    """The typical driving measure (spatial law times time law) with uniform marks."""
    se, te, st = time_law.st_grid(n_s, n_t)
    m = spatial_law.total_mass
    xm = spatial_law.mass / m if m > 0 else np.full(spatial_law.mass.shape, 1.0 / spatial_law.mass.size)
    return ProductDensity(se, te, st * m, spatial_law.edges, xm, np.array([0.0, 1.0]), np.array([1.0]))
