"""Finite measures on entrance time, exit time, location and mark.

Two driving-measure variants are supported: atomic (`EmpiricalMeasure`) and
piecewise-constant product densities (`ProductDensity`).  Frustration
measures live on entrance time, exit time and location only and come as
`FrustrationAtoms` or `FrustrationGrid`.

Range conventions used by `query`:

* entrance ranges are half-open ``(a, b]`` unless an explicit `Interval`
  says otherwise,
* exit and mark ranges are closed ``[a, b]``,
* spatial regions are closed boxes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, StructuralError

__all__ = [
    "Interval",
    "INFINITE",
    "Infinite",
    "EmpiricalMeasure",
    "ProductDensity",
    "DrivingMeasure",
    "FrustrationAtoms",
    "FrustrationGrid",
    "FrustrationMeasure",
    "query",
    "relative_entropy",
    "tv_distance",
    "window_index",
    "measure_to_dict",
    "measure_from_dict",
    "frustration_to_dict",
    "frustration_from_dict",
]

_WINDOW_EPS = 1e-9


def window_index(s, delta: float):
    """Index ``k`` of the window ``(k*delta, (k+1)*delta]`` holding ``s``.

    ``s = 0`` belongs to window 0.  Times within ``1e-9 * delta`` above a
    boundary are treated as lying on it, which keeps multiples of ``delta``
    in the lower window despite rounding.
    """
    k = np.ceil(np.asarray(s, dtype=float) / delta - _WINDOW_EPS) - 1
    k = np.maximum(k, 0).astype(np.int64)
    return int(k) if k.ndim == 0 else k


@dataclass(frozen=True)
class Interval:
    """A real interval with explicit endpoint closedness."""

    lo: float
    hi: float
    closed_lo: bool = False
    closed_hi: bool = True

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise DomainError(f"reversed interval ({self.lo}, {self.hi})")

    @classmethod
    def closed(cls, lo: float, hi: float) -> "Interval":
        return cls(lo, hi, True, True)

    @classmethod
    def open_closed(cls, lo: float, hi: float) -> "Interval":
        return cls(lo, hi, False, True)

    def contains(self, v):
        v = np.asarray(v, dtype=float)
        left = v >= self.lo if self.closed_lo else v > self.lo
        right = v <= self.hi if self.closed_hi else v < self.hi
        return left & right

    def cell_fractions(self, edges: np.ndarray) -> np.ndarray:
        """Fraction of each cell ``[edges[i], edges[i+1]]`` covered by the interval.

        Positive-width cells carry uniform mass, so only the overlap length
        matters.  A zero-width cell is a point mass and counts fully when the
        point lies in the interval.
        """
        lo_e, hi_e = edges[:-1], edges[1:]
        width = hi_e - lo_e
        overlap = np.clip(np.minimum(hi_e, self.hi) - np.maximum(lo_e, self.lo), 0.0, None)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(width > 0, overlap / np.where(width > 0, width, 1.0), 0.0)
        point = width == 0
        if point.any():
            frac = np.where(point, self.contains(lo_e).astype(float), frac)
        return frac


def _as_interval(r, default_closed: bool) -> Interval | None:
    if r is None:
        return None
    if isinstance(r, Interval):
        return r
    lo, hi = float(r[0]), float(r[1])
    if lo > hi:
        raise DomainError(f"reversed range ({lo}, {hi})")
    return Interval.closed(lo, hi) if default_closed else Interval.open_closed(lo, hi)


def _check_inside(iv: Interval | None, lo: float, hi: float, what: str):
    if iv is None:
        return
    tol = 1e-12 * max(1.0, abs(hi))
    if iv.lo < lo - tol or iv.hi > hi + tol:
        raise DomainError(f"{what} range [{iv.lo}, {iv.hi}] outside [{lo}, {hi}]")


class Infinite:
    """Sentinel for an infinite relative entropy.

    It compares greater than every real number and refuses conversion to
    float so that it cannot leak silently into arithmetic.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __float__(self):
        raise TypeError("infinite relative entropy has no float value")

    def __hash__(self):
        return hash("relaycap.INFINITE")


INFINITE = Infinite()


def _box_of(box) -> tuple[tuple[float, float], ...]:
    return tuple((float(a), float(b)) for a, b in box)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Finite sum of weighted atoms at ``(s, t, x, u)``."""

    s: np.ndarray
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    t_f: float
    box: tuple[tuple[float, float], ...]

    def __post_init__(self):
        s = np.ascontiguousarray(self.s, dtype=float).reshape(-1)
        n = s.shape[0]
        t = np.ascontiguousarray(self.t, dtype=float).reshape(n)
        box = _box_of(self.box)
        x = np.ascontiguousarray(self.x, dtype=float).reshape(n, len(box))
        u = np.ascontiguousarray(self.u, dtype=float).reshape(n)
        w = np.broadcast_to(np.asarray(self.w, dtype=float), (n,)).copy()
        for name, val in (("s", s), ("t", t), ("x", x), ("u", u), ("w", w)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "t_f", float(self.t_f))
        if n:
            if s.min() < 0 or s.max() > self.t_f or t.min() < 0 or t.max() > self.t_f:
                raise DomainError("atom times outside [0, t_f]")
            if u.min() < 0 or u.max() > 1:
                raise DomainError("marks outside [0, 1]")
            if w.min() <= 0:
                raise DomainError("atom weights must be strictly positive")

    def __len__(self):
        return self.s.shape[0]

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def total_mass(self) -> float:
        return float(self.w.sum())

    def scaled(self, c: float) -> "EmpiricalMeasure":
        if c == 0:
            return self.subset(np.zeros(len(self), dtype=bool))
        return EmpiricalMeasure(self.s, self.t, self.x, self.u, self.w * c, self.t_f, self.box)

    def subset(self, mask) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.s[mask], self.t[mask], self.x[mask], self.u[mask], self.w[mask],
                                self.t_f, self.box)

    def sorted(self) -> "EmpiricalMeasure":
        """Atoms reordered by entrance time (stable)."""
        o = np.argsort(self.s, kind="stable")
        return EmpiricalMeasure(self.s[o], self.t[o], self.x[o], self.u[o], self.w[o], self.t_f, self.box)


@dataclass(frozen=True, eq=False)
class ProductDensity:
    """Product of piecewise-constant factors on (s, t), x and u.

    All mass sits in ``st_mass`` (cell masses on the ``s_edges`` by
    ``t_edges`` grid); ``x_mass`` and ``u_mass`` are probability vectors over
    their cells.  Exit cells may have zero width, which encodes a point mass
    in the exit time (for instance all exits at the horizon).
    """

    s_edges: np.ndarray
    t_edges: np.ndarray
    st_mass: np.ndarray
    x_edges: tuple[np.ndarray, ...]
    x_mass: np.ndarray
    u_edges: np.ndarray
    u_mass: np.ndarray

    def __post_init__(self):
        se = np.asarray(self.s_edges, dtype=float)
        te = np.asarray(self.t_edges, dtype=float)
        st = np.asarray(self.st_mass, dtype=float)
        xe = tuple(np.asarray(e, dtype=float) for e in self.x_edges)
        xm = np.asarray(self.x_mass, dtype=float)
        ue = np.asarray(self.u_edges, dtype=float)
        um = np.asarray(self.u_mass, dtype=float)
        if st.shape != (se.size - 1, te.size - 1):
            raise StructuralError(f"st_mass shape {st.shape} does not match edges")
        if np.any(np.diff(se) <= 0):
            raise StructuralError("entrance edges must be strictly increasing")
        if np.any(np.diff(te) < 0) or np.any(np.diff(ue) <= 0):
            raise StructuralError("exit edges must be nondecreasing, mark edges increasing")
        if se[0] != 0 or te[0] != 0 or te[-1] != se[-1]:
            raise StructuralError("time grids must span [0, t_f]")
        if ue[0] != 0 or ue[-1] != 1:
            raise StructuralError("mark grid must span [0, 1]")
        if xm.shape != tuple(e.size - 1 for e in xe):
            raise StructuralError("x_mass shape does not match x_edges")
        for e in xe:
            if np.any(np.diff(e) <= 0):
                raise StructuralError("spatial edges must be strictly increasing")
        if um.shape != (ue.size - 1,):
            raise StructuralError("u_mass shape does not match u_edges")
        if st.min(initial=0) < 0 or xm.min(initial=0) < 0 or um.min(initial=0) < 0:
            raise DomainError("negative density")
        if not math.isclose(xm.sum(), 1.0, rel_tol=1e-9) or not math.isclose(um.sum(), 1.0, rel_tol=1e-9):
            raise StructuralError("x and u factors must be probability vectors")
        for name, val in (("s_edges", se), ("t_edges", te), ("st_mass", st), ("x_edges", xe),
                          ("x_mass", xm), ("u_edges", ue), ("u_mass", um)):
            object.__setattr__(self, name, val)

    @classmethod
    def uniform(cls, box, t_f: float = 1.0, mass: float = 1.0, exit_at_horizon: bool = False):
        """Uniform entrance, location and mark; exit uniform or at the horizon."""
        box = _box_of(box)
        if exit_at_horizon:
            te = np.array([0.0, t_f, t_f])
            st = np.array([[0.0, mass]])
        else:
            te = np.array([0.0, t_f])
            st = np.array([[mass]])
        return cls(np.array([0.0, t_f]), te, st, tuple(np.array(b) for b in box),
                   np.ones((1,) * len(box)), np.array([0.0, 1.0]), np.array([1.0]))

    @property
    def t_f(self) -> float:
        return float(self.s_edges[-1])

    @property
    def box(self) -> tuple[tuple[float, float], ...]:
        return tuple((float(e[0]), float(e[-1])) for e in self.x_edges)

    @property
    def dim(self) -> int:
        return len(self.x_edges)

    @property
    def total_mass(self) -> float:
        return float(self.st_mass.sum())

    def scaled(self, c: float) -> "ProductDensity":
        return self.with_st_mass(self.st_mass * c)

    def with_st_mass(self, st_mass) -> "ProductDensity":
        return ProductDensity(self.s_edges, self.t_edges, st_mass, self.x_edges, self.x_mass,
                              self.u_edges, self.u_mass)

    def with_x_mass(self, x_edges, x_mass) -> "ProductDensity":
        return ProductDensity(self.s_edges, self.t_edges, self.st_mass, x_edges, x_mass,
                              self.u_edges, self.u_mass)

    def u_cdf(self, a):
        """Probability of a mark in ``[0, a]``."""
        a = np.asarray(a, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.u_mass)])
        return np.interp(a, self.u_edges, cum)


DrivingMeasure = Union[EmpiricalMeasure, ProductDensity]


def _x_fraction_atoms(x: np.ndarray, region) -> np.ndarray:
    if region is None:
        return np.ones(x.shape[0], dtype=bool)
    mask = np.ones(x.shape[0], dtype=bool)
    for j, (lo, hi) in enumerate(region):
        mask &= (x[:, j] >= lo) & (x[:, j] <= hi)
    return mask


def _x_fraction_density(nu: ProductDensity, region) -> float:
    if region is None:
        return 1.0
    fr = nu.x_mass
    for j, (lo, hi) in enumerate(region):
        f = Interval.closed(lo, hi).cell_fractions(nu.x_edges[j])
        shape = [1] * nu.dim
        shape[j] = -1
        fr = fr * f.reshape(shape)
    return float(fr.sum())


def query(nu: DrivingMeasure, s_range=None, t_range=None, x_region=None, u_range=None) -> float:
    """Mass of a product set.

    Args:
        nu: driving measure.
        s_range: entrance range, ``(a, b]`` for tuples; ``None`` for all.
        t_range: exit range, closed ``[a, b]`` for tuples; ``None`` for all.
        x_region: sequence of per-axis ``(lo, hi)`` closed bounds or ``None``.
        u_range: closed mark range ``[a, b]`` or ``None``.

    Raises:
        DomainError: reversed ranges or ranges outside the domain.
    """
    si = _as_interval(s_range, False)
    ti = _as_interval(t_range, True)
    ui = _as_interval(u_range, True)
    _check_inside(si, 0.0, nu.t_f, "entrance")
    _check_inside(ti, 0.0, nu.t_f, "exit")
    _check_inside(ui, 0.0, 1.0, "mark")
    if x_region is not None:
        x_region = _box_of(x_region)
        if len(x_region) != nu.dim:
            raise DomainError("region dimension mismatch")
        for (lo, hi) in x_region:
            if lo > hi:
                raise DomainError(f"reversed spatial range ({lo}, {hi})")
    if isinstance(nu, EmpiricalMeasure):
        m = _x_fraction_atoms(nu.x, x_region)
        if si is not None:
            m &= si.contains(nu.s)
        if ti is not None:
            m &= ti.contains(nu.t)
        if ui is not None:
            m &= ui.contains(nu.u)
        return float(nu.w[m].sum())
    fs = si.cell_fractions(nu.s_edges) if si is not None else np.ones(nu.s_edges.size - 1)
    ft = ti.cell_fractions(nu.t_edges) if ti is not None else np.ones(nu.t_edges.size - 1)
    fu = float(ui.cell_fractions(nu.u_edges) @ nu.u_mass) if ui is not None else 1.0
    return float(fs @ nu.st_mass @ ft) * _x_fraction_density(nu, x_region) * fu


# ---------------------------------------------------------------- refinement

def _refine_1d(e1: np.ndarray, e2: np.ndarray):
    """Common refinement of two 1-D cell grids.

    Returns matrices R1, R2 mapping cell masses of each grid onto the pieces
    of the refinement.
    """
    if not (math.isclose(e1[0], e2[0]) and math.isclose(e1[-1], e2[-1])):
        raise StructuralError("grids span different ranges")
    pts = np.unique(np.concatenate([e1, e2]))
    pieces = [(a, b) for a, b in zip(pts[:-1], pts[1:])]
    zw = set(e1[:-1][np.diff(e1) == 0]) | set(e2[:-1][np.diff(e2) == 0])
    pieces += [(p, p) for p in sorted(zw)]

    def mapping(e):
        lo, hi = e[:-1], e[1:]
        w = hi - lo
        R = np.zeros((len(pieces), lo.size))
        for i, (a, b) in enumerate(pieces):
            if b > a:
                ov = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0, None)
                R[i] = np.where(w > 0, ov / np.where(w > 0, w, 1), 0.0)
            else:
                R[i] = ((w == 0) & (lo == a)).astype(float)
        return R

    return mapping(e1), mapping(e2)


def _refined_factors(nu: ProductDensity, mu: ProductDensity):
    """Masses of both measures' factors on common refinements."""
    if nu.dim != mu.dim:
        raise StructuralError("dimension mismatch")
    Rs1, Rs2 = _refine_1d(nu.s_edges, mu.s_edges)
    Rt1, Rt2 = _refine_1d(nu.t_edges, mu.t_edges)
    st = (Rs1 @ nu.st_mass @ Rt1.T, Rs2 @ mu.st_mass @ Rt2.T)
    xa, xb = nu.x_mass, mu.x_mass
    for j in range(nu.dim):
        R1, R2 = _refine_1d(nu.x_edges[j], mu.x_edges[j])
        xa = np.moveaxis(np.tensordot(R1, xa, axes=([1], [j])), 0, j)
        xb = np.moveaxis(np.tensordot(R2, xb, axes=([1], [j])), 0, j)
    Ru1, Ru2 = _refine_1d(nu.u_edges, mu.u_edges)
    return st, (xa, xb), (Ru1 @ nu.u_mass, Ru2 @ mu.u_mass)


def _xlogy_ratio(a: np.ndarray, b: np.ndarray):
    """Sum of ``a log(a/b)``; ``None`` when ``a > 0`` meets ``b = 0``."""
    a = a.ravel()
    b = b.ravel()
    pos = a > 0
    if np.any(pos & (b <= 0)):
        return None
    return float(np.sum(a[pos] * np.log(a[pos] / b[pos])))


def density_ratio_max(nu: ProductDensity, mu: ProductDensity) -> float:
    """Supremum of the density ratio d nu / d mu (``inf`` if not absolutely continuous)."""
    out = 1.0
    for a, b in _refined_factors(nu, mu):
        a, b = a.ravel(), b.ravel()
        pos = a > 0
        if not pos.any():
            return 0.0
        if np.any(b[pos] <= 0):
            return math.inf
        out *= float(np.max(a[pos] / b[pos]))
    return out


def relative_entropy(nu: DrivingMeasure, mu: DrivingMeasure):
    """Relative entropy of ``nu`` with respect to ``mu`` for finite measures.

    Returns a float, or `INFINITE` when ``nu`` is not absolutely continuous
    with respect to ``mu``.

    Raises:
        StructuralError: one measure is atomic and the other a density, or the
            grids cannot be refined to a common partition.
    """
    if isinstance(nu, ProductDensity) and isinstance(mu, ProductDensity):
        (sa, sb), (xa, xb), (ua, ub) = _refined_factors(nu, mu)
        m = float(sa.sum())
        terms = [_xlogy_ratio(sa, sb), _xlogy_ratio(xa, xb), _xlogy_ratio(ua, ub)]
        if any(v is None for v in terms):
            return INFINITE
        return terms[0] + m * terms[1] + m * terms[2] - m + mu.total_mass
    if isinstance(nu, EmpiricalMeasure) and isinstance(mu, EmpiricalMeasure):
        keys_nu = _atom_keys(nu)
        keys_mu = _atom_keys(mu)
        allk = np.concatenate([keys_nu, keys_mu])
        uniq, inv = np.unique(allk, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        a = np.bincount(inv[: len(nu)], weights=nu.w, minlength=len(uniq))
        b = np.bincount(inv[len(nu):], weights=mu.w, minlength=len(uniq))
        v = _xlogy_ratio(a, b)
        if v is None:
            return INFINITE
        return v - nu.total_mass + mu.total_mass
    raise StructuralError("relative entropy between an atomic measure and a density is not supported")


def _atom_keys(nu: EmpiricalMeasure) -> np.ndarray:
    return np.column_stack([nu.s, nu.t, nu.x, nu.u]) if len(nu) else np.zeros((0, 3 + nu.dim))


# ------------------------------------------------------ frustration measures

@dataclass(frozen=True, eq=False)
class FrustrationAtoms:
    """Weighted atoms in (entrance, exit, location)."""

    s: np.ndarray
    t: np.ndarray
    x: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.s, dtype=float).reshape(-1)
        n = s.size
        x = np.ascontiguousarray(self.x, dtype=float)
        x = x.reshape(n, -1) if n else x.reshape(0, x.shape[-1] if x.ndim == 2 else 1)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", np.ascontiguousarray(self.t, dtype=float).reshape(n))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", np.broadcast_to(np.asarray(self.w, dtype=float), (n,)).copy())

    def __len__(self):
        return self.s.size

    @property
    def total_mass(self) -> float:
        return float(self.w.sum())

    def to_grid(self, s_edges, t_edges, x_edges) -> "FrustrationGrid":
        s_edges = np.asarray(s_edges, float)
        t_edges = np.asarray(t_edges, float)
        x_edges = tuple(np.asarray(e, float) for e in x_edges)
        shape = (s_edges.size - 1, t_edges.size - 1) + tuple(e.size - 1 for e in x_edges)
        idx = [_bin_time(s_edges, self.s), _bin_time(t_edges, self.t)]
        idx += [_bin_space(e, self.x[:, j]) for j, e in enumerate(x_edges)]
        mass = np.zeros(shape)
        if len(self):
            np.add.at(mass, tuple(idx), self.w)
        return FrustrationGrid(s_edges, t_edges, x_edges, mass)


@dataclass(frozen=True, eq=False)
class FrustrationGrid:
    """Cell masses on an (entrance, exit, location) grid."""

    s_edges: np.ndarray
    t_edges: np.ndarray
    x_edges: tuple[np.ndarray, ...]
    mass: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def same_grid(self, other: "FrustrationGrid") -> bool:
        return (np.array_equal(self.s_edges, other.s_edges)
                and np.array_equal(self.t_edges, other.t_edges)
                and len(self.x_edges) == len(other.x_edges)
                and all(np.array_equal(a, b) for a, b in zip(self.x_edges, other.x_edges)))

    def __add__(self, other: "FrustrationGrid") -> "FrustrationGrid":
        if not self.same_grid(other):
            raise StructuralError("cannot add frustration grids on different edges")
        return FrustrationGrid(self.s_edges, self.t_edges, self.x_edges, self.mass + other.mass)


FrustrationMeasure = Union[FrustrationAtoms, FrustrationGrid]


def _bin_time(edges: np.ndarray, v: np.ndarray) -> np.ndarray:
    # (lo, hi] cells, the first one closed at its left end; zero-width cells
    # capture atoms sitting exactly on them.
    n = edges.size - 1
    idx = np.clip(np.searchsorted(edges, v, side="left") - 1, 0, n - 1)
    for j in np.nonzero(edges[:-1] == edges[1:])[0]:
        idx[v == edges[j]] = j
    return idx


def _bin_space(edges: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.clip(np.searchsorted(edges, v, side="right") - 1, 0, edges.size - 2)


def tv_distance(a: FrustrationMeasure, b: FrustrationMeasure) -> float:
    """Total variation distance ``sup_A |a(A) - b(A)|``.

    Atoms are matched by exact coordinates.  When one argument is a grid the
    other is binned onto the same cells first.
    """
    if isinstance(a, FrustrationAtoms) and isinstance(b, FrustrationAtoms):
        if len(a) == 0 and len(b) == 0:
            return 0.0
        ka = np.column_stack([a.s, a.t, a.x])
        kb = np.column_stack([b.s, b.t, b.x])
        if ka.shape[1] != kb.shape[1]:
            raise StructuralError("dimension mismatch")
        uniq, inv = np.unique(np.concatenate([ka, kb]), axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        diff = (np.bincount(inv[: len(a)], weights=a.w, minlength=len(uniq))
                - np.bincount(inv[len(a):], weights=b.w, minlength=len(uniq)))
    else:
        if isinstance(a, FrustrationAtoms):
            a = a.to_grid(b.s_edges, b.t_edges, b.x_edges)
        if isinstance(b, FrustrationAtoms):
            b = b.to_grid(a.s_edges, a.t_edges, a.x_edges)
        if not a.same_grid(b):
            raise StructuralError("frustration grids use different edges")
        diff = (a.mass - b.mass).ravel()
    return float(max(diff[diff > 0].sum(), -diff[diff < 0].sum()))


# ---------------------------------------------------------------- JSON

def _arr(v) -> list:
    return np.asarray(v, dtype=float).tolist()


def measure_to_dict(nu: DrivingMeasure) -> dict:
    if isinstance(nu, EmpiricalMeasure):
        return {"variant": "empirical", "t_f": nu.t_f, "box": [list(b) for b in nu.box],
                "atoms": {"s": _arr(nu.s), "t": _arr(nu.t), "x": _arr(nu.x),
                          "u": _arr(nu.u), "w": _arr(nu.w)}}
    return {"variant": "product", "s_edges": _arr(nu.s_edges), "t_edges": _arr(nu.t_edges),
            "st_mass": _arr(nu.st_mass), "x_edges": [_arr(e) for e in nu.x_edges],
            "x_mass": _arr(nu.x_mass), "u_edges": _arr(nu.u_edges), "u_mass": _arr(nu.u_mass)}


def measure_from_dict(d: dict) -> DrivingMeasure:
    variant = d.get("variant")
    if variant == "empirical":
        a = d["atoms"]
        box = d["box"]
        x = np.asarray(a["x"], float).reshape(len(a["s"]), len(box))
        return EmpiricalMeasure(a["s"], a["t"], x, a["u"], a["w"], d["t_f"], box)
    if variant == "product":
        return ProductDensity(d["s_edges"], d["t_edges"], d["st_mass"],
                              tuple(d["x_edges"]), d["x_mass"], d["u_edges"], d["u_mass"])
    raise StructuralError(f"unknown measure variant {variant!r}")


def frustration_to_dict(g: FrustrationMeasure) -> dict:
    if isinstance(g, FrustrationAtoms):
        return {"variant": "atoms", "s": _arr(g.s), "t": _arr(g.t), "x": _arr(g.x), "w": _arr(g.w)}
    return {"variant": "grid", "s_edges": _arr(g.s_edges), "t_edges": _arr(g.t_edges),
            "x_edges": [_arr(e) for e in g.x_edges], "mass": _arr(g.mass)}


def frustration_from_dict(d: dict) -> FrustrationMeasure:
    if d.get("variant") == "atoms":
        return FrustrationAtoms(d["s"], d["t"], np.asarray(d["x"], float).reshape(len(d["s"]), -1), d["w"])
    if d.get("variant") == "grid":
        return FrustrationGrid(np.asarray(d["s_edges"]), np.asarray(d["t_edges"]),
                               tuple(np.asarray(e) for e in d["x_edges"]), np.asarray(d["mass"]))
    raise StructuralError(f"unknown frustration variant {d.get('variant')!r}")


def dumps(obj: dict) -> str:
    """Deterministic JSON text."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
