"""Window-discretized fluid systems for idle, occupied and critical relay mass.

Time is cut into windows ``(k*delta, (k+1)*delta]``.  Within a window the
idle mass is depleted by arrivals whose mark falls below it, occupied mass
accrues per exit window, and mass whose fate the window structure cannot
resolve is booked as critical.  At each window end the occupied mass of
that window returns to idle.

Atomic drivers are integrated exactly, event by event.  Density drivers use
forward Euler with a fixed number of substeps per window; the substep grids
of successive halvings are nested.

Three variants share one bookkeeping scheme:

* plain: one driver,
* renormalized (``rho > 1``, atomic drivers): occupied mass accrues only
  below ``idle / rho``, the rest of the idle band goes to ``crit2``,
* coupled (``nu <= nu_up``): ``nu_up`` depletes idle and pending mass, ``nu``
  accrues occupied and critical mass, the excess goes to ``crit2``.

All three conserve total mass exactly.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, ContractError, ConvergenceError, DomainError
from .measures import (DrivingMeasure, EmpiricalMeasure, FrustrationAtoms, FrustrationGrid,
                       ProductDensity, _refine_1d, density_ratio_max, window_index)

__all__ = [
    "FluidState",
    "BetaTrajectory",
    "COMPONENTS",
    "window_count",
    "solve_sysode",
    "solve_sysode_renormalized",
    "solve_sysode_coupled",
    "beta",
    "gamma_fluid",
    "gamma_mass",
    "window_mass_sup",
    "solve_scalar_depletion",
    "solve_scalar_accrual",
    "beta_residual",
]

COMPONENTS = ("idle", "pending", "future", "crit", "crit2")
_TIME_TOL = 1e-12


def window_count(t_f: float, delta: float) -> int:
    """Number of windows; ``t_f / delta`` must be an integer."""
    if not delta > 0:
        raise ConfigError("delta must be positive")
    q = t_f / delta
    n = int(round(q))
    if n < 1 or abs(q - n) > 1e-9 * max(1.0, q):
        raise ConfigError(f"t_f / delta = {q} is not an integer")
    return n


@dataclass(frozen=True, eq=False)
class FluidState:
    """Trajectory of one discretized solve.

    Components are stored at record times (right-continuous values; a window
    end appears twice, before and after its release).  ``pending`` is the
    occupied mass of the current window, ``future`` the occupied mass of all
    later windows.

    Attributes:
        released: mass returned to idle at the end of each window that had any.
        atom_idle_before: for atomic drivers, the idle mass just before each
            atom's entrance, in the driver's atom order.
    """

    delta: float
    t_f: float
    times: np.ndarray
    idle: np.ndarray
    pending: np.ndarray
    future: np.ndarray
    crit: np.ndarray
    crit2: np.ndarray
    released: dict
    atom_idle_before: np.ndarray | None = None
    frustration_weights: np.ndarray | None = None
    driver: DrivingMeasure | None = None

    @property
    def occupied(self) -> np.ndarray:
        return self.pending + self.future

    def total(self) -> np.ndarray:
        return self.idle + self.pending + self.future + self.crit + self.crit2

    def conservation_error(self) -> float:
        return float(np.max(np.abs(self.total() - 1.0)))

    def component(self, name: str) -> np.ndarray:
        if name not in COMPONENTS:
            raise KeyError(name)
        return getattr(self, name)

    def at(self, name: str, t) -> np.ndarray:
        """Right-continuous value at times ``t`` (latest record at or before ``t``)."""
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.times, t + _TIME_TOL * self.t_f, side="right") - 1
        return self.component(name)[np.maximum(i, 0)]

    def before(self, name: str, t) -> np.ndarray:
        """Left limit at times ``t`` (latest record strictly before ``t``)."""
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.times, t - _TIME_TOL * self.t_f, side="left") - 1
        return self.component(name)[np.maximum(i, 0)]

    def final_crit(self) -> float:
        return float(self.crit[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "component", "value"])
        for name in COMPONENTS:
            for t, v in zip(self.times, self.component(name)):
                w.writerow([repr(float(t)), name, repr(float(v))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"delta": self.delta, "t_f": self.t_f, "times": self.times.tolist(),
                **{name: self.component(name).tolist() for name in COMPONENTS},
                "released": {str(k): v for k, v in sorted(self.released.items())}}


@dataclass(frozen=True, eq=False)
class BetaTrajectory:
    """Occupied relay mass over time at the finest window length used.

    ``values[-1]`` is the left limit at ``t_f``: transmitters leaving exactly
    at the horizon still hold their relays there.

    Attributes:
        bounds: certified bound (in units of ``r``) at each level of the ladder.
        exact: True when an atomic driver was resolved exactly (no critical
            mass, all event times in distinct windows).
    """

    times: np.ndarray
    values: np.ndarray
    delta_used: float
    error_bound: float
    r: float
    bounds: tuple
    exact: bool
    state: FluidState

    def at(self, t) -> np.ndarray:
        """Right-continuous value; at ``t_f`` the horizon left limit."""
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.times, t + _TIME_TOL * self.state.t_f, side="right") - 1
        return self.values[np.maximum(i, 0)]

    def before(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        i = np.searchsorted(self.times, t - _TIME_TOL * self.state.t_f, side="left") - 1
        return self.values[np.maximum(i, 0)]

    @property
    def final(self) -> float:
        return float(self.values[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "component", "value"])
        for t, v in zip(self.times, self.values):
            w.writerow([repr(float(t)), "beta", repr(float(v))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "values": self.values.tolist(),
                "delta_used": self.delta_used, "error_bound": self.error_bound, "r": self.r,
                "bounds": list(self.bounds), "exact": self.exact}


# ------------------------------------------------------------ atomic drivers

def _solve_atoms(s, t, u, w, lower, delta, t_f, rho=1.0):
    """Event-driven solve; atoms must be sorted by entrance time.

    ``lower[i]`` is False for mass that only the dominating driver carries
    (coupled system).  Atoms sharing an entrance time see the same left-limit
    state.
    """
    J = window_count(t_f, delta)
    n = s.size
    win = window_index(s, delta) if n else np.zeros(0, np.int64)
    ewin = window_index(t, delta) if n else np.zeros(0, np.int64)
    idle = 1.0
    crit = 0.0
    crit2 = 0.0
    occ: dict[int, float] = {}
    released: dict[int, float] = {}
    occ_total = 0.0
    cur = 0
    rec_t, rec = [0.0], [(1.0, 0.0, 0.0, 0.0, 0.0)]
    idle_before = np.empty(n)

    def snapshot():
        p = occ.get(cur, 0.0)
        return (idle, p, occ_total - p, crit, crit2)

    heap: list[int] = []

    def release_through(target):
        # release every window below `target` that still holds mass
        nonlocal idle, occ_total, cur
        while heap and heap[0] < target:
            j = heapq.heappop(heap)
            if j not in occ:
                continue
            tj = t_f if j == J - 1 else (j + 1) * delta
            cur = j
            if j * delta > rec_t[-1]:
                rec_t.append(j * delta)
                rec.append(snapshot())
            rec_t.append(tj)
            rec.append(snapshot())
            m = occ.pop(j)
            idle += m
            occ_total -= m
            released[j] = m
            cur = j + 1
            rec_t.append(tj)
            rec.append(snapshot())
        cur = target
        if target < J and occ.get(target) and target * delta > rec_t[-1]:
            rec_t.append(target * delta)
            rec.append(snapshot())

    sl, tl, ul, wl, ll = s.tolist(), t.tolist(), u.tolist(), w.tolist(), lower.tolist()
    winl, ewl = win.tolist(), ewin.tolist()
    i = 0
    while i < n:
        k = winl[i]
        if k > cur:
            release_through(k)
        j_end = i + 1
        while j_end < n and sl[j_end] == sl[i]:
            j_end += 1
        a_i = idle
        a_o = occ.get(k, 0.0)
        d_idle = d_pend = d_crit = d_crit2 = 0.0
        for m in range(i, j_end):
            idle_before[m] = a_i
            e = ewl[m]
            if e < k:
                continue
            um, wm = ul[m], wl[m]
            if um <= a_i:
                d_idle += wm
                if not ll[m]:
                    d_crit2 += wm
                elif e == k:
                    d_crit += wm
                elif um <= a_i / rho:
                    if e not in occ:
                        heapq.heappush(heap, e)
                    occ[e] = occ.get(e, 0.0) + wm
                    occ_total += wm
                else:
                    d_crit2 += wm
            elif um <= a_i + a_o:
                d_pend += wm
                if ll[m]:
                    d_crit += wm
                else:
                    d_crit2 += wm
        if d_pend:
            occ[k] = occ.get(k, 0.0) - d_pend
            occ_total -= d_pend
        idle -= d_idle
        crit += d_crit
        crit2 += d_crit2
        rec_t.append(sl[i])
        rec.append(snapshot())
        i = j_end
    release_through(J)
    # closing records at the horizon so every trajectory spans [0, t_f]
    if rec_t[-1] < t_f or len(rec_t) < 3 or rec_t[-2] != t_f:
        cur = J
        rec_t.extend([t_f, t_f])
        rec.extend([snapshot(), snapshot()])
    arr = np.array(rec)
    return (np.array(rec_t), arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4],
            released, idle_before)


# ------------------------------------------------------------ density drivers

@njit(cache=True)
def _cdf(ue, uc, a):
    if a <= 0.0:
        return 0.0
    if a >= 1.0:
        return 1.0
    lo = 0
    hi = ue.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ue[mid] <= a:
            lo = mid
        else:
            hi = mid
    return uc[lo] + (uc[hi] - uc[lo]) * (a - ue[lo]) / (ue[hi] - ue[lo])


@njit(cache=True)
def _tfrac(te, lo, hi):
    """Fractions of exit cells inside (lo, hi]."""
    nt = te.size - 1
    out = np.zeros(nt)
    for e in range(nt):
        a = te[e]
        b = te[e + 1]
        if b > a:
            ov = min(b, hi) - max(a, lo)
            if ov > 0.0:
                out[e] = ov / (b - a)
        elif a > lo and a <= hi:
            out[e] = 1.0
    return out


@njit(cache=True)
def _rowdot(M, c, f):
    acc = 0.0
    for e in range(f.size):
        acc += M[c, e] * f[e]
    return acc


@njit(cache=True)
def _euler(se, te, Mlo, Mup, ue_lo, uc_lo, ue_up, uc_up, J, S, record_sub, coupled):
    ns = se.size - 1
    t_f = se[ns]
    delta = t_f / J
    per = S if record_sub else 1
    nrec = 1 + J * (per + 1)
    times = np.empty(nrec)
    rec = np.empty((nrec, 5))
    released = np.zeros(J)
    Q = np.zeros(ns)
    G = np.zeros(ns)
    rD = np.zeros(ns)
    rB = np.zeros(ns)
    rA = np.zeros(ns)
    a_i = 1.0
    a_o = 0.0
    fu = 0.0
    cr = 0.0
    c2 = 0.0
    times[0] = 0.0
    rec[0, 0] = 1.0
    rec[0, 1] = 0.0
    rec[0, 2] = 0.0
    rec[0, 3] = 0.0
    rec[0, 4] = 0.0
    r = 1
    cp = 0
    for w in range(J):
        w0 = w * delta
        w1 = t_f if w == J - 1 else (w + 1) * delta
        fD = _tfrac(te, w0, w1)
        fB = _tfrac(te, w1, t_f)
        while cp < ns - 1 and se[cp + 1] <= w0:
            cp += 1
        c = cp
        while c < ns and se[c] < w1:
            rD[c] = _rowdot(Mlo, c, fD)
            rB[c] = _rowdot(Mlo, c, fB)
            rA[c] = _rowdot(Mup, c, fD) + _rowdot(Mup, c, fB)
            c += 1
        h = (w1 - w0) / S
        cc = cp
        for i in range(S):
            a = w0 + i * h
            b = w1 if i == S - 1 else w0 + (i + 1) * h
            Fi = _cdf(ue_lo, uc_lo, a_i)
            Fio = _cdf(ue_lo, uc_lo, a_i + a_o)
            if coupled:
                Fi_u = _cdf(ue_up, uc_up, a_i)
                Fio_u = _cdf(ue_up, uc_up, a_i + a_o)
            else:
                Fi_u = Fi
                Fio_u = Fio
            mD = 0.0
            mB = 0.0
            mA = 0.0
            while cc < ns - 1 and se[cc + 1] <= a:
                cc += 1
            c = cc
            while c < ns and se[c] < b:
                ov = min(b, se[c + 1]) - max(a, se[c])
                if ov > 0.0:
                    fr = ov / (se[c + 1] - se[c])
                    Q[c] += fr * Fi
                    G[c] += fr * (1.0 - Fi)
                    mD += fr * rD[c]
                    mB += fr * rB[c]
                    mA += fr * rA[c]
                c += 1
            d_idle = mA * Fi_u
            d_pend = mA * (Fio_u - Fi_u)
            a_i -= d_idle
            a_o -= d_pend
            cr += mD * Fio + mB * (Fio - Fi)
            fu += mB * Fi
            if coupled:
                c2 += d_idle + d_pend - (mD + mB) * Fio
            if record_sub or i == S - 1:
                times[r] = b
                rec[r, 0] = a_i
                rec[r, 1] = a_o
                rec[r, 2] = fu
                rec[r, 3] = cr
                rec[r, 4] = c2
                r += 1
        released[w] = a_o
        a_i += a_o
        a_o = 0.0
        if w + 1 < J:
            n0 = w1
            n1 = t_f if w + 1 == J - 1 else (w + 2) * delta
            fN = _tfrac(te, n0, n1)
            fL = _tfrac(te, n1, t_f)
            p = 0.0
            q = 0.0
            for c in range(ns):
                if Q[c] != 0.0:
                    p += Q[c] * _rowdot(Mlo, c, fN)
                    q += Q[c] * _rowdot(Mlo, c, fL)
            a_o = p
            fu = q
        else:
            fu = 0.0
        times[r] = w1
        rec[r, 0] = a_i
        rec[r, 1] = a_o
        rec[r, 2] = fu
        rec[r, 3] = cr
        rec[r, 4] = c2
        r += 1
    return times, rec, released, G


def _u_table(nu: ProductDensity):
    return nu.u_edges, np.concatenate([[0.0], np.cumsum(nu.u_mass)])


def _solve_density(lo: ProductDensity, up: ProductDensity | None, delta: float, substeps: int,
                   record_sub: bool = True):
    J = window_count(lo.t_f, delta)
    if substeps < 1:
        raise ConfigError("substeps must be at least 1")
    coupled = up is not None
    if coupled:
        se, Rs1, Rs2 = _common_axis(lo.s_edges, up.s_edges)
        te, Rt1, Rt2 = _common_axis(lo.t_edges, up.t_edges)
        Mlo = Rs1 @ lo.st_mass @ Rt1.T
        Mup = Rs2 @ up.st_mass @ Rt2.T
        ue_up, uc_up = _u_table(up)
    else:
        se, te, Mlo = lo.s_edges, lo.t_edges, lo.st_mass
        Mup = Mlo
        ue_up, uc_up = _u_table(lo)
    ue_lo, uc_lo = _u_table(lo)
    times, rec, rel, G = _euler(np.ascontiguousarray(se), np.ascontiguousarray(te),
                                np.ascontiguousarray(Mlo), np.ascontiguousarray(Mup),
                                ue_lo, uc_lo, ue_up, uc_up, J, int(substeps), record_sub, coupled)
    released = {j: float(m) for j, m in enumerate(rel) if m != 0.0}
    return times, rec, released, G, se, te, Mlo


def _common_axis(e1, e2):
    """Shared edges for two cell grids plus the maps onto them."""
    if np.array_equal(e1, e2):
        eye = np.eye(e1.size - 1)
        return e1, eye, eye
    if np.any(np.diff(e1) == 0) or np.any(np.diff(e2) == 0):
        raise ConfigError("grids with point cells must coincide for coupled solves")
    R1, R2 = _refine_1d(e1, e2)
    return np.unique(np.concatenate([e1, e2])), R1, R2


# ------------------------------------------------------------------ solvers

def _state_from_atoms(nu: EmpiricalMeasure, out, delta, lower_driver=None):
    times, idle, pend, fut, crit, crit2, released, before = out
    return FluidState(delta, nu.t_f, times, idle, pend, fut, crit, crit2, released,
                      atom_idle_before=before, driver=nu)


def solve_sysode(nu: DrivingMeasure, delta: float, substeps: int = 100,
                 record_substeps: bool = True) -> FluidState:
    """Solve the plain discretized system driven by ``nu``.

    Raises:
        ConfigError: ``t_f / delta`` is not an integer.
    """
    if isinstance(nu, EmpiricalMeasure):
        o = np.argsort(nu.s, kind="stable")
        out = _solve_atoms(nu.s[o], nu.t[o], nu.u[o], nu.w[o], np.ones(len(nu), bool), delta, nu.t_f)
        before = np.empty(len(nu))
        before[o] = out[7]
        return _state_from_atoms(nu, out[:7] + (before,), delta)
    times, rec, released, G, se, te, M = _solve_density(nu, None, delta, substeps, record_substeps)
    return FluidState(delta, nu.t_f, times, rec[:, 0], rec[:, 1], rec[:, 2], rec[:, 3], rec[:, 4],
                      released, frustration_weights=G, driver=nu)


def solve_sysode_renormalized(nu: EmpiricalMeasure, rho: float, delta: float) -> FluidState:
    """Renormalized system: occupied mass only accrues for marks up to ``idle / rho``.

    Marks in ``(idle / rho, idle]`` whose exit lies beyond the entrance
    window go to ``crit2``.

    Raises:
        DomainError: ``rho <= 1``.
        ContractError: ``nu`` is not atomic.
    """
    if not rho > 1:
        raise DomainError("rho must exceed 1")
    if not isinstance(nu, EmpiricalMeasure):
        raise ContractError("the renormalized system is defined for atomic drivers only")
    o = np.argsort(nu.s, kind="stable")
    out = _solve_atoms(nu.s[o], nu.t[o], nu.u[o], nu.w[o], np.ones(len(nu), bool), delta, nu.t_f, rho)
    before = np.empty(len(nu))
    before[o] = out[7]
    return _state_from_atoms(nu, out[:7] + (before,), delta)


def _split_atoms(nu: EmpiricalMeasure, nu_up: EmpiricalMeasure):
    """Atoms of ``nu_up`` split into the part shared with ``nu`` and the excess."""
    k_lo = np.column_stack([nu.s, nu.t, nu.x, nu.u]) if len(nu) else np.zeros((0, 3 + nu.dim))
    k_up = np.column_stack([nu_up.s, nu_up.t, nu_up.x, nu_up.u]) if len(nu_up) else np.zeros((0, 3 + nu.dim))
    uniq, inv = np.unique(np.concatenate([k_lo, k_up]), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    w_lo = np.bincount(inv[: len(nu)], weights=nu.w, minlength=len(uniq))
    w_up = np.bincount(inv[len(nu):], weights=nu_up.w, minlength=len(uniq))
    bad = w_lo > w_up * (1 + 1e-12) + 1e-15
    if bad.any():
        i = int(np.argmax(bad))
        raise ContractError(f"dominance violated at atom {uniq[i].tolist()}: {w_lo[i]} > {w_up[i]}")
    excess = np.clip(w_up - w_lo, 0.0, None)
    keys, ws, flags = [], [], []
    for arr, flag in ((w_lo, True), (excess, False)):
        m = arr > 1e-15 * max(1.0, float(w_up.max(initial=0.0)))
        keys.append(uniq[m])
        ws.append(arr[m])
        flags.append(np.full(int(m.sum()), flag))
    keys = np.concatenate(keys)
    ws = np.concatenate(ws)
    flags = np.concatenate(flags)
    o = np.lexsort((~flags, keys[:, 0]))
    return keys[o, 0], keys[o, 1], keys[o, -1], ws[o], flags[o]


def solve_sysode_coupled(nu: DrivingMeasure, nu_up: DrivingMeasure, delta: float,
                         substeps: int = 100, record_substeps: bool = True) -> FluidState:
    """Coupled system for ``nu <= nu_up``.

    Raises:
        ContractError: ``nu`` is not dominated by ``nu_up`` (the message names a
            witness atom or factor ratio).
    """
    if isinstance(nu, EmpiricalMeasure) and isinstance(nu_up, EmpiricalMeasure):
        s, t, u, w, flags = _split_atoms(nu, nu_up)
        out = _solve_atoms(s, t, u, w, flags, delta, nu_up.t_f)
        return FluidState(delta, nu_up.t_f, *out[:7], driver=nu_up)
    if isinstance(nu, ProductDensity) and isinstance(nu_up, ProductDensity):
        ratio = density_ratio_max(nu, nu_up)
        if ratio > 1 + 1e-12:
            raise ContractError(f"dominance violated: sup d nu / d nu_up = {ratio}")
        times, rec, released, G, *_ = _solve_density(nu, nu_up, delta, substeps, record_substeps)
        return FluidState(delta, nu.t_f, times, rec[:, 0], rec[:, 1], rec[:, 2], rec[:, 3], rec[:, 4],
                          released, driver=nu_up)
    raise ContractError("coupled drivers must be of the same kind")


# --------------------------------------------------------------------- beta

def window_mass_sup(nu: DrivingMeasure, delta: float) -> float:
    """Largest entrance mass of any window of length ``delta``."""
    J = window_count(nu.t_f, delta)
    if isinstance(nu, EmpiricalMeasure):
        if len(nu) == 0:
            return 0.0
        return float(np.bincount(window_index(nu.s, delta), weights=nu.w, minlength=J).max())
    edges = np.linspace(0.0, nu.t_f, J + 1)
    rows = nu.st_mass.sum(axis=1)
    cum = np.concatenate([[0.0], np.cumsum(rows)])
    at = np.interp(edges, nu.s_edges, cum)
    return float(np.max(np.diff(at)))


def _min_gap(nu: EmpiricalMeasure) -> float:
    pts = np.unique(np.concatenate([nu.s, nu.t]))
    if pts.size < 2:
        return math.inf
    return float(np.min(np.diff(pts)))


def beta(nu: DrivingMeasure, r: float, tol: float = 1e-3, substeps: int = 100,
         max_halvings: int = 24) -> BetaTrajectory:
    """Occupied relay mass over time via window halving.

    The ladder starts at ``t_f / 8`` and halves until the certified bound
    (final critical mass plus twice the largest window mass) on the normalized driver falls to
    ``tol``; ``error_bound`` reports it in units of ``r``.  Atomic drivers
    also stop once they are resolved exactly.

    Raises:
        ConvergenceError: no level within ``max_halvings`` halvings met ``tol``.
    """
    if not r > 0:
        raise DomainError("r must be positive")
    scaled = nu.scaled(1.0 / r)
    atoms = isinstance(nu, EmpiricalMeasure)
    gap = _min_gap(nu) if atoms else 0.0
    bounds = []
    delta = nu.t_f / 8.0
    for level in range(max_halvings + 1):
        state = solve_sysode(scaled, delta, substeps)
        bound = state.final_crit() + 2.0 * window_mass_sup(scaled, delta)
        bounds.append(bound)
        exact = atoms and state.final_crit() == 0.0 and delta < gap
        if bound <= tol or exact:
            values = r * (1.0 - state.idle)
            times = state.times[:-1]
            values = values[:-1]
            return BetaTrajectory(times, values, delta, r * bound, r, tuple(bounds), bool(exact), state)
        delta /= 2.0
    raise ConvergenceError(f"bound {bounds[-1]:.3g} above tol {tol} after {max_halvings} halvings", bounds)


def _resolve_state(nu, r, tol, delta, substeps):
    if delta is None:
        return beta(nu, r, tol, substeps).state
    return solve_sysode(nu.scaled(1.0 / r), delta, substeps)


def gamma_fluid(nu: DrivingMeasure, r: float, tol: float = 1e-3, output_grid=None,
                delta: float | None = None, substeps: int = 100):
    """Fluid frustration measure: ``nu`` restricted to marks above the idle mass.

    Args:
        nu: driving measure.
        r: relay mass.
        tol: ladder tolerance used when ``delta`` is not given.
        output_grid: optional ``(s_edges, t_edges, x_edges)``.  Atomic drivers
            are binned onto it; density results are redistributed assuming
            uniform mass within source cells.
        delta: fixed window length, bypassing the ladder.

    Returns:
        `FrustrationAtoms` for atomic drivers without ``output_grid``, else a
        `FrustrationGrid` (by default on the driver's own cells).
    """
    state = _resolve_state(nu, r, tol, delta, substeps)
    if isinstance(nu, EmpiricalMeasure):
        m = nu.u > state.atom_idle_before
        g = FrustrationAtoms(nu.s[m], nu.t[m], nu.x[m], nu.w[m])
        return g if output_grid is None else g.to_grid(*output_grid)
    st = state.frustration_weights[:, None] * nu.st_mass
    mass = st.reshape(st.shape + (1,) * nu.dim) * nu.x_mass.reshape((1, 1) + nu.x_mass.shape)
    grid = FrustrationGrid(nu.s_edges, nu.t_edges, nu.x_edges, mass)
    return grid if output_grid is None else _regrid(grid, *output_grid)


def gamma_mass(nu: DrivingMeasure, r: float, tol: float = 1e-3, delta: float | None = None,
               substeps: int = 100) -> float:
    """Total fluid frustrated mass."""
    return gamma_fluid(nu, r, tol, delta=delta, substeps=substeps).total_mass


def _regrid(g: FrustrationGrid, s_edges, t_edges, x_edges) -> FrustrationGrid:
    from .measures import Interval

    def mapping(src, dst):
        dst = np.asarray(dst, float)
        return np.array([Interval(dst[i], dst[i + 1], i == 0, True).cell_fractions(src)
                         for i in range(dst.size - 1)])

    m = np.tensordot(mapping(g.s_edges, s_edges), g.mass, axes=([1], [0]))
    m = np.moveaxis(np.tensordot(mapping(g.t_edges, t_edges), m, axes=([1], [1])), 0, 1)
    for j, e in enumerate(x_edges):
        m = np.moveaxis(np.tensordot(mapping(g.x_edges[j], e), m, axes=([1], [2 + j])), 0, 2 + j)
    return FrustrationGrid(np.asarray(s_edges, float), np.asarray(t_edges, float),
                           tuple(np.asarray(e, float) for e in x_edges), m)


# ------------------------------------------------------- scalar equations

def _scalar(nu: DrivingMeasure, a: float, exit_range, steps: int, accrual: bool):
    lo, hi = exit_range if exit_range is not None else (0.0, nu.t_f)
    if isinstance(nu, EmpiricalMeasure):
        o = np.argsort(nu.s, kind="stable")
        keep = (nu.t[o] >= lo) & (nu.t[o] <= hi)
        s, u, w = nu.s[o][keep], nu.u[o][keep], nu.w[o][keep]
        b = 0.0 if accrual else a
        times, vals = [0.0], [b]
        for si, ui, wi in zip(s, u, w):
            band = a - b if accrual else b
            if ui <= band:
                b = b + wi if accrual else b - wi
            times.append(float(si))
            vals.append(b)
        return np.array(times), np.array(vals)
    from .measures import Interval
    ft = Interval.closed(lo, hi).cell_fractions(nu.t_edges)
    rows = nu.st_mass @ ft
    cum = np.concatenate([[0.0], np.cumsum(rows)])
    grid = np.linspace(0.0, nu.t_f, steps + 1)
    m = np.diff(np.interp(grid, nu.s_edges, cum))
    ue, uc = _u_table(nu)
    b = 0.0 if accrual else a
    vals = [b]
    for mi in m:
        band = a - b if accrual else b
        f = _cdf(ue, uc, band)
        b = b + mi * f if accrual else b - mi * f
        vals.append(b)
    return grid, np.array(vals)


def solve_scalar_depletion(nu: DrivingMeasure, a: float, exit_range=None, steps: int = 2000):
    """Solve ``b_t = a - int_0^t nu(ds, A, [0, b_s-])`` with ``A`` an exit range."""
    return _scalar(nu, a, exit_range, steps, accrual=False)


def solve_scalar_accrual(nu: DrivingMeasure, a: float, exit_range=None, steps: int = 2000):
    """Solve ``b_t = int_0^t nu(ds, A, [0, a - b_s-])`` with ``A`` an exit range."""
    return _scalar(nu, a, exit_range, steps, accrual=True)


# ---------------------------------------------------------------- residual

def beta_residual(nu: ProductDensity, traj: BetaTrajectory, eval_times) -> float:
    """Largest deviation of ``beta`` from the occupancy integral it should satisfy.

    Evaluates ``|beta(t) - nu(admitted before t, still present at t)|``
    at ``eval_times`` using the piecewise-constant idle trajectory of the
    final solve (the idle mass is constant on each Euler substep).
    """
    from .measures import Interval
    state = traj.state
    r = traj.r
    # substep nodes and left-point idle values from the recorded trajectory
    tt = state.times
    keep = np.concatenate([[True], np.diff(tt) > 0])
    nodes = tt[keep]
    idle_left = state.idle[np.searchsorted(tt, nodes, side="right") - 1]
    pts = np.unique(np.concatenate([nodes, nu.s_edges]))
    a, b = pts[:-1], pts[1:]
    node_idx = np.searchsorted(nodes, a, side="right") - 1
    F = nu.u_cdf(idle_left[node_idx])
    cell = np.clip(np.searchsorted(nu.s_edges, a, side="right") - 1, 0, nu.s_edges.size - 2)
    width = np.diff(nu.s_edges)[cell]
    worst = 0.0
    for t in np.asarray(eval_times, float):
        ov = np.clip(np.minimum(b, t) - a, 0.0, None) / width
        ft = Interval.closed(t, nu.t_f).cell_fractions(nu.t_edges)
        exit_mass = nu.st_mass @ ft
        integral = float(np.sum(F * ov * exit_mass[cell]))
        worst = max(worst, abs(float(traj.at(t)) - integral))
    return worst
