"""Finite-scale dynamics of the relay network.

`simulate_exact` follows relay identities, `simulate_marked` replaces them
by uniform marks and an occupied-mass threshold, `simulate_coupled` runs two
kernels on one probability space, and `enumerate_exact` computes exact laws
for tiny instances.

A relay holding a transmitter on ``[S, T)`` is free again at ``T``.  An
event with ``T <= S`` holds its relay for zero time.
"""
from __future__ import annotations

import csv
import heapq
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, SizeError
from .measures import FrustrationAtoms
from .model import (Kernel, Population, RelayConfig, TransmitterEvent, select_relays,
                    selection_probabilities)

__all__ = [
    "OccupancyTimeline",
    "CriticalRelayReport",
    "ExactLaw",
    "simulate_exact",
    "simulate_marked",
    "simulate_coupled",
    "enumerate_exact",
    "write_frustration_csv",
    "write_step_csv",
]


@dataclass(frozen=True, eq=False)
class OccupancyTimeline:
    """Busy intervals ``[start, end)`` per relay."""

    relay: np.ndarray
    start: np.ndarray
    end: np.ndarray
    n_relays: int

    def intervals(self, k: int) -> np.ndarray:
        m = self.relay == k
        o = np.argsort(self.start[m], kind="stable")
        return np.column_stack([self.start[m][o], self.end[m][o]])

    def overlaps(self) -> bool:
        """True if some relay serves two transmitters at once."""
        for k in np.unique(self.relay):
            iv = self.intervals(int(k))
            if np.any(iv[1:, 0] < iv[:-1, 1]):
                return True
        return False

    def count_at(self, times) -> np.ndarray:
        times = np.asarray(times, float)
        return ((self.start[None, :] <= times[:, None]) & (times[:, None] < self.end[None, :])).sum(axis=1)

    def step_function(self) -> tuple[np.ndarray, np.ndarray]:
        """Total occupied count as (jump time, value after the jump)."""
        times = np.concatenate([self.start, self.end])
        jumps = np.concatenate([np.ones(self.start.size), -np.ones(self.end.size)])
        # at equal times releases come first, matching the [S, T) convention
        o = np.lexsort((jumps, times))
        return (np.concatenate([[0.0], times[o]]),
                np.concatenate([[0.0], np.cumsum(jumps[o])]))


@dataclass(frozen=True)
class CriticalRelayReport:
    critical_set: frozenset
    pointing_mass: float


@dataclass(frozen=True, eq=False)
class ExactLaw:
    """Exact law of the frustrated count and the expected frustration measure."""

    pmf: dict
    expected: FrustrationAtoms

    @property
    def mean(self) -> float:
        return float(sum(k * p for k, p in self.pmf.items()))


def _population(population, need_marks: bool = False) -> Population:
    pop = Population.from_events(population)
    if not pop.is_sorted():
        raise ContractError("population must be sorted by entrance time (ties by id)")
    if need_marks and pop.u is None and len(pop):
        raise ContractError("every event must carry a mark")
    return pop


def _replay(s: np.ndarray, t: np.ndarray, sel: np.ndarray, n_relays: int):
    """Occupancy dynamics for fixed relay choices; returns frustrated mask and intervals."""
    busy = [-np.inf] * n_relays
    frus = np.zeros(s.size, dtype=bool)
    rel, st, en = [], [], []
    for i, (si, ti, r) in enumerate(zip(s.tolist(), t.tolist(), sel.tolist())):
        if busy[r] > si:
            frus[i] = True
        elif ti > si:
            busy[r] = ti
            rel.append(r)
            st.append(si)
            en.append(ti)
    tl = OccupancyTimeline(np.array(rel, dtype=np.int64), np.array(st), np.array(en), n_relays)
    return frus, tl


def _atoms(pop: Population, mask: np.ndarray, weight: float) -> FrustrationAtoms:
    return FrustrationAtoms(pop.s[mask], pop.t[mask], pop.x[mask], np.full(int(mask.sum()), weight))


def simulate_exact(population: Population | Sequence[TransmitterEvent], relays: RelayConfig,
                   kernel: Kernel, seed) -> tuple[FrustrationAtoms, OccupancyTimeline]:
    """Run the relay-selection dynamics once.

    Each transmitter picks a relay with one uniform draw from the generator
    seeded by ``seed``; it is frustrated if that relay is busy at its
    entrance.  Frustrated transmitters carry weight ``1/lam``.

    Raises:
        ContractError: population not in entrance order.
    """
    pop = _population(population)
    u = np.random.default_rng(seed).random(len(pop))
    sel = select_relays(pop.x, relays, kernel, u)
    frus, tl = _replay(pop.s, pop.t, sel, relays.n)
    return _atoms(pop, frus, 1.0 / relays.lam), tl


def simulate_marked(population: Population | Sequence[TransmitterEvent], r_lambda: float,
                    lam: float) -> tuple[FrustrationAtoms, tuple[np.ndarray, np.ndarray]]:
    """Marked dynamics: admit iff ``u <= 1 - B_{s-} / r_lambda``.

    Returns the frustration atoms and the occupied-mass trajectory ``B`` as
    (jump time, value after the jump), starting with ``(0, 0)``.
    """
    pop = _population(population, need_marks=True)
    if not r_lambda > 0:
        raise ContractError("r_lambda must be positive")
    exits: list[float] = []
    busy = 0
    frus = np.zeros(len(pop), dtype=bool)
    times = [0.0]
    vals = [0.0]
    cap = r_lambda * lam
    u_all = pop.u.tolist() if len(pop) else []
    for i, (si, ti, ui) in enumerate(zip(pop.s.tolist(), pop.t.tolist(), u_all)):
        while exits and exits[0] <= si:
            times.append(heapq.heappop(exits))
            busy -= 1
            vals.append(busy / lam)
        if ui <= 1.0 - busy / cap:
            if ti > si:
                heapq.heappush(exits, ti)
                busy += 1
                times.append(si)
                vals.append(busy / lam)
        else:
            frus[i] = True
    while exits:
        times.append(heapq.heappop(exits))
        busy -= 1
        vals.append(busy / lam)
    return _atoms(pop, frus, 1.0 / lam), (np.array(times), np.array(vals))


def simulate_coupled(population, relays: RelayConfig, kernel_a: Kernel, kernel_b: Kernel, seed,
                     check_tol: float = 1e-12):
    """Run kernels ``kernel_a >= kernel_b`` on a common probability space.

    Each transmitter uses one selection draw (shared) and one thinning draw
    ``v``; it belongs to the b-run iff ``v < kappa_b / kappa_a`` at its
    selected relay, so the b-selection law is proportional to ``kappa_b``.

    Returns:
        (frustration_a, frustration_b, CriticalRelayReport).

    Raises:
        ContractError: ``kernel_b > kernel_a`` at some (transmitter, relay) pair.
    """
    pop = _population(population)
    n = len(pop)
    ka = kernel_a.evaluate(pop.x, relays.positions) if n else np.zeros((0, relays.n))
    kb = kernel_b.evaluate(pop.x, relays.positions) if n else np.zeros((0, relays.n))
    viol = kb > ka * (1 + check_tol) + check_tol
    if viol.any():
        i, k = np.argwhere(viol)[0]
        raise ContractError(f"kernel_b exceeds kernel_a at x={pop.x[i].tolist()}, relay {int(k)}")
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    v = rng.random(n)
    sel = select_relays(pop.x, relays, kernel_a, u)
    rows = np.arange(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(ka[rows, sel] > 0, kb[rows, sel] / np.where(ka[rows, sel] > 0, ka[rows, sel], 1), 0.0)
    keep = v < ratio
    frus_a, _ = _replay(pop.s, pop.t, sel, relays.n)
    frus_b_sub, _ = _replay(pop.s[keep], pop.t[keep], sel[keep], relays.n)
    frus_b = np.zeros(n, dtype=bool)
    frus_b[np.nonzero(keep)[0]] = frus_b_sub
    critical = frozenset(int(k) for k in np.unique(sel[~keep]))
    pointing = np.isin(sel, list(critical)).sum() / relays.lam if critical else 0.0
    w = 1.0 / relays.lam
    return _atoms(pop, frus_a, w), _atoms(pop, frus_b, w), CriticalRelayReport(critical, float(pointing))


def enumerate_exact(population, relays: RelayConfig, kernel: Kernel, max_vectors: int = 10 ** 6) -> ExactLaw:
    """Exact law by enumerating every relay-choice vector.

    Raises:
        SizeError: more than ``max_vectors`` choice vectors.
    """
    pop = _population(population)
    n_ev, n_rel = len(pop), relays.n
    if n_rel ** n_ev > max_vectors:
        raise SizeError(f"{n_rel}^{n_ev} choice vectors exceed {max_vectors}")
    if n_ev == 0:
        return ExactLaw({0: 1.0}, _atoms(pop, np.zeros(0, bool), 0.0))
    P = selection_probabilities(pop.x, relays, kernel)
    choices = np.array(list(itertools.product(range(n_rel), repeat=n_ev)), dtype=np.int64)
    prob = np.prod(P[np.arange(n_ev)[None, :], choices], axis=1)
    busy = np.full((choices.shape[0], n_rel), -np.inf)
    frus = np.zeros(choices.shape, dtype=bool)
    rows = np.arange(choices.shape[0])
    for i in range(n_ev):
        c = choices[:, i]
        f = busy[rows, c] > pop.s[i]
        frus[:, i] = f
        if pop.t[i] > pop.s[i]:
            busy[rows[~f], c[~f]] = pop.t[i]
    counts = frus.sum(axis=1)
    pmf = {}
    for k in np.unique(counts):
        p = float(prob[counts == k].sum())
        if p > 0:
            pmf[int(k)] = p
    p_frus = prob @ frus
    mask = p_frus > 0
    expected = FrustrationAtoms(pop.s[mask], pop.t[mask], pop.x[mask], p_frus[mask] / relays.lam)
    return ExactLaw(pmf, expected)


# ------------------------------------------------------------------ output

def _fmt(v: float) -> str:
    return repr(float(v))


def write_frustration_csv(fh, atoms: FrustrationAtoms, replication: int, seed: int, header: bool = True):
    """Rows ``(s, t_exit, x..., weight, replication, seed)``."""
    w = csv.writer(fh, lineterminator="\n")
    d = atoms.x.shape[1] if atoms.x.ndim == 2 else 1
    if header:
        w.writerow(["s", "t_exit"] + [f"x{j}" for j in range(d)] + ["weight", "replication", "seed"])
    for i in range(len(atoms)):
        w.writerow([_fmt(atoms.s[i]), _fmt(atoms.t[i])] + [_fmt(v) for v in atoms.x[i]]
                   + [_fmt(atoms.w[i]), replication, seed])


def write_step_csv(fh, times, values, header: bool = True):
    """Step function rows ``(time, value)``."""
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(["time", "value"])
    for t, v in zip(times, values):
        w.writerow([_fmt(t), _fmt(v)])
