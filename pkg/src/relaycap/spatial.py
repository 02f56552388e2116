"""Cube partitions, locally flat kernels and per-cube fluid systems.

A transmitter first picks a cube with probability given by the
kernel mass of that cube and then a relay uniformly inside it.  The
resulting flattened kernel is constant in ``y`` on each cube.  The fluid
frustration measure of the whole domain splits into independent per-cube
solves, each with the relay-law mass of its cube.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, ModelViolation
from .fluid import gamma_fluid
from .measures import FrustrationGrid, ProductDensity
from .model import (DomainSpec, Kernel, RAW_INTENSITY, RelayConfig, SpatialLaw,
                    kernel_row_mass)

__all__ = [
    "SpatialPartition",
    "SpatialKernelDisc",
    "FlattenedKernel",
    "SpatialMeasure",
    "build_partition",
    "flatten_kernel",
    "kernel_l1_error",
    "spatial_measure",
    "gamma_spatial",
    "gamma_spatial_disintegrated",
    "cube_frustrated_masses",
]

MODES = ("mu_vs_l", "l_vs_exact", "mu_vs_exact")


@dataclass(frozen=True, eq=False)
class SpatialPartition:
    """Cubes given by per-axis edges, listed in lexicographic order.

    A point belongs to the cube whose lower faces it lies on or above; points
    on the global upper faces go to the last cube of that axis.
    """

    edges: tuple[np.ndarray, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(e.size - 1 for e in self.edges)

    def __len__(self):
        return math.prod(self.shape)

    @property
    def cubes(self) -> list[tuple[tuple[float, float], ...]]:
        out = []
        for idx in itertools.product(*(range(n) for n in self.shape)):
            out.append(tuple((float(e[i]), float(e[i + 1])) for e, i in zip(self.edges, idx)))
        return out

    def volumes(self) -> np.ndarray:
        vol = np.ones(self.shape)
        for j, e in enumerate(self.edges):
            sh = [1] * len(self.edges)
            sh[j] = -1
            vol = vol * np.diff(e).reshape(sh)
        return vol.ravel()

    def locate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        idx = [np.clip(np.searchsorted(e, x[:, j], side="right") - 1, 0, e.size - 2)
               for j, e in enumerate(self.edges)]
        return np.ravel_multi_index(idx, self.shape)

    def to_dict(self) -> dict:
        return {"edges": [e.tolist() for e in self.edges], "cubes": [list(map(list, c)) for c in self.cubes]}


def build_partition(domain: DomainSpec, delta_space: float) -> SpatialPartition:
    """Cubes of side ``delta_space``; a shorter tail cube closes each axis if needed.

    Raises:
        ConfigError: ``delta_space <= 0``.
    """
    if not delta_space > 0:
        raise ConfigError("delta_space must be positive")
    edges = []
    for lo, hi in domain.box:
        n_full = int(math.floor((hi - lo) / delta_space + 1e-9))
        e = lo + delta_space * np.arange(n_full + 1)
        if hi - e[-1] > 1e-9 * delta_space:
            e = np.append(e, hi)
        else:
            e[-1] = hi
        edges.append(e)
    return SpatialPartition(tuple(edges))


def _cube_nodes(partition: SpatialPartition, n_quad: int):
    """Gauss-Legendre nodes and weights (Lebesgue) for every cube."""
    g, gw = leggauss(n_quad)
    nodes, weights, owner = [], [], []
    for i, cube in enumerate(partition.cubes):
        axes = [0.5 * (b - a) * g + 0.5 * (a + b) for a, b in cube]
        wax = [0.5 * (b - a) * gw for a, b in cube]
        mesh = np.meshgrid(*axes, indexing="ij")
        wm = np.meshgrid(*wax, indexing="ij")
        nodes.append(np.column_stack([m.ravel() for m in mesh]))
        weights.append(np.prod(np.stack([m.ravel() for m in wm]), axis=0))
        owner.append(np.full(nodes[-1].shape[0], i))
    return np.vstack(nodes), np.concatenate(weights), np.concatenate(owner)


def _law_density(law: SpatialLaw, x: np.ndarray) -> np.ndarray:
    idx = [np.clip(np.searchsorted(e, x[:, j], side="right") - 1, 0, e.size - 2)
           for j, e in enumerate(law.edges)]
    vol = np.ones(law.mass.shape)
    for j, e in enumerate(law.edges):
        sh = [1] * len(law.edges)
        sh[j] = -1
        vol = vol * np.diff(e).reshape(sh)
    return (law.mass / vol)[tuple(idx)]


@dataclass(frozen=True, eq=False)
class SpatialKernelDisc:
    """Locally flat kernel on a cube partition.

    Attributes:
        nu_R: ``"l_lambda"`` or ``"mu_R"``, the relay measure against which
            per-cube kernel masses are computed.
        base: relay measure whose cube masses divide the cube masses.
        relay_mass: mass of each cube under ``base``.
    """

    partition: SpatialPartition
    kernel: Kernel
    relays: RelayConfig
    relay_law: SpatialLaw
    nu_R: str
    base: str
    relay_mass: np.ndarray
    n_quad: int = 8

    def _density_nodes(self):
        nodes, w, owner = _cube_nodes(self.partition, self.n_quad)
        return nodes, w * _law_density(self.relay_law, nodes), owner

    def kernel_density(self, x: np.ndarray, y: np.ndarray, measure: str) -> np.ndarray:
        """``kappa(y | x)`` against ``measure`` (normalized unless the kernel is raw)."""
        k = self.kernel.evaluate(x, y)
        if self.kernel.normalization == RAW_INTENSITY:
            return k
        return k / _row_mass(self, x, measure)[:, None]

    def cube_mass(self, x) -> np.ndarray:
        """Kernel mass of each cube seen from each point, shape ``(m, k)``."""
        x = np.atleast_2d(np.asarray(x, float))
        k = len(self.partition)
        if self.nu_R == "l_lambda":
            y = self.relays.positions
            vals = self.kernel_density(x, y, "l_lambda") / self.relays.lam
            owner = self.partition.locate(y)
        else:
            y, wq, owner = self._density_nodes()
            vals = self.kernel_density(x, y, "mu_R") * wq[None, :]
        out = np.zeros((x.shape[0], k))
        for i in range(k):
            out[:, i] = vals[:, owner == i].sum(axis=1)
        return out

    def value(self, x, y) -> np.ndarray:
        """Flattened kernel value at ``(x, y)``, shape ``(len(x), len(y))``."""
        x = np.atleast_2d(np.asarray(x, float))
        cube = self.partition.locate(y)
        cm = self.cube_mass(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            flat = np.where(self.relay_mass > 0, cm / np.where(self.relay_mass > 0, self.relay_mass, 1.0), 0.0)
        return flat[:, cube]

    def to_dict(self) -> dict:
        return {"partition": self.partition.to_dict(), "kernel": self.kernel.to_dict(),
                "nu_R": self.nu_R, "base": self.base, "relay_mass": self.relay_mass.tolist(),
                "n_quad": self.n_quad}


def _row_mass(disc: SpatialKernelDisc, x: np.ndarray, measure: str) -> np.ndarray:
    if measure == "l_lambda":
        row = kernel_row_mass(x, disc.relays, disc.kernel)
    else:
        nodes, w, _ = disc._density_nodes()
        row = disc.kernel.evaluate(x, nodes) @ w
    if np.any(row <= 0):
        raise ModelViolation(f"zero kernel row at x={x[int(np.argmax(row <= 0))].tolist()}")
    return row


def _cube_relay_mass(partition, relays, law, measure, n_quad):
    if measure == "l_lambda":
        return np.bincount(partition.locate(relays.positions), minlength=len(partition)) / relays.lam
    nodes, w, owner = _cube_nodes(partition, n_quad)
    return np.bincount(owner, weights=w * _law_density(law, nodes), minlength=len(partition))


def flatten_kernel(kernel: Kernel, relays: RelayConfig, nu_R: str, partition: SpatialPartition,
                   relay_law: SpatialLaw | None = None, base: str = "l_lambda",
                   n_quad: int = 8) -> SpatialKernelDisc:
    """Locally flat kernel: cube kernel mass over cube relay mass, constant in ``y`` per cube.

    ``relay_law`` is ``mu_R``; it defaults to the uniform law of total mass
    ``r_lambda`` over the partition's bounding box.
    """
    if nu_R not in ("l_lambda", "mu_R") or base not in ("l_lambda", "mu_R"):
        raise ConfigError("nu_R and base must be 'l_lambda' or 'mu_R'")
    if relay_law is None:
        box = tuple((float(e[0]), float(e[-1])) for e in partition.edges)
        relay_law = SpatialLaw(tuple(np.array(b) for b in box),
                               np.full((1,) * len(box), relays.r_lambda))
    rm = _cube_relay_mass(partition, relays, relay_law, base, n_quad)
    return SpatialKernelDisc(partition, kernel, relays, relay_law, nu_R, base, rm, n_quad)


@dataclass(frozen=True, eq=False)
class FlattenedKernel(Kernel):
    """A `SpatialKernelDisc` used as a preference kernel in the simulator."""

    disc: SpatialKernelDisc = None

    @property
    def kappa_inf(self):
        return None

    def evaluate(self, x, y):
        return self.disc.value(x, y)

    def to_dict(self):
        return {"family": "flattened", "disc": self.disc.to_dict()}


def kernel_l1_error(kernel: Kernel, relays: RelayConfig, partition: SpatialPartition, mode: str,
                    spatial_law: SpatialLaw | None = None, relay_law: SpatialLaw | None = None,
                    n_quad: int = 8) -> float:
    """L1 distance between two kernels against the spatial law times a relay measure.

    Modes:
        ``mu_vs_l``: flattened with cube masses from ``mu_R`` versus from
            ``l_lambda`` (both divided by ``l_lambda`` cube masses), summed over relays.
        ``l_vs_exact``: flattened ``(l_lambda, l_lambda)`` versus the exact
            kernel density, summed over relays.
        ``mu_vs_exact``: flattened ``(mu_R, mu_R)`` versus the exact kernel
            density, integrated against ``mu_R``.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    box = tuple((float(e[0]), float(e[-1])) for e in partition.edges)
    spatial_law = spatial_law or SpatialLaw(tuple(np.array(b) for b in box), np.ones((1,) * len(box)))
    xq, xw, _ = _cube_nodes(partition, n_quad)
    xw = xw * _law_density(spatial_law, xq)
    if mode == "mu_vs_l":
        a = flatten_kernel(kernel, relays, "mu_R", partition, relay_law, "l_lambda", n_quad)
        b = flatten_kernel(kernel, relays, "l_lambda", partition, relay_law, "l_lambda", n_quad)
        y = relays.positions
        diff = np.abs(a.value(xq, y) - b.value(xq, y)).sum(axis=1) / relays.lam
    elif mode == "l_vs_exact":
        a = flatten_kernel(kernel, relays, "l_lambda", partition, relay_law, "l_lambda", n_quad)
        y = relays.positions
        diff = np.abs(a.value(xq, y) - a.kernel_density(xq, y, "l_lambda")).sum(axis=1) / relays.lam
    else:
        a = flatten_kernel(kernel, relays, "mu_R", partition, relay_law, "mu_R", n_quad)
        y, wy, _ = a._density_nodes()
        diff = np.abs(a.value(xq, y) - a.kernel_density(xq, y, "mu_R")) @ wy
    return float(diff @ xw)


# ------------------------------------------------------------ fluid side

@dataclass(frozen=True, eq=False)
class SpatialMeasure:
    """Per-cube driving measures and relay masses.

    ``cubes[i]`` is ``None`` when the cube receives no transmitter mass.
    """

    cubes: tuple
    relay_mass: np.ndarray
    partition: SpatialPartition
    template: ProductDensity

    @property
    def total_mass(self) -> float:
        return float(sum(c.total_mass for c in self.cubes if c is not None))


def spatial_measure(mu: ProductDensity, disc: SpatialKernelDisc, n_quad: int = 8) -> SpatialMeasure:
    """Split ``mu`` by cube choice, weighting locations by the cube's kernel mass.

    The x grid is refined to the partition edges, and cube masses are averaged
    over each refined cell by Gauss-Legendre quadrature.  Relay masses are
    masses under the relay law.
    """
    edges = tuple(np.unique(np.concatenate([e, p])) for e, p in zip(mu.x_edges, disc.partition.edges))
    xm = mu.x_mass
    for j in range(mu.dim):
        R = _split_matrix(mu.x_edges[j], edges[j])
        xm = np.moveaxis(np.tensordot(R, xm, axes=([1], [j])), 0, j)
    g, gw = leggauss(n_quad)
    cells = list(itertools.product(*(range(e.size - 1) for e in edges)))
    avg = np.zeros((len(cells), len(disc.partition)))
    for n, idx in enumerate(cells):
        axes = [0.5 * (e[i + 1] - e[i]) * g + 0.5 * (e[i + 1] + e[i]) for e, i in zip(edges, idx)]
        wax = [0.5 * gw for _ in idx]
        pts = np.column_stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")])
        ww = np.prod(np.stack([m.ravel() for m in np.meshgrid(*wax, indexing="ij")]), axis=0)
        avg[n] = ww @ disc.cube_mass(pts)
    rm = _cube_relay_mass(disc.partition, disc.relays, disc.relay_law, "mu_R", disc.n_quad)
    cubes = []
    xflat = xm.ravel()
    for i in range(len(disc.partition)):
        wx = xflat * avg[:, i]
        m = float(wx.sum())
        if m <= 0 or mu.total_mass <= 0:
            cubes.append(None)
            continue
        if rm[i] <= 0:
            raise ModelViolation(f"cube {i} has transmitter mass {m} but no relay mass")
        cubes.append(ProductDensity(mu.s_edges, mu.t_edges, mu.st_mass * m, edges,
                                    (wx / m).reshape(xm.shape), mu.u_edges, mu.u_mass))
    template = ProductDensity(mu.s_edges, mu.t_edges, mu.st_mass, edges,
                              np.full(xm.shape, 1.0 / xm.size), mu.u_edges, mu.u_mass)
    return SpatialMeasure(tuple(cubes), rm, disc.partition, template)


def _split_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    lo, hi = src[:-1], src[1:]
    R = np.zeros((dst.size - 1, src.size - 1))
    for i in range(dst.size - 1):
        ov = np.clip(np.minimum(hi, dst[i + 1]) - np.maximum(lo, dst[i]), 0, None)
        R[i] = ov / (hi - lo)
    return R


def _per_cube(n: SpatialMeasure, tol: float, delta: float | None, substeps: int):
    out = []
    for i, cube in enumerate(n.cubes):
        if cube is None:
            out.append(None)
            continue
        out.append(gamma_fluid(cube, float(n.relay_mass[i]), tol, delta=delta, substeps=substeps))
    return out


def gamma_spatial(n: SpatialMeasure, tol: float = 1e-3, delta: float | None = None,
                  substeps: int = 100) -> FrustrationGrid:
    """Sum of per-cube fluid frustration measures, each with its cube relay mass."""
    t = n.template
    total = FrustrationGrid(t.s_edges, t.t_edges, t.x_edges,
                            np.zeros(t.st_mass.shape + t.x_mass.shape))
    for g in _per_cube(n, tol, delta, substeps):
        if g is not None:
            total = total + g
    return total


def cube_frustrated_masses(n: SpatialMeasure, tol: float = 1e-3, delta: float | None = None,
                           substeps: int = 100) -> np.ndarray:
    return np.array([0.0 if g is None else g.total_mass for g in _per_cube(n, tol, delta, substeps)])


def gamma_spatial_disintegrated(mu: ProductDensity, disc: SpatialKernelDisc, tol: float = 1e-3,
                                delta: float | None = None, substeps: int = 100,
                                n_quad: int = 8, y_quad: int = 2) -> float:
    """Total frustrated mass as an integral over relay locations ``y``.

    For each quadrature node ``y`` the measure of transmitters choosing a
    relay at ``y`` is ``mu`` weighted by the flat kernel at ``y``; it is solved with unit relay
    mass and weighted by ``mu_R(dy)``.  Cube structure enters only through the
    flattened kernel, so agreement with `gamma_spatial` checks the per-cube
    decomposition and its relay-mass scaling.
    """
    if disc.nu_R != "mu_R" or disc.base != "mu_R":
        raise ConfigError("the disintegrated solve needs a (mu_R, mu_R) flattened kernel")
    edges = tuple(np.unique(np.concatenate([e, p])) for e, p in zip(mu.x_edges, disc.partition.edges))
    xm = mu.x_mass
    for j in range(mu.dim):
        xm = np.moveaxis(np.tensordot(_split_matrix(mu.x_edges[j], edges[j]), xm, axes=([1], [j])), 0, j)
    g, gw = leggauss(n_quad)
    cells = list(itertools.product(*(range(e.size - 1) for e in edges)))
    pts_all, w_all, own = [], [], []
    for n_, idx in enumerate(cells):
        axes = [0.5 * (e[i + 1] - e[i]) * g + 0.5 * (e[i + 1] + e[i]) for e, i in zip(edges, idx)]
        pts_all.append(np.column_stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")]))
        w_all.append(np.prod(np.stack([m.ravel() for m in np.meshgrid(*[0.5 * gw] * len(idx), indexing="ij")]), axis=0))
        own.append(np.full(pts_all[-1].shape[0], n_))
    xq, xw, xo = np.vstack(pts_all), np.concatenate(w_all), np.concatenate(own)
    yq, yw, _ = _cube_nodes(disc.partition, y_quad)
    yw = yw * _law_density(disc.relay_law, yq)
    kd = disc.value(xq, yq)
    total = 0.0
    xflat = xm.ravel()
    for q in range(yq.shape[0]):
        if yw[q] <= 0:
            continue
        avg = np.bincount(xo, weights=xw * kd[:, q], minlength=len(cells))
        wx = xflat * avg
        m = float(wx.sum())
        if m <= 0:
            continue
        n_y = ProductDensity(mu.s_edges, mu.t_edges, mu.st_mass * m, edges, (wx / m).reshape(xm.shape),
                             mu.u_edges, mu.u_mass)
        total += yw[q] * gamma_fluid(n_y, 1.0, tol, delta=delta, substeps=substeps).total_mass
    return total


def write_cube_masses_csv(masses: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cube", "mass"])
    for i, m in enumerate(masses):
        w.writerow([i, repr(float(m))])
    return buf.getvalue()
