import numpy as np
import pytest

from relaycap.errors import ConfigError, ModelViolation
from relaycap.fluid import gamma_fluid
from relaycap.measures import ProductDensity
from relaycap.model import (DomainSpec, FlatKernel, GaussianKernel, RelayConfig, SpatialLaw, TimeLaw,
                            typical_measure)
from relaycap.spatial import (FlattenedKernel, build_partition, cube_frustrated_masses, flatten_kernel,
                              gamma_spatial, gamma_spatial_disintegrated, kernel_l1_error, spatial_measure,
                              write_cube_masses_csv)

DOM = DomainSpec(((0.0, 1.0),), 1.0)


def test_partition_edges_and_locate():
    p = build_partition(DOM, 0.3)
    assert p.edges[0].tolist() == pytest.approx([0, 0.3, 0.6, 0.9, 1.0])
    assert p.locate([[0.0], [0.3], [0.2999], [0.95], [1.0]]).tolist() == [0, 1, 0, 3, 3]
    assert p.volumes().sum() == pytest.approx(1.0)
    exact = build_partition(DOM, 0.25)
    assert exact.edges[0].tolist() == [0, 0.25, 0.5, 0.75, 1.0]
    sq = build_partition(DomainSpec(((0, 1), (0, 2)), 1.0), 0.5)
    assert sq.shape == (2, 4) and len(sq) == 8
    assert sq.locate([[0.6, 1.9]]).tolist() == [7]
    with pytest.raises(ConfigError):
        build_partition(DOM, 0.0)


def test_flat_kernel_flattens_to_one():
    rel = RelayConfig.grid(DOM, 40.0)
    disc = flatten_kernel(FlatKernel(), rel, "l_lambda", build_partition(DOM, 0.25))
    v = disc.value(np.array([[0.1], [0.8]]), rel.positions)
    assert np.allclose(v, 1.0)
    mu = flatten_kernel(FlatKernel(), rel, "mu_R", build_partition(DOM, 0.25), base="mu_R")
    assert np.allclose(mu.value(np.array([[0.3]]), np.array([[0.5], [0.9]])), 1.0)


def test_single_cube_is_row_over_relay_mass():
    rel = RelayConfig.explicit([[0.2], [0.7]], 10.0)
    k = GaussianKernel(0.3)
    disc = flatten_kernel(k, rel, "l_lambda", build_partition(DOM, 1.0))
    # one cube holds all kernel mass, so the flat value is 1 / l_lambda(W)
    assert disc.relay_mass.tolist() == pytest.approx([0.2])
    assert disc.value(np.array([[0.4]]), rel.positions) == pytest.approx(np.full((1, 2), 5.0))


def test_gaussian_two_cubes_hand_sum():
    rel = RelayConfig.explicit([[0.25], [0.75]], 2.0)
    sigma = 0.2
    disc = flatten_kernel(GaussianKernel(sigma), rel, "l_lambda", build_partition(DOM, 0.5))
    x = 0.4
    k1, k2 = np.exp(-(x - 0.25) ** 2 / (2 * sigma ** 2)), np.exp(-(x - 0.75) ** 2 / (2 * sigma ** 2))
    cm = disc.cube_mass([[x]])[0]
    assert cm == pytest.approx([k1 / (k1 + k2), k2 / (k1 + k2)], rel=1e-14)
    v = disc.value([[x]], np.array([[0.1], [0.6]]))[0]
    assert v == pytest.approx([2 * k1 / (k1 + k2), 2 * k2 / (k1 + k2)], rel=1e-14)
    # rows integrate to one against the relay measure
    assert disc.value([[x]], rel.positions).sum() / rel.lam == pytest.approx(1.0, rel=1e-14)


def test_flattened_kernel_is_a_kernel():
    rel = RelayConfig.grid(DOM, 20.0)
    disc = flatten_kernel(GaussianKernel(0.2), rel, "l_lambda", build_partition(DOM, 0.25))
    fk = FlattenedKernel(disc=disc)
    assert fk(np.array([[0.5]]), rel.positions).shape == (1, rel.n)
    assert fk.to_dict()["family"] == "flattened"


def test_kernel_l1_flat_is_zero_and_trend():
    # 40 grid relays put exactly 10 in each quarter
    rel = RelayConfig.grid(DOM, 40.0)
    part = build_partition(DOM, 0.25)
    for mode in ("mu_vs_l", "l_vs_exact", "mu_vs_exact"):
        assert kernel_l1_error(FlatKernel(), rel, part, mode) == pytest.approx(0.0, abs=1e-12)
    g = GaussianKernel(0.2)
    errs = [kernel_l1_error(g, rel, build_partition(DOM, 2.0 ** -k), "mu_vs_exact") for k in range(1, 5)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    with pytest.raises(ConfigError):
        kernel_l1_error(g, rel, part, "bogus")


def test_kernel_l1_single_cube_oracle():
    # one cube: flattened value is 1 (mass 1 relay law), exact density is
    # k(x,y) / integral k(x, .); compare with a dense midpoint rule
    rel = RelayConfig.grid(DOM, 1.0)
    g = GaussianKernel(0.3)
    got = kernel_l1_error(g, rel, build_partition(DOM, 1.0), "mu_vs_exact", n_quad=96)
    m = 2000
    x = (np.arange(m) + 0.5) / m
    k = np.exp(-(x[:, None] - x[None, :]) ** 2 / (2 * 0.09))
    dens = k / (k.mean(axis=1, keepdims=True))
    want = np.abs(1.0 - dens).mean()
    assert got > 0 and got == pytest.approx(want, rel=1e-4)


def _mu(tl=None):
    tl = tl or TimeLaw("independent-uniform-pair", 1.0)
    return typical_measure(DOM, SpatialLaw.uniform(DOM), tl, 4, 4)


def test_gamma_spatial_single_cube_matches_whole():
    rel = RelayConfig.grid(DOM, 30.0, 0.5)
    disc = flatten_kernel(GaussianKernel(0.2), rel, "mu_R", build_partition(DOM, 1.0), base="mu_R")
    mu = _mu()
    n = spatial_measure(mu, disc)
    assert n.relay_mass.tolist() == pytest.approx([rel.r_lambda])
    g = gamma_spatial(n, delta=1 / 64, substeps=20)
    ref = gamma_fluid(mu, rel.r_lambda, delta=1 / 64, substeps=20)
    assert g.total_mass == pytest.approx(ref.total_mass, abs=1e-12)


def test_flat_symmetric_cubes():
    rel = RelayConfig.grid(DOM, 40.0)
    disc = flatten_kernel(FlatKernel(), rel, "mu_R", build_partition(DOM, 0.25), base="mu_R")
    mu = _mu()
    n = spatial_measure(mu, disc)
    m = cube_frustrated_masses(n, delta=1 / 64, substeps=20)
    assert np.ptp(m) <= 1e-12
    one = gamma_fluid(n.cubes[0], float(n.relay_mass[0]), delta=1 / 64, substeps=20).total_mass
    assert m.sum() == pytest.approx(4 * one, abs=1e-12)
    assert gamma_spatial(n, delta=1 / 64, substeps=20).total_mass == pytest.approx(m.sum(), abs=1e-12)


def test_decomposition_matches_disintegration():
    rel = RelayConfig.grid(DOM, 100.0)
    disc = flatten_kernel(GaussianKernel(0.2), rel, "mu_R", build_partition(DOM, 0.25), base="mu_R")
    mu = _mu(TimeLaw("shifted-exponential", 1.0, 3.0))
    n = spatial_measure(mu, disc)
    a = gamma_spatial(n, delta=1 / 64, substeps=20).total_mass
    b = gamma_spatial_disintegrated(mu, disc, delta=1 / 64, substeps=20)
    assert abs(a - b) <= 1e-8
    assert n.total_mass == pytest.approx(mu.total_mass, rel=1e-12)


def test_zero_measure_gives_zero_grid():
    rel = RelayConfig.grid(DOM, 20.0)
    disc = flatten_kernel(FlatKernel(), rel, "mu_R", build_partition(DOM, 0.5), base="mu_R")
    n = spatial_measure(_mu().scaled(0.0), disc)
    assert all(c is None for c in n.cubes) and n.total_mass == 0.0
    assert gamma_spatial(n, delta=0.25).total_mass == 0.0


def test_cube_without_relay_mass_raises():
    rel = RelayConfig.explicit([[0.25], [0.75]], 2.0)
    law = SpatialLaw((np.array([0.0, 0.5, 1.0]),), np.array([0.0, 1.0]))
    disc = flatten_kernel(FlatKernel(), rel, "l_lambda", build_partition(DOM, 0.5), relay_law=law)
    with pytest.raises(ModelViolation, match="no relay mass"):
        spatial_measure(_mu(), disc)


def test_disintegration_needs_mu_r():
    rel = RelayConfig.grid(DOM, 20.0)
    disc = flatten_kernel(FlatKernel(), rel, "l_lambda", build_partition(DOM, 0.5))
    with pytest.raises(ConfigError):
        gamma_spatial_disintegrated(_mu(), disc)


def test_cube_masses_csv():
    text = write_cube_masses_csv(np.array([0.25, 0.5]))
    assert text == "cube,mass\n0,0.25\n1,0.5\n"
