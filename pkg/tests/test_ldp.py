import math

import numpy as np
import pytest
from scipy.optimize import brentq

from relaycap.errors import ConfigError, DomainError
from relaycap.fluid import gamma_mass
from relaycap.ldp import (TiltSpec, estimate_rare_event, ladder_csv, rate_curve_csv, rate_upper_bound,
                          replication_seeds, resolve_delta, tilt_measure)
from relaycap.measures import relative_entropy
from relaycap.model import DomainSpec, FlatKernel, SpatialLaw, TimeLaw, typical_measure

DOM = DomainSpec(((0.0, 1.0),), 1.0)
TL = TimeLaw("independent-uniform-pair", 1.0)
SL = SpatialLaw.uniform(DOM)


@pytest.fixture(scope="module")
def mu():
    return typical_measure(DOM, SL, TL, 4, 4)


def test_tilt_families(mu):
    assert tilt_measure(mu, "mass-tilt", 2.0).total_mass == pytest.approx(2 * mu.total_mass)
    for fam in ("time-tilt", "exit-tilt"):
        assert np.array_equal(tilt_measure(mu, fam, 0.0).st_mass, mu.st_mass)
        nu = tilt_measure(mu, fam, 1.5)
        assert nu.total_mass == pytest.approx(mu.total_mass, rel=1e-14)
        assert float(relative_entropy(nu, mu)) > 0
    with pytest.raises(DomainError):
        tilt_measure(mu, "mass-tilt", -1.0)
    with pytest.raises(ConfigError):
        TiltSpec("bogus", (1.0,))
    with pytest.raises(ConfigError):
        TiltSpec("mass-tilt", ())


def test_null_tilt_costs_nothing_at_typical_target(mu):
    tilt = TiltSpec("mass-tilt", (0.5, 1.5, 2.0))
    delta = resolve_delta(mu, 1.0, 1e-3, tilt, substeps=20)
    target = gamma_mass(mu, 1.0, delta=delta, substeps=20)
    rb = rate_upper_bound(mu, 1.0, target, tilt, delta=delta, substeps=20)
    assert rb.feasible and rb.best.theta == pytest.approx(1.0, abs=1e-9)
    assert rb.best.entropy == pytest.approx(0.0, abs=1e-9)
    assert len(rb.curve) == 4


def test_unreachable_target_is_infeasible(mu):
    tilt = TiltSpec("time-tilt", (-2.0, 2.0))
    rb = rate_upper_bound(mu, 1.0, 1.01 * mu.total_mass, tilt, delta=1 / 64, substeps=20)
    assert not rb.feasible and rb.best is None
    assert not any(p.feasible for p in rb.curve)


def test_mass_tilt_matches_root_oracle(mu):
    # frustrated mass is increasing in the mass tilt: locate the crossing by a
    # bracketing root finder and price it with the closed-form entropy of a
    # scaled measure, mu(V) (t log t - t + 1)
    delta, sub = 1 / 64, 20
    base = gamma_mass(mu, 1.0, delta=delta, substeps=sub)
    target = 1.4 * base
    f = lambda th: gamma_mass(mu.scaled(th), 1.0, delta=delta, substeps=sub) - target
    th = brentq(f, 1.0, 4.0, xtol=1e-12)
    want = mu.total_mass * (th * math.log(th) - th + 1)
    rb = rate_upper_bound(mu, 1.0, target, TiltSpec("mass-tilt", (0.5, 1.0, 2.0, 3.0, 4.0)),
                          delta=delta, substeps=sub)
    assert rb.best.theta == pytest.approx(th, abs=1e-8)
    assert rb.best.entropy == pytest.approx(want, abs=1e-6)


def test_rare_event_trivial_and_zero_hits():
    kw = dict(domain=DOM, spatial_law=SL, time_law=TL, kernel=FlatKernel(), lambda_ladder=[20.0], reps=30, seed=4)
    sure = estimate_rare_event(target_mass=0.0, **kw)[0]
    assert sure.p_hat == 1.0 and sure.slope == 0.0 and not sure.zero_hits
    never = estimate_rare_event(target_mass=10.0, **kw)[0]
    assert never.hits == 0 and never.zero_hits and math.isinf(never.slope)
    assert math.isfinite(never.slope_lo) and math.isinf(never.slope_hi)
    with pytest.raises(ConfigError):
        estimate_rare_event(target_mass=0.1, **{**kw, "reps": 0})


def test_rare_event_independent_of_executor():
    class Ordered:
        def map(self, fn, jobs):
            return [fn(j) for j in list(jobs)]

    kw = dict(domain=DOM, spatial_law=SL, time_law=TL, kernel=FlatKernel(), lambda_ladder=[10.0, 20.0],
              target_mass=0.15, reps=40, seed=9)
    a = estimate_rare_event(**kw)
    b = estimate_rare_event(executor=Ordered(), **kw)
    assert a == b
    assert replication_seeds(9, 0, 1) != replication_seeds(9, 1, 0)
    for p in a:
        assert p.p_lo <= p.p_hat <= p.p_hi and p.slope_lo <= p.slope_hi


def test_csv_outputs(mu):
    rb = rate_upper_bound(mu, 1.0, 0.1, TiltSpec("mass-tilt", (1.0, 2.0)), delta=1 / 16, substeps=10, refine=False)
    lines = rate_curve_csv(rb).splitlines()
    assert lines[0] == "theta,entropy,gamma_mass,feasible" and len(lines) == 3
    pts = estimate_rare_event(DOM, SL, TL, FlatKernel(), [10.0], 10.0, 5, seed=1)
    text = ladder_csv(pts).splitlines()
    assert text[0] == "lambda,reps,hits,p_hat,slope,ci_lo,ci_hi,zero_hits"
    assert text[1].split(",")[4] == "inf" and text[1].endswith(",1")
