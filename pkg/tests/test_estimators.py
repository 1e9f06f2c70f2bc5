import math

import numpy as np
import pytest
from scipy.special import ndtr

from arratia_lab.coalesce import Scheme, coalesce_paths
from arratia_lab.errors import ConfigurationError, DomainError
from arratia_lab.estimators import (Bins, CountTarget, SchemeTarget, density_direct, density_girsanov,
                                    density_thm2, density_thm4, gaussian_density, ql_sample, ql_samples,
                                    silverman_bandwidth, thm1_lhs_binned, thm1_rhs)
from arratia_lab.paths import DriftSpec, TimeGrid

GRID = TimeGrid(1.0, 256)


def test_gaussian_density_examples():
    assert gaussian_density(1, 0.0, 1.0, 0.0) == pytest.approx(0.3989422804)
    assert gaussian_density(2, [0.0, 0.0], 1.0, [0.0, 0.0]) == pytest.approx(1 / (2 * math.pi))
    assert gaussian_density(1, 1.0, 2.0, 0.0) == pytest.approx(gaussian_density(1, 1.0, 2.0, 2.0))
    z = np.array([[0.1, 0.2], [1.0, -1.0]])
    np.testing.assert_allclose(gaussian_density(2, [0, 0], 1.0, z),
                               np.exp(-np.sum(z**2, axis=1) / 2) / (2 * math.pi))
    with pytest.raises(ConfigurationError):
        gaussian_density(1, 0.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        gaussian_density(2, [0.0], 1.0, [0.0, 0.0])


def test_bins_validation():
    assert Bins.of((-1, 2), 0.5).nbins == 6
    for window, delta in [((0, 1), 0.3), ((1, 0), 0.5), ((0, 1), 0.0)]:
        with pytest.raises(ConfigurationError):
            Bins.of(window, delta)


def test_bridge_side_zero_drift_matches_hitting_probability():
    # P(bridges from (0,1) to (0,1) meet) = exp(-1); discrete monitoring can only miss meetings
    hit, miss = thm1_rhs([0.0, 1.0], [0.0, 1.0], [(1,), ()], DriftSpec.zero(), GRID, 20000, seed=1)
    assert hit.mean + miss.mean == pytest.approx(1.0, abs=1e-12)
    assert -0.06 < hit.mean - math.exp(-1) < 4 * hit.stderr  # miss rate is O(sqrt(dt)), about 0.04 here


def test_bridge_side_scheme_forms_are_equivalent():
    drift = DriftSpec.tanh(1.0, 1.0)
    a = thm1_rhs([0.0, 0.5], [0.3, 0.6], (1,), drift, TimeGrid(1.0, 32), 500, seed=2)
    b = thm1_rhs([0.0, 0.5], [0.3, 0.6], "2:1:1", drift, TimeGrid(1.0, 32), 500, seed=2)
    assert a.mean == b.mean
    with pytest.raises(ConfigurationError):
        thm1_rhs([0.0, 0.5], [0.3, 0.6], "3:0:", drift, TimeGrid(1.0, 32), 10)
    with pytest.raises(DomainError):
        thm1_rhs([0.0, 0.5], [0.3], (), drift, TimeGrid(1.0, 32), 10)


def test_wiener_side_partition_and_empty_cube():
    grid = TimeGrid(1.0, 32)
    ests = thm1_lhs_binned([0.0, 0.3], [0.0, 0.3], [(), (1,)], DriftSpec.zero(), grid, 2000, h=50.0)
    assert ests[0].replicas == 2000
    assert ests[0].mean + ests[1].mean == pytest.approx(1.0, abs=1e-12)
    far = thm1_lhs_binned([0.0, 0.3], [30.0, 40.0], (), DriftSpec.zero(), grid, 500, h=0.01)
    assert far.flagged_empty
    with pytest.raises(ConfigurationError):
        thm1_lhs_binned([0.0, 0.3], [0.0, 0.3], (), DriftSpec.zero(), grid, 10, h=0.0)


def test_wiener_side_agrees_with_bridge_side_under_drift():
    grid = TimeGrid(1.0, 64)
    drift = DriftSpec.constant(0.5)
    u, y = [0.0, 0.3], [0.2, 0.8]
    lhs = thm1_lhs_binned(u, y, (1,), drift, grid, 400000, h=0.1, seed=3)
    rhs = thm1_rhs(u, y, (1,), drift, grid, 20000, seed=3)
    assert lhs.replicas > 1000
    assert abs(lhs.mean - rhs.mean) <= 4 * math.hypot(lhs.stderr, rhs.stderr) + 0.03


def test_single_point_density_is_the_gaussian_bin_average():
    est = density_direct([0.0], DriftSpec.zero(), CountTarget(1), (-0.25, 0.25), 0.5, TimeGrid(1.0, 8), 40000)
    expected = (ndtr(0.25) - ndtr(-0.25)) / 0.5
    assert abs(est.values[0] - expected) <= 4 * est.stderr[0]


def test_constant_drift_shifts_single_point_density():
    drift = DriftSpec.constant(0.5)
    est = density_direct([0.0], drift, CountTarget(1), (-1.5, 2.5), 1.0, TimeGrid(1.0, 8), 40000, seed=4)
    edges = np.arange(-1.5, 3.0, 1.0)
    expected = np.diff(ndtr(edges - 0.5))
    assert np.all(np.abs(est.values - expected) <= 4 * est.stderr)


def test_weighted_route_equals_direct_route_at_zero_drift():
    args = ([0.0, 0.4, 0.9], DriftSpec.zero(), [CountTarget(1), CountTarget(2), SchemeTarget(Scheme(3, (1,)), 2)],
            (-2.0, 3.0), 0.5, TimeGrid(1.0, 32), 3000)
    for a, b in zip(density_direct(*args, seed=5), density_girsanov(*args, seed=5)):
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.stderr, b.stderr)


def test_weighted_route_agrees_with_direct_route_under_constant_drift():
    drift = DriftSpec.constant(0.5)
    args = ([0.0, 0.5], drift, CountTarget(1), (-1.0, 2.0), 0.5, TimeGrid(1.0, 64), 20000)
    a = density_direct(*args, seed=6)
    b = density_girsanov(*args, seed=7)
    z = np.abs(a.values - b.values) / np.hypot(a.stderr, b.stderr)
    assert np.all(z <= 4.5)


def test_two_point_mass_and_sector_symmetry():
    u = [0.0, 1.0]
    args = (u, DriftSpec.zero(), CountTarget(2), (-6.0, 7.0), 0.5, TimeGrid(1.0, 128), 20000)
    ordered = density_direct(*args, seed=8)
    full = density_direct(*args, seed=8, ordered=False)
    np.testing.assert_allclose(full.values, ordered.values + ordered.values.T, atol=1e-12)
    assert full.integral() == pytest.approx(2 * ordered.integral())
    # mass of the ordered pair = P(no coalescence); discrete monitoring can only inflate it
    mass = 1 - 2 * (1 - ndtr(1 / math.sqrt(2)))
    assert -4 * 0.0035 < ordered.integral() - mass < 0.06  # about 0.03 at m=128
    assert np.all(np.tril(ordered.values, -1) == 0)


def test_ql_sample_on_fixed_paths():
    grid = TimeGrid(1.0, 2)
    paths = np.array([[[0.0, 0.5, 0.5], [1.0, 0.2, 0.1], [2.0, 2.0, 2.0]]])
    cb = coalesce_paths(grid, paths, [0.0, 1.0, 2.0])
    assert ql_sample(cb, (1,)).values == (0.5,)
    assert ql_sample(cb, (1, 2)).values == (0.5, 2.0)
    assert ql_sample(cb, (3,)).is_cemetery
    vals, valid = ql_samples(cb, (2, 3))
    assert not valid[0] and np.all(np.isnan(vals[0]))
    with pytest.raises(DomainError):
        ql_samples(cb, (4,))
    with pytest.raises(DomainError):
        ql_samples(cb, ())


def test_silverman_bandwidth_scales_with_spread():
    x = np.random.default_rng(0).normal(size=(1000, 1))
    h = silverman_bandwidth(x)
    assert h[0] == pytest.approx(silverman_bandwidth(3 * x)[0] / 3)
    assert 0.3 < h[0] < 0.7


def test_kernel_route_at_zero_drift_is_the_density_sum():
    u = [0.0, 1.0]
    est = density_thm4(u, 1, DriftSpec.zero(), (-1.0, 2.0), 0.5, TimeGrid(1.0, 128), 20000, seed=9)
    per_L = est.meta["L"]
    assert set(per_L) == {"(1,)", "(2,)"}
    assert per_L["(1,)"]["mass"] == 1.0
    assert abs(per_L["(2,)"]["mass"] - (1 - 2 * (1 - ndtr(1 / math.sqrt(2))))) < 0.06
    for L in per_L.values():
        reg, q = np.array(L["regression"]), np.array(L["q"])
        np.testing.assert_allclose(reg[q > 0], 1.0, atol=1e-12)
    total = np.array(per_L["(1,)"]["q"]) + np.array(per_L["(2,)"]["q"])
    np.testing.assert_allclose(est.values, total, atol=1e-12)
    assert np.all(est.stderr > 0)


def test_kernel_route_tracks_direct_density_under_drift():
    drift = DriftSpec.constant(0.5)
    grid = TimeGrid(1.0, 64)
    rep = density_thm4([0.0, 1.0], 1, drift, (-1.0, 2.5), 0.5, grid, 20000, seed=10)
    direct = density_direct([0.0, 1.0], drift, CountTarget(1), (-1.0, 2.5), 0.5, grid, 20000, seed=11)
    # kernel values sit at bin centres, the direct ones are bin averages
    gap = np.abs(rep.values - direct.values) - 4 * np.hypot(rep.stderr, direct.stderr)
    assert np.all(gap <= 0.05)


def test_nested_estimator_matches_direct_density():
    u, drift = [0.0, 0.5], DriftSpec.tanh(1.0, 1.0)
    grid = TimeGrid(1.0, 64)
    nested = density_thm2(u, (1,), 1, drift, (-1.0, 2.0), 1.0, grid, outer=300, inner=32, seed=12)
    direct = density_direct(u, drift, SchemeTarget(Scheme(2, (1,)), 1), (-1.0, 2.0), 1.0, grid, 40000, seed=13)
    z = np.abs(nested.values - direct.values) / np.hypot(nested.stderr, direct.stderr)
    assert np.all(z <= 4.5)
    assert np.all(nested.count == 300)


def test_nested_estimator_validation():
    grid = TimeGrid(1.0, 16)
    with pytest.raises(ConfigurationError):
        density_thm2([0.0, 0.5], (1,), 2, DriftSpec.zero(), (0, 1), 0.5, grid, outer=10)
    with pytest.raises(ConfigurationError):
        density_thm2([0.0, 0.5], (), 1, DriftSpec.zero(), (0, 1), 0.5, grid, outer=1)
    with pytest.raises(ConfigurationError):
        density_thm4([0.0, 0.5], 3, DriftSpec.zero(), (0, 1), 0.5, grid, 10)
