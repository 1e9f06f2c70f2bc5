import math

import numpy as np
import pytest

from arratia_lab.coalesce import coalesce_paths, cutoffs_from_replay, scheme_replay
from arratia_lab.errors import ConfigurationError, DomainError
from arratia_lab.girsanov import (bridge_logweight, flow_logweight, ito_sum_left, lemma5_constants,
                                  pull_integral)
from arratia_lab.paths import DriftSpec, TimeGrid, pin, sample_bridge, sample_drifted_flow
from arratia_lab.rng import StreamBatch

DRIFTS = [DriftSpec.constant(0.5), DriftSpec.tanh(1.0, 1.0), DriftSpec.sine(0.5)]


def test_ito_sum_left_examples():
    g = np.array([0.3, -1.0, 2.5, 0.7])
    assert ito_sum_left(np.ones(3), np.diff(g)) == pytest.approx(g[-1] - g[0])
    assert ito_sum_left(np.zeros(3), np.diff(g)) == 0.0
    t = np.array([0.0, 0.5, 1.0])
    assert ito_sum_left(t[:-1], np.diff(t)) == pytest.approx(0.25)
    with pytest.raises(ConfigurationError):
        ito_sum_left(np.ones(3), np.ones(2))


def test_flow_weight_zero_drift_is_exactly_zero():
    cb = sample_drifted_flow(TimeGrid(1.0, 32), [0.0, 0.3, 0.6], DriftSpec.zero(), StreamBatch.range(0, 0, 20))
    lw = flow_logweight(cb, DriftSpec.zero())
    assert np.all(lw.ito_term == 0) and np.all(lw.quad_term == 0) and np.all(lw.total == 0)


def test_flow_weight_constant_drift_closed_form():
    grid = TimeGrid(1.0, 8)
    path = np.concatenate([[0.0], np.cumsum([0.4, -0.2, 0.3, 0.1, -0.5, 0.6, 0.2, 0.1])])
    cb = coalesce_paths(grid, path[None, None, :], [0.0])
    assert path[-1] == pytest.approx(1.0)
    assert flow_logweight(cb, DriftSpec.constant(0.5)).total[0] == pytest.approx(0.375, abs=1e-14)


def test_flow_weight_uses_free_paths_until_absorption():
    grid = TimeGrid(1.0, 64)
    drift = DriftSpec.tanh(1.0, 1.0)
    cb = sample_drifted_flow(grid, [0.0, 0.2], DriftSpec.zero(), StreamBatch.range(3, 0, 50))
    lw = flow_logweight(cb, drift)
    for r in range(cb.replicas):
        ito = quad = 0.0
        for k in range(2):
            x = cb.free[r, k, :cb.tau[r, k] + 1]
            a = drift(x[:-1])
            ito += ito_sum_left(a, np.diff(x))
            quad += float(np.sum(a * a)) * grid.dt
        assert lw.ito_term[r] == pytest.approx(ito, abs=1e-12)
        assert lw.quad_term[r] == pytest.approx(quad, abs=1e-12)


def test_flow_weight_bounds():
    grid = TimeGrid(1.0, 64)
    drift = DriftSpec.sine(0.7, 2.0)
    cb = sample_drifted_flow(grid, [0.0, 0.1, 0.2], DriftSpec.zero(), StreamBatch.range(4, 0, 200))
    lw = flow_logweight(cb, drift)
    variation = np.abs(np.diff(cb.free, axis=2)).sum(axis=(1, 2))
    assert np.all(np.abs(lw.ito_term) <= drift.sup_norm * variation + 1e-12)
    assert np.all((lw.quad_term >= 0) & (lw.quad_term <= 3 * grid.T * drift.sup_norm**2 + 1e-12))


def test_leading_coordinates_weight_is_the_submotion_weight():
    grid = TimeGrid(1.0, 32)
    drift = DriftSpec.tanh(1.0, 1.0)
    batch = StreamBatch.range(5, 0, 30)
    big = sample_drifted_flow(grid, [0.0, 0.4, 0.8], DriftSpec.zero(), batch)
    sub = coalesce_paths(grid, big.free[:, :2].copy(), [0.0, 0.4])
    np.testing.assert_array_equal(sub.values, big.values[:, :2])
    np.testing.assert_allclose(flow_logweight(big, drift, coordinates=2).total, flow_logweight(sub, drift).total,
                               atol=1e-13)


@pytest.mark.parametrize("drift", DRIFTS)
def test_flow_weight_normalization(drift):
    grid = TimeGrid(1.0, 256)
    cb = sample_drifted_flow(grid, [0.0], DriftSpec.zero(), StreamBatch.range(6, 0, 20000))
    w = np.exp(flow_logweight(cb, drift).total)
    assert abs(w.mean() - 1) <= 3 * w.std(ddof=1) / math.sqrt(w.size)


def test_bridge_weight_zero_drift_is_exactly_zero():
    grid = TimeGrid(1.0, 16)
    pb = pin(sample_bridge(grid, 2, StreamBatch.range(0, 0, 5)), [0.0, 1.0], [0.5, 0.7])
    lw = bridge_logweight(pb, np.full((5, 2), 16), DriftSpec.zero())
    assert np.all(lw.total == 0) and np.all(lw.ito_term == 0)


@pytest.mark.parametrize("sign", [1, -1])
def test_bridge_weight_constant_drift_closed_form(sign):
    grid = TimeGrid(1.0, 64)
    pb = pin(sample_bridge(grid, 1, StreamBatch.range(1, 0, 10)), [0.0], [1.0])
    lw = bridge_logweight(pb, np.full((10, 1), 64), DriftSpec.constant(0.5), sign=sign)
    np.testing.assert_allclose(lw.total, 0.375, atol=1e-12)


def test_literal_mode_is_cancelled_mode_without_the_last_step():
    grid = TimeGrid(1.0, 128)
    u, y = [0.0, 0.3], [0.2, 0.8]
    pb = pin(sample_bridge(grid, 2, StreamBatch.range(2, 0, 200)), u, y)
    rng = np.random.default_rng(0)
    cut = rng.integers(0, 129, size=(200, 2))
    cut[:50] = 128
    drift = DriftSpec.tanh(1.0, 1.0)
    literal = bridge_logweight(pb, cut, drift, mode="literal")
    cancelled = bridge_logweight(pb, np.minimum(cut, 127), drift)
    np.testing.assert_allclose(literal.total, cancelled.total, atol=1e-10)


def test_dropped_last_step_shrinks_like_root_dt():
    drift = DriftSpec.tanh(1.0, 1.0)
    gaps = []
    for m in (128, 2048):
        grid = TimeGrid(1.0, m)
        pb = pin(sample_bridge(grid, 1, StreamBatch.range(2, 0, 4000)), [0.0], [0.5])
        cut = np.full((4000, 1), m)
        diff = bridge_logweight(pb, cut, drift).total - bridge_logweight(pb, cut, drift, mode="literal").total
        gaps.append(np.abs(diff).mean())
    assert 2.5 < gaps[0] / gaps[1] < 6.5  # sqrt(16) = 4; a dt-order gap would give 16


def test_bridge_weight_cutoff_validation():
    grid = TimeGrid(1.0, 8)
    pb = pin(sample_bridge(grid, 1, StreamBatch.range(0, 0, 2)), [0.0], [0.0])
    with pytest.raises(ConfigurationError):
        bridge_logweight(pb, np.full((2, 1), 0.5), DriftSpec.constant(1.0))
    with pytest.raises(ConfigurationError):
        bridge_logweight(pb, np.full((2, 1), 9), DriftSpec.constant(1.0))
    with pytest.raises(ConfigurationError):
        bridge_logweight(pb, np.full((2, 1), 8), DriftSpec.constant(1.0), mode="exact")
    with pytest.raises(ConfigurationError):
        bridge_logweight(pb, np.full((2, 1), 8), DriftSpec.constant(1.0), sign=0)


def test_bridge_cutoffs_from_replay_stop_absorbed_coordinates():
    grid = TimeGrid(1.0, 32)
    drift = DriftSpec.constant(0.5)
    pb = pin(sample_bridge(grid, 2, StreamBatch.range(3, 0, 4)), [0.0, 1.0], [1.0, 2.0])
    cut = cutoffs_from_replay(scheme_replay(2, (1,)), np.full((4, 1), 0), 32)
    # second coordinate cut at node 0 contributes nothing; first runs to T
    np.testing.assert_allclose(bridge_logweight(pb, cut, drift).total, 0.375, atol=1e-12)


def test_lemma5_constants():
    grid = TimeGrid(1.0, 64)
    c = lemma5_constants([0.0, 1.0], 0.0, 2, DriftSpec.constant(0.5), grid, 100, 0)
    assert (c.C1, c.C2) == (1.0, 0.0)
    c = lemma5_constants([0.0, 1.0], 1.0, 2, DriftSpec.zero(), grid, 100, 0)
    assert (c.C1, c.C2) == (1.0, 0.0)
    c = lemma5_constants([0.0, 1.0], 1.0, 2, DriftSpec.constant(0.5), grid, 500, 0)
    assert c.C2 == pytest.approx(math.sqrt(2) * 0.5)
    assert c.C1 > 1.0 and c.bound([0.0, 0.0]) == c.C1
    with pytest.raises(DomainError):
        lemma5_constants([0.0], -1.0, 1, DriftSpec.constant(0.5), grid, 10, 0)


def test_pull_integral_skips_terminal_node():
    grid = TimeGrid(1.0, 4)
    eta = np.array([0.0, 1.0, -1.0, 2.0, 100.0])
    expected = (1.0 / 0.75 + 1.0 / 0.5 + 2.0 / 0.25) * 0.25
    assert pull_integral(eta, grid) == pytest.approx(expected)
