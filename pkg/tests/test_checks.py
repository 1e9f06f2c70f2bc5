import math

import numpy as np
import pytest

from arratia_lab.checks import (bridge_hitting_oracle, bridge_hitting_refinement, coalescence_oracle,
                                coalescence_probability, coalescence_refinement, lemma5_check, lemma6_mismatch,
                                lemma7_check, lemma8_check, normalization_check, thm3_monotonicity,
                                tie_frequency)
from arratia_lab.errors import ConfigurationError, DomainError
from arratia_lab.paths import DriftSpec, TimeGrid


def test_coalescence_oracle_values():
    # 2 * P(N(0,1) > 1/sqrt 2) = erfc(1/2)
    assert coalescence_oracle([0.0, 1.0], 1.0) == pytest.approx(math.erfc(0.5), abs=1e-14)
    assert coalescence_oracle([0.0, 1.0], 1.0) == pytest.approx(0.4795001222, abs=1e-9)
    assert coalescence_oracle([0.0, 1e-9], 1.0) == pytest.approx(1.0, abs=1e-8)
    assert coalescence_oracle([0.0, 50.0], 1.0) < 1e-100


def test_bridge_hitting_oracle_values():
    assert bridge_hitting_oracle([0.0, 1.0], [0.0, 1.0], 1.0) == pytest.approx(math.exp(-1))
    assert bridge_hitting_oracle([0.0, 0.3], [0.2, 0.8], 2.0) == pytest.approx(math.exp(-0.09))
    assert bridge_hitting_oracle([0.0, 0.3], [0.5, -0.5], 1.0) == 1.0


def test_coalescence_probability_small_scale():
    est, oracle = coalescence_probability([0.0, 1.0], TimeGrid(1.0, 256), 20000, seed=1)
    # discrete monitoring misses meetings, so the estimate sits below the oracle
    assert -0.06 < est.mean - oracle < 4 * est.stderr
    with pytest.raises(ConfigurationError):
        coalescence_probability([0.0, 1.0, 2.0], TimeGrid(1.0, 8), 10)


def test_refinement_bias_decreases_with_m():
    ref = coalescence_refinement([0.0, 1.0], 1.0, (64, 256, 1024), 10000, seed=2)
    means = [ref.estimates[m].mean for m in ref.levels]
    assert means[0] <= means[1] <= means[2]  # nested grids: a coarse meeting is a fine meeting
    assert ref.bias[256] > ref.bias[1024] > 0
    assert ref.shrink() == pytest.approx(ref.bias[256] / ref.bias[1024])
    with pytest.raises(ConfigurationError):
        coalescence_refinement([0.0, 1.0], 1.0, (48, 64), 10)


def test_bridge_hitting_refinement_approaches_oracle():
    ref = bridge_hitting_refinement([0.0, 1.0], [0.0, 1.0], 1.0, (256, 1024), 10000, seed=3)
    est = ref.estimates[1024]
    assert abs(est.mean - math.exp(-1)) <= 4 * est.stderr + 2 * ref.bias[1024] + 0.01


def test_tie_frequency_vanishes_under_refinement():
    ref = tie_frequency([0.0, 0.1, 0.2], 1.0, (8, 64), 3000, seed=4)
    assert ref.estimates[64].mean < ref.estimates[8].mean


@pytest.mark.parametrize("n,k", [(2, 1), (2, 2), (3, 2)])
def test_scheme_decomposition_is_exact(n, k):
    u = np.linspace(0.0, 1.0, n)
    rep = lemma7_check(u, k, DriftSpec.tanh(1.0, 1.0), (-2.0, 3.0), 0.5, TimeGrid(1.0, 32), 2000, seed=5)
    assert rep.passed and rep.rows[0].estimate <= 1e-12
    with pytest.raises(ConfigurationError):
        lemma7_check(u, n + 1, DriftSpec.zero(), (-2.0, 3.0), 0.5, TimeGrid(1.0, 8), 10)


def test_tower_property_small_scale():
    rep = lemma8_check([0.0, 0.5], 1, DriftSpec.constant(0.5), TimeGrid(1.0, 64), 20000, h=0.25, seed=6)
    assert rep.passed and len(rep.rows) > 2
    with pytest.raises(ConfigurationError):
        lemma8_check([0.0, 0.5], 2, DriftSpec.zero(), TimeGrid(1.0, 8), 10)


def test_normalization_rows_cover_all_cases():
    drifts = [DriftSpec.constant(0.5), DriftSpec.sine(0.5)]
    rep = normalization_check([0.0, 0.5], drifts, TimeGrid(1.0, 64), 10000, seed=7)
    assert len(rep.rows) == 4 and rep.passed
    assert set(rep.details["estimates"]) == {(d.label, n) for d in drifts for n in (1, 2)}


def test_monotonicity_in_number_of_points():
    configs = [[0.0, 1.0], [0.0, 0.5, 1.0]]
    rep = thm3_monotonicity(configs, 1, DriftSpec.tanh(1.0, 1.0), (-1.0, 2.0), 0.5, TimeGrid(1.0, 64),
                            10000, seed=8)
    assert rep.passed and len(rep.rows) == 6
    with pytest.raises(DomainError):
        thm3_monotonicity([[0.0, 0.5, 1.0], [0.0, 1.0]], 1, DriftSpec.zero(), (0, 1), 0.5,
                          TimeGrid(1.0, 8), 10)
    with pytest.raises(DomainError):
        thm3_monotonicity([[0.0, 2.0]], 1, DriftSpec.zero(), (0, 1), 0.5, TimeGrid(1.0, 8), 10)


def test_moment_bound_small_scale():
    rep = lemma5_check([0.0, 0.5], [0.2, 0.9], (1,), [1, 2], DriftSpec.tanh(1.0, 1.0), TimeGrid(1.0, 64),
                       5000, seed=9)
    assert rep.passed and len(rep.rows) == 2
    assert rep.details["constants"][1.0].C1 >= 1.0


def test_scheme_mismatch_shrinks_with_delta():
    rep = lemma6_mismatch([0.0, 0.5], [0.1, 0.6], [0.1, 0.01, 0.001], TimeGrid(1.0, 256), 5000, seed=10)
    freq = [f.mean for f in rep.details["frequency"]]
    assert freq[0] >= freq[-1]
    assert rep.passed
    with pytest.raises(ConfigurationError):
        lemma6_mismatch([0.0, 0.5], [0.1, 0.6], [0.1], TimeGrid(1.0, 8), 10, coordinate=3)
