import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arratia_lab.coalesce import (IndexSet, Scheme, coalesce_bundle, coalesce_paths, cutoffs_from_pairwise,
                                  cutoffs_from_replay, enumerate_schemes, extract_scheme, index_slice,
                                  index_slice2, pairwise_meeting_times, scheme_codes, scheme_count,
                                  scheme_from_code, scheme_replay, total_schemes)
from arratia_lab.errors import ConfigurationError, DomainError
from arratia_lab.paths import DriftSpec, TimeGrid, sample_drifted_flow, sample_wiener
from arratia_lab.rng import StreamBatch

GRID = TimeGrid(1.0, 10)
# node values on t = 0, 0.1, ..., 1
LOW = [0.0] * 11
MID = [1.0, 0.85, 0.7, 0.55, 0.4, 0.25, 0.1, -0.05, -0.2, -0.35, -0.5]  # crosses LOW in (0.6, 0.7]
TOP = [2.0, 1.6, 1.2, 0.5, 0.3, 0.2, 0.15, 0.1, 0.05, 0.0, -0.1]  # crosses MID in (0.2, 0.3]


def fixture(*paths):
    free = np.array([paths], dtype=float)
    return coalesce_paths(TimeGrid(1.0, free.shape[2] - 1), free, free[0, :, 0])


def test_three_path_fixture_events():
    cb = fixture(LOW, MID, TOP)
    assert cb.n_events[0] == 2
    assert list(cb.event_node[0]) == [3, 7]
    assert list(cb.tau[0]) == [10, 7, 3]
    np.testing.assert_allclose(cb.tau_times[0], [1.0, 0.7, 0.3])
    assert extract_scheme(cb) == Scheme(3, (2, 1))
    assert 0.2 < cb.event_cross_time[0, 0] <= 0.3 and 0.6 < cb.event_cross_time[0, 1] <= 0.7
    # merged block follows the free path of its minimum
    np.testing.assert_array_equal(cb.values[0, 2, 3:7], np.array(MID)[3:7])
    np.testing.assert_array_equal(cb.values[0, 1, 7:], np.array(LOW)[7:])
    np.testing.assert_array_equal(cb.values[0, 2, :3], np.array(TOP)[:3])


def test_three_path_fixture_pairwise_times():
    theta = pairwise_meeting_times(fixture(LOW, MID, TOP))[0]
    assert theta[1, 2] == 3 and theta[0, 1] == 7
    assert all(theta[k, k] == 10 for k in range(3))
    np.testing.assert_array_equal(theta, theta.T)


def test_fixture_with_only_lower_pair_merging():
    cb = fixture(LOW, MID, [5.0] * 11)
    assert extract_scheme(cb) == Scheme(3, (1,))
    assert list(cb.tau[0]) == [10, 7, 10]


def test_never_crossing_paths():
    paths = [LOW, [1.0] * 11, [2.0 + 0.1 * i for i in range(11)]]
    cb = fixture(*paths)
    assert cb.n_events[0] == 0 and extract_scheme(cb) == Scheme(3, ())
    assert np.all(cb.tau == 10)
    np.testing.assert_array_equal(cb.values[0], np.array(paths))
    theta = pairwise_meeting_times(cb)[0]
    assert np.all(theta == 10)


def test_wiener_bundle_shifted_by_u():
    w = sample_wiener(TimeGrid(1.0, 8), 2, StreamBatch.range(0, 0, 3))
    cb = coalesce_bundle(w, [5.0, 10.0])
    np.testing.assert_allclose(cb.values[:, :, 0], [[5.0, 10.0]] * 3)
    with pytest.raises(DomainError):
        coalesce_bundle(w)
    with pytest.raises(DomainError):
        coalesce_bundle(w, [1.0, 0.0])
    with pytest.raises(DomainError):
        coalesce_bundle(w, [0.0, 1.0, 2.0])


def test_tie_goes_to_lower_block():
    # both adjacent pairs fail order at node 1
    cb = fixture([0.0, 0.0, 0.0], [1.0, -1.0, -1.0], [2.0, -2.0, -2.0])
    assert list(cb.event_node[0]) == [1, 1]
    assert extract_scheme(cb) == Scheme(3, (1, 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 5), st.sampled_from([8, 32]))
def test_flow_invariants(seed, n, m):
    u = np.linspace(0.0, 0.6, n)
    cb = sample_drifted_flow(TimeGrid(1.0, m), u, DriftSpec.zero(), StreamBatch.range(seed, 0, 40))
    assert np.all(np.diff(cb.values, axis=1) >= 0)
    codes = scheme_codes(cb)
    for r in range(cb.replicas):
        s = extract_scheme(cb, r)
        assert s.k == n - len(set(cb.values[r, :, -1]))
        assert codes[r] == s.code
        rep = scheme_replay(n, s)
        history = [(int(cb.event_lower[r, p]) + 1, int(cb.event_upper[r, p]) + 1) for p in range(s.k)]
        assert history == [e.pair for e in rep.events]
        assert [tuple(b) for b in cb.blocks_at(m, r)] == list(rep.partition)
        np.testing.assert_array_equal(cutoffs_from_replay(rep, cb.event_node[r:r + 1], m)[0], cb.tau[r])
    surv, counts = cb.survivors()
    for r in range(cb.replicas):
        vals = surv[r, :counts[r]]
        assert np.all(np.diff(vals) > 0)
        assert np.all(np.isnan(surv[r, counts[r]:]))


def test_pairwise_cutoffs_agree_with_replay_when_schemes_match():
    cb = sample_drifted_flow(TimeGrid(1.0, 64), [0.0, 0.2, 0.4], DriftSpec.zero(),
                             StreamBatch.range(1, 0, 300))
    theta = pairwise_meeting_times(cb)
    for r in range(cb.replicas):
        rep = scheme_replay(3, extract_scheme(cb, r))
        # each event's meeting pair first touches exactly at the merge node
        pair_cut = cutoffs_from_pairwise(rep, theta[r:r + 1], 64)[0]
        np.testing.assert_array_equal(pair_cut, cb.tau[r])


@pytest.mark.parametrize("n,expected", [(1, {0: 1}), (3, {0: 1, 1: 2, 2: 2}), (4, {0: 1, 1: 3, 2: 6, 3: 6})])
def test_enumeration_sizes(n, expected):
    assert {k: len(v) for k, v in enumerate_schemes(n).items()} == expected
    assert total_schemes(n) == sum(expected.values())


def test_enumeration_guard():
    for n in (0, 9):
        with pytest.raises(ConfigurationError):
            enumerate_schemes(n)


@pytest.mark.parametrize("n", range(1, 7))
def test_counts_and_contiguity_exhaustive(n):
    for k, schemes in enumerate_schemes(n).items():
        assert len(schemes) == scheme_count(n, k)
        for s in schemes:
            rep = scheme_replay(n, s)
            assert len(rep.survivors) == n - k and rep.survivors[0] == 1
            for stage in rep.stages:
                assert all(list(b) == list(range(b[0], b[-1] + 1)) for b in stage)
            assert scheme_from_code(n, s.code) == s


def test_replay_examples():
    rep = scheme_replay(3, Scheme(3, (1,)))
    assert rep.partition == ((1, 2), (3,)) and rep.survivors == (1, 3)
    rep = scheme_replay(3, Scheme(3, (2, 1)))
    assert [e.pair for e in rep.events] == [(2, 3), (1, 2)]
    assert rep.survivors == (1,)
    assert rep.cutoff_event == (None, 1, 0)
    rep = scheme_replay(2, Scheme(2, ()))
    assert rep.partition == ((1,), (2,)) and rep.survivors == (1, 2) and rep.cutoff_event == (None, None)


def test_scheme_text_form():
    assert str(Scheme(3, (2, 1))) == "3:2:2,1"
    assert str(Scheme(4, ())) == "4:0:"
    assert Scheme.parse("3:2:2,1") == Scheme(3, (2, 1))
    assert Scheme.parse("4:0:") == Scheme(4, ())
    for bad in ["3:1:", "3:2:3,1", "x", "3:1:0"]:
        with pytest.raises(ConfigurationError):
            Scheme.parse(bad)


def test_index_slices():
    z = (5, 7, 9, 11)
    assert index_slice(z, (2, 4)).tolist() == [7, 11]
    assert index_slice(z, (2, 4), keep=False).tolist() == [5, 9]
    assert index_slice2(z, (1, 3, 4), (2,)).tolist() == [9]
    assert index_slice2(z, (1, 3, 4), (2,), keep=False).tolist() == [5, 11]
    with pytest.raises(DomainError):
        index_slice(z, (5,))
    with pytest.raises(DomainError):
        IndexSet((2, 1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-9, 9), min_size=1, max_size=7), st.data())
def test_slice_keep_drop_partition(z, data):
    dim = len(z)
    K = sorted(data.draw(st.sets(st.integers(1, dim))))
    kept = index_slice(z, K).tolist()
    dropped = index_slice(z, K, keep=False).tolist()
    assert len(kept) + len(dropped) == dim
    assert sorted(kept + dropped) == sorted(z)
    assert kept == [z[i - 1] for i in K]


def test_codes_are_dense():
    for n in range(1, 6):
        codes = sorted(s.code for group in enumerate_schemes(n).values() for s in group)
        assert codes == list(range(total_schemes(n)))
    assert list(itertools.islice((s.code for s in enumerate_schemes(3)[0]), 1)) == [0]
