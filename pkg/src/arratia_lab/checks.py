"""Statistical checks: closed-form oracles, grid refinement, and the consistency properties
(scheme decomposition, tower property, monotonicity in the number of points,
moment bound, continuity of the scheme in the endpoint)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .coalesce import (coalesce_bundle, cutoffs_from_pairwise, pairwise_meeting_times,
                       scheme_codes, scheme_replay, enumerate_schemes)
from .errors import ConfigurationError, DomainError
from .estimators import (CountTarget, SchemeTarget, _as_schemes, _as_u, density_direct,
                         density_girsanov)
from .girsanov import bridge_logweight, flow_logweight, lemma5_constants
from .parallel import chunk_size, map_chunks
from .paths import DriftSpec, TimeGrid, pin, sample_bridge, sample_drifted_flow, sample_wiener
from .rng import StreamBatch, tagged_streams
from .stats import CheckReport, MCEstimate, ReportRow, bound_row, compare, pool

TAG_CONSTANTS = 4


def coalescence_oracle(u, T: float) -> float:
    """Probability that two Wiener paths started at ``u[0] < u[1]`` meet before ``T``."""
    u1, u2 = (float(x) for x in u)
    return float(2.0 * (1.0 - ndtr((u2 - u1) / math.sqrt(2.0 * T))))


def bridge_hitting_oracle(u, y, T: float) -> float:
    """Probability that two independent bridges from ``u`` to ``y`` (both ordered) meet."""
    d0 = float(u[1]) - float(u[0])
    d1 = float(y[1]) - float(y[0])
    if d0 <= 0 or d1 <= 0:
        return 1.0
    return math.exp(-d0 * d1 / T)


def coalescence_probability(u, grid: TimeGrid, replicas: int, seed: int = 0, *,
                            workers: int | None = None) -> tuple[MCEstimate, float]:
    """Fraction of driftless two-point motions that have coalesced by ``T``, and the oracle."""
    u = _as_u(u)
    if u.size != 2:
        raise ConfigurationError(f"coalescence probability needs exactly 2 points, got {u.size}")
    est = coalescence_refinement(u, grid.T, (grid.m,), replicas, seed, workers=workers).estimates[grid.m]
    return est, coalescence_oracle(u, grid.T)


@dataclass(frozen=True)
class Refinement:
    """Estimates on nested grids from the same fine paths.

    ``bias[m]`` is the Richardson-type estimate ``|P_m - P_{m/r}| / (sqrt(r) - 1)``
    of the grid bias at level ``m`` under an ``m^{-1/2}`` error law.
    """

    levels: tuple[int, ...]
    estimates: dict
    differences: dict
    bias: dict

    @property
    def finest(self) -> int:
        return self.levels[-1]

    def shrink(self) -> float:
        """Ratio of the last two bias estimates (coarser over finer)."""
        a, b = self.bias[self.levels[-2]], self.bias[self.levels[-1]]
        return math.inf if b == 0 else a / b


def _refine(levels, replicas, n, indicator_at, workers):
    levels = tuple(sorted(int(m) for m in levels))
    finest = levels[-1]
    for m in levels:
        if finest % m:
            raise ConfigurationError(f"grid sizes {levels} are not nested")

    def work(a, b):
        ind = indicator_at(a, b, finest, levels)
        out = {m: MCEstimate.from_values(ind[m]) for m in levels}
        for lo, hi in zip(levels, levels[1:]):
            out[(lo, hi)] = MCEstimate.from_values(ind[hi] - ind[lo])
        return out

    parts = map_chunks(work, replicas, chunk_size(n, finest), workers)
    est = {m: pool(p[m] for p in parts) for m in levels}
    diff = {(lo, hi): pool(p[(lo, hi)] for p in parts) for lo, hi in zip(levels, levels[1:])}
    bias = {hi: abs(diff[(lo, hi)].mean) / (math.sqrt(hi / lo) - 1.0) for lo, hi in zip(levels, levels[1:])}
    return Refinement(levels, est, diff, bias)


def coalescence_refinement(u, T: float, levels, replicas: int, seed: int = 0, *,
                           workers: int | None = None) -> Refinement:
    """Coalescence frequency of the two-point motion on nested grids (coarse grids subsample the fine paths)."""
    u = _as_u(u)

    def indicator_at(a, b, finest, lv):
        w = sample_wiener(TimeGrid(T, finest), u.size, StreamBatch.range(seed, a, b))
        return {m: (coalesce_bundle(w.coarsen(finest // m), u).n_events > 0).astype(float) for m in lv}

    return _refine(levels, replicas, u.size, indicator_at, workers)


def bridge_hitting_refinement(u, y, T: float, levels, replicas: int, seed: int = 0, *,
                              workers: int | None = None) -> Refinement:
    """Meeting frequency of two pinned bridges from ``u`` to ``y`` on nested grids."""
    u = _as_u(u)
    y = np.asarray(y, dtype=float)

    def indicator_at(a, b, finest, lv):
        bridge = sample_bridge(TimeGrid(T, finest), u.size, StreamBatch.range(seed, a, b))
        return {m: (coalesce_bundle(pin(bridge.coarsen(finest // m), u, y)).n_events > 0).astype(float)
                for m in lv}

    return _refine(levels, replicas, u.size, indicator_at, workers)


def tie_frequency(u, T: float, levels, replicas: int, seed: int = 0, *,
                  workers: int | None = None) -> Refinement:
    """Fraction of driftless flows with two merges detected at the same grid node."""
    u = _as_u(u)

    def indicator_at(a, b, finest, lv):
        w = sample_wiener(TimeGrid(T, finest), u.size, StreamBatch.range(seed, a, b))
        out = {}
        for m in lv:
            cb = coalesce_bundle(w.coarsen(finest // m), u)
            same = np.zeros(cb.replicas, dtype=bool)
            for p in range(cb.n - 2):
                both = cb.n_events > p + 1
                same |= both & (cb.event_node[:, p] == cb.event_node[:, p + 1])
            out[m] = same.astype(float)
        return out

    return _refine(levels, replicas, u.size, indicator_at, workers)


# --- scheme decomposition -----------------------------------------------------


def lemma7_check(u, k: int, drift: DriftSpec, window, delta: float, grid: TimeGrid, replicas: int,
                 seed: int = 0, *, atol: float = 1e-12, workers: int | None = None) -> CheckReport:
    """Per-bin identity: (n,k)-density equals the sum of its scheme-restricted parts, on shared replicas."""
    u = _as_u(u)
    n = u.size
    if not 1 <= k <= n:
        raise ConfigurationError(f"k={k} must lie in 1..{n}")
    schemes = [s for length in range(n - k + 1) for s in enumerate_schemes(n)[length]]
    targets = [CountTarget(k)] + [SchemeTarget(s, k) for s in schemes]
    est = density_girsanov(u, drift, targets, window, delta, grid, replicas, seed, workers=workers)
    total = est[0].values
    parts = np.zeros_like(total)
    for e in est[1:]:
        parts = parts + e.values
    gap = float(np.max(np.abs(parts - total))) if total.size else 0.0
    row = ReportRow("lemma7", f"max |sum_s p(s,{k}) - p({k})|, n={n}", gap, 0.0, 0.0, 0.0,
                    "closed-form", f"<= {atol:g}", gap <= atol)
    return CheckReport("lemma7", [row], {"total": est[0], "by_scheme": dict(zip(map(str, schemes), est[1:]))})


# --- tower property -----------------------------------------------------------


def lemma8_check(u_big, n: int, drift: DriftSpec, grid: TimeGrid, replicas: int, h: float | None = None,
                 seed: int = 0, *, window=(-2.0, 2.0), min_count: int = 50, kappa: float = 4.0,
                 workers: int | None = None) -> CheckReport:
    """Normalization of both Girsanov weights and the binned tower property.

    The ``N``-point motion from ``u_big`` is simulated once; its first ``n``
    coordinates are the ``n``-point motion from ``u_big[:n]``.  Replicas are
    binned by the first ``n`` terminal values (cubes of side ``2h``) and the
    bin means of the two weights are compared.
    """
    u_big = _as_u(u_big)
    N = u_big.size
    if not 1 <= n < N:
        raise ConfigurationError(f"need 1 <= n < {N}, got n={n}")
    h = 0.05 * math.sqrt(grid.T) if h is None else float(h)
    if not h > 0:
        raise ConfigurationError("bin halfwidth must be positive")
    lo, hi = (float(x) for x in window)
    nb = max(1, int(math.floor((hi - lo) / (2 * h))))

    def work(a, b):
        cb = sample_drifted_flow(grid, u_big, DriftSpec.zero(), StreamBatch.range(seed, a, b))
        big = np.exp(flow_logweight(cb, drift).total)
        small = np.exp(flow_logweight(cb, drift, coordinates=n).total)
        return big, small, cb.values[:, :n, -1].copy()

    parts = map_chunks(work, replicas, chunk_size(N, grid.m), workers)
    big = np.concatenate([p[0] for p in parts])
    small = np.concatenate([p[1] for p in parts])
    ends = np.concatenate([p[2] for p in parts])

    rows = [
        compare(MCEstimate.from_values(big), (1.0, 0.0), 3.0, experiment="lemma8",
                quantity=f"E exp(weight), {N} points", provenance="closed-form"),
        compare(MCEstimate.from_values(small), (1.0, 0.0), 3.0, experiment="lemma8",
                quantity=f"E exp(weight), {n} points", provenance="closed-form"),
    ]
    idx = np.floor((ends - lo) / (2 * h)).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < nb), axis=1)
    flat = np.ravel_multi_index(tuple(idx[inside].T), (nb,) * n)
    b_vals, s_vals = big[inside], small[inside]
    order = np.argsort(flat, kind="stable")
    keys, starts = np.unique(flat[order], return_index=True)
    stops = np.append(starts[1:], order.size)
    for key, a, b in zip(keys, starts, stops):
        if b - a < min_count:
            continue
        sel = order[a:b]
        cell = np.unravel_index(key, (nb,) * n)
        label = ",".join(f"{lo + 2 * h * c:.4g}" for c in cell)
        rows.append(compare(MCEstimate.from_values(b_vals[sel]), MCEstimate.from_values(s_vals[sel]), kappa,
                            experiment="lemma8", quantity=f"tower bin [{label})"))
    return CheckReport("lemma8", rows, {"bins": nb, "halfwidth": h})


def normalization_check(u, drifts, grid: TimeGrid, replicas: int, seed: int = 0, *, kappa: float = 3.0,
                        workers: int | None = None) -> CheckReport:
    """``E exp(flow weight) = 1`` for every drift and every leading sub-motion of ``u``.

    One zero-drift simulation from all of ``u`` serves every case: the first
    ``n`` coordinates of the coalescing motion are the ``n``-point motion.
    """
    u = _as_u(u)
    drifts = list(drifts)
    sizes = range(1, u.size + 1)

    def work(a, b):
        cb = sample_drifted_flow(grid, u, DriftSpec.zero(), StreamBatch.range(seed, a, b))
        return [[MCEstimate.from_values(np.exp(flow_logweight(cb, d, coordinates=n).total)) for n in sizes]
                for d in drifts]

    parts = map_chunks(work, replicas, chunk_size(u.size, grid.m), workers)
    rows, table = [], {}
    for q, d in enumerate(drifts):
        for c, n in enumerate(sizes):
            est = pool(p[q][c] for p in parts)
            table[(d.label, n)] = est
            rows.append(compare(est, (1.0, 0.0), kappa, experiment="lemma8", provenance="closed-form",
                                quantity=f"E exp(weight), {d.label}, n={n}"))
    return CheckReport("normalization", rows, {"estimates": table})


# --- monotonicity in the number of starting points ---------------------------------


def _check_nested(configs):
    prev = None
    for u in configs:
        if abs(u[0]) > 1e-12 or abs(u[-1] - 1.0) > 1e-12:
            raise DomainError(f"configuration {u.tolist()} must start at 0 and end at 1")
        if prev is not None and not np.all(np.isclose(prev[:, None], u[None, :], atol=1e-12).any(axis=1)):
            raise DomainError(f"configuration {prev.tolist()} is not contained in {u.tolist()}")
        prev = u


def thm3_monotonicity(configs, k: int, drift: DriftSpec, window, delta: float, grid: TimeGrid,
                      replicas: int, seed: int = 0, *, kappa: float = 3.0,
                      workers: int | None = None) -> CheckReport:
    """Per-bin nondecrease of the (n,k)-density along nested configurations."""
    configs = [_as_u(u) for u in configs]
    _check_nested(configs)
    dens = [density_direct(u, drift, CountTarget(k), window, delta, grid, replicas, seed, workers=workers)
            for u in configs]
    rows = []
    for (ua, da), (ub, db) in zip(zip(configs, dens), zip(configs[1:], dens[1:])):
        for idx in da.bin_indices():
            diff = float(db.values[idx] - da.values[idx])
            se = math.hypot(da.stderr[idx], db.stderr[idx])
            lo = ",".join(f"{da.edges[i]:.4g}" for i in idx)
            rows.append(ReportRow("thm3", f"p(n={ub.size}) - p(n={ua.size}) at [{lo})", diff, se, 0.0, 0.0,
                                  "none", f">= -{kappa:g}*se", diff >= -kappa * se))
    return CheckReport("thm3", rows, {"densities": dict(zip((u.size for u in configs), dens))})


# --- moment bound -----------------------------------------------------------------


def lemma5_check(u, y, s, p_values, drift: DriftSpec, grid: TimeGrid, replicas: int, seed: int = 0, *,
                 margin: float = 0.2, constant_replicas: int | None = None,
                 workers: int | None = None) -> CheckReport:
    """Empirical ``E exp(p * log bridge exponential) <= C1 exp(C2 |y|) (1 + margin)``.

    Truncation uses the free pairwise meeting times of each event's meeting
    pair, so the exponential is defined on every replica, not only on
    ``{S = s}``.
    """
    u = _as_u(u)
    n = u.size
    y = np.asarray(y, dtype=float).reshape(-1)
    (s,), _ = _as_schemes(n, s)
    replay = scheme_replay(n, s)
    p_values = [float(p) for p in p_values]

    def work(a, b):
        pb = pin(sample_bridge(grid, n, StreamBatch.range(seed, a, b)), u, y)
        cut = cutoffs_from_pairwise(replay, pairwise_meeting_times(pb), grid.m)
        total = bridge_logweight(pb, cut, drift).total
        return [MCEstimate.from_values(np.exp(p * total)) for p in p_values]

    parts = map_chunks(work, replicas, chunk_size(n, grid.m), workers)
    rows = []
    consts = {}
    offset = int(tagged_streams(TAG_CONSTANTS, 0, 1)[0])
    for q, p in enumerate(p_values):
        est = pool(part[q] for part in parts)
        c = lemma5_constants(u, p, n, drift, grid, constant_replicas or replicas, seed, stream_offset=offset)
        bound = c.bound(y) * (1.0 + margin)
        consts[p] = c
        rows.append(bound_row(est.mean, est.stderr, bound, experiment="lemma5",
                              quantity=f"E e^p, p={p:g}, y={y.tolist()}, s={s}",
                              provenance="cross-estimator"))
    return CheckReport("lemma5", rows, {"constants": consts})


# --- continuity of the scheme in the endpoint --------------------------------------


def lemma6_mismatch(u, y, deltas, grid: TimeGrid, replicas: int, seed: int = 0, *, coordinate: int = 1,
                    slack: float = 2.0, limit: float = 0.01, workers: int | None = None) -> CheckReport:
    """Frequency of ``S(eta^{u,y}) != S(eta^{u,y+delta e})`` on common bridges, for shrinking ``delta``."""
    u = _as_u(u)
    n = u.size
    y = np.asarray(y, dtype=float).reshape(-1)
    if not 1 <= coordinate <= n:
        raise ConfigurationError(f"coordinate must lie in 1..{n}")
    deltas = sorted((float(d) for d in deltas), reverse=True)

    def work(a, b):
        bridge = sample_bridge(grid, n, StreamBatch.range(seed, a, b))
        base = scheme_codes(coalesce_bundle(pin(bridge, u, y)))
        out = []
        for d in deltas:
            shifted = y.copy()
            shifted[coordinate - 1] += d
            codes = scheme_codes(coalesce_bundle(pin(bridge, u, shifted)))
            out.append(MCEstimate.from_values((codes != base).astype(float)))
        return out

    parts = map_chunks(work, replicas, chunk_size(n, grid.m), workers)
    freq = [pool(p[q] for p in parts) for q in range(len(deltas))]
    rows = []
    for (da, fa), (db, fb) in zip(zip(deltas, freq), zip(deltas[1:], freq[1:])):
        bound = fa.mean + slack * math.hypot(fa.stderr, fb.stderr)
        rows.append(bound_row(fb.mean, fb.stderr, bound, experiment="lemma6",
                              quantity=f"mismatch(delta={db:g}) vs delta={da:g}", provenance="none"))
    rows.append(bound_row(freq[-1].mean, freq[-1].stderr, limit, experiment="lemma6",
                          quantity=f"mismatch(delta={deltas[-1]:g})", provenance="none"))
    return CheckReport("lemma6", rows, {"deltas": deltas, "frequency": freq})
