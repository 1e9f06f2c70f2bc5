"""Monte Carlo estimators for conditional expectations and point densities.

Stream namespaces (see :func:`arratia_lab.rng.tagged_streams`): flows and
pinned-bridge replicas use tag 0, the endpoint-first Wiener sampler of the
binned conditional estimator uses tag 1, outer draws of the nested density
estimator tag 2 and its inner replicas tag 3.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .coalesce import (CoalescedBundle, IndexSet, Scheme, coalesce_bundle, coalesce_paths,
                       cutoffs_from_replay, scheme_codes, scheme_replay)
from .errors import ConfigurationError, DomainError
from .girsanov import bridge_logweight, flow_logweight
from .parallel import chunk_size, map_chunks
from .paths import (DriftSpec, TimeGrid, pin, sample_bridge, sample_drifted_flow,
                    wiener_from_bridge)
from .rng import StreamBatch, tagged_streams
from .stats import DensityEstimate, MCEstimate, pool

TAG_REPLICA, TAG_ENDPOINT, TAG_OUTER, TAG_INNER = 0, 1, 2, 3

# Epanechnikov over Gaussian canonical bandwidth ratio, used to rescale Silverman's rule
EPANECHNIKOV_FACTOR = 2.214


def gaussian_density(dim: int, center, T: float, z) -> np.ndarray:
    """Isotropic Gaussian density with covariance ``T * Id`` evaluated at ``z`` (last axis = ``dim``)."""
    if not T > 0:
        raise ConfigurationError(f"variance T must be positive, got {T}")
    z = np.asarray(z, dtype=float)
    center = np.asarray(center, dtype=float)
    if dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    center = center.reshape(-1)
    if z.shape[-1] != dim or center.size != dim:
        raise DomainError(f"expected {dim}-dimensional arguments")
    d2 = np.sum((z - center) ** 2, axis=-1)
    return (2 * math.pi * T) ** (-dim / 2) * np.exp(-d2 / (2 * T))


def _as_u(u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size == 0 or np.any(np.diff(u) <= 0):
        raise DomainError(f"starting points must be strictly increasing, got {u.tolist()}")
    return u


def _as_schemes(n: int, s):
    single = isinstance(s, (Scheme, str)) or s is None or (
        isinstance(s, tuple) and all(isinstance(j, (int, np.integer)) for j in s))
    items = [s] if single else list(s)
    out = []
    for item in items:
        if isinstance(item, str):
            item = Scheme.parse(item)
        elif not isinstance(item, Scheme):
            item = Scheme(n, tuple(item or ()))
        if item.n != n:
            raise ConfigurationError(f"scheme {item} is not a scheme for n={n}")
        out.append(item)
    return out, single


# --- scheme probabilities, pinned-bridge side -------------------------------------


def _pinned_values(grid, u, y_rows, schemes, drift, batch, sign, mode, bridge_mode):
    n = u.size
    pb = pin(sample_bridge(grid, n, batch, bridge_mode), u, y_rows)
    cb = coalesce_bundle(pb)
    codes = scheme_codes(cb)
    out = []
    for s in schemes:
        hit = codes == s.code
        if drift.is_zero:
            out.append(hit.astype(float))
            continue
        cut = cutoffs_from_replay(scheme_replay(n, s), cb.event_node, grid.m)
        lw = bridge_logweight(pb, cut, drift, sign=sign, mode=mode)
        out.append(np.where(hit, np.exp(lw.total), 0.0))
    return out


def thm1_rhs(u, y, s, drift: DriftSpec, grid: TimeGrid, replicas: int, seed: int = 0, *,
             sign: int = 1, mode: str = "cancelled", bridge_mode: str = "conditioned-increment",
             workers: int | None = None):
    """Average of ``1(S(eta^{u,y}) = s) * bridge exponential`` over pinned bridges.

    ``s`` may be one scheme or a list of schemes; all are evaluated on the
    same bridges.  Returns an :class:`MCEstimate` (or a list of them).
    """
    u = _as_u(u)
    n = u.size
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != n:
        raise DomainError(f"y has {y.size} coordinates, expected {n}")
    schemes, single = _as_schemes(n, s)

    def work(a, b):
        batch = StreamBatch.range(seed, a, b)
        rows = np.broadcast_to(y, (b - a, n))
        vals = _pinned_values(grid, u, rows, schemes, drift, batch, sign, mode, bridge_mode)
        return [MCEstimate.from_values(v) for v in vals]

    parts = map_chunks(work, replicas, chunk_size(n, grid.m), workers)
    ests = [pool(p[i] for p in parts) for i in range(len(schemes))]
    return ests[0] if single else ests


# --- scheme probabilities, Wiener side ---------------------------------------------


def thm1_lhs_binned(u, y, s, drift: DriftSpec, grid: TimeGrid, replicas: int, h: float,
                    seed: int = 0, *, workers: int | None = None):
    """Binned conditional mean of ``1(S(W+u) = s) * exp(flow log-weight)`` given ``W(T) ~ y - u``.

    ``replicas`` Wiener paths are drawn endpoint first: ``W(T)`` from the
    first ``n`` normals of each stream, and only when it lands in the cube
    ``|W(T) - (y - u)|_inf <= h`` is the rest of the path filled in with an
    independent bridge, ``W(t) = (t/T) W(T) - eta(t)``.  The estimate is the
    mean over retained paths (``replicas`` of the result is the retained
    count); an empty cube gives a flagged-empty estimate.
    """
    if not h > 0:
        raise ConfigurationError(f"bin halfwidth must be positive, got {h}")
    u = _as_u(u)
    n = u.size
    target = np.asarray(y, dtype=float).reshape(-1) - u
    schemes, single = _as_schemes(n, s)
    sub = chunk_size(n, grid.m)

    def work(a, b):
        batch = StreamBatch(seed, tagged_streams(TAG_ENDPOINT, a, b), 0)
        ends = math.sqrt(grid.T) * batch.normals(n)
        keep = np.nonzero(np.max(np.abs(ends - target), axis=1) <= h)[0]
        vals = [[] for _ in schemes]
        for lo in range(0, keep.size, sub):
            idx = keep[lo:lo + sub]
            bridge = sample_bridge(grid, n, batch.take(idx).advance(n))
            paths = wiener_from_bridge(bridge, ends[idx]) + u[None, :, None]
            cb = coalesce_paths(grid, paths, u)
            codes = scheme_codes(cb)
            weight = np.exp(flow_logweight(cb, drift).total)
            for q, sch in enumerate(schemes):
                vals[q].append(np.where(codes == sch.code, weight, 0.0))
        return [MCEstimate.from_values(np.concatenate(v)) if v else MCEstimate.empty() for v in vals]

    parts = map_chunks(work, replicas, 1 << 16, workers)
    ests = []
    for q in range(len(schemes)):
        est = pool(p[q] for p in parts)
        ests.append(est if est.replicas else MCEstimate.empty())
    return ests[0] if single else ests


# --- binned densities ------------------------------------------------------------


@dataclass(frozen=True)
class SchemeTarget:
    """Tuples of ``j`` distinct survivors on the event ``{scheme = s}``."""

    scheme: Scheme
    j: int

    def __post_init__(self):
        # j above the scheme's survivor count is allowed and yields an identically zero density
        if not 1 <= self.j <= self.scheme.n:
            raise ConfigurationError(f"j={self.j} must lie in 1..{self.scheme.n}")

    @property
    def dim(self) -> int:
        return self.j


@dataclass(frozen=True)
class CountTarget:
    """Tuples of ``k`` distinct survivors, all replicas."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")

    @property
    def dim(self) -> int:
        return self.k


@dataclass(frozen=True)
class Bins:
    lo: float
    delta: float
    nbins: int

    @classmethod
    def of(cls, window, delta) -> "Bins":
        lo, hi = (float(x) for x in window)
        if not delta > 0:
            raise ConfigurationError(f"bin width must be positive, got {delta}")
        if not hi > lo:
            raise ConfigurationError(f"empty window [{lo}, {hi})")
        nb = int(round((hi - lo) / delta))
        if nb < 1 or abs(nb * delta - (hi - lo)) > 1e-9 * (hi - lo):
            raise ConfigurationError(f"window [{lo}, {hi}) is not a whole number of bins of width {delta}")
        return cls(lo, float(delta), nb)

    @property
    def hi(self) -> float:
        return self.lo + self.nbins * self.delta


def _tuple_hits(surv, counts, dim, bins: Bins, ordered: bool):
    """Rows and flat bin numbers of every ``dim``-tuple of distinct survivors inside the window."""
    n = surv.shape[1]
    picks = itertools.combinations(range(n), dim) if ordered else itertools.permutations(range(n), dim)
    rows, flats = [], []
    shape = (bins.nbins,) * dim
    for pos in picks:
        ok = counts > max(pos)
        idx = np.floor((surv[:, list(pos)] - bins.lo) / bins.delta)
        with np.errstate(invalid="ignore"):
            inside = ok & np.all((idx >= 0) & (idx < bins.nbins), axis=1)
        r = np.nonzero(inside)[0]
        rows.append(r)
        flats.append(np.ravel_multi_index(tuple(idx[r].astype(np.int64).T), shape))
    if not rows:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(rows), np.concatenate(flats)


def _bin_sums(rows, flats, weights, size):
    key = rows * size + flats
    uniq, cnt = np.unique(key, return_counts=True)
    contrib = cnt * weights[uniq // size]
    where = uniq % size
    return (np.bincount(where, contrib, minlength=size),
            np.bincount(where, contrib * contrib, minlength=size),
            np.bincount(flats, minlength=size))


def _targets(n, target):
    single = isinstance(target, (SchemeTarget, CountTarget))
    items = [target] if single else list(target)
    for t in items:
        if isinstance(t, SchemeTarget) and t.scheme.n != n:
            raise ConfigurationError(f"target scheme {t.scheme} does not match n={n}")
    return items, single


def _densities(u, drift, target, window, delta, grid, replicas, seed, ordered, weighted, workers):
    u = _as_u(u)
    n = u.size
    bins = Bins.of(window, delta)
    targets, single = _targets(n, target)

    def work(a, b):
        batch = StreamBatch.range(seed, a, b)
        if weighted:
            cb = sample_drifted_flow(grid, u, DriftSpec.zero(), batch)
            w = np.exp(flow_logweight(cb, drift).total)
        else:
            cb = sample_drifted_flow(grid, u, drift, batch)
            w = np.ones(cb.replicas)
        surv, counts = cb.survivors()
        codes = scheme_codes(cb) if any(isinstance(t, SchemeTarget) for t in targets) else None
        out = []
        for t in targets:
            size = bins.nbins ** t.dim
            rows, flats = _tuple_hits(surv, counts, t.dim, bins, ordered)
            if isinstance(t, SchemeTarget):
                sel = codes[rows] == t.scheme.code
                rows, flats = rows[sel], flats[sel]
            out.append(_bin_sums(rows, flats, w, size))
        return out, (math.fsum(w), math.fsum(w * w))

    parts = map_chunks(work, replicas, chunk_size(n, grid.m), workers)
    w1 = math.fsum(p[1][0] for p in parts)
    w2 = math.fsum(p[1][1] for p in parts)
    ess = w1 * w1 / w2 if w2 > 0 else 0.0
    results = []
    for q, t in enumerate(targets):
        s1 = np.zeros(bins.nbins ** t.dim)
        s2 = np.zeros_like(s1)
        cnt = np.zeros(s1.shape, np.int64)
        for p in parts:
            s1 += p[0][q][0]
            s2 += p[0][q][1]
            cnt += p[0][q][2]
        vol = bins.delta ** t.dim
        mean = s1 / replicas
        var = np.maximum(s2 / replicas - mean * mean, 0.0) * replicas / max(replicas - 1, 1)
        shape = (bins.nbins,) * t.dim
        meta = {"target": _target_label(t), "weighted": weighted}
        results.append(DensityEstimate(t.dim, bins.lo, bins.delta, bins.nbins,
                                       (mean / vol).reshape(shape), (np.sqrt(var / replicas) / vol).reshape(shape),
                                       cnt.reshape(shape), replicas, ordered,
                                       ess if weighted else float(replicas), meta))
    return results[0] if single else results


def _target_label(t) -> str:
    return f"scheme {t.scheme} j={t.j}" if isinstance(t, SchemeTarget) else f"k={t.k}"


def density_direct(u, drift: DriftSpec, target, window, delta: float, grid: TimeGrid, replicas: int,
                   seed: int = 0, *, ordered: bool = True, workers: int | None = None):
    """Binned density of survivor tuples from the simulated drifted flow."""
    return _densities(u, drift, target, window, delta, grid, replicas, seed, ordered, False, workers)


def density_girsanov(u, drift: DriftSpec, target, window, delta: float, grid: TimeGrid, replicas: int,
                     seed: int = 0, *, ordered: bool = True, workers: int | None = None):
    """Same accumulation as :func:`density_direct` over driftless flows weighted by the Girsanov density."""
    return _densities(u, drift, target, window, delta, grid, replicas, seed, ordered, True, workers)


# --- nested bridge estimator of scheme densities -----------------------------------


def density_thm2(u, s, j: int, drift: DriftSpec, window, delta: float, grid: TimeGrid,
                 outer: int, inner: int = 64, seed: int = 0, *, sign: int = 1,
                 workers: int | None = None) -> DensityEstimate:
    """Bin averages of the (n, s, j)-density from the Gaussian-bridge representation.

    For each ascending bin and each ``j``-subset ``L`` of the survivor
    positions, an outer draw puts ``z`` at a uniform point ``y`` of the bin on
    the ``L`` coordinates of the survivors and draws the remaining
    coordinates from ``N(u, T)``; ``inner`` pinned bridges to ``z`` estimate
    ``E 1(S = s) * bridge exponential``, which is multiplied by the Gaussian
    density of the ``L`` coordinates at ``y``.  Summing over ``L`` and
    averaging over outer draws gives the bin average.
    """
    u = _as_u(u)
    n = u.size
    (s,), _ = _as_schemes(n, s)
    k = n - s.k
    if not 1 <= j <= k:
        raise ConfigurationError(f"j={j} must lie in 1..{k} for scheme {s}")
    if outer < 2 or inner < 1:
        raise ConfigurationError("need at least 2 outer and 1 inner replica")
    bins = Bins.of(window, delta)
    replay = scheme_replay(n, s)
    surv = replay.survivors0
    subsets = [np.asarray(L) for L in itertools.combinations(range(k), j)]
    cells = [idx for idx in itertools.product(range(bins.nbins), repeat=j)
             if all(a <= b for a, b in zip(idx, idx[1:]))]
    units = len(cells) * len(subsets)
    T = grid.T

    def work(a, b):
        out = np.empty(b - a)
        for g in range(a, b):
            unit, o = divmod(g, outer)
            cell, L = cells[unit // len(subsets)], subsets[unit % len(subsets)]
            draw = StreamBatch(seed, tagged_streams(TAG_OUTER, g, g + 1), 0).normals(j + n)[0]
            y = bins.lo + bins.delta * (np.asarray(cell) + ndtr(draw[:j]))
            z = u + math.sqrt(T) * draw[j:]
            fixed = surv[L]
            z[fixed] = y
            streams = tagged_streams(TAG_INNER, g * inner, (g + 1) * inner)
            vals = _pinned_values(grid, u, np.broadcast_to(z, (inner, n)), [s], drift,
                                  StreamBatch(seed, streams, 0), sign, "cancelled",
                                  "conditioned-increment")[0]
            out[g - a] = float(gaussian_density(j, u[fixed], T, y)) * vals.mean()
        return out

    per_chunk = max(1, chunk_size(n, grid.m) // inner)
    draws = np.concatenate(map_chunks(work, units * outer, per_chunk, workers)).reshape(
        len(cells), len(subsets), outer)
    means = draws.mean(axis=2)
    variances = draws.var(axis=2, ddof=1) / outer
    shape = (bins.nbins,) * j
    values = np.zeros(shape)
    stderr = np.zeros(shape)
    count = np.zeros(shape, np.int64)
    for c, idx in enumerate(cells):
        values[idx] = means[c].sum()
        stderr[idx] = math.sqrt(variances[c].sum())
        count[idx] = outer * len(subsets)
    meta = {"target": f"scheme {s} j={j}", "outer": outer, "inner": inner}
    return DensityEstimate(j, bins.lo, bins.delta, bins.nbins, values, stderr, count,
                           outer, True, None, meta)


# --- cemetery-valued survivor vectors ----------------------------------------------


@dataclass(frozen=True)
class QLSample:
    """Ascending survivors at positions ``L``, or the cemetery state (``values is None``)."""

    values: tuple[float, ...] | None

    @property
    def is_cemetery(self) -> bool:
        return self.values is None

    def __repr__(self) -> str:
        return "QLSample(cemetery)" if self.is_cemetery else f"QLSample{self.values}"


def _positions(L) -> np.ndarray:
    L = L if isinstance(L, IndexSet) else IndexSet(tuple(L))
    if len(L) == 0:
        raise DomainError("L must be non-empty")
    return np.asarray(L.items, dtype=np.int64)


def ql_samples(cb: CoalescedBundle, L) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`ql_sample`: values ``(R, |L|)`` (NaN rows at the cemetery) and a validity mask."""
    pos = _positions(L)
    if pos[-1] > cb.n:
        raise DomainError(f"max(L)={pos[-1]} exceeds n={cb.n}")
    surv, counts = cb.survivors()
    valid = counts >= pos[-1]
    vals = surv[:, pos - 1]
    vals[~valid] = np.nan
    return vals, valid


def ql_sample(cb: CoalescedBundle, L, replica: int = 0) -> QLSample:
    vals, valid = ql_samples(cb, L)
    if not valid[replica]:
        return QLSample(None)
    return QLSample(tuple(float(v) for v in vals[replica]))


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Per-axis Silverman rule rescaled to the Epanechnikov kernel."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    N, d = samples.shape
    sigma = samples.std(axis=0, ddof=1) if N > 1 else np.zeros(d)
    return EPANECHNIKOV_FACTOR * sigma * (4.0 / ((d + 2) * N)) ** (1.0 / (d + 4))


def _epanechnikov(points, samples, h):
    # product kernel, shape (P, N)
    out = np.ones((points.shape[0], samples.shape[0]))
    for a in range(points.shape[1]):
        x = (points[:, a, None] - samples[None, :, a]) / h[a]
        out *= np.where(np.abs(x) < 1, 0.75 * (1 - x * x), 0.0) / h[a]
    return out


def density_thm4(u, k: int, drift: DriftSpec, window, delta: float, grid: TimeGrid, replicas: int,
                 seed: int = 0, *, bandwidth=None, groups: int = 50,
                 workers: int | None = None) -> DensityEstimate:
    """Sum over ``L`` of kernel density times kernel regression of the Girsanov weight.

    Evaluated at the centres of the ascending bins of the window.  For each
    increasing ``k``-subset ``L`` of ``1..n`` the density of the non-cemetery
    survivor vector is a product Epanechnikov kernel estimate (normalized by
    all replicas, so its mass is ``P(not cemetery)``) and the conditional
    mean of ``exp(flow log-weight)`` is a Nadaraya-Watson estimate with the
    same kernel.  Standard errors come from a delete-one-group jackknife over
    ``groups`` contiguous replica groups.
    """
    u = _as_u(u)
    n = u.size
    if not 1 <= k <= n:
        raise ConfigurationError(f"k={k} must lie in 1..{n}")
    if bandwidth is not None and not np.all(np.asarray(bandwidth, dtype=float) > 0):
        raise ConfigurationError("bandwidth must be positive")
    bins = Bins.of(window, delta)
    cells = [idx for idx in itertools.product(range(bins.nbins), repeat=k)
             if all(a <= b for a, b in zip(idx, idx[1:]))]
    points = bins.lo + bins.delta * (np.asarray(cells, dtype=float) + 0.5)

    def work(a, b):
        cb = sample_drifted_flow(grid, u, DriftSpec.zero(), StreamBatch.range(seed, a, b))
        surv, counts = cb.survivors()
        return surv, counts, np.exp(flow_logweight(cb, drift).total)

    parts = map_chunks(work, replicas, chunk_size(n, grid.m), workers)
    surv = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    weight = np.concatenate([p[2] for p in parts])
    groups = max(2, min(groups, replicas))
    edges = np.linspace(0, replicas, groups + 1).astype(np.int64)
    sizes = np.diff(edges)

    terms, per_L, flags = [], {}, []
    for L in itertools.combinations(range(1, n + 1), k):
        valid = counts >= L[-1]
        X = surv[:, np.asarray(L) - 1]
        if not valid.any():
            flags.append(f"L={L}: all cemetery")
            per_L[str(L)] = {"mass": 0.0, "bandwidth": None}
            continue
        h = (np.broadcast_to(np.asarray(bandwidth, dtype=float), (k,)) if bandwidth is not None
             else silverman_bandwidth(X[valid]))
        if not np.all(h > 0):
            flags.append(f"L={L}: degenerate bandwidth")
            per_L[str(L)] = {"mass": float(valid.mean()), "bandwidth": None}
            continue
        A = np.zeros((groups, len(cells)))
        B = np.zeros((groups, len(cells)))
        for g in range(groups):
            sl = slice(edges[g], edges[g + 1])
            keep = valid[sl]
            K = _epanechnikov(points, X[sl][keep], h)
            A[g] = K.sum(axis=1)
            B[g] = K @ weight[sl][keep]
        qhat, ehat = _kernel_pair(A.sum(axis=0), B.sum(axis=0), replicas)
        terms.append((A, B))
        per_L[str(L)] = {"mass": float(valid.mean()), "bandwidth": [float(x) for x in h],
                         "q": qhat.tolist(), "regression": ehat.tolist()}

    values = np.zeros(len(cells))
    loo = np.zeros((groups, len(cells)))
    for A, B in terms:
        qhat, ehat = _kernel_pair(A.sum(axis=0), B.sum(axis=0), replicas)
        values += qhat * ehat
        for g in range(groups):
            qg, eg = _kernel_pair(A.sum(axis=0) - A[g], B.sum(axis=0) - B[g], replicas - sizes[g])
            loo[g] += qg * eg
    stderr = np.sqrt((groups - 1) / groups * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))

    shape = (bins.nbins,) * k
    vals = np.zeros(shape)
    ses = np.zeros(shape)
    cnt = np.zeros(shape, np.int64)
    for c, idx in enumerate(cells):
        vals[idx] = values[c]
        ses[idx] = stderr[c]
        cnt[idx] = replicas
    meta = {"target": f"k={k}", "L": per_L, "flags": flags, "kernel": "epanechnikov",
            "evaluated_at": "bin centres"}
    return DensityEstimate(k, bins.lo, bins.delta, bins.nbins, vals, ses, cnt, replicas, True, None, meta)


def _kernel_pair(kernel_sum, weighted_sum, total):
    """Kernel density (over all ``total`` replicas) and Nadaraya-Watson mean; the mean is 0 where no mass."""
    qhat = kernel_sum / total
    with np.errstate(invalid="ignore", divide="ignore"):
        ehat = np.where(kernel_sum > 0, weighted_sum / kernel_sum, 0.0)
    return qhat, ehat
