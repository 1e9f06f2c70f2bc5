"""Coalescing construction, collision times and coalescence schemes.

Free paths are merged on the grid by adjacent-block comparison: at the first
node where an adjacent pair of alive blocks violates strict order, the upper
block is absorbed and from then on follows the free path of the lower block's
minimal index.  Several merges at one node are processed lower block first,
and a block produced by a merge is compared again with its upper neighbour
before moving on.

Schemes and replays use 1-based coordinate numbers, like the combinatorics
they encode; arrays are 0-based.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

from .errors import ConfigurationError, DomainError
from .paths import PinnedBundle, TimeGrid, WienerBundle

MAX_ENUMERATION_N = 8


@dataclass(frozen=True)
class CoalescedBundle:
    """Coalesced trajectories plus the free paths they were built from.

    ``tau[r, k]`` is the node index where coordinate ``k`` is absorbed (``m``
    when it never is; always ``m`` for the first coordinate).  Event ``p`` of
    replica ``r`` happens at node ``event_node[r, p]`` and merges the block
    with minimum ``event_upper`` into the block with minimum ``event_lower``;
    ``event_position`` is the 1-based position of the lower block among the
    blocks alive just before the merge, i.e. the scheme entry.
    """

    grid: TimeGrid
    u: np.ndarray
    values: np.ndarray
    free: np.ndarray
    tau: np.ndarray
    n_events: np.ndarray
    event_node: np.ndarray
    event_lower: np.ndarray
    event_upper: np.ndarray
    event_position: np.ndarray
    event_cross_time: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def replicas(self) -> int:
        return self.values.shape[0]

    @property
    def tau_times(self) -> np.ndarray:
        return self.grid.nodes[self.tau]

    def survivors(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct terminal values, ascending, NaN-padded to ``n``; and their counts."""
        alive = self.alive_mask()
        terminal = np.where(alive, self.values[:, :, -1], np.nan)
        order = np.argsort(~alive, axis=1, kind="stable")
        out = np.take_along_axis(terminal, order, axis=1)
        return out, alive.sum(axis=1)

    def alive_mask(self) -> np.ndarray:
        """Coordinates never absorbed (block minima at T).

        ``tau == m`` alone is ambiguous: a merge detected at the last node
        also has ``tau == m``.
        """
        alive = np.ones((self.replicas, self.n), dtype=bool)
        for p in range(self.n - 1):
            hit = self.n_events > p
            alive[np.nonzero(hit)[0], self.event_upper[hit, p]] = False
        return alive

    def blocks_at(self, node: int, replica: int = 0) -> list[list[int]]:
        """Alive blocks (1-based coordinates) just after processing ``node``."""
        blocks = [[k + 1] for k in range(self.n)]
        for p in range(int(self.n_events[replica])):
            if self.event_node[replica, p] > node:
                break
            lo = int(self.event_lower[replica, p]) + 1
            hi = int(self.event_upper[replica, p]) + 1
            left = next(b for b in blocks if b[0] == lo)
            right = next(b for b in blocks if b[0] == hi)
            left.extend(right)
            left.sort()
            blocks.remove(right)
        return blocks


@nb.njit(cache=True, nogil=True)
def _coalesce_kernel(free, m, dt, values, tau, n_events, ev_node, ev_lo, ev_hi, ev_pos, ev_cross):
    R, n = free.shape[0], free.shape[1]
    reps = np.empty(n, np.int64)
    owner = np.empty(n, np.int64)
    for r in range(R):
        for k in range(n):
            reps[k] = k
            owner[k] = k
            tau[r, k] = m
            values[r, k, 0] = free[r, k, 0]
        nb_alive = n
        ne = 0
        for i in range(1, m + 1):
            j = 0
            while j < nb_alive - 1:
                lo = reps[j]
                hi = reps[j + 1]
                if free[r, hi, i] <= free[r, lo, i]:
                    ev_node[r, ne] = i
                    ev_lo[r, ne] = lo
                    ev_hi[r, ne] = hi
                    ev_pos[r, ne] = j + 1
                    d_prev = free[r, hi, i - 1] - free[r, lo, i - 1]
                    d_cur = free[r, hi, i] - free[r, lo, i]
                    frac = 1.0
                    if d_prev > d_cur:
                        frac = d_prev / (d_prev - d_cur)
                    ev_cross[r, ne] = (i - 1 + frac) * dt
                    ne += 1
                    tau[r, hi] = i
                    for q in range(n):
                        if owner[q] == hi:
                            owner[q] = lo
                    for q in range(j + 1, nb_alive - 1):
                        reps[q] = reps[q + 1]
                    nb_alive -= 1
                else:
                    j += 1
            for k in range(n):
                values[r, k, i] = free[r, owner[k], i]
        n_events[r] = ne
        for p in range(ne, n - 1):
            ev_node[r, p] = m
            ev_lo[r, p] = -1
            ev_hi[r, p] = -1
            ev_pos[r, p] = 0
            ev_cross[r, p] = np.nan


def coalesce_paths(grid: TimeGrid, free: np.ndarray, u) -> CoalescedBundle:
    """Coalesce free paths of shape ``(R, n, m+1)`` that already start at ``u``."""
    free = np.ascontiguousarray(free, dtype=float)
    if free.ndim != 3 or free.shape[2] != grid.m + 1:
        raise DomainError(f"free paths of shape {free.shape} do not fit a grid with m={grid.m}")
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size != free.shape[1]:
        raise DomainError(f"u has {u.size} coordinates but the paths have {free.shape[1]}")
    if np.any(np.diff(u) <= 0):
        raise DomainError(f"starting points must be strictly increasing, got {u.tolist()}")
    R, n, M1 = free.shape
    values = np.empty_like(free)
    tau = np.empty((R, n), np.int64)
    n_events = np.empty(R, np.int64)
    shape = (R, max(n - 1, 0))
    ev_node = np.empty(shape, np.int64)
    ev_lo = np.empty(shape, np.int64)
    ev_hi = np.empty(shape, np.int64)
    ev_pos = np.empty(shape, np.int64)
    ev_cross = np.empty(shape)
    _coalesce_kernel(free, grid.m, grid.dt, values, tau, n_events, ev_node, ev_lo, ev_hi, ev_pos, ev_cross)
    return CoalescedBundle(grid, u, values, free, tau, n_events, ev_node, ev_lo, ev_hi, ev_pos, ev_cross)


def coalesce_bundle(bundle: WienerBundle | PinnedBundle, u=None) -> CoalescedBundle:
    """Coalesce a Wiener bundle started at 0 (``u`` is added) or a pinned bundle."""
    if isinstance(bundle, WienerBundle):
        if u is None:
            raise DomainError("a Wiener bundle needs starting points u")
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != bundle.n:
            raise DomainError(f"u has {u.size} coordinates but the bundle has {bundle.n}")
        return coalesce_paths(bundle.grid, bundle.values + u[None, :, None], u)
    if isinstance(bundle, PinnedBundle):
        if u is not None and not np.array_equal(np.asarray(u, dtype=float), bundle.u):
            raise DomainError("u does not match the pinned bundle's starting point")
        return coalesce_paths(bundle.grid, bundle.values, bundle.u)
    raise TypeError(f"cannot coalesce {type(bundle).__name__}")


@nb.njit(cache=True, nogil=True)
def _meeting_kernel(free, m, out):
    R, n = free.shape[0], free.shape[1]
    for r in range(R):
        for a in range(n):
            out[r, a, a] = m
            for b in range(a + 1, n):
                hit = m
                lo_first = free[r, a, 0] < free[r, b, 0]
                for i in range(m + 1):
                    if lo_first:
                        bad = free[r, b, i] <= free[r, a, i]
                    else:
                        bad = free[r, a, i] <= free[r, b, i]
                    if bad:
                        hit = i
                        break
                out[r, a, b] = hit
                out[r, b, a] = hit
    return out


def pairwise_meeting_times(paths) -> np.ndarray:
    """Node indices ``theta[r, i, j]`` where free coordinates ``i`` and ``j`` first fail strict order.

    Accepts a pinned bundle, a coalesced bundle (its free paths are used) or a
    raw ``(R, n, m+1)`` array of free paths.  Entries are ``m`` when the pair
    never meets, and on the diagonal.
    """
    if isinstance(paths, (PinnedBundle, CoalescedBundle)):
        free = paths.values if isinstance(paths, PinnedBundle) else paths.free
    elif isinstance(paths, WienerBundle):
        raise DomainError("pass Wiener paths shifted by u (e.g. a CoalescedBundle)")
    else:
        free = np.asarray(paths, dtype=float)
    free = np.ascontiguousarray(free)
    R, n, M1 = free.shape
    out = np.empty((R, n, n), np.int64)
    return _meeting_kernel(free, M1 - 1, out)


# --- schemes -----------------------------------------------------------------


@dataclass(frozen=True)
class Scheme:
    """Element ``(j_1, ..., j_k)`` of Sh_{n,k}; entry ``j_i`` lies in ``1..n-i``."""

    n: int
    entries: tuple[int, ...] = ()

    def __post_init__(self):
        entries = tuple(int(j) for j in self.entries)
        object.__setattr__(self, "entries", entries)
        if self.n < 1:
            raise ConfigurationError(f"scheme needs n >= 1, got {self.n}")
        if len(entries) > self.n - 1:
            raise ConfigurationError(f"a scheme for n={self.n} has at most {self.n - 1} entries")
        for i, j in enumerate(entries, start=1):
            if not 1 <= j <= self.n - i:
                raise ConfigurationError(
                    f"entry {i} of scheme {entries} must lie in 1..{self.n - i}, got {j}")

    @property
    def k(self) -> int:
        return len(self.entries)

    def __str__(self) -> str:
        return f"{self.n}:{self.k}:{','.join(str(j) for j in self.entries)}"

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        try:
            n_txt, k_txt, body = text.strip().split(":")
            entries = tuple(int(x) for x in body.split(",")) if body else ()
            n, k = int(n_txt), int(k_txt)
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse scheme {text!r}") from exc
        if k != len(entries):
            raise ConfigurationError(f"scheme {text!r} declares k={k} but lists {len(entries)} entries")
        return cls(n, entries)

    @property
    def code(self) -> int:
        return scheme_code(self.n, self.entries)


def scheme_count(n: int, k: int) -> int:
    return math.prod(n - i for i in range(1, k + 1))


@lru_cache(maxsize=None)
def _code_offsets(n: int) -> tuple[int, ...]:
    offs, total = [], 0
    for k in range(n):
        offs.append(total)
        total += scheme_count(n, k)
    offs.append(total)
    return tuple(offs)


def scheme_code(n: int, entries) -> int:
    """Dense integer label: schemes ordered by length, then lexicographically."""
    entries = tuple(entries)
    k = len(entries)
    code = 0
    for i, j in enumerate(entries, start=1):
        code = code * (n - i) + (j - 1)
    return _code_offsets(n)[k] + code


def scheme_from_code(n: int, code: int) -> Scheme:
    offs = _code_offsets(n)
    k = max(i for i in range(n) if offs[i] <= code)
    rest = code - offs[k]
    entries = []
    for i in range(k, 0, -1):
        entries.append(rest % (n - i) + 1)
        rest //= (n - i)
    return Scheme(n, tuple(reversed(entries)))


def total_schemes(n: int) -> int:
    return _code_offsets(n)[-1]


def scheme_codes(cb: CoalescedBundle) -> np.ndarray:
    """Vectorized :func:`scheme_code` of every replica's extracted scheme."""
    n = cb.n
    offs = np.asarray(_code_offsets(n), dtype=np.int64)
    codes = np.zeros(cb.replicas, dtype=np.int64)
    for p in range(n - 1):
        active = cb.n_events > p
        codes = np.where(active, codes * (n - p - 1) + (cb.event_position[:, p] - 1), codes)
    return codes + offs[cb.n_events]


def extract_scheme(cb: CoalescedBundle, replica: int = 0) -> Scheme:
    k = int(cb.n_events[replica])
    return Scheme(cb.n, tuple(int(j) for j in cb.event_position[replica, :k]))


def enumerate_schemes(n: int) -> dict[int, list[Scheme]]:
    if int(n) != n or not 1 <= n <= MAX_ENUMERATION_N:
        raise ConfigurationError(f"enumeration supports 1 <= n <= {MAX_ENUMERATION_N}, got {n}")
    out = {}
    for k in range(n):
        ranges = [range(1, n - i + 1) for i in range(1, k + 1)]
        out[k] = [Scheme(n, e) for e in itertools.product(*ranges)]
    return out


@dataclass(frozen=True)
class ReplayEvent:
    left: tuple[int, ...]
    right: tuple[int, ...]
    pair: tuple[int, int]

    @property
    def absorbed(self) -> int:
        return self.pair[1]


@dataclass(frozen=True)
class SchemeReplay:
    """Deterministic block history of a scheme.

    ``cutoff_event[k-1]`` is the (0-based) event that stops coordinate ``k``,
    or ``None`` when it survives to ``T``.
    """

    scheme: Scheme
    events: tuple[ReplayEvent, ...]
    stages: tuple[tuple[tuple[int, ...], ...], ...]
    partition: tuple[tuple[int, ...], ...]
    survivors: tuple[int, ...]
    cutoff_event: tuple[int | None, ...]

    @property
    def n(self) -> int:
        return self.scheme.n

    @property
    def survivors0(self) -> np.ndarray:
        return np.asarray(self.survivors, dtype=np.int64) - 1

    @property
    def absorbed0(self) -> np.ndarray:
        keep = set(self.survivors)
        return np.asarray([k - 1 for k in range(1, self.n + 1) if k not in keep], dtype=np.int64)


@lru_cache(maxsize=4096)
def scheme_replay(n: int, s: Scheme | tuple) -> SchemeReplay:
    if not isinstance(s, Scheme):
        s = Scheme(n, tuple(s))
    if s.n != n:
        raise ConfigurationError(f"scheme is for n={s.n}, not n={n}")
    blocks = [(k,) for k in range(1, n + 1)]
    stages = [tuple(blocks)]
    events = []
    cutoff: list[int | None] = [None] * n
    for p, j in enumerate(s.entries):
        left, right = blocks[j - 1], blocks[j]
        ev = ReplayEvent(left, right, (left[0], right[0]))
        events.append(ev)
        cutoff[right[0] - 1] = p
        blocks[j - 1:j + 1] = [tuple(sorted(left + right))]
        stages.append(tuple(blocks))
    return SchemeReplay(s, tuple(events), tuple(stages), tuple(blocks),
                        tuple(b[0] for b in blocks), tuple(cutoff))


def cutoffs_from_replay(replay: SchemeReplay, event_node: np.ndarray, m: int) -> np.ndarray:
    """Per-coordinate cutoff nodes: coordinate ``k`` stops at the node of its cutoff event.

    ``event_node`` is ``(R, n-1)`` (event nodes in time order).  On replicas
    whose extracted scheme equals ``replay.scheme`` this equals ``tau``.
    """
    event_node = np.asarray(event_node)
    R = event_node.shape[0]
    out = np.full((R, replay.n), m, dtype=np.int64)
    for k, p in enumerate(replay.cutoff_event):
        if p is not None:
            out[:, k] = event_node[:, p]
    return out


def cutoffs_from_pairwise(replay: SchemeReplay, theta: np.ndarray, m: int) -> np.ndarray:
    """Cutoffs from free pairwise meeting times of each event's meeting pair."""
    theta = np.asarray(theta)
    R, n = theta.shape[0], theta.shape[1]
    out = np.full((R, n), m, dtype=np.int64)
    for k, p in enumerate(replay.cutoff_event):
        if p is not None:
            a, b = replay.events[p].pair
            out[:, k] = theta[:, a - 1, b - 1]
    return out


# --- index-set algebra ---------------------------------------------------------


@dataclass(frozen=True)
class IndexSet:
    """Strictly increasing set of 1-based coordinate numbers."""

    items: tuple[int, ...]

    def __post_init__(self):
        items = tuple(int(i) for i in self.items)
        if any(b <= a for a, b in zip(items, items[1:])):
            raise DomainError(f"index set must be strictly increasing, got {items}")
        if items and items[0] < 1:
            raise DomainError(f"indices are 1-based, got {items}")
        object.__setattr__(self, "items", items)

    def __iter__(self):
        return iter(self.items)

    def __len__(self) -> int:
        return len(self.items)


def index_slice(z, K, keep: bool = True) -> np.ndarray:
    """``z^{K}`` (``keep=True``) or ``z^{-K}`` along the last axis; ``K`` is 1-based."""
    z = np.asarray(z)
    K = K if isinstance(K, IndexSet) else IndexSet(tuple(K))
    dim = z.shape[-1]
    if K.items and K.items[-1] > dim:
        raise DomainError(f"index {K.items[-1]} out of range for a vector of length {dim}")
    mask = np.zeros(dim, dtype=bool)
    mask[[i - 1 for i in K]] = True
    return z[..., mask if keep else ~mask]


def index_slice2(z, K1, K2, keep: bool = True) -> np.ndarray:
    """``z^{K1, +K2}`` or ``z^{K1, -K2}``: slice by ``K1`` first, then by ``K2``."""
    return index_slice(index_slice(z, K1, keep=True), K2, keep=keep)
