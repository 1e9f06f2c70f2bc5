"""Log stochastic exponentials of the n-point motion and of pinned bridges.

Everything is kept in the log domain; ``LogWeight.total`` is
``ito_term - quad_term / 2`` and exponentials are taken only when averaging.
All stochastic integrals are left-point sums on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .coalesce import CoalescedBundle
from .errors import ConfigurationError, DomainError
from .parallel import chunk_size, map_chunks
from .paths import DriftSpec, PinnedBundle, TimeGrid, drift_value, sample_bridge
from .rng import StreamBatch
from .stats import MCEstimate, pool


@dataclass(frozen=True)
class LogWeight:
    ito_term: np.ndarray
    quad_term: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.ito_term - 0.5 * self.quad_term

    def weights(self) -> np.ndarray:
        return np.exp(self.total)


def ito_sum_left(integrand, increments) -> float:
    """``sum_i f(t_i) * (g(t_{i+1}) - g(t_i))``."""
    f = np.asarray(integrand, dtype=float)
    dg = np.asarray(increments, dtype=float)
    if f.shape != dg.shape:
        raise ConfigurationError(f"integrand has shape {f.shape} but increments have {dg.shape}")
    return float(np.sum(f * dg))


@nb.njit(cache=True, nogil=True)
def _flow_kernel(free, tau, code, p, dt, ito, quad):
    R, n = free.shape[0], free.shape[1]
    for r in range(R):
        s1 = 0.0
        s2 = 0.0
        for k in range(n):
            for i in range(tau[r, k]):
                x = free[r, k, i]
                a = drift_value(code, p, x)
                s1 += a * (free[r, k, i + 1] - x)
                s2 += a * a * dt
        ito[r] = s1
        quad[r] = s2


def flow_logweight(cb: CoalescedBundle, drift: DriftSpec, coordinates=None) -> LogWeight:
    """Girsanov log-density of the drifted n-point motion against the driftless one.

    Coordinate ``k`` contributes its free path increments up to its absorption
    node ``tau_k``.  ``coordinates`` restricts the sum to a leading subset
    ``range(coordinates)``; absorption times of lower coordinates never depend
    on higher ones, so this is the weight of the sub-motion.
    """
    R = cb.replicas
    ito = np.zeros(R)
    quad = np.zeros(R)
    if drift.is_zero:
        return LogWeight(ito, quad)
    n = cb.n if coordinates is None else int(coordinates)
    free = cb.free[:, :n]
    tau = np.ascontiguousarray(cb.tau[:, :n])
    _flow_kernel(np.ascontiguousarray(free), tau, drift.code, drift.params, cb.grid.dt, ito, quad)
    return LogWeight(ito, quad)


@nb.njit(cache=True, nogil=True)
def _bridge_kernel(pinned, eta, cut, y, u, code, p, T, dt, sign, literal, ito, quad):
    R, n, M1 = pinned.shape[0], pinned.shape[1], pinned.shape[2]
    m = M1 - 1
    for r in range(R):
        s1 = 0.0
        s2 = 0.0
        for k in range(n):
            slope = (y[r, k] - u[k]) / T
            last = cut[r, k]
            if literal and last > m - 1:
                last = m - 1
            for i in range(last):
                a = drift_value(code, p, pinned[r, k, i])
                d_eta = sign * (eta[r, k, i + 1] - eta[r, k, i])
                if literal:
                    pull = sign * eta[r, k, i] / (T * (m - i) / m)
                    d_beta = d_eta + pull * dt
                    s1 += a * d_beta + a * (slope - pull) * dt
                else:
                    s1 += a * d_eta + a * slope * dt
                s2 += a * a * dt
        ito[r] = s1
        quad[r] = s2


def bridge_logweight(pb: PinnedBundle, cutoffs, drift: DriftSpec, *, sign: int = 1,
                     mode: str = "cancelled") -> LogWeight:
    """Log of the bridge exponential for per-coordinate cutoff nodes.

    ``mode="cancelled"`` substitutes the bridge SDE so the singular pull term
    cancels: ``sum a(eta^{u,y}) d eta + sum a ((y-u)/T - a/2) dt``.
    ``mode="literal"`` keeps a driving-noise sum with increments
    ``d eta + eta/(T-t) dt`` and a separate pull sum, both stopped one step
    before ``T``.  ``sign`` flips the orientation of the bridge increments.
    """
    if mode not in ("cancelled", "literal"):
        raise ConfigurationError(f"unknown bridge weight mode {mode!r}")
    if sign not in (1, -1):
        raise ConfigurationError("sign must be +1 or -1")
    cut = np.asarray(cutoffs)
    if not np.issubdtype(cut.dtype, np.integer):
        raise ConfigurationError("cutoffs must be integer node indices (node-aligned)")
    cut = np.ascontiguousarray(np.broadcast_to(cut, (pb.replicas, pb.n)), dtype=np.int64)
    m = pb.grid.m
    if cut.size and (cut.min() < 0 or cut.max() > m):
        raise ConfigurationError(f"cutoff nodes must lie in 0..{m}")
    R = pb.replicas
    ito = np.zeros(R)
    quad = np.zeros(R)
    if drift.is_zero:
        return LogWeight(ito, quad)
    _bridge_kernel(np.ascontiguousarray(pb.values), np.ascontiguousarray(pb.bridge.values), cut,
                   np.ascontiguousarray(pb.y), pb.u, drift.code, drift.params, pb.grid.T, pb.grid.dt,
                   float(sign), mode == "literal", ito, quad)
    return LogWeight(ito, quad)


@dataclass(frozen=True)
class MomentConstants:
    C1: float
    C2: float
    inner: MCEstimate  # estimate of E exp(2 p |a| int |eta_1| / (T - t) dt)

    def bound(self, y) -> float:
        return self.C1 * math.exp(self.C2 * float(np.linalg.norm(y)))


def pull_integral(bridge_values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Left-point ``int_0^T |eta(t)| / (T - t) dt`` with the node at ``T`` left out."""
    m = grid.m
    denom = grid.T * (m - np.arange(m)) / m
    return np.sum(np.abs(bridge_values[..., :m]) / denom, axis=-1) * grid.dt


def lemma5_constants(u, p: float, n: int, drift: DriftSpec, grid: TimeGrid, replicas: int,
                     seed: int, stream_offset: int = 0) -> MomentConstants:
    """Constants of the moment bound ``E e^p <= C1 exp(C2 |y|)``.

    ``C2`` is exact; ``C1`` needs ``E exp(2 p |a| int |eta_1|/(T-t) dt)``,
    estimated here from ``replicas`` bridges.
    """
    if p < 0:
        raise DomainError("p must be non-negative")
    u = np.asarray(u, dtype=float)
    sup = drift.sup_norm
    C2 = p * math.sqrt(n) * sup
    if p == 0 or sup == 0:
        return MomentConstants(1.0, C2, MCEstimate.from_values(np.ones(1)))

    def work(a, b):
        batch = StreamBatch.range(seed, stream_offset + a, stream_offset + b)
        eta = sample_bridge(grid, 1, batch).values[:, 0]
        return MCEstimate.from_values(np.exp(2 * p * sup * pull_integral(eta, grid)))

    inner = pool(map_chunks(work, replicas, chunk_size(1, grid.m)))
    T = grid.T
    log_c1 = (n * p * abs(2 * p - 1) * T * sup**2 + p * math.sqrt(n) * float(np.linalg.norm(u)) * sup
              + 0.5 * n * math.log(inner.mean))
    return MomentConstants(math.exp(log_c1), C2, inner)
