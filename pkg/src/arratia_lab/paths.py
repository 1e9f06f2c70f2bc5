"""Discretized Wiener paths, Brownian bridges, pinned bridges and drifted flows.

All bundles carry a leading replica axis: ``values[r, k, i]`` is coordinate
``k`` of replica ``r`` at grid node ``t_i``.  Sampling from a single
:class:`RngStream` gives a bundle with one replica.

Noise layout per replica stream: coordinate ``k`` at step ``i`` uses normal
number ``counter + k * m + i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import ConfigurationError, DomainError
from .rng import RngStream, StreamBatch

BRIDGE_MODES = ("conditioned-increment", "time-change")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    m: int

    def __post_init__(self):
        if not (isinstance(self.T, (int, float)) and math.isfinite(self.T) and self.T > 0):
            raise ConfigurationError(f"horizon T must be positive, got {self.T!r}")
        if int(self.m) != self.m or self.m < 2:
            raise ConfigurationError(f"need at least 2 steps, got m={self.m!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "m", int(self.m))

    @property
    def dt(self) -> float:
        return self.T / self.m

    @property
    def fractions(self) -> np.ndarray:
        """``t_i / T``; exactly 0 and 1 at the ends."""
        return np.arange(self.m + 1) / self.m

    @property
    def nodes(self) -> np.ndarray:
        return self.T * self.fractions

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.m % factor:
            raise ConfigurationError(f"m={self.m} is not divisible by {factor}")
        return TimeGrid(self.T, self.m // factor)


def make_grid(T: float, m: int) -> TimeGrid:
    return TimeGrid(T, m)


DRIFT_FAMILIES = {"zero": 0, "constant": 1, "tanh": 2, "sine": 3}


@dataclass(frozen=True)
class DriftSpec:
    """Closed registry of bounded Lipschitz drifts.

    ``constant``: ``a(x) = amplitude``; ``tanh``: ``amplitude * tanh(x / scale)``;
    ``sine``: ``amplitude * sin(frequency * x + offset)``.
    """

    family: str = "zero"
    amplitude: float = 0.0
    scale: float = 1.0
    frequency: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.family not in DRIFT_FAMILIES:
            raise ConfigurationError(
                f"unknown drift family {self.family!r}; expected one of {sorted(DRIFT_FAMILIES)}")
        if self.family == "tanh" and not self.scale > 0:
            raise ConfigurationError("tanh drift needs a positive scale")
        for name in ("amplitude", "scale", "frequency", "offset"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"drift {name} must be finite")

    @classmethod
    def zero(cls) -> "DriftSpec":
        return cls("zero")

    @classmethod
    def constant(cls, c: float) -> "DriftSpec":
        return cls("constant", amplitude=c)

    @classmethod
    def tanh(cls, A: float = 1.0, sigma: float = 1.0) -> "DriftSpec":
        return cls("tanh", amplitude=A, scale=sigma)

    @classmethod
    def sine(cls, A: float = 0.5, frequency: float = 1.0, offset: float = 0.0) -> "DriftSpec":
        return cls("sine", amplitude=A, frequency=frequency, offset=offset)

    @property
    def is_zero(self) -> bool:
        return self.family == "zero" or self.amplitude == 0.0

    @property
    def sup_norm(self) -> float:
        return 0.0 if self.family == "zero" else abs(self.amplitude)

    @property
    def lipschitz(self) -> float:
        if self.family in ("zero", "constant"):
            return 0.0
        if self.family == "tanh":
            return abs(self.amplitude) / self.scale
        return abs(self.amplitude * self.frequency)

    @property
    def code(self) -> int:
        return DRIFT_FAMILIES[self.family]

    @property
    def params(self) -> np.ndarray:
        return np.array([self.amplitude, self.scale, self.frequency, self.offset])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "zero":
            return np.zeros_like(x)
        if self.family == "constant":
            return np.full_like(x, self.amplitude)
        if self.family == "tanh":
            return self.amplitude * np.tanh(x / self.scale)
        return self.amplitude * np.sin(self.frequency * x + self.offset)

    def check_bounds(self, points=None, atol: float = 1e-12) -> bool:
        """Grid check of the declared sup-norm and Lipschitz constant."""
        if points is None:
            points = np.linspace(-50.0, 50.0, 200001)
        x = np.sort(np.asarray(points, dtype=float))
        a = self(x)
        if np.max(np.abs(a)) > self.sup_norm + atol:
            return False
        dx = np.diff(x)
        keep = dx > 0
        slopes = np.abs(np.diff(a))[keep] / dx[keep]
        return bool(slopes.size == 0 or slopes.max() <= self.lipschitz * (1 + 1e-9) + atol)

    @property
    def label(self) -> str:
        if self.family == "zero":
            return "zero"
        if self.family == "constant":
            return f"constant({self.amplitude:g})"
        if self.family == "tanh":
            return f"tanh(A={self.amplitude:g},scale={self.scale:g})"
        return f"sine(A={self.amplitude:g},freq={self.frequency:g},offset={self.offset:g})"

    def to_dict(self) -> dict:
        return {"family": self.family, "amplitude": self.amplitude, "scale": self.scale,
                "frequency": self.frequency, "offset": self.offset}


@nb.njit(inline="always", cache=True)
def drift_value(code, p, x):
    if code == 0:
        return 0.0
    if code == 1:
        return p[0]
    if code == 2:
        return p[0] * np.tanh(x / p[1])
    return p[0] * np.sin(p[2] * x + p[3])


@dataclass(frozen=True)
class WienerBundle:
    grid: TimeGrid
    values: np.ndarray  # (R, n, m+1), w(0) = 0
    increments: np.ndarray  # (R, n, m)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def replicas(self) -> int:
        return self.values.shape[0]

    def coarsen(self, factor: int) -> "WienerBundle":
        """Same paths observed on every ``factor``-th node."""
        grid = self.grid.coarsen(factor)
        values = np.ascontiguousarray(self.values[:, :, ::factor])
        return WienerBundle(grid, values, np.diff(values, axis=2))


@dataclass(frozen=True)
class BridgeBundle:
    grid: TimeGrid
    values: np.ndarray  # (R, n, m+1), zero at both ends
    mode: str = "conditioned-increment"

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def replicas(self) -> int:
        return self.values.shape[0]

    def coarsen(self, factor: int) -> "BridgeBundle":
        return BridgeBundle(self.grid.coarsen(factor),
                            np.ascontiguousarray(self.values[:, :, ::factor]), self.mode)


@dataclass(frozen=True)
class PinnedBundle:
    """Bridge ``eta`` moved to run from ``u`` at time 0 to ``y`` at time T.

    ``y`` has shape ``(R, n)`` so each replica may carry its own endpoint.
    """

    bridge: BridgeBundle
    u: np.ndarray
    y: np.ndarray
    values: np.ndarray = field(repr=False)

    @property
    def grid(self) -> TimeGrid:
        return self.bridge.grid

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def replicas(self) -> int:
        return self.values.shape[0]


def _require_count(n: int) -> int:
    if int(n) != n or n < 1:
        raise ConfigurationError(f"number of paths must be a positive integer, got {n!r}")
    return int(n)


def _require_ordered(u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size == 0 or not np.all(np.isfinite(u)):
        raise DomainError("starting points must be finite and non-empty")
    if np.any(np.diff(u) <= 0):
        raise DomainError(f"starting points must be strictly increasing, got {u.tolist()}")
    return u


def sample_wiener(grid: TimeGrid, n: int, rng: RngStream | StreamBatch) -> WienerBundle:
    n = _require_count(n)
    batch = StreamBatch.of(rng)
    m = grid.m
    z = batch.normals(n * m).reshape(len(batch), n, m)
    increments = math.sqrt(grid.dt) * z
    values = np.zeros((len(batch), n, m + 1))
    np.cumsum(increments, axis=2, out=values[:, :, 1:])
    return WienerBundle(grid, values, increments)


@nb.njit(cache=True, nogil=True)
def _bridge_conditioned(z, m, dt, out):
    # eta(t_{i+1}) | eta(t_i) ~ N(eta_i * (m-i-1)/(m-i), dt * (m-i-1)/(m-i))
    R, n = z.shape[0], z.shape[1]
    for r in range(R):
        for k in range(n):
            out[r, k, 0] = 0.0
            eta = 0.0
            for i in range(m - 1):
                ratio = (m - i - 1.0) / (m - i)
                eta = eta * ratio + np.sqrt(dt * ratio) * z[r, k, i]
                out[r, k, i + 1] = eta
            out[r, k, m] = 0.0
    return out


@nb.njit(cache=True, nogil=True)
def _bridge_time_change(z, m, T, out):
    # eta(t) = (T - t) * b(t / (T (T - t))) with b a standard Wiener process
    R, n = z.shape[0], z.shape[1]
    for r in range(R):
        for k in range(n):
            out[r, k, 0] = 0.0
            b = 0.0
            s_prev = 0.0
            for i in range(1, m):
                t = T * i / m
                s = t / (T * (T - t))
                b += np.sqrt(s - s_prev) * z[r, k, i - 1]
                s_prev = s
                out[r, k, i] = (T - t) * b
            out[r, k, m] = 0.0
    return out


def sample_bridge(grid: TimeGrid, n: int, rng: RngStream | StreamBatch,
                  mode: str = "conditioned-increment") -> BridgeBundle:
    n = _require_count(n)
    if mode not in BRIDGE_MODES:
        raise ConfigurationError(f"unknown bridge mode {mode!r}; expected one of {BRIDGE_MODES}")
    batch = StreamBatch.of(rng)
    m = grid.m
    z = batch.normals(n * m).reshape(len(batch), n, m)
    out = np.empty((len(batch), n, m + 1))
    if mode == "conditioned-increment":
        _bridge_conditioned(z, m, grid.dt, out)
    else:
        _bridge_time_change(z, m, grid.T, out)
    return BridgeBundle(grid, out, mode)


def bridge_from_wiener(w: WienerBundle) -> tuple[BridgeBundle, np.ndarray]:
    """Split ``w`` into its bridge ``(t/T) w(T) - w(t)`` and the endpoints ``w(T)``."""
    frac = w.grid.fractions
    endpoints = w.values[:, :, -1].copy()
    eta = frac * endpoints[:, :, None] - w.values
    eta[:, :, 0] = 0.0
    eta[:, :, -1] = 0.0
    return BridgeBundle(w.grid, eta, "conditioned-increment"), endpoints


def wiener_from_bridge(bridge: BridgeBundle, endpoints) -> np.ndarray:
    """Inverse of :func:`bridge_from_wiener`: ``w(t) = (t/T) w(T) - eta(t)``."""
    endpoints = np.asarray(endpoints, dtype=float).reshape(bridge.replicas, bridge.n)
    return bridge.grid.fractions * endpoints[:, :, None] - bridge.values


def pin(bridge: BridgeBundle, u, y) -> PinnedBundle:
    u = _require_ordered(u)
    if u.size != bridge.n:
        raise DomainError(f"u has {u.size} coordinates but the bridge has {bridge.n}")
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = np.broadcast_to(y, (bridge.replicas, y.size))
    if y.shape != (bridge.replicas, bridge.n):
        raise DomainError(f"endpoint shape {y.shape} does not match bundle ({bridge.replicas}, {bridge.n})")
    frac = bridge.grid.fractions
    values = bridge.values + (1.0 - frac) * u[None, :, None] + frac * y[:, :, None]
    return PinnedBundle(bridge, u, np.ascontiguousarray(y), values)


@nb.njit(cache=True, nogil=True)
def _euler_free(z, u, code, p, dt, out):
    R, n, m = z.shape[0], z.shape[1], z.shape[2]
    sq = np.sqrt(dt)
    for r in range(R):
        for k in range(n):
            x = u[k]
            out[r, k, 0] = x
            for i in range(m):
                if code != 0:
                    x = x + drift_value(code, p, x) * dt
                x = x + sq * z[r, k, i]
                out[r, k, i + 1] = x
    return out


def sample_free_paths(grid: TimeGrid, u, drift: DriftSpec, rng: RngStream | StreamBatch) -> np.ndarray:
    """Independent Euler-Maruyama paths started at ``u``; shape ``(R, n, m+1)``."""
    u = _require_ordered(u)
    batch = StreamBatch.of(rng)
    m = grid.m
    z = batch.normals(u.size * m).reshape(len(batch), u.size, m)
    out = np.empty((len(batch), u.size, m + 1))
    return _euler_free(z, u, drift.code, drift.params, grid.dt, out)


def sample_drifted_flow(grid: TimeGrid, u, drift: DriftSpec, rng: RngStream | StreamBatch):
    """n-point motion of the flow with drift ``drift`` started from ``u``.

    Each coordinate follows its own Euler-Maruyama path until it meets the
    block below; the coalescing rule is :func:`arratia_lab.coalesce.coalesce_paths`.
    """
    from .coalesce import coalesce_paths

    u = _require_ordered(u)
    free = sample_free_paths(grid, u, drift, rng)
    return coalesce_paths(grid, free, u)
