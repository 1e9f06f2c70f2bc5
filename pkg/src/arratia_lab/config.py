"""Experiment configuration: a flat key-value table read from TOML."""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coalesce import Scheme
from .errors import ConfigurationError
from .paths import BRIDGE_MODES, DRIFT_FAMILIES, DriftSpec, TimeGrid

EXPERIMENTS = ("schemes", "bridge-check", "coalprob", "thm1", "thm2", "thm4", "lemma7", "lemma8",
               "thm3", "density", "lemma5", "lemma6")


@dataclass
class ExperimentConfig:
    experiment: str = "schemes"
    n: int = 2
    u: list | None = None
    T: float = 1.0
    m: int = 1024
    drift: str = "zero"
    drift_amplitude: float = 0.0
    drift_scale: float = 1.0
    drift_frequency: float = 1.0
    drift_offset: float = 0.0
    replicas: int = 10000
    seed: int = 0
    window_lo: float = -2.0
    window_hi: float = 3.0
    delta: float = 0.25
    h: float | None = None
    bandwidth: float | None = None
    y: list | None = None
    scheme: str | None = None
    j: int = 1
    k: int | None = None
    p: list = field(default_factory=lambda: [1.0, 2.0])
    outer: int = 200
    lhs_draws: int | None = None
    inner: int = 64
    nested: list | None = None
    n_small: int = 1
    levels: list | None = None
    deltas: list = field(default_factory=lambda: [0.1, 0.01, 0.001])
    kappa: float = 4.0
    sign: int = 1
    bridge_mode: str = "conditioned-increment"
    out: str = "out"

    # --- derived views -------------------------------------------------------

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.m)

    @property
    def points(self) -> list:
        if self.u is not None:
            return [float(x) for x in self.u]
        if self.n == 1:
            return [0.0]
        return [i / (self.n - 1) for i in range(self.n)]

    @property
    def drift_spec(self) -> DriftSpec:
        return DriftSpec(self.drift, self.drift_amplitude, self.drift_scale, self.drift_frequency,
                         self.drift_offset)

    @property
    def window(self) -> tuple[float, float]:
        return (self.window_lo, self.window_hi)

    @property
    def halfwidth(self) -> float:
        return 0.05 * math.sqrt(self.T) if self.h is None else self.h

    @property
    def draws(self) -> int:
        """Endpoint draws for the binned conditional estimator."""
        return 200 * self.replicas if self.lhs_draws is None else self.lhs_draws

    @property
    def endpoints(self) -> list:
        """``y`` as a list of points (a single point is wrapped)."""
        if self.y is None:
            return []
        if self.y and not isinstance(self.y[0], (list, tuple)):
            return [[float(v) for v in self.y]]
        return [[float(v) for v in pt] for pt in self.y]

    def parsed_scheme(self) -> Scheme | None:
        return None if self.scheme is None else Scheme.parse(self.scheme)

    # --- validation and serialization --------------------------------------------

    def validate(self) -> "ExperimentConfig":
        try:
            return self._validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"malformed configuration value: {exc}") from exc

    def _validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"n must be a positive integer, got {self.n!r}")
        pts = self.points
        if len(pts) != self.n:
            raise ConfigurationError(f"u has {len(pts)} points but n={self.n}")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigurationError(f"u must be strictly increasing, got {pts}")
        self.grid  # validates T and m
        if self.drift not in DRIFT_FAMILIES:
            raise ConfigurationError(f"unknown drift {self.drift!r}")
        self.drift_spec
        if int(self.replicas) != self.replicas or self.replicas < 2:
            raise ConfigurationError(f"replicas must be an integer >= 2, got {self.replicas!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be a non-negative 64-bit integer, got {self.seed!r}")
        if not self.window_hi > self.window_lo or not self.delta > 0:
            raise ConfigurationError("window must be non-empty and delta positive")
        if not self.halfwidth > 0:
            raise ConfigurationError("h must be positive")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigurationError("bandwidth must be positive")
        for pt in self.endpoints:
            if len(pt) != self.n:
                raise ConfigurationError(f"endpoint {pt} does not have n={self.n} coordinates")
        if self.scheme is not None and self.parsed_scheme().n != self.n:
            raise ConfigurationError(f"scheme {self.scheme} is not a scheme for n={self.n}")
        if self.sign not in (1, -1):
            raise ConfigurationError("sign must be 1 or -1")
        if self.bridge_mode not in BRIDGE_MODES:
            raise ConfigurationError(f"unknown bridge mode {self.bridge_mode!r}")
        if self.outer < 2 or self.inner < 1:
            raise ConfigurationError("outer must be >= 2 and inner >= 1")
        if self.levels is not None:
            lv = sorted(int(x) for x in self.levels)
            if lv[-1] != self.m or any(self.m % x for x in lv):
                raise ConfigurationError(f"levels {self.levels} must divide m={self.m} and end at m")
        if not self.kappa > 0:
            raise ConfigurationError("kappa must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        return cls(**data)

    def to_toml(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"cannot parse configuration: {exc}") from exc
        nested = [k for k, v in data.items() if isinstance(v, dict)]
        if nested:
            raise ConfigurationError(f"configuration must be flat; found tables {nested}")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value) or math.isnan(value):
            raise ConfigurationError("non-finite numbers cannot be written to a configuration")
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigurationError(f"cannot serialize {type(value).__name__}")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
    return ExperimentConfig.from_toml(text)
