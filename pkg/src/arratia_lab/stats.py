"""Monte Carlo estimate containers, pooling and tolerance comparisons."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

PROVENANCE = ("closed-form", "cross-estimator", "none")


@dataclass(frozen=True)
class MCEstimate:
    """Scalar Monte Carlo mean built from per-chunk partial sums.

    ``partials`` holds ``(count, sum, sum_of_squares)`` per chunk.  Totals are
    formed with :func:`math.fsum`, which is exactly rounded, so pooling two
    estimates gives the same numbers whatever the order of their chunks.
    """

    partials: tuple[tuple[int, float, float], ...] = ()
    ess: float | None = None
    flagged_empty: bool = False

    @classmethod
    def from_values(cls, values, ess: float | None = None) -> "MCEstimate":
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size == 0:
            return cls((), ess, True)
        return cls(((int(values.size), float(values.sum()), float((values * values).sum())),), ess)

    @classmethod
    def empty(cls) -> "MCEstimate":
        return cls((), None, True)

    @property
    def replicas(self) -> int:
        return sum(p[0] for p in self.partials)

    @property
    def total(self) -> float:
        return math.fsum(p[1] for p in self.partials)

    @property
    def mean(self) -> float:
        n = self.replicas
        return self.total / n if n else math.nan

    @property
    def stderr(self) -> float:
        n = self.replicas
        if n < 2:
            return math.nan if n == 0 else 0.0
        mean = self.mean
        ss = math.fsum(p[2] for p in self.partials)
        var = max(ss / n - mean * mean, 0.0) * n / (n - 1)
        return math.sqrt(var / n)

    def merge(self, other: "MCEstimate") -> "MCEstimate":
        ess = None
        if self.ess is not None and other.ess is not None:
            ess = self.ess + other.ess
        parts = self.partials + other.partials
        return MCEstimate(parts, ess, not parts)

    def to_dict(self) -> dict:
        return {"mean": _finite(self.mean), "stderr": _finite(self.stderr), "replicas": self.replicas,
                "ess": self.ess if self.ess is not None else self.replicas,
                "flagged_empty": self.flagged_empty}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def pool(estimates) -> MCEstimate:
    out = MCEstimate()
    for est in estimates:
        out = out.merge(est)
    return out


def _finite(x):
    return None if x is None or not math.isfinite(x) else float(x)


@dataclass(frozen=True)
class DensityEstimate:
    """Binned density of ordered j-tuples of distinct survivor values.

    Bins are half-open ``[lo, lo + delta)`` on each axis.  With
    ``ordered_sector`` set, only ascending tuples are accumulated, so a
    symmetric density integrates to ``1/j!`` of its full-space mass.
    ``count`` is the number of tuples that fell in each bin; zero-count bins
    are reported as empty rather than as estimated zeros.
    """

    dim: int
    lo: float
    delta: float
    nbins: int
    values: np.ndarray
    stderr: np.ndarray
    count: np.ndarray
    replicas: int
    ordered_sector: bool = True
    ess: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def edges(self) -> np.ndarray:
        return self.lo + self.delta * np.arange(self.nbins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.lo + self.delta * (np.arange(self.nbins) + 0.5)

    @property
    def empty(self) -> np.ndarray:
        return self.count == 0

    def bin_indices(self):
        """Multi-indices of the reported bins (ascending ones on the ordered sector)."""
        for idx in itertools.product(range(self.nbins), repeat=self.dim):
            if self.ordered_sector and any(b < a for a, b in zip(idx, idx[1:])):
                continue
            yield idx

    def integral(self) -> float:
        return float(self.values.sum() * self.delta**self.dim)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"bin_lo_{i + 1}" for i in range(self.dim)] + ["value", "stderr", "count"])
        edges = self.edges
        for idx in self.bin_indices():
            w.writerow([repr(float(edges[i])) for i in idx]
                       + [repr(float(self.values[idx])), repr(float(self.stderr[idx])), int(self.count[idx])])
        return buf.getvalue()


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    quantity: str
    estimate: float
    stderr: float | None
    oracle: float | None = None
    oracle_stderr: float | None = None
    provenance: str = "none"
    tolerance: str = ""
    passed: bool | None = None
    note: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def status(self) -> str:
        if self.passed is None:
            return "inconclusive"
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "quantity": self.quantity,
                "estimate": _finite(self.estimate), "stderr": _finite(self.stderr),
                "oracle": _finite(self.oracle), "oracle_stderr": _finite(self.oracle_stderr),
                "provenance": self.provenance, "tolerance": self.tolerance,
                "status": self.status, "note": self.note}


def compare(a, b, kappa: float = 4.0, *, experiment: str = "", quantity: str = "",
            provenance: str = "cross-estimator", slack: float = 0.0) -> ReportRow:
    """Pass iff ``|A - B| <= kappa * sqrt(se_A^2 + se_B^2) + slack``.

    ``a`` and ``b`` are :class:`MCEstimate` objects or ``(mean, stderr)``
    pairs; a closed-form oracle is a pair with stderr 0.  Flagged-empty inputs
    give an inconclusive row.
    """
    (ma, sa, ea), (mb, sb, eb) = _unpack(a), _unpack(b)
    tol = f"|A-B| <= {kappa:g}*sqrt(seA^2+seB^2)" + (f" + {slack:g}" if slack else "")
    if ea or eb:
        return ReportRow(experiment, quantity, ma, sa, mb, sb, provenance, tol, None, "empty input")
    bound = kappa * math.hypot(sa, sb) + slack
    return ReportRow(experiment, quantity, ma, sa, mb, sb, provenance, tol, abs(ma - mb) <= bound)


def _unpack(x):
    if isinstance(x, MCEstimate):
        return x.mean, x.stderr, x.flagged_empty
    if isinstance(x, (tuple, list)) and len(x) == 2:
        mean, se = x
        if se is None:
            raise ValueError("comparison needs a standard error for every operand")
        return float(mean), float(se), False
    raise TypeError(f"cannot compare {type(x).__name__}")


@dataclass
class CheckReport:
    """Named collection of report rows; passes when no row fails."""

    name: str
    rows: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not any(r.passed is False for r in self.rows)

    @property
    def inconclusive(self) -> int:
        return sum(r.passed is None for r in self.rows)

    def failures(self) -> list:
        return [r for r in self.rows if r.passed is False]


def bound_row(value: float, se: float, bound: float, *, experiment: str = "", quantity: str = "",
              upper: bool = True, provenance: str = "closed-form", note: str = "") -> ReportRow:
    """One-sided check ``value <= bound`` (``upper``) or ``value >= bound``."""
    ok = value <= bound if upper else value >= bound
    tol = f"estimate {'<=' if upper else '>='} {bound:.6g}"
    return ReportRow(experiment, quantity, value, se, bound, None, provenance, tol, bool(ok), note)
