"""Run an experiment and write its report files."""

from __future__ import annotations

import csv
import json
import math
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigurationError, DomainError
from .experiments import ExperimentResult, run_experiment
from .plots import render
from .stats import DensityEstimate, MCEstimate

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_EMPTY = 0, 1, 2, 3
ROW_FIELDS = ["experiment", "quantity", "estimate", "stderr", "oracle", "oracle_stderr", "provenance",
              "tolerance", "status", "note"]


def version_string() -> str:
    """``v<package version>`` plus ``git describe`` of the source tree when available."""
    base = f"v{__version__}"
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return base
    desc = out.stdout.strip()
    return f"{base}-g{desc}" if out.returncode == 0 and desc else base


def exit_code(result: ExperimentResult) -> int:
    if any(r.passed is False for r in result.rows):
        return EXIT_FAIL
    if any(r.passed is None for r in result.rows):
        return EXIT_EMPTY
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, MCEstimate):
        return obj.to_dict()
    if isinstance(obj, DensityEstimate):
        return {"dim": obj.dim, "lo": obj.lo, "delta": obj.delta, "nbins": obj.nbins,
                "replicas": obj.replicas, "integral": obj.integral()}
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


def write_outputs(cfg: ExperimentConfig, result: ExperimentResult, out_dir, code: int) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    summary = {
        "experiment": cfg.experiment,
        "version": version_string(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "exit_code": code,
        "status": {EXIT_OK: "pass", EXIT_FAIL: "fail", EXIT_EMPTY: "empty-bin"}[code],
        "rows": [r.to_dict() for r in result.rows],
        "details": result.details,
    }
    path = out / "summary.json"
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(str(path))

    path = out / "report.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in result.rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.to_dict().items()})
    written.append(str(path))

    for name, dens in result.densities.items():
        path = out / f"density_{name}.csv"
        path.write_text(dens.to_csv(), encoding="utf-8")
        written.append(str(path))

    path = out / "long.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "series", "x1", "x2", "value", "stderr", "count"])
        for name, dens in result.densities.items():
            centers = dens.centers
            for idx in dens.bin_indices():
                xs = [repr(float(centers[i])) for i in idx] + [""] * (2 - dens.dim)
                w.writerow([cfg.experiment, name, *xs[:2], repr(float(dens.values[idx])),
                            repr(float(dens.stderr[idx])), int(dens.count[idx])])
        for name, pts in result.curves.items():
            for x, v, e in pts:
                w.writerow([cfg.experiment, name, repr(float(x)), "", repr(float(v)),
                            "" if e is None else repr(float(e)), ""])
    written.append(str(path))

    written.append(render(result, cfg.experiment, out / f"{cfg.experiment}.png"))
    return written


def run(cfg: ExperimentConfig, workers: int | None = None, out_dir=None) -> tuple[int, list[str]]:
    """Run ``cfg`` and write outputs; returns the exit code and the files written."""
    try:
        result = run_experiment(cfg, workers)
    except (ConfigurationError, DomainError) as exc:
        raise ConfigurationError(str(exc)) from exc
    code = exit_code(result)
    files = write_outputs(cfg, result, out_dir or cfg.out, code)
    return code, files
