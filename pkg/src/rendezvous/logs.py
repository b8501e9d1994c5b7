"""In-memory run logs and their CSV / JSON serialization.

CSV bodies hold only quantities that are a deterministic function of the
configuration and seed; wall-clock values go to the manifest.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, Mapping

__all__ = ["Table", "MissionLog", "write_csv", "format_value", "SCHEMAS"]

SCHEMAS: dict[str, tuple[str, ...]] = {
    "state": ("step", "t", "phase", "x", "y", "E_r", "mass", "carrying", "driver_theta",
              "driver_x", "driver_y", "n_active", "active", "t1", "safety_margin", "plan_margin"),
    "plan": ("step", "t", "path", "x1", "y1", "t1", "t2", "t3", "t4", "v1", "v2", "v3", "v4",
             "E1", "E2", "E3", "E4", "feasible", "binding", "held"),
    "sampler": ("iter", "t", "phase", "mu_A", "sigma_A", "target_path", "p_star_x", "p_star_y",
                "t_R", "best_cost", "rho_r_star", "infeasible_rows", "fallback"),
    "risk": ("t", "path", "extra_fuel_mean", "extra_fuel_sigma", "cvar", "rho_d", "method",
             "verdict", "decision"),
    "measurements": ("t", "theta_meas", "speed_meas", "hist_speed", "x_meas", "y_meas"),
    "gp": ("t", "M", "n_inducing", "jitter", "rmse_vs_truth"),
}


def format_value(v) -> str:
    """Shortest round-trip text for floats; lists joined with ';'."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(format_value(x) for x in v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: str | FsPath, columns: Iterable[str], rows: Iterable[Mapping]) -> None:
    columns = list(columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c)) for c in columns])


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list = field(default_factory=list)

    def add(self, **row) -> None:
        extra = set(row) - set(self.columns)
        if extra:
            raise KeyError(f"unknown column(s) {sorted(extra)}")
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_value(row.get(c)) for c in self.columns])
        return buf.getvalue()


@dataclass
class MissionLog:
    tables: dict = field(default_factory=lambda: {k: Table(v) for k, v in SCHEMAS.items()})
    manifest: dict = field(default_factory=dict)
    # wall-clock values live apart so manifests stay byte-identical per seed
    timing: dict = field(default_factory=dict)

    def __getattr__(self, name):
        tables = self.__dict__.get("tables", {})
        if name in tables:
            return tables[name]
        raise AttributeError(name)

    def write(self, out_dir: str | FsPath) -> FsPath:
        out = FsPath(out_dir)
        os.makedirs(out, exist_ok=True)
        for name, table in self.tables.items():
            with open(out / f"{name}.csv", "w", newline="") as fh:
                fh.write(table.to_csv())
        with open(out / "manifest.json", "w") as fh:
            json.dump(_jsonable(self.manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.timing:
            with open(out / "timing.json", "w") as fh:
                json.dump(_jsonable(self.timing), fh, indent=2, sort_keys=True)
                fh.write("\n")
        return out


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return format_value(obj)
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _jsonable(obj.tolist())
    return obj
