"""Scenario configuration: strict JSON parsing into dataclasses with every
default materialized."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path as FsPath
from typing import Any, Mapping

from .geometry import MapError, PathMap, map_from_dict
from .gpr import KernelConfig
from .planner import VehicleParams
from .sampler import SamplerSettings
from .traffic import DeviationRule, HistoricalProfile

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "load_scenario",
    "scenario_from_dict",
    "bundled",
    "set_option",
]


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending key."""


@dataclass
class TrafficConfig:
    profile: dict = field(default_factory=lambda: {"form": "sinusoid", "a": 8.0, "b": 1.0, "c": 10.0})
    deviation: dict = field(default_factory=lambda: {"kind": "sign", "center": 8.0, "amplitude": 1.0})
    speed_sigma: float = 0.25
    position_sigma: float = 1.0
    measurement_rate: float = 10.0
    chosen_path: int | None = None


@dataclass
class GPConfig:
    kind: str = "dtc"
    nu: float = 1.5
    length_scale: float = 0.5
    signal_variance: float = 1.0
    noise_variance: float | None = None  # None: match traffic.speed_sigma
    n_inducing: int = 30
    capacity: int | None = None


@dataclass
class SamplerConfig:
    n_s: int = 5
    n_e: int = 2
    lam: float = 0.5
    gamma_scale: float = 1.96
    strategy: str = "worst_first"
    weights: list | None = None


@dataclass
class PlannerConfig:
    v_max: float = 15.0
    t_max: float = 300.0
    t_c: float = 0.5
    m_a: float = 3.0
    m_b: float = 1.0
    alpha: float = 20.0
    E_r0: float = 1.6e4
    abort_to: str = "landing"
    start: list | None = None


@dataclass
class RiskConfig:
    gamma: float = 0.05
    kappa: float = 0.0
    monitor: bool = True


@dataclass
class RunConfig:
    T_s: float = 1.0
    epsilon: float = 1.0
    seed: int = 0
    output_dir: str = "runs"
    rendezvous_radius: float = 5.0
    match_tolerance: float = 1.0
    match_window: float = 10.0
    confirmations: int = 3
    initial_data: float = 1.0
    max_steps: int = 400
    mode: str = "mission"
    iterations: int = 40
    start_box: float = 200.0


SECTIONS = {
    "traffic": TrafficConfig,
    "gp": GPConfig,
    "sampler": SamplerConfig,
    "planner": PlannerConfig,
    "risk": RiskConfig,
    "run": RunConfig,
}
# JSON spellings that are not valid Python identifiers
ALIASES = {"sampler": {"lambda": "lam"}}


@dataclass
class ScenarioConfig:
    map: dict
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    gp: GPConfig = field(default_factory=GPConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    run: RunConfig = field(default_factory=RunConfig)
    map_source: str = ""

    # derived objects -------------------------------------------------
    def path_map(self) -> PathMap:
        return map_from_dict(self.map)

    def vehicle(self) -> VehicleParams:
        p = self.planner
        return VehicleParams(p.m_a, p.m_b, p.alpha, p.v_max, p.t_max, p.t_c)

    def kernel(self) -> KernelConfig:
        g = self.gp
        noise = g.noise_variance if g.noise_variance is not None else self.traffic.speed_sigma ** 2
        return KernelConfig(g.nu, g.length_scale, g.signal_variance, noise)

    def profile(self) -> HistoricalProfile:
        spec = dict(self.traffic.profile)
        form = spec.pop("form")
        if form == "table":
            return HistoricalProfile.table(spec["t"], spec["v"])
        return HistoricalProfile(form, spec)

    def deviation(self) -> DeviationRule:
        return DeviationRule(**self.traffic.deviation)

    def sampler_settings(self) -> SamplerSettings:
        s, p = self.sampler, self.planner
        return SamplerSettings(
            m_a=p.m_a, m_b=p.m_b, alpha=p.alpha, v_max=p.v_max, t_c=p.t_c,
            gamma_scale=s.gamma_scale, strategy=s.strategy,
            weights=None if s.weights is None else tuple(float(w) for w in s.weights),
        )

    def to_dict(self) -> dict:
        out = {"map": copy.deepcopy(self.map)}
        for name in SECTIONS:
            section = asdict(getattr(self, name))
            for json_key, attr in ALIASES.get(name, {}).items():
                section[json_key] = section.pop(attr)
            out[name] = section
        out["risk"]["kappa"] = _encode_float(out["risk"]["kappa"])
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _encode_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _decode_float(value, where: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "-inf"):
        return float(value)
    raise ConfigError(f"{where}: expected a number, got {value!r}")


def _parse_section(name: str, cls, data: Any):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{name}: expected an object")
    aliases = ALIASES.get(name, {})
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        attr = aliases.get(key, key)
        # the Python-side names of aliased keys are not accepted in JSON
        if attr not in known or (key in aliases.values() and key not in aliases):
            raise ConfigError(f"unknown key '{name}.{key}'")
        kwargs[attr] = _coerce(f"{name}.{key}", value, known[attr].type)
    return cls(**kwargs)


def _coerce(where: str, value, annotation: str):
    ann = str(annotation)
    if value is None:
        if "None" in ann:
            return None
        raise ConfigError(f"{where}: may not be null")
    if ann.startswith("float"):
        return _decode_float(value, where)
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if ann.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if ann.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    if ann.startswith("dict"):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{where}: expected an object, got {value!r}")
        return dict(value)
    return value


def bundled(name: str) -> FsPath:
    """Path of a data file shipped with the package."""
    return FsPath(str(resources.files("rendezvous") / "data" / name))


def _resolve_map(ref, base: FsPath | None) -> tuple[dict, str]:
    if isinstance(ref, Mapping):
        return dict(ref), "inline"
    if not isinstance(ref, str):
        raise ConfigError("map: expected a file name or an inline map object")
    candidates = []
    if base is not None:
        candidates.append(base / ref)
    candidates += [FsPath(ref), bundled(ref)]
    for cand in candidates:
        if cand.is_file():
            with open(cand) as fh:
                return json.load(fh), ref
    raise ConfigError(f"map: file {ref!r} not found")


def scenario_from_dict(data: Mapping, base_dir: FsPath | None = None) -> ScenarioConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be an object")
    unknown = set(data) - set(SECTIONS) - {"map"}
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}'")
    if "map" not in data:
        raise ConfigError("missing key 'map'")
    map_dict, source = _resolve_map(data["map"], base_dir)
    sections = {name: _parse_section(name, cls, data.get(name, {})) for name, cls in SECTIONS.items()}
    cfg = ScenarioConfig(map=map_dict, map_source=source, **sections)
    validate(cfg)
    return cfg


def load_scenario(path: str | FsPath) -> ScenarioConfig:
    path = FsPath(path)
    if not path.is_file() and bundled(path.name).is_file() and not path.parent.name:
        path = bundled(path.name)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {str(path)!r} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data, path.parent)


def _positive(where: str, value) -> None:
    if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
        raise ConfigError(f"{where} must be a positive finite number, got {value!r}")


def validate(cfg: ScenarioConfig) -> None:
    try:
        path_map = cfg.path_map()
    except (MapError, KeyError, TypeError) as exc:
        raise ConfigError(f"map: {exc}") from exc
    p = cfg.planner
    for key in ("v_max", "t_max", "t_c", "m_a", "m_b", "alpha", "E_r0"):
        _positive(f"planner.{key}", getattr(p, key))
    if p.abort_to not in ("landing", "abort_site"):
        raise ConfigError(f"planner.abort_to must be 'landing' or 'abort_site', got {p.abort_to!r}")
    if p.start is not None and (len(p.start) != 2 or not all(isinstance(v, (int, float)) for v in p.start)):
        raise ConfigError("planner.start must be [x, y]")
    t = cfg.traffic
    for key in ("speed_sigma", "position_sigma"):
        if getattr(t, key) < 0:
            raise ConfigError(f"traffic.{key} must be non-negative")
    _positive("traffic.measurement_rate", t.measurement_rate)
    if t.chosen_path is not None and t.chosen_path not in path_map.ids:
        raise ConfigError(f"traffic.chosen_path {t.chosen_path} is not a path id {path_map.ids}")
    try:
        cfg.profile()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"traffic.profile: {exc}") from exc
    try:
        cfg.deviation()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"traffic.deviation: {exc}") from exc
    g = cfg.gp
    if g.kind not in ("dtc", "full"):
        raise ConfigError(f"gp.kind must be 'dtc' or 'full', got {g.kind!r}")
    try:
        cfg.kernel()
    except ValueError as exc:
        raise ConfigError(f"gp: {exc}") from exc
    if g.n_inducing < 1:
        raise ConfigError("gp.n_inducing must be at least 1")
    if g.capacity is not None and g.capacity < 2:
        raise ConfigError("gp.capacity must be at least 2")
    s = cfg.sampler
    if not s.n_s > s.n_e >= 1:
        raise ConfigError(f"sampler.n_e must satisfy 1 <= n_e < n_s, got n_s={s.n_s}, n_e={s.n_e}")
    _positive("sampler.lambda", s.lam)
    _positive("sampler.gamma_scale", s.gamma_scale)
    if s.strategy not in ("best_first", "worst_first"):
        raise ConfigError(f"sampler.strategy must be 'best_first' or 'worst_first', got {s.strategy!r}")
    if s.weights is not None:
        if len(s.weights) != len(path_map.paths):
            raise ConfigError(
                f"sampler.weights has {len(s.weights)} entries for {len(path_map.paths)} paths"
            )
        for i, w in enumerate(s.weights):
            _positive(f"sampler.weights[{i}]", w)
    r = cfg.risk
    if not 0 < r.gamma <= 1:
        raise ConfigError(f"risk.gamma must lie in (0, 1], got {r.gamma}")
    if math.isnan(r.kappa):
        raise ConfigError("risk.kappa may not be NaN")
    run = cfg.run
    for key in ("T_s", "epsilon", "rendezvous_radius", "match_tolerance", "match_window", "initial_data"):
        _positive(f"run.{key}", getattr(run, key))
    if run.mode not in ("mission", "convergence"):
        raise ConfigError(f"run.mode must be 'mission' or 'convergence', got {run.mode!r}")
    for key in ("confirmations", "max_steps", "iterations"):
        if getattr(run, key) < 1:
            raise ConfigError(f"run.{key} must be at least 1")
    if p.t_c > run.epsilon:
        raise ConfigError(
            f"planner.t_c={p.t_c} exceeds run.epsilon={run.epsilon}; the cruise loop could never exit"
        )


def set_option(cfg: ScenarioConfig, key: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with dotted ``key`` (e.g. ``risk.kappa``) replaced."""
    section, _, name = key.partition(".")
    if section not in SECTIONS or not name:
        raise ConfigError(f"unknown key '{key}'")
    data = cfg.to_dict()
    if name not in data[section]:
        raise ConfigError(f"unknown key '{key}'")
    data[section][name] = value
    return scenario_from_dict(data)
