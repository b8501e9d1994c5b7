"""Historical speed priors and the simulated driver that produces noisy
measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .geometry import Path

__all__ = [
    "HistoricalProfile",
    "DeviationRule",
    "DriverTruth",
    "Measurement",
    "ExtrapolationError",
    "historical_speed",
    "step_driver",
]

SUBSTEP = 0.1


class ExtrapolationError(ValueError):
    """Query time outside a tabulated profile."""


@dataclass(frozen=True)
class HistoricalProfile:
    """Time-parametrized mean path speed.

    ``form`` is one of ``constant`` (params: value), ``sinusoid``
    (params: a, b, c giving a + b*sin(t/c)) or ``table`` (params: t, v).
    """

    form: str
    params: Mapping[str, object]

    def __post_init__(self):
        if self.form == "constant":
            if float(self.params["value"]) <= 0:
                raise ValueError("constant profile speed must be positive")
        elif self.form == "sinusoid":
            a, b, c = (float(self.params[k]) for k in ("a", "b", "c"))
            if a - abs(b) <= 0:
                raise ValueError(f"sinusoid profile a={a}, b={b} is not always positive")
            if c <= 0:
                raise ValueError("sinusoid period parameter c must be positive")
        elif self.form == "table":
            t = np.asarray(self.params["t"], dtype=float)
            v = np.asarray(self.params["v"], dtype=float)
            if t.shape != v.shape or t.size < 2:
                raise ValueError("table profile needs matching t and v with at least 2 rows")
            if np.any(np.diff(t) <= 0):
                raise ValueError("table profile times must strictly increase")
            if np.any(v <= 0):
                raise ValueError("table profile speeds must be positive")
        else:
            raise ValueError(f"unknown profile form {self.form!r}")

    @classmethod
    def constant(cls, value: float) -> "HistoricalProfile":
        return cls("constant", {"value": float(value)})

    @classmethod
    def sinusoid(cls, a: float = 8.0, b: float = 1.0, c: float = 10.0) -> "HistoricalProfile":
        return cls("sinusoid", {"a": float(a), "b": float(b), "c": float(c)})

    @classmethod
    def table(cls, t: Sequence[float], v: Sequence[float]) -> "HistoricalProfile":
        return cls("table", {"t": list(map(float, t)), "v": list(map(float, v))})

    def __call__(self, t):
        """Vectorized speed; no range checks (see :func:`historical_speed`)."""
        t = np.asarray(t, dtype=float)
        if self.form == "constant":
            return np.full_like(t, float(self.params["value"]))
        if self.form == "sinusoid":
            p = self.params
            return float(p["a"]) + float(p["b"]) * np.sin(t / float(p["c"]))
        return np.interp(t, self.params["t"], self.params["v"])

    def to_dict(self) -> dict:
        return {"form": self.form, **{k: v for k, v in self.params.items()}}


def historical_speed(profile: HistoricalProfile, t: float) -> float:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if profile.form == "table":
        lo, hi = profile.params["t"][0], profile.params["t"][-1]
        if not lo <= t <= hi:
            raise ExtrapolationError(f"t={t} outside tabulated range [{lo}, {hi}]")
    return float(profile(t))


@dataclass(frozen=True)
class DeviationRule:
    """True driver deviation as a function of the historical speed.

    kinds: ``zero``, ``constant`` (offset), ``sign`` (amplitude*sign(v - center)),
    ``tanh`` (amplitude*tanh((v - center)/width)).
    """

    kind: str = "sign"
    offset: float = 0.0
    amplitude: float = 1.0
    center: float = 8.0
    width: float = 0.25

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "sign", "tanh"):
            raise ValueError(f"unknown deviation rule {self.kind!r}")
        if self.kind == "tanh" and self.width <= 0:
            raise ValueError("tanh deviation width must be positive")

    def __call__(self, hist_speed):
        v = np.asarray(hist_speed, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(v)
        if self.kind == "constant":
            return np.full_like(v, self.offset)
        if self.kind == "sign":
            return self.amplitude * np.sign(v - self.center)
        return self.amplitude * np.tanh((v - self.center) / self.width)


@dataclass(frozen=True)
class Measurement:
    t: float
    theta_meas: float
    speed_meas: float
    hist_speed: float
    point: tuple[float, float] = (math.nan, math.nan)


@dataclass(frozen=True)
class DriverTruth:
    chosen_path: int
    deviation_rule: DeviationRule
    theta: float = 0.0
    t: float = 0.0
    speed_sigma: float = 0.25
    position_sigma: float = 1.0

    def speed(self, profile: HistoricalProfile, t) -> np.ndarray:
        hist = profile(t)
        return np.maximum(hist + self.deviation_rule(hist), 0.0)


def step_driver(
    truth: DriverTruth,
    profile: HistoricalProfile,
    dt: float,
    rng: np.random.Generator,
    path: Path | None = None,
) -> tuple[DriverTruth, Measurement]:
    """Advance the driver by ``dt`` seconds and return a noisy measurement.

    Arc-length is integrated with the trapezoidal rule on substeps of at
    most 0.1 s and stops at the end of ``path`` when one is given. The
    position fix (``point``) is only produced when ``path`` is given.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = max(1, math.ceil(dt / SUBSTEP - 1e-9))
    ts = truth.t + dt * np.arange(n + 1) / n
    speeds = truth.speed(profile, ts)
    theta = truth.theta + float(np.sum(0.5 * (speeds[1:] + speeds[:-1]) * np.diff(ts)))
    if path is not None:
        theta = min(theta, path.length)
    t_new = float(ts[-1])
    moving = path is None or theta < path.length
    true_speed = float(speeds[-1]) if moving else 0.0
    hist = float(profile(t_new))

    noise = rng.standard_normal(4)
    theta_meas = theta + truth.position_sigma * noise[0]
    speed_meas = true_speed + truth.speed_sigma * noise[1]
    if path is not None:
        px, py = path.points(theta)
        point = (float(px + truth.position_sigma * noise[2]), float(py + truth.position_sigma * noise[3]))
    else:
        point = (math.nan, math.nan)
    new_truth = replace(truth, theta=theta, t=t_new)
    return new_truth, Measurement(t_new, float(theta_meas), float(speed_meas), hist, point)
