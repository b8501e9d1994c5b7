"""Decision-time risk: the lower tail of the extra fuel left after a
rendezvous, per still-reachable path, and the go/abort gate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .geometry import Path
from .numerics import gaussian_cvar_lower
from .planner import VehicleParams, min_transfer

__all__ = [
    "PathRisk",
    "RiskReport",
    "PathCandidate",
    "extra_fuel_distribution",
    "assess_decision_risk",
    "required_energy_map",
]

MC_DRAWS = 10_000


@dataclass(frozen=True)
class PathRisk:
    mean: float
    sigma: float
    cvar: float
    rho_d: float
    method: str = "gaussian"


@dataclass(frozen=True)
class RiskReport:
    per_path: Mapping[int, PathRisk]
    gamma: float
    kappa: float
    worst_path: int | None
    verdict: str

    @property
    def worst_rho(self) -> float:
        if self.worst_path is None:
            return math.inf
        return self.per_path[self.worst_path].rho_d


@dataclass(frozen=True)
class PathCandidate:
    """Best rendezvous candidate of one path at decision time.

    ``energy`` maps arc-length on ``path`` to the energy still required to
    complete the mission through that point; ``theta`` and ``h`` are the
    propagated arc-length and its confidence half-width.
    """
    path: Path
    theta: float
    h: float
    energy: Callable[[np.ndarray], np.ndarray] | None


def required_energy_map(
    path: Path,
    uas_position,
    t: float,
    t_R: float,
    landing_site,
    params: VehicleParams,
    theta_hat: float,
) -> Callable[[np.ndarray], np.ndarray]:
    """Energy to meet the driver at arc-length theta at time ``t_R`` and then
    land, with the return-leg duration frozen at its optimum for
    ``theta_hat``. Infeasible speeds map to +inf."""
    x = np.asarray(uas_position, dtype=float)
    land = np.asarray(landing_site, dtype=float)
    dt = t_R - t
    land_T, _ = min_transfer(float(np.hypot(*(land - path.points(theta_hat)))), params.m_b, params)

    def energy(theta):
        pts = path.points(theta)
        d2 = np.linalg.norm(pts - x, axis=-1)
        d3 = np.linalg.norm(land - pts, axis=-1)
        if dt <= 0:
            e2 = np.where(d2 <= 1e-9, 0.0, np.inf)
        else:
            v2 = d2 / dt
            e2 = np.where(v2 <= params.v_max, params.m_a * (0.5 * v2 * v2 + params.alpha) * dt, np.inf)
        v3 = d3 / land_T
        e3 = np.where(v3 <= params.v_max, params.m_b * (0.5 * v3 * v3 + params.alpha) * land_T, np.inf)
        return e2 + e3

    return energy


def extra_fuel_distribution(
    cand: PathCandidate,
    E_r: float,
    gamma: float,
    gamma_scale: float = 1.96,
    rng: np.random.Generator | None = None,
) -> PathRisk:
    """Extra fuel X = E_r - E_required(theta), theta ~ N(theta_hat, (h/gamma_scale)^2).

    The required energy is probed at theta_hat and theta_hat +- h. If the
    middle value lies between the ends the map is treated as locally linear
    and X as Gaussian; otherwise 10^4 Monte Carlo draws are used.
    """
    if cand.energy is None:
        return PathRisk(-math.inf, 0.0, -math.inf, math.inf, "infeasible")
    probe = np.asarray(cand.energy(np.array([cand.theta - cand.h, cand.theta, cand.theta + cand.h])))
    lo_e, mid, hi_e = (float(v) for v in probe)
    if not math.isfinite(mid):
        return PathRisk(-math.inf, 0.0, -math.inf, math.inf, "infeasible")
    if cand.h <= 0:
        mean = E_r - mid
        return PathRisk(mean, 0.0, mean, -mean, "deterministic")
    tol = 1e-9 * max(1.0, abs(mid))
    monotone = (
        math.isfinite(lo_e) and math.isfinite(hi_e)
        and min(lo_e, hi_e) - tol <= mid <= max(lo_e, hi_e) + tol
    )
    if monotone:
        mean = E_r - mid
        sigma = abs(hi_e - lo_e) / (2.0 * gamma_scale)
        cvar = gaussian_cvar_lower(mean, sigma, gamma)
        return PathRisk(mean, sigma, cvar, -cvar, "gaussian")
    rng = rng if rng is not None else np.random.default_rng(0)
    thetas = cand.theta + (cand.h / gamma_scale) * rng.standard_normal(MC_DRAWS)
    x = E_r - np.asarray(cand.energy(thetas), dtype=float)
    x = np.where(np.isfinite(x), x, -np.inf)
    tail = np.sort(x)[: max(1, math.ceil(gamma * MC_DRAWS))]
    cvar = float(np.mean(tail)) if np.all(np.isfinite(tail)) else -math.inf
    finite = x[np.isfinite(x)]
    mean = float(np.mean(x)) if finite.size == x.size else -math.inf
    sigma = float(np.std(finite)) if finite.size else 0.0
    return PathRisk(mean, sigma, cvar, -cvar, "monte_carlo")


def assess_decision_risk(
    candidates: Mapping[int, PathCandidate | None],
    E_r: float,
    active,
    gamma: float = 0.05,
    kappa: float = 0.0,
    gamma_scale: float = 1.96,
    rng: np.random.Generator | None = None,
) -> RiskReport:
    """Per-path CVaR of extra fuel and the verdict.

    ``rho_d = -CVaR``; proceed iff the largest rho_d over active paths is at
    most ``kappa``. Active paths without a candidate get rho_d = +inf.
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    per_path: dict[int, PathRisk] = {}
    for pid in sorted(active):
        cand = candidates.get(pid)
        if cand is None:
            per_path[pid] = PathRisk(-math.inf, 0.0, -math.inf, math.inf, "infeasible")
        else:
            per_path[pid] = extra_fuel_distribution(cand, E_r, gamma, gamma_scale, rng)
    if not per_path:
        return RiskReport({}, gamma, kappa, None, "abort")
    worst = max(per_path, key=lambda k: (per_path[k].rho_d, -k))
    verdict = "proceed" if per_path[worst].rho_d <= kappa else "abort"
    return RiskReport(per_path, gamma, kappa, worst, verdict)
