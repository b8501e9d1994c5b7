"""Four-segment point-of-no-return planner.

Segments: 1 cruise to the PNR x1, 2 PNR to the rendezvous point, 3 rendezvous
to the landing site (package dropped), 4 PNR straight back to the landing
site (abort). Velocities are constant per segment, so they are eliminated as
displacement / duration. The remaining unknowns are the PNR position and t1;
t2 = t_R - t0 - t1, and t3, t4 are the energy-minimal durations allowed by
the speed, dwell and horizon limits. The search maximizes the decision time
t1 with a small nominal-energy tie-break.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "VehicleParams",
    "MissionPlan",
    "LegPlan",
    "AbortSignal",
    "CONSTRAINTS",
    "segment_energy",
    "min_transfer",
    "solve_ocp",
    "solve_rendezvous_leg",
    "replan_or_hold",
    "range_oracle",
]

# Diagnosis order: safety-relevant constraints first.
CONSTRAINTS = ("energy-abort", "energy-rendezvous", "v_max", "t_max", "dwell")

PENALTY = 1e3
TIE_BREAK = 1e-3
N_STARTS = 16
START_EVALS = 30
POLISH_EVALS = 80
POLISH_STEPS = (0.05, 0.01, 0.05, 0.002)
WARM_SUBSET = (5, 6, 13, 14)  # t1 at 50% and 95% of the horizon, heading to p*


class AbortSignal(RuntimeError):
    """No feasible plan is held; the mission must abort."""


@dataclass(frozen=True)
class VehicleParams:
    m_a: float = 3.0
    m_b: float = 1.0
    alpha: float = 20.0
    v_max: float = 15.0
    t_max: float = 300.0
    t_c: float = 0.5

    def __post_init__(self):
        for name in ("m_a", "m_b", "alpha", "v_max", "t_max", "t_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def best_speed(self) -> float:
        """Speed minimizing energy per metre, capped at v_max."""
        return min(self.v_max, math.sqrt(2.0 * self.alpha))


def segment_energy(mass: float, speed: float, duration: float, alpha: float) -> float:
    return mass * (0.5 * speed * speed + alpha) * duration


def min_transfer(distance: float, mass: float, p: VehicleParams, min_duration: float | None = None):
    """Cheapest constant-velocity flight over ``distance``: (duration, energy).

    Duration is at least ``min_duration`` (default t_c) and speed at most v_max.
    """
    floor = p.t_c if min_duration is None else min_duration
    if distance <= 0:
        return floor, mass * p.alpha * floor
    T = max(floor, distance / p.best_speed)
    v = distance / T
    return T, segment_energy(mass, v, T, p.alpha)


@dataclass(frozen=True)
class MissionPlan:
    t0: float
    origin: np.ndarray
    E_r: float
    waypoints: np.ndarray      # (4, 2): PNR, rendezvous, landing, abort end
    velocities: np.ndarray     # (4, 2)
    durations: np.ndarray      # (4,)
    energies: np.ndarray       # (4,)
    feasible: bool
    binding: str | None = None
    violations: Mapping[str, float] = field(default_factory=dict)
    objective: float = math.nan
    evaluations: int = 0

    @property
    def decision_time(self) -> float:
        return float(self.durations[0])

    @property
    def t_R(self) -> float:
        return self.t0 + float(self.durations[0] + self.durations[1])

    @property
    def t_land(self) -> float:
        return self.t_R + float(self.durations[2])

    @property
    def speeds(self) -> np.ndarray:
        return np.hypot(self.velocities[:, 0], self.velocities[:, 1])

    def shifted(self, elapsed: float) -> "MissionPlan":
        """Same waypoints seen ``elapsed`` seconds later along segment 1."""
        d = self.durations.copy()
        d[0] -= elapsed
        e = self.energies.copy()
        # segment 1 runs at constant power, so its energy scales with time left
        e[0] = 0.0 if d[0] <= 0 else e[0] * d[0] / self.durations[0]
        origin = self.origin + self.velocities[0] * elapsed
        return replace(self, t0=self.t0 + elapsed, origin=origin, durations=d, energies=e,
                       E_r=self.E_r - (self.energies[0] - e[0]))

    def as_row(self) -> dict:
        s = self.speeds
        return {
            "x1": float(self.waypoints[0, 0]), "y1": float(self.waypoints[0, 1]),
            **{f"t{i + 1}": float(self.durations[i]) for i in range(4)},
            **{f"v{i + 1}": float(s[i]) for i in range(4)},
            **{f"E{i + 1}": float(self.energies[i]) for i in range(4)},
            "feasible": int(self.feasible),
            "binding": self.binding or "",
        }


@dataclass(frozen=True)
class LegPlan:
    """Committed-phase plan: straight to the rendezvous point, then land."""
    t0: float
    origin: np.ndarray
    p_star: np.ndarray
    t_R: float
    velocity: np.ndarray
    duration: float
    energy: float
    land_duration: float
    land_energy: float
    feasible: bool
    binding: str | None = None


class _Problem:
    """Closed-form evaluation of a candidate (x1, t1)."""

    def __init__(self, x0, E_r, p_star, horizon, landing, abort_to, p: VehicleParams,
                 relax: Mapping[str, float] | None):
        relax = dict(relax or {})
        unknown = set(relax) - set(CONSTRAINTS)
        if unknown:
            raise ValueError(f"unknown constraint(s) to relax: {sorted(unknown)}")
        self.x0 = (float(x0[0]), float(x0[1]))
        self.ps = (float(p_star[0]), float(p_star[1]))
        self.land = (float(landing[0]), float(landing[1]))
        self.abort = (float(abort_to[0]), float(abort_to[1]))
        self.T = float(horizon)
        self.ma, self.mb, self.al = p.m_a, p.m_b, p.alpha
        self.budget_abort = E_r * relax.get("energy-abort", 1.0)
        self.budget_rdv = E_r * relax.get("energy-rendezvous", 1.0)
        self.vmax = p.v_max * relax.get("v_max", 1.0)
        self.tmax = p.t_max * relax.get("t_max", 1.0)
        self.tc = p.t_c / relax.get("dwell", 1.0)
        self.d_land = math.dist(self.ps, self.land)
        self.inv_best = 1.0 / math.sqrt(2.0 * self.al)
        self.tie = TIE_BREAK / (self.ma * self.al * max(self.T, 1.0))
        self.evals = 0
        self.best_feasible = None  # (objective, z)
        self.leg3 = self._leg(self.d_land, self.mb, self.tmax - self.T)

    def _leg(self, d: float, mass: float, t_cap: float):
        """Energy-minimal admissible duration for a leg of length d."""
        lo = d / self.vmax
        if lo < self.tc:
            lo = self.tc
        t = d * self.inv_best
        if t < lo:
            t = lo
        elif t > t_cap:
            t = t_cap if t_cap > lo else lo
        return t, mass * (0.5 * d * d / t + self.al * t)

    def evaluate(self, z, detail: bool = False):
        """Penalized score of (x1, y1, t1); with ``detail`` also the
        objective, violations per constraint, durations and energies."""
        self.evals += 1
        x1, y1, t1 = z
        T, tc = self.T, self.tc
        if T < 2 * tc:
            t1 = 0.5 * T
        elif t1 < tc:
            t1 = tc
        elif t1 > T - tc:
            t1 = T - tc
        t2 = T - t1
        al, ma, vmax, tmax = self.al, self.ma, self.vmax, self.tmax
        d1 = math.hypot(x1 - self.x0[0], y1 - self.x0[1])
        d2 = math.hypot(x1 - self.ps[0], y1 - self.ps[1])
        d4 = math.hypot(x1 - self.abort[0], y1 - self.abort[1])
        e1 = ma * (0.5 * d1 * d1 / t1 + al * t1)
        e2 = ma * (0.5 * d2 * d2 / t2 + al * t2)
        t3, e3 = self.leg3
        t4, e4 = self._leg(d4, ma, tmax - t1)
        scale = 1.0 / (ma * al)
        v_dwell = 2 * self.tc - T if T < 2 * self.tc else 0.0
        v_speed = max(0.0, d1 / vmax - t1) + max(0.0, d2 / vmax - t2)
        v_rdv = max(0.0, e1 + e2 + e3 - self.budget_rdv) * scale
        v_abort = max(0.0, e1 + e4 - self.budget_abort) * scale
        v_time = max(0.0, T + t3 - tmax) + max(0.0, t1 + t4 - tmax)
        total = v_dwell + v_speed + v_rdv + v_abort + v_time
        # with t_R fixed, t2 + t3 + t4 - t1 ranks plans like -2 t1 once t3, t4
        # are set by their legs; nominal-branch energy breaks ties
        obj = -t1 + self.tie * (e1 + e2 + e3)
        if total == 0.0 and (self.best_feasible is None or obj < self.best_feasible[0]):
            self.best_feasible = (obj, (x1, y1, t1))
        score = obj + PENALTY * total
        if not detail:
            return score
        viol = {
            "energy-abort": v_abort, "energy-rendezvous": v_rdv, "v_max": v_speed,
            "t_max": v_time, "dwell": v_dwell,
        }
        return score, obj, viol, (t1, t2, t3, t4), (e1, e2, e3, e4)


def _nelder_mead(f: Callable, x0, steps, max_evals: int, xtol: float, ftol: float = 1e-9):
    """Plain Nelder-Mead on three variables (standard coefficients)."""
    simplex = [list(x0)]
    for i in range(3):
        p = list(x0)
        p[i] += steps[i]
        simplex.append(p)
    fs = [f(p) for p in simplex]
    evals = 4
    while evals < max_evals:
        order = sorted(range(4), key=fs.__getitem__)
        simplex = [simplex[i] for i in order]
        fs = [fs[i] for i in order]
        b, w = simplex[0], simplex[3]
        if fs[3] - fs[0] <= ftol and max(
            abs(simplex[i][k] - b[k]) for i in (1, 2, 3) for k in (0, 1, 2)
        ) <= xtol:
            break
        s1, s2 = simplex[1], simplex[2]
        c = [(b[k] + s1[k] + s2[k]) / 3.0 for k in (0, 1, 2)]
        xr = [2.0 * c[k] - w[k] for k in (0, 1, 2)]
        fr = f(xr)
        evals += 1
        if fr < fs[0]:
            xe = [3.0 * c[k] - 2.0 * w[k] for k in (0, 1, 2)]
            fe = f(xe)
            evals += 1
            simplex[3], fs[3] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fs[2]:
            simplex[3], fs[3] = xr, fr
        else:
            if fr < fs[3]:
                xc = [0.5 * (c[k] + xr[k]) for k in (0, 1, 2)]
            else:
                xc = [0.5 * (c[k] + w[k]) for k in (0, 1, 2)]
            fc = f(xc)
            evals += 1
            if fc < min(fr, fs[3]):
                simplex[3], fs[3] = xc, fc
            else:
                for i in (1, 2, 3):
                    simplex[i] = [0.5 * (b[k] + simplex[i][k]) for k in (0, 1, 2)]
                    fs[i] = f(simplex[i])
                evals += 3
    i = min(range(4), key=fs.__getitem__)
    return simplex[i], fs[i], evals


def _starts(x0, p_star, landing, horizon, tc):
    x0 = np.asarray(x0, float)
    toward_p = np.asarray(p_star, float) - x0
    toward_l = np.asarray(landing, float) - x0
    starts = []
    for frac in (0.25, 0.5, 0.75, 0.95):
        t1 = max(tc, frac * horizon)
        for pos in (x0, x0 + 0.5 * frac * toward_p, x0 + frac * toward_p, x0 + 0.5 * frac * toward_l):
            starts.append((float(pos[0]), float(pos[1]), t1))
    return starts[:N_STARTS]


def _build_plan(prob: _Problem, z, t0, E_r, feasible, binding=None):
    _, obj, viol, ts, es = prob.evaluate(z, detail=True)
    x1 = np.array([z[0], z[1]], dtype=float)
    x0 = np.array(prob.x0)
    ps = np.array(prob.ps)
    land = np.array(prob.land)
    abort = np.array(prob.abort)
    durations = np.array(ts, dtype=float)
    waypoints = np.array([x1, ps, land, abort])
    starts = np.array([x0, x1, ps, x1])
    velocities = (waypoints - starts) / durations[:, None]
    return MissionPlan(
        t0=float(t0), origin=x0, E_r=float(E_r), waypoints=waypoints, velocities=velocities,
        durations=durations, energies=np.array(es, dtype=float), feasible=feasible,
        binding=binding, violations={k: v for k, v in viol.items() if v > 0},
        objective=obj, evaluations=prob.evals,
    )


def _search(prob: _Problem, warm=None):
    T = prob.T
    span = max(math.dist(prob.x0, prob.ps), math.dist(prob.x0, prob.land), 1.0)
    steps = (0.1 * span, 0.1 * span, 0.1 * T)
    xtol = 1e-6 * max(span, T)
    f = prob.evaluate
    starts = _starts(prob.x0, prob.ps, prob.land, T, prob.tc)
    if warm is not None:
        # a warm start already sits near the optimum; keep a few cold starts
        starts = [starts[i] for i in WARM_SUBSET] + [tuple(warm)]
    results = []
    for s in starts:
        z, fz, _ = _nelder_mead(f, s, steps, START_EVALS, xtol)
        results.append((fz, z))
    results.sort(key=lambda r: r[0])
    best_score, best_z = results[0]
    # restarts rebuild the simplex, which stops it stalling on curved boundaries
    for scale in POLISH_STEPS if warm is None else POLISH_STEPS[:2]:
        small = tuple(scale * s for s in steps)
        zz, fzz, _ = _nelder_mead(f, best_z, small, POLISH_EVALS, xtol)
        if fzz < best_score:
            best_score, best_z = fzz, zz
    return best_score, best_z


def solve_ocp(
    uas_position,
    E_r: float,
    t0: float,
    p_star,
    t_R: float,
    landing_site,
    params: VehicleParams,
    abort_site=None,
    relax: Mapping[str, float] | None = None,
    warm_start=None,
    diagnose: bool = True,
) -> MissionPlan:
    """Maximize decision time t1 for rendezvous at ``p_star`` at absolute
    time ``t_R`` while keeping both branches within ``E_r``.

    Returns a plan with ``feasible=False`` and ``binding`` naming the
    constraint (see ``CONSTRAINTS``) when no feasible plan exists. ``relax``
    scales named constraints (energy budgets and limits multiplied, dwell
    divided) and exists for sensitivity checks.
    """
    abort_to = landing_site if abort_site is None else abort_site
    horizon = t_R - t0
    if horizon <= 0:
        raise ValueError(f"rendezvous time {t_R} is not after t0={t0}")
    prob = _Problem(uas_position, E_r, p_star, horizon, landing_site, abort_to, params, relax)
    best_score, best_z = _search(prob, warm_start)
    if prob.best_feasible is not None:
        z = prob.best_feasible[1]
        return _build_plan(prob, z, t0, E_r, True)
    binding = _diagnose(prob, best_z, uas_position, E_r, t0, p_star, t_R, landing_site,
                        params, abort_site, relax) if diagnose else None
    return _build_plan(prob, best_z, t0, E_r, False, binding)


def _diagnose(prob, best_z, uas_position, E_r, t0, p_star, t_R, landing_site, params,
              abort_site, relax) -> str:
    base = dict(relax or {})
    for name in CONSTRAINTS:
        trial = dict(base)
        trial[name] = trial.get(name, 1.0) * 1.1
        plan = solve_ocp(uas_position, E_r, t0, p_star, t_R, landing_site, params,
                         abort_site, trial, warm_start=best_z, diagnose=False)
        if plan.feasible:
            return name
    viol = prob.evaluate(best_z, detail=True)[2]
    for name in CONSTRAINTS:
        if viol[name] > 0:
            return name
    return CONSTRAINTS[0]


def solve_rendezvous_leg(
    uas_position,
    E_r: float,
    t: float,
    p_star,
    t_R: float,
    landing_site,
    params: VehicleParams,
) -> LegPlan:
    """Fly straight to ``p_star`` arriving at ``t_R`` and then land on the
    cheapest admissible return leg."""
    x = np.asarray(uas_position, dtype=float)
    ps = np.asarray(p_star, dtype=float)
    d = float(np.hypot(*(ps - x)))
    dt = t_R - t
    land_T, land_E = min_transfer(float(np.hypot(*(np.asarray(landing_site) - ps))), params.m_b, params)
    binding = None
    if dt <= 0:
        v = np.zeros(2)
        E2 = 0.0
        if d > 1e-9:
            binding = "v_max"
    else:
        v = (ps - x) / dt
        speed = d / dt
        E2 = segment_energy(params.m_a, speed, dt, params.alpha)
        if speed > params.v_max * (1 + 1e-9):
            binding = "v_max"
    if binding is None and E2 + land_E > E_r:
        binding = "energy-rendezvous"
    return LegPlan(float(t), x, ps, float(t_R), v, max(dt, 0.0), E2, land_T, land_E,
                   binding is None, binding)


def replan_or_hold(previous: MissionPlan | None, fresh: MissionPlan | None, now: float) -> MissionPlan:
    """Prefer a feasible fresh plan; otherwise keep the previous one shifted
    to ``now``. Raises :class:`AbortSignal` when neither is usable."""
    if fresh is not None and fresh.feasible:
        return fresh
    if previous is None or not previous.feasible:
        raise AbortSignal("no feasible plan and none held")
    elapsed = now - previous.t0
    if elapsed >= previous.durations[0]:
        raise AbortSignal(f"held plan expired {elapsed - previous.durations[0]:.3f} s ago")
    return previous.shifted(elapsed) if elapsed > 0 else previous


def range_oracle(
    params: VehicleParams,
    E0: float,
    speeds=None,
    distances=None,
    step: float = 0.1,
) -> dict:
    """Brute-force maximum out-and-back ranges.

    For every (speed, distance) pair the energy of flying the distance at
    that speed is accumulated step by step; the cheapest speed per distance
    and mass gives the leg cost. Returns the largest distance whose
    out-and-back cost fits ``E0`` with and without the package drop.
    """
    speeds = np.arange(0.25, params.v_max + 1e-9, 0.05) if speeds is None else np.asarray(speeds)
    distances = np.arange(0.0, 2000.0, 0.5) if distances is None else np.asarray(distances)
    V, D = np.meshgrid(speeds, distances, indexing="ij")
    duration = D / V
    full_steps = np.floor(duration / step + 1e-12)
    remainder = duration - full_steps * step
    power = 0.5 * V * V + params.alpha
    per_mass = power * (full_steps * step + remainder)
    leg_a = params.m_a * per_mass.min(axis=0)
    leg_b = params.m_b * per_mass.min(axis=0)
    no_drop = distances[leg_a + leg_a <= E0]
    with_drop = distances[leg_a + leg_b <= E0]
    return {
        "no_drop_range_m": float(no_drop.max()) if no_drop.size else 0.0,
        "with_drop_range_m": float(with_drop.max()) if with_drop.size else 0.0,
        "best_speed_mps": float(speeds[np.argmin(per_mass[:, -1])]),
    }
