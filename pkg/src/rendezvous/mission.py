"""Closed-loop mission simulation.

Cruise: every control period the deviation GP is refit, one cross-entropy
pass picks a rendezvous candidate, the planner re-places the point of no
return, and the UAS flies the first segment for one period while the
driver streams measurements. When the decision time drops to epsilon the
CVaR gate is evaluated exactly once and the UAS either commits to the
rendezvous or flies home.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .config import ConfigError, ScenarioConfig
from .geometry import PathMap, ReachableSet, prune_reachable
from .gpr import Dataset, GPModel, InsufficientDataError, fit, predict
from .logs import MissionLog
from .planner import (
    AbortSignal,
    MissionPlan,
    VehicleParams,
    min_transfer,
    range_oracle,
    replan_or_hold,
    segment_energy,
    solve_ocp,
    solve_rendezvous_leg,
)
from .risk import PathCandidate, RiskReport, assess_decision_risk, required_energy_map
from .sampler import (
    EliteResult,
    SampleBatch,
    cross_entropy_step,
    initial_proposal,
    propagate_position,
)
from .traffic import DriverTruth, Measurement, step_driver

__all__ = [
    "ScenarioError",
    "MissionState",
    "SafetyCertificate",
    "MissionResult",
    "check_persistent_safety",
    "run_mission",
    "run_convergence_trial",
]

log = logging.getLogger(__name__)

PHASES = ("cruise", "committed_rendezvous", "aborting", "landing", "landed", "failed")


class _NoPlan:
    feasible = False


_NO_PLAN = _NoPlan()


class ScenarioError(ConfigError):
    """The scenario admits no persistently safe plan at t = 0."""


@dataclass
class MissionState:
    t: float
    position: np.ndarray
    E_r: float
    carrying: bool = True
    phase: str = "cruise"
    plan: MissionPlan | None = None
    step: int = 0

    def mass(self, p: VehicleParams) -> float:
        return p.m_a if self.carrying else p.m_b


@dataclass(frozen=True)
class SafetyCertificate:
    margin: float        # E_r minus the cheapest direct flight to the abort site
    plan_margin: float   # E_r minus E1 + E4 of the held plan, re-evaluated from here

    @property
    def safe(self) -> bool:
        return self.margin >= 0.0 and self.plan_margin >= -1e-6 * max(1.0, abs(self.plan_margin))


@dataclass
class MissionResult:
    log: MissionLog
    phase: str
    delivered: bool
    verdict: str | None
    safety_trips: int
    min_E_r: float
    min_margin: float
    decision: dict = field(default_factory=dict)


def check_persistent_safety(
    state: MissionState, plan: MissionPlan | None, abort_to, params: VehicleParams
) -> SafetyCertificate:
    """Energy margin of the abort branch from the current state."""
    x = np.asarray(state.position, dtype=float)
    target = np.asarray(abort_to, dtype=float)
    mass = state.mass(params)
    _, direct = min_transfer(float(np.hypot(*(target - x))), mass, params)
    margin = state.E_r - direct
    if plan is None:
        return SafetyCertificate(margin, margin)
    t1, t4 = float(plan.durations[0]), float(plan.durations[3])
    x1 = plan.waypoints[0]
    d1 = float(np.hypot(*(x1 - x)))
    d4 = float(np.hypot(*(plan.waypoints[3] - x1)))
    e1 = mass * (0.5 * (d1 / t1) ** 2 + params.alpha) * t1 if t1 > 0 else 0.0
    e4 = mass * (0.5 * (d4 / t4) ** 2 + params.alpha) * t4
    return SafetyCertificate(margin, state.E_r - e1 - e4)


class _Traffic:
    """Ground-truth driver, measurement stream, data set and path pruning."""

    def __init__(self, cfg: ScenarioConfig, path_map: PathMap, chosen: int,
                 rng: np.random.Generator, log_: MissionLog, truth_rule):
        t = cfg.traffic
        self.cfg = cfg
        self.map = path_map
        self.path = path_map.path(chosen)
        self.profile = cfg.profile()
        self.rule = truth_rule
        self.truth = DriverTruth(chosen, truth_rule, 0.0, 0.0, t.speed_sigma, t.position_sigma)
        self.rng = rng
        self.rate = t.measurement_rate
        self.data = Dataset(capacity=cfg.gp.capacity)
        self.reachable = ReachableSet.all_of(path_map)
        self.pending: frozenset | None = None
        self.pending_count = 0
        self.last: Measurement | None = None
        self.log = log_

    @property
    def position(self) -> np.ndarray:
        return self.path.points(self.truth.theta)

    def advance(self, dt: float) -> None:
        n = max(1, math.ceil(dt * self.rate - 1e-9))
        for _ in range(n):
            self.truth, m = step_driver(self.truth, self.profile, dt / n, self.rng, self.path)
            self.data.append(m.hist_speed, m.speed_meas - m.hist_speed)
            self.log.measurements.add(
                t=m.t, theta_meas=m.theta_meas, speed_meas=m.speed_meas,
                hist_speed=m.hist_speed, x_meas=m.point[0], y_meas=m.point[1],
            )
            self.last = m
            self._prune(m)

    def _prune(self, m: Measurement) -> None:
        run = self.cfg.run
        if len(self.reachable.active) == 1:
            return
        try:
            cand = prune_reachable(self.reachable, self.map, m.theta_meas, m.point,
                                   run.match_tolerance, run.match_window)
        except ValueError:
            # off every path, or behind the accepted arc-length: sensor fault
            return
        active = self.reachable.active
        if cand.active != active:
            if cand.active == self.pending:
                self.pending_count += 1
            else:
                self.pending, self.pending_count = cand.active, 1
            if self.pending_count >= run.confirmations:
                active = cand.active
                self.pending, self.pending_count = None, 0
        else:
            self.pending, self.pending_count = None, 0
        self.reachable = ReachableSet(active, cand.driver_theta)

    @property
    def theta0(self) -> float:
        return self.last.theta_meas if self.last is not None else 0.0


class _Mission:
    def __init__(self, cfg: ScenarioConfig, seed: int | None):
        self.cfg = cfg
        self.seed = cfg.run.seed if seed is None else int(seed)
        self.map = cfg.path_map()
        self.params = cfg.vehicle()
        self.kernel = cfg.kernel()
        self.settings = cfg.sampler_settings()
        self.landing = self.map.landing_site
        self.abort_to = self.map.abort_site if cfg.planner.abort_to == "abort_site" else self.landing
        ss = np.random.SeedSequence(self.seed)
        choice_ss, driver_ss, sampler_ss, risk_ss = ss.spawn(4)
        self.sampler_rng = np.random.default_rng(sampler_ss)
        self.risk_rng = np.random.default_rng(risk_ss)
        chosen = cfg.traffic.chosen_path
        if chosen is None:
            chosen = int(np.random.default_rng(choice_ss).choice(self.map.ids))
        self.chosen = chosen
        self.log = MissionLog()
        self.traffic = _Traffic(cfg, self.map, chosen, np.random.default_rng(driver_ss),
                                self.log, cfg.deviation())
        start = self.landing if cfg.planner.start is None else np.asarray(cfg.planner.start, float)
        self.state = MissionState(0.0, np.array(start, dtype=float), float(cfg.planner.E_r0))
        self.prop = None
        self.iteration = 0
        self.safety_trips = 0
        self.min_margin = math.inf
        self.min_E_r = self.state.E_r
        self.fit_seconds: list[float] = []
        self.verdict = None
        self.decision: dict = {}
        self.secondary: tuple = (None, None)
        self.planned_path: int | None = None
        self.delivered = False
        self.jettisoned = False
        self._gp: GPModel | None = None

    # -- shared steps ----------------------------------------------------
    def regress(self) -> GPModel | None:
        data = self.traffic.data
        if len(data) < 2:
            return None
        n = min(self.cfg.gp.n_inducing, len(data))
        start = time.perf_counter()
        try:
            gp = fit(data, self.kernel, self.cfg.gp.kind, n_inducing=n)
        except InsufficientDataError:
            return None
        self.fit_seconds.append(time.perf_counter() - start)
        lo, hi = gp.observed
        grid = np.linspace(lo, hi, 50)
        mu, _ = predict(gp, grid)
        truth = self.traffic.rule(grid)
        keep = np.abs(grid - self.traffic.rule.center) > 0.1 if self.traffic.rule.kind == "sign" else slice(None)
        err = (mu - truth)[keep]
        rmse = float(np.sqrt(np.mean(err ** 2))) if np.size(err) else math.nan
        self.log.gp.add(t=self.state.t, M=gp.size,
                        n_inducing=None if gp.inducing is None else len(gp.inducing),
                        jitter=gp.jitter, rmse_vs_truth=rmse)
        return gp

    def fresh_proposal(self):
        st, p, c = self.state, self.params, self.cfg.sampler
        return initial_proposal(self.map, st.position, st.t, p.v_max, p.t_max, c.lam, c.n_s, c.n_e)

    def sample(self, gp, t_land, budget: bool = True):
        st = self.state
        self.prop, batch, elites = cross_entropy_step(
            self.prop, self.sampler_rng, self.map, self.traffic.reachable, gp,
            self.traffic.profile, self.traffic.theta0, st.t, st.position, self.settings,
            t_land=t_land, prior=self.kernel, budget=st.E_r if budget else None,
            reset=self.fresh_proposal(),
        )
        self.iteration += 1
        self.log.sampler.add(
            iter=self.iteration, t=st.t, phase=st.phase,
            mu_A=[float(v) for v in self.prop.mu], sigma_A=[float(v) for v in self.prop.sigma],
            target_path=elites.target_path,
            p_star_x=None if elites.p_star is None else float(elites.p_star[0]),
            p_star_y=None if elites.p_star is None else float(elites.p_star[1]),
            t_R=elites.t_R, best_cost=elites.best_cost, rho_r_star=elites.rho_r_star,
            infeasible_rows=list(elites.infeasible_rows), fallback=elites.fallback,
        )
        return batch, elites

    def candidates(self, batch: SampleBatch, elites: EliteResult) -> dict:
        st = self.state
        out = {}
        for row, pid in enumerate(batch.path_ids):
            if not batch.active[row]:
                continue
            if not np.isfinite(elites.row_best_cost[row]):
                out[pid] = None
                continue
            c = elites.candidate(batch, row)
            path = self.map.path(pid)
            energy = required_energy_map(path, st.position, st.t, c["t_R"], self.landing,
                                         self.params, c["theta"])
            out[pid] = PathCandidate(path, c["theta"], c["h"], energy)
        return out

    def assess(self, batch, elites, decision: bool) -> RiskReport:
        r = self.cfg.risk
        report = assess_decision_risk(
            self.candidates(batch, elites), self.state.E_r, self.traffic.reachable.active,
            r.gamma, r.kappa, self.cfg.sampler.gamma_scale, self.risk_rng,
        )
        for pid, pr in report.per_path.items():
            self.log.risk.add(
                t=self.state.t, path=pid, extra_fuel_mean=pr.mean, extra_fuel_sigma=pr.sigma,
                cvar=pr.cvar, rho_d=pr.rho_d, method=pr.method, verdict=report.verdict,
                decision=int(decision),
            )
        others = [pr.rho_d for pid, pr in report.per_path.items() if pid != elites.target_path]
        if others:
            self.secondary = (max(others), "decision" if decision else "monitor")
        return report

    def fly(self, velocity, dt: float) -> None:
        st = self.state
        v = np.asarray(velocity, dtype=float)
        speed = float(np.hypot(*v))
        st.position = st.position + v * dt
        st.E_r -= st.mass(self.params) * (0.5 * speed * speed + self.params.alpha) * dt
        self.traffic.advance(dt)
        st.t += dt
        st.step += 1
        self.min_E_r = min(self.min_E_r, st.E_r)
        if st.E_r < 0 and st.phase != "failed":
            log.error("energy exhausted at t=%.3f (E_r=%.3f)", st.t, st.E_r)
            st.phase = "failed"

    def log_state(self, cert: SafetyCertificate | None = None) -> None:
        st = self.state
        tr = self.traffic
        dpos = tr.position
        self.log.state.add(
            step=st.step, t=st.t, phase=st.phase, x=float(st.position[0]), y=float(st.position[1]),
            E_r=st.E_r, mass=st.mass(self.params), carrying=st.carrying,
            driver_theta=tr.truth.theta, driver_x=float(dpos[0]), driver_y=float(dpos[1]),
            n_active=len(tr.reachable.active), active=sorted(tr.reachable.active),
            t1=None if st.plan is None or st.phase != "cruise" else st.plan.decision_time,
            safety_margin=None if cert is None else cert.margin,
            plan_margin=None if cert is None else cert.plan_margin,
        )

    def log_plan(self, plan: MissionPlan, held: bool) -> None:
        self.log.plan.add(step=self.state.step, t=self.state.t, path=self.planned_path,
                          held=held, **plan.as_row())

    def plan_for(self, batch, elites, rows, held_plan):
        """First feasible plan over ``rows`` (else the first attempt) and its path."""
        st = self.state
        warm = None
        if held_plan is not None:
            elapsed = st.t - held_plan.t0
            warm = (float(held_plan.waypoints[0, 0]), float(held_plan.waypoints[0, 1]),
                    float(held_plan.durations[0]) - elapsed)
        first = (_NO_PLAN, None)
        for k, row in enumerate(rows):
            c = elites.candidate(batch, row)
            plan = solve_ocp(st.position, st.E_r, st.t, c["point"], c["t_R"], self.landing,
                             self.params, abort_site=self.abort_to, warm_start=warm,
                             diagnose=k == 0)
            if plan.feasible:
                return plan, c["path"]
            if k == 0:
                first = (plan, c["path"])
        return first

    def reseed(self, row: int | None) -> None:
        if row is None:
            return
        reset = self.fresh_proposal()
        mu, sigma = self.prop.mu.copy(), self.prop.sigma.copy()
        mu[row], sigma[row] = reset.mu[row], reset.sigma[row]
        self.prop = replace(self.prop, mu=mu, sigma=sigma)

    def row_order(self, batch: SampleBatch, elites: EliteResult) -> list:
        if elites.target_row is None:
            return []
        sign = 1.0 if self.settings.strategy == "best_first" else -1.0
        w = self.settings.weights or (1.0,) * len(batch.path_ids)
        rest = [r for r in range(len(batch.path_ids))
                if r != elites.target_row and batch.active[r] and np.isfinite(elites.row_best_cost[r])]
        rest.sort(key=lambda r: (sign * w[r] * elites.row_best_cost[r], r))
        return [elites.target_row] + rest

    # -- phases ------------------------------------------------------------
    def check_initial(self) -> None:
        st = self.state
        d = float(np.hypot(*(self.abort_to - st.position)))
        _, need = min_transfer(d, self.params.m_a, self.params, 2 * self.params.t_c)
        if st.E_r < need:
            raise ScenarioError(
                f"planner.E_r0={st.E_r} is below the minimum abort energy {need:.3f} J at t=0"
            )

    def wait(self, dt: float) -> None:
        """Time passes with the UAS parked on the ground (no energy drawn)."""
        self.traffic.advance(dt)
        self.state.t += dt
        self.state.step += 1

    def initial_data(self) -> None:
        # the UAS waits on the ground while the first measurements arrive
        self.wait(self.cfg.run.initial_data)
        self.log_state()

    def cruise(self):
        cfg, st, p = self.cfg, self.state, self.params
        self.prop = self.fresh_proposal()
        last = None
        for _ in range(cfg.run.max_steps):
            gp = self.regress()
            held_plan = st.plan
            batch, elites = self.sample(gp, None if held_plan is None else held_plan.t_land)
            order = self.row_order(batch, elites)
            fresh = self.plan_for(batch, elites, order[:1], held_plan)
            if held_plan is None and not fresh[0].feasible:
                # nothing to fly yet: stay on the ground and let the
                # target row search again from a wide proposal
                self.reseed(elites.target_row)
                self.log_state()
                self.wait(cfg.run.T_s)
                continue
            try:
                plan = replan_or_hold(held_plan, fresh[0], st.t)
            except AbortSignal as exc:
                # the held plan expired: any other feasible row beats aborting
                fresh = self.plan_for(batch, elites, order[1:], held_plan)
                if not fresh[0].feasible:
                    log.info("cruise abort at t=%.2f: %s", st.t, exc)
                    self.decision = {"reason": f"no feasible plan: {exc}"}
                    return "abort", batch, elites
                plan = fresh[0]
            fresh, planned = fresh
            if plan is fresh:
                self.planned_path = planned
            st.plan = plan
            self.log_plan(plan, held=plan is not fresh)
            cert = check_persistent_safety(st, plan, self.abort_to, p)
            self.min_margin = min(self.min_margin, cert.margin)
            self.log_state(cert)
            if not cert.safe:
                self.safety_trips += 1
                log.warning("safety monitor trip at t=%.2f: %s", st.t, cert)
                self.decision = {"reason": "safety monitor trip"}
                return "abort", batch, elites
            last = (batch, elites)
            if plan.decision_time <= cfg.run.epsilon:
                return "decide", batch, elites
            if cfg.risk.monitor:
                self.assess(batch, elites, decision=False)
            dt = min(cfg.run.T_s, plan.decision_time)
            self.fly(plan.velocities[0], dt)
        self.decision = {"reason": "cruise step limit reached"}
        return "decide", *(last or (None, None))

    def decide(self, batch, elites) -> str:
        report = self.assess(batch, elites, decision=True)
        target = elites.target_path
        # a secondary path pruned before the decision keeps its last monitored value
        secondary, source = self.secondary
        self.verdict = report.verdict
        self.decision.update({
            "t": self.state.t,
            "verdict": report.verdict,
            "target_path": target,
            "worst_path": report.worst_path,
            "rho_d": {str(k): v.rho_d for k, v in report.per_path.items()},
            "secondary_rho_d": secondary,
            "secondary_source": source,
            "active": sorted(self.traffic.reachable.active),
        })
        return report.verdict

    def _leg_for(self, batch, elites, frozen):
        """Feasible rendezvous leg: the frozen target if any, else the
        cheapest feasible candidate, target row first."""
        st, p = self.state, self.params
        if frozen is not None:
            pid, t_R = frozen
            if pid in self.traffic.reachable.active and t_R > st.t:
                path = self.map.path(pid)
                gp = self._gp
                prop = propagate_position(path, gp, self.traffic.profile, self.traffic.theta0,
                                          st.t, t_R, self.cfg.sampler.gamma_scale, self.kernel)
                leg = solve_rendezvous_leg(st.position, st.E_r, st.t, prop["point"], t_R,
                                           self.landing, p)
                if leg.feasible:
                    return leg, frozen
        order = []
        if elites.target_row is not None:
            order.append(elites.target_row)
        order += [r for r in np.argsort(elites.row_best_cost, kind="stable") if r not in order]
        for row in order:
            if not batch.active[row]:
                continue
            for j in elites.elite_idx[row]:
                if not np.isfinite(batch.energies[row, j]):
                    continue
                leg = solve_rendezvous_leg(st.position, st.E_r, st.t, batch.points[row, j],
                                           float(batch.times[row, j]), self.landing, p)
                if leg.feasible:
                    return leg, (batch.path_ids[row], float(batch.times[row, j]))
        return None, None

    def committed(self) -> str:
        cfg, st, p = self.cfg, self.state, self.params
        st.phase = "committed_rendezvous"
        frozen = None
        leg = None
        for _ in range(cfg.run.max_steps):
            self._gp = self.regress()
            batch, elites = self.sample(self._gp, None if leg is None else leg.t_R + leg.land_duration)
            leg, target = self._leg_for(batch, elites, frozen)
            if leg is None:
                self.decision["miss"] = "no feasible rendezvous leg"
                return "aborting"
            if frozen is None and leg.t_R - st.t <= cfg.run.T_s + p.t_c:
                frozen = target
            self.log_state()
            remaining = leg.t_R - st.t
            dt = min(cfg.run.T_s, remaining)
            self.fly(leg.velocity, dt)
            if st.phase == "failed":
                return "failed"
            if dt >= remaining - 1e-12:
                gap = float(np.hypot(*(st.position - self.traffic.position)))
                self.decision["miss_distance"] = gap
                if gap <= cfg.run.rendezvous_radius:
                    st.carrying = False
                    self.delivered = True
                    return "landing"
                self.decision["miss"] = f"driver {gap:.2f} m away at t_R"
                return "aborting"
        self.decision["miss"] = "committed step limit reached"
        return "aborting"

    def go_home(self, target, phase: str) -> str:
        st, p = self.state, self.params
        st.phase = phase
        target = np.asarray(target, dtype=float)
        T = None  # leg time, fixed once: re-solving would floor the last fragment to t_c
        for _ in range(self.cfg.run.max_steps):
            d = float(np.hypot(*(target - st.position)))
            if d <= 1e-9:
                break
            if T is None:
                T, _ = min_transfer(d, st.mass(p), p)
            if st.carrying and segment_energy(p.m_a, d / T, T, p.alpha) > st.E_r:
                # cannot make it home with the package: release it
                st.carrying = False
                self.jettisoned = True
            self.log_state(check_persistent_safety(st, None, target, p))
            dt = min(self.cfg.run.T_s, T)
            self.fly((target - st.position) / T, dt)
            if st.phase == "failed":
                return "failed"
            if dt >= T - 1e-12:
                st.position = target.copy()
                break
            T -= dt
        st.phase = "landed"
        self.log_state()
        return "landed"

    def run(self) -> MissionResult:
        wall = time.perf_counter()
        self.check_initial()
        self.initial_data()
        outcome, batch, elites = self.cruise()
        if outcome == "decide" and batch is not None:
            verdict = self.decide(batch, elites)
        else:
            self.verdict = verdict = "abort"
            self.decision.setdefault("verdict", "abort")
        if verdict == "proceed":
            nxt = self.committed()
            if nxt == "landing":
                self.go_home(self.landing, "landing")
            elif nxt == "aborting":
                self.go_home(self.abort_to, "aborting")
        else:
            self.go_home(self.abort_to, "aborting")
        return self.finish(time.perf_counter() - wall)

    def finish(self, wall: float) -> MissionResult:
        st = self.state
        self.log.manifest.update({
            "seed": self.seed,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.to_dict(),
            "chosen_path": self.chosen,
            "final_phase": st.phase,
            "delivered": self.delivered,
            "package_jettisoned": self.jettisoned,
            "verdict": self.verdict,
            "decision": self.decision,
            "safety_trips": self.safety_trips,
            "min_energy_margin": self.min_margin,
            "min_E_r": self.min_E_r,
            "final_E_r": st.E_r,
            "final_t": st.t,
            "iterations": self.iteration,
            "ranges": _ranges(self.params, self.cfg.planner.E_r0),
        })
        self.log.timing.update({
            "wall_seconds": wall,
            "gp_fit_mean_seconds": float(np.mean(self.fit_seconds)) if self.fit_seconds else None,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        })
        return MissionResult(self.log, st.phase, self.delivered, self.verdict, self.safety_trips,
                             self.min_E_r, self.min_margin, self.decision)


@lru_cache(maxsize=16)
def _ranges(params: VehicleParams, E0: float) -> dict:
    return range_oracle(params, E0)


def run_mission(cfg: ScenarioConfig, seed: int | None = None) -> MissionResult:
    """Simulate one mission. Raises :class:`ScenarioError` when the energy
    budget cannot even cover an immediate abort."""
    return _Mission(cfg, seed).run()


def run_convergence_trial(cfg: ScenarioConfig, seed: int | None = None) -> dict:
    """Cross-entropy search alone, from a static UAS at a random position.

    The GP is refit every control period while the driver streams data.
    Returns per-iteration times, proposal means and variances.
    """
    m = _Mission(cfg, seed)
    box = cfg.run.start_box
    offset = np.random.default_rng(np.random.SeedSequence(m.seed).spawn(5)[4]).uniform(-box, box, 2)
    m.state.position = m.landing + offset
    m.initial_data()
    st, p = m.state, m.params
    m.prop = m.fresh_proposal()
    times, mus, sigmas = [], [], []
    for _ in range(cfg.run.iterations):
        gp = m.regress()
        # the UAS never flies here, so the energy budget does not prune samples
        m.sample(gp, None, budget=False)
        times.append(st.t)
        mus.append(m.prop.mu.copy())
        sigmas.append(m.prop.sigma.copy())
        m.traffic.advance(cfg.run.T_s)
        st.t += cfg.run.T_s
    return {"t": np.array(times), "mu": np.array(mus), "sigma": np.array(sigmas), "log": m.log}
