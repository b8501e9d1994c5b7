import math

import numpy as np
import pytest

from rendezvous.geometry import Path
from rendezvous.planner import VehicleParams, min_transfer
from rendezvous.risk import (
    PathCandidate,
    assess_decision_risk,
    extra_fuel_distribution,
    required_energy_map,
)

from oracles import cvar_lower_closed_form

P = VehicleParams()
LINE = Path.from_vertices(1, [[0, 100], [400, 100]])


def linear_candidate(slope=2.0, base=1000.0, theta=50.0, h=10.0):
    return PathCandidate(LINE, theta, h, lambda th: base + slope * np.asarray(th, dtype=float))


def test_linear_map_is_gaussian_with_closed_form_cvar():
    cand = linear_candidate()
    r = extra_fuel_distribution(cand, 5000.0, 0.05)
    assert r.method == "gaussian"
    assert r.mean == pytest.approx(5000.0 - 1100.0)
    assert r.sigma == pytest.approx(2.0 * 10.0 / 1.96)
    assert r.cvar == pytest.approx(cvar_lower_closed_form(r.mean, r.sigma, 0.05), abs=1e-6)
    assert r.rho_d == -r.cvar


def test_curved_map_falls_back_to_monte_carlo():
    cand = PathCandidate(LINE, 50.0, 10.0, lambda th: 1000.0 + (np.asarray(th) - 50.0) ** 2)
    r = extra_fuel_distribution(cand, 5000.0, 0.05, rng=np.random.default_rng(0))
    assert r.method == "monte_carlo"
    # X = 4000 - s^2 Z^2 with s = h / 1.96: its lower 5% tail sits near 4000 - s^2 * 5.5
    s = 10.0 / 1.96
    assert 4000 - 8 * s * s < r.cvar < 4000 - 4 * s * s


def test_degenerate_and_infeasible():
    r = extra_fuel_distribution(linear_candidate(h=0.0), 2000.0, 0.05)
    assert r.method == "deterministic" and r.sigma == 0.0 and r.cvar == pytest.approx(900.0)
    dead = PathCandidate(LINE, 50.0, 1.0, lambda th: np.full(np.shape(th), np.inf))
    assert extra_fuel_distribution(dead, 1e6, 0.05).rho_d == math.inf
    assert extra_fuel_distribution(PathCandidate(LINE, 1, 1, None), 1e6, 0.05).rho_d == math.inf


def test_gate_uses_worst_active_path():
    cands = {1: linear_candidate(base=1000.0), 2: linear_candidate(base=3000.0), 3: None}
    rep = assess_decision_risk(cands, 5000.0, {1, 2}, kappa=0.0)
    assert rep.worst_path == 2 and rep.verdict == "proceed"
    assert rep.worst_rho == rep.per_path[2].rho_d < 0
    rep = assess_decision_risk(cands, 5000.0, {1, 2, 3}, kappa=0.0)
    assert rep.worst_path == 3 and rep.verdict == "abort"
    rep = assess_decision_risk(cands, 5000.0, {1, 2}, kappa=-math.inf)
    assert rep.verdict == "abort"
    assert assess_decision_risk(cands, 5000.0, set()).verdict == "abort"
    with pytest.raises(ValueError):
        assess_decision_risk(cands, 5000.0, {1}, gamma=0.0)


def test_verdict_monotone_in_kappa():
    cands = {1: linear_candidate(base=4000.0)}
    verdicts = [assess_decision_risk(cands, 5000.0, {1}, kappa=k).verdict
                for k in (-math.inf, -1e4, -500.0, 0.0, 1e4, math.inf)]
    first = verdicts.index("proceed")
    assert all(v == "proceed" for v in verdicts[first:])


def test_required_energy_map_hand_values():
    e = required_energy_map(LINE, [0, 0], 0.0, 20.0, [0, 0], P, theta_hat=0.0)
    land_T, land_E = min_transfer(100.0, P.m_b, P)
    expected = P.m_a * (0.5 * 25.0 + P.alpha) * 20.0 + land_E
    assert float(e(np.array([0.0]))[0]) == pytest.approx(expected)
    # unreachable in time
    assert math.isinf(float(e(np.array([399.0]))[0]))
