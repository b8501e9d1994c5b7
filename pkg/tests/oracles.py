"""Reference implementations used by the tests. They are written against
the mission model directly and share no code with the package."""

from __future__ import annotations

import math

import numpy as np


def leg_energy(mass, distance, duration, alpha):
    v = distance / duration
    return mass * (0.5 * v * v + alpha) * duration


def integrate_energy(mass, velocity, duration, alpha, dt=1e-3):
    """Left-Riemann integral of m (|v|^2 / 2 + alpha) over a constant-velocity leg."""
    n = max(1, int(round(duration / dt)))
    h = duration / n
    speed2 = float(np.dot(velocity, velocity))
    total = 0.0
    for _ in range(n):
        total += mass * (0.5 * speed2 + alpha) * h
    return total


def check_plan(plan, *, E_r, p_star, t_R, landing, abort, m_a, m_b, alpha, v_max, t_max, t_c, tol=1e-6):
    """Every violated constraint of a four-leg plan, as a list of strings.

    Legs: origin -> x1 (t1, loaded), x1 -> p* (t2, loaded),
    p* -> landing (t3, unloaded), x1 -> abort site (t4, loaded).
    """
    bad = []
    x0 = np.asarray(plan.origin, float)
    x1 = np.asarray(plan.waypoints[0], float)
    t = [float(v) for v in plan.durations]
    starts = [x0, x1, np.asarray(p_star, float), x1]
    ends = [x1, np.asarray(p_star, float), np.asarray(landing, float), np.asarray(abort, float)]
    masses = [m_a, m_a, m_b, m_a]
    if not np.allclose(plan.waypoints[1], p_star, atol=tol):
        bad.append("rendezvous waypoint")
    if not np.allclose(plan.waypoints[2], landing, atol=tol):
        bad.append("landing waypoint")
    if not np.allclose(plan.waypoints[3], abort, atol=tol):
        bad.append("abort waypoint")
    if abs(plan.t0 + t[0] + t[1] - t_R) > tol * max(1.0, t_R):
        bad.append("rendezvous time")
    e = []
    for k in range(4):
        if t[k] < t_c - tol:
            bad.append(f"dwell {k + 1}")
        d = float(np.hypot(*(ends[k] - starts[k])))
        if d / t[k] > v_max * (1 + tol):
            bad.append(f"speed {k + 1}")
        e.append(leg_energy(masses[k], d, t[k], alpha))
        if abs(e[k] - plan.energies[k]) > tol * max(1.0, e[k]):
            bad.append(f"energy bookkeeping {k + 1}")
    scale = max(1.0, E_r)
    if e[0] + e[1] + e[2] > E_r + tol * scale:
        bad.append("rendezvous energy")
    if e[0] + e[3] > E_r + tol * scale:
        bad.append("abort energy")
    if t[0] + t[1] + t[2] > t_max * (1 + tol):
        bad.append("rendezvous horizon")
    if t[0] + t[3] > t_max * (1 + tol):
        bad.append("abort horizon")
    return bad


def max_range(E0, mass_out, mass_back, alpha, v_max, dv=0.01):
    """Largest out-and-back distance for energy E0, by a scan over speeds.

    Energy per metre at speed v is m (v/2 + alpha/v); both legs use their own
    cheapest speed.
    """
    v = np.arange(dv, v_max + dv / 2, dv)
    per_metre = 0.5 * v + alpha / v
    best = float(per_metre.min())
    return E0 / ((mass_out + mass_back) * best)


def cvar_lower_closed_form(mu, sigma, gamma):
    """Mean of N(mu, sigma^2) below its gamma-quantile."""
    from statistics import NormalDist

    z = NormalDist().inv_cdf(gamma)
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return mu - sigma * pdf / gamma


def dense_gp(X, Y, Xs, kernel, noise):
    """Full GP posterior by explicit inversion."""
    K = kernel(X[:, None], X[None, :]) + noise * np.eye(len(X))
    Ks = kernel(Xs[:, None], X[None, :])
    Kinv = np.linalg.inv(K)
    mean = Ks @ Kinv @ Y
    var = kernel(Xs, Xs) - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    return mean, var


def matern32(ell, sf2):
    def k(a, b):
        r = np.abs(a - b) / ell
        return sf2 * (1 + math.sqrt(3) * r) * np.exp(-math.sqrt(3) * r)
    return k
