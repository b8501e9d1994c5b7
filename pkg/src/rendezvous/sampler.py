"""Cross-entropy search over per-path rendezvous times.

Each row of a batch belongs to one path. A sampled time is mapped to the
driver's expected arc-length on that path (historical speed plus the
learned deviation, integrated by quadrature), costed with risk-adjusted
energy, ranked, and the per-row elites refit the Gaussian proposal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import Path, PathMap, ReachableSet
from .gpr import GPModel, KernelConfig, predict
from .numerics import QuadratureError, integrate, integrate_segments, select_top_k
from .traffic import HistoricalProfile

__all__ = [
    "ProposalDistribution",
    "SampleBatch",
    "EliteResult",
    "SamplerSettings",
    "initial_proposal",
    "sample_batch",
    "deviation_moments",
    "propagate_position",
    "propagate_batch",
    "energy_cost",
    "rank_and_select",
    "update_parameters",
    "cross_entropy_step",
]

log = logging.getLogger(__name__)

MAX_RETRIES = 100


@dataclass(frozen=True)
class ProposalDistribution:
    mu: np.ndarray
    sigma: np.ndarray  # variances, s^2
    lam: float = 0.5
    n_s: int = 5
    n_e: int = 2

    def __post_init__(self):
        if not self.n_s > self.n_e >= 1:
            raise ValueError(f"need n_s > n_e >= 1, got n_s={self.n_s}, n_e={self.n_e}")
        if self.lam <= 0:
            raise ValueError("exploration floor lambda must be positive")
        if np.shape(self.mu) != np.shape(self.sigma):
            raise ValueError("mu and sigma must have the same length")


@dataclass(frozen=True)
class SamplerSettings:
    m_a: float = 3.0
    m_b: float = 1.0
    alpha: float = 20.0
    v_max: float = 15.0
    t_c: float = 0.5
    gamma_scale: float = 1.96
    strategy: str = "worst_first"
    weights: tuple | None = None
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6

    def __post_init__(self):
        if self.strategy not in ("best_first", "worst_first"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class SampleBatch:
    times: np.ndarray          # (N, n_s)
    thetas: np.ndarray         # expected arc-length
    points: np.ndarray         # (N, n_s, 2)
    h: np.ndarray              # confidence half-width in arc-length
    energies: np.ndarray       # risk-adjusted cost, +inf when infeasible
    rho_r: np.ndarray          # range gain towards the UAS, metres
    clamped: np.ndarray        # arc-length hit the path end
    active: np.ndarray         # bool per row
    path_ids: tuple = ()


@dataclass
class EliteResult:
    elite_idx: np.ndarray      # (N, n_e) column indices, best first
    elite_times: np.ndarray
    elite_costs: np.ndarray
    target_path: int | None
    target_row: int | None
    p_star: np.ndarray | None
    t_R: float | None
    theta_star: float | None
    h_star: float | None
    rho_r_star: float | None
    best_cost: float | None
    row_best_cost: np.ndarray = field(default_factory=lambda: np.empty(0))
    infeasible_rows: tuple = ()
    fallback: bool = False

    def candidate(self, batch: SampleBatch, row: int) -> dict:
        """Best sample of ``row`` as a rendezvous candidate."""
        j = int(self.elite_idx[row, 0])
        return {
            "path": batch.path_ids[row],
            "t_R": float(batch.times[row, j]),
            "theta": float(batch.thetas[row, j]),
            "h": float(batch.h[row, j]),
            "point": batch.points[row, j].copy(),
            "cost": float(batch.energies[row, j]),
        }


def initial_proposal(
    path_map: PathMap,
    uas_position,
    t0: float,
    v_max: float,
    horizon: float,
    lam: float = 0.5,
    n_s: int = 5,
    n_e: int = 2,
) -> ProposalDistribution:
    """Mean: time to fly to each path midpoint at top speed; spread: a quarter
    of the horizon."""
    x0 = np.asarray(uas_position, dtype=float)
    mids = np.array([p.points(0.5 * p.length) for p in path_map.paths])
    mu = t0 + np.hypot(*(mids - x0).T) / v_max
    sigma = np.full(len(mu), (0.25 * horizon) ** 2)
    return ProposalDistribution(mu, sigma, lam, n_s, n_e)


def sample_batch(
    prop: ProposalDistribution,
    rng: np.random.Generator,
    t0: float,
    t_c: float,
) -> np.ndarray:
    """Draw an (N, n_s) matrix of times, each row from its own Gaussian.

    Draws at or before ``t0 + t_c`` are redrawn up to 100 times, then clamped
    just past the bound. Rows of pruned paths are drawn too (they are masked
    later) so the matrix shape never changes.
    """
    N = len(prop.mu)
    sd = np.sqrt(prop.sigma)[:, None]
    times = prop.mu[:, None] + sd * rng.standard_normal((N, prop.n_s))
    floor = t0 + t_c
    for _ in range(MAX_RETRIES):
        bad = times <= floor
        if not bad.any():
            break
        redraw = prop.mu[:, None] + sd * rng.standard_normal((N, prop.n_s))
        times = np.where(bad, redraw, times)
    else:
        times = np.maximum(times, floor + 1e-3)
    return times


def deviation_moments(gp: GPModel | None, prior: KernelConfig, x):
    if gp is None:
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x), np.full_like(x, prior.signal_variance)
    return predict(gp, x)


def _integrands(gp, prior, profile):
    def f(t):
        hist = profile(t)
        mu, var = deviation_moments(gp, prior, hist)
        return np.stack([hist + mu, var])
    return f


def propagate_position(
    path: Path,
    gp: GPModel | None,
    profile: HistoricalProfile,
    theta0: float,
    t0: float,
    t_sample: float,
    gamma_scale: float = 1.96,
    prior: KernelConfig | None = None,
    abs_tol: float = 1e-8,
    rel_tol: float = 1e-6,
) -> dict:
    """Expected driver position at ``t_sample`` and the propagated
    half-width ``h`` (arc-length units)."""
    if t_sample <= t0:
        raise ValueError(f"sample time {t_sample} must be after t0={t0}")
    prior = prior or (gp.kernel if gp is not None else KernelConfig())
    res = integrate(_integrands(gp, prior, profile), t0, t_sample, abs_tol, rel_tol)
    theta = theta0 + float(res.value[0])
    h = gamma_scale * float(res.value[1])
    return {
        "theta": theta,
        "h": h,
        "point": path.points(theta),
        "clamped": not 0.0 <= theta <= path.length,
    }


def propagate_batch(
    path_map: PathMap,
    gp: GPModel | None,
    profile: HistoricalProfile,
    theta0: float,
    t0: float,
    times: np.ndarray,
    gamma_scale: float = 1.96,
    prior: KernelConfig | None = None,
    abs_tol: float = 1e-8,
    rel_tol: float = 1e-6,
):
    """Vectorized :func:`propagate_position` for a whole batch.

    All paths share one historical profile, so the integrals are computed
    once over the segments between sorted sample times and accumulated.
    Returns (thetas, h, valid); ``valid`` is all False when the quadrature
    did not converge.
    """
    prior = prior or (gp.kernel if gp is not None else KernelConfig())
    f = _integrands(gp, prior, profile)
    flat = times.ravel()
    order = np.argsort(flat, kind="stable")
    edges = np.concatenate([[t0], np.maximum(flat[order], t0)])
    cum_mean = np.empty(flat.size)
    cum_var = np.empty(flat.size)
    try:
        res = integrate_segments(f, edges, abs_tol, rel_tol)
        cum_mean[order] = np.cumsum(res.value[0])
        cum_var[order] = np.cumsum(res.value[1])
        valid = np.ones(flat.size, dtype=bool)
    except QuadratureError as exc:
        log.debug("propagation did not converge: %s", exc)
        cum_mean[:] = cum_var[:] = 0.0
        valid = np.zeros(flat.size, dtype=bool)
    thetas = theta0 + cum_mean.reshape(times.shape)
    h = gamma_scale * cum_var.reshape(times.shape)
    return thetas, h, valid.reshape(times.shape)


def _range_gain(p_mid, p_plus, p_minus, ref):
    r_plus = np.linalg.norm(p_plus - ref, axis=-1)
    r_minus = np.linalg.norm(p_minus - ref, axis=-1)
    r = np.linalg.norm(p_mid - ref, axis=-1)
    return r, np.maximum(np.maximum(r, r_plus), r_minus) - r


def energy_cost(
    points,
    points_plus,
    points_minus,
    t_sample,
    t0: float,
    uas_position,
    landing_site,
    settings: SamplerSettings,
    t_land: float | None = None,
):
    """Risk-adjusted energy of meeting the driver at each sample.

    The outbound term uses mass ``m_a`` and the inflated range r + rho_r
    towards the UAS; the return term (mass ``m_b``) uses the range towards
    the landing site and is only added when a previous plan supplied the
    landing time ``t_land``. Samples later than ``t_land - t_c`` get the
    shortest legal return leg instead. Any leg above ``v_max`` costs +inf.

    Returns (energy, rho_r) arrays broadcast over the sample dimensions.
    """
    s = settings
    pts = np.asarray(points, dtype=float)
    t = np.asarray(t_sample, dtype=float)
    x0 = np.asarray(uas_position, dtype=float)
    r, rho = _range_gain(pts, np.asarray(points_plus), np.asarray(points_minus), x0)
    tau = t - t0
    with np.errstate(divide="ignore", invalid="ignore"):
        v_r = (r + rho) / tau
    energy = s.m_a * tau * (0.5 * v_r * v_r + s.alpha)
    infeasible = (tau <= 0) | (v_r > s.v_max)
    if t_land is not None:
        land = np.asarray(landing_site, dtype=float)
        r_l, rho_l = _range_gain(pts, np.asarray(points_plus), np.asarray(points_minus), land)
        need = r_l + rho_l
        shortest = np.maximum(s.t_c, need / s.v_max)
        tau_l = np.maximum(t_land - t, shortest)
        v_l = need / tau_l
        energy = energy + s.m_b * tau_l * (0.5 * v_l * v_l + s.alpha)
        infeasible |= v_l > s.v_max * (1 + 1e-12)
    energy = np.where(infeasible, np.inf, energy)
    return energy, rho


def rank_and_select(
    batch: SampleBatch,
    n_e: int,
    strategy: str = "worst_first",
    weights: Sequence[float] | None = None,
) -> EliteResult:
    """Per-row elites and the target path.

    Target = argmin over active rows with a finite best cost of
    ``w * best`` (best first) or ``-w * best`` (worst first). Rows with fewer
    than ``n_e`` finite costs are reported in ``infeasible_rows``; if such a
    row would have been the worst-first choice the target falls back to the
    worst feasible row and ``fallback`` is set.
    """
    N, n_s = batch.energies.shape
    w = np.ones(N) if weights is None else np.asarray(weights, dtype=float)
    elite_idx = np.empty((N, n_e), dtype=int)
    for i in range(N):
        elite_idx[i] = select_top_k(batch.energies[i], n_e, "min")
    rows = np.arange(N)[:, None]
    elite_costs = batch.energies[rows, elite_idx]
    elite_times = batch.times[rows, elite_idx]
    best = elite_costs[:, 0]
    finite_counts = np.isfinite(batch.energies).sum(axis=1)
    infeasible = tuple(int(i) for i in range(N) if batch.active[i] and finite_counts[i] < n_e)

    candidates = [i for i in range(N) if batch.active[i] and np.isfinite(best[i])]
    fallback = False
    if not candidates:
        return EliteResult(
            elite_idx, elite_times, elite_costs, None, None, None, None, None, None, None, None,
            best, infeasible, False,
        )
    sign = 1.0 if strategy == "best_first" else -1.0
    scores = np.array([sign * w[i] * best[i] for i in candidates])
    target = candidates[int(np.argmin(scores))]
    if strategy == "worst_first":
        # an active row with no finite sample would have been the worst one
        fallback = any(not np.isfinite(best[i]) for i in range(N) if batch.active[i])
    j = int(elite_idx[target, 0])
    return EliteResult(
        elite_idx=elite_idx,
        elite_times=elite_times,
        elite_costs=elite_costs,
        target_path=batch.path_ids[target] if batch.path_ids else target,
        target_row=target,
        p_star=batch.points[target, j].copy(),
        t_R=float(batch.times[target, j]),
        theta_star=float(batch.thetas[target, j]),
        h_star=float(batch.h[target, j]),
        rho_r_star=float(batch.rho_r[target, j]),
        best_cost=float(best[target]),
        row_best_cost=best,
        infeasible_rows=infeasible,
        fallback=fallback,
    )


def update_parameters(
    prop: ProposalDistribution,
    elites: EliteResult,
    reset: ProposalDistribution | None = None,
) -> ProposalDistribution:
    """Row-wise mean and population variance of the elite times, plus the
    exploration floor. Rows without any finite elite keep their parameters
    unless ``reset`` is given: then the variance grows fourfold up to the
    reset variance, and once it is there the mean is re-seeded as well."""
    mu = prop.mu.copy()
    sigma = prop.sigma.copy()
    for i in range(len(mu)):
        keep = np.isfinite(elites.elite_costs[i])
        if not keep.any():
            if reset is not None:
                if sigma[i] >= reset.sigma[i]:
                    mu[i] = reset.mu[i]
                sigma[i] = min(4.0 * sigma[i], reset.sigma[i])
            continue
        times = elites.elite_times[i][keep]
        mu[i] = float(np.mean(times))
        sigma[i] = float(np.var(times)) + prop.lam
    return replace(prop, mu=mu, sigma=sigma)


def cross_entropy_step(
    prop: ProposalDistribution,
    rng: np.random.Generator,
    path_map: PathMap,
    reachable: ReachableSet,
    gp: GPModel | None,
    profile: HistoricalProfile,
    theta0: float,
    t0: float,
    uas_position,
    settings: SamplerSettings,
    t_land: float | None = None,
    prior: KernelConfig | None = None,
    budget: float | None = None,
    reset: ProposalDistribution | None = None,
):
    """One Sample -> Rank -> UpdateParameter pass. Returns
    (new proposal, batch, elites).

    Samples whose cost exceeds ``budget`` (the remaining energy) count as
    infeasible; see :func:`update_parameters` for ``reset``.
    """
    times = sample_batch(prop, rng, t0, settings.t_c)
    thetas, h, valid = propagate_batch(
        path_map, gp, profile, theta0, t0, times, settings.gamma_scale, prior,
        settings.abs_tol, settings.rel_tol,
    )
    N, n_s = times.shape
    points = np.empty((N, n_s, 2))
    plus = np.empty((N, n_s, 2))
    minus = np.empty((N, n_s, 2))
    clamped = np.zeros((N, n_s), dtype=bool)
    for i, path in enumerate(path_map.paths):
        points[i] = path.points(thetas[i])
        plus[i] = path.points(thetas[i] + h[i])
        minus[i] = path.points(thetas[i] - h[i])
        clamped[i] = (thetas[i] < 0) | (thetas[i] > path.length)
    energies, rho = energy_cost(
        points, plus, minus, times, t0, uas_position, path_map.landing_site, settings, t_land,
    )
    energies = np.where(valid, energies, np.inf)
    if budget is not None:
        energies = np.where(energies <= budget, energies, np.inf)
    active = np.array([p.id in reachable.active for p in path_map.paths])
    batch = SampleBatch(times, thetas, points, h, energies, rho, clamped, active, tuple(path_map.ids))
    elites = rank_and_select(batch, prop.n_e, settings.strategy, settings.weights)
    return update_parameters(prop, elites, reset), batch, elites
