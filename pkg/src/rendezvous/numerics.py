"""Shared numerical kernels: adaptive Gauss-Kronrod quadrature, partial
selection and Gaussian tail expectations."""

from __future__ import annotations

import heapq
from functools import lru_cache
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

__all__ = [
    "QuadratureResult",
    "QuadratureError",
    "integrate",
    "integrate_segments",
    "select_top_k",
    "gaussian_cvar_lower",
    "gaussian_var_lower",
]

# 15-point Kronrod abscissae on [-1, 1] (non-negative half, descending).
# Odd entries (1, 3, 5, 7) are the 7-point Gauss nodes.
_XGK = np.array([
    0.9914553711208126392068546975263285166,
    0.9491079123427585245261896840478512624,
    0.8648644233597690727897127886409262012,
    0.7415311855993944398638647732807884070,
    0.5860872354676911302941448382587295984,
    0.4058451513773971669066064120769614633,
    0.2077849550078984676006894037732449134,
    0.0000000000000000000000000000000000000,
])
_WGK = np.array([
    0.0229353220105292249637320080589695920,
    0.0630920926299785532907006631892042866,
    0.1047900103222501838398763225415180174,
    0.1406532597155259187451895905102379204,
    0.1690047266392679028265834265985502841,
    0.1903505780647854099132564024210136828,
    0.2044329400752988924141619992346490847,
    0.2094821410847278280129991748917142637,
])
_WG = np.array([
    0.1294849661688696932706114326790820183,
    0.2797053914892766679014677714237795825,
    0.3818300505051189449503697754889751339,
    0.4179591836734693877551020408163265306,
])

# Full node/weight vectors, ordered from -1 to +1.
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD_W = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS_W = np.zeros(15)
_GAUSS_W[[1, 3, 5]] = _WG[:3]
_GAUSS_W[7] = _WG[3]
_GAUSS_W[[9, 11, 13]] = _WG[2::-1]

_KG_W = np.stack([_KRONROD_W, _GAUSS_W], axis=1)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class QuadratureResult:
    value: float | np.ndarray
    error_estimate: float
    evaluations: int
    intervals: int = 1


class QuadratureError(ArithmeticError):
    """Subdivision limit reached before the tolerance was met."""

    def __init__(self, message: str, best: QuadratureResult):
        super().__init__(message)
        self.best = best


_TINY = np.finfo(float).tiny / (50.0 * _EPS)


def _qk_error(err: float, resasc: float, resabs: float) -> float:
    """QUADPACK qk15 error heuristic for one component."""
    if resasc != 0.0 and err != 0.0:
        err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
    if resabs > _TINY:
        err = max(err, 50.0 * _EPS * resabs)
    return err


def _gk15(f, a: float, b: float):
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    fx = np.asarray(f(center + half * _NODES), dtype=float)
    sums = fx @ _KG_W
    resk = sums[..., 0]
    kronrod = half * resk
    err = half * np.abs(resk - sums[..., 1])
    resasc = half * (np.abs(fx - 0.5 * resk[..., None]) @ _KRONROD_W)
    resabs = half * (np.abs(fx) @ _KRONROD_W)
    if fx.ndim == 1:
        return kronrod, _qk_error(float(err), float(resasc), float(resabs))
    return kronrod, max(map(_qk_error, err.tolist(), resasc.tolist(), resabs.tolist()))


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    abs_tol: float = 1e-8,
    rel_tol: float = 1e-6,
    limit: int = 200,
) -> QuadratureResult:
    """Adaptive 15-point Gauss-Kronrod quadrature of ``f`` over ``[a, b]``.

    ``f`` is called with a 1-D array of 15 nodes and must return values of
    shape ``(15,)`` or ``(k, 15)``; in the latter case the integral of every
    component is returned and the largest component error drives bisection.
    Converges when the total error is at most
    ``max(abs_tol, rel_tol * |value|)``.
    """
    if b < a:
        raise ValueError(f"integration bounds out of order: a={a} > b={b}")
    if b == a:
        probe = np.asarray(f(np.full(15, float(a))), dtype=float)
        zero = np.zeros(probe.shape[:-1]) if probe.ndim > 1 else 0.0
        return QuadratureResult(zero, 0.0, 15, 0)

    value, err = _gk15(f, a, b)
    evaluations = 15
    heap = [(-err, a, b, value)]
    total_value = value
    total_err = err

    def tolerance(v):
        if np.ndim(v):
            return max(abs_tol, rel_tol * max(map(abs, v.tolist())))
        return max(abs_tol, rel_tol * abs(v))

    while total_err > tolerance(total_value):
        if len(heap) >= limit:
            best = QuadratureResult(_finish(total_value), total_err, evaluations, len(heap))
            raise QuadratureError(
                f"quadrature did not converge within {limit} intervals on [{a}, {b}] "
                f"(error estimate {total_err:.3e})",
                best,
            )
        neg_err, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            heapq.heappush(heap, (neg_err, lo, hi, val))
            best = QuadratureResult(_finish(total_value), total_err, evaluations, len(heap))
            raise QuadratureError("interval width reached machine precision", best)
        left_v, left_e = _gk15(f, lo, mid)
        right_v, right_e = _gk15(f, mid, hi)
        evaluations += 30
        total_value = total_value - val + left_v + right_v
        heapq.heappush(heap, (-left_e, lo, mid, left_v))
        heapq.heappush(heap, (-right_e, mid, hi, right_v))
        # Re-sum to keep cancellation error out of the running totals.
        total_err = sum(-item[0] for item in heap)
    if len(heap) > 1:
        total_value = sum(item[3] for item in sorted(heap, key=lambda item: item[1]))
    return QuadratureResult(_finish(total_value), total_err, evaluations, len(heap))


def _gk15_many(f, lo: np.ndarray, hi: np.ndarray):
    """GK15 on many intervals with one call of ``f``: values (..., n), errors (n,)."""
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nodes = center[:, None] + half[:, None] * _NODES
    fx = np.asarray(f(nodes.ravel()), dtype=float)
    fx = fx.reshape(fx.shape[:-1] + nodes.shape)
    sums = fx @ _KG_W
    resk = sums[..., 0]
    err = half * np.abs(resk - sums[..., 1])
    resasc = half * (np.abs(fx - 0.5 * resk[..., None]) @ _KRONROD_W)
    resabs = half * (np.abs(fx) @ _KRONROD_W)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where((resasc != 0) & (err != 0),
                          resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5), err)
    scaled = np.where(resabs > _TINY, np.maximum(scaled, 50.0 * _EPS * resabs), scaled)
    if scaled.ndim > 1:
        scaled = scaled.reshape(-1, scaled.shape[-1]).max(axis=0)
    return half * resk, scaled


def integrate_segments(
    f: Callable[[np.ndarray], np.ndarray],
    points,
    abs_tol: float = 1e-8,
    rel_tol: float = 1e-6,
    limit: int = 200,
) -> QuadratureResult:
    """Integrals of ``f`` over consecutive segments of the sorted ``points``.

    All segments are refined together: every pass evaluates ``f`` once on
    the nodes of all intervals being bisected, so ``f`` receives arrays of
    15 * n nodes. The summed error is held below
    ``max(abs_tol, rel_tol * |total|)``, which bounds the error of every
    cumulative sum as well. ``value`` has shape (m,) or (k, m) for m
    segments; at most ``limit`` subintervals per segment are used.
    """
    edges = np.asarray(points, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("need at least two breakpoints")
    if np.any(np.diff(edges) < 0):
        raise ValueError("breakpoints must be non-decreasing")
    m = edges.size - 1
    owner = np.flatnonzero(edges[1:] > edges[:-1])
    lo, hi = edges[owner], edges[owner + 1]
    if owner.size == 0:
        probe = np.asarray(f(np.full(15, edges[0])), dtype=float)
        return QuadratureResult(np.zeros(probe.shape[:-1] + (m,)), 0.0, 15, 0)
    vals, errs = _gk15_many(f, lo, hi)
    evaluations = 15 * lo.size
    while True:
        total = vals.sum(axis=-1)
        total_err = float(errs.sum())
        tol = max(abs_tol, rel_tol * float(np.max(np.abs(total))))
        if total_err <= tol:
            break
        if lo.size >= limit * m:
            raise QuadratureError(
                f"quadrature did not converge within {lo.size} intervals on "
                f"[{edges[0]}, {edges[-1]}] (error estimate {total_err:.3e})",
                QuadratureResult(_per_segment(vals, owner, m), total_err, evaluations, lo.size),
            )
        split = errs > tol / lo.size
        if not split.any():
            split = errs == errs.max()
        mid = 0.5 * (lo[split] + hi[split])
        if not np.all((lo[split] < mid) & (mid < hi[split])):
            raise QuadratureError(
                "interval width reached machine precision",
                QuadratureResult(_per_segment(vals, owner, m), total_err, evaluations, lo.size),
            )
        new_lo = np.concatenate([lo[split], mid])
        new_hi = np.concatenate([mid, hi[split]])
        new_owner = np.concatenate([owner[split], owner[split]])
        new_vals, new_errs = _gk15_many(f, new_lo, new_hi)
        evaluations += 15 * new_lo.size
        keep = ~split
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        owner = np.concatenate([owner[keep], new_owner])
        vals = np.concatenate([vals[..., keep], new_vals], axis=-1)
        errs = np.concatenate([errs[keep], new_errs])
    return QuadratureResult(_per_segment(vals, owner, m), total_err, evaluations, lo.size)


def _per_segment(vals: np.ndarray, owner: np.ndarray, m: int) -> np.ndarray:
    if vals.ndim == 1:
        return np.bincount(owner, weights=vals, minlength=m)
    return np.stack([np.bincount(owner, weights=v, minlength=m) for v in vals])


def _finish(value):
    arr = np.asarray(value, dtype=float)
    return float(arr) if arr.ndim == 0 else arr


def select_top_k(values: Sequence[float] | np.ndarray, k: int, direction: str = "min") -> np.ndarray:
    """Indices of the ``k`` best entries, best first.

    Ties are broken by the lower index. Uses a linear-time partition to find
    the k-th order statistic, then sorts only the selected entries.
    NaN counts as the worst possible value.
    """
    vals = np.asarray(values, dtype=float).ravel()
    n = vals.size
    if k > n:
        raise ValueError(f"cannot select k={k} entries from a sequence of length {n}")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if direction not in ("min", "max"):
        raise ValueError(f"direction must be 'min' or 'max', got {direction!r}")
    if k == 0:
        return np.empty(0, dtype=int)
    key = vals if direction == "min" else -vals
    key = np.where(np.isnan(key), np.inf, key)
    threshold = np.partition(key, k - 1)[k - 1]
    strictly_better = np.flatnonzero(key < threshold)
    ties = np.flatnonzero(key == threshold)[: k - strictly_better.size]
    chosen = np.concatenate([strictly_better, ties])
    order = np.lexsort((chosen, key[chosen]))
    return chosen[order]


def gaussian_var_lower(mu: float, sigma: float, gamma: float) -> float:
    """Lower gamma-quantile of N(mu, sigma^2)."""
    _check_gamma(gamma)
    if sigma == 0:
        return float(mu)
    return float(mu + sigma * ndtri(gamma))


def gaussian_cvar_lower(mu: float, sigma: float, gamma: float) -> float:
    """Expected value of the lower gamma-tail of N(mu, sigma^2).

    Averages the quantile function over (0, gamma] by quadrature. The
    substitution u = gamma * w**2 removes the logarithmic endpoint
    singularity of the normal quantile at u = 0.
    """
    _check_gamma(gamma)
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return float(mu)
    return float(mu + sigma * _standard_tail_mean(float(gamma)))


@lru_cache(maxsize=64)
def _standard_tail_mean(gamma: float) -> float:
    def integrand(w):
        w = np.asarray(w)
        return 2.0 * w * ndtri(gamma * w * w)

    # (1/gamma) * int_0^gamma q(u) du == int_0^1 2 w q(gamma w^2) dw
    return float(integrate(integrand, 0.0, 1.0, abs_tol=1e-12, rel_tol=1e-12, limit=400).value)


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
