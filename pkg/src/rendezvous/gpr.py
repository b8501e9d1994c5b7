"""Gaussian process regression of the driver deviation function.

Inputs are historical speeds, targets are observed deviations (measured
speed minus historical speed). Both the exact GP and the Deterministic
Training Conditional (DTC) sparse approximation are provided.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular

__all__ = [
    "Dataset",
    "KernelConfig",
    "GPModel",
    "ConditioningError",
    "InsufficientDataError",
    "matern",
    "fit",
    "predict",
    "benchmark_fit",
    "log_marginal_likelihood",
    "tune_hyperparameters",
]

log = logging.getLogger(__name__)

_SQRT3 = 3.0 ** 0.5
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class ConditioningError(np.linalg.LinAlgError):
    """Kernel matrix not positive definite even with the largest jitter."""


class InsufficientDataError(ValueError):
    pass


@dataclass
class Dataset:
    """Growing (X, Y) store with an optional sliding window."""

    X: list = field(default_factory=list)
    Y: list = field(default_factory=list)
    capacity: int | None = None

    def append(self, x: float, y: float) -> None:
        self.X.append(float(x))
        self.Y.append(float(y))
        if self.capacity is not None and len(self.X) > self.capacity:
            del self.X[: len(self.X) - self.capacity]
            del self.Y[: len(self.Y) - self.capacity]

    def __len__(self) -> int:
        return len(self.X)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.X, dtype=float), np.asarray(self.Y, dtype=float)


@dataclass(frozen=True)
class KernelConfig:
    nu: float = 1.5
    length_scale: float = 0.5
    signal_variance: float = 1.0
    noise_variance: float = 0.0625

    def __post_init__(self):
        if self.nu not in (0.5, 1.5, 2.5):
            raise ValueError(f"Matern smoothness must be 0.5, 1.5 or 2.5, got {self.nu}")
        if self.length_scale <= 0 or self.signal_variance <= 0:
            raise ValueError("length_scale and signal_variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")


def matern(a, b, cfg: KernelConfig) -> np.ndarray:
    """Matern covariance between 1-D input arrays ``a`` and ``b``."""
    r = np.subtract.outer(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    np.abs(r, out=r)
    # in place throughout: this sits inside every fit and predict
    if cfg.nu == 0.5:
        r *= -1.0 / cfg.length_scale
        np.exp(r, out=r)
        r *= cfg.signal_variance
        return r
    root = _SQRT3 if cfg.nu == 1.5 else np.sqrt(5.0)
    r *= root / cfg.length_scale
    k = np.exp(-r)
    if cfg.nu == 1.5:
        r += 1.0
    else:
        r += r * r / 3.0 + 1.0
    k *= r
    k *= cfg.signal_variance
    return k


def _chol(mat: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    scale = max(1.0, float(np.abs(mat.diagonal()).max())) if mat.size else 1.0
    for jitter in JITTER_LADDER:
        shifted = mat
        if jitter:
            shifted = mat.copy()
            shifted.flat[:: len(mat) + 1] += jitter * scale
        L, info = lapack.dpotrf(shifted, lower=1, clean=1)
        if info == 0:
            return L, jitter
    raise ConditioningError(f"{what} is not positive definite with jitter up to {JITTER_LADDER[-1]}")


def _tri_inverse(L: np.ndarray) -> np.ndarray:
    inv, info = lapack.dtrtri(L, lower=1)
    if info != 0:
        raise ConditioningError(f"singular triangular factor (dtrtri info {info})")
    return inv


@dataclass(frozen=True, eq=False)
class GPModel:
    kind: str
    kernel: KernelConfig
    X: np.ndarray
    observed: tuple[float, float]
    jitter: float
    # full: Cholesky of K + noise, and alpha = (K + noise)^-1 y
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    # DTC: inducing inputs, Cholesky of Kuu and of B = noise*I + V V^T, c = L_B^-1 V y
    inducing: np.ndarray | None = None
    chol_uu: np.ndarray | None = None
    chol_b: np.ndarray | None = None
    c: np.ndarray | None = None
    # DTC prediction in closed form: mean = Ku^T w, var = prior - diag(Ku^T Q Ku)
    weights: np.ndarray | None = None
    quad: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.X)

    def in_observed(self, x) -> np.ndarray:
        lo, hi = self.observed
        x = np.asarray(x)
        return (x >= lo) & (x <= hi)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "kernel": {
                "nu": self.kernel.nu,
                "length_scale": self.kernel.length_scale,
                "signal_variance": self.kernel.signal_variance,
                "noise_variance": self.kernel.noise_variance,
            },
            "inducing_points": None if self.inducing is None else self.inducing.tolist(),
            "observed_set": list(self.observed),
            "size": self.size,
            "jitter": self.jitter,
        }


def _inducing_inputs(X: np.ndarray, n: int) -> np.ndarray:
    """Equally spaced data quantiles, duplicates merged."""
    xs = np.sort(X)
    if n == 1:
        return np.array([np.median(xs)])
    # linear-interpolation quantiles (numpy's default method), computed directly
    pos = np.arange(n) * ((len(xs) - 1) / (n - 1))
    lo = pos.astype(int)
    hi = np.minimum(lo + 1, len(xs) - 1)
    q = xs[lo] + (pos - lo) * (xs[hi] - xs[lo])
    keep = np.empty(n, dtype=bool)
    keep[0] = True
    np.greater(q[1:], q[:-1], out=keep[1:])
    return q[keep]


def fit(
    data: Dataset | tuple[Sequence[float], Sequence[float]],
    cfg: KernelConfig,
    kind: str = "dtc",
    n_inducing: int = 30,
    inducing: Sequence[float] | None = None,
) -> GPModel:
    """Condition the GP on ``data``.

    ``kind`` is ``"full"`` or ``"dtc"``. For DTC the inducing inputs are
    ``n_inducing`` equally spaced quantiles of X unless given explicitly.
    """
    if isinstance(data, Dataset):
        X, Y = data.arrays()
    else:
        X = np.asarray(data[0], dtype=float)
        Y = np.asarray(data[1], dtype=float)
    if X.shape != Y.shape:
        raise ValueError(f"X and Y differ in length: {X.shape} vs {Y.shape}")
    M = len(X)
    if M < 2:
        raise InsufficientDataError(f"need at least 2 data points, got {M}")
    observed = (float(np.min(X)), float(np.max(X)))
    noise = cfg.noise_variance
    kind = kind.lower()

    if kind == "full":
        K = matern(X, X, cfg)
        K.flat[:: M + 1] += noise
        L, jitter = _chol(K, "K + noise")
        alpha = cho_solve((L, True), Y, check_finite=False)
        if jitter:
            log.debug("full GP needed jitter %.1e", jitter)
        return GPModel("full", cfg, X, observed, jitter, chol=L, alpha=alpha)

    if kind != "dtc":
        raise ValueError(f"kind must be 'full' or 'dtc', got {kind!r}")
    if inducing is None:
        if not 1 <= n_inducing <= M:
            raise ValueError(f"n_inducing must lie in [1, {M}], got {n_inducing}")
        U = _inducing_inputs(X, n_inducing)
    else:
        U = np.asarray(inducing, dtype=float)
    m = len(U)
    K = matern(U, np.concatenate([U, X]), cfg)
    Luu, j1 = _chol(K[:, :m], "Kuu")
    # explicit inverses are only m x m, and products beat wide triangular solves
    A = _tri_inverse(Luu)
    V = A @ K[:, m:]
    B = V @ V.T
    B.flat[:: m + 1] += noise
    Lb, j2 = _chol(B, "DTC system matrix")
    Lb_inv = _tri_inverse(Lb)
    c = Lb_inv @ (V @ Y)
    BA = Lb_inv @ A
    quad = A.T @ A - noise * (BA.T @ BA)
    return GPModel(
        "dtc", cfg, X, observed, max(j1, j2),
        inducing=U, chol_uu=Luu, chol_b=Lb, c=c,
        weights=BA.T @ c, quad=0.5 * (quad + quad.T),
    )


def predict(model: GPModel, x_star):
    """Posterior mean and latent variance of the deviation at ``x_star``.

    Scalar in, scalars out; arrays in, arrays out.
    """
    scalar = np.ndim(x_star) == 0
    xs = np.asarray(x_star, dtype=float).reshape(-1)
    cfg = model.kernel
    prior = cfg.signal_variance
    if model.kind == "dtc" and not scalar:
        Ku = matern(model.inducing, xs, cfg)
        return Ku.T @ model.weights, np.maximum(prior - (Ku * (model.quad @ Ku)).sum(axis=0), 0.0)
    if model.kind == "full":
        Ks = matern(model.X, xs, cfg)
        mu = Ks.T @ model.alpha
        v = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
        var = prior - np.einsum("ij,ij->j", v, v)
    else:
        Ku = matern(model.inducing, xs, cfg)
        mu = Ku.T @ model.weights
        var = prior - np.einsum("ij,ij->j", Ku, model.quad @ Ku)
    var = np.maximum(var, 0.0)
    if scalar:
        return float(mu[0]), float(var[0])
    return mu, var


def _stream(M: int, rng: np.random.Generator, noise_sd: float = 0.25):
    t = np.arange(1, M + 1) * 0.1
    x = 8.0 + np.sin(t / 10.0)
    y = np.sign(x - 8.0) + noise_sd * rng.standard_normal(M)
    return x, y


def benchmark_fit(
    sizes: Sequence[int] = (50, 100, 200, 300),
    repetitions: int = 50,
    cfg: KernelConfig | None = None,
    n_inducing: int = 30,
    seed: int = 0,
) -> list[dict]:
    """Median and standard deviation of fit wall time, full vs DTC.

    Data follow the sign-deviation stream sampled at 10 Hz.
    """
    cfg = cfg or KernelConfig()
    rng = np.random.default_rng(seed)
    rows = []
    for M in sizes:
        if M > 10_000:
            raise ValueError(f"benchmark sizes are limited to 1e4, got {M}")
        x, y = _stream(M, rng)
        timings = {"full": [], "dtc": []}
        # one warm block per method, so neither inherits the other's cache state
        for kind in ("full", "dtc"):
            fit((x, y), cfg, kind=kind, n_inducing=min(n_inducing, M))
            for _ in range(repetitions):
                start = time.perf_counter()
                fit((x, y), cfg, kind=kind, n_inducing=min(n_inducing, M))
                timings[kind].append(time.perf_counter() - start)
        full = np.asarray(timings["full"])
        dtc = np.asarray(timings["dtc"])
        rows.append({
            "M": M,
            "full_median_s": float(np.median(full)),
            "full_std_s": float(np.std(full)),
            "dtc_median_s": float(np.median(dtc)),
            "dtc_std_s": float(np.std(dtc)),
            "ratio": float(np.median(dtc) / np.median(full)),
        })
    return rows


def log_marginal_likelihood(X, Y, cfg: KernelConfig) -> float:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    K = matern(X, X, cfg)
    K[np.diag_indices_from(K)] += cfg.noise_variance
    L, _ = _chol(K, "K + noise")
    alpha = cho_solve((L, True), Y, check_finite=False)
    return float(-0.5 * Y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(X) * np.log(2 * np.pi))


def tune_hyperparameters(X, Y, cfg: KernelConfig) -> KernelConfig:
    """Offline type-II maximum likelihood over (length scale, signal and
    noise variance), in log space. Not used inside the mission loop."""
    from scipy.optimize import minimize

    def unpack(z):
        ell, sf2, sn2 = np.exp(z)
        return KernelConfig(cfg.nu, float(ell), float(sf2), float(sn2))

    def objective(z):
        try:
            return -log_marginal_likelihood(X, Y, unpack(z))
        except np.linalg.LinAlgError:
            return np.inf

    z0 = np.log([cfg.length_scale, cfg.signal_variance, max(cfg.noise_variance, 1e-6)])
    res = minimize(objective, z0, method="Nelder-Mead", options={"xatol": 1e-4, "fatol": 1e-6})
    return unpack(res.x)
