"""Road network: arc-length parametrized polylines sharing a common origin,
their pairwise divergence points, and monotone pruning of reachable paths."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path as FsPath
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Path",
    "PathMap",
    "ReachableSet",
    "MapError",
    "PathDomainError",
    "InconsistentMeasurementError",
    "evaluate_path",
    "prune_reachable",
    "load_map",
    "map_from_dict",
]

_SAME_POINT_TOL = 1e-9


class MapError(ValueError):
    """A map file or path definition violates an invariant."""


class PathDomainError(ValueError):
    """Arc-length outside ``[0, total_length]``."""


class InconsistentMeasurementError(ValueError):
    """A position fix does not lie near any still-active path."""


@dataclass(frozen=True, eq=False)
class Path:
    id: int
    vertices: np.ndarray
    cumulative_lengths: np.ndarray

    @classmethod
    def from_vertices(cls, path_id: int, vertices: Sequence[Sequence[float]]) -> "Path":
        pts = np.asarray(vertices, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise MapError(f"path {path_id}: vertices must be a list of [x, y] pairs")
        if len(pts) < 2:
            raise MapError(f"path {path_id}: needs at least 2 vertices, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise MapError(f"path {path_id}: vertex {bad} is not finite")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(seg <= 0):
            bad = int(np.flatnonzero(seg <= 0)[0]) + 1
            raise MapError(f"path {path_id}: vertex {bad} repeats the previous vertex")
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        pts.setflags(write=False)
        cum.setflags(write=False)
        return cls(int(path_id), pts, cum)

    @property
    def length(self) -> float:
        return float(self.cumulative_lengths[-1])

    def points(self, theta) -> np.ndarray:
        """Vectorized evaluation with ``theta`` clamped to the path."""
        th = np.clip(np.asarray(theta, dtype=float), 0.0, self.length)
        x = np.interp(th, self.cumulative_lengths, self.vertices[:, 0])
        y = np.interp(th, self.cumulative_lengths, self.vertices[:, 1])
        return np.stack([x, y], axis=-1)

    def distance_near(self, point, theta: float, window: float) -> float:
        """Distance from ``point`` to the part of the path within ``window``
        arc-length of ``theta``."""
        lo = max(0.0, theta - window)
        hi = min(self.length, theta + window)
        px, py = float(point[0]), float(point[1])
        if lo > hi:
            ex, ey = self.vertices[-1]
            return math.hypot(ex - px, ey - py)
        cum = self.cumulative_lengths.tolist()
        verts = self.vertices.tolist()
        best = math.inf
        for k in range(len(cum) - 1):
            a, b = max(lo, cum[k]), min(hi, cum[k + 1])
            if a > b:
                continue
            seg = cum[k + 1] - cum[k]
            (x0, y0), (x1, y1) = verts[k], verts[k + 1]
            dx, dy = (x1 - x0) / seg, (y1 - y0) / seg
            # project onto the unit direction, restricted to the window
            s = min(max((px - x0) * dx + (py - y0) * dy, a - cum[k]), b - cum[k])
            best = min(best, math.hypot(x0 + s * dx - px, y0 + s * dy - py))
        return best


def evaluate_path(path: Path, theta: float) -> np.ndarray:
    """Point at arc-length ``theta`` along ``path``."""
    if not (0.0 <= theta <= path.length):
        raise PathDomainError(
            f"path {path.id}: theta={theta} outside [0, {path.length}]"
        )
    cum = path.cumulative_lengths
    k = int(np.searchsorted(cum, theta, side="right")) - 1
    if k >= len(cum) - 1:
        return path.vertices[-1].copy()
    if theta == cum[k]:
        return path.vertices[k].copy()
    frac = (theta - cum[k]) / (cum[k + 1] - cum[k])
    return path.vertices[k] + frac * (path.vertices[k + 1] - path.vertices[k])


def _divergence(a: Path, b: Path) -> float:
    """Largest theta such that both paths coincide on [0, theta]."""
    limit = min(a.length, b.length)
    knots = np.union1d(a.cumulative_lengths, b.cumulative_lengths)
    knots = knots[knots <= limit]
    if knots[-1] < limit:
        knots = np.append(knots, limit)
    pa = a.points(knots)
    pb = b.points(knots)
    gap = np.hypot(*(pa - pb).T)
    if gap[0] > _SAME_POINT_TOL:
        return 0.0
    off = np.flatnonzero(gap > _SAME_POINT_TOL)
    if off.size == 0:
        return float(limit)
    return float(knots[off[0] - 1])


def _pair(i: int, j: int) -> frozenset:
    return frozenset((i, j))


@dataclass(frozen=True, eq=False)
class PathMap:
    paths: tuple[Path, ...]
    landing_site: np.ndarray
    abort_site: np.ndarray
    shared_prefix_end: Mapping[frozenset, float] = field(default_factory=dict)

    @classmethod
    def build(cls, paths: Iterable[Path], landing_site, abort_site=None) -> "PathMap":
        paths = tuple(paths)
        if not paths:
            raise MapError("map has no paths")
        ids = [p.id for p in paths]
        if len(set(ids)) != len(ids):
            raise MapError(f"duplicate path ids: {ids}")
        origin = paths[0].vertices[0]
        for p in paths[1:]:
            if np.hypot(*(p.vertices[0] - origin)) > _SAME_POINT_TOL:
                raise MapError(
                    f"path {p.id}: vertex 0 {p.vertices[0].tolist()} differs from "
                    f"the common origin {origin.tolist()}"
                )
        prefix = {_pair(a.id, b.id): _divergence(a, b) for a, b in combinations(paths, 2)}
        landing = np.asarray(landing_site, dtype=float)
        abort = landing if abort_site is None else np.asarray(abort_site, dtype=float)
        return cls(paths, landing, abort, prefix)

    @property
    def ids(self) -> list[int]:
        return [p.id for p in self.paths]

    def path(self, path_id: int) -> Path:
        for p in self.paths:
            if p.id == path_id:
                return p
        raise KeyError(f"no path with id {path_id}")

    def divergence(self, i: int, j: int) -> float:
        if i == j:
            return self.path(i).length
        return self.shared_prefix_end[_pair(i, j)]

    def to_dict(self) -> dict:
        return {
            "paths": [{"id": p.id, "vertices": p.vertices.tolist()} for p in self.paths],
            "landing_site": self.landing_site.tolist(),
            "abort_site": self.abort_site.tolist(),
        }


@dataclass(frozen=True)
class ReachableSet:
    active: frozenset
    driver_theta: float = 0.0

    @classmethod
    def all_of(cls, path_map: PathMap) -> "ReachableSet":
        return cls(frozenset(path_map.ids), 0.0)


def prune_reachable(
    rs: ReachableSet,
    path_map: PathMap,
    measured_theta: float,
    measured_point,
    tol: float = 1.0,
    window: float = 10.0,
) -> ReachableSet:
    """Drop paths the driver has already passed by.

    A path k *matches* when ``measured_point`` lies within ``tol`` of k near
    ``measured_theta``. Path j survives when it matches, or when some matching
    path k still shares geometry with j at ``measured_theta``. A theta exactly
    at a divergence point keeps both branches.
    """
    if measured_theta < rs.driver_theta:
        raise ValueError(
            f"measured theta {measured_theta} is behind the last accepted value {rs.driver_theta}"
        )
    point = np.asarray(measured_point, dtype=float)
    active = sorted(rs.active)
    matching = [
        k for k in active
        if path_map.path(k).distance_near(point, measured_theta, window) <= tol
    ]
    if not matching:
        raise InconsistentMeasurementError(
            f"point {point.tolist()} at theta={measured_theta:.3f} is farther than "
            f"{tol} m from every active path {active}"
        )
    survivors = frozenset(
        j for j in active
        if j in matching or any(measured_theta <= path_map.divergence(j, k) for k in matching)
    )
    return ReachableSet(survivors, float(measured_theta))


def map_from_dict(data: Mapping) -> PathMap:
    allowed = {"paths", "landing_site", "abort_site"}
    unknown = set(data) - allowed
    if unknown:
        raise MapError(f"unknown map key(s): {sorted(unknown)}")
    if "paths" not in data or "landing_site" not in data:
        raise MapError("map needs 'paths' and 'landing_site'")
    paths = []
    for k, entry in enumerate(data["paths"]):
        path_id = entry.get("id", k + 1)
        extra = set(entry) - {"id", "vertices"}
        if extra:
            raise MapError(f"path {path_id}: unknown key(s) {sorted(extra)}")
        paths.append(Path.from_vertices(path_id, entry["vertices"]))
    return PathMap.build(paths, data["landing_site"], data.get("abort_site"))


def load_map(path: str | FsPath) -> PathMap:
    with open(path) as fh:
        return map_from_dict(json.load(fh))
