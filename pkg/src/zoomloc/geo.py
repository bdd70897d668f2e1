"""AOI-anchored K-ary tile pyramid, location codec, geodesic distance and recall.

Local frame: ``u`` grows east from the AOI west edge, ``v`` grows south from
the AOI north edge. Children of a tile are indexed row-major with row 0 on the
north edge and column 0 on the west edge, so action ``row * K + col``. Intervals
are half-open ``[lo, hi)``; a point on an internal boundary belongs to the
higher-index child.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyEvalSet, InvalidAction, InvalidConfig, OutOfAOI

EARTH_RADIUS_M = 6371000.0


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude < 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180)")


@dataclass(frozen=True)
class LocalPoint:
    u: float
    v: float


@dataclass(frozen=True)
class Rect:
    """Half-open axis-aligned rectangle ``[u0, u1) x [v0, v1)`` in the local frame."""

    u0: float
    v0: float
    u1: float
    v1: float

    @property
    def side(self) -> float:
        return self.u1 - self.u0

    @property
    def center(self) -> LocalPoint:
        return LocalPoint((self.u0 + self.u1) / 2, (self.v0 + self.v1) / 2)

    def contains(self, p: LocalPoint) -> bool:
        return self.u0 <= p.u < self.u1 and self.v0 <= p.v < self.v1

    def contains_rect(self, other: "Rect") -> bool:
        return (self.u0 <= other.u0 and other.u1 <= self.u1
                and self.v0 <= other.v0 and other.v1 <= self.v1)

    def intersects(self, other: "Rect") -> bool:
        return (self.u0 < other.u1 and other.u0 < self.u1
                and self.v0 < other.v1 and other.v0 < self.v1)


@dataclass(frozen=True)
class PyramidConfig:
    branching: int = 4
    num_steps: int = 4
    aoi_origin: GeoPoint = field(default_factory=lambda: GeoPoint(38.95, -77.10))
    aoi_side: float = 10000.0
    # Fraction of the level-N tile side kept as the reported cell.
    terminal_center_fraction: float = 1.0

    def __post_init__(self):
        if self.branching < 2:
            raise InvalidConfig(f"branching must be >= 2, got {self.branching}")
        if self.num_steps < 1:
            raise InvalidConfig(f"num_steps must be >= 1, got {self.num_steps}")
        if not self.aoi_side > 0:
            raise InvalidConfig(f"aoi_side must be positive, got {self.aoi_side}")
        if not 0 < self.terminal_center_fraction <= 1:
            raise InvalidConfig("terminal_center_fraction must lie in (0, 1]")

    @property
    def num_actions(self) -> int:
        return self.branching ** 2

    @property
    def num_leaves(self) -> int:
        return self.branching ** (2 * self.num_steps)

    @property
    def leaves_per_side(self) -> int:
        return self.branching ** self.num_steps

    def level_side(self, level: int) -> float:
        if not 0 <= level <= self.num_steps:
            raise InvalidConfig(f"level {level} outside [0, {self.num_steps}]")
        return self.aoi_side / self.branching ** level

    @property
    def leaf_side(self) -> float:
        return self.level_side(self.num_steps)

    @property
    def terminal_cell_side(self) -> float:
        return self.terminal_center_fraction * self.leaf_side

    @property
    def aoi_rect(self) -> Rect:
        return Rect(0.0, 0.0, self.aoi_side, self.aoi_side)

    def to_dict(self) -> dict:
        return {
            "branching": self.branching,
            "num_steps": self.num_steps,
            "aoi_origin": [self.aoi_origin.latitude, self.aoi_origin.longitude],
            "aoi_side": self.aoi_side,
            "terminal_center_fraction": self.terminal_center_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PyramidConfig":
        d = dict(d)
        if "aoi_origin" in d:
            lat, lon = d["aoi_origin"]
            d["aoi_origin"] = GeoPoint(float(lat), float(lon))
        return cls(**d)


@dataclass(frozen=True)
class TerminalCell:
    tile: Rect
    bounds: Rect
    local_center: LocalPoint
    center: GeoPoint


def _wrap_lon(lon: float) -> float:
    return (lon + 180.0) % 360.0 - 180.0


def local_from_geo(p: GeoPoint, cfg: PyramidConfig, check: bool = True) -> LocalPoint:
    """Equirectangular tangent-plane projection about the AOI origin."""
    o = cfg.aoi_origin
    k = math.pi / 180.0 * EARTH_RADIUS_M
    dlon = _wrap_lon(p.longitude - o.longitude)
    u = dlon * k * math.cos(math.radians(o.latitude))
    v = (o.latitude - p.latitude) * k
    lp = LocalPoint(u, v)
    if check and not cfg.aoi_rect.contains(lp):
        raise OutOfAOI(f"{p} maps to {lp}, outside the AOI")
    return lp


def geo_from_local(p: LocalPoint, cfg: PyramidConfig) -> GeoPoint:
    o = cfg.aoi_origin
    k = math.pi / 180.0 * EARTH_RADIUS_M
    lat = o.latitude - p.v / k
    lon = o.longitude + p.u / (k * math.cos(math.radians(o.latitude)))
    return GeoPoint(lat, _wrap_lon(lon))


def geo_from_local_array(u: np.ndarray, v: np.ndarray, cfg: PyramidConfig) -> tuple[np.ndarray, np.ndarray]:
    o = cfg.aoi_origin
    k = math.pi / 180.0 * EARTH_RADIUS_M
    lat = o.latitude - np.asarray(v, dtype=np.float64) / k
    lon = o.longitude + np.asarray(u, dtype=np.float64) / (k * math.cos(math.radians(o.latitude)))
    return lat, (lon + 180.0) % 360.0 - 180.0


def _check_actions(actions: Sequence[int], cfg: PyramidConfig) -> None:
    for a in actions:
        if not 0 <= int(a) < cfg.num_actions:
            raise InvalidAction(f"action {a} outside [0, {cfg.num_actions})")


def encode_location(p: LocalPoint, cfg: PyramidConfig) -> list[int]:
    """Zoom actions whose level-N tile contains ``p``."""
    if not cfg.aoi_rect.contains(p):
        raise OutOfAOI(f"{p} outside the AOI")
    return encode_locations(np.array([p.u]), np.array([p.v]), cfg)[0].tolist()


def encode_locations(u: np.ndarray, v: np.ndarray, cfg: PyramidConfig) -> np.ndarray:
    """Vectorized ``encode_location``; returns an ``(n, N)`` int64 array."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    side = cfg.aoi_side
    if np.any((u < 0) | (u >= side) | (v < 0) | (v >= side)):
        raise OutOfAOI("point outside the AOI")
    K = cfg.branching
    u0 = np.zeros_like(u)
    v0 = np.zeros_like(v)
    out = np.empty((u.shape[0], cfg.num_steps), dtype=np.int64)
    for t in range(cfg.num_steps):
        child = side / K
        col = np.clip(np.floor((u - u0) / child), 0, K - 1).astype(np.int64)
        row = np.clip(np.floor((v - v0) / child), 0, K - 1).astype(np.int64)
        out[:, t] = row * K + col
        u0 = u0 + col * child
        v0 = v0 + row * child
        side = child
    return out


def tile_bounds(path: Sequence[int], cfg: PyramidConfig) -> Rect:
    if len(path) > cfg.num_steps:
        raise InvalidAction(f"path of length {len(path)} deeper than {cfg.num_steps} steps")
    _check_actions(path, cfg)
    K = cfg.branching
    u0 = v0 = 0.0
    side = cfg.aoi_side
    for a in path:
        row, col = divmod(int(a), K)
        side = side / K
        u0 += col * side
        v0 += row * side
    return Rect(u0, v0, u0 + side, v0 + side)


def decode_actions(actions: Sequence[int], cfg: PyramidConfig) -> TerminalCell:
    if len(actions) != cfg.num_steps:
        raise InvalidAction(f"expected {cfg.num_steps} actions, got {len(actions)}")
    tile = tile_bounds(actions, cfg)
    c = tile.center
    half = cfg.terminal_cell_side / 2
    bounds = Rect(c.u - half, c.v - half, c.u + half, c.v + half)
    return TerminalCell(tile=tile, bounds=bounds, local_center=c, center=geo_from_local(c, cfg))


def leaf_index(actions: Sequence[int], cfg: PyramidConfig) -> int:
    """Row-major index of the level-N tile over the full leaf grid."""
    K = cfg.branching
    row = col = 0
    for a in actions:
        r, c = divmod(int(a), K)
        row = row * K + r
        col = col * K + c
    return row * cfg.leaves_per_side + col


def actions_from_leaf_index(index: int, cfg: PyramidConfig) -> list[int]:
    K = cfg.branching
    row, col = divmod(int(index), cfg.leaves_per_side)
    out = []
    for t in range(cfg.num_steps - 1, -1, -1):
        scale = K ** t
        out.append((row // scale % K) * K + (col // scale % K))
    return out


def haversine_m(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance on the R = 6371 km sphere; broadcasts over arrays."""
    p1 = np.radians(np.asarray(lat1, dtype=np.float64))
    p2 = np.radians(np.asarray(lat2, dtype=np.float64))
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2, dtype=np.float64) - np.asarray(lon1, dtype=np.float64))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def geodesic_distance(a: GeoPoint, b: GeoPoint) -> float:
    if a == b:
        return 0.0
    return float(haversine_m(a.latitude, a.longitude, b.latitude, b.longitude))


def recall_from_distances(distances: Iterable[float], tau: float) -> float:
    d = np.asarray(list(distances), dtype=np.float64)
    if d.size == 0:
        raise EmptyEvalSet("recall over an empty evaluation set")
    return float(np.count_nonzero(d <= tau)) * 100.0 / d.size


def recall_at(pred: Sequence[GeoPoint], gt: Sequence[GeoPoint], tau: float) -> float:
    """Percentage of predictions within ``tau`` meters of ground truth (inclusive)."""
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predictions for {len(gt)} ground-truth points")
    if not gt:
        raise EmptyEvalSet("recall over an empty evaluation set")
    d = [geodesic_distance(a, b) for a, b in zip(pred, gt)]
    return recall_from_distances(d, tau)
