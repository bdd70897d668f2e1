"""Procedural overhead world, tile rendering and wedge-sampled ground observations.

Feature placement is integer arithmetic on decimeter coordinates drawn from a
PCG64 stream, so a (seed, config) pair yields byte-identical feature tables on
every platform. The same appearance model backs both the overhead tiles and
the ground observations, which keeps map content and observation content in
an exact, testable relationship.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InvalidAction, InvalidConfig, OutOfAOI
from .geo import GeoPoint, LocalPoint, PyramidConfig, Rect, encode_locations, geo_from_local, tile_bounds

WORLD_MAGIC = b"ZLWD"
WORLD_VERSION = 1
DM = 10.0  # decimeters per meter

BACKGROUND = np.array([0.0, 0.0, 0.0], dtype=np.float32)
HAZE = np.array([0.62, 0.66, 0.72], dtype=np.float32)
TERRAIN_BASE = np.array([0.36, 0.44, 0.30], dtype=np.float64)
ROAD_COLOR = np.array([0.28, 0.28, 0.30], dtype=np.float32)
BUILDING_COLORS = np.array([
    [0.78, 0.75, 0.70],
    [0.60, 0.52, 0.48],
    [0.82, 0.46, 0.36],
    [0.48, 0.54, 0.66],
], dtype=np.float32)
LANDMARK_COLORS = np.array([
    [0.95, 0.10, 0.10],
    [0.10, 0.85, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.90, 0.10],
    [0.90, 0.15, 0.90],
    [0.10, 0.90, 0.90],
    [1.00, 0.55, 0.05],
    [1.00, 1.00, 1.00],
], dtype=np.float32)
# landmark shape by class % 4: disc, square, ring, cross
N_SHAPES = 4

# (min wavelength m, max wavelength m, amplitude) per terrain band
TERRAIN_BANDS = ((1500.0, 6000.0, 0.12), (300.0, 1500.0, 0.05), (60.0, 300.0, 0.025))

# render(child) vs upscaled parent quadrant; the parent has a quarter of the detail, so this stays modest
MULTISCALE_PSNR_FLOOR_DB = 15.0


@dataclass(frozen=True)
class WorldConfig:
    extent: float = 2000.0
    road_density: float = 4.0          # roads per km of AOI side
    building_density: float = 120.0    # per km^2
    landmark_cell: float = 80.0        # side of the stratification cell, meters
    landmarks_per_cell: int = 2        # guaranteed minimum per stratification cell
    landmark_classes: int = 8
    landmark_radius: float = 7.0
    terrain_modes: int = 4             # per channel per band
    tile_resolution: int = 64
    tile_supersample: int = 4
    obs_height: int = 48
    obs_width: int = 64
    obs_supersample: int = 2
    fov_range: tuple = (60.0, 120.0)
    visibility_radius: float = 200.0
    near_distance: float = 2.0
    attenuation_ref: float = 50.0
    noise_sigma: float = 0.02

    def __post_init__(self):
        if not self.extent > 0:
            raise InvalidConfig("world extent must be positive")
        for name in ("road_density", "building_density", "landmarks_per_cell", "terrain_modes"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be >= 0")
        if self.landmark_cell <= 0 or self.landmark_radius <= 0:
            raise InvalidConfig("landmark_cell and landmark_radius must be positive")
        if not 1 <= self.landmark_classes <= len(LANDMARK_COLORS):
            raise InvalidConfig(f"landmark_classes must lie in [1, {len(LANDMARK_COLORS)}]")
        if self.tile_resolution < 1 or self.tile_supersample < 1 or self.obs_supersample < 1:
            raise InvalidConfig("resolutions and supersampling factors must be >= 1")
        lo, hi = self.fov_range
        if not 0 < lo <= hi <= 360:
            raise InvalidConfig(f"bad fov_range {self.fov_range}")
        if not 0 < self.near_distance < self.visibility_radius:
            raise InvalidConfig("need 0 < near_distance < visibility_radius")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fov_range"] = list(self.fov_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        d = dict(d)
        if "fov_range" in d:
            d["fov_range"] = tuple(float(x) for x in d["fov_range"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class World:
    seed: int
    config: WorldConfig
    terrain: np.ndarray    # (M, 5) int32: channel, kx, ky [micro-cycles/km], amplitude [1e-6], phase [1e-6 turn]
    roads: np.ndarray      # (S, 6) int32: road id, x0, y0, x1, y1, width [dm]
    buildings: np.ndarray  # (B, 5) int32: cx, cy, w, h [dm], height class
    landmarks: np.ndarray  # (L, 3) int32: cx, cy [dm], class

    @property
    def extent(self) -> float:
        return self.config.extent

    @cached_property
    def _terrain_f(self):
        t = self.terrain.astype(np.float64)
        return (t[:, 0].astype(np.int64), t[:, 1] * 1e-9, t[:, 2] * 1e-9, t[:, 3] * 1e-6, t[:, 4] * 1e-6)

    @cached_property
    def _roads_f(self) -> np.ndarray:
        return self.roads[:, 1:].astype(np.float64) / DM

    @cached_property
    def _buildings_f(self) -> np.ndarray:
        b = self.buildings.astype(np.float64)
        b[:, :4] /= DM
        return b

    @cached_property
    def _landmarks_f(self) -> np.ndarray:
        lm = self.landmarks.astype(np.float64)
        lm[:, :2] /= DM
        return lm

    def landmark_points(self) -> np.ndarray:
        return self._landmarks_f[:, :2].copy()

    def landmark_classes(self) -> np.ndarray:
        return self.landmarks[:, 2].copy()

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(WORLD_MAGIC)
        buf.write(struct.pack("<I", WORLD_VERSION))
        cfg = json.dumps({"seed": self.seed, "config": self.config.to_dict()}, sort_keys=True).encode()
        buf.write(struct.pack("<I", len(cfg)))
        buf.write(cfg)
        for name in ("terrain", "roads", "buildings", "landmarks"):
            arr = np.ascontiguousarray(getattr(self, name), dtype="<i4")
            buf.write(struct.pack("<B", len(name)))
            buf.write(name.encode())
            buf.write(struct.pack("<II", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "World":
        if data[:4] != WORLD_MAGIC:
            raise InvalidConfig("not a world file (bad magic)")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != WORLD_VERSION:
            raise InvalidConfig(f"unsupported world file version {version}")
        pos = 8
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        head = json.loads(data[pos:pos + n].decode())
        pos += n
        arrays = {}
        for _ in range(4):
            (ln,) = struct.unpack_from("<B", data, pos)
            pos += 1
            name = data[pos:pos + ln].decode()
            pos += ln
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            nbytes = rows * cols * 4
            arrays[name] = _readonly(np.frombuffer(data[pos:pos + nbytes], dtype="<i4").reshape(rows, cols).astype(np.int32))
            pos += nbytes
        return cls(seed=int(head["seed"]), config=WorldConfig.from_dict(head["config"]), **arrays)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def generate_world(seed: int, config: WorldConfig | None = None) -> World:
    """Deterministic procedural world for a (seed, config) pair."""
    config = config or WorldConfig()
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    ext_dm = int(round(config.extent * DM))
    side_km = config.extent / 1000.0

    terrain = []
    for ch in range(3):
        for lo, hi, amp in TERRAIN_BANDS:
            for _ in range(config.terrain_modes):
                wavelength = int(rng.integers(int(lo), int(hi) + 1))
                angle_mdeg = int(rng.integers(0, 360000))
                # micro-cycles per km along the drawn direction
                k = 1e9 / wavelength
                a = math.radians(angle_mdeg / 1000.0)
                kx = int(round(k * math.cos(a)))
                ky = int(round(k * math.sin(a)))
                amp_u = int(round(amp * 1e6 / max(config.terrain_modes, 1) * 2))
                phase = int(rng.integers(0, 1000000))
                terrain.append((ch, kx, ky, amp_u, phase))

    roads = []
    n_roads = int(round(config.road_density * side_km))
    for rid in range(n_roads):
        x = int(rng.integers(0, ext_dm))
        y = int(rng.integers(0, ext_dm))
        heading_mdeg = int(rng.integers(0, 180000))
        width = int(rng.integers(60, 141))
        n_seg = int(rng.integers(1, 4))
        seg_len = int(round(ext_dm * 1.5 / n_seg))
        # walk backwards half the length, then forward with small bends
        a = math.radians(heading_mdeg / 1000.0)
        px = x - int(round(math.cos(a) * seg_len * n_seg / 2))
        py = y - int(round(math.sin(a) * seg_len * n_seg / 2))
        for _ in range(n_seg):
            qx = px + int(round(math.cos(a) * seg_len))
            qy = py + int(round(math.sin(a) * seg_len))
            roads.append((rid, px, py, qx, qy, width))
            px, py = qx, qy
            a += math.radians(int(rng.integers(-30000, 30001)) / 1000.0)

    buildings = []
    n_build = int(round(config.building_density * side_km * side_km))
    for _ in range(n_build):
        cx = int(rng.integers(0, ext_dm))
        cy = int(rng.integers(0, ext_dm))
        w = int(rng.integers(100, 401))
        h = int(rng.integers(100, 401))
        cls = int(rng.integers(0, len(BUILDING_COLORS)))
        buildings.append((cx, cy, w, h, cls))

    landmarks = []
    if config.landmarks_per_cell > 0:
        cell_dm = int(round(config.landmark_cell * DM))
        n_cells = -(-ext_dm // cell_dm)
        for gy in range(n_cells):
            for gx in range(n_cells):
                x_lo, y_lo = gx * cell_dm, gy * cell_dm
                x_hi, y_hi = min(x_lo + cell_dm, ext_dm), min(y_lo + cell_dm, ext_dm)
                for _ in range(config.landmarks_per_cell):
                    cx = int(rng.integers(x_lo, x_hi))
                    cy = int(rng.integers(y_lo, y_hi))
                    cls = int(rng.integers(0, config.landmark_classes))
                    landmarks.append((cx, cy, cls))

    def arr(rows, ncols):
        return _readonly(np.array(rows, dtype=np.int32).reshape(-1, ncols))

    return World(
        seed=int(seed),
        config=config,
        terrain=arr(terrain, 5),
        roads=arr(roads, 6),
        buildings=arr(buildings, 5),
        landmarks=arr(landmarks, 3),
    )


def check_world_matches(world: World, pyramid: PyramidConfig) -> None:
    if abs(world.extent - pyramid.aoi_side) > 1e-9:
        raise InvalidConfig(f"world extent {world.extent} != AOI side {pyramid.aoi_side}")


# ---------------------------------------------------------------------------
# appearance


def terrain_color(world: World, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Smooth multi-band color field; ``u``/``v`` any broadcastable shape."""
    ch, kx, ky, amp, phase = world._terrain_f
    out = np.empty(np.broadcast(u, v).shape + (3,), dtype=np.float64)
    for c in range(3):
        acc = np.full(out.shape[:-1], TERRAIN_BASE[c])
        for i in np.flatnonzero(ch == c):
            acc += amp[i] * np.cos(2 * np.pi * (kx[i] * u + ky[i] * v + phase[i]))
        out[..., c] = acc
    return out


def _seg_distance(pu, pv, seg):
    x0, y0, x1, y1 = seg[0], seg[1], seg[2], seg[3]
    dx, dy = x1 - x0, y1 - y0
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return np.hypot(pu - x0, pv - y0)
    t = np.clip(((pu - x0) * dx + (pv - y0) * dy) / L2, 0.0, 1.0)
    return np.hypot(pu - (x0 + t * dx), pv - (y0 + t * dy))


def _landmark_mask(du, dv, cls, radius):
    shape = int(cls) % N_SHAPES
    r = np.hypot(du, dv)
    if shape == 0:
        return r <= radius
    if shape == 1:
        return (np.abs(du) <= radius * 0.85) & (np.abs(dv) <= radius * 0.85)
    if shape == 2:
        return (r <= radius) & (r >= radius * 0.5)
    arm = radius * 0.3
    return ((np.abs(du) <= arm) & (np.abs(dv) <= radius)) | ((np.abs(dv) <= arm) & (np.abs(du) <= radius))


def _paint_points(world: World, pu: np.ndarray, pv: np.ndarray, landmark_ids: np.ndarray | None = None) -> np.ndarray:
    """Appearance at arbitrary points; ``landmark_ids`` restricts which landmarks are drawn."""
    img = terrain_color(world, pu, pv).astype(np.float32)
    if pu.size == 0:
        return img
    lo_u, hi_u, lo_v, hi_v = pu.min(), pu.max(), pv.min(), pv.max()
    roads = world._roads_f
    for seg in roads:
        half = seg[4] / 2
        if (max(seg[0], seg[2]) + half < lo_u or min(seg[0], seg[2]) - half > hi_u
                or max(seg[1], seg[3]) + half < lo_v or min(seg[1], seg[3]) - half > hi_v):
            continue
        img[_seg_distance(pu, pv, seg) <= half] = ROAD_COLOR
    for b in world._buildings_f:
        cx, cy, w, h, cls = b
        if cx + w / 2 < lo_u or cx - w / 2 > hi_u or cy + h / 2 < lo_v or cy - h / 2 > hi_v:
            continue
        m = (np.abs(pu - cx) <= w / 2) & (np.abs(pv - cy) <= h / 2)
        img[m] = BUILDING_COLORS[int(cls)]
    lms = world._landmarks_f
    ids = np.arange(len(lms)) if landmark_ids is None else landmark_ids
    r = world.config.landmark_radius
    for i in ids:
        cx, cy, cls = lms[i]
        if cx + r < lo_u or cx - r > hi_u or cy + r < lo_v or cy - r > hi_v:
            continue
        m = _landmark_mask(pu - cx, pv - cy, cls, r)
        img[m] = LANDMARK_COLORS[int(cls)]
    return img


def render_rect(world: World, rect: Rect, resolution: int, supersample: int | None = None) -> np.ndarray:
    """Rasterize ``rect`` to a ``(resolution, resolution, 3)`` float32 image in [0, 1]."""
    ss = world.config.tile_supersample if supersample is None else supersample
    n = resolution * ss
    step = rect.side / n
    coords_u = rect.u0 + (np.arange(n) + 0.5) * step
    coords_v = rect.v0 + (np.arange(n) + 0.5) * step
    img = terrain_color(world, coords_u[None, :], coords_v[:, None]).astype(np.float32)

    def span(lo, hi, origin):
        a = int(math.floor((lo - origin) / step - 0.5))
        b = int(math.ceil((hi - origin) / step + 0.5))
        return max(a, 0), min(b, n)

    for seg in world._roads_f:
        half = seg[4] / 2
        i0, i1 = span(min(seg[1], seg[3]) - half, max(seg[1], seg[3]) + half, rect.v0)
        j0, j1 = span(min(seg[0], seg[2]) - half, max(seg[0], seg[2]) + half, rect.u0)
        if i0 >= i1 or j0 >= j1:
            continue
        d = _seg_distance(coords_u[None, j0:j1], coords_v[i0:i1, None], seg)
        img[i0:i1, j0:j1][d <= half] = ROAD_COLOR
    for cx, cy, w, h, cls in world._buildings_f:
        i0, i1 = span(cy - h / 2, cy + h / 2, rect.v0)
        j0, j1 = span(cx - w / 2, cx + w / 2, rect.u0)
        if i0 >= i1 or j0 >= j1:
            continue
        m = (np.abs(coords_u[None, j0:j1] - cx) <= w / 2) & (np.abs(coords_v[i0:i1, None] - cy) <= h / 2)
        img[i0:i1, j0:j1][m] = BUILDING_COLORS[int(cls)]
    r = world.config.landmark_radius
    for cx, cy, cls in world._landmarks_f:
        i0, i1 = span(cy - r, cy + r, rect.v0)
        j0, j1 = span(cx - r, cx + r, rect.u0)
        if i0 >= i1 or j0 >= j1:
            continue
        m = _landmark_mask(coords_u[None, j0:j1] - cx, coords_v[i0:i1, None] - cy, cls, r)
        img[i0:i1, j0:j1][m] = LANDMARK_COLORS[int(cls)]
    if ss > 1:
        img = img.reshape(resolution, ss, resolution, ss, 3).mean(axis=(1, 3))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True, eq=False)
class TileImage:
    pixels: np.ndarray
    address: tuple
    resolution: int


def render_tile(world: World, address: Sequence[int], pyramid: PyramidConfig, resolution: int | None = None) -> TileImage:
    check_world_matches(world, pyramid)
    rect = tile_bounds(list(address), pyramid)
    res = resolution or world.config.tile_resolution
    return TileImage(pixels=render_rect(world, rect, res), address=tuple(int(a) for a in address), resolution=res)


class TileCache:
    """Memoizing tile source for one world/pyramid pair."""

    def __init__(self, world: World, pyramid: PyramidConfig, resolution: int | None = None):
        check_world_matches(world, pyramid)
        self.world = world
        self.pyramid = pyramid
        self.resolution = resolution or world.config.tile_resolution
        self._cache: dict[tuple, np.ndarray] = {}
        self.renders = 0

    def __call__(self, address: Sequence[int]) -> np.ndarray:
        key = tuple(int(a) for a in address)
        img = self._cache.get(key)
        if img is None:
            if len(key) > self.pyramid.num_steps:
                raise InvalidAction(f"address {key} deeper than the pyramid")
            img = render_tile(self.world, key, self.pyramid, self.resolution).pixels
            img.setflags(write=False)
            self._cache[key] = img
            self.renders += 1
        return img


# ---------------------------------------------------------------------------
# ground observations


@dataclass(frozen=True, eq=False)
class Observation:
    pixels: np.ndarray
    heading: float
    fov: float
    location: LocalPoint
    noise_seed: int = 0


def _angle_in_wedge(bearing: np.ndarray, heading: float, fov: float) -> np.ndarray:
    if fov >= 360.0:
        return np.ones_like(bearing, dtype=bool)
    diff = (bearing - heading + 180.0) % 360.0 - 180.0
    return np.abs(diff) <= fov / 2


def visible_landmarks(world: World, p: LocalPoint, heading: float, fov: float) -> np.ndarray:
    """Indices of landmarks whose center falls inside the viewing wedge."""
    lm = world._landmarks_f
    if len(lm) == 0:
        return np.zeros(0, dtype=np.int64)
    du = lm[:, 0] - p.u
    dv = lm[:, 1] - p.v
    d = np.hypot(du, dv)
    # bearing clockwise from north; north is -v
    bearing = np.degrees(np.arctan2(du, -dv)) % 360.0
    cfg = world.config
    ok = (d >= cfg.near_distance) & (d <= cfg.visibility_radius) & _angle_in_wedge(bearing, heading, fov)
    return np.flatnonzero(ok)


def wedge_points(world: World, p: LocalPoint, heading: float, fov: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample grid of the observation: ``(u, v, distance)`` arrays of the supersampled raster."""
    cfg = world.config
    ss = cfg.obs_supersample
    H, W = cfg.obs_height * ss, cfg.obs_width * ss
    # rows: far at the top, log-spaced; columns: left-to-right across the wedge
    frac = (H - 1 - np.arange(H) + 0.5) / H
    dist = cfg.near_distance * (cfg.visibility_radius / cfg.near_distance) ** frac
    ang = heading - fov / 2 + (np.arange(W) + 0.5) / W * fov
    th = np.radians(ang)
    pu = p.u + dist[:, None] * np.sin(th)[None, :]
    pv = p.v - dist[:, None] * np.cos(th)[None, :]
    return pu, pv, np.broadcast_to(dist[:, None], (H, W))


def render_observation(world: World, p: LocalPoint, heading: float, fov: float, noise_seed: int) -> Observation:
    """Wedge-sampled ground view around ``p`` looking toward ``heading`` (degrees clockwise from north)."""
    cfg = world.config
    if not (0 <= p.u < world.extent and 0 <= p.v < world.extent):
        raise OutOfAOI(f"{p} outside the world extent")
    heading = float(heading) % 360.0
    pu, pv, dist = wedge_points(world, p, heading, fov)
    ids = visible_landmarks(world, p, heading, fov)
    img = _paint_points(world, pu, pv, landmark_ids=ids)
    w = np.minimum(1.0, cfg.attenuation_ref / dist)[..., None].astype(np.float32)
    img = HAZE + w * (img - HAZE)
    ss = cfg.obs_supersample
    if ss > 1:
        img = img.reshape(cfg.obs_height, ss, cfg.obs_width, ss, 3).mean(axis=(1, 3))
    rng = np.random.Generator(np.random.PCG64(int(noise_seed)))
    img = img + rng.normal(0.0, cfg.noise_sigma, size=img.shape)
    pixels = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Observation(pixels=pixels, heading=heading, fov=float(fov), location=p, noise_seed=int(noise_seed))


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True, eq=False)
class Episode:
    observation: Observation
    actions: tuple
    location: GeoPoint

    @property
    def local(self) -> LocalPoint:
        return self.observation.location


def sample_locations(extent: float, n: int, seed: int, min_spacing: float = 4.0) -> np.ndarray:
    """``(n, 2)`` uniform locations with consecutive pairs at least ``min_spacing`` apart."""
    if n < 1:
        raise InvalidConfig("n must be >= 1")
    if min_spacing < 0:
        raise InvalidConfig("min_spacing must be >= 0")
    if n > 1 and min_spacing > extent * math.sqrt(2) / 2:
        raise InvalidConfig(f"spacing {min_spacing} m infeasible inside a {extent} m AOI")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    out = np.empty((n, 2), dtype=np.float64)
    for i in range(n):
        for _ in range(10000):
            q = rng.random(2) * extent
            if i == 0 or math.hypot(q[0] - out[i - 1, 0], q[1] - out[i - 1, 1]) >= min_spacing:
                break
        else:
            raise InvalidConfig("could not satisfy spacing constraint")
        out[i] = q
    return out


@dataclass(frozen=True, eq=False)
class EpisodePlan:
    """Everything about a set of episodes except the rendered pixels."""

    locations: np.ndarray  # (n, 2) local u, v
    headings: np.ndarray
    fovs: np.ndarray
    noise_seeds: np.ndarray
    actions: np.ndarray    # (n, N)

    def __len__(self) -> int:
        return int(self.locations.shape[0])

    def local(self, i: int) -> LocalPoint:
        return LocalPoint(float(self.locations[i, 0]), float(self.locations[i, 1]))


def plan_episodes(world: World, pyramid: PyramidConfig, n: int, seed: int, min_spacing: float = 4.0) -> EpisodePlan:
    check_world_matches(world, pyramid)
    locs = sample_locations(world.extent, n, seed, min_spacing)
    sub = np.random.SeedSequence([int(seed), 1]).generate_state(1, np.uint64)[0]
    rng = np.random.Generator(np.random.PCG64(int(sub)))
    headings = rng.random(n) * 360.0
    lo, hi = world.config.fov_range
    fovs = lo + rng.random(n) * (hi - lo)
    noise = rng.integers(0, 2**62, size=n)
    actions = encode_locations(locs[:, 0], locs[:, 1], pyramid)
    return EpisodePlan(locs, headings, fovs, noise, actions)


def render_episode(world: World, pyramid: PyramidConfig, plan: EpisodePlan, i: int) -> Episode:
    p = plan.local(i)
    obs = render_observation(world, p, float(plan.headings[i]), float(plan.fovs[i]), int(plan.noise_seeds[i]))
    return Episode(observation=obs, actions=tuple(int(a) for a in plan.actions[i]), location=geo_from_local(p, pyramid))


def sample_episodes(world: World, pyramid: PyramidConfig, n: int, seed: int, min_spacing: float = 4.0) -> list[Episode]:
    """``n`` labeled episodes; labels come from the location codec, never from heading or fov."""
    plan = plan_episodes(world, pyramid, n, seed, min_spacing)
    return [render_episode(world, pyramid, plan, i) for i in range(n)]


# ---------------------------------------------------------------------------
# analysis helpers


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(1.0 / mse)


def landmark_signatures(world: World, pyramid: PyramidConfig, radius: float = 200.0) -> list[tuple]:
    """Per-leaf class-count vector of landmarks within ``radius`` of the leaf center."""
    from scipy.spatial import cKDTree

    n = pyramid.leaves_per_side
    side = pyramid.leaf_side
    c = (np.arange(n) + 0.5) * side
    cu, cv = np.meshgrid(c, c)  # row-major: v rows, u columns
    centers = np.stack([cu.ravel(), cv.ravel()], axis=1)
    classes = world.landmark_classes()
    n_cls = world.config.landmark_classes
    if len(classes) == 0:
        return [tuple([0] * n_cls)] * len(centers)
    tree = cKDTree(world.landmark_points())
    sigs = []
    for idx in tree.query_ball_point(centers, r=radius):
        sigs.append(tuple(np.bincount(classes[idx], minlength=n_cls).tolist()))
    return sigs


def identifiable_fraction(world: World, pyramid: PyramidConfig, radius: float = 200.0) -> float:
    sigs = landmark_signatures(world, pyramid, radius)
    counts: dict[tuple, int] = {}
    for s in sigs:
        counts[s] = counts.get(s, 0) + 1
    return sum(1 for s in sigs if counts[s] == 1) / len(sigs)
