"""Ego-centered 4-channel BEV rasterization and training-time augmentation.

Channels: (0) obstacles - ego box at a constant value, other agents at
speed-proportional values; (1) drivable area at speed-limit-proportional
values; (2) the ego route's lanes at ego-speed-proportional value;
(3) regulation stop lines at kind-specific codes (green lights not drawn).

The frame is ego-centric with the ego heading pointing "up" (toward row 0).
Filling is scanline with half-open pixel-center sampling, so grids are
deterministic and platform-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .agents import AgentState, wrap_angle
from .scenemap import Route

REG_VALUES = {"yield_line": 0.33, "stop_sign": 0.66, "traffic_light": 1.0}


class MissingEgoError(KeyError):
    pass


@dataclass(frozen=True)
class RasterConfig:
    resolution: float = 0.5        # m per pixel (desk scale)
    extent: float = 64.0           # m side length
    v_max: float = 27.8            # speed normalization (100 km/h)
    ego_value: float = 1.0
    min_visible: float = 0.1       # floor so stationary agents stay visible
    line_px: int = 2               # regulation line thickness in pixels

    def __post_init__(self):
        if self.v_max <= 0 or self.resolution <= 0 or self.extent <= 0:
            raise ValueError("resolution, extent and v_max must be positive")
        if abs(self.extent / self.resolution - round(self.extent / self.resolution)) > 1e-9:
            raise ValueError("extent must be an integer number of pixels")

    @property
    def size(self) -> int:
        return int(round(self.extent / self.resolution))


def paper_scale_config() -> RasterConfig:
    return RasterConfig(resolution=0.25, extent=192.0)


@dataclass
class BevRaster:
    channels: np.ndarray           # (4, H, W) float32 in [0, 1]
    resolution: float
    extent: float
    ego_pose: tuple


@dataclass(frozen=True)
class AugmentNoise:
    sigma_pos: float = 0.15        # m
    sigma_heading: float = 0.03    # rad
    sigma_speed: float = 0.3       # m/s

    def __post_init__(self):
        if min(self.sigma_pos, self.sigma_heading, self.sigma_speed) < 0:
            raise ValueError("noise sigmas must be non-negative")


def _snapshot_of(world):
    return world.snapshot() if hasattr(world, "snapshot") else world


class _Frame:
    """World-to-pixel transform for a given ego pose: heading points up."""

    def __init__(self, ego_pose, config: RasterConfig):
        self.ex, self.ey, self.eh = ego_pose
        self.cos = math.cos(self.eh)
        self.sin = math.sin(self.eh)
        self.res = config.resolution
        self.half = config.size / 2.0 - 0.5

    def to_pixels(self, pts: np.ndarray):
        dx = pts[:, 0] - self.ex
        dy = pts[:, 1] - self.ey
        fwd = self.cos * dx + self.sin * dy
        left = -self.sin * dx + self.cos * dy
        rows = self.half - fwd / self.res
        cols = self.half - left / self.res
        return rows, cols


def _fill(grid, frame: _Frame, polygon: np.ndarray, value: float):
    rows, cols = frame.to_pixels(np.asarray(polygon, np.float64))
    h, w = grid.shape
    if rows.min() > h - 0.5 or rows.max() < -0.5 or cols.min() > w - 0.5 or cols.max() < -0.5:
        return
    kernels.fill_polygon(grid, np.ascontiguousarray(rows), np.ascontiguousarray(cols),
                         np.float32(value))


def _clamp01(x: float, floor: float = 0.0) -> float:
    return float(min(max(x, floor), 1.0))


def rasterize(world, ego_id: int, route: Route, config: RasterConfig = RasterConfig()) -> BevRaster:
    """Render the 4-channel ego-centered BEV grid of a world snapshot."""
    snap = _snapshot_of(world)
    ego = None
    for st in snap.agents:
        if st.id == ego_id:
            ego = st
            break
    if ego is None:
        raise MissingEgoError(f"no agent with id {ego_id} in world")
    size = config.size
    grids = np.zeros((4, size, size), np.float32)
    fr = _Frame(ego.pose, config)
    m = snap.scenario.map

    # channel 1: drivable area, speed-limit coded; higher limits win overlaps
    order = sorted(range(len(m.drivable_polygons)),
                   key=lambda i: (m.polygon_speed_limits[i], i))
    for i in order:
        _fill(grids[1], fr, m.drivable_polygons[i],
              _clamp01(m.polygon_speed_limits[i] / config.v_max))

    # channel 2: the ego route's lanes, ego-speed coded
    route_value = _clamp01(ego.speed / config.v_max, config.min_visible)
    for lane_id in route.lane_ids:
        idx = m.lane_polygon_index.get(lane_id)
        if idx is not None:
            _fill(grids[2], fr, m.drivable_polygons[idx], route_value)

    # channel 0: other agents speed-coded, ego drawn last at a constant value
    for st in sorted(snap.agents, key=lambda s: s.id):
        if st.id == ego_id:
            continue
        _fill(grids[0], fr, st.corners(), _clamp01(st.speed / config.v_max, config.min_visible))
    _fill(grids[0], fr, ego.corners(), config.ego_value)

    # channel 3: regulation stop lines (green lights are not drawn)
    thick = config.line_px * config.resolution
    for i, reg in enumerate(m.regulations):
        if reg.kind == "traffic_light" and not snap.reg_states[i]:
            continue
        lane = m.lanes[reg.lane]
        pts = lane.centerline
        cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
        s, _, _ = kernels.project_polyline(np.ascontiguousarray(pts[:, 0]),
                                           np.ascontiguousarray(pts[:, 1]),
                                           np.ascontiguousarray(cum),
                                           float(reg.position[0]), float(reg.position[1]))
        k = min(max(int(np.searchsorted(cum, s, side="right")), 1), len(pts) - 1)
        d = pts[k] - pts[k - 1]
        d = d / max(np.hypot(*d), 1e-12)
        n = np.array([-d[1], d[0]])
        p = np.asarray(reg.position, np.float64)
        half_w = lane.width / 2.0
        quad = np.array([p + n * half_w - d * thick / 2, p + n * half_w + d * thick / 2,
                         p - n * half_w + d * thick / 2, p - n * half_w - d * thick / 2])
        _fill(grids[3], fr, quad, REG_VALUES[reg.kind])

    return BevRaster(channels=grids, resolution=config.resolution,
                     extent=config.extent, ego_pose=tuple(ego.pose))


def augment(world, ego_id: int, rng: np.random.Generator,
            noise: AugmentNoise = AugmentNoise()):
    """Gaussian pose/speed perturbation of non-ego agents, truncated at three
    sigma (positions by vector norm); the ego and the map are untouched.
    Returns the same kind of object that was passed in."""
    snap = _snapshot_of(world)
    perturbed = []
    for st in sorted(snap.agents, key=lambda s: s.id):
        if st.id == ego_id:
            perturbed.append(st)
            continue
        dpos = rng.normal(0.0, noise.sigma_pos, 2) if noise.sigma_pos > 0 else np.zeros(2)
        norm = float(np.hypot(*dpos))
        if norm > 3.0 * noise.sigma_pos and norm > 0:
            dpos *= 3.0 * noise.sigma_pos / norm
        dh = float(rng.normal(0.0, noise.sigma_heading)) if noise.sigma_heading > 0 else 0.0
        dh = min(max(dh, -3.0 * noise.sigma_heading), 3.0 * noise.sigma_heading)
        dv = float(rng.normal(0.0, noise.sigma_speed)) if noise.sigma_speed > 0 else 0.0
        dv = min(max(dv, -3.0 * noise.sigma_speed), 3.0 * noise.sigma_speed)
        if dpos[0] == 0.0 and dpos[1] == 0.0 and dh == 0.0 and dv == 0.0:
            perturbed.append(st)
            continue
        perturbed.append(replace(
            st,
            pose=(st.pose[0] + float(dpos[0]), st.pose[1] + float(dpos[1]),
                  wrap_angle(st.pose[2] + dh)),
            speed=max(0.0, st.speed + dv)))
    if hasattr(world, "snapshot"):
        # WorldState: rebuild entries with perturbed states
        new_agents = {}
        by_id = {st.id: st for st in perturbed}
        for aid, entry in world.agents.items():
            new_agents[aid] = type(entry)(state=by_id[aid], params=entry.params)
        return type(world)(scenario=world.scenario, rng=world.rng, time=world.time,
                           tick=world.tick, agents=new_agents, ego_id=world.ego_id,
                           next_id=world.next_id, sign_clear=world.sign_clear)
    return type(snap)(time=snap.time, agents=perturbed, scenario=snap.scenario,
                      reg_states=snap.reg_states)


def raster_images(raster: BevRaster) -> dict:
    """Per-channel grayscale images plus an RGB composite, as uint8 arrays."""
    names = ("obstacles", "drivable", "route", "regulations")
    out = {}
    for i, name in enumerate(names):
        out[name] = (np.clip(raster.channels[i], 0, 1) * 255).astype(np.uint8)
    comp = np.stack([
        np.clip(raster.channels[0] + raster.channels[3], 0, 1),
        np.clip(raster.channels[2], 0, 1),
        np.clip(raster.channels[1], 0, 1),
    ], axis=-1)
    out["composite"] = (comp * 255).astype(np.uint8)
    return out
