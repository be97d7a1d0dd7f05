"""Road geometry, procedural scenario generation, routes, and drivable-area queries.

Maps are generated procedurally from six scenario families (straight, curve,
T-intersection, crossroad, roundabout, highway).  Lane connectivity is explicit
adjacency; drivable area is stored as explicit polygons per lane plus junction
discs so containment checks are unambiguous.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

LANE_WIDTH = 3.5
SCENARIO_KINDS = ("straight", "curve", "t_intersection", "crossroad", "roundabout", "highway")


class InvalidGeometryError(ValueError):
    """Scenario parameters produce degenerate or self-intersecting geometry."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LaneSegment:
    id: str
    centerline: np.ndarray            # (N, 2) metres
    width: float
    speed_limit: float
    successors: tuple = ()
    predecessors: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.centerline, np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise InvalidGeometryError(f"lane {self.id}: centerline needs >= 2 points")
        if np.any(np.hypot(*(np.diff(pts, axis=0).T)) <= 0):
            raise InvalidGeometryError(f"lane {self.id}: consecutive centerline points coincide")
        if self.width <= 0 or self.speed_limit <= 0:
            raise InvalidGeometryError(f"lane {self.id}: width and speed_limit must be positive")
        object.__setattr__(self, "centerline", pts)


@dataclass(frozen=True)
class Regulation:
    kind: str                          # yield_line | stop_sign | traffic_light
    position: tuple                    # (x, y)
    lane: str
    light_schedule: tuple | None = None  # (green_s, red_s, offset_s)

    def __post_init__(self):
        if self.kind not in ("yield_line", "stop_sign", "traffic_light"):
            raise ValueError(f"unknown regulation kind {self.kind!r}")
        if (self.light_schedule is not None) != (self.kind == "traffic_light"):
            raise ValueError("light_schedule present iff kind is traffic_light")
        if self.light_schedule is not None:
            g, r, _ = self.light_schedule
            if g <= 0 or r <= 0:
                raise ValueError("light phase durations must be positive")

    def is_red(self, time: float) -> bool:
        """Lights cycle green-then-red; other kinds are never 'red'."""
        if self.kind != "traffic_light":
            return False
        g, r, off = self.light_schedule
        return ((time + off) % (g + r)) >= g


@dataclass(frozen=True)
class RoadMap:
    lanes: dict                        # id -> LaneSegment
    drivable_polygons: tuple           # tuple of (K, 2) arrays
    polygon_speed_limits: tuple        # parallel speed limit per polygon
    regulations: tuple                 # tuple of Regulation
    entry_points: tuple                # ((lane_id, s), ...)
    exit_points: tuple
    lane_polygon_index: dict = field(default_factory=dict)  # lane id -> polygon index

    def __post_init__(self):
        ids = set(self.lanes)
        for lane in self.lanes.values():
            for ref in tuple(lane.successors) + tuple(lane.predecessors):
                if ref not in ids:
                    raise InvalidGeometryError(f"lane {lane.id}: dangling reference {ref!r}")
        for lane_id, _ in tuple(self.entry_points) + tuple(self.exit_points):
            if lane_id not in ids:
                raise InvalidGeometryError(f"dangling entry/exit lane {lane_id!r}")
        object.__setattr__(self, "_packed", kernels.PackedPolygons(list(self.drivable_polygons)))

    def packed_polygons(self) -> kernels.PackedPolygons:
        return self._packed


@dataclass(frozen=True)
class Route:
    lane_ids: tuple
    centerline: np.ndarray             # (N, 2)
    cum_s: np.ndarray                  # (N,) cumulative arc length
    total_length: float
    curvature: np.ndarray              # (N,) |kappa| estimate per vertex
    speed_limits: np.ndarray           # (N,) limit of the owning lane per vertex

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.total_length)
        return np.array([np.interp(s, self.cum_s, self.centerline[:, 0]),
                         np.interp(s, self.cum_s, self.centerline[:, 1])])

    def heading_at(self, s: float) -> float:
        i = int(np.searchsorted(self.cum_s, min(max(s, 0.0), self.total_length), side="right"))
        i = min(max(i, 1), len(self.cum_s) - 1)
        d = self.centerline[i] - self.centerline[i - 1]
        return math.atan2(d[1], d[0])

    def speed_limit_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self.cum_s, s, side="right") - 1, 0, len(self.cum_s) - 1))
        return float(self.speed_limits[i])

    def max_curvature_ahead(self, s: float, window: float) -> float:
        i0 = int(np.searchsorted(self.cum_s, s))
        i1 = int(np.searchsorted(self.cum_s, s + window))
        if i0 >= len(self.curvature):
            return 0.0
        return float(np.max(self.curvature[i0:max(i1, i0 + 1)]))


@dataclass(frozen=True)
class FixedInit:
    route_index: int
    start_s: float
    start_speed: float
    seed: int


@dataclass(frozen=True)
class Scenario:
    map: RoadMap
    kind: str
    density_schedule: tuple            # ((t_start, rate_per_s), ...)
    fixed_inits: tuple
    routes: tuple
    scenario_id: str

    def density_at(self, time: float) -> float:
        rate = 0.0
        for t0, r in self.density_schedule:
            if time >= t0:
                rate = r
        return rate


# ---------------------------------------------------------------------------
# polyline helpers
# ---------------------------------------------------------------------------

def polyline_cum_length(pts: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def _dedupe(pts: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    keep = [0]
    for i in range(1, len(pts)):
        if np.hypot(*(pts[i] - pts[keep[-1]])) > eps:
            keep.append(i)
    return pts[keep]


def _offset_polyline(pts: np.ndarray, offset: float) -> np.ndarray:
    """Offset a polyline to its left (positive) by averaging segment normals."""
    d = np.diff(pts, axis=0)
    seg_n = np.stack([-d[:, 1], d[:, 0]], axis=1)
    seg_n /= np.linalg.norm(seg_n, axis=1, keepdims=True)
    vert_n = np.empty_like(pts)
    vert_n[0] = seg_n[0]
    vert_n[-1] = seg_n[-1]
    if len(pts) > 2:
        avg = seg_n[:-1] + seg_n[1:]
        norms = np.linalg.norm(avg, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1.0
        vert_n[1:-1] = avg / norms
    return pts + offset * vert_n


def lane_polygon(lane: LaneSegment) -> np.ndarray:
    left = _offset_polyline(lane.centerline, lane.width / 2.0)
    right = _offset_polyline(lane.centerline, -lane.width / 2.0)
    return np.vstack([left, right[::-1]])


def _arc(center, radius, a0, a1, step=0.13):
    n = max(2, int(math.ceil(abs(a1 - a0) / step)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def _bezier(p0, p1, p2, n=16):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def _connector(p0, d0, p2, d2, n=16):
    """Curve from p0 (tangent d0) to p2 (tangent d2) via tangent intersection."""
    denom = d0[0] * d2[1] - d0[1] * d2[0]
    if abs(denom) < 1e-6:  # parallel tangents: straight-ish link
        mid = 0.5 * (p0 + p2)
    else:
        t = ((p2[0] - p0[0]) * d2[1] - (p2[1] - p0[1]) * d2[0]) / denom
        mid = p0 + t * d0
        # reject control points far outside the chord (nearly-parallel tangents)
        if np.linalg.norm(mid - 0.5 * (p0 + p2)) > 2.0 * np.linalg.norm(p2 - p0):
            mid = 0.5 * (p0 + p2)
    return _dedupe(_bezier(np.asarray(p0, float), mid, np.asarray(p2, float), n))


def _unit(angle):
    return np.array([math.cos(angle), math.sin(angle)])


def _rot90(v):  # rotate +90 deg (left)
    return np.array([-v[1], v[0]])


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def project_to_route(route: Route, point) -> tuple:
    """Arc length and signed lateral offset (positive left) of the closest
    centerline point; distance ties resolve to the smaller arc length."""
    pts = route.centerline
    s, lat, _ = kernels.project_polyline(
        np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
        np.ascontiguousarray(route.cum_s), float(point[0]), float(point[1]))
    return float(s), float(lat)


def point_in_drivable(road_map: RoadMap, point) -> bool:
    """True iff the point is inside or on the boundary of any drivable polygon."""
    for poly in road_map.drivable_polygons:
        if kernels.point_in_polygon(point[0], point[1], poly):
            return True
    return False


def build_route(road_map: RoadMap, lane_ids) -> Route:
    parts = []
    limits = []
    for lid in lane_ids:
        lane = road_map.lanes[lid]
        pts = lane.centerline
        if parts and np.hypot(*(pts[0] - parts[-1][-1])) < 1e-6:
            pts = pts[1:]
        parts.append(pts)
        limits.extend([lane.speed_limit] * len(pts))
    centerline = _dedupe(np.vstack(parts))
    limits = np.asarray(limits[:len(centerline)], np.float64)
    if len(limits) < len(centerline):
        limits = np.concatenate([limits, [limits[-1]] * (len(centerline) - len(limits))])
    cum = polyline_cum_length(centerline)
    d = np.diff(centerline, axis=0)
    headings = np.arctan2(d[:, 1], d[:, 0])
    curv = np.zeros(len(centerline))
    if len(headings) > 1:
        dh = np.diff(headings)
        dh = (dh + np.pi) % (2 * np.pi) - np.pi
        ds = 0.5 * (np.hypot(*d[:-1].T) + np.hypot(*d[1:].T))
        curv[1:-1] = np.abs(dh) / np.maximum(ds, 1e-9)
    return Route(lane_ids=tuple(lane_ids), centerline=centerline, cum_s=cum,
                 total_length=float(cum[-1]), curvature=curv, speed_limits=limits)


def enumerate_routes(road_map: RoadMap) -> tuple:
    """All acyclic entry-to-exit lane chains, in deterministic order."""
    entry_lanes = sorted({lid for lid, _ in road_map.entry_points})
    exit_lanes = {lid for lid, _ in road_map.exit_points}
    chains = []

    def dfs(chain, visited):
        tail = road_map.lanes[chain[-1]]
        if chain[-1] in exit_lanes:
            chains.append(tuple(chain))
        for nxt in sorted(tail.successors):
            if nxt not in visited:
                dfs(chain + [nxt], visited | {nxt})

    for lid in entry_lanes:
        dfs([lid], {lid})
    unique = sorted(set(chains))
    return tuple(build_route(road_map, chain) for chain in unique)


# ---------------------------------------------------------------------------
# scenario builders
# ---------------------------------------------------------------------------

DEFAULT_PARAMS = {
    "straight": dict(length=160.0, lanes=1, speed_limit=12.0),
    "curve": dict(radius=25.0, angle_deg=90.0, approach=40.0, speed_limit=11.0),
    "t_intersection": dict(arm_length=60.0, junction_radius=9.0, speed_limit=11.0,
                           regulation="auto"),
    "crossroad": dict(arm_length=60.0, junction_radius=10.0, speed_limit=11.0,
                      regulation="light"),
    "roundabout": dict(ring_radius=14.0, arms=3, arm_length=45.0, speed_limit=10.0,
                       ring_speed=7.0),
    "highway": dict(length=360.0, lanes=None, speed_limit=25.0),
}

DEFAULT_DENSITY = {
    "straight": 0.08, "curve": 0.06, "t_intersection": 0.08, "crossroad": 0.08,
    "roundabout": 0.08, "highway": 0.05,
}


def _two_way_arm(name, angle, junction_r, arm_length, limit, center=(0.0, 0.0)):
    """One inbound and one outbound lane for an arm of a junction.

    Right-hand traffic: each lane sits half a lane width right of its travel
    direction relative to the arm axis.
    """
    u = _unit(angle)
    c = np.asarray(center, float)
    far = c + (junction_r + arm_length) * u
    near = c + junction_r * u
    off = LANE_WIDTH / 2.0
    # outbound: travelling away from the junction
    out_shift = -_rot90(u) * off
    p_out = np.stack([near + out_shift + (far - near) * t for t in np.linspace(0, 1, 13)])
    # inbound: travelling toward the junction
    in_shift = -_rot90(-u) * off
    p_in = np.stack([far + in_shift + (near - far) * t for t in np.linspace(0, 1, 13)])
    lane_in = dict(id=f"{name}.in", centerline=p_in, width=LANE_WIDTH, speed_limit=limit)
    lane_out = dict(id=f"{name}.out", centerline=p_out, width=LANE_WIDTH, speed_limit=limit)
    return lane_in, lane_out


def _assemble(lanes_raw, regs, kind, seed, density, junction_polys=(), junction_limits=(),
              rng=None):
    # resolve successor/predecessor symmetry
    preds = {d["id"]: [] for d in lanes_raw}
    for d in lanes_raw:
        for suc in d.get("successors", ()):
            preds[suc].append(d["id"])
    lanes = {}
    polygons = []
    limits = []
    lane_poly_idx = {}
    for d in lanes_raw:
        lane = LaneSegment(id=d["id"], centerline=d["centerline"], width=d["width"],
                           speed_limit=d["speed_limit"],
                           successors=tuple(sorted(d.get("successors", ()))),
                           predecessors=tuple(sorted(preds[d["id"]])))
        lanes[lane.id] = lane
        lane_poly_idx[lane.id] = len(polygons)
        polygons.append(lane_polygon(lane))
        limits.append(lane.speed_limit)
    for poly, lim in zip(junction_polys, junction_limits):
        polygons.append(np.asarray(poly, float))
        limits.append(lim)
    entries = tuple(sorted((lid, 0.0) for lid, lane in lanes.items() if not lane.predecessors))
    exits = tuple(sorted((lid, float(polyline_cum_length(lane.centerline)[-1]))
                         for lid, lane in lanes.items() if not lane.successors))
    road_map = RoadMap(lanes=lanes, drivable_polygons=tuple(polygons),
                       polygon_speed_limits=tuple(limits), regulations=tuple(regs),
                       entry_points=entries, exit_points=exits,
                       lane_polygon_index=lane_poly_idx)
    routes = enumerate_routes(road_map)
    if not routes:
        raise InvalidGeometryError(f"{kind}: no entry-to-exit route exists")
    rng = rng if rng is not None else np.random.default_rng(seed)
    inits = []
    for k in range(10):
        ri = int(rng.integers(0, len(routes)))
        limit0 = routes[ri].speed_limit_at(0.0)
        speed = float(rng.uniform(0.4, 0.8) * limit0)
        inits.append(FixedInit(route_index=ri, start_s=0.0, start_speed=speed,
                               seed=int(rng.integers(0, 2 ** 31 - 1))))
    scenario = Scenario(map=road_map, kind=kind,
                        density_schedule=((0.0, density),),
                        fixed_inits=tuple(inits), routes=routes,
                        scenario_id=f"{kind}-{seed}")
    _validate_scenario(scenario)
    return scenario


def _validate_scenario(scenario: Scenario):
    m = scenario.map
    for lane in m.lanes.values():
        cum = polyline_cum_length(lane.centerline)
        for s in np.linspace(0, cum[-1], 7):
            p = [np.interp(s, cum, lane.centerline[:, 0]), np.interp(s, cum, lane.centerline[:, 1])]
            if not point_in_drivable(m, p):
                raise InvalidGeometryError(
                    f"{scenario.scenario_id}: lane {lane.id} leaves the drivable area at s={s:.1f}")
    for init in scenario.fixed_inits:
        route = scenario.routes[init.route_index]
        if not point_in_drivable(m, route.point_at(init.start_s)):
            raise InvalidGeometryError(f"{scenario.scenario_id}: fixed init outside drivable area")


def _build_straight(params, seed, rng, kind="straight"):
    length = float(params["length"])
    n_lanes = int(params["lanes"])
    limit = float(params["speed_limit"])
    if length < 20 or n_lanes < 1:
        raise InvalidGeometryError("straight: need length >= 20 m and >= 1 lane")
    lanes_raw = []
    npts = max(9, int(length // 10))
    for k in range(n_lanes):
        y = -k * LANE_WIDTH
        pts = np.stack([np.linspace(0, length, npts), np.full(npts, y)], axis=1)
        lanes_raw.append(dict(id=f"lane{k}", centerline=pts, width=LANE_WIDTH, speed_limit=limit))
    return _assemble(lanes_raw, [], kind, seed, DEFAULT_DENSITY[kind], rng=rng)


def _build_curve(params, seed, rng):
    radius = float(params["radius"])
    angle = math.radians(float(params["angle_deg"]))
    approach = float(params["approach"])
    limit = float(params["speed_limit"])
    if radius < 5.0:
        raise InvalidGeometryError("curve: radius below 5 m exceeds the curvature bound")
    if radius <= LANE_WIDTH:
        raise InvalidGeometryError("curve: radius must exceed the lane width")
    # approach east, arc turning left, then exit straight
    a = np.stack([np.linspace(-approach, 0, 9), np.zeros(9)], axis=1)
    center = np.array([0.0, radius])
    arc = _arc(center, radius, -math.pi / 2, -math.pi / 2 + angle)
    end_dir = _unit(angle)
    exit_pts = np.stack([arc[-1] + end_dir * t for t in np.linspace(0, approach, 9)])
    pts = _dedupe(np.vstack([a, arc[1:], exit_pts[1:]]))
    lanes_raw = [dict(id="lane0", centerline=pts, width=LANE_WIDTH, speed_limit=limit)]
    return _assemble(lanes_raw, [], "curve", seed, DEFAULT_DENSITY["curve"], rng=rng)


def _junction_disc(junction_r, limit, n=24):
    return _arc((0.0, 0.0), junction_r + LANE_WIDTH * 0.75, 0, 2 * math.pi, step=2 * math.pi / n)[:-1]


def _build_t_intersection(params, seed, rng):
    arm_len = float(params["arm_length"])
    jr = float(params["junction_radius"])
    limit = float(params["speed_limit"])
    if jr < 2 * LANE_WIDTH:
        raise InvalidGeometryError("t_intersection: junction radius too small for two lanes")
    arms = {"w": math.pi, "e": 0.0, "s": -math.pi / 2}
    lanes_raw = []
    ends = {}
    for name, ang in arms.items():
        lin, lout = _two_way_arm(name, ang, jr, arm_len, limit)
        lanes_raw.extend([lin, lout])
        ends[name] = (lin, lout, ang)
    for src in arms:
        lin = ends[src][0]
        for dst in arms:
            if dst == src:
                continue
            lout = ends[dst][1]
            d_in = -_unit(arms[src])
            d_out = _unit(arms[dst])
            pts = _connector(lin["centerline"][-1], d_in, lout["centerline"][0], d_out)
            cid = f"c.{src}{dst}"
            lanes_raw.append(dict(id=cid, centerline=pts, width=LANE_WIDTH, speed_limit=limit * 0.7))
            lin.setdefault("successors", []).append(cid)
            lanes_raw[-1]["successors"] = [lout["id"]]
    regulation = params.get("regulation", "auto")
    if regulation == "auto":
        regulation = ["yield", "stop", "light"][seed % 3]
    regs = []
    stem_in = ends["s"][0]
    stop_pos = tuple(stem_in["centerline"][-1])
    if regulation == "yield":
        regs.append(Regulation("yield_line", stop_pos, stem_in["id"]))
    elif regulation == "stop":
        regs.append(Regulation("stop_sign", stop_pos, stem_in["id"]))
    elif regulation == "light":
        # stem gets the counter-phase of the through road
        for name, off in (("w", 0.0), ("e", 0.0), ("s", 15.0)):
            lin = ends[name][0]
            regs.append(Regulation("traffic_light", tuple(lin["centerline"][-1]), lin["id"],
                                   light_schedule=(15.0, 20.0, off)))
    elif regulation != "none":
        raise InvalidGeometryError(f"t_intersection: unknown regulation {regulation!r}")
    disc = _junction_disc(jr, limit)
    return _assemble(lanes_raw, regs, "t_intersection", seed, DEFAULT_DENSITY["t_intersection"],
                     junction_polys=[disc], junction_limits=[limit], rng=rng)


def _build_crossroad(params, seed, rng):
    arm_len = float(params["arm_length"])
    jr = float(params["junction_radius"])
    limit = float(params["speed_limit"])
    if jr < 2 * LANE_WIDTH:
        raise InvalidGeometryError("crossroad: junction radius too small for two lanes")
    arms = {"e": 0.0, "n": math.pi / 2, "w": math.pi, "s": -math.pi / 2}
    lanes_raw = []
    ends = {}
    for name, ang in arms.items():
        lin, lout = _two_way_arm(name, ang, jr, arm_len, limit)
        lanes_raw.extend([lin, lout])
        ends[name] = (lin, lout, ang)
    for src in arms:
        lin = ends[src][0]
        for dst in arms:
            if dst == src:
                continue
            lout = ends[dst][1]
            pts = _connector(lin["centerline"][-1], -_unit(arms[src]),
                             lout["centerline"][0], _unit(arms[dst]))
            cid = f"c.{src}{dst}"
            lanes_raw.append(dict(id=cid, centerline=pts, width=LANE_WIDTH, speed_limit=limit * 0.7))
            lin.setdefault("successors", []).append(cid)
            lanes_raw[-1]["successors"] = [lout["id"]]
    regs = []
    regulation = params.get("regulation", "light")
    if regulation == "light":
        # opposing arms share a phase; greens never overlap (5 s all-red)
        for name, off in (("n", 0.0), ("s", 0.0), ("e", 15.0), ("w", 15.0)):
            lin = ends[name][0]
            regs.append(Regulation("traffic_light", tuple(lin["centerline"][-1]), lin["id"],
                                   light_schedule=(15.0, 20.0, off)))
    elif regulation == "yield":
        for name in ("e", "w"):
            lin = ends[name][0]
            regs.append(Regulation("yield_line", tuple(lin["centerline"][-1]), lin["id"]))
    elif regulation != "none":
        raise InvalidGeometryError(f"crossroad: unknown regulation {regulation!r}")
    disc = _junction_disc(jr, limit)
    return _assemble(lanes_raw, regs, "crossroad", seed, DEFAULT_DENSITY["crossroad"],
                     junction_polys=[disc], junction_limits=[limit], rng=rng)


def _build_roundabout(params, seed, rng):
    ring_r = float(params["ring_radius"])
    n_arms = int(params["arms"])
    arm_len = float(params["arm_length"])
    limit = float(params["speed_limit"])
    ring_speed = float(params["ring_speed"])
    if ring_r < 6.0:
        raise InvalidGeometryError("roundabout: ring radius must exceed vehicle length")
    if n_arms < 2:
        raise InvalidGeometryError("roundabout: need at least two arms")
    delta = 0.42  # rad between an arm axis and its ring attachment points
    attach_r = ring_r + 6.5
    lanes_raw = []
    regs = []
    arm_angles = [2 * math.pi * i / n_arms for i in range(n_arms)]
    ring_ids = []
    # counterclockwise circulation; per arm: bypass arc then main arc
    for i, phi in enumerate(arm_angles):
        nxt = arm_angles[(i + 1) % n_arms]
        if nxt <= phi:
            nxt += 2 * math.pi
        bypass = _arc((0, 0), ring_r, phi - delta, phi + delta)
        main = _arc((0, 0), ring_r, phi + delta, nxt - delta)
        lanes_raw.append(dict(id=f"ring.a{i}", centerline=bypass, width=LANE_WIDTH,
                              speed_limit=ring_speed, successors=[f"ring.b{i}"]))
        lanes_raw.append(dict(id=f"ring.b{i}", centerline=main, width=LANE_WIDTH,
                              speed_limit=ring_speed,
                              successors=[f"ring.a{(i + 1) % n_arms}"]))
        ring_ids.extend([f"ring.a{i}", f"ring.b{i}"])
    for i, phi in enumerate(arm_angles):
        name = f"arm{i}"
        lin, lout = _two_way_arm(name, phi, attach_r, arm_len, limit)
        lanes_raw.extend([lin, lout])
        entry_attach = np.array([ring_r * math.cos(phi + delta), ring_r * math.sin(phi + delta)])
        exit_attach = np.array([ring_r * math.cos(phi - delta), ring_r * math.sin(phi - delta)])
        tan_entry = _rot90(_unit(phi + delta))
        tan_exit = _rot90(_unit(phi - delta))
        e_pts = _connector(lin["centerline"][-1], -_unit(phi), entry_attach, tan_entry)
        x_pts = _connector(exit_attach, tan_exit, lout["centerline"][0], _unit(phi))
        lanes_raw.append(dict(id=f"enter{i}", centerline=e_pts, width=LANE_WIDTH,
                              speed_limit=ring_speed, successors=[f"ring.b{i}"]))
        lin["successors"] = [f"enter{i}"]
        lanes_raw.append(dict(id=f"exit{i}", centerline=x_pts, width=LANE_WIDTH,
                              speed_limit=ring_speed, successors=[lout["id"]]))
        # the main arc ending at this arm's exit attachment gains the exit connector
        prev_main = f"ring.b{(i - 1) % n_arms}"
        for d in lanes_raw:
            if d["id"] == prev_main:
                d["successors"].append(f"exit{i}")
        regs.append(Regulation("yield_line", tuple(lin["centerline"][-1]), lin["id"]))
    return _assemble(lanes_raw, regs, "roundabout", seed, DEFAULT_DENSITY["roundabout"], rng=rng)


def _build_highway(params, seed, rng):
    p = dict(params)
    if p.get("lanes") is None:
        p["lanes"] = 2 + seed % 2
    return _build_straight(p, seed, rng, kind="highway")


_BUILDERS = {
    "straight": _build_straight,
    "curve": _build_curve,
    "t_intersection": _build_t_intersection,
    "crossroad": _build_crossroad,
    "roundabout": _build_roundabout,
    "highway": _build_highway,
}


def build_scenario(kind: str, params=None, seed: int = 0) -> Scenario:
    """Generate a deterministic scenario of the given kind.

    ``params`` overrides entries of ``DEFAULT_PARAMS[kind]``.  Raises
    InvalidGeometryError for parameters that would produce degenerate lanes.
    """
    if kind not in _BUILDERS:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    merged = dict(DEFAULT_PARAMS[kind])
    if params:
        merged.update(params)
    rng = np.random.default_rng(seed)
    return _BUILDERS[kind](merged, seed, rng)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1


def scenario_to_dict(scenario: Scenario) -> dict:
    m = scenario.map
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario_id": scenario.scenario_id,
        "kind": scenario.kind,
        "lanes": [
            {"id": lane.id, "polyline": lane.centerline.tolist(), "width": lane.width,
             "speed_limit": lane.speed_limit, "successors": list(lane.successors)}
            for lane in (m.lanes[k] for k in sorted(m.lanes))
        ],
        "polygons": [
            {"points": np.asarray(p).tolist(), "speed_limit": lim}
            for p, lim in zip(m.drivable_polygons, m.polygon_speed_limits)
        ],
        "lane_polygon_index": {k: int(v) for k, v in sorted(m.lane_polygon_index.items())},
        "regulations": [
            {"kind": r.kind, "position": list(r.position), "lane": r.lane,
             "light_schedule": list(r.light_schedule) if r.light_schedule else None}
            for r in m.regulations
        ],
        "entries": [[lid, s] for lid, s in m.entry_points],
        "exits": [[lid, s] for lid, s in m.exit_points],
        "density_schedule": [[t, r] for t, r in scenario.density_schedule],
        "fixed_inits": [
            {"route": fi.route_index, "start_s": fi.start_s,
             "start_speed": fi.start_speed, "seed": fi.seed}
            for fi in scenario.fixed_inits
        ],
    }


def scenario_from_dict(data: dict) -> Scenario:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported scenario schema version {data.get('schema_version')!r}")
    preds = {d["id"]: [] for d in data["lanes"]}
    for d in data["lanes"]:
        for suc in d["successors"]:
            preds[suc].append(d["id"])
    lanes = {}
    for d in data["lanes"]:
        lanes[d["id"]] = LaneSegment(
            id=d["id"], centerline=np.asarray(d["polyline"], np.float64), width=d["width"],
            speed_limit=d["speed_limit"], successors=tuple(sorted(d["successors"])),
            predecessors=tuple(sorted(preds[d["id"]])))
    regs = tuple(
        Regulation(kind=r["kind"], position=tuple(r["position"]), lane=r["lane"],
                   light_schedule=tuple(r["light_schedule"]) if r["light_schedule"] else None)
        for r in data["regulations"])
    road_map = RoadMap(
        lanes=lanes,
        drivable_polygons=tuple(np.asarray(p["points"], np.float64) for p in data["polygons"]),
        polygon_speed_limits=tuple(p["speed_limit"] for p in data["polygons"]),
        regulations=regs,
        entry_points=tuple((lid, float(s)) for lid, s in data["entries"]),
        exit_points=tuple((lid, float(s)) for lid, s in data["exits"]),
        lane_polygon_index={k: int(v) for k, v in data.get("lane_polygon_index", {}).items()})
    routes = enumerate_routes(road_map)
    inits = tuple(FixedInit(route_index=fi["route"], start_s=fi["start_s"],
                            start_speed=fi["start_speed"], seed=fi["seed"])
                  for fi in data["fixed_inits"])
    return Scenario(map=road_map, kind=data["kind"],
                    density_schedule=tuple((float(t), float(r)) for t, r in data["density_schedule"]),
                    fixed_inits=inits, routes=routes, scenario_id=data["scenario_id"])


def save_scenario(scenario: Scenario, path):
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=1, sort_keys=True)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def scenario_digest(scenario: Scenario) -> str:
    blob = json.dumps(scenario_to_dict(scenario), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
