"""Vehicle kinematics and rule-based behavior: kinematic bicycle, IDM
longitudinal control, and Pure Pursuit lateral tracking.

The same policy drives every non-ego agent and the privileged expert ego used
for data collection.  All functions are pure over value inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels

DT = 0.05                      # 20 Hz world step
ACCEL_BOUNDS = (-3.0, 2.0)     # m/s^2, control representation
KAPPA_BOUND = 0.2              # 1/m, control representation
LAT_COMFORT = 2.0              # m/s^2, curve speed adaptation

AGENT_CLASSES = ("car", "truck", "bus", "motorcycle", "pedestrian", "cyclist",
                 "static_obstacle")
VEHICLE_CLASSES = ("car", "truck", "bus", "motorcycle")

# (length, width) per class
CLASS_BBOX = {
    "car": (4.5, 1.9),
    "truck": (8.5, 2.5),
    "bus": (11.0, 2.5),
    "motorcycle": (2.2, 0.9),
    "pedestrian": (0.6, 0.6),
    "cyclist": (1.8, 0.7),
    "static_obstacle": (4.5, 1.9),
}

FREE_ROAD_GAP = 1e4


class MissingRouteError(ValueError):
    """A route-requiring agent class has no route assigned."""


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    if a == -math.pi:
        a = math.pi
    return a


@dataclass(frozen=True)
class AgentState:
    id: int
    agent_class: str
    pose: tuple                    # (x, y, heading)
    speed: float
    bbox: tuple                    # (length, width)
    route_index: int | None = None
    route_progress: float = 0.0

    def __post_init__(self):
        if self.agent_class not in AGENT_CLASSES:
            raise ValueError(f"unknown agent class {self.agent_class!r}")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if self.bbox[0] <= 0 or self.bbox[1] <= 0:
            raise ValueError("bbox dimensions must be positive")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.pose[0], self.pose[1]])

    @property
    def heading(self) -> float:
        return self.pose[2]

    def corners(self) -> np.ndarray:
        return kernels.obb_corners(self.pose[0], self.pose[1], self.pose[2],
                                   self.bbox[0], self.bbox[1])


@dataclass(frozen=True)
class AgentParams:
    desired_speed: float
    aggressiveness: float
    time_headway: float = 1.5          # IDM T
    min_gap: float = 2.0               # IDM s0
    max_accel: float = 1.5             # IDM a_max
    comfort_brake: float = 2.0         # IDM b
    exponent: float = 4.0              # IDM delta
    lookahead: float = 3.0             # Pure Pursuit minimum lookahead
    merge_assertiveness: float = 0.5
    accel_limits: tuple = ACCEL_BOUNDS
    speed_fraction: float = 1.0        # desired_speed / speed_limit at sampling

    def __post_init__(self):
        if min(self.time_headway, self.min_gap, self.max_accel,
               self.comfort_brake, self.lookahead) <= 0:
            raise ValueError("IDM/Pure-Pursuit constants must be positive")
        if not (self.accel_limits[0] < 0 < self.accel_limits[1]):
            raise ValueError("accel_limits must straddle zero")


STATIC_PARAMS = AgentParams(desired_speed=0.0, aggressiveness=0.0)


def bicycle_step(state: AgentState, a: float, kappa: float, dt: float = DT) -> AgentState:
    """Forward-Euler kinematic bicycle update; speed clamps at zero (no reverse).

    Position and heading advance with the pre-step speed and heading.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y, h = state.pose
    v = state.speed
    v_next = max(0.0, v + a * dt)
    h_next = wrap_angle(h + v * kappa * dt)
    x_next = x + v * math.cos(h) * dt
    y_next = y + v * math.sin(h) * dt
    return replace(state, pose=(x_next, y_next, h_next), speed=v_next)


def idm_accel(v: float, gap: float, delta_v: float, p: AgentParams) -> float:
    """Intelligent Driver Model acceleration.

    gap is the bumper-to-bumper distance to the leader (use a large sentinel
    for free road); delta_v = own speed minus leader speed.
    """
    v0 = max(p.desired_speed, 1e-3)
    s_star = p.min_gap + v * p.time_headway + v * delta_v / (2.0 * math.sqrt(p.max_accel * p.comfort_brake))
    s_star = max(s_star, p.min_gap)
    a = p.max_accel * (1.0 - (v / v0) ** p.exponent - (s_star / gap) ** 2)
    return float(min(max(a, p.accel_limits[0]), p.accel_limits[1]))


def pure_pursuit_curvature(pose, path: np.ndarray, lookahead: float) -> float:
    """Curvature steering toward the path point one lookahead arc ahead of the
    pose's projection; falls back to the path endpoint when the path is short.
    The result is clamped to the control representation bound.
    """
    pts = np.asarray(path, np.float64)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    s, _, _ = kernels.project_polyline(np.ascontiguousarray(pts[:, 0]),
                                       np.ascontiguousarray(pts[:, 1]),
                                       np.ascontiguousarray(cum),
                                       float(pose[0]), float(pose[1]))
    s_target = min(s + lookahead, cum[-1])
    tx = np.interp(s_target, cum, pts[:, 0])
    ty = np.interp(s_target, cum, pts[:, 1])
    dx = tx - pose[0]
    dy = ty - pose[1]
    dist = math.hypot(dx, dy)
    if dist < 1e-9:
        return 0.0
    alpha = wrap_angle(math.atan2(dy, dx) - pose[2])
    kappa = 2.0 * math.sin(alpha) / dist
    return float(min(max(kappa, -KAPPA_BOUND), KAPPA_BOUND))


def sample_agent_params(rng: np.random.Generator, agent_class: str,
                        speed_limit: float) -> AgentParams:
    """Draw per-agent behavior parameters; deterministic for a given rng state.

    aggressiveness ~ U[0,1]; desired_speed = limit*(0.8 + 0.4*aggr);
    T = 2.0 - 1.2*aggr.
    """
    if agent_class == "static_obstacle":
        return STATIC_PARAMS
    aggr = float(rng.uniform(0.0, 1.0))
    merge = float(rng.uniform(0.0, 1.0))
    frac = 0.8 + 0.4 * aggr
    if agent_class in ("pedestrian", "cyclist"):
        walk = 1.4 if agent_class == "pedestrian" else 4.0
        return AgentParams(desired_speed=walk * frac, aggressiveness=aggr,
                           merge_assertiveness=merge, max_accel=1.0,
                           accel_limits=(-2.0, 1.0), speed_fraction=frac)
    t_headway = 2.0 - 1.2 * aggr
    if agent_class in ("truck", "bus"):
        limits = (-2.5, 1.2)
        a_max = 0.8 + 0.4 * aggr
    else:
        limits = ACCEL_BOUNDS
        a_max = 1.0 + 0.8 * aggr
    return AgentParams(desired_speed=frac * speed_limit, aggressiveness=aggr,
                       time_headway=t_headway, max_accel=a_max,
                       merge_assertiveness=merge, accel_limits=limits,
                       speed_fraction=frac)


@dataclass(frozen=True)
class WorldView:
    """What a behavior policy may see, prepared by the simulation engine.

    leader_gap/leader_speed describe the nearest on-route leader; stop_gap is
    the distance to an active regulation stop point or merge yield point
    (treated as a standing leader).  path is the route centerline ahead.
    When privileged, the engine resolves merge conflicts from other agents'
    future routes and folds the result into stop_gap.
    """
    path: np.ndarray
    speed_limit: float
    curvature_ahead: float = 0.0
    leader_gap: float = FREE_ROAD_GAP
    leader_speed: float = 0.0
    stop_gap: float | None = None


def behavior_policy(agent: AgentState, params: AgentParams, view: WorldView | None,
                    privileged: bool = False) -> tuple:
    """Rule-based control for one agent: (acceleration, curvature).

    Vehicles combine IDM against the nearest constraint (leader, regulation
    stop, or merge yield) with Pure Pursuit on their route; pedestrians and
    cyclists follow their polyline at constant speed; static obstacles do
    nothing.
    """
    if agent.agent_class == "static_obstacle":
        return 0.0, 0.0
    if view is None or view.path is None:
        raise MissingRouteError(f"agent {agent.id} ({agent.agent_class}) requires a route")
    if agent.agent_class in ("pedestrian", "cyclist"):
        a = min(max((params.desired_speed - agent.speed) / 1.0,
                    params.accel_limits[0]), params.accel_limits[1])
        kappa = pure_pursuit_curvature(agent.pose, view.path, max(1.0, agent.speed))
        return float(a), float(kappa)

    # desired speed adapts to the posted limit and to curvature ahead
    v0 = params.speed_fraction * view.speed_limit
    if view.curvature_ahead > 1e-6:
        v0 = min(v0, math.sqrt(LAT_COMFORT / view.curvature_ahead))
    v0 = max(v0, 1.0)
    p_eff = replace(params, desired_speed=v0)

    gap = view.leader_gap
    delta_v = agent.speed - view.leader_speed
    if view.stop_gap is not None and view.stop_gap < gap:
        gap = view.stop_gap
        delta_v = agent.speed
    gap = max(gap, 0.1)
    a = idm_accel(agent.speed, gap, delta_v, p_eff)
    lookahead = max(params.lookahead, 1.0 * agent.speed)
    kappa = pure_pursuit_curvature(agent.pose, view.path, lookahead)
    return float(a), float(kappa)
