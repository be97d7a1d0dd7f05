"""World stepping at 20 Hz: spawn/despawn lifecycle, privileged rule-based
agents, collision detection, episode outcome classification, and the
length-prefixed binary episode format.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .agents import (AGENT_CLASSES, CLASS_BBOX, DT, FREE_ROAD_GAP, AgentParams,
                     AgentState, WorldView, behavior_policy, bicycle_step,
                     sample_agent_params)
from .scenemap import Route, Scenario, project_to_route

OUTCOMES = ("success", "out_of_route", "timeout", "collision")

EPISODE_MAGIC = b"FPEP"
EPISODE_VERSION = 1

_CLASS_CODE = {name: i for i, name in enumerate(AGENT_CLASSES)}

# spawn mix for procedurally generated traffic
_SPAWN_CLASSES = ("car", "truck", "bus", "motorcycle")
_SPAWN_CUMPROB = (0.80, 0.88, 0.92, 1.00)


MAX_AGENTS = 24


@dataclass(frozen=True)
class EpisodeLimits:
    timeout: float = 120.0
    lateral_max: float = 3.0
    success_margin: float = 1.0


@dataclass
class AgentEntry:
    state: AgentState
    params: AgentParams


@dataclass
class WorldState:
    scenario: Scenario
    rng: np.random.Generator
    time: float = 0.0
    tick: int = 0
    agents: dict = field(default_factory=dict)       # id -> AgentEntry
    ego_id: int | None = None
    next_id: int = 0
    sign_clear: set = field(default_factory=set)     # (agent_id, reg_index) cleared stop signs

    def sorted_entries(self):
        return [self.agents[k] for k in sorted(self.agents)]

    def reg_states(self) -> np.ndarray:
        """1 where the regulation currently demands a stop (red light, or any
        yield/stop line, which are always active)."""
        regs = self.scenario.map.regulations
        out = np.zeros(len(regs), np.uint8)
        for i, reg in enumerate(regs):
            if reg.kind == "traffic_light":
                out[i] = 1 if reg.is_red(self.time) else 0
            else:
                out[i] = 1
        return out

    def snapshot(self) -> "WorldSnapshot":
        return WorldSnapshot(time=self.time,
                             agents=[e.state for e in self.sorted_entries()],
                             scenario=self.scenario, reg_states=self.reg_states())


@dataclass
class WorldSnapshot:
    """Immutable view of one instant, sufficient for rasterization."""
    time: float
    agents: list
    scenario: Scenario
    reg_states: np.ndarray


# ---------------------------------------------------------------------------
# scenario runtime: derived lookup structures shared by all worlds
# ---------------------------------------------------------------------------

class ScenarioRuntime:
    """Per-scenario caches: regulation arc positions per route and pairwise
    route conflict zones used for privileged merge/crossing resolution."""

    CONFLICT_DIST = 2.2
    ZONE_CAP = 18.0

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.routes = scenario.routes
        m = scenario.map
        self.route_regs = []
        for route in self.routes:
            lane_set = set(route.lane_ids)
            regs = []
            for idx, reg in enumerate(m.regulations):
                if reg.lane in lane_set:
                    s, lat = project_to_route(route, reg.position)
                    if abs(lat) < 3.0:
                        regs.append((float(s), idx))
            regs.sort()
            self.route_regs.append(tuple(regs))
        self.minor_route = tuple(
            any(m.regulations[idx].kind in ("yield_line", "stop_sign") for _, idx in regs)
            for regs in self.route_regs)
        self.conflicts = self._compute_conflicts()

    def _compute_conflicts(self) -> dict:
        samples = []
        for route in self.routes:
            n = max(2, int(route.total_length))
            s = np.linspace(0.0, route.total_length, n)
            pts = np.stack([np.interp(s, route.cum_s, route.centerline[:, 0]),
                            np.interp(s, route.cum_s, route.centerline[:, 1])], axis=1)
            samples.append((s, pts))
        conflicts = {}
        thr2 = self.CONFLICT_DIST ** 2
        for i in range(len(self.routes)):
            si, pi = samples[i]
            for j in range(i + 1, len(self.routes)):
                sj, pj = samples[j]
                d2 = ((pi[:, None, :] - pj[None, :, :]) ** 2).sum(-1)
                mask = d2 < thr2
                if not mask.any():
                    continue
                ii, jj = np.nonzero(mask)
                si0 = float(si[ii.min()])
                sj0 = float(sj[jj.min()])
                si1 = min(float(si[ii.max()]), si0 + self.ZONE_CAP)
                sj1 = min(float(sj[jj.max()]), sj0 + self.ZONE_CAP)
                conflicts[(i, j)] = (si0, si1, sj0, sj1)
                conflicts[(j, i)] = (sj0, sj1, si0, si1)
        return conflicts


_RUNTIME_CACHE: dict = {}


def get_runtime(scenario: Scenario) -> ScenarioRuntime:
    key = id(scenario)
    hit = _RUNTIME_CACHE.get(key)
    if hit is not None and hit.scenario is scenario:
        return hit
    rt = ScenarioRuntime(scenario)
    _RUNTIME_CACHE[key] = rt
    return rt


# ---------------------------------------------------------------------------
# per-agent world view and actions
# ---------------------------------------------------------------------------

def _leader_on_route(world: WorldState, rt: ScenarioRuntime, entry: AgentEntry):
    """Nearest agent ahead on this agent's route within the lane corridor."""
    state = entry.state
    route = rt.routes[state.route_index]
    best_gap = FREE_ROAD_GAP
    best_speed = 0.0
    half_len = state.bbox[0] / 2.0
    for other_id in sorted(world.agents):
        if other_id == state.id:
            continue
        other = world.agents[other_id].state
        dx = other.pose[0] - state.pose[0]
        dy = other.pose[1] - state.pose[1]
        horizon = 90.0
        if dx * dx + dy * dy > horizon * horizon:
            continue
        s, lat = project_to_route(route, (other.pose[0], other.pose[1]))
        if abs(lat) > (state.bbox[1] + other.bbox[1]) / 2.0 + 0.3:
            continue
        gap = s - state.route_progress - half_len - other.bbox[0] / 2.0
        if 0.0 < gap < best_gap:
            best_gap = gap
            best_speed = other.speed
    return best_gap, best_speed


def _merge_yield_point(world: WorldState, rt: ScenarioRuntime, entry: AgentEntry):
    """Privileged conflict resolution: the arc position to stop before, if this
    agent must yield to crossing/merging traffic, else None."""
    state, params = entry.state, entry.params
    ra = state.route_index
    pa = state.route_progress
    va = max(state.speed, 0.5)
    window = 2.5 - 2.0 * params.merge_assertiveness
    stop_at = None
    for other_id in sorted(world.agents):
        if other_id == state.id:
            continue
        other = world.agents[other_id].state
        if other.route_index is None or other.agent_class == "static_obstacle":
            continue
        conflict = rt.conflicts.get((ra, other.route_index))
        if conflict is None:
            continue
        sa0, sa1, sb0, sb1 = conflict
        if pa >= sa0 - 0.5:
            continue  # committed: already inside or past the zone
        dist_a = sa0 - pa
        if dist_a > 60.0:
            continue
        pb = other.route_progress
        front_b = pb + other.bbox[0] / 2.0
        rear_b = pb - other.bbox[0] / 2.0
        must_yield = False
        if front_b >= sb0 - 0.5 and rear_b <= sb1 + 1.0:
            must_yield = True  # other occupies the conflict zone
        elif pb < sb0:
            eta_a = dist_a / va
            eta_b = (sb0 - pb) / max(other.speed, 0.5)
            if eta_b < min(eta_a + window, 12.0):
                a_minor = rt.minor_route[ra]
                b_minor = rt.minor_route[other.route_index]
                if a_minor and not b_minor:
                    must_yield = True
                elif b_minor and not a_minor:
                    must_yield = False
                elif (eta_a, state.id) > (eta_b, other.id):
                    must_yield = True
        if must_yield:
            cand = sa0 - 3.0
            if stop_at is None or cand < stop_at:
                stop_at = cand
    return stop_at


def _build_view(world: WorldState, rt: ScenarioRuntime, entry: AgentEntry,
                privileged: bool) -> tuple:
    """Prepare the agent's WorldView; returns (view, newly_cleared_signs)."""
    state, params = entry.state, entry.params
    route = rt.routes[state.route_index]
    pa = state.route_progress
    i0 = max(0, int(np.searchsorted(route.cum_s, pa - 6.0)) - 1)
    i1 = min(len(route.cum_s), int(np.searchsorted(route.cum_s, pa + max(70.0, state.speed * 5.0))) + 2)
    path = route.centerline[i0:max(i1, i0 + 2)]
    limit = min(route.speed_limit_at(pa), route.speed_limit_at(pa + max(4.0, state.speed * 2.0)))
    curv = route.max_curvature_ahead(pa + 1.0, max(8.0, state.speed * 2.5))
    leader_gap, leader_speed = _leader_on_route(world, rt, entry)

    stop_s = None
    cleared = []
    regs = world.scenario.map.regulations
    for s_reg, idx in rt.route_regs[state.route_index]:
        ahead = s_reg - pa
        if ahead < -1.0:
            continue
        reg = regs[idx]
        if reg.kind == "traffic_light":
            if reg.is_red(world.time) and ahead > -0.5:
                stop_s = s_reg
                break
        elif reg.kind == "stop_sign":
            key = (state.id, idx)
            if key in world.sign_clear:
                continue
            if state.speed < 0.3 and 0.0 <= ahead <= 2.0:
                cleared.append(key)
                continue
            stop_s = s_reg
            break
        # yield lines gate via the merge logic below

    if privileged:
        merge_stop = _merge_yield_point(world, rt, entry)
        if merge_stop is not None:
            # stop at the marked yield line when one precedes the conflict
            for s_reg, idx in rt.route_regs[state.route_index]:
                if regs[idx].kind == "yield_line" and pa - 1.0 <= s_reg <= merge_stop + 3.5:
                    merge_stop = max(merge_stop, s_reg)
                    break
            if stop_s is None or merge_stop < stop_s:
                stop_s = merge_stop

    stop_gap = None
    if stop_s is not None:
        stop_gap = max(stop_s - pa - state.bbox[0] / 2.0, 0.05)
    view = WorldView(path=path, speed_limit=limit, curvature_ahead=curv,
                     leader_gap=leader_gap, leader_speed=leader_speed,
                     stop_gap=stop_gap)
    return view, cleared


def agent_action(world: WorldState, entry: AgentEntry, privileged: bool = True):
    """Rule-based action for one agent in the current world (pre-step state)."""
    if entry.state.agent_class == "static_obstacle":
        return (0.0, 0.0), []
    rt = get_runtime(world.scenario)
    view, cleared = _build_view(world, rt, entry, privileged)
    return behavior_policy(entry.state, entry.params, view, privileged), cleared


# ---------------------------------------------------------------------------
# stepping, collisions, spawning, outcomes
# ---------------------------------------------------------------------------

def step_world(world: WorldState, ego_action=None) -> WorldState:
    """Advance every agent one 20 Hz tick; all actions are computed from the
    pre-step world (synchronous update).  The externally controlled ego uses
    ego_action; everyone else follows their rule-based policy."""
    if (ego_action is not None) != (world.ego_id is not None):
        raise ValueError("ego_action must be provided iff an ego agent exists")
    rt = get_runtime(world.scenario)
    actions = {}
    newly_cleared = []
    for aid in sorted(world.agents):
        entry = world.agents[aid]
        if aid == world.ego_id:
            actions[aid] = (float(ego_action[0]), float(ego_action[1]))
            continue
        act, cleared = agent_action(world, entry, privileged=True)
        actions[aid] = act
        newly_cleared.extend(cleared)
    new_agents = {}
    for aid in sorted(world.agents):
        entry = world.agents[aid]
        if entry.state.agent_class == "static_obstacle":
            new_agents[aid] = entry
            continue
        a, kappa = actions[aid]
        state = bicycle_step(entry.state, a, kappa, DT)
        if state.route_index is not None:
            route = rt.routes[state.route_index]
            s, _ = project_to_route(route, (state.pose[0], state.pose[1]))
            state = replace(state, route_progress=max(s, entry.state.route_progress))
        new_agents[aid] = AgentEntry(state=state, params=entry.params)
    tick = world.tick + 1
    return WorldState(scenario=world.scenario, rng=world.rng, time=tick * DT,
                      tick=tick, agents=new_agents, ego_id=world.ego_id,
                      next_id=world.next_id,
                      sign_clear=world.sign_clear | set(newly_cleared))


def detect_collisions(world: WorldState):
    """Oriented-bounding-box overlaps among all agents as (id_i, id_j), i < j."""
    ids = sorted(world.agents)
    if len(ids) < 2:
        return []
    xs, ys, hs, ls, ws = [], [], [], [], []
    for aid in ids:
        st = world.agents[aid].state
        xs.append(st.pose[0])
        ys.append(st.pose[1])
        hs.append(st.pose[2])
        ls.append(st.bbox[0])
        ws.append(st.bbox[1])
    pairs = kernels.collision_pairs(xs, ys, hs, ls, ws)
    return [(ids[i], ids[j]) for i, j in pairs]


def spawn_despawn(world: WorldState) -> WorldState:
    """Poisson spawning at the scenario's current density; a spawn is dropped
    when it would overlap an existing agent or tailgate a leader.  Agents that
    completed their route are removed (never the ego)."""
    rt = get_runtime(world.scenario)
    agents = dict(world.agents)
    for aid in sorted(agents):
        entry = agents[aid]
        if aid == world.ego_id or entry.state.route_index is None:
            continue
        route = rt.routes[entry.state.route_index]
        if entry.state.route_progress >= route.total_length - 1e-6:
            del agents[aid]
    rng = world.rng
    next_id = world.next_id
    rate = world.scenario.density_at(world.time)
    n_spawn = int(rng.poisson(rate * DT)) if rate > 0 else 0
    for _ in range(n_spawn):
        route_idx = int(rng.integers(0, len(rt.routes)))
        u = float(rng.random())
        cls = _SPAWN_CLASSES[int(np.searchsorted(_SPAWN_CUMPROB, u, side="left"))]
        route = rt.routes[route_idx]
        params = sample_agent_params(rng, cls, route.speed_limit_at(0.0))
        speed = float(rng.uniform(0.4, 0.9)) * params.desired_speed
        if len(agents) >= MAX_AGENTS:
            continue
        pos = route.point_at(0.0)
        heading = route.heading_at(0.0)
        state = AgentState(id=next_id, agent_class=cls,
                           pose=(float(pos[0]), float(pos[1]), heading),
                           speed=speed, bbox=CLASS_BBOX[cls], route_index=route_idx,
                           route_progress=0.0)
        if _spawn_blocked(agents, rt, state, params):
            continue
        agents[next_id] = AgentEntry(state=state, params=params)
        next_id += 1
    return WorldState(scenario=world.scenario, rng=rng, time=world.time,
                      tick=world.tick, agents=agents, ego_id=world.ego_id,
                      next_id=next_id, sign_clear=world.sign_clear)


def _spawn_blocked(agents, rt, state: AgentState, params: AgentParams) -> bool:
    route = rt.routes[state.route_index]
    clearance = params.min_gap + state.speed * params.time_headway
    for other in agents.values():
        o = other.state
        if kernels.obb_overlap((state.pose[0], state.pose[1], state.pose[2]), state.bbox,
                               (o.pose[0], o.pose[1], o.pose[2]), o.bbox):
            return True
        s, lat = project_to_route(route, (o.pose[0], o.pose[1]))
        if abs(lat) <= (state.bbox[1] + o.bbox[1]) / 2.0 + 0.3:
            gap = s - state.route_progress - state.bbox[0] / 2.0 - o.bbox[0] / 2.0
            if 0.0 < gap < clearance:
                return True
    return False


def classify_outcome(world: WorldState, ego: AgentState, route: Route,
                     limits: EpisodeLimits = EpisodeLimits()):
    """Terminal outcome of the current tick, or None while the episode runs.
    Priority: collision > out_of_route > timeout > success."""
    collisions = detect_collisions(world)
    if any(ego.id in pair for pair in collisions):
        return "collision"
    _, lateral = project_to_route(route, (ego.pose[0], ego.pose[1]))
    if abs(lateral) > limits.lateral_max:
        return "out_of_route"
    if world.time >= limits.timeout:
        return "timeout"
    if ego.route_progress >= route.total_length - limits.success_margin:
        return "success"
    return None


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

@dataclass
class Frame:
    tick: int
    ego_action: tuple
    ids: np.ndarray
    classes: np.ndarray
    poses: np.ndarray
    speeds: np.ndarray
    boxes: np.ndarray
    route_indices: np.ndarray
    progresses: np.ndarray
    reg_states: np.ndarray
    prediction: np.ndarray | None = None


@dataclass
class EpisodeRecord:
    scenario_id: str
    ego_id: int
    route_index: int
    route_lane_ids: tuple
    seed: int
    outcome: str
    final_progress: float
    frames: list

    def __len__(self):
        return len(self.frames)


def capture_frame(world: WorldState, ego_action, prediction=None) -> Frame:
    entries = world.sorted_entries()
    n = len(entries)
    ids = np.empty(n, np.int32)
    classes = np.empty(n, np.uint8)
    poses = np.empty((n, 3), np.float64)
    speeds = np.empty(n, np.float64)
    boxes = np.empty((n, 2), np.float64)
    ridx = np.full(n, -1, np.int32)
    prog = np.zeros(n, np.float64)
    for k, e in enumerate(entries):
        st = e.state
        ids[k] = st.id
        classes[k] = _CLASS_CODE[st.agent_class]
        poses[k] = st.pose
        speeds[k] = st.speed
        boxes[k] = st.bbox
        ridx[k] = -1 if st.route_index is None else st.route_index
        prog[k] = st.route_progress
    return Frame(tick=world.tick, ego_action=(float(ego_action[0]), float(ego_action[1])),
                 ids=ids, classes=classes, poses=poses, speeds=speeds, boxes=boxes,
                 route_indices=ridx, progresses=prog, reg_states=world.reg_states(),
                 prediction=None if prediction is None else np.asarray(prediction, np.float64))


def frame_snapshot(record: EpisodeRecord, frame_idx: int, scenario: Scenario) -> WorldSnapshot:
    """Rebuild the rasterizable world view of a recorded frame."""
    fr = record.frames[frame_idx]
    agents = []
    for k in range(len(fr.ids)):
        ri = int(fr.route_indices[k])
        agents.append(AgentState(
            id=int(fr.ids[k]), agent_class=AGENT_CLASSES[fr.classes[k]],
            pose=(float(fr.poses[k, 0]), float(fr.poses[k, 1]), float(fr.poses[k, 2])),
            speed=float(fr.speeds[k]), bbox=(float(fr.boxes[k, 0]), float(fr.boxes[k, 1])),
            route_index=None if ri < 0 else ri, route_progress=float(fr.progresses[k])))
    return WorldSnapshot(time=fr.tick * DT, agents=agents, scenario=scenario,
                         reg_states=fr.reg_states.copy())


def world_from_init(scenario: Scenario, init, seed: int) -> WorldState:
    route = scenario.routes[init.route_index]
    pos = route.point_at(init.start_s)
    heading = route.heading_at(init.start_s)
    ego = AgentState(id=0, agent_class="car",
                     pose=(float(pos[0]), float(pos[1]), heading),
                     speed=float(init.start_speed), bbox=CLASS_BBOX["car"],
                     route_index=init.route_index, route_progress=float(init.start_s))
    rng = np.random.default_rng(seed)
    params = sample_agent_params(rng, "car", route.speed_limit_at(init.start_s))
    world = WorldState(scenario=scenario, rng=rng, agents={0: AgentEntry(ego, params)},
                       ego_id=0, next_id=1)
    return world


def expert_policy(world: WorldState):
    """Privileged rule-based ego controller used for data collection."""
    entry = world.agents[world.ego_id]
    (a, kappa), _ = agent_action(world, entry, privileged=True)
    return a, kappa, None


def run_episode(scenario: Scenario, init, ego_policy, seed: int,
                limits: EpisodeLimits = EpisodeLimits()) -> EpisodeRecord:
    """Roll one episode to a terminal outcome, recording every frame.

    ego_policy(world) -> (a, kappa, prediction_or_None); deterministic for
    fixed (scenario, init, policy, seed).
    """
    world = world_from_init(scenario, init, seed)
    route = scenario.routes[init.route_index]
    frames = []
    outcome = None
    max_ticks = int(limits.timeout / DT) + 2
    for _ in range(max_ticks):
        a, kappa, prediction = ego_policy(world)
        frames.append(capture_frame(world, (a, kappa), prediction))
        world = step_world(world, (a, kappa))
        world = spawn_despawn(world)
        ego = world.agents[world.ego_id].state
        outcome = classify_outcome(world, ego, route, limits)
        if outcome is not None:
            break
    if outcome is None:
        outcome = "timeout"
    ego = world.agents[world.ego_id].state
    if outcome == "success":
        progress = 1.0
    else:
        progress = min(1.0, max(0.0, ego.route_progress / route.total_length))
    return EpisodeRecord(scenario_id=scenario.scenario_id, ego_id=0,
                         route_index=init.route_index, route_lane_ids=route.lane_ids,
                         seed=seed, outcome=outcome, final_progress=float(progress),
                         frames=frames)


# ---------------------------------------------------------------------------
# binary episode files (FPEP)
# ---------------------------------------------------------------------------

def _w_str(fh, s: str):
    raw = s.encode()
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _r_str(fh) -> str:
    n, = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode()


def write_episode(record: EpisodeRecord, path):
    with open(path, "wb") as fh:
        _write_episode_stream(record, fh)


def episode_bytes(record: EpisodeRecord) -> bytes:
    """Serialized form, for byte-level determinism comparisons."""
    buf = io.BytesIO()
    _write_episode_stream(record, buf)
    return buf.getvalue()


def _write_episode_stream(record: EpisodeRecord, fh):
    fh.write(EPISODE_MAGIC)
    fh.write(struct.pack("<H", EPISODE_VERSION))
    _w_str(fh, record.scenario_id)
    fh.write(struct.pack("<IiQ", record.ego_id, record.route_index, record.seed))
    fh.write(struct.pack("<B", OUTCOMES.index(record.outcome)))
    fh.write(struct.pack("<d", record.final_progress))
    fh.write(struct.pack("<I", len(record.route_lane_ids)))
    for lid in record.route_lane_ids:
        _w_str(fh, lid)
    fh.write(struct.pack("<I", len(record.frames)))
    for fr in record.frames:
        payload = io.BytesIO()
        payload.write(struct.pack("<I", fr.tick))
        payload.write(struct.pack("<2d", *fr.ego_action))
        n = len(fr.ids)
        payload.write(struct.pack("<I", n))
        payload.write(fr.ids.astype("<i4").tobytes())
        payload.write(fr.classes.astype("u1").tobytes())
        payload.write(fr.poses.astype("<f8").tobytes())
        payload.write(fr.speeds.astype("<f8").tobytes())
        payload.write(fr.boxes.astype("<f8").tobytes())
        payload.write(fr.route_indices.astype("<i4").tobytes())
        payload.write(fr.progresses.astype("<f8").tobytes())
        payload.write(struct.pack("<I", len(fr.reg_states)))
        payload.write(fr.reg_states.astype("u1").tobytes())
        if fr.prediction is None:
            payload.write(struct.pack("<H", 0))
        else:
            payload.write(struct.pack("<H", fr.prediction.shape[0]))
            payload.write(fr.prediction.astype("<f8").tobytes())
        blob = payload.getvalue()
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def read_episode(path) -> EpisodeRecord:
    with open(path, "rb") as fh:
        if fh.read(4) != EPISODE_MAGIC:
            raise ValueError(f"{path}: not an episode file")
        version, = struct.unpack("<H", fh.read(2))
        if version != EPISODE_VERSION:
            raise ValueError(f"{path}: unsupported episode version {version}")
        scenario_id = _r_str(fh)
        ego_id, route_index, seed = struct.unpack("<IiQ", fh.read(16))
        outcome = OUTCOMES[struct.unpack("<B", fh.read(1))[0]]
        final_progress, = struct.unpack("<d", fh.read(8))
        n_lanes, = struct.unpack("<I", fh.read(4))
        lane_ids = tuple(_r_str(fh) for _ in range(n_lanes))
        n_frames, = struct.unpack("<I", fh.read(4))
        frames = []
        for _ in range(n_frames):
            size, = struct.unpack("<I", fh.read(4))
            blob = io.BytesIO(fh.read(size))
            tick, = struct.unpack("<I", blob.read(4))
            ego_action = struct.unpack("<2d", blob.read(16))
            n, = struct.unpack("<I", blob.read(4))
            ids = np.frombuffer(blob.read(4 * n), "<i4").copy()
            classes = np.frombuffer(blob.read(n), "u1").copy()
            poses = np.frombuffer(blob.read(24 * n), "<f8").reshape(n, 3).copy()
            speeds = np.frombuffer(blob.read(8 * n), "<f8").copy()
            boxes = np.frombuffer(blob.read(16 * n), "<f8").reshape(n, 2).copy()
            ridx = np.frombuffer(blob.read(4 * n), "<i4").copy()
            prog = np.frombuffer(blob.read(8 * n), "<f8").copy()
            n_regs, = struct.unpack("<I", blob.read(4))
            reg_states = np.frombuffer(blob.read(n_regs), "u1").copy()
            n_pred, = struct.unpack("<H", blob.read(2))
            prediction = None
            if n_pred:
                prediction = np.frombuffer(blob.read(16 * n_pred), "<f8").reshape(n_pred, 2).copy()
            frames.append(Frame(tick=tick, ego_action=ego_action, ids=ids, classes=classes,
                                poses=poses, speeds=speeds, boxes=boxes, route_indices=ridx,
                                progresses=prog, reg_states=reg_states, prediction=prediction))
    return EpisodeRecord(scenario_id=scenario_id, ego_id=ego_id, route_index=route_index,
                         route_lane_ids=lane_ids, seed=seed, outcome=outcome,
                         final_progress=final_progress, frames=frames)
