"""Deterministic 2D microsimulation of a T-intersection.

The junction sits at the origin. The main road runs along the x axis (west and
east arms), the stem runs down the negative y axis (south arm). Traffic keeps
to the right. The paved region is a T with 45 degree chamfers at the two inner
corners so that right turns stay within reach of the bicycle model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np

from .geometry import Box, Disc, Polyline, detect_collision, points_in_polygon, resample, wrap_angle

SAFE_GAP = 2.5            # autopilot hard-brake bumper gap, m
CORRIDOR_LENGTH = 20.0    # forward look-ahead of the autopilot, m
LOOKAHEAD = 5.0           # pure-pursuit target distance, m
HEADWAY = 1.5             # IDM time headway, s
COMFORT_DECEL = 3.0       # IDM comfortable deceleration, m/s^2
LATERAL_ACCEL = 3.0       # curve speed cap, m/s^2
PED_RADIUS = 0.3
PED_SPEED = 1.4
PED_WARN_DISTANCE = 3.0
PED_LOOKAHEAD = 2.0
MOVING_SPEED = 0.1
CHAMFER = 3.0
STOP_OFFSET = 3.5         # junction hold point before the zone entry, clear of the crosswalk
MAX_SPAWN_ATTEMPTS = 1000

ARMS = ("W", "E", "S")
_ARM_DIR = {"W": (-1.0, 0.0), "E": (1.0, 0.0), "S": (0.0, -1.0)}


class Route(str, Enum):
    LEFT = "Left"
    RIGHT = "Right"
    STRAIGHT = "Straight"


# (entry arm, exit arm) of the ego for each route.
ROUTE_ARMS = {Route.LEFT: ("S", "W"), Route.RIGHT: ("S", "E"), Route.STRAIGHT: ("W", "E")}
TRAFFIC_ROUTES = ("W-E", "W-S", "E-W", "E-S", "S-W", "S-E")


class VehicleKind(str, Enum):
    CAR = "Car"
    MOTORCYCLE = "Motorcycle"
    CYCLE = "Cycle"


VEHICLE_DIMS = {
    VehicleKind.CAR: (4.5, 2.0),
    VehicleKind.MOTORCYCLE: (2.0, 0.8),
    VehicleKind.CYCLE: (2.0, 0.8),
}


class CollisionKind(str, Enum):
    VEHICLE = "Vehicle"
    PEDESTRIAN = "Pedestrian"


@dataclass(frozen=True)
class VehicleParams:
    """Longitudinal and steering limits shared by every vehicle."""

    a_max: float = 3.0
    b_max: float = 8.0
    c_drag: float = 0.05
    wheelbase: float = 2.7
    max_steer_deg: float = 35.0
    v_cap: float = 2 * 8.33

    @property
    def max_steer(self) -> float:
        return math.radians(self.max_steer_deg)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    kind: VehicleKind = VehicleKind.CAR
    length: float = 4.5
    width: float = 2.0
    lane_ref: Optional[str] = None
    lane_s: float = 0.0
    active: bool = True

    def box(self) -> Box:
        return Box(self.x, self.y, self.heading, self.length / 2, self.width / 2)


@dataclass(frozen=True)
class PedestrianState:
    x: float
    y: float
    path: tuple[tuple[float, float], tuple[float, float]]
    progress: float = 0.0
    uses_crosswalk: bool = True
    speed: float = PED_SPEED
    waiting: bool = False

    @property
    def path_length(self) -> float:
        (ax, ay), (bx, by) = self.path
        return math.hypot(bx - ax, by - ay)

    @cached_property
    def direction(self) -> tuple[float, float]:
        (ax, ay), (bx, by) = self.path
        n = math.hypot(bx - ax, by - ay)
        return (bx - ax) / n, (by - ay) / n

    def velocity(self) -> tuple[float, float]:
        if self.waiting:
            return 0.0, 0.0
        ux, uy = self.direction
        return self.speed * ux, self.speed * uy

    def disc(self) -> Disc:
        return Disc(self.x, self.y, PED_RADIUS)


@dataclass(frozen=True)
class TrafficLane:
    name: str
    polyline: Polyline
    entry_s: float
    exit_s: float
    approach_speed: list  # per-vertex speed from which all curves ahead are comfortably reachable


@dataclass(frozen=True)
class MapSpec:
    """Road geometry plus the ego route through the junction."""

    lane_width: float = 3.5
    arm_length: float = 60.0
    route: Route = Route.LEFT
    crosswalk_segments: tuple = ()
    goal_point: tuple[float, float] = (0.0, 0.0)
    spawn_point: tuple[float, float, float] = (0.0, 0.0, 0.0)
    waypoints: tuple = ()
    junction_half: float = 6.5
    paved_polygon: np.ndarray = field(default=None, compare=False, repr=False)
    route_line: Polyline = field(default=None, compare=False, repr=False)
    lanes: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def route_lanes(self) -> frozenset:
        entry, exit_ = ROUTE_ARMS[self.route]
        return frozenset({f"{entry}_in", f"{exit_}_out"})

    def is_paved(self, points) -> np.ndarray:
        return points_in_polygon(points, self.paved_polygon)

    def lane_label(self, x: float, y: float) -> str:
        """Lane id of a paved point: ``J`` for the junction zone, else ``<arm>_in|out``."""
        j = self.junction_half
        if abs(x) <= j and y >= -j:
            return "J"
        if x < -j:
            return "W_in" if y < 0 else "W_out"
        if x > j:
            return "E_out" if y < 0 else "E_in"
        return "S_in" if x > 0 else "S_out"


@dataclass(frozen=True)
class ScenarioConfig:
    veh: int = 4
    ped: int = 2
    route: Route = Route.LEFT
    seed: int = 0
    dt: float = 0.1
    lane_width: float = 3.5
    arm_length: float = 60.0
    spawn_distance: float = 30.0
    traffic_speed_limit: float = 8.33
    crosswalk_fraction: float = 0.8
    name: str = "desk"


@dataclass(frozen=True)
class CollisionEvent:
    other_kind: CollisionKind
    other_index: int
    tick: int


@dataclass(frozen=True)
class Action:
    """Ego control triple; each field is clamped to its range on construction."""

    throttle: float = 0.0
    steer: float = 0.0
    brake: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "throttle", min(1.0, max(0.0, float(self.throttle))))
        object.__setattr__(self, "steer", min(1.0, max(-1.0, float(self.steer))))
        object.__setattr__(self, "brake", min(1.0, max(0.0, float(self.brake))))


@dataclass(frozen=True)
class WorldState:
    ego: Optional[VehicleState]
    traffic: tuple[VehicleState, ...]
    pedestrians: tuple[PedestrianState, ...]
    map: MapSpec
    tick: int = 0
    dt: float = 0.1
    params: VehicleParams = VehicleParams()
    traffic_speed_limit: float = 8.33
    _cache: dict = field(default_factory=dict, compare=False, repr=False)


# --------------------------------------------------------------------------- map


def _arm_frame(arm: str) -> tuple[np.ndarray, np.ndarray]:
    d = np.array(_ARM_DIR[arm])
    return d, np.array([-d[1], d[0]])


def _right_of(heading_vec: np.ndarray) -> np.ndarray:
    return np.array([heading_vec[1], -heading_vec[0]])


def _lane_points(arm: str, inbound: bool, near: float, far: float, w: float):
    """Centerline endpoints of one lane, ordered in the travel direction."""
    d, _ = _arm_frame(arm)
    heading = -d if inbound else d
    off = _right_of(heading) * (w / 2)
    a, b = d * far + off, d * near + off
    return (a, b) if inbound else (b, a)


def _connect(p1, h1, p2, h2) -> np.ndarray:
    """Points from p1 to p2 through the junction (straight or circular arc)."""
    p1, p2, h1, h2 = map(np.asarray, (p1, p2, h1, h2))
    cross = h1[0] * h2[1] - h1[1] * h2[0]
    if abs(cross) < 1e-9:
        return np.array([p1, p2])
    n1, n2 = np.array([-h1[1], h1[0]]), np.array([-h2[1], h2[0]])
    # center = p1 + t1 n1 = p2 + t2 n2
    t = np.linalg.solve(np.column_stack((n1, -n2)), p2 - p1)
    center = p1 + t[0] * n1
    r = float(np.hypot(*(p1 - center)))
    a0 = math.atan2(p1[1] - center[1], p1[0] - center[0])
    a1 = math.atan2(p2[1] - center[1], p2[0] - center[0])
    sweep = wrap_angle(a1 - a0)
    n = max(2, int(math.ceil(abs(sweep) * r / 0.5)))
    angles = a0 + sweep * np.linspace(0.0, 1.0, n + 1)
    return np.column_stack((center[0] + r * np.cos(angles), center[1] + r * np.sin(angles)))


def _path(entry: str, exit_: str, start: float, end: float, w: float, j: float):
    a, b = _lane_points(entry, True, j, start, w)
    c, d = _lane_points(exit_, False, j, end, w)
    h1 = (b - a) / np.hypot(*(b - a))
    h2 = (d - c) / np.hypot(*(d - c))
    turn = _connect(b, h1, c, h2)
    pts = np.vstack(([a], turn, [d]))
    entry_s = float(np.hypot(*(b - a)))
    turn_len = float(np.sum(np.hypot(*np.diff(turn, axis=0).T)))
    return resample(pts, 1.0), entry_s, entry_s + turn_len


def _approach_speed(line: Polyline) -> list:
    """Highest speed at each vertex that can still slow to every curve cap ahead."""
    caps = np.full(len(line.vertices), 1e3)
    h = np.arctan2(line.seg_dir[:, 1], line.seg_dir[:, 0])
    dh = np.abs(np.array([wrap_angle(x) for x in np.diff(h)]))
    ds = 0.5 * (line.seg_len[:-1] + line.seg_len[1:])
    with np.errstate(divide="ignore"):
        radius = np.where(dh > 1e-6, ds / dh, 1e6)
    caps[1:-1] = np.minimum(np.sqrt(LATERAL_ACCEL * radius), 1e3)
    out = caps.copy()
    for k in range(len(caps) - 2, -1, -1):
        out[k] = min(caps[k], math.sqrt(out[k + 1] ** 2 + 2 * COMFORT_DECEL * line.seg_len[k]))
    return out.tolist()


def build_map(lane_width: float = 3.5, arm_length: float = 60.0, route: Route | str = Route.LEFT,
              spawn_distance: float = 30.0) -> MapSpec:
    route = Route(route)
    w, L = lane_width, arm_length
    j = w + CHAMFER
    if spawn_distance <= j + 2 or spawn_distance >= L:
        raise ValueError(f"spawn_distance must lie in ({j + 2}, {L})")
    paved = np.array([
        (-L, w), (-L, -w), (-j, -w), (-w, -j), (-w, -L),
        (w, -L), (w, -j), (j, -w), (L, -w), (L, w),
    ])
    crosswalks = []
    for arm in ARMS:
        d, n = _arm_frame(arm)
        c = d * (j + 2.0)
        crosswalks.append((tuple(c - n * w), tuple(c + n * w)))

    lanes = {}
    for name in TRAFFIC_ROUTES:
        entry, exit_ = name.split("-")
        pts, es, xs = _path(entry, exit_, L, L, w, j)
        line = Polyline(pts)
        lanes[name] = TrafficLane(name, line, es, xs, _approach_speed(line))

    entry, exit_ = ROUTE_ARMS[route]
    pts, _, _ = _path(entry, exit_, spawn_distance, spawn_distance, w, j)
    line = Polyline(pts)
    heading = line.heading_at(0.0)
    waypoints = tuple((float(x), float(y)) for x, y in pts)
    return MapSpec(
        lane_width=w, arm_length=L, route=route,
        crosswalk_segments=tuple(crosswalks),
        goal_point=waypoints[-1],
        spawn_point=(waypoints[0][0], waypoints[0][1], heading),
        waypoints=waypoints, junction_half=j,
        paved_polygon=paved, route_line=line, lanes=lanes,
    )


def map_for(cfg: ScenarioConfig) -> MapSpec:
    return _cached_map(cfg.lane_width, cfg.arm_length, Route(cfg.route), cfg.spawn_distance)


_MAP_CACHE: dict = {}


def _cached_map(w, L, route, spawn):
    key = (w, L, route, spawn)
    if key not in _MAP_CACHE:
        _MAP_CACHE[key] = build_map(w, L, route, spawn)
    return _MAP_CACHE[key]


# ---------------------------------------------------------------- vehicle dynamics


def step_ego(state: VehicleState, throttle: float, steer: float, brake: float, dt: float,
             params: VehicleParams = VehicleParams()) -> VehicleState:
    """Advance one vehicle with the kinematic bicycle model (center reference)."""
    accel = throttle * params.a_max - brake * params.b_max - params.c_drag * state.speed
    speed = min(max(state.speed + accel * dt, 0.0), params.v_cap)
    if speed == 0.0:
        return _moved(state, state.x, state.y, state.heading, 0.0)
    delta = params.max_steer * steer
    heading = wrap_angle(state.heading + speed * math.tan(delta) / params.wheelbase * dt)
    return _moved(state, state.x + speed * math.cos(heading) * dt, state.y + speed * math.sin(heading) * dt,
                  heading, speed)


def _moved(s: VehicleState, x: float, y: float, heading: float, speed: float, lane_s: Optional[float] = None,
           active: Optional[bool] = None) -> VehicleState:
    # positional construction; dataclasses.replace is the hot spot of a dense world
    return VehicleState(x, y, heading, speed, s.kind, s.length, s.width, s.lane_ref,
                        s.lane_s if lane_s is None else lane_s, s.active if active is None else active)


# ---------------------------------------------------------------------- autopilot


def _obstacles(world: WorldState):
    """Arrays describing every road user, cached on the (immutable) world."""
    cached = world._cache.get("obstacles")
    if cached is not None:
        return cached
    rows = []  # x, y, heading, speed, length, width, is_ped, traffic_index (-1 ego / ped)
    if world.ego is not None:
        e = world.ego
        rows.append((e.x, e.y, e.heading, e.speed, e.length, e.width, 0.0, -1.0))
    for i, v in enumerate(world.traffic):
        if v.active:
            rows.append((v.x, v.y, v.heading, v.speed, v.length, v.width, 0.0, float(i)))
    for p in world.pedestrians:
        vx, vy = p.velocity()
        rows.append((p.x, p.y, math.atan2(vy, vx) if (vx or vy) else 0.0, math.hypot(vx, vy),
                     2 * PED_RADIUS, 2 * PED_RADIUS, 1.0, -1.0))
    arr = np.array(rows, dtype=float).reshape(-1, 8)
    world._cache["obstacles"] = arr
    return arr


def _junction_grants(world: WorldState) -> dict[int, float]:
    """Stop-line gaps for traffic vehicles that must wait at the junction.

    One traffic vehicle holds the junction at a time. Priority goes to vehicles
    already inside, then to those too close to stop comfortably, then by
    distance to the stop line, then by index.
    """
    cached = world._cache.get("junction")
    if cached is not None:
        return cached
    keys = []
    for i, v in enumerate(world.traffic):
        if not v.active:
            continue
        lane = world.map.lanes[v.lane_ref]
        hl = v.length / 2
        if v.lane_s - hl > lane.exit_s:
            continue
        inside = lane.entry_s - (v.lane_s + hl) <= 0.0
        dist = lane.entry_s - STOP_OFFSET - (v.lane_s + hl)
        if dist > 25.0:
            continue
        committed = dist <= v.speed ** 2 / (2 * COMFORT_DECEL) + 1.0
        keys.append(((0 if inside else 1 if committed else 2, dist, i), i, dist, inside))
    waits: dict[int, float] = {}
    if keys:
        keys.sort()
        for _, i, dist, inside in keys[1:]:
            if not inside:
                waits[i] = dist
    world._cache["junction"] = waits
    return waits


_WINDOW = 56  # lane segments scanned ahead (arc segments are ~0.5 m)


_WINDOW_TABLES: dict[int, tuple] = {}


def _window_table(m: MapSpec) -> tuple:
    """For every lane segment, the next ``_WINDOW`` segments (clamped at the lane end), all lanes stacked.

    Segment starts and directions are complex numbers (x + iy); the last table
    holds the segment headings.
    """
    key = id(m.lanes)
    hit = _WINDOW_TABLES.get(key)
    if hit is not None and hit[0] is m.lanes:
        return hit[1]
    offsets, a, d, sl, cum = {}, [], [], [], []
    start = 0
    for name, lane in m.lanes.items():
        line = lane.polyline
        n = len(line.seg_len)
        seg = np.minimum(np.arange(n)[:, None] + np.arange(_WINDOW)[None, :], n - 1)
        offsets[name] = start
        start += n
        a.append(line.vertices[seg] @ (1.0, 1j))
        d.append(line.seg_dir[seg] @ (1.0, 1j))
        sl.append(line.seg_len[seg])
        cum.append(line.cum[seg])
    d = np.concatenate(d)
    table = (offsets, np.concatenate(a), d, np.concatenate(sl), np.concatenate(cum), np.angle(d))
    _WINDOW_TABLES[key] = (m.lanes, table)
    return table


def _traffic_gaps(world: WorldState) -> dict[int, tuple[float, float]]:
    """Bumper gap and along-lane speed of the nearest obstacle in each vehicle's corridor.

    All active traffic vehicles are handled in one vectorized pass and the
    result is cached on the world. Positions are complex numbers to keep the
    number of array operations down; the arrays are small and per-call
    overhead dominates.
    """
    cached = world._cache.get("gaps")
    if cached is not None:
        return cached
    obs = _obstacles(world)
    idx = [i for i, v in enumerate(world.traffic) if v.active]
    out: dict[int, tuple[float, float]] = {i: (math.inf, 0.0) for i in idx}
    world._cache["gaps"] = out
    if not idx or len(obs) < 2:
        return out
    offsets, table_a, table_d, table_sl, table_cum, table_h = _window_table(world.map)
    V = np.array([(v.x, v.y, v.heading, v.lane_s, v.length / 2, v.width / 2,
                   offsets[v.lane_ref] + world.map.lanes[v.lane_ref].polyline._segment(v.lane_s), i)
                  for i, v in ((i, world.traffic[i]) for i in idx)])
    oz = obs[:, :2] @ (1.0, 1j)
    rel = oz[None, :] - (V[:, :2] @ (1.0, 1j))[:, None]
    ahead = (rel * np.exp(-1j * V[:, 2:3])).real
    near = (np.abs(rel) < CORRIDOR_LENGTH + 12.0) & (ahead > -3.0) & (obs[None, :, 7] != V[:, 7:8])
    pv, pn = np.nonzero(near)
    if len(pv) == 0:
        return out
    P = V[pv]
    row = P[:, 6].astype(np.intp)
    A, D, SL, CUM, H = table_a[row], table_d[row], table_sl[row], table_cum[row], table_h[row]
    o = obs[pn]

    rel = oz[pn, None] - A
    t = np.minimum(np.maximum((rel * D.conj()).real, 0.0), SL)
    dist = np.abs(rel - t * D)
    k = np.argmin(dist, axis=1)
    p = np.arange(len(pv))
    along = CUM[p, k] + t[p, k] - P[:, 3]
    rel_h = o[:, 2] - H[p, k]
    c, s_ = np.abs(np.cos(rel_h)), np.abs(np.sin(rel_h))
    gap = along - P[:, 4] - 0.5 * (o[:, 4] * c + o[:, 5] * s_)
    ok = (along > 0.0) & (dist[p, k] <= P[:, 5] + 0.5 * (o[:, 4] * s_ + o[:, 5] * c) + 0.5) & (gap <= CORRIDOR_LENGTH)
    for m in np.nonzero(ok)[0]:
        i = idx[pv[m]]
        if gap[m] < out[i][0]:
            out[i] = (float(gap[m]), float(o[m, 3] * math.cos(rel_h[m])))
    return out


def _leading_gap(world: WorldState, index: int) -> tuple[float, float]:
    return _traffic_gaps(world).get(index, (math.inf, 0.0))


def _idm_accel(speed: float, v0: float, gap: float, lead_speed: float, a_max: float) -> float:
    accel = a_max * (1.0 - (speed / v0) ** 4) if v0 > 0 else -COMFORT_DECEL
    if math.isfinite(gap):
        dv = speed - lead_speed
        s_star = SAFE_GAP + max(0.0, speed * HEADWAY + speed * dv / (2 * math.sqrt(a_max * COMFORT_DECEL)))
        accel -= a_max * (s_star / max(gap, 1e-3)) ** 2
    return accel


def autopilot(world: WorldState, vehicle_index: int) -> tuple[float, float, float]:
    """Lane-keeping, car-following control for one traffic vehicle.

    Returns ``(throttle, steer, brake)``. Pure function of ``world``.
    """
    if not 0 <= vehicle_index < len(world.traffic):
        raise IndexError(f"vehicle_index {vehicle_index} does not address a traffic vehicle")
    v = world.traffic[vehicle_index]
    if v.lane_ref is None:
        raise ValueError(f"traffic vehicle {vehicle_index} has no lane_ref")
    p = world.params
    lane = world.map.lanes[v.lane_ref]
    line = lane.polyline

    tx, ty = line.point_at(v.lane_s + LOOKAHEAD)
    ld = math.hypot(tx - v.x, ty - v.y)
    if ld > 1e-6:
        alpha = wrap_angle(math.atan2(ty - v.y, tx - v.x) - v.heading)
        delta = math.atan2(2.0 * p.wheelbase * math.sin(alpha), ld)
        steer = min(1.0, max(-1.0, delta / p.max_steer))
    else:
        steer = 0.0

    gap, lead_speed = _leading_gap(world, vehicle_index)
    stop_gap = _junction_grants(world).get(vehicle_index)
    if stop_gap is not None and stop_gap < gap:
        gap, lead_speed = stop_gap, 0.0
    if gap < SAFE_GAP:
        return 0.0, steer, 1.0

    k = min(line._segment(v.lane_s) + 1, len(lane.approach_speed) - 1)
    ahead = max(line._cum[k] - v.lane_s, 0.0)
    v0 = min(world.traffic_speed_limit, math.sqrt(lane.approach_speed[k] ** 2 + 2 * COMFORT_DECEL * ahead))

    accel = _idm_accel(v.speed, v0, gap, lead_speed, p.a_max) + p.c_drag * v.speed
    if accel >= 0.0:
        return min(accel / p.a_max, 1.0), steer, 0.0
    return 0.0, steer, min(-accel / p.b_max, 1.0)


# ------------------------------------------------------------------- pedestrians


def _point_box_distance(px: np.ndarray, py: np.ndarray, box_rows: np.ndarray) -> np.ndarray:
    """Distances from points (P,) to boxes given as rows (x, y, heading, length, width)."""
    c, s = np.cos(box_rows[:, 2]), np.sin(box_rows[:, 2])
    dx = px[None, :] - box_rows[:, 0:1]
    dy = py[None, :] - box_rows[:, 1:2]
    u = c[:, None] * dx + s[:, None] * dy
    w = -s[:, None] * dx + c[:, None] * dy
    du = np.maximum(np.abs(u) - box_rows[:, 3:4] / 2, 0.0)
    dw = np.maximum(np.abs(w) - box_rows[:, 4:5] / 2, 0.0)
    return np.hypot(du, dw)


def _vehicle_rows(world: WorldState) -> np.ndarray:
    obs = _obstacles(world)
    veh = obs[obs[:, 6] == 0.0]
    return veh[:, [0, 1, 2, 4, 5, 3]]  # x, y, heading, length, width, speed


_PED_PROBES = np.linspace(0.0, PED_LOOKAHEAD, 5)


def _pedestrian_clearance(peds: tuple[PedestrianState, ...], vehicles: np.ndarray) -> np.ndarray:
    """(vehicles, pedestrians) distance from each box to each pedestrian's next stretch of path."""
    q = np.array([(p.x, p.y) + p.direction for p in peds])
    px = (q[:, 0:1] + q[:, 2:3] * _PED_PROBES).ravel()
    py = (q[:, 1:2] + q[:, 3:4] * _PED_PROBES).ravel()
    return _point_box_distance(px, py, vehicles).reshape(len(vehicles), len(peds), 5).min(axis=2)


def _step_pedestrian(p: PedestrianState, pause: bool, blocked: bool, dt: float) -> PedestrianState:
    """``pause``: a moving vehicle is close to the path ahead; ``blocked``: a vehicle stands on it."""
    path = p.path
    progress = p.progress
    if pause:
        return PedestrianState(p.x, p.y, p.path, p.progress, p.uses_crosswalk, p.speed, True)
    if blocked:
        # path blocked by a stopped vehicle: turn back
        path = (path[1], path[0])
        progress = p.path_length - progress
    progress = progress + p.speed * dt
    length = p.path_length
    if progress >= length:
        path = (path[1], path[0])
        progress = min(progress - length, length)
    (ax, ay), (bx, by) = path
    f = progress / length
    return PedestrianState(ax + f * (bx - ax), ay + f * (by - ay), path, progress, p.uses_crosswalk, p.speed, False)


# ------------------------------------------------------------------------ world


def _box_of_row(row) -> Box:
    return Box(row[0], row[1], row[2], row[3] / 2, row[4] / 2)


def _respawn_clear(lane: TrafficLane, v: VehicleState, others: list[VehicleState]) -> bool:
    x, y = lane.polyline.point_at(0.0)
    for o in others:
        if o is None or not o.active:
            continue
        if math.hypot(o.x - x, o.y - y) < SAFE_GAP + (o.length + v.length) / 2 + 2.0:
            return False
    return True


def step_world(world: WorldState, ego_action: Action | None = None) -> tuple[WorldState, Optional[CollisionEvent]]:
    """Advance every entity by one tick and report the ego's first collision, if any."""
    dt, p = world.dt, world.params
    ego = world.ego
    if ego is not None:
        a = ego_action if ego_action is not None else Action()
        ego = step_ego(ego, a.throttle, a.steer, a.brake, dt, p)

    traffic: list[VehicleState] = []
    for i, v in enumerate(world.traffic):
        if not v.active:
            traffic.append(v)
            continue
        thr, st, br = autopilot(world, i)
        nv = step_ego(v, thr, st, br, dt, p)
        lane = world.map.lanes[v.lane_ref]
        s = lane.polyline.project_near(nv.x, nv.y, v.lane_s)
        if s >= lane.polyline.length - 0.5:
            nv = _moved(nv, nv.x, nv.y, nv.heading, 0.0, lane_s=s, active=False)
        else:
            nv = _moved(nv, nv.x, nv.y, nv.heading, nv.speed, lane_s=s)
        traffic.append(nv)

    others = [ego] + traffic
    for i, v in enumerate(traffic):
        if v.active:
            continue
        lane = world.map.lanes[v.lane_ref]
        if _respawn_clear(lane, v, others):
            x, y = lane.polyline.point_at(0.0)
            traffic[i] = replace(v, x=x, y=y, heading=lane.polyline.heading_at(0.0),
                                 speed=0.5 * world.traffic_speed_limit, lane_s=0.0, active=True)
            others[i + 1] = traffic[i]

    vehicles = _vehicle_rows(world)
    peds = world.pedestrians
    if peds and len(vehicles):
        clearance = _pedestrian_clearance(peds, vehicles)
        moving = vehicles[:, 5] > MOVING_SPEED
        pause = np.any(moving[:, None] & (clearance < PED_WARN_DISTANCE), axis=0).tolist()
        blocked = np.any(clearance < PED_RADIUS + 0.3, axis=0).tolist()
        pedestrians = tuple(_step_pedestrian(q, pause[k], blocked[k], dt) for k, q in enumerate(peds))
    else:
        pedestrians = tuple(_step_pedestrian(q, False, False, dt) for q in peds)

    new = WorldState(ego, tuple(traffic), pedestrians, world.map, world.tick + 1, dt, p,
                     world.traffic_speed_limit)
    return new, ego_collision(new)


def ego_collision(world: WorldState) -> Optional[CollisionEvent]:
    """First ego overlap ordered by (center distance, entity kind, index)."""
    ego = world.ego
    if ego is None:
        return None
    eb = ego.box()
    reach = math.hypot(ego.length, ego.width) / 2
    hits = []
    for i, v in enumerate(world.traffic):
        if not v.active:
            continue
        d = math.hypot(v.x - ego.x, v.y - ego.y)
        if d <= reach + math.hypot(v.length, v.width) / 2 and detect_collision(eb, v.box()):
            hits.append((d, 0, i, CollisionKind.VEHICLE))
    for i, ped in enumerate(world.pedestrians):
        d = math.hypot(ped.x - ego.x, ped.y - ego.y)
        if d <= reach + PED_RADIUS and detect_collision(ped.disc(), eb):
            hits.append((d, 1, i, CollisionKind.PEDESTRIAN))
    if not hits:
        return None
    _, _, idx, kind = min(hits)
    return CollisionEvent(kind, idx, world.tick)


def traffic_collisions(world: WorldState) -> list[tuple[int, int]]:
    """Overlapping pairs of active traffic vehicles."""
    act = [(i, v) for i, v in enumerate(world.traffic) if v.active]
    pairs = []
    for a in range(len(act)):
        i, vi = act[a]
        for b in range(a + 1, len(act)):
            k, vk = act[b]
            if math.hypot(vi.x - vk.x, vi.y - vk.y) > (vi.length + vk.length) / 2 + 1.5:
                continue
            if detect_collision(vi.box(), vk.box()):
                pairs.append((i, k))
    return pairs


# ------------------------------------------------------------------ lane measures


def classify_lane(ego: VehicleState, map_spec: MapSpec) -> tuple[float, float]:
    """Fractions of the ego's four corners off the pavement and in a non-route lane."""
    corners = ego.box().corners()
    paved = map_spec.is_paved(corners)
    route = map_spec.route_lanes
    off = other = 0
    for (x, y), on_road in zip(corners, paved):
        if not on_road:
            off += 1
            continue
        label = map_spec.lane_label(x, y)
        if label != "J" and label not in route:
            other += 1
    return off / 4.0, other / 4.0


# ------------------------------------------------------------------------ spawning


class SpawnError(RuntimeError):
    pass


def _spawn_conflict(a: VehicleState, b: VehicleState) -> bool:
    c, s = math.cos(a.heading), math.sin(a.heading)
    dx, dy = b.x - a.x, b.y - a.y
    u, w = c * dx + s * dy, -s * dx + c * dy
    if abs(w) < (a.width + b.width) / 2 + 0.5 and abs(u) < SAFE_GAP + (a.length + b.length) / 2:
        return True
    return detect_collision(a.box(), b.box())


def make_ego(map_spec: MapSpec) -> VehicleState:
    x, y, h = map_spec.spawn_point
    return VehicleState(x=x, y=y, heading=h, speed=0.0)


def _pedestrian_path(map_spec: MapSpec, arm: str, distance: float) -> tuple:
    d, n = _arm_frame(arm)
    reach = map_spec.lane_width + 1.5
    c = d * distance
    return (tuple(map(float, c - n * reach)), tuple(map(float, c + n * reach)))


def spawn_scenario(cfg: ScenarioConfig, seed: int | None = None) -> WorldState:
    """Seeded placement of the ego, ``cfg.veh`` traffic vehicles and ``cfg.ped`` pedestrians."""
    if cfg.veh < 0 or cfg.ped < 0:
        raise ValueError("entity counts must be non-negative")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    m = map_for(cfg)
    ego = make_ego(m)
    kinds = (VehicleKind.CAR, VehicleKind.MOTORCYCLE, VehicleKind.CYCLE)
    kind_p = (0.6, 0.2, 0.2)

    traffic: list[VehicleState] = []
    for k in range(cfg.veh):
        for _ in range(MAX_SPAWN_ATTEMPTS):
            lane = m.lanes[TRAFFIC_ROUTES[rng.integers(len(TRAFFIC_ROUTES))]]
            kind = kinds[rng.choice(3, p=kind_p)]
            length, width = VEHICLE_DIMS[kind]
            first = lane.entry_s - STOP_OFFSET - 3.0 - length
            second = lane.polyline.length - lane.exit_s - 3.0 - length
            u = rng.uniform(0.0, first + second)
            s = 2.0 + u if u < first else lane.exit_s + (u - first) + length
            x, y = lane.polyline.point_at(s)
            cand = VehicleState(x=x, y=y, heading=lane.polyline.heading_at(s),
                                speed=0.5 * cfg.traffic_speed_limit, kind=kind, length=length,
                                width=width, lane_ref=lane.name, lane_s=s)
            if not any(_spawn_conflict(o, cand) or _spawn_conflict(cand, o) for o in [ego, *traffic]):
                traffic.append(cand)
                break
        else:
            raise SpawnError(f"could not place vehicle {k} of {cfg.veh} within {MAX_SPAWN_ATTEMPTS} attempts")

    n_cross = int(round(cfg.crosswalk_fraction * cfg.ped))
    j = m.junction_half
    boxes = [v.box() for v in [ego, *traffic]]
    peds: list[PedestrianState] = []
    for k in range(cfg.ped):
        crossing = k < n_cross
        for _ in range(MAX_SPAWN_ATTEMPTS):
            arm = ARMS[rng.integers(3)]
            dist = j + 2.0 if crossing else rng.uniform(j + 6.0, m.arm_length - 4.0)
            path = _pedestrian_path(m, arm, dist)
            if rng.random() < 0.5:
                path = (path[1], path[0])
            length = math.hypot(path[1][0] - path[0][0], path[1][1] - path[0][1])
            prog = rng.uniform(0.0, length)
            f = prog / length
            x = path[0][0] + f * (path[1][0] - path[0][0])
            y = path[0][1] + f * (path[1][1] - path[0][1])
            disc = Disc(x, y, PED_RADIUS + 1.0)
            if any(detect_collision(disc, b) for b in boxes):
                continue
            if any(math.hypot(q.x - x, q.y - y) < 2 * PED_RADIUS + 0.2 for q in peds):
                continue
            peds.append(PedestrianState(x=x, y=y, path=path, progress=prog, uses_crosswalk=crossing))
            break
        else:
            raise SpawnError(f"could not place pedestrian {k} of {cfg.ped} within {MAX_SPAWN_ATTEMPTS} attempts")

    params = VehicleParams(v_cap=2 * cfg.traffic_speed_limit)
    return WorldState(ego, tuple(traffic), tuple(peds), m, 0, cfg.dt, params, cfg.traffic_speed_limit)


def without_ego(world: WorldState) -> WorldState:
    return replace(world, ego=None, _cache={})
