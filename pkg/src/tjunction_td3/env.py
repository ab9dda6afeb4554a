"""Episode orchestration around the T-junction simulator (reset/step interface)."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import wrap_angle
from .reward import RewardBreakdown, RewardConfig, RewardInputs, compute_reward
from .world_sim import (
    Action,
    CollisionEvent,
    MapSpec,
    ScenarioConfig,
    VehicleKind,
    WorldState,
    classify_lane,
    spawn_scenario,
    step_world,
)

N_USERS = 8
USER_FEATURES = 5
VECTOR_SIZE = 5 + N_USERS * USER_FEATURES
GRID_CELLS = 84
GRID_POOL = 4
GRID_FRAMES = 4
GRID_RESOLUTION = 0.5     # meters per raw cell
GRID_BEHIND = 10.0        # meters of view behind the ego
GRID_SIZE = (GRID_CELLS // GRID_POOL) ** 2 * GRID_FRAMES
REL_SCALE = 30.0

KIND_CODE = {VehicleKind.CAR: 1.0, VehicleKind.MOTORCYCLE: 0.5, VehicleKind.CYCLE: 0.5}
PEDESTRIAN_CODE = -1.0


class DoneKind(str, Enum):
    RUNNING = "Running"
    COLLISION = "Collision"
    GOAL = "Goal"
    TIMEOUT = "Timeout"

    @property
    def terminal(self) -> bool:
        return self is not DoneKind.RUNNING


class ObsMode(str, Enum):
    VECTOR = "vector"
    GRID = "grid"


def observation_size(mode: ObsMode | str) -> int:
    return VECTOR_SIZE if ObsMode(mode) is ObsMode.VECTOR else GRID_SIZE


@dataclass(frozen=True)
class StepOutcome:
    observation: np.ndarray
    reward: RewardBreakdown
    done_kind: DoneKind
    info: dict = field(default_factory=dict)


def route_distance(ego_position, map_spec: MapSpec) -> float:
    """Remaining arc length from the ego's projection on the route to the goal."""
    s, _, _ = map_spec.route_line.project(float(ego_position[0]), float(ego_position[1]))
    return max(map_spec.route_line.length - s, 0.0)


# ------------------------------------------------------------------ observations


def _road_users(world: WorldState) -> np.ndarray:
    """Rows of (x, y, vx, vy, kind_code) for every active traffic vehicle and pedestrian."""
    rows = []
    for v in world.traffic:
        if v.active:
            rows.append((v.x, v.y, v.speed * math.cos(v.heading), v.speed * math.sin(v.heading), KIND_CODE[v.kind]))
    for p in world.pedestrians:
        vx, vy = p.velocity()
        rows.append((p.x, p.y, vx, vy, PEDESTRIAN_CODE))
    return np.array(rows, dtype=float).reshape(-1, 5)


def vector_observation(world: WorldState, d_cu: float, d_0: float, v_limit: float) -> np.ndarray:
    ego, m = world.ego, world.map
    s, lateral, _ = m.route_line.project(ego.x, ego.y)
    heading_err = wrap_angle(ego.heading - m.route_line.heading_at(s))
    obs = np.zeros(VECTOR_SIZE)
    obs[:5] = (ego.speed / v_limit, math.cos(heading_err), math.sin(heading_err),
               lateral / m.lane_width, d_cu / d_0)
    users = _road_users(world)
    if len(users):
        dx, dy = users[:, 0] - ego.x, users[:, 1] - ego.y
        dist = np.hypot(dx, dy)
        order = np.lexsort((np.arange(len(users)), dist))[:N_USERS]
        c, sn = math.cos(ego.heading), math.sin(ego.heading)
        evx, evy = ego.speed * c, ego.speed * sn
        rvx, rvy = users[order, 2] - evx, users[order, 3] - evy
        block = np.column_stack((
            (c * dx[order] + sn * dy[order]) / REL_SCALE,
            (-sn * dx[order] + c * dy[order]) / REL_SCALE,
            (c * rvx + sn * rvy) / v_limit,
            (-sn * rvx + c * rvy) / v_limit,
            users[order, 4],
        ))
        obs[5:5 + block.size] = block.ravel()
    return obs


_half = GRID_RESOLUTION / 2
_forward = -GRID_BEHIND + _half + GRID_RESOLUTION * np.arange(GRID_CELLS)
_lateral = (GRID_CELLS / 2) * GRID_RESOLUTION - _half - GRID_RESOLUTION * np.arange(GRID_CELLS)
# row index runs forward (far to near would flip the picture; keep near-first), column runs left to right
_CELL_F, _CELL_L = np.meshgrid(_forward, _lateral, indexing="ij")
_CELL_F, _CELL_L = _CELL_F.ravel(), _CELL_L.ravel()


def grid_frame(world: WorldState) -> np.ndarray:
    """One pooled 21x21 egocentric frame.

    A raw 84x84 cell is 1 when its center lies off the pavement or inside a
    road user's footprint; the frame is the 4x4 average pool of that grid.
    """
    ego = world.ego
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    wx = ego.x + c * _CELL_F - s * _CELL_L
    wy = ego.y + s * _CELL_F + c * _CELL_L
    occ = ~world.map.is_paved(np.column_stack((wx, wy)))
    for v in world.traffic:
        if not v.active:
            continue
        cv, sv = math.cos(v.heading), math.sin(v.heading)
        dx, dy = wx - v.x, wy - v.y
        occ |= (np.abs(cv * dx + sv * dy) <= v.length / 2) & (np.abs(-sv * dx + cv * dy) <= v.width / 2)
    for p in world.pedestrians:
        occ |= (wx - p.x) ** 2 + (wy - p.y) ** 2 <= 0.3 ** 2 + _half ** 2
    raw = occ.reshape(GRID_CELLS, GRID_CELLS).astype(float)
    k = GRID_CELLS // GRID_POOL
    return raw.reshape(k, GRID_POOL, k, GRID_POOL).mean(axis=(1, 3))


# ----------------------------------------------------------------------- episode


class EpisodeFinished(RuntimeError):
    pass


class TJunctionEnv:
    """Single-ego episode over a seeded scenario.

    Terminates on collision, on arrival within ``goal_radius`` of the goal, or
    at ``max_steps`` ticks.
    """

    def __init__(self, scenario: ScenarioConfig = ScenarioConfig(), reward: RewardConfig = RewardConfig(),
                 obs_mode: ObsMode | str = ObsMode.VECTOR, max_steps: int = 500, goal_radius: float = 2.0,
                 record: bool = False) -> None:
        self.scenario = scenario
        self.reward_cfg = reward
        self.obs_mode = ObsMode(obs_mode)
        self.max_steps = max_steps
        self.goal_radius = goal_radius
        self.record = record
        self.world: Optional[WorldState] = None
        self.trajectory: list[dict] = []
        self._frames: deque = deque(maxlen=GRID_FRAMES)
        self._done = True
        self.d_0 = self.d_pre = 0.0
        self._lane_memo: tuple = (None, None)

    @property
    def observation_size(self) -> int:
        return observation_size(self.obs_mode)

    def reset(self, seed: Optional[int] = None, scenario: Optional[ScenarioConfig] = None) -> np.ndarray:
        if scenario is not None:
            self.scenario = scenario
        self.world = spawn_scenario(self.scenario, self.scenario.seed if seed is None else seed)
        self.d_0 = self.world.map.route_line.length
        self.d_pre = route_distance((self.world.ego.x, self.world.ego.y), self.world.map)
        self._done = False
        self.trajectory = []
        self._frames.clear()
        if self.obs_mode is ObsMode.GRID:
            frame = grid_frame(self.world)
            for _ in range(GRID_FRAMES):
                self._frames.append(frame)
        return self._observation(self.d_pre)

    def _observation(self, d_cu: float) -> np.ndarray:
        if self.obs_mode is ObsMode.VECTOR:
            return vector_observation(self.world, d_cu, self.d_0, self.reward_cfg.v_limit)
        return np.concatenate([f.ravel() for f in self._frames])

    def step(self, action: Action) -> StepOutcome:
        if self._done:
            raise EpisodeFinished("step() called on a finished episode; call reset() first")
        if not isinstance(action, Action):
            action = Action(*action)
        self.world, collision = step_world(self.world, action)
        ego, m = self.world.ego, self.world.map
        d_cu = route_distance((ego.x, ego.y), m)
        collided = collision is not None
        reached = not collided and math.hypot(ego.x - m.goal_point[0], ego.y - m.goal_point[1]) <= self.goal_radius
        pose = (ego.x, ego.y, ego.heading)
        if self._lane_memo[0] != pose:  # a standing ego keeps its lane fractions
            self._lane_memo = (pose, classify_lane(ego, m))
        m_off, m_other = self._lane_memo[1]
        reward = compute_reward(RewardInputs(
            collided=collided, reached_goal=reached, d_pre=self.d_pre, d_cu=d_cu,
            v_speed=ego.speed, v_limit=self.reward_cfg.v_limit, m_offroad=m_off,
            m_otherlane=m_other, c_collision=self.reward_cfg.c_collision,
        ), self.reward_cfg)
        self.d_pre = d_cu
        tick = self.world.tick
        if collided:
            kind = DoneKind.COLLISION
        elif reached:
            kind = DoneKind.GOAL
        elif tick >= self.max_steps:
            kind = DoneKind.TIMEOUT
        else:
            kind = DoneKind.RUNNING
        self._done = kind.terminal
        if self.obs_mode is ObsMode.GRID:
            self._frames.append(grid_frame(self.world))
        if self.record:
            self.trajectory.append(_trajectory_row(self.world, action, reward, kind, collision))
        info = {"tick": tick, "d_cu": d_cu, "speed": ego.speed, "collision": collision}
        return StepOutcome(self._observation(d_cu), reward, kind, info)


# -------------------------------------------------------------------- trajectory

TRAJECTORY_COLUMNS = (
    "tick", "x", "y", "heading", "speed", "throttle", "steer", "brake",
    "r1", "r2", "r3", "r4", "r5", "total", "done_kind", "others",
)


def _trajectory_row(world: WorldState, action: Action, reward: RewardBreakdown, kind: DoneKind,
                    collision: Optional[CollisionEvent]) -> dict:
    ego = world.ego
    others = [f"V:{v.x:.2f}:{v.y:.2f}:{v.heading:.3f}:{v.length}:{v.width}" for v in world.traffic if v.active]
    others += [f"P:{p.x:.2f}:{p.y:.2f}" for p in world.pedestrians]
    return {
        "tick": world.tick, "x": ego.x, "y": ego.y, "heading": ego.heading, "speed": ego.speed,
        "throttle": action.throttle, "steer": action.steer, "brake": action.brake,
        "r1": reward.r1, "r2": reward.r2, "r3": reward.r3, "r4": reward.r4, "r5": reward.r5,
        "total": reward.total, "done_kind": kind.value, "others": ";".join(others),
    }


def write_trajectory_csv(rows: list[dict], path: str | Path, scenario: ScenarioConfig | None = None) -> None:
    """One row per tick. The scenario's route and geometry go in a leading comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        if scenario is not None:
            fh.write(f"# route={scenario.route.value if hasattr(scenario.route, 'value') else scenario.route} "
                     f"lane_width={scenario.lane_width} arm_length={scenario.arm_length} "
                     f"spawn_distance={scenario.spawn_distance}\n")
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    tmp.replace(path)
