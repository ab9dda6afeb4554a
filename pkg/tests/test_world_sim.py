import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tjunction_td3.world_sim import (
    Action,
    CollisionKind,
    PedestrianState,
    Route,
    ScenarioConfig,
    SpawnError,
    VehicleKind,
    VehicleParams,
    VehicleState,
    WorldState,
    autopilot,
    build_map,
    classify_lane,
    make_ego,
    spawn_scenario,
    step_ego,
    step_world,
    traffic_collisions,
    without_ego,
)

MAP = build_map()


def lane_vehicle(lane: str, s: float, speed: float = 0.0, kind=VehicleKind.CAR) -> VehicleState:
    line = MAP.lanes[lane].polyline
    x, y = line.point_at(s)
    length, width = (4.5, 2.0) if kind is VehicleKind.CAR else (2.0, 0.8)
    return VehicleState(x, y, line.heading_at(s), speed, kind, length, width, lane, s)


def world(traffic=(), peds=(), ego=None) -> WorldState:
    return WorldState(ego, tuple(traffic), tuple(peds), MAP)


# ------------------------------------------------------------------- step_ego


def test_step_ego_zero_velocity_fixed_point():
    s = VehicleState(1.0, 2.0, 0.3, 0.0)
    out = step_ego(s, 0.0, 0.7, 0.0, 0.1)
    assert (out.x, out.y, out.heading, out.speed) == (1.0, 2.0, 0.3, 0.0)


def test_step_ego_straight_line_advances_one_meter():
    s = VehicleState(0.0, 0.0, 0.0, 10.0)
    out = step_ego(s, 0.0, 0.0, 0.0, 0.1, VehicleParams(c_drag=0.0))
    assert out.x == 1.0 and out.y == 0.0 and out.heading == 0.0
    # with the default drag the speed first decays to 9.95 m/s
    out = step_ego(s, 0.0, 0.0, 0.0, 0.1)
    assert out.speed == pytest.approx(9.95) and out.x == pytest.approx(0.995)


def test_step_ego_full_throttle_and_brake_decelerates():
    out = step_ego(VehicleState(0, 0, 0, 5.0), 1.0, 0.0, 1.0, 0.1)
    assert out.speed < 5.0
    assert out.speed == pytest.approx(5.0 + (3.0 - 8.0 - 0.05 * 5.0) * 0.1)


def test_step_ego_bicycle_heading_rate():
    p = VehicleParams()
    out = step_ego(VehicleState(0, 0, 0, 4.0), 0.0, 0.5, 0.0, 0.1, replace(p, c_drag=0.0))
    expected = 4.0 * math.tan(math.radians(35.0) * 0.5) / 2.7 * 0.1
    assert out.heading == pytest.approx(expected)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 20), st.floats(-10, 10), st.floats(0, 1), st.floats(-1, 1), st.floats(0, 1))
def test_step_ego_keeps_speed_and_heading_in_range(speed, heading, thr, steer, brake):
    p = VehicleParams()
    out = step_ego(VehicleState(0, 0, heading, min(speed, p.v_cap)), thr, steer, brake, 0.1, p)
    assert 0.0 <= out.speed <= p.v_cap
    if out.speed > 0:
        assert -math.pi < out.heading <= math.pi


# ------------------------------------------------------------------ autopilot


def test_autopilot_brakes_for_close_leader():
    follower = lane_vehicle("W-E", 10.0, speed=5.0)
    leader = lane_vehicle("W-E", 10.0 + 4.5 + 1.0)  # bumper gap 1.0 m
    thr, _, brake = autopilot(world([follower, leader]), 0)
    assert brake == 1.0 and thr == 0.0


def test_autopilot_equilibrium_on_empty_road():
    v = lane_vehicle("W-E", 5.0, speed=8.33)
    w = world([v])
    thr, steer, brake = autopilot(w, 0)
    p = w.params
    accel = thr * p.a_max - brake * p.b_max - p.c_drag * v.speed
    assert abs(accel) < 0.05 * p.a_max
    assert abs(steer) < 1e-9


def test_autopilot_brakes_for_pedestrian_two_meters_ahead():
    v = lane_vehicle("E-W", 8.0, speed=3.0)
    line = MAP.lanes["E-W"].polyline
    px, py = line.point_at(8.0 + 2.25 + 2.0)
    ped = PedestrianState(px, py, ((px, py - 1.0), (px, py + 1.0)), progress=1.0, waiting=True)
    thr, _, brake = autopilot(world([v], [ped]), 0)
    assert brake == 1.0 and thr == 0.0


def test_autopilot_ignores_vehicle_in_other_lane():
    v = lane_vehicle("W-E", 10.0, speed=5.0)
    opposite = lane_vehicle("E-W", MAP.lanes["E-W"].polyline.length - 18.0)
    _, _, brake = autopilot(world([v, opposite]), 0)
    assert brake < 1.0


def test_autopilot_rejects_bad_index():
    w = world([lane_vehicle("W-E", 10.0)])
    with pytest.raises(IndexError):
        autopilot(w, 1)
    with pytest.raises(IndexError):
        autopilot(w, -1)
    with pytest.raises(ValueError):
        autopilot(world([VehicleState(0, 0, 0)]), 0)


def test_autopilot_is_pure():
    w = spawn_scenario(ScenarioConfig(veh=6, ped=4), 3)
    assert [autopilot(w, i) for i in range(6)] == [autopilot(w, i) for i in range(6)]


# ----------------------------------------------------------------- step_world


def test_empty_world_zero_action_only_tick_and_drag_change():
    ego = replace(make_ego(MAP), speed=5.0)
    w = world(ego=ego)
    new, event = step_world(w, Action())
    assert event is None and new.tick == 1
    assert new.ego.speed == pytest.approx(5.0 - 0.05 * 5.0 * 0.1)
    assert new.ego.heading == ego.heading


def test_ego_overlapping_pedestrian_reports_collision():
    ego = make_ego(MAP)
    ped = PedestrianState(ego.x, ego.y + 1.0, ((ego.x - 3, ego.y + 1), (ego.x + 3, ego.y + 1)), 3.0)
    _, event = step_world(world(ego=ego, peds=[ped]), Action(brake=1.0))
    assert event is not None and event.other_kind is CollisionKind.PEDESTRIAN and event.other_index == 0


def test_first_collision_is_the_nearest():
    ego = make_ego(MAP)
    far = replace(ego, x=ego.x, y=ego.y + 3.0, lane_ref="S-W", kind=VehicleKind.CAR)
    near = PedestrianState(ego.x + 0.8, ego.y, ((ego.x + 0.8, ego.y - 1), (ego.x + 0.8, ego.y + 1)), 1.0,
                           waiting=True)
    event = step_world(world([far], [near], ego), Action(brake=1.0))[1]
    assert event.other_kind is CollisionKind.PEDESTRIAN


def test_step_world_is_deterministic():
    w = spawn_scenario(ScenarioConfig(veh=6, ped=4), 11)
    a, b = w, w
    for t in range(60):
        act = Action(0.6, 0.1 * math.sin(t), 0.0)
        a, ea = step_world(a, act)
        b, eb = step_world(b, act)
        assert a == b and ea == eb


def test_pedestrians_pause_near_moving_vehicle():
    v = lane_vehicle("W-E", 20.0, speed=6.0)
    front = v.x + 2.25
    ped = PedestrianState(front + 1.0, v.y + 2.5, ((front + 1.0, v.y + 4.0), (front + 1.0, v.y - 4.0)), 1.5)
    new, _ = step_world(world([v], [ped]))
    assert new.pedestrians[0].waiting
    assert (new.pedestrians[0].x, new.pedestrians[0].y) == (ped.x, ped.y)


def test_pedestrian_walks_when_clear():
    ped = PedestrianState(0.0, -20.0, ((-5.0, -20.0), (5.0, -20.0)), 5.0)
    new, _ = step_world(world(peds=[ped]))
    assert new.pedestrians[0].x == pytest.approx(0.14)


def test_autopilot_world_has_no_collisions_short():
    for seed in (0, 1):
        w = without_ego(spawn_scenario(ScenarioConfig(veh=6, ped=2), seed))
        for _ in range(200):
            w, _ = step_world(w)
            assert traffic_collisions(w) == []


# --------------------------------------------------------------- classify_lane


def test_classify_centered_in_route_lane():
    assert classify_lane(make_ego(MAP), MAP) == (0.0, 0.0)


def test_classify_fully_off_pavement():
    assert classify_lane(VehicleState(30.0, -30.0, 0.5), MAP) == (1.0, 0.0)


def test_classify_straddling_centerline():
    ego = VehicleState(0.0, -30.0, math.pi / 2)
    assert classify_lane(ego, MAP) == (0.0, 0.5)


def test_classify_fully_in_opposing_lane():
    ego = VehicleState(-1.75, -30.0, math.pi / 2)
    assert classify_lane(ego, MAP) == (0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-40, 40), st.floats(-40, 10), st.floats(-4, 4))
def test_classify_outputs_are_quarter_fractions(x, y, h):
    off, other = classify_lane(VehicleState(x, y, h), MAP)
    assert off + other <= 1.0
    assert off * 4 == int(off * 4) and other * 4 == int(other * 4)


# -------------------------------------------------------------------- spawning


def test_spawn_crosswalk_share():
    w = spawn_scenario(ScenarioConfig(veh=2, ped=10), 0)
    assert sum(p.uses_crosswalk for p in w.pedestrians) == 8


def test_spawn_is_deterministic():
    cfg = ScenarioConfig(veh=6, ped=6)
    assert spawn_scenario(cfg, 5) == spawn_scenario(cfg, 5)
    assert spawn_scenario(cfg, 5) != spawn_scenario(cfg, 6)


def test_spawn_empty_world_has_only_ego():
    w = spawn_scenario(ScenarioConfig(veh=0, ped=0), 0)
    assert w.traffic == () and w.pedestrians == () and w.ego == make_ego(w.map)


def test_spawn_gaps_between_vehicles_in_same_lane():
    for seed in range(5):
        w = spawn_scenario(ScenarioConfig(veh=10, ped=0), seed)
        vs = [w.ego, *w.traffic]
        for i, a in enumerate(vs):
            for b in vs[i + 1:]:
                c, s = math.cos(a.heading), math.sin(a.heading)
                dx, dy = b.x - a.x, b.y - a.y
                lateral = abs(-s * dx + c * dy)
                if lateral < (a.width + b.width) / 2:
                    assert math.hypot(dx, dy) >= 2.5 + (a.length + b.length) / 2 - 1e-9


def test_spawn_fails_when_overcrowded():
    with pytest.raises(SpawnError):
        spawn_scenario(ScenarioConfig(veh=200, ped=0), 0)


def test_map_routes():
    for route, goal_x_sign in ((Route.LEFT, -1), (Route.RIGHT, 1)):
        m = build_map(route=route)
        assert np.sign(m.goal_point[0]) == goal_x_sign
        assert m.spawn_point[2] == pytest.approx(math.pi / 2)
    straight = build_map(route=Route.STRAIGHT)
    assert straight.goal_point[0] > 0 and straight.spawn_point[0] < 0
