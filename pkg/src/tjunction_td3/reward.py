"""Per-tick reward: collision penalty, progress, speed, lane keeping and goal bonus."""

from __future__ import annotations

import math
from dataclasses import dataclass

GOAL_BONUS = 100.0


@dataclass(frozen=True)
class RewardConfig:
    c_collision: float = 100.0
    v_limit: float = 8.33
    include_speed_term: bool = True
    speed_weight: float = 0.05


@dataclass(frozen=True)
class RewardInputs:
    collided: bool
    reached_goal: bool
    d_pre: float
    d_cu: float
    v_speed: float
    v_limit: float
    m_offroad: float
    m_otherlane: float
    c_collision: float


@dataclass(frozen=True)
class RewardBreakdown:
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float
    total: float


def _check(inp: RewardInputs) -> None:
    for name in ("d_pre", "d_cu", "v_speed", "v_limit", "m_offroad", "m_otherlane", "c_collision"):
        value = getattr(inp, name)
        if not math.isfinite(value):
            raise ValueError(f"reward input {name} is not finite: {value}")
    if inp.d_pre < 0 or inp.d_cu < 0:
        raise ValueError(f"negative distance to goal (d_pre={inp.d_pre}, d_cu={inp.d_cu})")
    if inp.v_speed < 0:
        raise ValueError(f"negative speed {inp.v_speed}")
    if inp.v_limit <= 0:
        raise ValueError(f"v_limit must be positive, got {inp.v_limit}")
    if inp.c_collision <= 0:
        raise ValueError(f"c_collision must be positive, got {inp.c_collision}")
    for name in ("m_offroad", "m_otherlane"):
        if not 0.0 <= getattr(inp, name) <= 1.0:
            raise ValueError(f"{name} outside [0, 1]")


def compute_reward(inp: RewardInputs, cfg: RewardConfig = RewardConfig()) -> RewardBreakdown:
    """Evaluate the five reward terms and their total.

    The collision and goal terms fire only on the tick the event happens. The
    speed term enters the total with weight ``cfg.speed_weight`` when
    ``cfg.include_speed_term`` is set; otherwise the total is exactly
    ``r1 + r2 + r4 + r5``.
    """
    _check(inp)
    r1 = -inp.c_collision if inp.collided else 0.0
    r2 = inp.d_pre - inp.d_cu
    r3 = max(0.0, min(inp.v_speed, inp.v_limit))
    r4 = -inp.m_offroad - inp.m_otherlane
    r5 = GOAL_BONUS if inp.reached_goal else 0.0
    total = r1 + r2 + r4 + r5
    if cfg.include_speed_term:
        total += cfg.speed_weight * r3
    return RewardBreakdown(r1, r2, r3, r4, r5, total)
