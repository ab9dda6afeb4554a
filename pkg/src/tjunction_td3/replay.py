"""Text rendering of a recorded trajectory: one top-down frame per tick."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterator

import numpy as np

from .world_sim import Route, build_map

CELL = 2.0          # meters per character cell
HALF_EXTENT = 40.0  # meters shown on each side of the junction center


class TrajectoryError(ValueError):
    pass


def read_trajectory(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse a trajectory CSV. Returns (header fields from the comment line, rows)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise TrajectoryError(f"cannot read trajectory {path}: {exc.strerror}") from None
    meta: dict = {}
    if lines and lines[0].startswith("#"):
        for item in lines[0][1:].split():
            key, _, value = item.partition("=")
            meta[key] = value
        lines = lines[1:]
    rows = list(csv.DictReader(lines))
    if not rows or "x" not in rows[0]:
        raise TrajectoryError(f"{path}: no trajectory rows")
    return meta, rows


def _background(meta: dict) -> tuple[np.ndarray, object]:
    m = build_map(float(meta.get("lane_width", 3.5)), float(meta.get("arm_length", 60.0)),
                  Route(meta.get("route", "Left")), float(meta.get("spawn_distance", 30.0)))
    n = int(2 * HALF_EXTENT / CELL)
    xs = -HALF_EXTENT + CELL * (np.arange(n) + 0.5)
    ys = HALF_EXTENT - CELL * (np.arange(n) + 0.5)
    gx, gy = np.meshgrid(xs, ys)
    paved = m.is_paved(np.column_stack((gx.ravel(), gy.ravel()))).reshape(n, n)
    grid = np.where(paved, ".", "#").astype("<U1")
    for (ax, ay), (bx, by) in m.crosswalk_segments:
        for t in np.linspace(0.0, 1.0, 12):
            _put(grid, ax + t * (bx - ax), ay + t * (by - ay), "=")
    for x, y in m.route_line.vertices[::2]:
        _put(grid, x, y, ":")
    _put(grid, m.goal_point[0], m.goal_point[1], "G")
    return grid, m


def _put(grid: np.ndarray, x: float, y: float, glyph: str) -> None:
    n = grid.shape[0]
    col = int(math.floor((x + HALF_EXTENT) / CELL))
    row = int(math.floor((HALF_EXTENT - y) / CELL))
    if 0 <= row < n and 0 <= col < n:
        grid[row, col] = glyph


def render_frames(meta: dict, rows: list[dict]) -> Iterator[str]:
    """Legend: # off-road, . pavement, = crosswalk, : ego route, G goal, E ego, V vehicle, P pedestrian."""
    base, _ = _background(meta)
    for row in rows:
        grid = base.copy()
        for item in filter(None, row.get("others", "").split(";")):
            parts = item.split(":")
            _put(grid, float(parts[1]), float(parts[2]), "V" if parts[0] == "V" else "P")
        _put(grid, float(row["x"]), float(row["y"]), "E")
        header = (f"tick {row['tick']}  pos ({float(row['x']):.1f}, {float(row['y']):.1f})  "
                  f"speed {float(row['speed']):.2f} m/s  {row['done_kind']}")
        readout = (f"reward total {float(row['total']):+.3f}  r1 {float(row['r1']):+.1f}  "
                   f"r2 {float(row['r2']):+.3f}  r3 {float(row['r3']):.2f}  r4 {float(row['r4']):+.2f}  "
                   f"r5 {float(row['r5']):+.1f}")
        yield "\n".join([header] + ["".join(r) for r in grid] + [readout])
