"""Planar geometry helpers: oriented boxes, discs, polylines and polygons."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(angle: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    a = math.fmod(angle + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Box:
    """Oriented rectangle given by its center, heading and half extents."""

    x: float
    y: float
    heading: float
    half_length: float
    half_width: float

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = self.half_length, self.half_width
        local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
        return np.array([(self.x + c * u - s * v, self.y + s * u + c * v) for u, v in local])


@dataclass(frozen=True)
class Disc:
    x: float
    y: float
    radius: float


def boxes_overlap(a: Box, b: Box) -> bool:
    """Separating-axis test on the four face normals of two oriented boxes.

    Touching boxes count as overlapping.
    """
    dx, dy = b.x - a.x, b.y - a.y
    ca, sa = math.cos(a.heading), math.sin(a.heading)
    cb, sb = math.cos(b.heading), math.sin(b.heading)
    for ax, ay in ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb)):
        ra = a.half_length * abs(ca * ax + sa * ay) + a.half_width * abs(-sa * ax + ca * ay)
        rb = b.half_length * abs(cb * ax + sb * ay) + b.half_width * abs(-sb * ax + cb * ay)
        if abs(dx * ax + dy * ay) > ra + rb:
            return False
    return True


def point_segment_distance(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> float:
    ex, ey = bx - ax, by - ay
    denom = ex * ex + ey * ey
    t = 0.0 if denom == 0.0 else ((px - ax) * ex + (py - ay) * ey) / denom
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * ex), py - (ay + t * ey))


def point_in_box(px: float, py: float, box: Box) -> bool:
    c, s = math.cos(box.heading), math.sin(box.heading)
    dx, dy = px - box.x, py - box.y
    return abs(c * dx + s * dy) <= box.half_length and abs(-s * dx + c * dy) <= box.half_width


def disc_box_overlap(disc: Disc, box: Box) -> bool:
    """Disc against oriented box: center containment, else distance to the edges."""
    if point_in_box(disc.x, disc.y, box):
        return True
    pts = box.corners()
    for i in range(4):
        a, b = pts[i], pts[(i + 1) % 4]
        if point_segment_distance(disc.x, disc.y, a[0], a[1], b[0], b[1]) <= disc.radius:
            return True
    return False


def detect_collision(a: Box | Disc, b: Box | Disc) -> bool:
    """Dispatch the overlap test on the shape types of ``a`` and ``b``."""
    if isinstance(a, Box) and isinstance(b, Box):
        return boxes_overlap(a, b)
    if isinstance(a, Disc) and isinstance(b, Disc):
        return math.hypot(a.x - b.x, a.y - b.y) <= a.radius + b.radius
    if isinstance(a, Disc):
        return disc_box_overlap(a, b)
    return disc_box_overlap(b, a)


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd ray casting for an (N, 2) array of points against a simple polygon.

    Points exactly on an edge may land on either side.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x1, y1 = polygon[:, 0][None, :], polygon[:, 1][None, :]
    rolled = np.roll(polygon, -1, axis=0)
    x2, y2 = rolled[:, 0][None, :], rolled[:, 1][None, :]
    crosses = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_int = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    hits = crosses & (x < x_int)
    return np.count_nonzero(hits, axis=1) % 2 == 1


class Polyline:
    """Piecewise-linear path with arc-length parametrization."""

    def __init__(self, vertices) -> None:
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 2:
            raise ValueError("polyline needs at least two 2D vertices")
        self.vertices = v
        seg = np.diff(v, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(self.seg_len <= 0.0):
            raise ValueError("polyline has repeated vertices")
        self.seg_dir = seg / self.seg_len[:, None]
        self.cum = np.concatenate(([0.0], np.cumsum(self.seg_len)))
        self.length = float(self.cum[-1])
        self._cum = self.cum.tolist()
        self._pts = self.vertices.tolist()
        self._dirs = self.seg_dir.tolist()
        self._lens = self.seg_len.tolist()
        self._last_query = (None, None)

    def _segment(self, s: float) -> int:
        # bounded search clamps the result to a valid segment index
        return bisect.bisect_right(self._cum, s, 1, len(self._lens)) - 1

    def point_at(self, s: float) -> tuple[float, float]:
        s = min(max(s, 0.0), self.length)
        i = self._segment(s)
        t = s - self._cum[i]
        (px, py), (dx, dy) = self._pts[i], self._dirs[i]
        return px + t * dx, py + t * dy

    def heading_at(self, s: float) -> float:
        dx, dy = self._dirs[self._segment(min(max(s, 0.0), self.length))]
        return math.atan2(dy, dx)

    def project(self, x: float, y: float) -> tuple[float, float, float]:
        """Closest point on the polyline.

        Returns ``(s, signed_lateral, distance)``; lateral is positive to the
        left of the travel direction. Ties go to the earliest segment.
        """
        if self._last_query[0] == (x, y):
            return self._last_query[1]
        a = self.vertices[:-1]
        rel = np.array([x, y]) - a
        t = np.clip(np.einsum("ij,ij->i", rel, self.seg_dir), 0.0, self.seg_len)
        foot = a + t[:, None] * self.seg_dir
        d = np.hypot(x - foot[:, 0], y - foot[:, 1])
        i = int(np.argmin(d))
        cross = self.seg_dir[i, 0] * rel[i, 1] - self.seg_dir[i, 1] * rel[i, 0]
        out = float(self.cum[i] + t[i]), float(math.copysign(d[i], cross) if d[i] > 0 else 0.0), float(d[i])
        self._last_query = ((x, y), out)  # the ego is usually projected twice per tick
        return out

    def project_near(self, x: float, y: float, s_hint: float, window: float = 3.0) -> float:
        """Arc position of the closest point, searching only near ``s_hint``."""
        lo = self._segment(s_hint - window)
        hi = self._segment(s_hint + window)
        best, best_s = math.inf, s_hint
        for i in range(lo, hi + 1):
            (px, py), (dx, dy), n = self._pts[i], self._dirs[i], self._lens[i]
            t = (x - px) * dx + (y - py) * dy
            t = 0.0 if t < 0.0 else n if t > n else t
            d2 = (x - px - t * dx) ** 2 + (y - py - t * dy) ** 2
            if d2 < best:
                best, best_s = d2, self._cum[i] + t
        return best_s


def resample(points, spacing: float = 1.0) -> np.ndarray:
    """Insert vertices so consecutive points are at most ``spacing`` apart."""
    pts = np.asarray(points, dtype=float)
    out = [pts[0]]
    for p, q in zip(pts[:-1], pts[1:]):
        n = max(1, int(math.ceil(np.hypot(*(q - p)) / spacing)))
        for k in range(1, n + 1):
            out.append(p + (q - p) * (k / n))
    return np.array(out)
