"""Independent reference computations used by the tests.

Nothing here imports the code under test beyond plain data types, so a shared
mistake cannot make an oracle agree with the implementation.
"""

from __future__ import annotations

import math

import numpy as np


def box_corners(box) -> np.ndarray:
    c, s = math.cos(box.heading), math.sin(box.heading)
    local = np.array([(1, 1), (-1, 1), (-1, -1), (1, -1)], dtype=float) * (box.half_length, box.half_width)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + (box.x, box.y)


def perimeter_points(box, n: int) -> np.ndarray:
    corners = box_corners(box)
    edges = np.roll(corners, -1, axis=0) - corners
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    t = np.linspace(0.0, lengths.sum(), n, endpoint=False)
    cum = np.concatenate(([0.0], np.cumsum(lengths)))
    k = np.minimum(np.searchsorted(cum, t, side="right") - 1, 3)
    f = (t - cum[k]) / lengths[k]
    return corners[k] + f[:, None] * edges[k]


def inside(points: np.ndarray, box) -> np.ndarray:
    c, s = math.cos(box.heading), math.sin(box.heading)
    d = points - (box.x, box.y)
    u = d[:, 0] * c + d[:, 1] * s
    v = -d[:, 0] * s + d[:, 1] * c
    return (np.abs(u) <= box.half_length) & (np.abs(v) <= box.half_width)


def perimeter_overlap_oracle(a, b, n_points: int = 10_000) -> bool:
    """Sample 10^4 boundary points (half on each box) and test containment.

    Two convex regions overlap iff a boundary point of one lies in the other
    or one contains the other's center; dense boundary sampling resolves any
    pair whose overlap depth or separation exceeds the sample spacing.
    """
    half = n_points // 2
    pa, pb = perimeter_points(a, half), perimeter_points(b, half)
    centers_a = np.array([[a.x, a.y]])
    centers_b = np.array([[b.x, b.y]])
    return bool(inside(pa, b).any() or inside(pb, a).any() or inside(centers_a, b).any()
                or inside(centers_b, a).any())


def _segment_distance(p, a, b) -> float:
    e = b - a
    t = np.clip(np.dot(p - a, e) / np.dot(e, e), 0.0, 1.0)
    return float(np.hypot(*(p - (a + t * e))))


def polygon_distance(pa: np.ndarray, pb: np.ndarray) -> float:
    best = math.inf
    for P, Q in ((pa, pb), (pb, pa)):
        for p in P:
            for i in range(len(Q)):
                best = min(best, _segment_distance(p, Q[i], Q[(i + 1) % len(Q)]))
    return best


def penetration_depth(pa: np.ndarray, pb: np.ndarray) -> float:
    """Smallest projected overlap over the edge normals of two convex polygons."""
    depth = math.inf
    for poly in (pa, pb):
        for i in range(len(poly)):
            e = poly[(i + 1) % len(poly)] - poly[i]
            n = np.array([-e[1], e[0]]) / math.hypot(*e)
            a, b = pa @ n, pb @ n
            depth = min(depth, min(a.max(), b.max()) - max(a.min(), b.min()))
    return depth


def signed_gap(a, b) -> float:
    """Separation distance if disjoint, minus the penetration depth otherwise."""
    pa, pb = box_corners(a), box_corners(b)
    depth = penetration_depth(pa, pb)
    if depth > 0:
        return -depth
    return polygon_distance(pa, pb)


def random_box_pair(rng: np.random.Generator):
    from tjunction_td3.geometry import Box

    def one(cx, cy):
        return Box(cx, cy, rng.uniform(-math.pi, math.pi), rng.uniform(0.3, 3.0), rng.uniform(0.2, 1.5))

    a = one(0.0, 0.0)
    r, phi = rng.uniform(0.0, 6.0), rng.uniform(-math.pi, math.pi)
    return a, one(r * math.cos(phi), r * math.sin(phi))


def chi_square_z(counts: np.ndarray) -> float:
    """Chi-square statistic against a uniform histogram, as a z-score."""
    counts = np.asarray(counts, dtype=float)
    k = len(counts)
    expected = counts.sum() / k
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    return (chi2 - (k - 1)) / math.sqrt(2 * (k - 1))


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = f(x)
        x.flat[i] = orig - h
        fm = f(x)
        x.flat[i] = orig
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def reference_mlp(weights, biases, x, tanh_head: bool) -> np.ndarray:
    """Plain loop evaluation of an MLP, one neuron at a time."""
    a = [float(v) for v in x]
    for k, (w, b) in enumerate(zip(weights, biases)):
        n_in, n_out = w.shape
        z = [sum(a[i] * w[i, j] for i in range(n_in)) + b[j] for j in range(n_out)]
        a = [max(v, 0.0) for v in z] if k < len(weights) - 1 else z
    return np.tanh(a) if tanh_head else np.array(a)
