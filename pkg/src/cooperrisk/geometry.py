"""Planar geometry: rotations, frame changes and oriented-box footprints.

Everything here is bird's-eye 2D. Oriented boxes are described by
``(x, y, heading, length, width)`` with ``length`` along the heading.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into ``(-pi, pi]``."""
    if np.ndim(angle) == 0:
        a = math.fmod(float(angle) + math.pi, TWO_PI)
        if a <= 0.0:
            a += TWO_PI
        return a - math.pi
    a = np.mod(np.asarray(angle, dtype=float) + math.pi, TWO_PI)
    a = np.where(a <= 0.0, a + TWO_PI, a)
    return a - math.pi


def pseudo_rotate(position, heading):
    """Rotate ``(s, l)`` by ``-heading``.

    Returns ``(cos h * s + sin h * l, -sin h * s + cos h * l)``. Works on
    scalars or broadcastable arrays; ``position`` may be a pair or an array
    whose last axis has length 2.
    """
    pos = np.asarray(position, dtype=float)
    c = np.cos(heading)
    s = np.sin(heading)
    x, y = pos[..., 0], pos[..., 1]
    out = np.stack([c * x + s * y, -s * x + c * y], axis=-1)
    if out.ndim == 1:
        return float(out[0]), float(out[1])
    return out


def to_local(x, y, heading, pose):
    """Express a world pose in the frame ``pose = (px, py, ph)``."""
    px, py, ph = pose
    dx, dy = x - px, y - py
    c, s = math.cos(ph), math.sin(ph)
    return c * dx + s * dy, -s * dx + c * dy, wrap_angle(heading - ph)


def to_world(x, y, heading, pose):
    """Inverse of :func:`to_local`."""
    px, py, ph = pose
    c, s = math.cos(ph), math.sin(ph)
    return px + c * x - s * y, py + s * x + c * y, wrap_angle(heading + ph)


def box_corners(x, y, heading, length, width) -> np.ndarray:
    """Counter-clockwise corners of an oriented box, shape ``(4, 2)``."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def box_corners_batch(x, y, heading, length, width) -> np.ndarray:
    """Vectorized :func:`box_corners`; returns ``(..., 4, 2)``."""
    x, y, heading, length, width = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, y, heading, length, width)))
    c, s = np.cos(heading)[..., None], np.sin(heading)[..., None]
    hl, hw = 0.5 * length[..., None], 0.5 * width[..., None]
    sx = np.array([1.0, 1.0, -1.0, -1.0])
    sy = np.array([-1.0, 1.0, 1.0, -1.0])
    lx, ly = sx * hl, sy * hw
    cx = x[..., None] + c * lx - s * ly
    cy = y[..., None] + s * lx + c * ly
    return np.stack([cx, cy], axis=-1)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by convex CCW ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0.0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, sp = cur, sc
    return np.array(out, dtype=float).reshape(-1, 2)


def rect_iou(a, b) -> float:
    """IoU of two oriented rectangles given as ``(x, y, heading, length, width)``."""
    ca = box_corners(*a)
    cb = box_corners(*b)
    if np.array_equal(ca, cb):
        return 1.0
    ra = 0.5 * math.hypot(a[3], a[4])
    rb = 0.5 * math.hypot(b[3], b[4])
    if math.hypot(a[0] - b[0], a[1] - b[1]) > ra + rb:
        return 0.0
    inter = polygon_area(clip_convex(ca, cb))
    union = a[3] * a[4] + b[3] * b[4] - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def obb_overlap_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Separating-axis overlap test between corner arrays.

    ``a`` and ``b`` are ``(..., 4, 2)`` rectangles (broadcastable). Touching
    boxes count as overlapping. Returns a boolean array of the batch shape.
    """
    a, b = np.broadcast_arrays(a, b)
    ea = a[..., [1, 3], :] - a[..., [0, 0], :]
    eb = b[..., [1, 3], :] - b[..., [0, 0], :]
    axes = np.concatenate([ea, eb], axis=-2)  # (..., 4, 2) edge directions
    axes = np.stack([-axes[..., 1], axes[..., 0]], axis=-1)
    pa = np.einsum("...ij,...kj->...ik", axes, a)
    pb = np.einsum("...ij,...kj->...ik", axes, b)
    separated = (pa.max(-1) < pb.min(-1)) | (pb.max(-1) < pa.min(-1))
    return ~separated.any(-1)


def segment_hits_box(p0, p1, box) -> bool:
    """Whether the segment ``p0 -> p1`` crosses the oriented ``box``."""
    x, y, h, length, width = box
    c, s = math.cos(h), math.sin(h)

    def local(p):
        dx, dy = p[0] - x, p[1] - y
        return c * dx + s * dy, -s * dx + c * dy

    (ax, ay), (bx, by) = local(p0), local(p1)
    t0, t1 = 0.0, 1.0
    for a, d, half in ((ax, bx - ax, 0.5 * length), (ay, by - ay, 0.5 * width)):
        if abs(d) < 1e-12:
            if abs(a) > half:
                return False
            continue
        ta, tb = (-half - a) / d, (half - a) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return False
    return True
