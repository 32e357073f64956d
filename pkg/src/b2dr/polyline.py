"""Arc-length utilities for 2D polylines (routes, map linestrings)."""

from __future__ import annotations

import math
from typing import Sequence

Point = tuple[float, float]


def arc_length(points: Sequence[Point]) -> float:
    return sum(
        math.dist(points[i], points[i + 1]) for i in range(len(points) - 1)
    )


def cumulative_arcs(points: Sequence[Point]) -> list[float]:
    """Arc-length coordinate of every vertex, starting at 0."""
    arcs = [0.0]
    for i in range(len(points) - 1):
        arcs.append(arcs[-1] + math.dist(points[i], points[i + 1]))
    return arcs


def point_at_arc(points: Sequence[Point], s: float) -> Point:
    """Point at arc-length s, clamped to the polyline's ends."""
    arcs = cumulative_arcs(points)
    if s <= 0.0:
        return points[0]
    if s >= arcs[-1]:
        return points[-1]
    for i in range(len(points) - 1):
        if s <= arcs[i + 1]:
            seg = arcs[i + 1] - arcs[i]
            t = 0.0 if seg == 0.0 else (s - arcs[i]) / seg
            ax, ay = points[i]
            bx, by = points[i + 1]
            return (ax + t * (bx - ax), ay + t * (by - ay))
    return points[-1]


def tangent_at_arc(points: Sequence[Point], s: float) -> Point:
    """Unit tangent of the segment containing arc-length s.

    Degenerate (zero-length) segments are skipped; a polyline with no
    extent yields (1, 0).
    """
    arcs = cumulative_arcs(points)
    s = min(max(s, 0.0), arcs[-1])
    idx = 0
    for i in range(len(points) - 1):
        if s <= arcs[i + 1] and arcs[i + 1] > arcs[i]:
            idx = i
            break
        if arcs[i + 1] > arcs[i]:
            idx = i
    ax, ay = points[idx]
    bx, by = points[idx + 1]
    dx, dy = bx - ax, by - ay
    n = math.hypot(dx, dy)
    if n == 0.0:
        return (1.0, 0.0)
    return (dx / n, dy / n)


def project_to_polyline(points: Sequence[Point], p: Point) -> tuple[float, float]:
    """Project p onto the polyline.

    Returns (arc-length of the nearest point, signed lateral offset).
    Lateral is positive to the left of the local tangent.
    """
    arcs = cumulative_arcs(points)
    best_d2 = math.inf
    best_s = 0.0
    best_lat = 0.0
    px, py = p
    for i in range(len(points) - 1):
        ax, ay = points[i]
        bx, by = points[i + 1]
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            t = 0.0
        else:
            t = ((px - ax) * dx + (py - ay) * dy) / seg2
            t = min(max(t, 0.0), 1.0)
        qx, qy = ax + t * dx, ay + t * dy
        d2 = (px - qx) ** 2 + (py - qy) ** 2
        if d2 < best_d2:
            best_d2 = d2
            seg = math.sqrt(seg2)
            best_s = arcs[i] + t * seg
            if seg > 0.0:
                # z-component of tangent x offset
                best_lat = (dx * (py - ay) - dy * (px - ax)) / seg
            else:
                best_lat = math.sqrt(d2)
    return best_s, best_lat
