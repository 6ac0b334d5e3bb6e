"""Occupancy raster over a scene's walls plus A* shortest paths.

Cells are squares of `resolution` meters; a cell is blocked when its center
lies within `inflation` (agent radius) plus half a cell diagonal of any wall
segment, so a path through free centers keeps the agent body clear.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)
# neighbor order is part of the determinism contract
_NEIGHBORS = (
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2),
)


def point_segment_distance(px, py, x1, y1, x2, y2) -> float:
    dx, dy = x2 - x1, y2 - y1
    L2 = dx * dx + dy * dy
    if L2 == 0.0:
        return math.hypot(px - x1, py - y1)
    t = ((px - x1) * dx + (py - y1) * dy) / L2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (x1 + t * dx), py - (y1 + t * dy))


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_intersect(a1, a2, b1, b2) -> bool:
    d1 = _orient(*b1, *b2, *a1)
    d2 = _orient(*b1, *b2, *a2)
    d3 = _orient(*a1, *a2, *b1)
    d4 = _orient(*a1, *a2, *b2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True

    def on(px, py, qx, qy, rx, ry):
        return min(px, qx) <= rx <= max(px, qx) and min(py, qy) <= ry <= max(py, qy)

    if d1 == 0 and on(*b1, *b2, *a1):
        return True
    if d2 == 0 and on(*b1, *b2, *a2):
        return True
    if d3 == 0 and on(*a1, *a2, *b1):
        return True
    if d4 == 0 and on(*a1, *a2, *b2):
        return True
    return False


def segment_segment_distance(a1, a2, b1, b2) -> float:
    if segments_intersect(a1, a2, b1, b2):
        return 0.0
    return min(
        point_segment_distance(*a1, *b1, *b2),
        point_segment_distance(*a2, *b1, *b2),
        point_segment_distance(*b1, *a1, *a2),
        point_segment_distance(*b2, *a1, *a2),
    )


@dataclass
class OccupancyGrid:
    origin_x: float
    origin_y: float
    resolution: float
    blocked: np.ndarray  # bool, indexed [ix, iy]

    @classmethod
    def from_scene(cls, scene, resolution: float = 0.1, inflation: float = 0.18) -> "OccupancyGrid":
        xmin, ymin, xmax, ymax = scene.bounds
        nx = max(1, int(math.ceil((xmax - xmin) / resolution)))
        ny = max(1, int(math.ceil((ymax - ymin) / resolution)))
        cx = xmin + (np.arange(nx) + 0.5) * resolution
        cy = ymin + (np.arange(ny) + 0.5) * resolution
        X, Y = np.meshgrid(cx, cy, indexing="ij")
        margin = inflation + resolution * SQRT2 / 2.0
        blocked = np.zeros((nx, ny), dtype=bool)
        for x1, y1, x2, y2 in scene.walls:
            dx, dy = x2 - x1, y2 - y1
            L2 = dx * dx + dy * dy
            if L2 == 0.0:
                d = np.hypot(X - x1, Y - y1)
            else:
                t = np.clip(((X - x1) * dx + (Y - y1) * dy) / L2, 0.0, 1.0)
                d = np.hypot(X - (x1 + t * dx), Y - (y1 + t * dy))
            blocked |= d <= margin
        return cls(xmin, ymin, resolution, blocked)

    def to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin_x) / self.resolution)),
            int(math.floor((y - self.origin_y) / self.resolution)),
        )

    def to_world(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin_x + (ix + 0.5) * self.resolution,
            self.origin_y + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.blocked.shape[0] and 0 <= iy < self.blocked.shape[1]

    def free(self, ix: int, iy: int) -> bool:
        return self.in_bounds(ix, iy) and not self.blocked[ix, iy]

    def nearest_free(self, x: float, y: float, max_radius: float = 1.5) -> tuple[float, float] | None:
        """Closest free cell center to (x, y), searched in growing rings."""
        ix0, iy0 = self.to_cell(x, y)
        if self.free(ix0, iy0):
            return self.to_world(ix0, iy0)
        rmax = int(math.ceil(max_radius / self.resolution))
        best = None
        best_d = float("inf")
        for r in range(1, rmax + 1):
            for ix in range(ix0 - r, ix0 + r + 1):
                for iy in range(iy0 - r, iy0 + r + 1):
                    if max(abs(ix - ix0), abs(iy - iy0)) != r or not self.free(ix, iy):
                        continue
                    wx, wy = self.to_world(ix, iy)
                    d = math.hypot(wx - x, wy - y)
                    if d < best_d:
                        best, best_d = (wx, wy), d
            if best is not None:
                return best
        return None


def astar(grid: OccupancyGrid, start_xy, goal_xy, snap_radius: float = 0.5):
    """Cell-center path from start to goal, or None when unreachable.

    Blocked endpoints are snapped to the nearest free cell within snap_radius.
    Ties in the open set break on cell index, keeping expansions deterministic.
    """
    snapped = []
    for x, y in (start_xy, goal_xy):
        cell = grid.to_cell(x, y)
        if not grid.free(*cell):
            near = grid.nearest_free(x, y, snap_radius)
            if near is None:
                return None
            cell = grid.to_cell(*near)
        snapped.append(cell)
    start, goal = snapped
    if start == goal:
        return [grid.to_world(*goal)]

    def h(c):
        dx, dy = abs(c[0] - goal[0]), abs(c[1] - goal[1])
        return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)

    g = {start: 0.0}
    came: dict = {start: None}
    open_heap = [(h(start), start)]
    closed = set()
    while open_heap:
        _, cur = heapq.heappop(open_heap)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(grid.to_world(*cur))
                cur = came[cur]
            path.reverse()
            return path
        closed.add(cur)
        for dx, dy, w in _NEIGHBORS:
            nxt = (cur[0] + dx, cur[1] + dy)
            if not grid.free(*nxt):
                continue
            # no corner cutting on diagonal moves
            if dx and dy and not (grid.free(cur[0] + dx, cur[1]) and grid.free(cur[0], cur[1] + dy)):
                continue
            ng = g[cur] + w
            if ng < g.get(nxt, float("inf")) - 1e-12:
                g[nxt] = ng
                came[nxt] = cur
                heapq.heappush(open_heap, (ng + h(nxt), nxt))
    return None


def line_of_sight(scene, a, b, clearance: float = 0.18) -> bool:
    """True when the straight segment a-b keeps `clearance` from every wall."""
    for x1, y1, x2, y2 in scene.walls:
        if segment_segment_distance(a, b, (x1, y1), (x2, y2)) <= clearance:
            return False
    return True
