import math

import numpy as np
import pytest

from priornav.geometry import Point2
from priornav.grid import (
    OccupancyGrid,
    astar,
    line_of_sight,
    point_segment_distance,
    segment_segment_distance,
    segments_intersect,
)
from priornav.simulator import Scene, SceneLandmark


def box_scene(walls=(), size=10.0):
    boundary = (
        (0.0, 0.0, size, 0.0),
        (size, 0.0, size, size),
        (size, size, 0.0, size),
        (0.0, size, 0.0, 0.0),
    )
    return Scene(landmarks=(), walls=boundary + tuple(walls), bounds=(0, 0, size, size))


class TestSegmentMath:
    def test_point_segment_distance(self):
        assert point_segment_distance(0, 1, -1, 0, 1, 0) == pytest.approx(1.0)
        assert point_segment_distance(3, 0, -1, 0, 1, 0) == pytest.approx(2.0)
        assert point_segment_distance(0, 0, 5, 5, 5, 5) == pytest.approx(math.hypot(5, 5))

    def test_segments_intersect(self):
        assert segments_intersect((0, -1), (0, 1), (-1, 0), (1, 0))
        assert not segments_intersect((0, 0), (1, 0), (0, 1), (1, 1))
        assert segments_intersect((0, 0), (2, 0), (1, 0), (3, 0))  # collinear overlap
        assert segments_intersect((0, 0), (1, 0), (1, 0), (1, 1))  # shared endpoint
        assert not segments_intersect((0, 0), (1, 0), (2, 0), (3, 0))  # collinear gap

    def test_segment_segment_distance(self):
        assert segment_segment_distance((0, 0), (1, 0), (0, 1), (1, 1)) == pytest.approx(1.0)
        assert segment_segment_distance((0, -1), (0, 1), (-1, 0), (1, 0)) == 0.0
        assert segment_segment_distance((0, 0), (1, 0), (3, 0), (4, 0)) == pytest.approx(2.0)


class TestOccupancyGrid:
    def test_wall_cells_blocked_far_cells_free(self):
        scene = box_scene([(5.0, 2.0, 5.0, 8.0)])
        g = OccupancyGrid.from_scene(scene)
        assert not g.free(*g.to_cell(5.0, 5.0))
        assert g.free(*g.to_cell(3.0, 5.0))
        assert g.free(*g.to_cell(7.0, 5.0))
        # boundary walls blocked too
        assert not g.free(*g.to_cell(0.05, 5.0))

    def test_cell_world_round_trip(self):
        g = OccupancyGrid.from_scene(box_scene())
        ix, iy = g.to_cell(3.14, 2.71)
        wx, wy = g.to_world(ix, iy)
        assert abs(wx - 3.14) <= g.resolution
        assert abs(wy - 2.71) <= g.resolution
        assert g.to_cell(wx, wy) == (ix, iy)

    def test_nearest_free_projects_out_of_walls(self):
        scene = box_scene([(5.0, 2.0, 5.0, 8.0)])
        g = OccupancyGrid.from_scene(scene)
        got = g.nearest_free(5.0, 5.0)
        assert got is not None
        assert g.free(*g.to_cell(*got))
        assert math.hypot(got[0] - 5.0, got[1] - 5.0) < 0.6

    def test_nearest_free_identity_on_free_point(self):
        g = OccupancyGrid.from_scene(box_scene())
        got = g.nearest_free(3.0, 3.0)
        assert got == g.to_world(*g.to_cell(3.0, 3.0))


class TestAstar:
    def test_straight_path_in_open_space(self):
        g = OccupancyGrid.from_scene(box_scene())
        path = astar(g, (2.0, 5.0), (6.0, 5.0))
        assert path is not None
        length = sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(path, path[1:]))
        assert length == pytest.approx(4.0, abs=0.3)
        for a, b in zip(path, path[1:]):
            assert math.hypot(b[0] - a[0], b[1] - a[1]) <= g.resolution * math.sqrt(2) + 1e-9

    def test_path_respects_walls(self):
        scene = box_scene([(5.0, 2.0, 5.0, 8.0)])
        g = OccupancyGrid.from_scene(scene)
        path = astar(g, (3.0, 5.0), (7.0, 5.0))
        assert path is not None
        for ix_iy in path:
            assert g.free(*g.to_cell(*ix_iy))
        # the detour must be longer than the straight line
        length = sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(path, path[1:]))
        assert length > 4.5

    def test_unreachable_returns_none(self):
        # a sealed box around the goal
        scene = box_scene([
            (6.0, 4.0, 8.0, 4.0), (8.0, 4.0, 8.0, 6.0),
            (8.0, 6.0, 6.0, 6.0), (6.0, 6.0, 6.0, 4.0),
        ])
        g = OccupancyGrid.from_scene(scene)
        assert astar(g, (2.0, 5.0), (7.0, 5.0)) is None

    def test_blocked_start_snaps_to_free(self):
        scene = box_scene([(5.0, 2.0, 5.0, 8.0)])
        g = OccupancyGrid.from_scene(scene)
        path = astar(g, (5.0, 5.0), (2.0, 5.0))
        assert path is not None
        assert g.free(*g.to_cell(*path[0]))

    def test_deterministic(self):
        scene = box_scene([(5.0, 2.0, 5.0, 8.0), (3.0, 6.0, 6.0, 6.0)])
        g = OccupancyGrid.from_scene(scene)
        p1 = astar(g, (2.0, 3.0), (8.0, 8.0))
        p2 = astar(g, (2.0, 3.0), (8.0, 8.0))
        assert p1 == p2


class TestLineOfSight:
    def test_clear_and_blocked(self):
        scene = box_scene([(5.0, 2.0, 5.0, 8.0)])
        assert line_of_sight(scene, (2.0, 1.0), (8.0, 1.0))
        assert not line_of_sight(scene, (3.0, 5.0), (7.0, 5.0))
        # near miss within clearance also counts as blocked
        assert not line_of_sight(scene, (3.0, 8.1), (7.0, 8.1), clearance=0.18)
