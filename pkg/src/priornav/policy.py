"""Waypoint selection, posterior target sampling, and the local controller.

Selection scores each unvisited waypoint by squared distance to the robot
plus alpha times the trace of its information matrix, taking the argmin
(ties to the lower index).  A navigation point is sampled from the chosen
waypoint's position posterior, rejected into free space, and steered to by
turn/forward actions along a line-of-sight ray or an A* route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import Point2, Pose2, wrap_angle
from .grid import OccupancyGrid, astar, line_of_sight
from .simulator import AGENT_RADIUS, STEP_LENGTH, TURN_ANGLE, AgentAction


class CandidateMode(str, Enum):
    UNVISITED_ALL = "UNVISITED_ALL"
    NEXT_ONLY = "NEXT_ONLY"


class UncertaintySign(str, Enum):
    # literal selection term: alpha * trace(information)
    INFORMATION = "INFORMATION"
    # alternative reading: alpha * trace(covariance)
    COVARIANCE = "COVARIANCE"


@dataclass
class PolicyConfig:
    alpha: float = 0.1
    transition_radius: float = 0.5
    resample_interval: int = 25
    # re-draw when the active waypoint's posterior spread collapses below
    # this fraction of its spread at sampling time; 0 disables
    stale_shrink_ratio: float = 0.5
    # re-draw once the robot has backed off this far from its closest
    # approach to the active waypoint estimate; 0 disables
    retreat_margin: float = 0.3
    # inside this distance of the waypoint estimate the sample has done its
    # job and the controller heads for the estimate itself; 0 disables
    approach_radius: float = 1.5
    max_sample_attempts: int = 50
    candidate_mode: CandidateMode = CandidateMode.UNVISITED_ALL
    uncertainty_sign: UncertaintySign = UncertaintySign.INFORMATION

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.transition_radius <= 0:
            raise ValueError(f"transition_radius must be > 0, got {self.transition_radius}")
        if not 0.0 <= self.stale_shrink_ratio <= 1.0:
            raise ValueError(f"stale_shrink_ratio must be in [0,1], got {self.stale_shrink_ratio}")
        if self.retreat_margin < 0:
            raise ValueError(f"retreat_margin must be >= 0, got {self.retreat_margin}")
        if self.approach_radius < 0:
            raise ValueError(f"approach_radius must be >= 0, got {self.approach_radius}")


@dataclass
class PolicyState:
    visited: list[bool]
    active_target: tuple[int, Point2] | None = None
    steps_since_sample: int = 0
    anchor_estimate: Point2 | None = None  # target's MAP position when sampled
    anchor_trace: float | None = None  # target's sigma trace when sampled
    closest_approach: float | None = None  # min distance to the target estimate
    stop_emitted: bool = False
    unreachable_count: int = 0


def initial_policy_state(n_waypoints: int) -> PolicyState:
    # the start waypoint is where the robot already stands
    visited = [False] * n_waypoints
    visited[0] = True
    return PolicyState(visited=visited)


def _position_trace(matrix) -> float:
    m = np.asarray(matrix)
    return float(m[0, 0] + m[1, 1])


def _trace_term(snapshot, j: int, cfg: PolicyConfig) -> float:
    # position block only: the distance term is positional, and heading
    # information is in incommensurate units
    if cfg.uncertainty_sign is UncertaintySign.COVARIANCE:
        return _position_trace(snapshot.waypoint_covariances[j])
    return _position_trace(snapshot.waypoint_informations[j])


def select_waypoint(snapshot, ps: PolicyState, cfg: PolicyConfig) -> int | None:
    """Best unvisited waypoint index per the selection rule; None if all visited."""
    unvisited = [j for j, v in enumerate(ps.visited) if not v]
    if not unvisited:
        return None
    if cfg.candidate_mode is CandidateMode.NEXT_ONLY:
        return unvisited[0]
    rx, ry = snapshot.robot.x, snapshot.robot.y
    best = None
    best_cost = math.inf
    for j in unvisited:
        w = snapshot.waypoints[j]
        dx, dy = w.x - rx, w.y - ry
        cost = dx * dx + dy * dy + cfg.alpha * _trace_term(snapshot, j, cfg)
        if cost < best_cost:
            best, best_cost = j, cost
    return best


def _free_point(p: Point2, grid: OccupancyGrid) -> Point2:
    """p itself when navigable, else the nearest free cell center."""
    if grid.free(*grid.to_cell(p.x, p.y)):
        return p
    near = grid.nearest_free(p.x, p.y, max_radius=3.0)
    if near is None:
        return p
    return Point2(near[0], near[1])


def sample_target(
    mean: Point2,
    covariance: np.ndarray,
    grid: OccupancyGrid,
    cfg: PolicyConfig,
    rng: np.random.Generator,
) -> Point2:
    """Draw from the 2D position posterior, rejected into free space.

    When every attempt lands in a wall (or out of bounds), falls back to the
    mean projected to the nearest free cell center.
    """
    cov = np.asarray(covariance, float)[:2, :2]
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(2))
    for _ in range(max(1, cfg.max_sample_attempts)):
        s = np.array([mean.x, mean.y]) + L @ rng.standard_normal(2)
        if grid.free(*grid.to_cell(s[0], s[1])):
            return Point2(float(s[0]), float(s[1]))
    return _free_point(Point2(mean.x, mean.y), grid)


def _aim_point(robot: Pose2, target: Point2, scene, grid: OccupancyGrid):
    """Next point to steer at, or None when no route exists."""
    if line_of_sight(scene, (robot.x, robot.y), (target.x, target.y), AGENT_RADIUS):
        return target
    path = astar(grid, (robot.x, robot.y), (target.x, target.y))
    if path is None:
        return None
    # skip past the cells underfoot so the heading is meaningful
    acc = 0.0
    prev = (robot.x, robot.y)
    for p in path:
        acc += math.hypot(p[0] - prev[0], p[1] - prev[1])
        prev = p
        if acc > STEP_LENGTH:
            return Point2(p[0], p[1])
    return Point2(path[-1][0], path[-1][1])


def act(robot: Pose2, target: Point2, scene, grid: OccupancyGrid) -> tuple[AgentAction, bool]:
    """(action, unreachable): turn toward the route if misaligned, else advance."""
    aim = _aim_point(robot, target, scene, grid)
    if aim is None:
        return AgentAction.TURN_LEFT, True
    if math.hypot(aim.x - robot.x, aim.y - robot.y) < 1e-9:
        return AgentAction.FORWARD, False
    err = wrap_angle(math.atan2(aim.y - robot.y, aim.x - robot.x) - robot.theta)
    if abs(err) > TURN_ANGLE / 2.0:
        return (AgentAction.TURN_LEFT if err > 0 else AgentAction.TURN_RIGHT), False
    return AgentAction.FORWARD, False


def policy_step(
    snapshot,
    ps: PolicyState,
    scene,
    grid: OccupancyGrid,
    cfg: PolicyConfig,
    rng: np.random.Generator,
) -> tuple[AgentAction, PolicyState]:
    """One decision: transition bookkeeping, (re)selection, then steering."""
    if ps.stop_emitted:
        return AgentAction.STOP, ps
    last = len(ps.visited) - 1
    robot = snapshot.robot

    if ps.active_target is not None:
        j, _ = ps.active_target
        w = snapshot.waypoints[j]
        if math.hypot(w.x - robot.x, w.y - robot.y) <= cfg.transition_radius:
            ps.visited[j] = True
            ps.active_target = None
            ps.anchor_estimate = None
            ps.anchor_trace = None
            ps.closest_approach = None
            if j == last:
                ps.stop_emitted = True
                return AgentAction.STOP, ps

    needs_selection = ps.active_target is None
    if not needs_selection and ps.steps_since_sample >= cfg.resample_interval:
        needs_selection = True
    if not needs_selection and ps.anchor_estimate is not None:
        j, _ = ps.active_target
        w = snapshot.waypoints[j]
        if math.hypot(w.x - ps.anchor_estimate.x, w.y - ps.anchor_estimate.y) > 0.5:
            needs_selection = True
    if not needs_selection and ps.anchor_trace is not None:
        # the sample is stale once the posterior it came from has collapsed
        j, _ = ps.active_target
        if _position_trace(snapshot.waypoint_covariances[j]) < cfg.stale_shrink_ratio * ps.anchor_trace:
            needs_selection = True
    if not needs_selection and cfg.approach_radius > 0 and ps.active_target is not None:
        # endgame: within reach of the estimate the transition is what
        # matters, so head for the estimate rather than the sample
        j, t = ps.active_target
        w = snapshot.waypoints[j]
        if (
            math.hypot(w.x - robot.x, w.y - robot.y) <= cfg.approach_radius
            and math.hypot(t.x - w.x, t.y - w.y) > 1e-9
        ):
            ps.active_target = (j, _free_point(Point2(w.x, w.y), grid))
    if not needs_selection and cfg.retreat_margin > 0 and ps.active_target is not None:
        # the draw leads away from the waypoint itself: once the robot has
        # backed off from its closest approach to the estimate, stop chasing
        # the sample and aim at the estimate (where the transition fires)
        j, t = ps.active_target
        w = snapshot.waypoints[j]
        d = math.hypot(w.x - robot.x, w.y - robot.y)
        if ps.closest_approach is None or d < ps.closest_approach:
            ps.closest_approach = d
        elif d > ps.closest_approach + cfg.retreat_margin and math.hypot(t.x - w.x, t.y - w.y) > 1e-9:
            ps.active_target = (j, _free_point(Point2(w.x, w.y), grid))
            ps.closest_approach = d
    if not needs_selection:
        # standing on the sample with the waypoint still unreached: the
        # draw missed, aim at the estimate itself instead of orbiting
        j, t = ps.active_target
        w = snapshot.waypoints[j]
        if (
            math.hypot(t.x - robot.x, t.y - robot.y) <= cfg.transition_radius
            and math.hypot(t.x - w.x, t.y - w.y) > 1e-9
        ):
            fallback = _free_point(Point2(w.x, w.y), grid)
            ps.active_target = (j, fallback)

    if needs_selection:
        j = select_waypoint(snapshot, ps, cfg)
        if j is None:
            ps.stop_emitted = True
            return AgentAction.STOP, ps
        w = snapshot.waypoints[j]
        target = sample_target(
            Point2(w.x, w.y), snapshot.waypoint_covariances[j], grid, cfg, rng
        )
        ps.active_target = (j, target)
        ps.anchor_estimate = Point2(w.x, w.y)
        ps.anchor_trace = _position_trace(snapshot.waypoint_covariances[j])
        ps.closest_approach = math.hypot(w.x - robot.x, w.y - robot.y)
        ps.steps_since_sample = 0
        # a freshly selected final waypoint may already be underfoot
        if j == last and math.hypot(w.x - robot.x, w.y - robot.y) <= cfg.transition_radius:
            ps.visited[j] = True
            ps.stop_emitted = True
            return AgentAction.STOP, ps

    ps.steps_since_sample += 1
    action, unreachable = act(robot, ps.active_target[1], scene, grid)
    if unreachable:
        ps.unreachable_count += 1
    return action, ps


def oracle_advance(
    pose: Pose2,
    target: Point2,
    scene,
    grid: OccupancyGrid,
    step_len: float = STEP_LENGTH,
) -> tuple[Pose2, bool]:
    """Perfect-navigator motion: the next true pose step_len along the route."""
    if line_of_sight(scene, (pose.x, pose.y), (target.x, target.y), AGENT_RADIUS):
        path = [(pose.x, pose.y), (target.x, target.y)]
    else:
        route = astar(grid, (pose.x, pose.y), (target.x, target.y))
        if route is None:
            return pose, True
        path = [(pose.x, pose.y)] + route
    remaining = step_len
    heading = pose.theta
    cur = path[0]
    for nxt in path[1:]:
        seg = math.hypot(nxt[0] - cur[0], nxt[1] - cur[1])
        if seg < 1e-12:
            cur = nxt
            continue
        heading = math.atan2(nxt[1] - cur[1], nxt[0] - cur[0])
        if seg >= remaining:
            t = remaining / seg
            return Pose2(cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1]), heading), False
        remaining -= seg
        cur = nxt
    return Pose2(cur[0], cur[1], heading), False
