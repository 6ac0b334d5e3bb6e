"""SVG trajectory rendering.

One self-contained SVG per episode: the scene (walls, landmarks), the
reference path in green, the executed path in blue, the goal in red, and
the final waypoint estimates with 1-sigma covariance ellipses.  Output is
deterministic: fixed float formatting, fixed element order.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .simulator import Scene

_PAD = 0.5
_REFERENCE_COLOR = "#2e8b57"
_AGENT_COLOR = "#1f5fbf"
_LANDMARK_COLOR = "#1f77b4"
_GOAL_COLOR = "#d62728"
_WAYPOINT_COLOR = "#e6a817"
_WALL_COLOR = "#333333"


def _f(value: float) -> str:
    out = f"{value:.4f}".rstrip("0").rstrip(".")
    return "0" if out == "-0" else out


def covariance_ellipse(cov) -> tuple[float, float, float]:
    """1-sigma ellipse of a 2x2 covariance: (major, minor, angle_deg).

    Semi-axis lengths are the square roots of the eigenvalues; the angle
    is the major axis direction, normalized to [-90, 90) degrees.
    """
    c = np.asarray(cov, float)
    if c.shape != (2, 2):
        raise ValueError(f"expected a 2x2 covariance, got shape {c.shape}")
    vals, vecs = np.linalg.eigh(c)
    vals = np.clip(vals, 0.0, None)
    major, minor = math.sqrt(vals[1]), math.sqrt(vals[0])
    vx, vy = vecs[0, 1], vecs[1, 1]
    angle = math.degrees(math.atan2(vy, vx))
    if angle >= 90.0:
        angle -= 180.0
    elif angle < -90.0:
        angle += 180.0
    return major, minor, angle


def _polyline(points, color, width, dash=None) -> str:
    pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<polyline points="{pts}" fill="none" stroke="{color}" '
        f'stroke-width="{_f(width)}" stroke-linejoin="round"{extra}/>'
    )


def emit_trajectory_svg(result, scene: Scene, records, path=None, *, episode=None) -> str:
    """Render one episode to an SVG string; optionally write it to path.

    result carries the executed path, records is the per-step log (the
    last entry's estimates are drawn), and episode supplies the reference
    path and goal when given.  An empty log renders the scene alone.
    """
    xmin, ymin, xmax, ymax = scene.bounds
    x0, y0 = xmin - _PAD, ymin - _PAD
    w, h = (xmax - xmin) + 2 * _PAD, (ymax - ymin) + 2 * _PAD

    def fy(y: float) -> float:
        # SVG y grows downward
        return (ymax + ymin) - y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_f(x0)} {_f(fy(ymax) - _PAD)} {_f(w)} {_f(h)}" '
        f'width="640" height="{_f(640 * h / w)}">',
        f'<rect x="{_f(xmin)}" y="{_f(fy(ymax))}" width="{_f(xmax - xmin)}" '
        f'height="{_f(ymax - ymin)}" fill="#fafafa" stroke="{_WALL_COLOR}" stroke-width="0.06"/>',
    ]
    for wx1, wy1, wx2, wy2 in scene.walls:
        parts.append(
            f'<line x1="{_f(wx1)}" y1="{_f(fy(wy1))}" x2="{_f(wx2)}" y2="{_f(fy(wy2))}" '
            f'stroke="{_WALL_COLOR}" stroke-width="0.08" stroke-linecap="round"/>'
        )
    for lm in scene.landmarks:
        parts.append(
            f'<circle cx="{_f(lm.position.x)}" cy="{_f(fy(lm.position.y))}" r="0.12" '
            f'fill="{_LANDMARK_COLOR}"/>'
        )
        parts.append(
            f'<text x="{_f(lm.position.x + 0.18)}" y="{_f(fy(lm.position.y) + 0.08)}" '
            f'font-size="0.26" font-family="sans-serif" fill="{_LANDMARK_COLOR}">{lm.label}</text>'
        )

    reference = getattr(episode, "reference_path", None)
    if reference:
        parts.append(_polyline([(p.x, fy(p.y)) for p in reference], _REFERENCE_COLOR, 0.06, dash="0.2,0.12"))

    goal = getattr(episode, "goal", None)
    if goal is not None:
        parts.append(
            f'<circle cx="{_f(goal.x)}" cy="{_f(fy(goal.y))}" r="0.16" fill="none" '
            f'stroke="{_GOAL_COLOR}" stroke-width="0.06"/>'
        )
        parts.append(
            f'<circle cx="{_f(goal.x)}" cy="{_f(fy(goal.y))}" r="0.05" fill="{_GOAL_COLOR}"/>'
        )

    if isinstance(result, dict):
        agent = list(result.get("agent_path") or ())
    else:
        agent = list(getattr(result, "agent_path", ()) or ())
    if len(agent) >= 2:
        parts.append(_polyline([(x, fy(y)) for x, y in agent], _AGENT_COLOR, 0.05))
    if agent:
        sx, sy = agent[0]
        ex, ey = agent[-1]
        parts.append(f'<circle cx="{_f(sx)}" cy="{_f(fy(sy))}" r="0.1" fill="{_AGENT_COLOR}"/>')
        parts.append(
            f'<circle cx="{_f(ex)}" cy="{_f(fy(ey))}" r="0.1" fill="none" '
            f'stroke="{_AGENT_COLOR}" stroke-width="0.05"/>'
        )

    if records:
        est = records[-1]["estimates"]
        means = est["waypoints"]
        packed = est.get("waypoint_position_covariances")
        for i, mean in enumerate(means):
            mx, my = mean[0], mean[1]
            if packed is not None:
                xx, xy, yy = packed[i]
                major, minor, angle = covariance_ellipse([[xx, xy], [xy, yy]])
                # the y flip mirrors the rotation sense
                parts.append(
                    f'<ellipse cx="0" cy="0" rx="{_f(major)}" ry="{_f(minor)}" '
                    f'fill="{_WAYPOINT_COLOR}" fill-opacity="0.15" stroke="{_WAYPOINT_COLOR}" '
                    f'stroke-width="0.03" '
                    f'transform="translate({_f(mx)},{_f(fy(my))}) rotate({_f(-angle)})"/>'
                )
            parts.append(
                f'<circle cx="{_f(mx)}" cy="{_f(fy(my))}" r="0.09" fill="{_WAYPOINT_COLOR}" '
                f'stroke="#8a6508" stroke-width="0.02"/>'
            )
            parts.append(
                f'<text x="{_f(mx + 0.14)}" y="{_f(fy(my) - 0.12)}" font-size="0.24" '
                f'font-family="sans-serif" fill="#8a6508">w{i + 1}</text>'
            )

    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(svg)
    return svg
