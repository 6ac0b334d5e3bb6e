"""Navigation success metrics: SR, OSR, SPL, and nDTW.

All metrics are computed on ground-truth positions; the agent itself never
sees them.  Paths are arrays of (x, y) rows or sequences convertible to one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .kernels import dtw_accumulate


@dataclass(frozen=True)
class MetricsConfig:
    """Thresholds for success and path-similarity scoring.

    d_th is the nDTW distance scale; None means "use d_success".
    resample_spacing puts both paths on a common arc-length density
    before DTW, since planner references are sparse vertex lists while
    agent paths are dense per-step samples; None disables.
    """

    d_success: float = 1.0
    d_th: float | None = None
    resample_spacing: float | None = 0.25

    def __post_init__(self):
        if self.d_success <= 0:
            raise ValueError("d_success must be > 0")
        if self.d_th is not None and self.d_th <= 0:
            raise ValueError("d_th must be > 0")
        if self.resample_spacing is not None and self.resample_spacing <= 0:
            raise ValueError("resample_spacing must be > 0")

    @property
    def ndtw_scale(self) -> float:
        return self.d_success if self.d_th is None else self.d_th

    def to_json(self) -> dict:
        return {
            "d_success": self.d_success,
            "d_th": self.ndtw_scale,
            "resample_spacing": self.resample_spacing,
        }


class PathMetrics(NamedTuple):
    sr: float
    osr: float
    spl: float
    ndtw: float


def _as_points(path) -> np.ndarray:
    pts = [(p.x, p.y) if hasattr(p, "x") else (p[0], p[1]) for p in path]
    return np.asarray(pts, float).reshape(len(pts), 2)


def path_length(path) -> float:
    """Total arc length of a polyline; 0 for a single point."""
    pts = _as_points(path)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def dtw(a, b) -> float:
    """Dynamic-time-warping distance with Euclidean ground distance."""
    pa, pb = _as_points(a), _as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("DTW needs non-empty paths")
    return dtw_accumulate(pa, pb)


def resample_polyline(path, spacing) -> np.ndarray:
    """Points every `spacing` of arc length, endpoints kept, as (n, 2).

    Identical inputs produce bitwise-identical outputs; zero-length
    segments (duplicate vertices) do not affect the result.
    """
    pts = _as_points(path)
    if spacing is None or len(pts) < 2:
        return pts
    seg = np.diff(pts, axis=0)
    seglen = np.hypot(seg[:, 0], seg[:, 1])
    total = float(seglen.sum())
    if total <= 0.0:
        return pts[:1]
    t = np.append(np.arange(0.0, total, spacing), total)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    idx = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(seglen) - 1)
    denom = np.where(seglen[idx] > 0, seglen[idx], 1.0)
    frac = np.clip((t - cum[idx]) / denom, 0.0, 1.0)
    return pts[idx] + frac[:, None] * seg[idx]


def success_metrics(agent_path, stop_called, goal, reference_path, cfg=None) -> PathMetrics:
    """Score one episode.

    sr: stopped within d_success of the goal.  osr: ever within d_success.
    spl: sr scaled by reference length over max(reference, agent) length.
    ndtw: exp(-DTW / (|reference| * d_th)).
    """
    cfg = cfg or MetricsConfig()
    agent = _as_points(agent_path)
    reference = _as_points(reference_path)
    if len(agent) == 0:
        raise ValueError("agent path is empty")
    if len(reference) == 0:
        raise ValueError("reference path is empty")
    ref_len = path_length(reference)
    if ref_len <= 0.0:
        raise ValueError("reference path has zero length")

    gx = goal.x if hasattr(goal, "x") else goal[0]
    gy = goal.y if hasattr(goal, "y") else goal[1]
    dists = np.hypot(agent[:, 0] - gx, agent[:, 1] - gy)

    sr = 1.0 if (stop_called and dists[-1] <= cfg.d_success) else 0.0
    osr = 1.0 if np.any(dists <= cfg.d_success) else 0.0
    agent_len = path_length(agent)
    spl = sr * ref_len / max(ref_len, agent_len)
    da = resample_polyline(agent, cfg.resample_spacing)
    dr = resample_polyline(reference, cfg.resample_spacing)
    ndtw = math.exp(-dtw_accumulate(da, dr) / (len(dr) * cfg.ndtw_scale))
    return PathMetrics(sr=sr, osr=osr, spl=spl, ndtw=ndtw)
