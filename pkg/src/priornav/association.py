"""Landmark data association by text-embedding cosine similarity.

A detection's label embedding is compared against the labels of candidate
inferred landmarks; the argmax wins if its cosine clears the threshold,
otherwise the detection stays unassociated.  Matches become pose-to-point
factors on the runtime graph with range-proportional isotropic noise.

The bundled provider hashes character trigrams into a fixed number of
buckets (crc32, not Python's salted hash) so embeddings are stable across
processes; a CLIP-style service can be dropped in through the same
``embed(label)`` interface, locally or via the HTTP client below.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .factor_graph import FactorGraph, GraphStructureError, Namespace, PoseToPoint, VariableId, pose_var
from .geometry import Point2, Pose2, transform_from, wrap_angle
from .inferred_graph import InferredGraph


class HashedNgramProvider:
    """Deterministic unit-norm label embeddings from character trigrams."""

    def __init__(self, dimension: int = 256):
        if dimension < 64:
            raise ValueError(f"dimension must be >= 64, got {dimension}")
        self.dimension = dimension

    def embed(self, label: str) -> np.ndarray:
        text = label.strip().lower()
        if not text:
            raise ValueError("cannot embed an empty label")
        padded = f" {text} "
        vec = np.zeros(self.dimension)
        for i in range(len(padded) - 2):
            bucket = zlib.crc32(padded[i:i + 3].encode("utf-8")) % self.dimension
            vec[bucket] += 1.0
        return vec / np.linalg.norm(vec)


def hashed_ngram_provider(dimension: int = 256) -> HashedNgramProvider:
    return HashedNgramProvider(dimension)


class RemoteEmbeddingError(RuntimeError):
    """The embedding endpoint failed or replied with a non-vector."""


@dataclass
class RemoteEmbeddingProvider:
    """HTTP provider: POST {"label": ...}, reply {"embedding": [floats]}.

    Config mirrors the decomposer client; replies are L2-normalized here so
    the unit-norm contract holds regardless of the service.
    """

    endpoint_url: str
    api_key_env: str | None = None
    timeout_s: float = 30.0

    def embed(self, label: str) -> np.ndarray:
        import os

        import requests

        if not label.strip():
            raise ValueError("cannot embed an empty label")
        headers = {}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(self.endpoint_url, json={"label": label}, headers=headers, timeout=self.timeout_s)
            resp.raise_for_status()
            data = resp.json()
        except requests.RequestException as e:
            raise RemoteEmbeddingError(f"embedding request failed: {e}") from e
        except ValueError as e:
            raise RemoteEmbeddingError(f"embedding reply is not JSON: {e}") from e
        vec = np.asarray(data.get("embedding") if isinstance(data, dict) else None, dtype=float)
        if vec.ndim != 1 or vec.size == 0 or not np.all(np.isfinite(vec)):
            raise RemoteEmbeddingError("embedding reply must carry a finite float vector")
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise RemoteEmbeddingError("embedding reply is a zero vector")
        return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class Detection:
    label: str
    embedding: np.ndarray
    range_m: float
    bearing: float
    pose_index: int
    true_landmark_id: int | None = None

    def __post_init__(self):
        if self.range_m < 0:
            raise ValueError(f"range must be non-negative, got {self.range_m}")
        object.__setattr__(self, "bearing", wrap_angle(self.bearing))

    def local_offset(self) -> Point2:
        return Point2(self.range_m * math.cos(self.bearing), self.range_m * math.sin(self.bearing))


class GatingMode(str, Enum):
    ALL = "ALL"
    SEQUENTIAL = "SEQUENTIAL"


@dataclass
class AssociationConfig:
    threshold: float = 0.8
    gating: GatingMode = GatingMode.ALL
    reobservation_radius_m: float = 1.5


@dataclass
class AssociationDecision:
    detection: Detection
    matched: VariableId | None
    similarity: float
    matched_landmark_index: int | None = None


def _candidate_indices(
    ig: InferredGraph,
    detection: Detection,
    cfg: AssociationConfig,
    robot_pose: Pose2 | None,
    values,
    current_waypoint: int | None,
) -> list[int]:
    n_landmarks = len(ig.landmark_vars)
    if cfg.gating is GatingMode.SEQUENTIAL:
        if current_waypoint is None:
            raise ValueError("sequential gating needs the current waypoint index")
        active = {current_waypoint, current_waypoint + 1}
        return sorted(ig.landmarks_related_to(active))
    world = None
    if robot_pose is not None:
        world = transform_from(robot_pose, detection.local_offset())
    out = []
    for j in range(n_landmarks):
        if not ig.grounded[j]:
            out.append(j)
            continue
        # grounded landmarks stay eligible only as re-observations nearby
        if world is None or values is None:
            continue
        est = values.get(ig.landmark_vars[j][0])
        if math.hypot(est.x - world.x, est.y - world.y) <= cfg.reobservation_radius_m:
            out.append(j)
    return out


def associate(
    detection: Detection,
    ig: InferredGraph,
    provider,
    cfg: AssociationConfig | None = None,
    *,
    robot_pose: Pose2 | None = None,
    values=None,
    current_waypoint: int | None = None,
) -> AssociationDecision:
    """Pick the best-matching inferred landmark for one detection.

    Ties go to the lower landmark index; a best similarity below the
    threshold (or an empty candidate set) is a no-match, not an error.
    """
    cfg = cfg or AssociationConfig()
    best_j = None
    best_sim = -1.0
    for j in _candidate_indices(ig, detection, cfg, robot_pose, values, current_waypoint):
        sim = cosine(detection.embedding, provider.embed(ig.landmark_vars[j][1]))
        if sim > best_sim:
            best_j, best_sim = j, sim
    if best_j is None:
        return AssociationDecision(detection, None, -1.0)
    if best_sim < cfg.threshold:
        return AssociationDecision(detection, None, best_sim)
    return AssociationDecision(detection, ig.landmark_vars[best_j][0], best_sim, best_j)


def resolve_conflicts(decisions: list[AssociationDecision]) -> list[AssociationDecision]:
    """Demote all but the highest-similarity match per landmark to no-match."""
    best: dict[VariableId, AssociationDecision] = {}
    for d in decisions:
        if d.matched is None:
            continue
        cur = best.get(d.matched)
        if cur is None or d.similarity > cur.similarity:
            best[d.matched] = d
    out = []
    for d in decisions:
        if d.matched is not None and best[d.matched] is not d:
            out.append(AssociationDecision(d.detection, None, d.similarity))
        else:
            out.append(d)
    return out


def default_observation_covariance(range_m: float) -> np.ndarray:
    """Isotropic sensor noise growing with range: sigma = 0.1 + 0.05 * range."""
    sigma = 0.1 + 0.05 * range_m
    return np.diag([sigma * sigma, sigma * sigma])


def inject_observation(
    graph: FactorGraph,
    ig: InferredGraph,
    decision: AssociationDecision,
    covariance: np.ndarray | None = None,
) -> PoseToPoint:
    """Add the pose-to-point observation factor for a matched detection."""
    if decision.matched is None:
        raise GraphStructureError("cannot inject an unmatched detection")
    det = decision.detection
    pose_id = pose_var(Namespace.ROBOT_POSE, det.pose_index)
    if pose_id not in graph:
        raise GraphStructureError(f"observation references unknown pose {pose_id}")
    if decision.matched not in graph:
        raise GraphStructureError(f"observation references unknown landmark {decision.matched}")
    cov = covariance if covariance is not None else default_observation_covariance(det.range_m)
    factor = PoseToPoint(pose_id, decision.matched, det.local_offset(), cov)
    graph.add_factor(factor)
    if decision.matched_landmark_index is not None:
        ig.grounded[decision.matched_landmark_index] = True
    return factor
