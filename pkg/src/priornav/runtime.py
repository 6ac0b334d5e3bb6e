"""Per-episode estimation state: robot pose chain, language prior, observations.

The language-inferred subgraph is merged into a fresh graph rebased at the
episode start pose (an exact gauge shift, so its marginals are unchanged),
a tightly anchored robot pose x0 is added, and each step appends one pose
plus one odometry factor, runs association on the step's detections,
injects observation factors for the matches, and re-optimizes warm-started
from the previous estimate.  Graphs stay small, so every step is a full
batch re-solve rather than an incremental update.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .association import (
    AssociationConfig,
    AssociationDecision,
    Detection,
    associate,
    default_observation_covariance,
    hashed_ngram_provider,
    inject_observation,
    resolve_conflicts,
)
from .factor_graph import (
    BetweenPose,
    FactorGraph,
    IndeterminateSystemError,
    Kind,
    Namespace,
    PriorPose,
    SolverConfig,
    SolverReport,
    Values,
    VariableId,
    marginals,
    optimize,
    pose_var,
)
from .geometry import Point2, Pose2, compose, transform_from
from .inferred_graph import ANCHOR_COVARIANCE, InferredGraph

DEFAULT_ODOMETRY_COVARIANCE = np.diag([0.02 ** 2, 0.02 ** 2, 0.01 ** 2])
# oracle-navigator ablation: odometry treated as essentially exact
ORACLE_ODOMETRY_COVARIANCE = np.diag([1e-8, 1e-8, 1e-8])


@dataclass
class RuntimeConfig:
    odometry_covariance: np.ndarray = field(default_factory=lambda: DEFAULT_ODOMETRY_COVARIANCE.copy())
    association: AssociationConfig = field(default_factory=AssociationConfig)
    provider: object = field(default_factory=hashed_ngram_provider)
    solver: SolverConfig = field(default_factory=SolverConfig)


@dataclass
class RuntimeState:
    graph: FactorGraph
    ig: InferredGraph
    values: Values
    marginals: dict[VariableId, np.ndarray]
    current_pose_index: int
    step_count: int
    records: list[dict]
    failed_steps: list[int]
    last_report: SolverReport

    def robot_var(self) -> VariableId:
        return pose_var(Namespace.ROBOT_POSE, self.current_pose_index)


def init(ig: InferredGraph, start: Pose2, cfg: RuntimeConfig | None = None) -> RuntimeState:
    """Merge the inferred subgraph with an anchored pose chain and optimize once."""
    cfg = cfg or RuntimeConfig()
    g = FactorGraph()
    vals = Values()
    for vid in ig.graph.variables:
        g.add_variable(vid)
        v = ig.initial_values.get(vid)
        vals.set(vid, compose(start, v) if vid.kind is Kind.POSE else transform_from(start, v))
    for f in ig.graph.factors:
        if f is ig.anchor_factor:
            # rebase the gauge anchor so the whole prior rides on the start pose
            g.add_factor(PriorPose(f.var, compose(start, f.mean), f.covariance))
        else:
            g.add_factor(f)

    x0 = g.add_variable(pose_var(Namespace.ROBOT_POSE, 0))
    g.add_factor(PriorPose(x0, start, ANCHOR_COVARIANCE))
    vals.set(x0, start)

    solution, report = optimize(g, vals, cfg.solver)
    return RuntimeState(
        graph=g,
        ig=ig,
        values=solution,
        marginals=marginals(g, solution),
        current_pose_index=0,
        step_count=0,
        records=[],
        failed_steps=[],
        last_report=report,
    )


def step(
    state: RuntimeState,
    odometry: Pose2,
    detections: list[Detection],
    cfg: RuntimeConfig | None = None,
    *,
    current_waypoint: int | None = None,
    action: str | None = None,
) -> RuntimeState:
    """Advance one action: extend the chain, associate, inject, re-optimize.

    A step whose re-optimization fails keeps the dead-reckoned warm-start
    values, goes into failed_steps, and the episode continues.
    """
    cfg = cfg or RuntimeConfig()
    prev_var = state.robot_var()
    new_index = state.current_pose_index + 1
    new_var = state.graph.add_variable(pose_var(Namespace.ROBOT_POSE, new_index))
    state.graph.add_factor(BetweenPose(prev_var, new_var, odometry, cfg.odometry_covariance))

    warm = state.values.copy()
    guess = compose(warm.get(prev_var), odometry)
    warm.set(new_var, guess)

    decisions = []
    for d in detections:
        if d.embedding is None:
            d = replace(d, embedding=cfg.provider.embed(d.label))
        if d.pose_index != new_index:
            d = replace(d, pose_index=new_index)
        decisions.append(
            associate(
                d,
                state.ig,
                cfg.provider,
                cfg.association,
                robot_pose=guess,
                values=warm,
                current_waypoint=current_waypoint,
            )
        )
    decisions = resolve_conflicts(decisions)
    for dec in decisions:
        if dec.matched is not None:
            inject_observation(state.graph, state.ig, dec)

    failed = False
    report = None
    try:
        solution, report = optimize(state.graph, warm, cfg.solver)
        if report.converged:
            state.values = solution
        else:
            failed = True
            state.values = warm
    except (IndeterminateSystemError, np.linalg.LinAlgError):
        failed = True
        state.values = warm
        report = SolverReport(0, math.nan, math.nan, False, "error", math.nan)

    try:
        state.marginals = marginals(state.graph, state.values)
    except (IndeterminateSystemError, np.linalg.LinAlgError):
        pass  # keep the last good marginals rather than dropping the step

    state.current_pose_index = new_index
    state.step_count += 1
    state.last_report = report
    if failed:
        state.failed_steps.append(new_index)
    state.records.append(_record(state, action, odometry, decisions, report, failed))
    return state


def observe(
    state: RuntimeState,
    detections: list[Detection],
    cfg: RuntimeConfig | None = None,
    *,
    current_waypoint: int | None = None,
) -> RuntimeState:
    """Fold detections into the current pose without advancing the chain.

    Used at episode start: the sensor already sees the scene from the start
    pose before any action is taken, so that evidence should shape the very
    first target draw.
    """
    cfg = cfg or RuntimeConfig()
    here = state.values.get(state.robot_var())

    decisions = []
    for d in detections:
        if d.embedding is None:
            d = replace(d, embedding=cfg.provider.embed(d.label))
        if d.pose_index != state.current_pose_index:
            d = replace(d, pose_index=state.current_pose_index)
        decisions.append(
            associate(
                d,
                state.ig,
                cfg.provider,
                cfg.association,
                robot_pose=here,
                values=state.values,
                current_waypoint=current_waypoint,
            )
        )
    decisions = resolve_conflicts(decisions)
    injected = False
    for dec in decisions:
        if dec.matched is not None:
            inject_observation(state.graph, state.ig, dec)
            injected = True

    failed = False
    report = state.last_report
    if injected:
        warm = state.values.copy()
        try:
            solution, report = optimize(state.graph, warm, cfg.solver)
            if report.converged:
                state.values = solution
            else:
                failed = True
        except (IndeterminateSystemError, np.linalg.LinAlgError):
            failed = True
            report = SolverReport(0, math.nan, math.nan, False, "error", math.nan)
        try:
            state.marginals = marginals(state.graph, state.values)
        except (IndeterminateSystemError, np.linalg.LinAlgError):
            pass
        state.last_report = report
        if failed:
            state.failed_steps.append(state.current_pose_index)
    state.records.append(_record(state, "OBSERVE", Pose2(0.0, 0.0, 0.0), decisions, report, failed))
    return state


@dataclass(frozen=True)
class EstimateSnapshot:
    """Read-only per-step view consumed by the policy and the logs."""

    waypoints: tuple[Pose2, ...]
    waypoint_covariances: tuple[np.ndarray, ...]
    waypoint_informations: tuple[np.ndarray, ...]
    waypoint_sigma_traces: tuple[float, ...]
    waypoint_info_traces: tuple[float, ...]
    landmark_labels: tuple[str, ...]
    landmark_points: tuple[Point2, ...]
    landmark_sigma_traces: tuple[float, ...]
    landmark_info_traces: tuple[float, ...]
    grounded: tuple[bool, ...]
    robot: Pose2
    robot_index: int


def estimates(state: RuntimeState) -> EstimateSnapshot:
    wp_cov = []
    wp_inf = []
    for vid in state.ig.waypoint_vars:
        cov = state.marginals[vid]
        wp_cov.append(cov)
        wp_inf.append(np.linalg.inv(cov))
    lm_sig = []
    lm_inf = []
    for vid, _ in state.ig.landmark_vars:
        cov = state.marginals[vid]
        lm_sig.append(float(np.trace(cov)))
        lm_inf.append(float(np.trace(np.linalg.inv(cov))))
    return EstimateSnapshot(
        waypoints=tuple(state.values.get(v) for v in state.ig.waypoint_vars),
        waypoint_covariances=tuple(wp_cov),
        waypoint_informations=tuple(wp_inf),
        waypoint_sigma_traces=tuple(float(np.trace(c)) for c in wp_cov),
        waypoint_info_traces=tuple(float(np.trace(i)) for i in wp_inf),
        landmark_labels=tuple(label for _, label in state.ig.landmark_vars),
        landmark_points=tuple(state.values.get(v) for v, _ in state.ig.landmark_vars),
        landmark_sigma_traces=tuple(lm_sig),
        landmark_info_traces=tuple(lm_inf),
        grounded=tuple(state.ig.grounded),
        robot=state.values.get(state.robot_var()),
        robot_index=state.current_pose_index,
    )


def _record(
    state: RuntimeState,
    action: str | None,
    odometry: Pose2,
    decisions: list[AssociationDecision],
    report: SolverReport,
    failed: bool,
) -> dict:
    snap = estimates(state)
    return {
        "step": state.current_pose_index,
        "action": action,
        "odometry": [odometry.x, odometry.y, odometry.theta],
        "detections": [
            {"label": d.detection.label, "range": d.detection.range_m, "bearing": d.detection.bearing}
            for d in decisions
        ],
        "associations": [
            {
                "label": d.detection.label,
                "matched": str(d.matched) if d.matched is not None else None,
                "similarity": d.similarity,
            }
            for d in decisions
        ],
        "solver": {
            "iterations": report.iterations,
            "initial_cost": report.initial_cost,
            "final_cost": report.final_cost,
            "converged": report.converged,
            "termination": report.termination,
        },
        "failed": failed,
        "estimates": {
            "robot": [snap.robot.x, snap.robot.y, snap.robot.theta],
            "waypoints": [[p.x, p.y, p.theta] for p in snap.waypoints],
            # position block only, packed [xx, xy, yy]; enough for a 1-sigma ellipse
            "waypoint_position_covariances": [
                [c[0, 0], c[0, 1], c[1, 1]] for c in snap.waypoint_covariances
            ],
            "waypoint_sigma_traces": list(snap.waypoint_sigma_traces),
            "waypoint_info_traces": list(snap.waypoint_info_traces),
            "landmarks": {
                label: [p.x, p.y]
                for label, p in zip(snap.landmark_labels, snap.landmark_points)
            },
            "landmark_sigma_traces": list(snap.landmark_sigma_traces),
        },
    }


def write_jsonl(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
