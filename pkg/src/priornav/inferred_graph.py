"""Build the language-inferred factor graph from an instruction IR.

Each IR action becomes a relative-pose factor between consecutive waypoint
variables, each IR relation a pose-to-point factor onto a landmark variable,
plus one tight anchoring prior on waypoint 0 at the origin.  Gaussian means
and sigmas come from a verb/relation template table loaded from JSON config.

The STOP verb deliberately has no template: route-final stops are expressed
as FORWARD actions by the parser, and the low-level stop lives in the policy.
An IR that still carries a STOP action fails with a missing-template error.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .factor_graph import (
    BetweenPose,
    FactorGraph,
    Namespace,
    PoseToPoint,
    PriorPose,
    Values,
    VariableId,
    diagonal_covariance,
    marginals,
    optimize,
    point_var,
    pose_var,
)
from .geometry import Point2, Pose2, compose, transform_from
from .instructions import ActionVerb, InstructionIR, SpatialRelation

ANCHOR_COVARIANCE = np.diag([1e-6, 1e-6, 1e-6])

DEFAULT_TEMPLATES_PATH = Path(__file__).parent / "data" / "templates.json"


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class VerbTemplate:
    verb: ActionVerb
    mean: Pose2
    sigma: tuple[float, float, float]

    def covariance(self) -> np.ndarray:
        return diagonal_covariance(self.sigma)


@dataclass(frozen=True)
class RelationTemplate:
    relation: SpatialRelation
    mean: Point2
    sigma: tuple[float, float]

    def covariance(self) -> np.ndarray:
        return diagonal_covariance(self.sigma)


def _positive(sigma, where: str):
    vals = tuple(float(s) for s in sigma)
    if any(not math.isfinite(s) or s <= 0 for s in vals):
        raise TemplateError(f"sigmas for {where} must be strictly positive, got {sigma}")
    return vals


@dataclass
class TemplateTable:
    verbs: dict[ActionVerb, VerbTemplate]
    relations: dict[SpatialRelation, RelationTemplate]

    @classmethod
    def from_dict(cls, data: dict) -> "TemplateTable":
        verbs = {}
        for name, entry in data.get("verbs", {}).items():
            try:
                verb = ActionVerb(name)
            except ValueError:
                raise TemplateError(f"unknown verb {name!r} in template table")
            mean = entry["mean"]
            if len(mean) != 3:
                raise TemplateError(f"verb {name} mean must have 3 entries")
            verbs[verb] = VerbTemplate(verb, Pose2(*mean), _positive(entry["sigma"], f"verb {name}"))
        relations = {}
        for name, entry in data.get("relations", {}).items():
            try:
                rel = SpatialRelation(name)
            except ValueError:
                raise TemplateError(f"unknown relation {name!r} in template table")
            mean = entry["mean"]
            if len(mean) != 2:
                raise TemplateError(f"relation {name} mean must have 2 entries")
            relations[rel] = RelationTemplate(rel, Point2(*mean), _positive(entry["sigma"], f"relation {name}"))
        return cls(verbs, relations)

    @classmethod
    def load(cls, path) -> "TemplateTable":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise TemplateError(f"template table is not valid JSON: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def default(cls) -> "TemplateTable":
        return cls.load(DEFAULT_TEMPLATES_PATH)


@dataclass
class InferredGraph:
    graph: FactorGraph
    waypoint_vars: list[VariableId]
    landmark_vars: list[tuple[VariableId, str]]
    grounded: list[bool]
    initial_values: Values
    anchor_factor: PriorPose
    # (waypoint index, landmark index) pairs straight from the IR relations
    relation_pairs: list[tuple[int, int]]

    def landmarks_related_to(self, waypoint_indices) -> set[int]:
        wanted = set(waypoint_indices)
        return {lm for wp, lm in self.relation_pairs if wp in wanted}


def build(ir: InstructionIR, templates: TemplateTable | None = None) -> InferredGraph:
    """Materialize the prior graph for an IR; see module docstring for shape."""
    tt = templates or TemplateTable.default()
    g = FactorGraph()
    waypoint_vars = [g.add_variable(pose_var(Namespace.INFERRED_WAYPOINT, w.index)) for w in ir.waypoints]
    landmark_vars = [
        (g.add_variable(point_var(Namespace.INFERRED_LANDMARK, lm.index)), lm.label) for lm in ir.landmarks
    ]

    anchor = PriorPose(waypoint_vars[0], Pose2(0, 0, 0), ANCHOR_COVARIANCE)
    g.add_factor(anchor)

    init = Values()
    init.set(waypoint_vars[0], Pose2(0, 0, 0))
    for action in ir.actions:
        vt = tt.verbs.get(action.verb)
        if vt is None:
            raise TemplateError(f"no template for verb {action.verb.value}")
        g.add_factor(
            BetweenPose(waypoint_vars[action.from_wp], waypoint_vars[action.to_wp], vt.mean, vt.covariance())
        )
        init.set(waypoint_vars[action.to_wp], compose(init.get(waypoint_vars[action.from_wp]), vt.mean))

    for rel in ir.relations:
        rt = tt.relations.get(rel.relation)
        if rt is None:
            raise TemplateError(f"no template for relation {rel.relation.value}")
        lvar = landmark_vars[rel.landmark][0]
        g.add_factor(PoseToPoint(waypoint_vars[rel.waypoint], lvar, rt.mean, rt.covariance()))
        if lvar not in init:
            init.set(lvar, transform_from(init.get(waypoint_vars[rel.waypoint]), rt.mean))

    return InferredGraph(
        graph=g,
        waypoint_vars=waypoint_vars,
        landmark_vars=landmark_vars,
        grounded=[False] * len(landmark_vars),
        initial_values=init,
        anchor_factor=anchor,
        relation_pairs=[(r.waypoint, r.landmark) for r in ir.relations],
    )


def prior_marginals(ig: InferredGraph) -> dict[VariableId, np.ndarray]:
    """Optimize the language-only graph and return its marginal covariances."""
    solution, _ = optimize(ig.graph, ig.initial_values)
    return marginals(ig.graph, solution)
