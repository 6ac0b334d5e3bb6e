"""Sparse nonlinear least-squares on SE(2) poses and 2D points.

Variables are identified by (kind, index, namespace) triples; factors are
Gaussian with residual r = L^-1 (h(X) - z), Sigma = L L'.  Optimization is
Levenberg-Marquardt on dense normal equations (graphs stay small, a few
hundred variables at most); marginal covariances come from inverting the
information matrix J'J at the solution.

The linear-algebra hot path (residual/Jacobian accumulation) lives in
``priornav.kernels`` with numba and numpy implementations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from . import kernels
from .geometry import (
    Point2,
    Pose2,
    between,
    between_jacobians,
    transform_to,
    transform_to_jacobians,
    wrap_angle,
)


class Kind(str, Enum):
    POSE = "POSE"
    POINT = "POINT"


class Namespace(str, Enum):
    ROBOT_POSE = "ROBOT_POSE"
    INFERRED_WAYPOINT = "INFERRED_WAYPOINT"
    INFERRED_LANDMARK = "INFERRED_LANDMARK"
    OBSERVED_LANDMARK = "OBSERVED_LANDMARK"


@dataclass(frozen=True)
class VariableId:
    kind: Kind
    index: int
    namespace: Namespace

    def __post_init__(self):
        if self.index < 0:
            raise GraphStructureError(f"variable index must be non-negative, got {self.index}")

    @property
    def dim(self) -> int:
        return 3 if self.kind is Kind.POSE else 2

    def __str__(self) -> str:
        return f"{self.namespace.value}/{self.kind.value}:{self.index}"

    def sort_key(self):
        return (self.namespace.value, self.kind.value, self.index)


def pose_var(namespace: Namespace, index: int) -> VariableId:
    return VariableId(Kind.POSE, index, namespace)


def point_var(namespace: Namespace, index: int) -> VariableId:
    return VariableId(Kind.POINT, index, namespace)


class GraphStructureError(ValueError):
    """Structural misuse: duplicate ids, dangling references, bad covariances."""


class IndeterminateSystemError(RuntimeError):
    """The least-squares system has unconstrained degrees of freedom."""

    def __init__(self, variables):
        self.variables = list(variables)
        names = ", ".join(str(v) for v in self.variables) or "<unidentified>"
        super().__init__(f"indeterminate system: unconstrained variables: {names}")


def diagonal_covariance(sigmas) -> np.ndarray:
    """Covariance matrix from per-axis standard deviations."""
    s = np.asarray(sigmas, float)
    if np.any(s <= 0):
        raise GraphStructureError(f"standard deviations must be positive, got {sigmas}")
    return np.diag(s * s)


def _sqrt_information(cov, dim: int) -> tuple[np.ndarray, np.ndarray]:
    cov = np.asarray(cov, float)
    if cov.shape != (dim, dim):
        raise GraphStructureError(f"covariance must be {dim}x{dim}, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise GraphStructureError("covariance must be symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise GraphStructureError(f"covariance is not positive definite: {e}") from e
    W = solve_triangular(L, np.eye(dim), lower=True)
    return cov.copy(), W


# Factor type codes shared with the kernels.
_F_PRIOR_POSE = 0
_F_PRIOR_POINT = 1
_F_BETWEEN = 2
_F_POSE_POINT = 3
_F_POINT_EQ = 4


class GaussianFactor:
    """Base for all factor variants; subclasses set connected ids, measurement,
    residual dimension, and the packed (code, measurement, whitener) triple."""

    variant: str
    dim: int
    connected: tuple[VariableId, ...]

    def _packed(self) -> tuple[int, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _check_kinds(self, *pairs):
        for vid, kind in pairs:
            if vid.kind is not kind:
                raise GraphStructureError(f"{self.variant} expects {kind.value} variable, got {vid}")


def _pad3(vec) -> np.ndarray:
    out = np.zeros(3)
    out[: len(vec)] = vec
    return out


def _pad33(mat) -> np.ndarray:
    out = np.zeros((3, 3))
    d = mat.shape[0]
    out[:d, :d] = mat
    return out


class PriorPose(GaussianFactor):
    variant = "PriorPose"
    dim = 3

    def __init__(self, var: VariableId, mean: Pose2, covariance):
        self.covariance, self._W = _sqrt_information(covariance, 3)
        self.var = var
        self.mean = mean
        self.connected = (var,)
        self._check_kinds((var, Kind.POSE))

    def _packed(self):
        return _F_PRIOR_POSE, self.mean.as_array(), self._W


class PriorPoint(GaussianFactor):
    variant = "PriorPoint"
    dim = 2

    def __init__(self, var: VariableId, mean: Point2, covariance):
        self.covariance, self._W = _sqrt_information(covariance, 2)
        self.var = var
        self.mean = mean
        self.connected = (var,)
        self._check_kinds((var, Kind.POINT))

    def _packed(self):
        return _F_PRIOR_POINT, _pad3(self.mean.as_array()), _pad33(self._W)


class BetweenPose(GaussianFactor):
    variant = "BetweenPose"
    dim = 3

    def __init__(self, var_a: VariableId, var_b: VariableId, measurement: Pose2, covariance):
        self.covariance, self._W = _sqrt_information(covariance, 3)
        self.var_a = var_a
        self.var_b = var_b
        self.measurement = measurement
        self.connected = (var_a, var_b)
        self._check_kinds((var_a, Kind.POSE), (var_b, Kind.POSE))

    def _packed(self):
        return _F_BETWEEN, self.measurement.as_array(), self._W


class PoseToPoint(GaussianFactor):
    variant = "PoseToPoint"
    dim = 2

    def __init__(self, pose: VariableId, point: VariableId, measurement: Point2, covariance):
        self.covariance, self._W = _sqrt_information(covariance, 2)
        self.pose = pose
        self.point = point
        self.measurement = measurement
        self.connected = (pose, point)
        self._check_kinds((pose, Kind.POSE), (point, Kind.POINT))

    def _packed(self):
        return _F_POSE_POINT, _pad3(self.measurement.as_array()), _pad33(self._W)


class PointEquality(GaussianFactor):
    variant = "PointEquality"
    dim = 2

    def __init__(self, var_a: VariableId, var_b: VariableId, covariance):
        self.covariance, self._W = _sqrt_information(covariance, 2)
        self.var_a = var_a
        self.var_b = var_b
        self.connected = (var_a, var_b)
        self._check_kinds((var_a, Kind.POINT), (var_b, Kind.POINT))

    def _packed(self):
        return _F_POINT_EQ, np.zeros(3), _pad33(self._W)


class Values:
    """Assignment of variables to Pose2/Point2, kind-checked on insert."""

    def __init__(self, data=None):
        self._data: dict[VariableId, Pose2 | Point2] = {}
        if data:
            for vid, val in dict(data).items():
                self.set(vid, val)

    def set(self, vid: VariableId, value):
        expected = Pose2 if vid.kind is Kind.POSE else Point2
        if not isinstance(value, expected):
            raise GraphStructureError(f"{vid} expects {expected.__name__}, got {type(value).__name__}")
        self._data[vid] = value

    def get(self, vid: VariableId):
        return self._data[vid]

    def __contains__(self, vid) -> bool:
        return vid in self._data

    def __len__(self) -> int:
        return len(self._data)

    def keys(self):
        return self._data.keys()

    def items(self):
        return self._data.items()

    def copy(self) -> "Values":
        out = Values()
        out._data = dict(self._data)
        return out


class FactorGraph:
    """Variables plus Gaussian factors; insertion order fixes packing order."""

    def __init__(self):
        self._variables: dict[VariableId, None] = {}
        self.factors: list[GaussianFactor] = []

    @property
    def variables(self) -> list[VariableId]:
        return list(self._variables)

    def __contains__(self, vid: VariableId) -> bool:
        return vid in self._variables

    def add_variable(self, vid: VariableId) -> VariableId:
        if vid in self._variables:
            raise GraphStructureError(f"duplicate variable {vid}")
        self._variables[vid] = None
        return vid

    def add_factor(self, factor: GaussianFactor) -> GaussianFactor:
        for vid in factor.connected:
            if vid not in self._variables:
                raise GraphStructureError(f"factor {factor.variant} references unknown variable {vid}")
        self.factors.append(factor)
        return factor

    def remove_factor(self, factor: GaussianFactor):
        for i, f in enumerate(self.factors):
            if f is factor:
                del self.factors[i]
                return
        raise GraphStructureError(f"factor {factor.variant} not in graph")


@dataclass
class SolverConfig:
    initial_lambda: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e10
    max_iterations: int = 100
    abs_decrease: float = 1e-9
    rel_decrease: float = 1e-6


@dataclass
class SolverReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    termination: str
    final_lambda: float


class _Packed:
    """Flat state vector plus per-factor arrays consumed by the kernels."""

    def __init__(self, graph: FactorGraph, values: Values):
        self.order = graph.variables
        self.offsets: dict[VariableId, int] = {}
        off = 0
        for vid in self.order:
            self.offsets[vid] = off
            off += vid.dim
        self.dim = off
        x = np.zeros(off)
        for vid in self.order:
            if vid not in values:
                raise GraphStructureError(f"initial values missing variable {vid}")
            v = values.get(vid)
            o = self.offsets[vid]
            if vid.kind is Kind.POSE:
                x[o:o + 3] = (v.x, v.y, v.theta)
            else:
                x[o:o + 2] = (v.x, v.y)
        self.x = x

        n = len(graph.factors)
        self.ftype = np.zeros(n, dtype=np.int32)
        self.offa = np.zeros(n, dtype=np.int32)
        self.offb = np.zeros(n, dtype=np.int32)
        self.meas = np.zeros((n, 3))
        self.sqrt_info = np.zeros((n, 3, 3))
        for k, f in enumerate(graph.factors):
            code, meas, W = f._packed()
            self.ftype[k] = code
            self.offa[k] = self.offsets[f.connected[0]]
            self.offb[k] = self.offsets[f.connected[1]] if len(f.connected) > 1 else -1
            self.meas[k, : len(meas)] = meas
            self.sqrt_info[k, : W.shape[0], : W.shape[1]] = W

        self.pose_offs = np.array(
            [self.offsets[v] for v in self.order if v.kind is Kind.POSE], dtype=np.int64
        )
        self.point_offs = np.array(
            [self.offsets[v] for v in self.order if v.kind is Kind.POINT], dtype=np.int64
        )

    def factor_arrays(self, x=None):
        return (self.x if x is None else x), self.ftype, self.offa, self.offb, self.meas, self.sqrt_info

    def retract(self, delta: np.ndarray) -> np.ndarray:
        x = self.x.copy()
        po = self.pose_offs
        if po.size:
            th = x[po + 2]
            c, s = np.cos(th), np.sin(th)
            x[po] += c * delta[po] - s * delta[po + 1]
            x[po + 1] += s * delta[po] + c * delta[po + 1]
            x[po + 2] = wrap_angle(th + delta[po + 2])
        qo = self.point_offs
        if qo.size:
            x[qo] += delta[qo]
            x[qo + 1] += delta[qo + 1]
        return x

    def unpack(self) -> Values:
        out = Values()
        for vid in self.order:
            o = self.offsets[vid]
            if vid.kind is Kind.POSE:
                out.set(vid, Pose2(self.x[o], self.x[o + 1], self.x[o + 2]))
            else:
                out.set(vid, Point2(self.x[o], self.x[o + 1]))
        return out

    def block(self, full: np.ndarray, vid: VariableId) -> np.ndarray:
        o, d = self.offsets[vid], vid.dim
        return full[o:o + d, o:o + d].copy()


def residual_and_jacobian(factor: GaussianFactor, values: Values):
    """Whitened residual and per-variable whitened Jacobian blocks."""
    W = factor._W
    if isinstance(factor, PriorPose):
        p = values.get(factor.var)
        r = np.array([p.x - factor.mean.x, p.y - factor.mean.y, wrap_angle(p.theta - factor.mean.theta)])
        c, s = math.cos(p.theta), math.sin(p.theta)
        j = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return W @ r, {factor.var: W @ j}
    if isinstance(factor, PriorPoint):
        p = values.get(factor.var)
        r = np.array([p.x - factor.mean.x, p.y - factor.mean.y])
        return W @ r, {factor.var: W @ np.eye(2)}
    if isinstance(factor, BetweenPose):
        a, b = values.get(factor.var_a), values.get(factor.var_b)
        h = between(a, b)
        m = factor.measurement
        r = np.array([h.x - m.x, h.y - m.y, wrap_angle(h.theta - m.theta)])
        ja, jb = between_jacobians(a, b)
        return W @ r, {factor.var_a: W @ ja, factor.var_b: W @ jb}
    if isinstance(factor, PoseToPoint):
        p, q = values.get(factor.pose), values.get(factor.point)
        h = transform_to(p, q)
        r = np.array([h.x - factor.measurement.x, h.y - factor.measurement.y])
        jp, jq = transform_to_jacobians(p, q)
        return W @ r, {factor.pose: W @ jp, factor.point: W @ jq}
    if isinstance(factor, PointEquality):
        a, b = values.get(factor.var_a), values.get(factor.var_b)
        r = np.array([a.x - b.x, a.y - b.y])
        return W @ r, {factor.var_a: W @ np.eye(2), factor.var_b: W @ -np.eye(2)}
    raise GraphStructureError(f"unknown factor type {type(factor).__name__}")


def _unconstrained_variables(graph: FactorGraph) -> list[VariableId]:
    """Variables with no path through the factors to any prior."""
    adjacency: dict[VariableId, set[VariableId]] = {v: set() for v in graph.variables}
    seeds: list[VariableId] = []
    for f in graph.factors:
        ids = f.connected
        if len(ids) == 1:
            seeds.append(ids[0])
        else:
            adjacency[ids[0]].add(ids[1])
            adjacency[ids[1]].add(ids[0])
    visited: set[VariableId] = set()
    stack = list(seeds)
    while stack:
        v = stack.pop()
        if v in visited:
            continue
        visited.add(v)
        stack.extend(adjacency[v] - visited)
    return sorted((v for v in graph.variables if v not in visited), key=VariableId.sort_key)


def optimize(graph: FactorGraph, init: Values, config: SolverConfig | None = None):
    """Levenberg-Marquardt; returns (Values, SolverReport).

    Only improving steps are accepted, so final cost never exceeds initial
    cost.  Running out of iterations (or of usable damping) is reported via
    the flags, not raised; a structurally unconstrained system raises
    IndeterminateSystemError.
    """
    cfg = config or SolverConfig()
    loose = _unconstrained_variables(graph)
    if loose:
        raise IndeterminateSystemError(loose)

    pk = _Packed(graph, init)
    impl, _ = kernels.get_backend()
    H, g, cost = impl.normal_equations(*pk.factor_arrays(), pk.dim)
    initial_cost = cost
    lam = cfg.initial_lambda
    iterations = 0
    converged = False
    termination = "max_iterations"

    while iterations < cfg.max_iterations:
        iterations += 1
        damping = np.maximum(np.diag(H), 1e-12)
        delta = None
        try:
            cf = cho_factor(H + lam * np.diag(damping), lower=True)
            delta = cho_solve(cf, -g)
            if not np.all(np.isfinite(delta)):
                delta = None
        except (LinAlgError, np.linalg.LinAlgError):
            delta = None
        if delta is None:
            lam *= cfg.lambda_up
            if lam > cfg.lambda_max:
                raise IndeterminateSystemError(_singular_block_variables(pk, H))
            continue

        x_new = pk.retract(delta)
        new_cost = impl.total_cost(*pk.factor_arrays(x_new))
        if math.isfinite(new_cost) and new_cost <= cost:
            decrease = cost - new_cost
            relative = decrease / cost if cost > 0 else 0.0
            pk.x = x_new
            cost = new_cost
            if decrease < cfg.abs_decrease or relative < cfg.rel_decrease:
                converged = True
                termination = "converged"
                break
            H, g, _ = impl.normal_equations(*pk.factor_arrays(), pk.dim)
            lam = max(lam / cfg.lambda_down, 1e-12)
        else:
            lam *= cfg.lambda_up
            if lam > cfg.lambda_max:
                termination = "lambda_max"
                break

    report = SolverReport(
        iterations=iterations,
        initial_cost=float(initial_cost),
        final_cost=float(cost),
        converged=converged,
        termination=termination,
        final_lambda=float(lam),
    )
    return pk.unpack(), report


def _singular_block_variables(pk: _Packed, H: np.ndarray) -> list[VariableId]:
    out = []
    for vid in pk.order:
        o, d = pk.offsets[vid], vid.dim
        block = H[o:o + d, o:o + d]
        if np.linalg.matrix_rank(block, tol=1e-12) < d:
            out.append(vid)
    return out


def _information_matrix(graph: FactorGraph, values: Values):
    pk = _Packed(graph, values)
    impl, _ = kernels.get_backend()
    H, _, _ = impl.normal_equations(*pk.factor_arrays(), pk.dim)
    return pk, H


def _null_space_variables(pk: _Packed, H: np.ndarray) -> list[VariableId]:
    w, v = np.linalg.eigh(H)
    null = v[:, w < 1e-9]
    if null.size == 0:
        return []
    weight = np.max(np.abs(null), axis=1)
    out = []
    for vid in pk.order:
        o, d = pk.offsets[vid], vid.dim
        if np.max(weight[o:o + d]) > 1e-6:
            out.append(vid)
    return out


def marginals(graph: FactorGraph, values: Values) -> dict[VariableId, np.ndarray]:
    """Per-variable covariance blocks of inv(J'J) at the given assignment."""
    loose = _unconstrained_variables(graph)
    if loose:
        raise IndeterminateSystemError(loose)
    pk, H = _information_matrix(graph, values)
    try:
        cf = cho_factor(H, lower=True)
        full = cho_solve(cf, np.eye(pk.dim))
    except (LinAlgError, np.linalg.LinAlgError):
        raise IndeterminateSystemError(_null_space_variables(pk, H) or pk.order)
    return {vid: pk.block(full, vid) for vid in pk.order}


def marginals_for(graph: FactorGraph, values: Values, subset) -> dict[VariableId, np.ndarray]:
    """Marginals for selected variables via column solves (cheaper per step)."""
    subset = list(subset)
    loose = _unconstrained_variables(graph)
    if loose:
        raise IndeterminateSystemError(loose)
    pk, H = _information_matrix(graph, values)
    cols = []
    for vid in subset:
        o = pk.offsets[vid]
        cols.extend(range(o, o + vid.dim))
    rhs = np.zeros((pk.dim, len(cols)))
    for j, c in enumerate(cols):
        rhs[c, j] = 1.0
    try:
        cf = cho_factor(H, lower=True)
        sol = cho_solve(cf, rhs)
    except (LinAlgError, np.linalg.LinAlgError):
        raise IndeterminateSystemError(_null_space_variables(pk, H) or pk.order)
    out = {}
    j = 0
    for vid in subset:
        d = vid.dim
        o = pk.offsets[vid]
        out[vid] = sol[o:o + d, j:j + d].copy()
        j += d
    return out


def total_graph_cost(graph: FactorGraph, values: Values) -> float:
    pk = _Packed(graph, values)
    impl, _ = kernels.get_backend()
    return float(impl.total_cost(*pk.factor_arrays()))


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def dump_graph(graph: FactorGraph, values: Values | None = None) -> str:
    """Deterministic one-line-per-item text form for golden-file tests."""
    lines = [f"graph {len(graph.variables)} variables {len(graph.factors)} factors"]
    for vid in graph.variables:
        if values is not None and vid in values:
            v = values.get(vid)
            coords = (v.x, v.y, v.theta) if vid.kind is Kind.POSE else (v.x, v.y)
            lines.append(f"var {vid} = " + " ".join(_fmt(c) for c in coords))
        else:
            lines.append(f"var {vid}")
    for f in graph.factors:
        ids = " ".join(str(v) for v in f.connected)
        code, meas, _ = f._packed()
        mstr = " ".join(_fmt(m) for m in meas[: f.dim]) if f.variant != "PointEquality" else "-"
        cov = " ".join(_fmt(c) for c in np.asarray(f.covariance).ravel())
        lines.append(f"factor {f.variant} {ids} meas {mstr} cov {cov}")
    return "\n".join(lines) + "\n"
