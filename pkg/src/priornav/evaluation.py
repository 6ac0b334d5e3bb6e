"""Episode runner and suite-level reporting.

Wires the simulator, the SLAM runtime, and the waypoint policy into a
closed loop, scores each episode on ground truth, and aggregates suites
into CSV/JSON reports.  Ground-truth positions are used by the metrics
only; the agent acts on its own estimates throughout.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .association import AssociationConfig, GatingMode
from .factor_graph import SolverConfig
from .geometry import Pose2, between, wrap_angle
from .grid import OccupancyGrid
from .inferred_graph import TemplateTable, build
from .instructions import parse_constrained
from .metrics import MetricsConfig, success_metrics
from .policy import AgentAction, PolicyConfig, initial_policy_state, oracle_advance, policy_step
from .runtime import RuntimeConfig, estimates, init, observe, step, write_jsonl
from .simulator import (
    DEFAULT_ODOMETRY_SIGMAS,
    ORACLE_ODOMETRY_SIGMAS,
    STEP_BUDGET,
    Episode,
    Scene,
    SensorConfig,
    apply_action,
    load_episode,
    load_scene,
    sense,
)


class ConfigError(ValueError):
    """Bad evaluation configuration (unknown key, invalid value)."""


_MODES = ("oracle", "noisy")


@dataclass
class EvaluationConfig:
    """Everything a run needs; JSON round-trips for the CLI."""

    detector: str = "noisy"
    navigator: str = "noisy"
    budget: int = STEP_BUDGET
    grid_resolution: float = 0.1
    sensor: SensorConfig = field(default_factory=SensorConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    templates: TemplateTable | None = None

    def __post_init__(self):
        if self.detector not in _MODES:
            raise ConfigError(f"detector must be one of {_MODES}, got {self.detector!r}")
        if self.navigator not in _MODES:
            raise ConfigError(f"navigator must be one of {_MODES}, got {self.navigator!r}")
        if self.budget <= 0:
            raise ConfigError("budget must be positive")

    def effective_sensor(self) -> SensorConfig:
        return replace(self.sensor, oracle_mode=self.detector == "oracle")

    def odometry_sigmas(self) -> tuple[float, float, float]:
        return ORACLE_ODOMETRY_SIGMAS if self.navigator == "oracle" else DEFAULT_ODOMETRY_SIGMAS

    def runtime_config(self) -> RuntimeConfig:
        sig = np.asarray(self.odometry_sigmas(), float)
        return RuntimeConfig(
            odometry_covariance=np.diag(sig * sig),
            association=self.association,
            solver=self.solver,
        )

    def to_json(self) -> dict:
        return {
            "detector": self.detector,
            "navigator": self.navigator,
            "budget": self.budget,
            "grid_resolution": self.grid_resolution,
            "sensor": {
                "fov_half_angle": self.sensor.fov_half_angle,
                "max_range": self.sensor.max_range,
                "range_sigma": self.sensor.range_sigma,
                "bearing_sigma": self.sensor.bearing_sigma,
                "misclassify_prob": self.sensor.misclassify_prob,
                "occlusion_enabled": self.sensor.occlusion_enabled,
            },
            "association": {
                "threshold": self.association.threshold,
                "gating": self.association.gating.value,
                "reobservation_radius_m": self.association.reobservation_radius_m,
            },
            "policy": {
                "alpha": self.policy.alpha,
                "transition_radius": self.policy.transition_radius,
                "resample_interval": self.policy.resample_interval,
                "stale_shrink_ratio": self.policy.stale_shrink_ratio,
                "retreat_margin": self.policy.retreat_margin,
                "approach_radius": self.policy.approach_radius,
                "max_sample_attempts": self.policy.max_sample_attempts,
                "candidate_mode": self.policy.candidate_mode.value,
                "uncertainty_sign": self.policy.uncertainty_sign.value,
            },
            "metrics": self.metrics.to_json(),
            "solver": {
                "max_iterations": self.solver.max_iterations,
                "abs_decrease": self.solver.abs_decrease,
                "rel_decrease": self.solver.rel_decrease,
            },
        }


def _section(data: dict, key: str) -> dict:
    sub = data.get(key, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"{key} section must be an object")
    return sub


def _apply(cls, section: dict, where: str, **extra):
    import dataclasses

    known = {f.name for f in dataclasses.fields(cls)}
    bad = set(section) - known
    if bad:
        raise ConfigError(f"unknown {where} option(s): {sorted(bad)}")
    try:
        return cls(**section, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where} config: {exc}") from exc


def config_from_json(data: dict) -> EvaluationConfig:
    """Build a config from a plain dict; unknown keys are errors."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top_known = {
        "detector", "navigator", "budget", "grid_resolution",
        "sensor", "association", "policy", "metrics", "solver", "templates",
    }
    bad = set(data) - top_known
    if bad:
        raise ConfigError(f"unknown config option(s): {sorted(bad)}")

    assoc = dict(_section(data, "association"))
    if "gating" in assoc:
        try:
            assoc["gating"] = GatingMode(assoc["gating"])
        except ValueError as exc:
            raise ConfigError(f"bad association gating: {exc}") from exc
    policy = dict(_section(data, "policy"))
    from .policy import CandidateMode, UncertaintySign

    for key, enum_cls in (("candidate_mode", CandidateMode), ("uncertainty_sign", UncertaintySign)):
        if key in policy:
            try:
                policy[key] = enum_cls(policy[key])
            except ValueError as exc:
                raise ConfigError(f"bad policy {key}: {exc}") from exc

    templates = None
    if data.get("templates"):
        try:
            templates = TemplateTable.load(data["templates"])
        except Exception as exc:
            raise ConfigError(f"bad templates file: {exc}") from exc

    try:
        return EvaluationConfig(
            detector=data.get("detector", "noisy"),
            navigator=data.get("navigator", "noisy"),
            budget=data.get("budget", STEP_BUDGET),
            grid_resolution=data.get("grid_resolution", 0.1),
            sensor=_apply(SensorConfig, _section(data, "sensor"), "sensor"),
            association=_apply(AssociationConfig, assoc, "association"),
            policy=_apply(PolicyConfig, policy, "policy"),
            metrics=_apply(MetricsConfig, _section(data, "metrics"), "metrics"),
            solver=_apply(SolverConfig, _section(data, "solver"), "solver"),
            templates=templates,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> EvaluationConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_json(data)


@dataclass(frozen=True)
class EpisodeResult:
    episode_id: str
    success: bool
    oracle_success: bool
    spl: float
    ndtw: float
    stop_called: bool
    steps: int
    agent_path: tuple[tuple[float, float], ...]
    actions: tuple[str, ...]
    collisions: int
    solver_failures: int
    log: str | None

    def __post_init__(self):
        if self.success and not self.oracle_success:
            raise ValueError("success implies oracle success")
        if not self.success and self.spl != 0.0:
            raise ValueError("spl must be 0 on failure")


def result_to_json(result: EpisodeResult) -> dict:
    return {
        "id": result.episode_id,
        "success": result.success,
        "oracle_success": result.oracle_success,
        "spl": result.spl,
        "ndtw": result.ndtw,
        "stop_called": result.stop_called,
        "steps": result.steps,
        "collisions": result.collisions,
        "solver_failures": result.solver_failures,
        "agent_path": [[x, y] for x, y in result.agent_path],
        "actions": list(result.actions),
        "log": result.log,
    }


def run_episode(
    scene: Scene,
    episode: Episode,
    cfg: EvaluationConfig | None = None,
    *,
    episode_id: str = "episode",
    seed: int | None = None,
    grid: OccupancyGrid | None = None,
    log_path=None,
) -> EpisodeResult:
    """Close the loop on one episode until STOP or the step budget.

    Per-step solver failures are logged and survived; configuration and
    instruction errors abort.
    """
    cfg = cfg or EvaluationConfig()
    rng = np.random.default_rng(episode.seed if seed is None else seed)
    ir = episode.ir if episode.ir is not None else parse_constrained(episode.instruction_text)
    ig = build(ir, cfg.templates) if cfg.templates else build(ir)
    rcfg = cfg.runtime_config()
    state = init(ig, episode.start, rcfg)
    if grid is None:
        grid = OccupancyGrid.from_scene(scene, resolution=cfg.grid_resolution)
    sensor = cfg.effective_sensor()
    sigmas = cfg.odometry_sigmas()

    ps = initial_policy_state(len(ig.waypoint_vars))
    true_pose = episode.start
    # whatever is visible from the start pose grounds the prior before the
    # first target draw; gate it to the waypoint the policy will chase first
    first_unvisited = next((j for j, v in enumerate(ps.visited) if not v), None)
    observe(state, sense(scene, true_pose, sensor, rng), rcfg, current_waypoint=first_unvisited)
    path = [(true_pose.x, true_pose.y)]
    actions: list[str] = []
    stop_called = False
    collisions = 0

    for _ in range(cfg.budget):
        snapshot = estimates(state)
        action, ps = policy_step(snapshot, ps, scene, grid, cfg.policy, rng)
        if action is AgentAction.STOP:
            actions.append(action.value)
            stop_called = True
            break
        if cfg.navigator == "oracle":
            target = ps.active_target[1] if ps.active_target else episode.goal
            new_pose, _ = oracle_advance(true_pose, target, scene, grid)
            true_odo = between(true_pose, new_pose)
            noise = rng.normal(0.0, sigmas)
            odometry = Pose2(
                true_odo.x + noise[0],
                true_odo.y + noise[1],
                wrap_angle(true_odo.theta + noise[2]),
            )
            collided = False
            executed = AgentAction.FORWARD
        else:
            new_pose, odometry, collided = apply_action(scene, true_pose, action, rng, sigmas)
            executed = action
        true_pose = new_pose
        path.append((true_pose.x, true_pose.y))
        actions.append(executed.value)
        collisions += int(collided)
        detections = sense(scene, true_pose, sensor, rng)
        cw = ps.active_target[0] if ps.active_target else None
        step(state, odometry, detections, rcfg, current_waypoint=cw, action=executed.value)

    m = success_metrics(path, stop_called, episode.goal, episode.reference_path, cfg.metrics)
    log_name = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(state.records, log_path)
        log_name = log_path.name
    return EpisodeResult(
        episode_id=episode_id,
        success=m.sr == 1.0,
        oracle_success=m.osr == 1.0,
        spl=m.spl,
        ndtw=m.ndtw,
        stop_called=stop_called,
        steps=len(actions),
        agent_path=tuple(path),
        actions=tuple(actions),
        collisions=collisions,
        solver_failures=len(state.failed_steps),
        log=log_name,
    )


@dataclass(frozen=True)
class MetricsSummary:
    sr: float
    spl: float
    osr: float
    ndtw: float
    count: int
    error_count: int
    errors: tuple[tuple[str, str], ...]
    seed: int | None
    config: dict

    def to_json(self) -> dict:
        return {
            "sr": self.sr,
            "spl": self.spl,
            "osr": self.osr,
            "ndtw": self.ndtw,
            "episodes": self.count,
            "errors": [{"id": eid, "error": msg} for eid, msg in self.errors],
            "seed": self.seed,
            "config": self.config,
        }


RESULT_COLUMNS = ("id", "success", "oracle_success", "spl", "ndtw", "stop_called", "steps", "collisions", "solver_failures")
SUMMARY_COLUMNS = ("sr", "spl", "osr", "ndtw", "episodes", "errors", "seed")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summarize(results: list[EpisodeResult], *, errors=(), seed=None, config=None) -> MetricsSummary:
    """Arithmetic means over per-episode scores; failures to load excluded."""
    n = len(results)
    mean = lambda vals: (sum(vals) / n) if n else 0.0
    return MetricsSummary(
        sr=mean([float(r.success) for r in results]),
        spl=mean([r.spl for r in results]),
        osr=mean([float(r.oracle_success) for r in results]),
        ndtw=mean([r.ndtw for r in results]),
        count=n,
        error_count=len(errors),
        errors=tuple(errors),
        seed=seed,
        config=config or {},
    )


def write_reports(out_dir, results: list[EpisodeResult], summary: MetricsSummary) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in sorted(results, key=lambda r: r.episode_id):
            w.writerow(
                _fmt(v)
                for v in (
                    r.episode_id, r.success, r.oracle_success, r.spl, r.ndtw,
                    r.stop_called, r.steps, r.collisions, r.solver_failures,
                )
            )
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        w.writerow(
            _fmt(v)
            for v in (
                summary.sr, summary.spl, summary.osr, summary.ndtw,
                summary.count, summary.error_count,
                "" if summary.seed is None else summary.seed,
            )
        )
    with open(out / "summary.json", "w") as fh:
        json.dump(summary.to_json(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def run_suite(
    suite_dir,
    cfg: EvaluationConfig | None = None,
    out_dir=None,
    parallelism: int = 1,
) -> tuple[MetricsSummary, list[EpisodeResult]]:
    """Run every episode in a suite; aggregation is parallelism-independent.

    Unreadable episodes land in the summary's errors section and are
    excluded from the means.  When out_dir is given, writes per-step logs,
    per-episode JSON, results.csv, summary.csv, and summary.json.
    """
    root = Path(suite_dir)
    try:
        manifest = json.loads((root / "suite.json").read_text())
        names = sorted(manifest["episodes"])
        suite_seed = manifest.get("seed")
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read suite at {suite_dir}: {exc}") from exc
    if cfg is None:
        # a suite carries the configuration it was built for
        cfg = config_from_json(manifest.get("config", {}))

    jobs = []
    errors = []
    grids: dict[str, OccupancyGrid] = {}
    for name in names:
        eid = Path(name).stem
        try:
            episode = load_episode(root / name)
            scene = load_scene(root / episode.scene_ref)
            if episode.scene_ref not in grids:
                grids[episode.scene_ref] = OccupancyGrid.from_scene(
                    scene, resolution=cfg.grid_resolution
                )
            jobs.append((eid, scene, episode, grids[episode.scene_ref]))
        except Exception as exc:
            errors.append((eid, str(exc)))

    out = Path(out_dir) if out_dir is not None else None

    def one(job):
        eid, scene, episode, grid = job
        log_path = out / "logs" / f"{eid}.jsonl" if out else None
        return run_episode(
            scene, episode, cfg, episode_id=eid, grid=grid, log_path=log_path
        )

    if parallelism > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(job) for job in jobs]
    results.sort(key=lambda r: r.episode_id)

    summary = summarize(
        results, errors=errors, seed=suite_seed, config=cfg.to_json()
    )
    if out is not None:
        episodes_dir = out / "episodes"
        episodes_dir.mkdir(parents=True, exist_ok=True)
        for r in results:
            with open(episodes_dir / f"{r.episode_id}.json", "w") as fh:
                json.dump(result_to_json(r), fh, sort_keys=True, indent=2)
                fh.write("\n")
        write_reports(out, results, summary)
    return summary, results
