"""Deterministic 2D world: discrete actions, noisy kinematics, FOV sensing,
scene/episode files, and a template-driven episode-suite generator.

Every random draw in an episode comes from one Generator in a fixed order,
so a (scene, episode, seed) triple replays byte-identically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .association import Detection
from .geometry import Point2, Pose2, compose, transform_to
from .grid import point_segment_distance, segment_segment_distance, segments_intersect
from .instructions import InstructionIR, ir_from_json, ir_to_json, parse_constrained

STEP_LENGTH = 0.25
TURN_ANGLE = math.pi / 12
AGENT_RADIUS = 0.18
STEP_BUDGET = 500

CONFUSION_VOCABULARY = (
    "television", "fireplace", "radiator", "refrigerator", "microwave",
    "armchair", "bookshelf", "wardrobe", "staircase", "painting",
    "mirror", "curtain", "cabinet", "dresser", "counter",
    "bathtub", "window", "doorway", "bench", "rug",
)

GENERATOR_VOCABULARY = (
    "piano", "table", "sofa", "lamp", "door", "plant", "mirror", "sink",
    "oven", "desk", "chair", "bed", "couch", "shelf", "vase", "clock",
    "stove", "fridge", "toilet", "dresser", "cabinet", "window", "bench", "rug",
)


class AgentAction(str, Enum):
    FORWARD = "FORWARD"
    TURN_LEFT = "TURN_LEFT"
    TURN_RIGHT = "TURN_RIGHT"
    STOP = "STOP"


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneLandmark:
    id: int
    label: str
    position: Point2


@dataclass(frozen=True)
class Scene:
    landmarks: tuple[SceneLandmark, ...]
    walls: tuple[tuple[float, float, float, float], ...]
    bounds: tuple[float, float, float, float]

    def __post_init__(self):
        ids = [lm.id for lm in self.landmarks]
        if len(set(ids)) != len(ids):
            raise SceneError(f"duplicate landmark ids: {sorted(ids)}")
        xmin, ymin, xmax, ymax = self.bounds
        for lm in self.landmarks:
            if not lm.label.strip():
                raise SceneError(f"landmark {lm.id} has an empty label")
            if not (xmin <= lm.position.x <= xmax and ymin <= lm.position.y <= ymax):
                raise SceneError(f"landmark {lm.id} outside bounds: {lm.position}")


@dataclass(frozen=True)
class Episode:
    scene_ref: str
    start: Pose2
    instruction_text: str
    ir: InstructionIR | None
    reference_path: tuple[Point2, ...]
    goal: Point2
    seed: int

    def __post_init__(self):
        if not self.reference_path:
            raise SceneError("reference path is empty")
        head = self.reference_path[0]
        if math.hypot(head.x - self.start.x, head.y - self.start.y) > 1e-9:
            raise SceneError("reference path must start at the start pose")
        tail = self.reference_path[-1]
        if math.hypot(tail.x - self.goal.x, tail.y - self.goal.y) > 1e-9:
            raise SceneError("reference path must end at the goal")


@dataclass
class SensorConfig:
    fov_half_angle: float = math.pi / 4
    max_range: float = 5.0
    range_sigma: float = 0.1
    bearing_sigma: float = math.radians(2.0)
    misclassify_prob: float = 0.05
    confusion_vocabulary: tuple[str, ...] = CONFUSION_VOCABULARY
    occlusion_enabled: bool = True
    oracle_mode: bool = False

    def __post_init__(self):
        if not 0.0 <= self.misclassify_prob <= 1.0:
            raise ValueError(f"misclassify_prob must be in [0,1], got {self.misclassify_prob}")
        if self.max_range <= 0 or self.range_sigma < 0 or self.fov_half_angle <= 0:
            raise ValueError("sensor ranges and fov must be positive")


DEFAULT_ODOMETRY_SIGMAS = (0.02, 0.02, 0.01)
ORACLE_ODOMETRY_SIGMAS = (1e-4, 1e-4, 1e-4)


def _motion(action: AgentAction) -> Pose2:
    if action is AgentAction.FORWARD:
        return Pose2(STEP_LENGTH, 0.0, 0.0)
    if action is AgentAction.TURN_LEFT:
        return Pose2(0.0, 0.0, TURN_ANGLE)
    if action is AgentAction.TURN_RIGHT:
        return Pose2(0.0, 0.0, -TURN_ANGLE)
    raise ValueError(f"no motion for action {action}")


def collides(scene: Scene, a: Pose2, b: Pose2) -> bool:
    """Swept-disc test: agent of radius AGENT_RADIUS moving from a to b."""
    seg_a = (a.x, a.y)
    seg_b = (b.x, b.y)
    for x1, y1, x2, y2 in scene.walls:
        if segment_segment_distance(seg_a, seg_b, (x1, y1), (x2, y2)) < AGENT_RADIUS:
            return True
    return False


def apply_action(
    scene: Scene,
    pose: Pose2,
    action: AgentAction,
    rng: np.random.Generator,
    noise_sigmas=DEFAULT_ODOMETRY_SIGMAS,
) -> tuple[Pose2, Pose2, bool]:
    """One discrete action; returns (true pose, measured odometry, collided).

    Noise is drawn for every action regardless of outcome, keeping the RNG
    stream aligned; a blocked FORWARD leaves the pose and reports exactly
    zero odometry.
    """
    if action is AgentAction.STOP:
        raise ValueError("STOP is terminal; do not apply it as motion")
    motion = _motion(action)
    noise = rng.normal(0.0, noise_sigmas)
    target = compose(pose, motion)
    if action is AgentAction.FORWARD and collides(scene, pose, target):
        return pose, Pose2(0.0, 0.0, 0.0), True
    odom = Pose2(motion.x + noise[0], motion.y + noise[1], motion.theta + noise[2])
    return target, odom, False


def occluded(scene: Scene, pose: Pose2, target: Point2) -> bool:
    a = (pose.x, pose.y)
    b = (target.x, target.y)
    for x1, y1, x2, y2 in scene.walls:
        if segments_intersect(a, b, (x1, y1), (x2, y2)):
            return True
    return False


def sense(
    scene: Scene,
    pose: Pose2,
    cfg: SensorConfig,
    rng: np.random.Generator,
) -> list[Detection]:
    """Visible landmarks as range/bearing detections, in landmark order."""
    out = []
    for lm in scene.landmarks:
        rel = transform_to(pose, lm.position)
        rng_m = math.hypot(rel.x, rel.y)
        if rng_m > cfg.max_range:
            continue
        bearing = math.atan2(rel.y, rel.x)
        if abs(bearing) > cfg.fov_half_angle:
            continue
        if cfg.occlusion_enabled and occluded(scene, pose, lm.position):
            continue
        if cfg.oracle_mode:
            out.append(Detection(lm.label, None, rng_m, bearing, 0, true_landmark_id=lm.id))
            continue
        # fixed four draws per detection, independent of the misclassify outcome
        r_noise = rng.normal(0.0, cfg.range_sigma)
        b_noise = rng.normal(0.0, cfg.bearing_sigma)
        u = rng.random()
        pick = int(rng.random() * len(cfg.confusion_vocabulary))
        label = lm.label
        if u < cfg.misclassify_prob:
            label = cfg.confusion_vocabulary[min(pick, len(cfg.confusion_vocabulary) - 1)]
        out.append(Detection(label, None, max(rng_m + r_noise, 0.0), bearing + b_noise, 0))
    return out


# --- scene / episode files ---


def scene_to_json(scene: Scene) -> dict:
    return {
        "landmarks": [
            {"id": lm.id, "label": lm.label, "x": lm.position.x, "y": lm.position.y}
            for lm in scene.landmarks
        ],
        "walls": [list(w) for w in scene.walls],
        "bounds": list(scene.bounds),
    }


def scene_from_json(data: dict) -> Scene:
    return Scene(
        landmarks=tuple(
            SceneLandmark(lm["id"], lm["label"], Point2(lm["x"], lm["y"]))
            for lm in data["landmarks"]
        ),
        walls=tuple(tuple(w) for w in data["walls"]),
        bounds=tuple(data["bounds"]),
    )


def episode_to_json(ep: Episode) -> dict:
    out = {
        "scene": ep.scene_ref,
        "start": [ep.start.x, ep.start.y, ep.start.theta],
        "instruction": ep.instruction_text,
        "reference_path": [[p.x, p.y] for p in ep.reference_path],
        "goal": [ep.goal.x, ep.goal.y],
        "seed": ep.seed,
    }
    if ep.ir is not None:
        out["ir"] = ir_to_json(ep.ir)
    return out


def episode_from_json(data: dict) -> Episode:
    ir = ir_from_json(data["ir"]) if "ir" in data else None
    return Episode(
        scene_ref=data["scene"],
        start=Pose2(*data["start"]),
        instruction_text=data["instruction"],
        ir=ir,
        reference_path=tuple(Point2(x, y) for x, y in data["reference_path"]),
        goal=Point2(*data["goal"]),
        seed=int(data["seed"]),
    )


def _dump(data: dict, path: Path) -> None:
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def load_scene(path) -> Scene:
    return scene_from_json(json.loads(Path(path).read_text()))


def load_episode(path) -> Episode:
    return episode_from_json(json.loads(Path(path).read_text()))


# --- suite generation ---


class GenerationError(RuntimeError):
    pass


@dataclass
class GeneratorConfig:
    episodes: int = 50
    room_size: float = 10.0
    landmarks_min: int = 3
    landmarks_max: int = 8
    vocabulary: tuple[str, ...] = GENERATOR_VOCABULARY
    interior_walls: int = 2
    duplicate_label: str | None = None
    duplicate_count: int = 0
    max_retries: int = 200

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["vocabulary"] = list(self.vocabulary)
        return out


_MARGIN = 1.0  # waypoint clearance from room boundary
_LEG_RANGE = (1.5, 3.0)
_WALL_ROUTE_CLEARANCE = 0.7
_WALL_LANDMARK_CLEARANCE = 0.5
_ROUTE_SELF_CLEARANCE = 0.8  # non-adjacent legs must not come this close
_GOAL_START_MIN = 2.5  # loop routes make the benchmark trivially gameable


def _in_box(x, y, size, margin) -> bool:
    return margin <= x <= size - margin and margin <= y <= size - margin


def _route_attempt(rng: np.random.Generator, cfg: GeneratorConfig):
    """One rejection-sampling attempt at a route; None when geometry fails."""
    size = cfg.room_size
    n_lm = int(rng.integers(cfg.landmarks_min, cfg.landmarks_max + 1))
    labels = [str(s) for s in rng.choice(np.array(cfg.vocabulary), size=n_lm, replace=False)]
    if cfg.duplicate_label is not None and cfg.duplicate_count >= 2:
        k = min(cfg.duplicate_count, n_lm)
        for i in rng.choice(n_lm, size=k, replace=False):
            labels[int(i)] = str(cfg.duplicate_label)

    lo, hi = 2.5, size - 2.5
    if hi < lo:
        lo = hi = size / 2.0
    x = rng.uniform(lo, hi)
    y = rng.uniform(lo, hi)
    heading = rng.uniform(-math.pi, math.pi)
    waypoints = [(x, y)]
    sentences = []
    landmarks = []  # (label, world position), in mention order

    for i, label in enumerate(labels):
        # optionally turn first (never before the opening sentence)
        if i > 0:
            L_peek = sum(_LEG_RANGE) / 2.0
            options = []
            if rng.random() < 0.55:
                options = [("turn left", heading + math.pi / 2), ("turn right", heading - math.pi / 2)]
                if rng.random() < 0.5:
                    options.reverse()
            options.append((None, heading))
            chosen = None
            for text, h in options:
                if _in_box(x + L_peek * math.cos(h), y + L_peek * math.sin(h), size, _MARGIN):
                    chosen = (text, h)
                    break
            if chosen is None:
                # face back toward the room center
                h = math.atan2(size / 2.0 - y, size / 2.0 - x)
                err = math.remainder(h - heading, 2.0 * math.pi)
                chosen = ("turn left" if err > 0 else "turn right",
                          heading + math.copysign(math.pi / 2, err))
            if chosen[0] is not None:
                sentences.append(chosen[0])
                heading = math.remainder(chosen[1], 2.0 * math.pi)
                waypoints.append((x, y))

        L = rng.uniform(*_LEG_RANGE)
        nx = x + L * math.cos(heading)
        ny = y + L * math.sin(heading)
        if not _in_box(nx, ny, size, _MARGIN):
            return None

        last = i == n_lm - 1
        past = (not last) and rng.random() < 0.3
        if past:
            side = 1.0 if rng.random() < 0.5 else -1.0
            off = rng.uniform(0.5, 0.9)
            mx = (x + nx) / 2.0 - side * off * math.sin(heading)
            my = (y + ny) / 2.0 + side * off * math.cos(heading)
            landmarks.append((label, (mx, my)))
            sentences.append(f"go past the {label}")
        elif last:
            landmarks.append((label, (nx, ny)))
            sentences.append(f"stop at the {label}")
        else:
            lx = nx + rng.uniform(-0.4, 0.4) * -math.sin(heading) + rng.uniform(0.0, 0.3) * math.cos(heading)
            ly = ny + rng.uniform(-0.4, 0.4) * math.cos(heading) + rng.uniform(0.0, 0.3) * math.sin(heading)
            if not _in_box(lx, ly, size, _MARGIN * 0.6):
                lx, ly = nx, ny
            landmarks.append((label, (lx, ly)))
            sentences.append(f"go forward to the {label}")
        x, y = nx, ny
        waypoints.append((x, y))

    # landmarks must stay mutually distinguishable in space
    for i in range(len(landmarks)):
        for j in range(i + 1, len(landmarks)):
            (_, a), (_, b) = landmarks[i], landmarks[j]
            if math.hypot(a[0] - b[0], a[1] - b[1]) < 1.0:
                return None
    # keep the route a genuinely simple path and the goal away from the start
    if math.hypot(x - waypoints[0][0], y - waypoints[0][1]) < _GOAL_START_MIN:
        return None
    segs = [
        (a, b)
        for a, b in zip(waypoints, waypoints[1:])
        if math.hypot(b[0] - a[0], b[1] - a[1]) > 1e-9
    ]
    for i in range(len(segs)):
        for j in range(i + 2, len(segs)):
            if segment_segment_distance(segs[i][0], segs[i][1], segs[j][0], segs[j][1]) < _ROUTE_SELF_CLEARANCE:
                return None
    start = Pose2(waypoints[0][0], waypoints[0][1], heading_of_first_leg(waypoints))
    return start, waypoints, sentences, landmarks


def heading_of_first_leg(waypoints) -> float:
    for (x0, y0), (x1, y1) in zip(waypoints, waypoints[1:]):
        if math.hypot(x1 - x0, y1 - y0) > 1e-9:
            return math.atan2(y1 - y0, x1 - x0)
    return 0.0


def _place_walls(rng: np.random.Generator, cfg: GeneratorConfig, waypoints, landmarks):
    size = cfg.room_size
    walls = [
        (0.0, 0.0, size, 0.0),
        (size, 0.0, size, size),
        (size, size, 0.0, size),
        (0.0, size, 0.0, 0.0),
    ]
    route = list(zip(waypoints, waypoints[1:]))
    for _ in range(cfg.interior_walls):
        for _attempt in range(40):
            length = rng.uniform(1.2, 2.2)
            horizontal = rng.random() < 0.5
            wx = rng.uniform(0.4, size - 0.4 - (length if horizontal else 0.0))
            wy = rng.uniform(0.4, size - 0.4 - (0.0 if horizontal else length))
            cand = (wx, wy, wx + length, wy) if horizontal else (wx, wy, wx, wy + length)
            a, b = (cand[0], cand[1]), (cand[2], cand[3])
            ok = all(
                segment_segment_distance(a, b, p, q) >= _WALL_ROUTE_CLEARANCE for p, q in route
            ) and all(
                point_segment_distance(px, py, *cand) >= _WALL_LANDMARK_CLEARANCE
                for _, (px, py) in landmarks
            ) and all(
                segment_segment_distance(a, b, (w[0], w[1]), (w[2], w[3])) >= 0.4
                for w in walls[4:]
            )
            if ok:
                walls.append(cand)
                break
    return walls


def generate_episode(rng: np.random.Generator, episode_seed: int, cfg: GeneratorConfig, scene_ref: str):
    for _ in range(cfg.max_retries):
        attempt = _route_attempt(rng, cfg)
        if attempt is None:
            continue
        start, waypoints, sentences, landmarks = attempt
        walls = _place_walls(rng, cfg, waypoints, landmarks)
        scene = Scene(
            landmarks=tuple(
                SceneLandmark(i, label, Point2(px, py)) for i, (label, (px, py)) in enumerate(landmarks)
            ),
            walls=tuple(walls),
            bounds=(0.0, 0.0, cfg.room_size, cfg.room_size),
        )
        text = ". ".join(sentences) + "."
        ir = parse_constrained(text)
        got = [lm.label for lm in ir.landmarks]
        want = [label for label, _ in landmarks]
        if got != want:
            raise GenerationError(f"instruction round-trip mismatch: {got} vs {want}")
        episode = Episode(
            scene_ref=scene_ref,
            start=start,
            instruction_text=text,
            ir=ir,
            reference_path=tuple(Point2(px, py) for px, py in waypoints),
            goal=Point2(*landmarks[-1][1]),
            seed=episode_seed,
        )
        return scene, episode
    raise GenerationError(
        f"episode placement failed after {cfg.max_retries} retries (config {cfg.to_json()})"
    )


def generate_episode_suite(cfg: GeneratorConfig, seed: int, out_dir) -> list[tuple[Scene, Episode]]:
    """Write a deterministic suite to out_dir; returns the generated pairs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    names = []
    for idx in range(cfg.episodes):
        base = np.random.SeedSequence((seed, idx))
        gen_child, run_child = base.spawn(2)
        rng = np.random.default_rng(gen_child)
        episode_seed = int(run_child.generate_state(1)[0])
        scene_name = f"scene_{idx:03d}.json"
        episode_name = f"episode_{idx:03d}.json"
        try:
            scene, episode = generate_episode(rng, episode_seed, cfg, scene_name)
        except GenerationError as exc:
            raise GenerationError(f"suite seed {seed}, episode {idx}: {exc}") from exc
        _dump(scene_to_json(scene), out / scene_name)
        _dump(episode_to_json(episode), out / episode_name)
        pairs.append((scene, episode))
        names.append(episode_name)
    # "config" is reserved for the evaluation settings a suite is pinned to
    _dump({"seed": seed, "generator": cfg.to_json(), "episodes": names}, out / "suite.json")
    return pairs


def load_suite(suite_dir) -> list[tuple[Scene, Episode]]:
    root = Path(suite_dir)
    manifest = json.loads((root / "suite.json").read_text())
    out = []
    for name in manifest["episodes"]:
        episode = load_episode(root / name)
        scene = load_scene(root / episode.scene_ref)
        out.append((scene, episode))
    return out
