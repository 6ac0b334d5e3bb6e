"""Instruction decomposition: text -> (waypoints, landmarks, actions, relations).

Three entry points produce the same IR: a deterministic parser for a small
constrained grammar, a JSON loader for pre-decomposed files, and a pluggable
HTTP decomposer client.  All of them funnel through the same validation, so
downstream code only ever sees invariant-checked IR.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class ActionVerb(str, Enum):
    FORWARD = "FORWARD"
    TURN_LEFT = "TURN_LEFT"
    TURN_RIGHT = "TURN_RIGHT"
    TURN_AROUND = "TURN_AROUND"
    PASS = "PASS"
    ENTER = "ENTER"
    STOP = "STOP"


class SpatialRelation(str, Enum):
    AT = "AT"
    LEFT_OF = "LEFT_OF"
    RIGHT_OF = "RIGHT_OF"
    AHEAD = "AHEAD"
    BEHIND = "BEHIND"
    PAST = "PAST"


@dataclass
class Waypoint:
    index: int


@dataclass
class Landmark:
    index: int
    label: str


@dataclass
class Action:
    from_wp: int
    to_wp: int
    verb: ActionVerb
    phrase: str


@dataclass
class Relation:
    waypoint: int
    landmark: int
    relation: SpatialRelation
    phrase: str


@dataclass
class InstructionIR:
    raw_text: str
    waypoints: list[Waypoint]
    landmarks: list[Landmark]
    actions: list[Action]
    relations: list[Relation]
    warnings: list[str] = field(default_factory=list)


class ParseError(ValueError):
    def __init__(self, sentence_index: int, sentence: str, reason: str = "does not match the grammar"):
        self.sentence_index = sentence_index
        self.sentence = sentence
        super().__init__(f"sentence {sentence_index} ({sentence!r}) {reason}")


class IRSchemaError(ValueError):
    """The JSON document does not match the IR schema; message names the field."""


class IRInvariantError(ValueError):
    """Structurally valid JSON whose content breaks an IR invariant."""


class DecomposerTransportError(RuntimeError):
    """The decomposer endpoint could not be reached or returned a bad status."""


class DecomposerReplyError(RuntimeError):
    """The decomposer replied with something that is not an IR JSON object."""


def validate_ir(ir: InstructionIR) -> InstructionIR:
    """Check all IR invariants; returns the IR unchanged (idempotent)."""
    n = len(ir.waypoints)
    if n < 2:
        raise IRInvariantError(f"need at least 2 waypoints, got {n}")
    for i, w in enumerate(ir.waypoints):
        if w.index != i:
            raise IRInvariantError(f"waypoint indices must be contiguous 0..{n-1}; position {i} has index {w.index}")
    m = len(ir.landmarks)
    for j, lm in enumerate(ir.landmarks):
        if lm.index != j:
            raise IRInvariantError(f"landmark indices must be contiguous 0..{m-1}; position {j} has index {lm.index}")
        if not lm.label:
            raise IRInvariantError(f"landmark {j} has an empty label")
    if len(ir.actions) != n - 1:
        raise IRInvariantError(f"expected {n-1} actions for {n} waypoints, got {len(ir.actions)}")
    for i, a in enumerate(ir.actions):
        if a.from_wp != i or a.to_wp != i + 1:
            raise IRInvariantError(f"action {i} must connect waypoint {i} to {i+1}, got {a.from_wp}->{a.to_wp}")
    referenced = set()
    for k, r in enumerate(ir.relations):
        if not 0 <= r.waypoint < n:
            raise IRInvariantError(f"relation {k} references waypoint {r.waypoint} of {n}")
        if not 0 <= r.landmark < m:
            raise IRInvariantError(f"relation {k} references landmark {r.landmark} of {m}")
        referenced.add(r.landmark)
    unreferenced = sorted(set(range(m)) - referenced)
    if unreferenced:
        raise IRInvariantError(f"landmarks {unreferenced} are not referenced by any relation")
    return ir


_SENTENCE_FORMS = [
    (re.compile(r"^go forward to the (?P<noun>[a-z][a-z ]*)$"), ActionVerb.FORWARD, SpatialRelation.AT),
    (re.compile(r"^go forward$"), ActionVerb.FORWARD, None),
    (re.compile(r"^turn left$"), ActionVerb.TURN_LEFT, None),
    (re.compile(r"^turn right$"), ActionVerb.TURN_RIGHT, None),
    (re.compile(r"^turn around$"), ActionVerb.TURN_AROUND, None),
    (re.compile(r"^go past the (?P<noun>[a-z][a-z ]*)$"), ActionVerb.PASS, SpatialRelation.PAST),
    (re.compile(r"^enter the (?P<noun>[a-z][a-z ]*)$"), ActionVerb.ENTER, SpatialRelation.AT),
    # a final stop still has to reach its target, hence FORWARD rather than STOP
    (re.compile(r"^stop at the (?P<noun>[a-z][a-z ]*)$"), ActionVerb.FORWARD, SpatialRelation.AT),
]


def parse_constrained(text: str) -> InstructionIR:
    """Parse the constrained instruction grammar, one waypoint per sentence.

    Accepted sentence forms (case-insensitive, separated by periods):
    "go forward [to the <noun>]", "turn left|right|around",
    "go past the <noun>", "enter the <noun>", "stop at the <noun>".
    """
    sentences = [s.strip() for s in text.lower().split(".")]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ParseError(0, text, "contains no sentences")
    waypoints = [Waypoint(0)]
    landmarks: list[Landmark] = []
    actions: list[Action] = []
    relations: list[Relation] = []
    for i, sentence in enumerate(sentences):
        matched = False
        for pattern, verb, relation in _SENTENCE_FORMS:
            m = pattern.match(sentence)
            if not m:
                continue
            wp = Waypoint(i + 1)
            waypoints.append(wp)
            actions.append(Action(i, i + 1, verb, sentence))
            if relation is not None:
                noun = m.group("noun").strip()
                lm = Landmark(len(landmarks), noun)
                landmarks.append(lm)
                relations.append(Relation(wp.index, lm.index, relation, sentence))
            matched = True
            break
        if not matched:
            raise ParseError(i, sentence)
    return validate_ir(InstructionIR(text, waypoints, landmarks, actions, relations))


def ir_to_json(ir: InstructionIR) -> dict:
    out = {
        "raw_text": ir.raw_text,
        "waypoints": [{"index": w.index} for w in ir.waypoints],
        "landmarks": [{"index": lm.index, "label": lm.label} for lm in ir.landmarks],
        "actions": [
            {"from": a.from_wp, "to": a.to_wp, "verb": a.verb.value, "phrase": a.phrase}
            for a in ir.actions
        ],
        "relations": [
            {"waypoint": r.waypoint, "landmark": r.landmark, "relation": r.relation.value, "phrase": r.phrase}
            for r in ir.relations
        ],
    }
    if ir.warnings:
        out["warnings"] = list(ir.warnings)
    return out


def save_ir(ir: InstructionIR, path) -> None:
    Path(path).write_text(json.dumps(ir_to_json(ir), indent=2, sort_keys=True) + "\n")


def _require(data: dict, key: str, typ, where: str):
    if key not in data:
        raise IRSchemaError(f"missing field {where}.{key}")
    value = data[key]
    if not isinstance(value, typ) or isinstance(value, bool):
        raise IRSchemaError(f"field {where}.{key} must be {typ.__name__}, got {type(value).__name__}")
    return value


def ir_from_json(data) -> InstructionIR:
    """Validate an IR JSON object (schema, then invariants)."""
    if not isinstance(data, dict):
        raise IRSchemaError(f"IR document must be an object, got {type(data).__name__}")
    raw = _require(data, "raw_text", str, "$")
    warnings = data.get("warnings", [])
    if not isinstance(warnings, list) or any(not isinstance(w, str) for w in warnings):
        raise IRSchemaError("field $.warnings must be a list of strings")
    warnings = list(warnings)

    waypoints = []
    for i, item in enumerate(_require(data, "waypoints", list, "$")):
        if not isinstance(item, dict):
            raise IRSchemaError(f"field $.waypoints[{i}] must be an object")
        waypoints.append(Waypoint(_require(item, "index", int, f"$.waypoints[{i}]")))

    landmarks = []
    for i, item in enumerate(_require(data, "landmarks", list, "$")):
        if not isinstance(item, dict):
            raise IRSchemaError(f"field $.landmarks[{i}] must be an object")
        landmarks.append(
            Landmark(
                _require(item, "index", int, f"$.landmarks[{i}]"),
                _require(item, "label", str, f"$.landmarks[{i}]"),
            )
        )

    actions = []
    for i, item in enumerate(_require(data, "actions", list, "$")):
        if not isinstance(item, dict):
            raise IRSchemaError(f"field $.actions[{i}] must be an object")
        where = f"$.actions[{i}]"
        verb_raw = _require(item, "verb", str, where)
        try:
            verb = ActionVerb(verb_raw)
        except ValueError:
            warnings.append(f"unknown verb {verb_raw!r} in action {i}; treated as FORWARD")
            verb = ActionVerb.FORWARD
        actions.append(
            Action(
                _require(item, "from", int, where),
                _require(item, "to", int, where),
                verb,
                _require(item, "phrase", str, where),
            )
        )

    relations = []
    for i, item in enumerate(_require(data, "relations", list, "$")):
        if not isinstance(item, dict):
            raise IRSchemaError(f"field $.relations[{i}] must be an object")
        where = f"$.relations[{i}]"
        rel_raw = _require(item, "relation", str, where)
        try:
            rel = SpatialRelation(rel_raw)
        except ValueError:
            raise IRSchemaError(f"field {where}.relation has unknown value {rel_raw!r}")
        relations.append(
            Relation(
                _require(item, "waypoint", int, where),
                _require(item, "landmark", int, where),
                rel,
                _require(item, "phrase", str, where),
            )
        )

    return validate_ir(InstructionIR(raw, waypoints, landmarks, actions, relations, warnings))


def load_ir(path) -> InstructionIR:
    """Load and validate an IR JSON file."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise IRSchemaError(f"not valid JSON: {e}") from e
    return ir_from_json(data)


DEFAULT_PROMPT_TEMPLATE = Path(__file__).parent / "data" / "decomposer_prompt.txt"


@dataclass
class DecomposerClient:
    """Blocking HTTP client for an external instruction decomposer.

    Sends the filled prompt template in one POST, no retries; the reply body
    must be the IR JSON object itself.
    """

    endpoint_url: str
    api_key_env: str | None = None
    prompt_template_path: str = str(DEFAULT_PROMPT_TEMPLATE)
    timeout_s: float = 30.0

    def build_prompt(self, text: str) -> str:
        template = Path(self.prompt_template_path).read_text()
        return template.replace("{instruction}", text)

    def fetch(self, text: str) -> dict:
        import os

        import requests

        headers = {}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(
                self.endpoint_url,
                json={"prompt": self.build_prompt(text)},
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
        except requests.RequestException as e:
            raise DecomposerTransportError(f"decomposer request failed: {e}") from e
        try:
            data = resp.json()
        except ValueError as e:
            raise DecomposerReplyError(f"decomposer reply is not JSON: {e}") from e
        return data


def decompose_remote(text: str, client) -> InstructionIR:
    """Fetch a decomposition from ``client`` and validate it into IR.

    Transport failures, malformed replies, and invariant violations surface
    as distinct exception types; callers typically fall back to
    parse_constrained on any of them.
    """
    data = client.fetch(text)
    if not isinstance(data, dict):
        raise DecomposerReplyError(f"decomposer reply must be a JSON object, got {type(data).__name__}")
    return ir_from_json(data)
