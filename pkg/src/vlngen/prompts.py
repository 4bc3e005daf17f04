"""Prompt construction for instruction generation and pair extraction.

Templates live in ``data/templates`` as UTF-8 files with ``{{placeholder}}``
tokens. Each file starts with a ``SYSTEM:`` line followed by ``---`` and the
user-text body. Templates are content-hashed; the hash is recorded on every
prompt so verification records can cite the exact wording used.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

from .errors import EmptyInstruction, PreconditionViolated
from .grounding import triplet_view
from .model import Action, Granularity, RoomLabel, Trajectory

TEMPLATES_DIR = Path(__file__).parent / "data" / "templates"

_PLACEHOLDER_RE = re.compile(r"\{\{([a-z0-9_]+)\}\}")
_TRIPLET_LINE_RE = re.compile(
    r"^\(image#(\d+), (.+), (None|Forward|TurnLeft|TurnRight|Stop)\)$"
)

GRANULARITY_WORDS = {Granularity.COARSE: "concise", Granularity.FINE: "detailed"}
_WORD_TO_GRANULARITY = {v: k for k, v in GRANULARITY_WORDS.items()}


@dataclass(frozen=True)
class ImageAttachment:
    """Reference to one image sent with a prompt; the payload is resolved
    lazily from ``path`` by backends that actually transmit pixels."""

    key: str
    path: Optional[Path] = None
    media_type: str = "image/png"


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str
    images: tuple[ImageAttachment, ...]
    template_id: str
    template_version: str

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")


class Template(NamedTuple):
    template_id: str
    version: str
    system_text: str
    body: str


@lru_cache(maxsize=None)
def load_template(name: str) -> Template:
    """Full templates carry a ``SYSTEM:`` header before ``---``; snippet files
    (granularity directives) are body-only."""
    path = TEMPLATES_DIR / f"{name}.txt"
    raw = path.read_text(encoding="utf-8")
    version = hashlib.sha256(raw.encode("utf-8")).hexdigest()[:12]
    if "\n---\n" in raw:
        head, _, body = raw.partition("\n---\n")
        if not head.startswith("SYSTEM: "):
            raise ValueError(f"{path}: template must start with a SYSTEM: line")
        return Template(name, version, head[len("SYSTEM: ") :].strip(), body.strip())
    return Template(name, version, "", raw.strip())


def template_hashes() -> dict[str, str]:
    """Version hashes of every shipped template, for run records."""
    return {
        p.stem: load_template(p.stem).version for p in sorted(TEMPLATES_DIR.glob("*.txt"))
    }


def _fill(body: str, values: dict[str, str]) -> str:
    def sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in values:
            raise KeyError(f"template placeholder {{{{{key}}}}} has no value")
        return values[key]

    return _PLACEHOLDER_RE.sub(sub, body)


def serialize_label(label: RoomLabel) -> str:
    """Room label as prompt text: "<object>, <object> with <room type>"."""
    if label.objects:
        return f"{', '.join(label.objects)} with {label.room_type}"
    return label.room_type


def parse_label(text: str) -> tuple[str, tuple[str, ...]]:
    if " with " in text:
        objects_part, room = text.rsplit(" with ", 1)
        return room.strip(), tuple(o.strip() for o in objects_part.split(","))
    return text.strip(), ()


def triplet_block(traj: Trajectory) -> str:
    """The serialized triplet list, one node per line, in node order."""
    lines = []
    for i, (frame, label, action) in enumerate(triplet_view(traj), start=1):
        if label is None:
            lines.append(f"(image#{i}, None, None)")
        else:
            lines.append(f"(image#{i}, {serialize_label(label)}, {action.triplet_name})")
    return "\n".join(lines)


class ParsedTriplet(NamedTuple):
    image_index: int
    room_type: Optional[str]
    objects: tuple[str, ...]
    action: Optional[Action]


def parse_triplet_block(user_text: str) -> list[ParsedTriplet]:
    """Recover the triplet list from a generation prompt's user text."""
    lines = user_text.splitlines()
    try:
        start = next(i for i, l in enumerate(lines) if l.strip() == "Route triplets:") + 1
    except StopIteration:
        raise ValueError("prompt contains no triplet block") from None
    parsed: list[ParsedTriplet] = []
    for line in lines[start:]:
        if not line.strip():
            break
        m = _TRIPLET_LINE_RE.match(line.strip())
        if m is None:
            raise ValueError(f"malformed triplet line: {line!r}")
        index, label_text, action_name = int(m.group(1)), m.group(2), m.group(3)
        if label_text == "None" and action_name == "None":
            parsed.append(ParsedTriplet(index, None, (), None))
        else:
            room, objects = parse_label(label_text)
            parsed.append(ParsedTriplet(index, room, objects, Action.from_triplet_name(action_name)))
    if not parsed:
        raise ValueError("empty triplet block")
    return parsed


class RoomStep(NamedTuple):
    """One room node as seen by the renderer: its type, objects, and the
    action taken when leaving it."""

    room_type: str
    objects: tuple[str, ...]
    action: Action


def room_steps(traj: Trajectory) -> list[RoomStep]:
    return [
        RoomStep(n.label.room_type, n.label.objects, n.action) for n in traj.room_nodes
    ]


def steps_from_parsed(parsed: Sequence[ParsedTriplet]) -> list[RoomStep]:
    return [
        RoomStep(t.room_type, t.objects, t.action) for t in parsed if t.room_type is not None
    ]


def _object_phrase(objects: Sequence[str]) -> str:
    items = [f"the {o}" for o in objects]
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


def render_reference_instruction(steps: Sequence[RoomStep], granularity: Granularity) -> str:
    """Canonical instruction for a route; doubles as the format example in
    generation prompts and as the faithful mock backend's renderer.

    The phrasing keeps each (room, action, next room) unit inside one
    sentence, with the action following the room it is taken from, so the
    proximity extractor recovers exactly the (room, action) ground truth.
    """
    if len(steps) < 2:
        raise ValueError("a route needs at least two rooms")
    clauses = []
    for t, step in enumerate(steps):
        mention = f"the {step.room_type}"
        if granularity.includes_objects and step.objects:
            mention += f" where you can see {_object_phrase(step.objects)}"
        if t == 0:
            clauses.append(f"Start from {mention}")
        else:
            clauses.append(f"{steps[t - 1].action.phrase} into {mention}")
    text = clauses[0] + ", " + clauses[1]
    for clause in clauses[2:]:
        text += ", then " + clause
    return f"{text}. Stop when you reach the {steps[-1].room_type}."


_FORMAT_EXAMPLE_STEPS = (
    RoomStep("hallway", ("mirror",), Action.FORWARD),
    RoomStep("living room", ("sofa", "television"), Action.STOP),
)


def build_generation_prompt(
    traj: Trajectory,
    granularity: Granularity,
    *,
    image_paths: Optional[dict[str, Path]] = None,
) -> Prompt:
    """Instruction-generation prompt: task definition with granularity
    directives, the serialized triplets with images attached in the same
    order, the no-invented-details directive, and one format example."""
    if not traj.is_grounded:
        raise PreconditionViolated("generation prompts require a grounded trajectory")
    template = load_template("generation")
    directives = load_template(f"granularity_{granularity.value}")
    user_text = _fill(
        template.body,
        {
            "granularity_directives": directives.body,
            "granularity": GRANULARITY_WORDS[granularity],
            "triplets": triplet_block(traj),
            "format_example": render_reference_instruction(_FORMAT_EXAMPLE_STEPS, granularity),
        },
    )
    images = tuple(
        ImageAttachment(
            key=n.frame.key,
            path=image_paths.get(n.frame.key) if image_paths else None,
        )
        for n in traj.nodes
    )
    return Prompt(
        system_text=template.system_text,
        user_text=user_text,
        images=images,
        template_id=template.template_id,
        template_version=template.version,
    )


def parse_granularity(user_text: str) -> Granularity:
    m = re.search(r"^Granularity: (\w+)$", user_text, re.MULTILINE)
    if m is None or m.group(1) not in _WORD_TO_GRANULARITY:
        raise ValueError("prompt carries no recognizable granularity line")
    return _WORD_TO_GRANULARITY[m.group(1)]


def build_extraction_prompt(instruction_text: str) -> Prompt:
    """Pair-extraction prompt; embeds the instruction verbatim, attaches no images."""
    if not instruction_text or not instruction_text.strip():
        raise EmptyInstruction("cannot build an extraction prompt from empty text")
    template = load_template("extraction")
    return Prompt(
        system_text=template.system_text,
        user_text=_fill(template.body, {"instruction": instruction_text}),
        images=(),
        template_id=template.template_id,
        template_version=template.version,
    )


def parse_embedded_instruction(user_text: str) -> str:
    m = re.search(r"<<<\n(.*)\n>>>", user_text, re.DOTALL)
    if m is None:
        raise ValueError("prompt carries no embedded instruction")
    return m.group(1)
