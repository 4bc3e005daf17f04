"""Core domain types: frames, trajectories, instructions and verification records.

Every type here is an immutable value; construction validates the structural
invariants so downstream stages can rely on them without re-checking.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import InvalidTrajectory

UNKNOWN_ROOM = "unknown"

_CONTROL_CHARS = set(chr(c) for c in range(0x20) if chr(c) not in "\t\n") | {"\x7f"}


class Action(Enum):
    """Discrete ego-motions between trajectory nodes.

    STOP is reserved for the final room node of a trajectory; the inter-node
    inference clients only ever emit the three planar motions.
    """

    FORWARD = "forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    STOP = "stop"

    @property
    def phrase(self) -> str:
        """Canonical natural-language rendering used in instructions."""
        return _ACTION_PHRASES[self]

    @property
    def triplet_name(self) -> str:
        """Compact name used in the serialized triplet block of prompts."""
        return _ACTION_TRIPLET_NAMES[self]

    @classmethod
    def from_triplet_name(cls, name: str) -> "Action":
        return _TRIPLET_NAME_TO_ACTION[name]

    @classmethod
    def from_wire(cls, value: str) -> "Action":
        return cls(value)


_ACTION_PHRASES = {
    Action.FORWARD: "go straight",
    Action.TURN_LEFT: "turn left",
    Action.TURN_RIGHT: "turn right",
    Action.STOP: "stop",
}

_ACTION_TRIPLET_NAMES = {
    Action.FORWARD: "Forward",
    Action.TURN_LEFT: "TurnLeft",
    Action.TURN_RIGHT: "TurnRight",
    Action.STOP: "Stop",
}

_TRIPLET_NAME_TO_ACTION = {v: k for k, v in _ACTION_TRIPLET_NAMES.items()}

MOVE_ACTIONS = (Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT)


@dataclass(frozen=True)
class FrameRef:
    """Reference to one extracted video frame."""

    video_id: str
    frame_index: int
    timestamp_s: float

    def __post_init__(self):
        if not self.video_id:
            raise ValueError("video_id must be non-empty")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        if self.timestamp_s < 0:
            raise ValueError("timestamp_s must be non-negative")

    @property
    def key(self) -> str:
        """Stable identifier used by caching clients and feature providers."""
        return f"{self.video_id}/{self.frame_index:05d}"


@dataclass(frozen=True)
class RoomLabel:
    """Room type plus the critical objects visible at a node.

    ``room_type`` is expected to be a canonical lexicon entry (lowercase);
    canonicalization happens at the lexicon layer, this type only enforces
    shape. Unknown rooms are carried as :data:`UNKNOWN_ROOM` so that they
    surface as verification mismatches instead of silently passing.
    """

    room_type: str
    objects: tuple[str, ...] = ()
    room_confidence: float = 1.0

    def __post_init__(self):
        if not self.room_type or self.room_type != self.room_type.strip().lower():
            raise ValueError(f"room_type must be a non-empty lowercase string: {self.room_type!r}")
        if len(set(self.objects)) != len(self.objects):
            raise ValueError("objects must not contain duplicates")
        if not 0.0 <= self.room_confidence <= 1.0:
            raise ValueError("room_confidence must lie in [0, 1]")


class NodeKind(Enum):
    ROOM = "room"
    TRANSITION = "transition"


@dataclass(frozen=True)
class TrajectoryNode:
    """One trajectory step: a room node (labeled, actioned) or a transition frame."""

    kind: NodeKind
    frame: FrameRef
    label: Optional[RoomLabel] = None
    action: Optional[Action] = None

    def __post_init__(self):
        if self.kind is NodeKind.TRANSITION and (self.label is not None or self.action is not None):
            raise ValueError("transition nodes carry neither label nor action")


@dataclass(frozen=True)
class Trajectory:
    """Ordered sequence of room and transition nodes sampled from one video.

    Validated invariants:
      * first and last nodes are room nodes, with at least two room nodes;
      * frame_index strictly increases along the node order;
      * room labels are all-present or all-absent across room nodes, same for
        actions, and actions require labels (grounding follows labeling);
      * when grounded, the final room action is STOP and all earlier room
        actions are planar motions.
    """

    trajectory_id: str
    video_id: str
    nodes: tuple[TrajectoryNode, ...]
    seed: int

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 2:
            raise InvalidTrajectory("a trajectory needs at least two nodes")
        if nodes[0].kind is not NodeKind.ROOM or nodes[-1].kind is not NodeKind.ROOM:
            raise InvalidTrajectory("first and last nodes must be room nodes")
        rooms = [n for n in nodes if n.kind is NodeKind.ROOM]
        if len(rooms) < 2:
            raise InvalidTrajectory("a trajectory needs at least two room nodes")
        for a, b in zip(nodes, nodes[1:]):
            if a.frame.frame_index >= b.frame.frame_index:
                raise InvalidTrajectory("frame_index must strictly increase along the trajectory")
        for n in nodes:
            if n.frame.video_id != self.video_id:
                raise InvalidTrajectory("all frames must come from the trajectory's video")
        labeled = [n.label is not None for n in rooms]
        actioned = [n.action is not None for n in rooms]
        if any(labeled) and not all(labeled):
            raise InvalidTrajectory("room labels must be all-present or all-absent")
        if any(actioned) and not all(actioned):
            raise InvalidTrajectory("room actions must be all-present or all-absent")
        if all(actioned) and not all(labeled):
            raise InvalidTrajectory("a grounded trajectory must be labeled")
        if all(actioned):
            if rooms[-1].action is not Action.STOP:
                raise InvalidTrajectory("the final room action must be STOP")
            if any(n.action not in MOVE_ACTIONS for n in rooms[:-1]):
                raise InvalidTrajectory("non-final room actions must be planar motions")

    @property
    def room_nodes(self) -> tuple[TrajectoryNode, ...]:
        return tuple(n for n in self.nodes if n.kind is NodeKind.ROOM)

    @property
    def num_rooms(self) -> int:
        return len(self.room_nodes)

    @property
    def is_labeled(self) -> bool:
        return all(n.label is not None for n in self.room_nodes)

    @property
    def is_grounded(self) -> bool:
        return self.is_labeled and all(n.action is not None for n in self.room_nodes)

    def with_room_labels(self, labels: Sequence[RoomLabel]) -> "Trajectory":
        """Return a copy whose room nodes carry ``labels`` in node order."""
        rooms = self.room_nodes
        if len(labels) != len(rooms):
            raise ValueError(f"expected {len(rooms)} labels, got {len(labels)}")
        out, it = [], iter(labels)
        for n in self.nodes:
            if n.kind is NodeKind.ROOM:
                out.append(dataclasses.replace(n, label=next(it)))
            else:
                out.append(n)
        return dataclasses.replace(self, nodes=tuple(out))

    def with_room_actions(self, actions: Sequence[Action]) -> "Trajectory":
        """Return a copy whose room nodes carry ``actions`` in node order."""
        rooms = self.room_nodes
        if len(actions) != len(rooms):
            raise ValueError(f"expected {len(rooms)} actions, got {len(actions)}")
        out, it = [], iter(actions)
        for n in self.nodes:
            if n.kind is NodeKind.ROOM:
                out.append(dataclasses.replace(n, action=next(it)))
            else:
                out.append(n)
        return dataclasses.replace(self, nodes=tuple(out))


@dataclass(frozen=True)
class NodeActionPair:
    """The (room type, action) unit compared during verification."""

    room_type: str
    action: Action

    def __post_init__(self):
        if not self.room_type or self.room_type != self.room_type.strip().lower():
            raise ValueError("room_type must be a non-empty lowercase canonical string")


class Granularity(Enum):
    """Instruction detail level; FINE additionally includes environment
    descriptions and the key objects attached to each room label."""

    COARSE = "coarse"
    FINE = "fine"

    @property
    def includes_objects(self) -> bool:
        return self is Granularity.FINE


@dataclass(frozen=True)
class CleanupEdit:
    """One normalization edit: which rule fired and what it rewrote."""

    rule_id: str
    before: str
    after: str


@dataclass(frozen=True)
class Instruction:
    """A generated navigation instruction after normalization."""

    text: str
    granularity: Granularity
    model_id: str
    attempt: int
    cleanup_edits: tuple[CleanupEdit, ...] = ()

    def __post_init__(self):
        if not self.text:
            raise ValueError("instruction text must be non-empty")
        if any(ch in _CONTROL_CHARS for ch in self.text):
            raise ValueError("instruction text must not contain control characters")
        if self.text[-1] not in ".!?":
            raise ValueError("instruction text must end with terminal punctuation")
        if self.attempt < 1:
            raise ValueError("attempt is 1-based")


class VerdictKind(Enum):
    PASS = "pass"
    MISMATCH = "mismatch"
    EXTRACTION_FAILURE = "extraction_failure"


@dataclass(frozen=True)
class MismatchEntry:
    """One differing comparison index; ``got`` is absent where the extraction
    ran short, ``expected`` is absent where it ran long."""

    index: int
    expected: Optional[NodeActionPair]
    got: Optional[NodeActionPair]


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    mismatches: tuple[MismatchEntry, ...] = ()

    def __post_init__(self):
        if self.kind is VerdictKind.MISMATCH and not self.mismatches:
            raise ValueError("a mismatch verdict must list the differing indices")
        if self.kind is not VerdictKind.MISMATCH and self.mismatches:
            raise ValueError("only mismatch verdicts carry entries")

    @property
    def ok(self) -> bool:
        return self.kind is VerdictKind.PASS

    @classmethod
    def passed(cls) -> "Verdict":
        return cls(VerdictKind.PASS)

    @classmethod
    def mismatch(cls, entries: Iterable[MismatchEntry]) -> "Verdict":
        return cls(VerdictKind.MISMATCH, tuple(entries))

    @classmethod
    def extraction_failure(cls) -> "Verdict":
        return cls(VerdictKind.EXTRACTION_FAILURE)


EXTRACTOR_LMM = "lmm"
EXTRACTOR_RULE_BASED = "rule_based"


@dataclass(frozen=True)
class VerificationRecord:
    """Audit trail of one verification outcome."""

    extracted: tuple[NodeActionPair, ...]
    verdict: Verdict
    attempts_used: int
    extractor: str

    def __post_init__(self):
        if self.attempts_used < 1:
            raise ValueError("attempts_used is 1-based")
        if self.extractor not in (EXTRACTOR_LMM, EXTRACTOR_RULE_BASED):
            raise ValueError(f"unknown extractor {self.extractor!r}")


class PairStatus(Enum):
    VERIFIED = "verified"
    REJECTED = "rejected"
    # Emitted only when the verification stage is explicitly disabled
    # (ablation runs); carries whatever record was computed for audit.
    UNCHECKED = "unchecked"


@dataclass(frozen=True)
class PathInstructionPair:
    """A trajectory, its instruction, and the verification outcome."""

    pair_id: str
    trajectory: Trajectory
    instruction: Instruction
    verification: Optional[VerificationRecord]
    status: PairStatus

    def __post_init__(self):
        if self.status is PairStatus.VERIFIED:
            if self.verification is None or not self.verification.verdict.ok:
                raise ValueError("a verified pair requires a passing verification record")
        if self.status is PairStatus.REJECTED and self.verification is None:
            raise ValueError("a rejected pair must carry its final verification record")
