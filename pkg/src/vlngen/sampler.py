"""Trajectory sampling from per-video annotated frame sequences.

Frames whose room-label confidence clears a threshold become room candidates.
Candidates are grouped into room segments (maximal consecutive runs of the
same room type); a trajectory is a chain of segments with consecutive distinct
room types, represented by the middle frame of each segment, with a bounded
number of non-candidate frames in between kept as transition nodes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .clients import LabelClient
from .errors import NoValidTrajectory, PreconditionViolated
from .model import FrameRef, NodeKind, RoomLabel, Trajectory, TrajectoryNode, UNKNOWN_ROOM
from .sampling_util import evenly_spaced


@dataclass(frozen=True)
class AnnotatedFrame:
    frame: FrameRef
    label: RoomLabel
    is_room_candidate: bool


@dataclass(frozen=True)
class SamplerConfig:
    confidence_threshold: float = 0.6
    min_rooms: int = 2
    max_rooms: int = 7
    max_transitions_between: int = 3
    trajectories_per_video: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0, 1]")
        if self.min_rooms < 2:
            raise ValueError("min_rooms must be at least 2")
        if self.max_rooms < self.min_rooms:
            raise ValueError("max_rooms must be >= min_rooms")
        if self.max_transitions_between < 0:
            raise ValueError("max_transitions_between must be non-negative")
        if self.trajectories_per_video < 1:
            raise ValueError("trajectories_per_video must be positive")


def annotate_frames(
    frames: list[FrameRef], labeler: LabelClient, config: SamplerConfig
) -> list[AnnotatedFrame]:
    """Label every frame once and flag the room candidates.

    Frames must be non-empty and strictly increasing in frame_index. A frame
    is a candidate iff its label confidence reaches the configured threshold
    and its room type is known.
    """
    if not frames:
        raise PreconditionViolated("annotate_frames requires a non-empty frame list")
    for a, b in zip(frames, frames[1:]):
        if a.frame_index >= b.frame_index:
            raise PreconditionViolated("frames must strictly increase in frame_index")
    out = []
    for frame in frames:
        label = labeler.label(frame)
        candidate = (
            label.room_confidence >= config.confidence_threshold
            and label.room_type != UNKNOWN_ROOM
        )
        out.append(AnnotatedFrame(frame=frame, label=label, is_room_candidate=candidate))
    return out


@dataclass(frozen=True)
class _Segment:
    """Maximal run of consecutive candidate frames sharing one room type."""

    room_type: str
    start: int  # positions into the annotated list, inclusive
    end: int  # inclusive
    representative: int  # position of the middle frame

    @classmethod
    def from_span(cls, annotated: list[AnnotatedFrame], start: int, end: int) -> "_Segment":
        return cls(
            room_type=annotated[start].label.room_type,
            start=start,
            end=end,
            representative=(start + end) // 2,
        )


def room_segments(annotated: list[AnnotatedFrame]) -> list[_Segment]:
    segments: list[_Segment] = []
    run_start = None
    for i, af in enumerate(annotated):
        if af.is_room_candidate:
            if run_start is None:
                run_start = i
            elif annotated[run_start].label.room_type != af.label.room_type:
                segments.append(_Segment.from_span(annotated, run_start, i - 1))
                run_start = i
        else:
            if run_start is not None:
                segments.append(_Segment.from_span(annotated, run_start, i - 1))
                run_start = None
    if run_start is not None:
        segments.append(_Segment.from_span(annotated, run_start, len(annotated) - 1))
    return segments


def _distinct_chain(segments: list[_Segment], start: int) -> list[int]:
    """Greedy chain of segment indices with consecutive distinct room types."""
    chain = [start]
    for i in range(start + 1, len(segments)):
        if segments[i].room_type != segments[chain[-1]].room_type:
            chain.append(i)
    return chain


def sample_trajectory(
    annotated: list[AnnotatedFrame], config: SamplerConfig, draw_index: int
) -> Trajectory:
    """Draw one trajectory; deterministic for fixed (annotated, config, draw_index).

    Raises NoValidTrajectory when no chain of at least ``min_rooms`` segments
    with consecutive distinct room types exists.
    """
    rng = random.Random(f"{config.seed}:{draw_index}")
    segments = room_segments(annotated)
    chains = {s: _distinct_chain(segments, s) for s in range(len(segments))}
    valid_starts = [s for s, chain in chains.items() if len(chain) >= config.min_rooms]
    if not valid_starts:
        raise NoValidTrajectory(
            f"fewer than {config.min_rooms} distinct-room candidates in order"
        )
    start = rng.choice(valid_starts)
    chain = chains[start]
    num_rooms = rng.randint(config.min_rooms, min(config.max_rooms, len(chain)))
    chosen = [segments[i] for i in chain[:num_rooms]]

    nodes: list[TrajectoryNode] = []
    for seg, nxt in zip(chosen, chosen[1:] + [None]):
        nodes.append(TrajectoryNode(NodeKind.ROOM, annotated[seg.representative].frame))
        if nxt is None:
            continue
        between = [
            annotated[i]
            for i in range(seg.representative + 1, nxt.representative)
            if not annotated[i].is_room_candidate
        ]
        for af in evenly_spaced(between, config.max_transitions_between):
            nodes.append(TrajectoryNode(NodeKind.TRANSITION, af.frame))

    video_id = annotated[0].frame.video_id
    return Trajectory(
        trajectory_id=f"{video_id}/d{draw_index:03d}",
        video_id=video_id,
        nodes=tuple(nodes),
        seed=config.seed,
    )


def sample_many(annotated: list[AnnotatedFrame], config: SamplerConfig) -> list[Trajectory]:
    """All draws for one video, invalid draws dropped, identical node sequences deduplicated."""
    out: list[Trajectory] = []
    seen: set[tuple] = set()
    for draw_index in range(config.trajectories_per_video):
        try:
            traj = sample_trajectory(annotated, config, draw_index)
        except NoValidTrajectory:
            continue
        signature = tuple((n.kind.value, n.frame.frame_index) for n in traj.nodes)
        if signature in seen:
            continue
        seen.add(signature)
        out.append(traj)
    return out
