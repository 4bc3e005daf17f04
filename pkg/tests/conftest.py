from __future__ import annotations

import random
from pathlib import Path

import pytest

from vlngen.lexicon import LexiconBundle
from vlngen.model import (
    Action,
    FrameRef,
    MOVE_ACTIONS,
    NodeKind,
    RoomLabel,
    Trajectory,
    TrajectoryNode,
)
from vlngen.verifier import load_cleanup_rules

REPO_ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def bundle() -> LexiconBundle:
    return LexiconBundle.load_default()


@pytest.fixture(scope="session")
def rules():
    return load_cleanup_rules()


def random_grounded_trajectory(
    rng: random.Random,
    bundle: LexiconBundle,
    *,
    num_rooms: int | None = None,
    video_id: str = "vid",
    with_objects: bool = True,
) -> Trajectory:
    """Grounded trajectory with consecutive-distinct rooms and sprinkled
    transition frames; rooms/objects/actions drawn from the real lexicons."""
    k = num_rooms or rng.randint(2, 7)
    rooms: list[str] = []
    for _ in range(k):
        choices = [c for c in bundle.rooms.canonical if not rooms or c != rooms[-1]]
        rooms.append(rng.choice(choices))
    nodes: list[TrajectoryNode] = []
    frame_index = 0
    for t, room in enumerate(rooms):
        objects = ()
        if with_objects and rng.random() < 0.7:
            objects = tuple(rng.sample(list(bundle.objects), rng.randint(1, 2)))
        action = Action.STOP if t == k - 1 else rng.choice(MOVE_ACTIONS)
        nodes.append(
            TrajectoryNode(
                NodeKind.ROOM,
                FrameRef(video_id, frame_index, float(frame_index)),
                RoomLabel(room, objects, round(0.6 + rng.random() * 0.39, 2)),
                action,
            )
        )
        frame_index += 1
        if t < k - 1:
            for _ in range(rng.randint(0, 2)):
                nodes.append(
                    TrajectoryNode(
                        NodeKind.TRANSITION, FrameRef(video_id, frame_index, float(frame_index))
                    )
                )
                frame_index += 1
    return Trajectory(f"{video_id}/d000", video_id, tuple(nodes), seed=rng.randrange(2**16))


def ungrounded_copy(traj: Trajectory) -> Trajectory:
    nodes = tuple(
        TrajectoryNode(n.kind, n.frame, None, None) for n in traj.nodes
    )
    return Trajectory(traj.trajectory_id, traj.video_id, nodes, traj.seed)
