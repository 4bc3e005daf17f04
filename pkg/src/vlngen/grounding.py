"""Attach room labels and inter-node actions to sampled trajectories."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Optional

from .clients import ActionClient, LabelClient
from .errors import PreconditionViolated
from .model import Action, FrameRef, RoomLabel, Trajectory


class Triplet(NamedTuple):
    """The per-node unit fed to the instruction generator; transition nodes
    carry (frame, None, None)."""

    frame: FrameRef
    label: Optional[RoomLabel]
    action: Optional[Action]


def label_nodes(traj: Trajectory, client: LabelClient, *, max_workers: int = 1) -> Trajectory:
    """Label every room node; transition nodes are left untouched.

    Per-node client calls may run concurrently, bounded by ``max_workers``.
    """
    if traj.is_labeled:
        raise PreconditionViolated("trajectory is already labeled")
    rooms = traj.room_nodes
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            labels = list(pool.map(lambda n: client.label(n.frame), rooms))
    else:
        labels = [client.label(n.frame) for n in rooms]
    return traj.with_room_labels(labels)


def ground_actions(traj: Trajectory, client: ActionClient) -> Trajectory:
    """Infer the action between each consecutive room-node pair; the final
    room node's action is set to stop without consulting the client.

    Calls run sequentially in node order (K-1 calls for K room nodes).
    """
    if not traj.is_labeled:
        raise PreconditionViolated("trajectory must be labeled before grounding")
    if traj.is_grounded:
        raise PreconditionViolated("trajectory actions are already set")
    rooms = traj.room_nodes
    actions = [client.infer(a.frame, b.frame) for a, b in zip(rooms, rooms[1:])]
    actions.append(Action.STOP)
    return traj.with_room_actions(actions)


def triplet_view(traj: Trajectory) -> list[Triplet]:
    """One triplet per node, in node order; requires a fully grounded trajectory."""
    if not traj.is_grounded:
        raise PreconditionViolated("triplet_view requires a grounded trajectory")
    return [Triplet(n.frame, n.label, n.action) for n in traj.nodes]
