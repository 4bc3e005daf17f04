from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from vlngen.errors import InvalidTrajectory
from vlngen.model import (
    Action,
    FrameRef,
    Granularity,
    Instruction,
    NodeActionPair,
    NodeKind,
    PairStatus,
    PathInstructionPair,
    RoomLabel,
    Trajectory,
    TrajectoryNode,
    VerificationRecord,
    Verdict,
)


def room_node(idx: int, label=True, action: Action | None = Action.FORWARD) -> TrajectoryNode:
    return TrajectoryNode(
        NodeKind.ROOM,
        FrameRef("v", idx, float(idx)),
        RoomLabel("kitchen", ("oven",), 0.9) if label else None,
        action,
    )


def transition_node(idx: int) -> TrajectoryNode:
    return TrajectoryNode(NodeKind.TRANSITION, FrameRef("v", idx, float(idx)))


class TestFrameRef:
    def test_key_is_stable(self):
        assert FrameRef("video1", 4, 4.0).key == "video1/00004"

    def test_rejects_negative_index(self):
        with pytest.raises(ValueError):
            FrameRef("v", -1, 0.0)


class TestRoomLabel:
    def test_rejects_duplicate_objects(self):
        with pytest.raises(ValueError):
            RoomLabel("kitchen", ("oven", "oven"), 0.9)

    def test_rejects_out_of_range_confidence(self):
        with pytest.raises(ValueError):
            RoomLabel("kitchen", (), 1.5)

    def test_rejects_uppercase(self):
        with pytest.raises(ValueError):
            RoomLabel("Kitchen", (), 0.9)


class TestTrajectoryNode:
    def test_transition_must_be_bare(self):
        with pytest.raises(ValueError):
            TrajectoryNode(
                NodeKind.TRANSITION, FrameRef("v", 0, 0.0), RoomLabel("kitchen", (), 0.9)
            )


def valid_grounded_nodes() -> tuple[TrajectoryNode, ...]:
    return (
        room_node(0, action=Action.FORWARD),
        transition_node(1),
        room_node(2, action=Action.STOP),
    )


class TestTrajectory:
    def test_accepts_valid(self):
        traj = Trajectory("v/d0", "v", valid_grounded_nodes(), 0)
        assert traj.num_rooms == 2
        assert traj.is_grounded

    def test_first_and_last_must_be_rooms(self):
        nodes = (transition_node(0), room_node(1), room_node(2, action=Action.STOP))
        with pytest.raises(InvalidTrajectory):
            Trajectory("v/d0", "v", nodes, 0)

    def test_needs_two_rooms(self):
        with pytest.raises(InvalidTrajectory):
            Trajectory("v/d0", "v", (room_node(0, action=None),), 0)

    def test_frame_index_strictly_increases(self):
        nodes = (room_node(0), room_node(0, action=Action.STOP))
        with pytest.raises(InvalidTrajectory):
            Trajectory("v/d0", "v", nodes, 0)

    def test_final_action_must_be_stop(self):
        nodes = (room_node(0), room_node(1, action=Action.FORWARD))
        with pytest.raises(InvalidTrajectory):
            Trajectory("v/d0", "v", nodes, 0)

    def test_stop_only_on_final_room(self):
        nodes = (room_node(0, action=Action.STOP), room_node(1, action=Action.STOP))
        with pytest.raises(InvalidTrajectory):
            Trajectory("v/d0", "v", nodes, 0)

    def test_partial_labels_rejected(self):
        nodes = (room_node(0, action=None), room_node(1, label=False, action=None))
        with pytest.raises(InvalidTrajectory):
            Trajectory("v/d0", "v", nodes, 0)


# Independent re-statement of the trajectory invariants; the property test
# checks the constructor accepts exactly the node lists this predicate allows.
def _independently_valid(nodes: list[TrajectoryNode]) -> bool:
    if len(nodes) < 2:
        return False
    if nodes[0].kind is not NodeKind.ROOM or nodes[-1].kind is not NodeKind.ROOM:
        return False
    rooms = [n for n in nodes if n.kind is NodeKind.ROOM]
    if len(rooms) < 2:
        return False
    if any(a.frame.frame_index >= b.frame.frame_index for a, b in zip(nodes, nodes[1:])):
        return False
    labeled = [n.label is not None for n in rooms]
    actioned = [n.action is not None for n in rooms]
    if any(labeled) != all(labeled) or any(actioned) != all(actioned):
        return False
    if all(actioned):
        if not all(labeled):
            return False
        if rooms[-1].action is not Action.STOP:
            return False
        if any(r.action is Action.STOP for r in rooms[:-1]):
            return False
    return True


_node_spec = st.tuples(
    st.sampled_from(["room", "transition"]),
    st.integers(min_value=0, max_value=12),
    st.booleans(),  # labeled
    st.sampled_from([None, "forward", "stop"]),
)


@given(st.lists(_node_spec, min_size=0, max_size=7))
def test_constructor_rejects_exactly_invalid_node_lists(specs):
    nodes = []
    for kind, frame_index, labeled, action in specs:
        if kind == "transition":
            nodes.append(transition_node(frame_index))
        else:
            nodes.append(
                room_node(
                    frame_index,
                    label=labeled,
                    action=None if action is None else Action(action),
                )
            )
    expected_valid = _independently_valid(nodes)
    try:
        Trajectory("v/d0", "v", tuple(nodes), 0)
        constructed = True
    except InvalidTrajectory:
        constructed = False
    assert constructed == expected_valid


class TestInstruction:
    def test_requires_terminal_punctuation(self):
        with pytest.raises(ValueError):
            Instruction("go straight", Granularity.COARSE, "m", 1)

    def test_rejects_control_characters(self):
        with pytest.raises(ValueError):
            Instruction("go\x00 straight.", Granularity.COARSE, "m", 1)

    def test_accepts_clean_text(self):
        inst = Instruction("Go straight.", Granularity.COARSE, "m", 1)
        assert inst.attempt == 1


class TestPathInstructionPair:
    def _pair(self, status: PairStatus, verdict: Verdict) -> PathInstructionPair:
        traj = Trajectory("v/d0", "v", valid_grounded_nodes(), 0)
        record = VerificationRecord(
            (NodeActionPair("kitchen", Action.FORWARD),), verdict, 1, "rule_based"
        )
        return PathInstructionPair(
            "v/d0/coarse",
            traj,
            Instruction("Go straight.", Granularity.COARSE, "m", 1),
            record,
            status,
        )

    def test_verified_requires_pass(self):
        assert self._pair(PairStatus.VERIFIED, Verdict.passed()).status is PairStatus.VERIFIED
        with pytest.raises(ValueError):
            self._pair(PairStatus.VERIFIED, Verdict.extraction_failure())
