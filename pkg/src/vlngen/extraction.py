"""(room, action) pair extraction from instruction text.

The proximity rule: within each sentence, a room mention is paired with the
nearest following action mention, walking left to right; each action is
consumed at most once, and a later room mention supersedes an unpaired
earlier one. This recovers pairs of the form (room the agent is in, action
taken from it), e.g. "Start from the dining room, turn left into the family
room" yields (dining room, turn left).
"""

from __future__ import annotations

import re

from .lexicon import ActionLexicon, LexiconBundle, RoomLexicon
from .model import Action, NodeActionPair

_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")
_PAIR_LINE_RE = re.compile(r"^\((.+),\s*([^,()]+)\)$")


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_SPLIT_RE.split(text.strip()) if s]


def proximity_pairs(
    text: str, rooms: RoomLexicon, actions: ActionLexicon
) -> tuple[NodeActionPair, ...]:
    """Scan ``text`` for lexicon hits and pair them by proximity.

    Dangling mentions (a room with no following action in its sentence, or an
    action with no preceding room) produce no pair.
    """
    pairs: list[NodeActionPair] = []
    for sentence in split_sentences(text):
        mentions = sorted(
            [("room", m) for m in rooms.scan(sentence)]
            + [("action", m) for m in actions.scan(sentence)],
            key=lambda item: item[1].start,
        )
        pending: str | None = None
        for kind, mention in mentions:
            if kind == "room":
                pending = mention.canonical
            elif pending is not None:
                pairs.append(NodeActionPair(pending, Action(mention.canonical)))
                pending = None
    return tuple(pairs)


def strip_terminal_stops(pairs: tuple[NodeActionPair, ...]) -> tuple[NodeActionPair, ...]:
    """Drop trailing stop pairs; the terminal stop is not part of the
    comparison sequence (the destination is checked separately)."""
    out = list(pairs)
    while out and out[-1].action is Action.STOP:
        out.pop()
    return tuple(out)


def format_pair_lines(pairs: tuple[NodeActionPair, ...]) -> str:
    """Render pairs as the machine-parsable "(<room>, <action>)" line format."""
    if not pairs:
        return "(none)"
    return "\n".join(f"({p.room_type}, {p.action.phrase})" for p in pairs)


def parse_pair_lines(text: str, bundle: LexiconBundle) -> tuple[NodeActionPair, ...]:
    """Parse "(<room>, <action>)" lines, canonicalizing both members.

    Unknown rooms are kept (as the reserved "unknown" type) so they surface
    as mismatches; lines whose action does not canonicalize are dropped.
    """
    pairs: list[NodeActionPair] = []
    for line in text.splitlines():
        m = _PAIR_LINE_RE.match(line.strip())
        if m is None:
            continue
        action = bundle.actions.canonicalize(m.group(2))
        if action is None:
            continue
        pairs.append(NodeActionPair(bundle.rooms.canonicalize(m.group(1)), action))
    return tuple(pairs)
