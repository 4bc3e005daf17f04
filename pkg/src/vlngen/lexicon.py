"""Room/action/object vocabularies, canonicalization, and text scanning.

Lexicon files are UTF-8: one canonical term per block at column zero, with
optional indented synonym lines below it. Blank lines and ``#`` comments are
ignored. The same format covers rooms, actions and objects; see
``data/room_lexicon.txt`` for the shipped room set.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional

from .model import Action, UNKNOWN_ROOM

DATA_DIR = Path(__file__).parent / "data"
ROOM_LEXICON_PATH = DATA_DIR / "room_lexicon.txt"
ACTION_LEXICON_PATH = DATA_DIR / "action_lexicon.txt"
OBJECT_LEXICON_PATH = DATA_DIR / "object_lexicon.txt"

_ARTICLE_RE = re.compile(r"^(?:the|a|an)\s+", re.IGNORECASE)

# Canonical action phrases; the action lexicon file must use these as its
# block heads so synonym blocks can be mapped onto the closed action set.
_CANONICAL_ACTION_PHRASES = {
    "go straight": Action.FORWARD,
    "turn left": Action.TURN_LEFT,
    "turn right": Action.TURN_RIGHT,
    "stop": Action.STOP,
}


def _normalize_surface(raw: str) -> str:
    text = re.sub(r"\s+", " ", raw.strip().lower())
    return _ARTICLE_RE.sub("", text)


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parse_blocks(path: Path) -> Iterator[tuple[str, list[str]]]:
    canonical: Optional[str] = None
    synonyms: list[str] = []
    for raw_line in path.read_text(encoding="utf-8").splitlines():
        if not raw_line.strip() or raw_line.lstrip().startswith("#"):
            continue
        if raw_line[0] in " \t":
            if canonical is None:
                raise ValueError(f"{path}: synonym line before any canonical term")
            synonyms.append(raw_line.strip())
        else:
            if canonical is not None:
                yield canonical, synonyms
            canonical, synonyms = raw_line.strip(), []
    if canonical is not None:
        yield canonical, synonyms


@dataclass(frozen=True)
class Mention:
    """A lexicon hit in running text."""

    start: int
    end: int
    surface: str
    canonical: str


class RoomLexicon:
    """Canonical room types with surface-form synonyms."""

    def __init__(self, entries: Mapping[str, tuple[str, ...]], source_hash: str = ""):
        self.canonical = tuple(entries.keys())
        self.source_hash = source_hash
        self._synonyms: dict[str, str] = {}
        for canon, syns in entries.items():
            canon_norm = _normalize_surface(canon)
            self._synonyms[canon_norm] = canon_norm
            for s in syns:
                self._synonyms[_normalize_surface(s)] = canon_norm
        self._scanner = _build_scanner(self._synonyms.keys())

    @classmethod
    def load(cls, path: Path = ROOM_LEXICON_PATH) -> "RoomLexicon":
        entries = {canon: tuple(syns) for canon, syns in _parse_blocks(path)}
        if not entries:
            raise ValueError(f"{path}: empty lexicon")
        return cls(entries, source_hash=file_sha256(path))

    def canonicalize(self, raw: str) -> str:
        """Map a surface form to its canonical room type, or UNKNOWN_ROOM."""
        if not raw:
            return UNKNOWN_ROOM
        return self._synonyms.get(_normalize_surface(raw), UNKNOWN_ROOM)

    def scan(self, text: str) -> list[Mention]:
        """All room mentions in ``text``, longest-match, in textual order."""
        return [
            Mention(m.start(), m.end(), m.group(0), self._synonyms[_normalize_surface(m.group(0))])
            for m in self._scanner.finditer(text)
        ]

    def __contains__(self, room_type: str) -> bool:
        return room_type in self.canonical


class ActionLexicon:
    """Surface forms for the closed action vocabulary."""

    def __init__(self, synonyms: Mapping[str, Action], source_hash: str = ""):
        self._synonyms = {_normalize_surface(k): v for k, v in synonyms.items()}
        self.source_hash = source_hash
        self._scanner = _build_scanner(self._synonyms.keys())

    @classmethod
    def load(cls, path: Path = ACTION_LEXICON_PATH) -> "ActionLexicon":
        synonyms: dict[str, Action] = {}
        for canon, syns in _parse_blocks(path):
            action = _CANONICAL_ACTION_PHRASES.get(_normalize_surface(canon))
            if action is None:
                raise ValueError(f"{path}: unknown canonical action phrase {canon!r}")
            synonyms[canon] = action
            for s in syns:
                synonyms[s] = action
        return cls(synonyms, source_hash=file_sha256(path))

    def canonicalize(self, raw: str) -> Optional[Action]:
        """Longest-match, case-insensitive mapping of ``raw`` to an action.

        Exact synonym matches win; otherwise the longest synonym occurring
        inside ``raw`` on word boundaries is used. Returns None when nothing
        matches.
        """
        if not raw:
            return None
        norm = _normalize_surface(raw)
        if norm in self._synonyms:
            return self._synonyms[norm]
        best: Optional[str] = None
        for m in self._scanner.finditer(norm):
            if best is None or len(m.group(0)) > len(best):
                best = m.group(0)
        return self._synonyms[_normalize_surface(best)] if best else None

    def scan(self, text: str) -> list[Mention]:
        """All action mentions in ``text``, longest-match, in textual order."""
        return [
            Mention(m.start(), m.end(), m.group(0), self._synonyms[_normalize_surface(m.group(0))].value)
            for m in self._scanner.finditer(text)
        ]


def _build_scanner(surfaces) -> re.Pattern:
    # Longest alternatives first so e.g. "living room" wins over any shorter
    # overlapping synonym; \b keeps "bath" from matching inside "bathtub".
    ordered = sorted(surfaces, key=len, reverse=True)
    pattern = r"\b(?:" + "|".join(re.escape(s) for s in ordered) + r")\b"
    return re.compile(pattern, re.IGNORECASE)


def load_objects(path: Path = OBJECT_LEXICON_PATH) -> tuple[str, ...]:
    return tuple(canon for canon, _ in _parse_blocks(path))


@dataclass(frozen=True)
class LexiconBundle:
    """The three vocabularies loaded together, as most stages need all of them."""

    rooms: RoomLexicon
    actions: ActionLexicon
    objects: tuple[str, ...]

    @classmethod
    def load_default(cls) -> "LexiconBundle":
        return cls(
            rooms=RoomLexicon.load(),
            actions=ActionLexicon.load(),
            objects=load_objects(),
        )
