"""Minimal parser for the shared lexicon file format.

The format contract: UTF-8, one canonical term per block at column zero,
synonyms indented below it, ``#`` comments and blank lines ignored. The
service only needs the canonical heads (stub derivation indexes into them);
synonym handling stays on the pipeline side.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parents[2] / "data"
ROOM_LEXICON_PATH = DATA_DIR / "room_lexicon.txt"
OBJECT_LEXICON_PATH = DATA_DIR / "object_lexicon.txt"


def load_terms(path: Path) -> tuple[str, ...]:
    terms = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if line[0] not in " \t":
            terms.append(line.strip())
    if not terms:
        raise ValueError(f"{path}: empty lexicon")
    return tuple(terms)


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
