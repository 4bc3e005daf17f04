"""On-disk video format: a directory of ordered image files plus an index.

``index.tsv`` has one line per frame: ``filename<TAB>frame_index<TAB>timestamp_s``.
A video directory may carry a ``labels.json`` sidecar (synthetic videos with a
known segment map); when present, frame labels come from the sidecar instead
of a labeling backend.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError
from .model import FrameRef, RoomLabel

INDEX_FILENAME = "index.tsv"
LABELS_FILENAME = "labels.json"


@dataclass
class VideoDir:
    video_id: str
    frames: list[FrameRef]
    image_paths: dict[str, Path]  # frame key -> image file
    sidecar_labels: Optional[dict[int, RoomLabel]] = None


def load_video_dir(path: Path) -> VideoDir:
    path = Path(path)
    index = path / INDEX_FILENAME
    if not index.exists():
        raise ConfigError(f"{path} is not a video directory (missing {INDEX_FILENAME})")
    video_id = path.name
    frames: list[FrameRef] = []
    image_paths: dict[str, Path] = {}
    for line_number, line in enumerate(index.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(f"{index}:{line_number}: expected filename, frame_index, timestamp_s")
        filename, frame_index, timestamp_s = parts
        frame = FrameRef(video_id, int(frame_index), float(timestamp_s))
        frames.append(frame)
        image_paths[frame.key] = path / filename
    if not frames:
        raise ConfigError(f"{index}: no frames listed")

    sidecar = None
    labels_file = path / LABELS_FILENAME
    if labels_file.exists():
        raw = json.loads(labels_file.read_text(encoding="utf-8"))
        sidecar = {
            int(idx): RoomLabel(
                room_type=entry["room_type"],
                objects=tuple(entry.get("objects", ())),
                room_confidence=entry["room_confidence"],
            )
            for idx, entry in raw["frames"].items()
        }
    return VideoDir(video_id, frames, image_paths, sidecar)


@dataclass(frozen=True)
class SyntheticSegment:
    """A run of frames inside one room (or a low-confidence passage)."""

    room_type: str
    objects: tuple[str, ...]
    confidence: float
    frame_count: int


def write_synthetic_video(
    directory: Path,
    segments: Sequence[SyntheticSegment],
    *,
    fps: float = 1.0,
    image_size: tuple[int, int] = (32, 24),
) -> VideoDir:
    """Materialize a synthetic video with a known segment map: tiny solid-color
    PNG frames, the index file, and the labels sidecar."""
    from PIL import Image

    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    index_lines = []
    labels: dict[str, dict] = {}
    frame_index = 0
    for segment in segments:
        base = hashlib.sha256(segment.room_type.encode("utf-8")).digest()
        for _ in range(segment.frame_count):
            color = (base[0], base[1], (base[2] + frame_index * 7) % 256)
            img = Image.new("RGB", image_size, color)
            filename = f"frames/{frame_index:05d}.png"
            img.save(directory / filename, format="PNG")
            index_lines.append(f"{filename}\t{frame_index}\t{frame_index / fps:.3f}")
            labels[str(frame_index)] = {
                "room_type": segment.room_type,
                "objects": list(segment.objects),
                "room_confidence": segment.confidence,
            }
            frame_index += 1
    (directory / INDEX_FILENAME).write_text("\n".join(index_lines) + "\n", encoding="utf-8")
    (directory / LABELS_FILENAME).write_text(
        json.dumps({"frames": labels}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return load_video_dir(directory)


DEMO_SEGMENTS = (
    SyntheticSegment("kitchen", ("oven", "sink"), 0.9, 3),
    SyntheticSegment("hallway", (), 0.3, 2),
    SyntheticSegment("living room", ("sofa", "television"), 0.9, 3),
    SyntheticSegment("hallway", (), 0.3, 2),
    SyntheticSegment("bedroom", ("dresser", "mirror"), 0.9, 3),
    SyntheticSegment("hallway", (), 0.3, 1),
    SyntheticSegment("bathroom", ("bathtub",), 0.9, 3),
)
