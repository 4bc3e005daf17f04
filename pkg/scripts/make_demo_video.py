#!/usr/bin/env python3
"""Materialize the bundled synthetic demo video (known segment map).

Regenerates data/videos/demo_house deterministically; run after changing
the demo segment layout.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from vlngen.videos import DEMO_SEGMENTS, write_synthetic_video


def main() -> None:
    root = Path(__file__).resolve().parents[1]
    target = root / "data" / "videos" / "demo_house"
    video = write_synthetic_video(target, DEMO_SEGMENTS)
    print(f"wrote {len(video.frames)} frames to {target}")


if __name__ == "__main__":
    main()
