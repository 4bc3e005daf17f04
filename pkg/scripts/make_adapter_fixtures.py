#!/usr/bin/env python3
"""Regenerate the shared adapter conformance corpus.

The corpus pins the stub backend's wire behavior: both the adapter service
and the pipeline's HTTP clients are tested against the same request/response
pairs. Rerun after changing the stub derivation, the lexicon files, or the
wire schema — and treat any resulting diff as a breaking change.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from PIL import Image

from vlngen.clients import STUB_BACKEND_ID, derive_stub_action, derive_stub_label
from vlngen.lexicon import (
    OBJECT_LEXICON_PATH,
    ROOM_LEXICON_PATH,
    LexiconBundle,
    file_sha256,
)

STUB_SEED = 0
CASES_PER_ENDPOINT = 20


def tiny_png(index: int) -> bytes:
    size = 1 + index % 4
    color = ((index * 37) % 256, (index * 91) % 256, (index * 151) % 256)
    img = Image.new("RGB", (size, size), color)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def hashed_key(image: bytes) -> str:
    # Keyless requests: the service derives the lookup key from the payload.
    return "sha256:" + hashlib.sha256(image).hexdigest()[:16]


def main() -> None:
    bundle = LexiconBundle.load_default()
    rooms, objects = bundle.rooms.canonical, bundle.objects

    label_cases = []
    for i in range(CASES_PER_ENDPOINT):
        image = tiny_png(i)
        keyed = i < CASES_PER_ENDPOINT - 2  # two keyless cases at the tail
        key = f"fixture/{i:05d}" if keyed else hashed_key(image)
        request = {"image_b64": base64.b64encode(image).decode("ascii")}
        if keyed:
            request["frame_key"] = key
        room, objs, confidence = derive_stub_label(STUB_SEED, key, rooms, objects)
        label_cases.append(
            {
                "request": request,
                "response": {
                    "room_type": room,
                    "objects": list(objs),
                    "room_confidence": confidence,
                    "backend_id": STUB_BACKEND_ID,
                },
            }
        )

    action_cases = []
    for i in range(CASES_PER_ENDPOINT):
        image_a, image_b = tiny_png(100 + 2 * i), tiny_png(101 + 2 * i)
        keyed = i < CASES_PER_ENDPOINT - 2
        key_a = f"fixtureA/{i:05d}" if keyed else hashed_key(image_a)
        key_b = f"fixtureB/{i:05d}" if keyed else hashed_key(image_b)
        request = {
            "image_a_b64": base64.b64encode(image_a).decode("ascii"),
            "image_b_b64": base64.b64encode(image_b).decode("ascii"),
        }
        if keyed:
            request["key_a"] = key_a
            request["key_b"] = key_b
        action, confidence = derive_stub_action(STUB_SEED, key_a, key_b)
        action_cases.append(
            {"request": request, "response": {"action": action, "confidence": confidence}}
        )

    corpus = {
        "stub_seed": STUB_SEED,
        "backend_id": STUB_BACKEND_ID,
        "lexicon_sha256": file_sha256(ROOM_LEXICON_PATH),
        "object_lexicon_sha256": file_sha256(OBJECT_LEXICON_PATH),
        "health": {
            "response": {
                "status": "ok",
                "backend_id": STUB_BACKEND_ID,
                "lexicon_version": file_sha256(ROOM_LEXICON_PATH),
            }
        },
        "label_cases": label_cases,
        "action_cases": action_cases,
    }
    target = ROOT / "fixtures" / "adapter" / "conformance.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(corpus, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(label_cases)} label + {len(action_cases)} action cases to {target}")


if __name__ == "__main__":
    main()
