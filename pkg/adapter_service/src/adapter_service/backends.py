"""Label/action backends: the first-class deterministic stub and an optional
zero-shot CLIP backend for real room labeling."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

_WIRE_ACTIONS = ("forward", "turn_left", "turn_right")


class Backend(Protocol):
    backend_id: str

    @property
    def ready(self) -> bool: ...

    def label(self, key: str, image: Optional[bytes]) -> tuple[str, tuple[str, ...], float]: ...

    def action(self, key_a: str, key_b: str, images: tuple[Optional[bytes], Optional[bytes]]) -> tuple[str, float]: ...


@dataclass
class StubBackend:
    """Seeded lookup table keyed by frame key: same key, same answer.

    The derivation is a wire contract shared with the pipeline's in-process
    stubs and pinned by the conformance fixture corpus.
    """

    rooms: Sequence[str]
    objects: Sequence[str]
    seed: int = 0
    backend_id: str = "stub-v1"

    @property
    def ready(self) -> bool:
        return True

    def label(self, key: str, image: Optional[bytes]) -> tuple[str, tuple[str, ...], float]:
        digest = hashlib.sha256(f"{self.seed}:label:{key}".encode("utf-8")).digest()
        room = self.rooms[digest[0] % len(self.rooms)]
        count = 1 + digest[1] % 3
        objs: list[str] = []
        for i in range(count):
            candidate = self.objects[digest[2 + i] % len(self.objects)]
            if candidate not in objs:
                objs.append(candidate)
        confidence = round(0.6 + (digest[5] % 40) / 100.0, 2)
        return room, tuple(objs), confidence

    def action(self, key_a: str, key_b: str, images) -> tuple[str, float]:
        digest = hashlib.sha256(f"{self.seed}:action:{key_a}->{key_b}".encode("utf-8")).digest()
        return _WIRE_ACTIONS[digest[0] % 3], round(0.6 + (digest[1] % 40) / 100.0, 2)


@dataclass
class ClipBackend:
    """Zero-shot room labeling with a CLIP checkpoint (optional extra).

    Scores each room type with the prompt template "a photo of a <room>" and
    returns the top room plus the top-m objects scored the same way. Action
    inference has no offline model here and reports not-loaded.
    """

    rooms: Sequence[str]
    objects: Sequence[str]
    model_name: str = "openai/clip-vit-base-patch32"
    top_objects: int = 3
    backend_id: str = "clip-zero-shot"
    _model: object = field(default=None, repr=False)
    _processor: object = field(default=None, repr=False)

    def load(self) -> None:
        from transformers import CLIPModel, CLIPProcessor  # heavyweight, load once

        self._model = CLIPModel.from_pretrained(self.model_name)
        self._processor = CLIPProcessor.from_pretrained(self.model_name)

    @property
    def ready(self) -> bool:
        return self._model is not None

    def _scores(self, image: bytes, texts: list[str]) -> list[float]:
        import io

        from PIL import Image

        inputs = self._processor(
            text=texts, images=Image.open(io.BytesIO(image)), return_tensors="pt", padding=True
        )
        logits = self._model(**inputs).logits_per_image[0]
        return logits.softmax(dim=0).tolist()

    def label(self, key: str, image: Optional[bytes]) -> tuple[str, tuple[str, ...], float]:
        if not self.ready:
            raise RuntimeError("model not loaded")
        if image is None:
            raise ValueError("the real backend needs image bytes")
        room_scores = self._scores(image, [f"a photo of a {r}" for r in self.rooms])
        best = max(range(len(self.rooms)), key=room_scores.__getitem__)
        object_scores = self._scores(image, [f"a photo of a {o}" for o in self.objects])
        ranked = sorted(range(len(self.objects)), key=object_scores.__getitem__, reverse=True)
        objs = tuple(self.objects[i] for i in ranked[: self.top_objects])
        return self.rooms[best], objs, round(float(room_scores[best]), 4)

    def action(self, key_a: str, key_b: str, images) -> tuple[str, float]:
        raise RuntimeError("no inverse-action model is bundled with the real backend")
