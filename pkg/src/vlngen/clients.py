"""Node-labeling and action-grounding clients.

Three interchangeable backends per interface:

* hash stubs — deterministic functions of the frame key, mirroring the
  adapter service's stub backend (same derivation, pinned by the shared
  conformance fixtures);
* scripted/sidecar clients — labels read from a per-video ``labels.json``
  sidecar, used for synthetic videos with a known segment map;
* HTTP clients — speak the adapter-service wire protocol.
"""

from __future__ import annotations

import base64
import hashlib
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence

import requests

from .errors import ActionClientUnavailable, LabelerUnavailable
from .model import Action, FrameRef, MOVE_ACTIONS, RoomLabel

STUB_BACKEND_ID = "stub-v1"

_WIRE_ACTIONS = ("forward", "turn_left", "turn_right")


class LabelClient(Protocol):
    def label(self, frame: FrameRef) -> RoomLabel: ...


class ActionClient(Protocol):
    def infer(self, frame_a: FrameRef, frame_b: FrameRef) -> Action: ...


def derive_stub_label(
    seed: int, key: str, rooms: Sequence[str], objects: Sequence[str]
) -> tuple[str, tuple[str, ...], float]:
    """Seeded lookup-table entry for a frame key: (room, objects, confidence).

    This derivation is the wire contract of the adapter service's stub
    backend; change it only together with the conformance fixtures.
    """
    digest = hashlib.sha256(f"{seed}:label:{key}".encode("utf-8")).digest()
    room = rooms[digest[0] % len(rooms)]
    count = 1 + digest[1] % 3
    objs: list[str] = []
    for i in range(count):
        candidate = objects[digest[2 + i] % len(objects)]
        if candidate not in objs:
            objs.append(candidate)
    confidence = round(0.6 + (digest[5] % 40) / 100.0, 2)
    return room, tuple(objs), confidence


def derive_stub_action(seed: int, key_a: str, key_b: str) -> tuple[str, float]:
    """Seeded lookup-table entry for an ordered frame-key pair: (action, confidence)."""
    digest = hashlib.sha256(f"{seed}:action:{key_a}->{key_b}".encode("utf-8")).digest()
    action = _WIRE_ACTIONS[digest[0] % 3]
    confidence = round(0.6 + (digest[1] % 40) / 100.0, 2)
    return action, confidence


@dataclass
class HashStubLabelClient:
    """Deterministic stub: the label is a seeded function of the frame key."""

    rooms: Sequence[str]
    objects: Sequence[str]
    seed: int = 0

    def label(self, frame: FrameRef) -> RoomLabel:
        room, objs, conf = derive_stub_label(self.seed, frame.key, self.rooms, self.objects)
        return RoomLabel(room_type=room, objects=objs, room_confidence=conf)


@dataclass
class HashStubActionClient:
    seed: int = 0

    def infer(self, frame_a: FrameRef, frame_b: FrameRef) -> Action:
        action, _ = derive_stub_action(self.seed, frame_a.key, frame_b.key)
        return Action.from_wire(action)


@dataclass
class ScriptedLabelClient:
    """Labels from an explicit frame_index -> RoomLabel map (synthetic videos)."""

    labels: Mapping[int, RoomLabel]
    video_id: Optional[str] = None

    def label(self, frame: FrameRef) -> RoomLabel:
        if self.video_id is not None and frame.video_id != self.video_id:
            raise LabelerUnavailable(f"no sidecar labels for video {frame.video_id!r}")
        try:
            return self.labels[frame.frame_index]
        except KeyError:
            raise LabelerUnavailable(f"no sidecar label for frame {frame.key}") from None


@dataclass
class ScriptedActionClient:
    """Actions from an explicit (key_a, key_b) -> Action map; both directions
    must be scripted explicitly when needed."""

    script: Mapping[tuple[str, str], Action]

    def infer(self, frame_a: FrameRef, frame_b: FrameRef) -> Action:
        try:
            action = self.script[(frame_a.key, frame_b.key)]
        except KeyError:
            raise ActionClientUnavailable(
                f"no scripted action for {frame_a.key} -> {frame_b.key}"
            ) from None
        if action not in MOVE_ACTIONS:
            raise ActionClientUnavailable("action clients never emit stop")
        return action


class CachingLabelClient:
    """Memoizes labels by frame key; counts backend hits for call accounting."""

    def __init__(self, inner: LabelClient):
        self._inner = inner
        self._cache: dict[str, RoomLabel] = {}
        self._lock = threading.Lock()
        self.backend_calls = 0

    def label(self, frame: FrameRef) -> RoomLabel:
        with self._lock:
            if frame.key in self._cache:
                return self._cache[frame.key]
        result = self._inner.label(frame)
        with self._lock:
            self._cache[frame.key] = result
            self.backend_calls += 1
        return result


class CountingActionClient:
    def __init__(self, inner: ActionClient):
        self._inner = inner
        self.calls = 0

    def infer(self, frame_a: FrameRef, frame_b: FrameRef) -> Action:
        self.calls += 1
        return self._inner.infer(frame_a, frame_b)


ImageLoader = Callable[[FrameRef], bytes]


def _post_with_retries(
    session: requests.Session,
    url: str,
    payload: dict,
    *,
    retries: int,
    timeout_s: float,
    backoff_base_s: float,
    sleep: Callable[[float], None],
) -> dict:
    last_error: Exception | None = None
    for attempt in range(retries):
        try:
            response = session.post(url, json=payload, timeout=timeout_s)
            if response.status_code == 200:
                return response.json()
            last_error = RuntimeError(f"{url} returned HTTP {response.status_code}")
        except requests.RequestException as exc:
            last_error = exc
        if attempt + 1 < retries:
            sleep(backoff_base_s * (2**attempt))
    raise RuntimeError(f"{url} failed after {retries} attempts: {last_error}")


@dataclass
class HttpLabelClient:
    """POST /label against a running adapter service."""

    endpoint: str
    image_loader: Optional[ImageLoader] = None
    retries: int = 3
    timeout_s: float = 10.0
    backoff_base_s: float = 0.2
    sleep: Callable[[float], None] = time.sleep
    session: requests.Session = field(default_factory=requests.Session)

    def label(self, frame: FrameRef) -> RoomLabel:
        payload: dict = {"frame_key": frame.key}
        if self.image_loader is not None:
            payload["image_b64"] = base64.b64encode(self.image_loader(frame)).decode("ascii")
        try:
            body = _post_with_retries(
                self.session,
                self.endpoint.rstrip("/") + "/label",
                payload,
                retries=self.retries,
                timeout_s=self.timeout_s,
                backoff_base_s=self.backoff_base_s,
                sleep=self.sleep,
            )
            return RoomLabel(
                room_type=body["room_type"],
                objects=tuple(body["objects"]),
                room_confidence=float(body["room_confidence"]),
            )
        except (RuntimeError, KeyError, TypeError, ValueError) as exc:
            raise LabelerUnavailable(str(exc)) from exc


@dataclass
class HttpActionClient:
    """POST /action against a running adapter service."""

    endpoint: str
    image_loader: Optional[ImageLoader] = None
    retries: int = 3
    timeout_s: float = 10.0
    backoff_base_s: float = 0.2
    sleep: Callable[[float], None] = time.sleep
    session: requests.Session = field(default_factory=requests.Session)

    def infer(self, frame_a: FrameRef, frame_b: FrameRef) -> Action:
        payload: dict = {"key_a": frame_a.key, "key_b": frame_b.key}
        if self.image_loader is not None:
            payload["image_a_b64"] = base64.b64encode(self.image_loader(frame_a)).decode("ascii")
            payload["image_b_b64"] = base64.b64encode(self.image_loader(frame_b)).decode("ascii")
        try:
            body = _post_with_retries(
                self.session,
                self.endpoint.rstrip("/") + "/action",
                payload,
                retries=self.retries,
                timeout_s=self.timeout_s,
                backoff_base_s=self.backoff_base_s,
                sleep=self.sleep,
            )
            action = Action.from_wire(body["action"])
        except (RuntimeError, KeyError, TypeError, ValueError) as exc:
            raise ActionClientUnavailable(str(exc)) from exc
        if action not in MOVE_ACTIONS:
            raise ActionClientUnavailable(f"service returned reserved action {action.value!r}")
        return action


def default_image_loader(image_paths: Mapping[str, Path]) -> ImageLoader:
    """Loader resolving frame keys through an in-memory key -> path map."""

    def load(frame: FrameRef) -> bytes:
        try:
            return image_paths[frame.key].read_bytes()
        except KeyError:
            raise LabelerUnavailable(f"no image on disk for frame {frame.key}") from None

    return load
