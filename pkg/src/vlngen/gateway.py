"""Uniform access to a chat-with-images completion backend.

The gateway wraps one backend with rate limiting, retries, call counters and
an append-only exchange journal. Two scripted mock backends make the whole
pipeline testable offline:

* the faithful mock renders the canonical instruction for the prompt's
  triplet block, correct for every (label, action);
* the lossy mock starts from the faithful rendering and injects seeded
  corruptions — label/action swaps and special-character or template-fragment
  noise — logging every injection so tests have exact ground truth.

Mock randomness derives from (seed, request hash, occurrence index), so
results are reproducible across runs and unaffected by concurrency, while
regeneration attempts of the same prompt still redraw their corruption.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import random
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol

import requests

from .errors import BackendRejected, BackendTimeout, ConfigError, RetriesExhausted
from .extraction import format_pair_lines, proximity_pairs
from .lexicon import LexiconBundle
from .model import MOVE_ACTIONS
from .prompts import (
    Prompt,
    parse_embedded_instruction,
    parse_granularity,
    parse_triplet_block,
    render_reference_instruction,
    steps_from_parsed,
)

# Noise pool for the lossy mock: template placeholders and special-character
# runs. Deliberately letter-free (placeholders aside) so injected noise never
# collides with lexicon words.
NOISE_FRAGMENTS = (
    "{{triplets}}",
    "{{format_example}}",
    "{{granularity_directives}}",
    "{{granularity}}",
    "###~~",
    "@@@@",
    "^^~^^",
    "====",
    "<<>>",
    "\x00\x07\x00",
    "​​​",
)


def request_hash(prompt: Prompt) -> str:
    payload = json.dumps(
        {
            "template_id": prompt.template_id,
            "template_version": prompt.template_version,
            "system": prompt.system_text,
            "user": prompt.user_text,
            "images": [a.key for a in prompt.images],
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionUsage:
    request_hash: str
    occurrence: int
    attempts: int
    backend_id: str


@dataclass(frozen=True)
class CompletionResult:
    text: str
    model_id: str
    usage: CompletionUsage


class CompletionBackend(Protocol):
    model_id: str

    def complete(self, prompt: Prompt, *, request_hash: str, occurrence: int) -> str: ...


class MockFaithfulBackend:
    """Deterministic offline backend, faithful to every (label, action)."""

    model_id = "mock-faithful"

    def __init__(self, seed: int, bundle: LexiconBundle, latency_s: float = 0.0):
        self.seed = seed
        self.bundle = bundle
        self.latency_s = latency_s

    def complete(self, prompt: Prompt, *, request_hash: str, occurrence: int) -> str:
        if self.latency_s:
            time.sleep(self.latency_s)
        if prompt.template_id == "generation":
            steps = steps_from_parsed(parse_triplet_block(prompt.user_text))
            return render_reference_instruction(steps, parse_granularity(prompt.user_text))
        if prompt.template_id == "extraction":
            instruction = parse_embedded_instruction(prompt.user_text)
            pairs = proximity_pairs(instruction, self.bundle.rooms, self.bundle.actions)
            return format_pair_lines(pairs)
        raise BackendRejected(f"mock backend cannot serve template {prompt.template_id!r}")


@dataclass(frozen=True)
class CorruptionEvent:
    """One injected corruption; the oracle record for verifier tests.

    ``alters_compared_pair`` is true when the swap changes a pair in the
    consistency comparison sequence (the K-1 non-terminal pairs); a swap of
    the final room's label only affects the destination check.
    """

    request_hash: str
    occurrence: int
    kind: str  # "swap_room" | "swap_action" | "noise"
    node_index: Optional[int] = None
    original: Optional[str] = None
    replacement: Optional[str] = None
    fragment: Optional[str] = None
    alters_compared_pair: bool = False


class MockLossyBackend(MockFaithfulBackend):
    """Faithful rendering plus seeded corruption injection.

    With probability ``swap_prob`` one room label or action in the route is
    swapped for another vocabulary member before rendering; with probability
    ``noise_prob`` a special-character run or template fragment is spliced
    into the rendered text. Extraction prompts are served faithfully.
    """

    model_id = "mock-lossy"

    def __init__(
        self,
        seed: int,
        bundle: LexiconBundle,
        swap_prob: float,
        noise_prob: float,
        latency_s: float = 0.0,
    ):
        super().__init__(seed, bundle, latency_s)
        if not 0.0 <= swap_prob <= 1.0 or not 0.0 <= noise_prob <= 1.0:
            raise ValueError("swap_prob and noise_prob must lie in [0, 1]")
        self.swap_prob = swap_prob
        self.noise_prob = noise_prob
        self.corruption_log: list[CorruptionEvent] = []
        self._log_lock = threading.Lock()

    def complete(self, prompt: Prompt, *, request_hash: str, occurrence: int) -> str:
        if prompt.template_id != "generation":
            return super().complete(prompt, request_hash=request_hash, occurrence=occurrence)
        if self.latency_s:
            time.sleep(self.latency_s)
        steps = steps_from_parsed(parse_triplet_block(prompt.user_text))
        granularity = parse_granularity(prompt.user_text)
        rng = random.Random(f"{self.seed}:{request_hash}:{occurrence}")
        events: list[CorruptionEvent] = []

        if rng.random() < self.swap_prob:
            targets = [("room", t) for t in range(len(steps))]
            targets += [("action", t) for t in range(len(steps) - 1)]
            kind, index = rng.choice(targets)
            step = steps[index]
            if kind == "room":
                pool = [r for r in self.bundle.rooms.canonical if r != step.room_type]
                replacement = rng.choice(pool)
                steps[index] = step._replace(room_type=replacement)
                events.append(
                    CorruptionEvent(
                        request_hash,
                        occurrence,
                        "swap_room",
                        node_index=index,
                        original=step.room_type,
                        replacement=replacement,
                        alters_compared_pair=index < len(steps) - 1,
                    )
                )
            else:
                pool = [a for a in MOVE_ACTIONS if a is not step.action]
                replacement = rng.choice(pool)
                steps[index] = step._replace(action=replacement)
                events.append(
                    CorruptionEvent(
                        request_hash,
                        occurrence,
                        "swap_action",
                        node_index=index,
                        original=step.action.value,
                        replacement=replacement.value,
                        alters_compared_pair=True,
                    )
                )

        text = render_reference_instruction(steps, granularity)

        if rng.random() < self.noise_prob:
            fragment = rng.choice(NOISE_FRAGMENTS)
            words = text.split(" ")
            gap = rng.randint(0, len(words))
            if rng.random() < 0.5 and gap > 0:
                words[gap - 1] = words[gap - 1] + fragment  # glued to the previous word
            else:
                words.insert(gap, fragment)
            text = " ".join(words)
            events.append(
                CorruptionEvent(request_hash, occurrence, "noise", fragment=fragment)
            )

        with self._log_lock:
            self.corruption_log.extend(events)
        return text

    def events_for(self, request_hash: str, occurrence: int) -> list[CorruptionEvent]:
        with self._log_lock:
            return [
                e
                for e in self.corruption_log
                if e.request_hash == request_hash and e.occurrence == occurrence
            ]


class ReplayBackend:
    """Serves responses recorded in a journal, keyed by request hash; same-hash
    records are replayed in their recorded order."""

    model_id = "replay"

    def __init__(self, records: list[dict]):
        self._queues: dict[str, list[str]] = defaultdict(list)
        for record in records:
            self._queues[record["request_hash"]].append(record["response_text"])
        self._positions: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    @classmethod
    def from_journal(cls, path: Path) -> "ReplayBackend":
        return cls(read_journal(path))

    def complete(self, prompt: Prompt, *, request_hash: str, occurrence: int) -> str:
        with self._lock:
            queue = self._queues.get(request_hash)
            position = self._positions[request_hash]
            if not queue or position >= len(queue):
                raise BackendRejected(f"journal has no response for {request_hash[:12]}")
            self._positions[request_hash] += 1
            return queue[position]


class RemoteBackend:
    """HTTP chat backend. The request body carries the model name, a message
    list of text and base64 image parts, and the sampling temperature; the
    bearer credential is read from the configured environment variable."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env: str = "LMM_API_KEY",
        temperature: float = 0.2,
        timeout_s: float = 60.0,
        image_longest_side: int = 512,
        session: Optional[requests.Session] = None,
    ):
        self.endpoint = endpoint
        self.model_id = model
        self.credential_env = credential_env
        self.temperature = temperature
        self.timeout_s = timeout_s
        self.image_longest_side = image_longest_side
        self.session = session or requests.Session()

    def _image_part(self, attachment) -> dict:
        if attachment.path is None:
            raise BackendRejected(f"image {attachment.key!r} has no payload path")
        data = Path(attachment.path).read_bytes()
        data = _shrink_image(data, self.image_longest_side)
        return {
            "type": "image",
            "media_type": attachment.media_type,
            "data_b64": base64.b64encode(data).decode("ascii"),
        }

    def complete(self, prompt: Prompt, *, request_hash: str, occurrence: int) -> str:
        credential = os.environ.get(self.credential_env)
        if not credential:
            raise BackendRejected(f"credential env var {self.credential_env} is not set")
        user_parts: list[dict] = [{"type": "text", "text": prompt.user_text}]
        user_parts += [self._image_part(a) for a in prompt.images]
        payload = {
            "model": self.model_id,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "parts": [{"type": "text", "text": prompt.system_text}]},
                {"role": "user", "parts": user_parts},
            ],
        }
        try:
            response = self.session.post(
                self.endpoint,
                json=payload,
                timeout=self.timeout_s,
                headers={"Authorization": f"Bearer {credential}"},
            )
        except requests.Timeout as exc:
            raise BackendTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise BackendRejected(str(exc)) from exc
        if response.status_code != 200:
            raise BackendRejected(f"backend returned HTTP {response.status_code}")
        try:
            return response.json()["text"]
        except (ValueError, KeyError) as exc:
            raise BackendRejected(f"malformed backend response: {exc}") from exc


def _shrink_image(data: bytes, longest_side: int) -> bytes:
    from PIL import Image

    with Image.open(io.BytesIO(data)) as img:
        if max(img.size) <= longest_side:
            return data
        img.thumbnail((longest_side, longest_side))
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()


def append_journal(path: Path, record: dict) -> None:
    """Append one length-prefixed JSON record to the journal file."""
    payload = json.dumps(record, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "ab") as fh:
        fh.write(f"{len(payload)}\n".encode("ascii"))
        fh.write(payload)
        fh.write(b"\n")


def read_journal(path: Path) -> list[dict]:
    records = []
    data = Path(path).read_bytes()
    pos = 0
    while pos < len(data):
        newline = data.index(b"\n", pos)
        length = int(data[pos:newline])
        start = newline + 1
        records.append(json.loads(data[start : start + length].decode("utf-8")))
        pos = start + length + 1  # trailing newline
    return records


@dataclass
class GatewayConfig:
    """Backend selection plus gateway operating limits."""

    backend: str = "mock-faithful"  # mock-faithful | mock-lossy | remote | replay
    seed: int = 0
    swap_prob: float = 0.0
    noise_prob: float = 0.0
    endpoint: Optional[str] = None
    model: Optional[str] = None
    credential_env: str = "LMM_API_KEY"
    temperature: float = 0.2
    image_longest_side: int = 512
    max_inflight: int = 4
    request_timeout_s: float = 30.0
    retry_limit: int = 3
    journal_path: Optional[str] = None
    replay_journal: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.swap_prob <= 1.0 or not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError("swap_prob and noise_prob must lie in [0, 1]")
        if self.max_inflight < 1 or self.retry_limit < 1:
            raise ValueError("max_inflight and retry_limit must be positive")

    def build_backend(self, bundle: LexiconBundle) -> CompletionBackend:
        if self.backend == "mock-faithful":
            return MockFaithfulBackend(self.seed, bundle)
        if self.backend == "mock-lossy":
            return MockLossyBackend(self.seed, bundle, self.swap_prob, self.noise_prob)
        if self.backend == "replay":
            if not self.replay_journal:
                raise ConfigError("replay backend requires replay_journal")
            return ReplayBackend.from_journal(Path(self.replay_journal))
        if self.backend == "remote":
            if not self.endpoint or not self.model:
                raise ConfigError("remote backend requires endpoint and model")
            return RemoteBackend(
                self.endpoint,
                self.model,
                credential_env=self.credential_env,
                temperature=self.temperature,
                timeout_s=self.request_timeout_s,
                image_longest_side=self.image_longest_side,
            )
        raise ConfigError(f"unknown gateway backend {self.backend!r}")

    def build_gateway(self, bundle: LexiconBundle) -> "LmmGateway":
        return LmmGateway(
            self.build_backend(bundle),
            max_inflight=self.max_inflight,
            retry_limit=self.retry_limit,
            journal_path=Path(self.journal_path) if self.journal_path else None,
        )


class LmmGateway:
    """Rate-limited, retrying, journaling front of one completion backend."""

    def __init__(
        self,
        backend: CompletionBackend,
        *,
        max_inflight: int = 4,
        retry_limit: int = 3,
        journal_path: Optional[Path] = None,
        backoff_base_s: float = 0.05,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.retry_limit = retry_limit
        self.journal_path = journal_path
        self.backoff_base_s = backoff_base_s
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(max_inflight)
        self._lock = threading.Lock()
        self._occurrences: dict[str, int] = defaultdict(int)
        self.total_calls = 0
        self.total_backend_attempts = 0
        self.inflight = 0
        self.peak_inflight = 0

    def complete(self, prompt: Prompt) -> CompletionResult:
        h = request_hash(prompt)
        with self._semaphore:
            with self._lock:
                self.total_calls += 1
                self.inflight += 1
                self.peak_inflight = max(self.peak_inflight, self.inflight)
                occurrence = self._occurrences[h]
                self._occurrences[h] += 1
            try:
                text, attempts = self._complete_with_retries(prompt, h, occurrence)
            finally:
                with self._lock:
                    self.inflight -= 1
        usage = CompletionUsage(h, occurrence, attempts, self.backend.model_id)
        if self.journal_path is not None:
            with self._lock:
                append_journal(
                    self.journal_path,
                    {
                        "request_hash": h,
                        "occurrence": occurrence,
                        "template_id": prompt.template_id,
                        "template_version": prompt.template_version,
                        "user_text": prompt.user_text,
                        "image_keys": [a.key for a in prompt.images],
                        "model_id": self.backend.model_id,
                        "attempts": attempts,
                        "response_text": text,
                    },
                )
        return CompletionResult(text=text, model_id=self.backend.model_id, usage=usage)

    def _complete_with_retries(self, prompt: Prompt, h: str, occurrence: int) -> tuple[str, int]:
        attempts = 0
        while True:
            attempts += 1
            with self._lock:
                self.total_backend_attempts += 1
            try:
                return self.backend.complete(prompt, request_hash=h, occurrence=occurrence), attempts
            except (BackendTimeout, BackendRejected) as exc:
                if attempts >= self.retry_limit:
                    raise RetriesExhausted(
                        f"backend failed after {attempts} attempts: {exc}", attempts
                    ) from exc
                self._sleep(self.backoff_base_s * (2 ** (attempts - 1)))
