from __future__ import annotations

import json
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from conftest import random_grounded_trajectory
from vlngen.errors import BackendRejected, RetriesExhausted
from vlngen.extraction import proximity_pairs, strip_terminal_stops
from vlngen.gateway import (
    LmmGateway,
    MockFaithfulBackend,
    MockLossyBackend,
    RemoteBackend,
    ReplayBackend,
    append_journal,
    read_journal,
    request_hash,
)
from vlngen.model import Granularity
from vlngen.prompts import build_extraction_prompt, build_generation_prompt


def prompt_for(bundle, seed=1, num_rooms=3, granularity=Granularity.COARSE):
    traj = random_grounded_trajectory(random.Random(seed), bundle, num_rooms=num_rooms)
    return traj, build_generation_prompt(traj, granularity)


class TestMockFaithful:
    def test_frozen_template_example(self, bundle):
        # the mock's own template, fixed here as the oracle
        from vlngen.model import Action, FrameRef, NodeKind, RoomLabel, Trajectory, TrajectoryNode

        nodes = (
            TrajectoryNode(
                NodeKind.ROOM, FrameRef("v", 0, 0.0), RoomLabel("kitchen", (), 0.9), Action.FORWARD
            ),
            TrajectoryNode(
                NodeKind.ROOM, FrameRef("v", 1, 1.0), RoomLabel("bedroom", (), 0.9), Action.STOP
            ),
        )
        traj = Trajectory("v/d0", "v", nodes, 0)
        gateway = LmmGateway(MockFaithfulBackend(0, bundle))
        result = gateway.complete(build_generation_prompt(traj, Granularity.COARSE))
        assert result.text == (
            "Start from the kitchen, go straight into the bedroom. "
            "Stop when you reach the bedroom."
        )

    def test_serves_extraction_prompts(self, bundle):
        gateway = LmmGateway(MockFaithfulBackend(0, bundle))
        text = "Start from the kitchen, turn left into the bedroom."
        result = gateway.complete(build_extraction_prompt(text))
        assert result.text == "(kitchen, turn left)"

    def test_deterministic_across_instances(self, bundle):
        _, prompt = prompt_for(bundle)
        a = LmmGateway(MockFaithfulBackend(3, bundle)).complete(prompt).text
        b = LmmGateway(MockFaithfulBackend(3, bundle)).complete(prompt).text
        assert a == b


def faithful_signature(bundle, traj, text):
    """(comparison pairs, destination room mentioned last) for diff counting."""
    pairs = strip_terminal_stops(proximity_pairs(text, bundle.rooms, bundle.actions))
    last_sentence = text.rsplit(". ", 1)[-1]
    rooms = [m.canonical for m in bundle.rooms.scan(last_sentence)]
    return list(pairs), rooms[-1] if rooms else None


class TestMockLossy:
    def test_swap_changes_exactly_one_element(self, bundle):
        # diff against the faithful oracle: a swap changes exactly one of
        # [comparison pairs..., destination room]
        for seed in range(25):
            traj, prompt = prompt_for(bundle, seed=seed, num_rooms=4)
            faithful = LmmGateway(MockFaithfulBackend(0, bundle)).complete(prompt).text
            lossy = LmmGateway(MockLossyBackend(seed, bundle, 1.0, 0.0)).complete(prompt).text
            f_pairs, f_dest = faithful_signature(bundle, traj, faithful)
            l_pairs, l_dest = faithful_signature(bundle, traj, lossy)
            assert len(f_pairs) == len(l_pairs)
            diffs = sum(1 for a, b in zip(f_pairs, l_pairs) if a != b)
            diffs += int(f_dest != l_dest)
            assert diffs == 1

    def test_degenerate_parameters_match_faithful(self, bundle):
        _, prompt = prompt_for(bundle, seed=2)
        faithful = LmmGateway(MockFaithfulBackend(7, bundle)).complete(prompt).text
        lossless = LmmGateway(MockLossyBackend(7, bundle, 0.0, 0.0)).complete(prompt).text
        assert faithful == lossless

    def test_corruption_log_records_swaps(self, bundle):
        traj, prompt = prompt_for(bundle, seed=3, num_rooms=3)
        backend = MockLossyBackend(5, bundle, 1.0, 0.0)
        gateway = LmmGateway(backend)
        gateway.complete(prompt)
        events = backend.events_for(request_hash(prompt), 0)
        assert len(events) == 1
        event = events[0]
        assert event.kind in ("swap_room", "swap_action")
        assert event.original != event.replacement

    def test_noise_events_recorded_with_fragment(self, bundle):
        _, prompt = prompt_for(bundle, seed=4)
        backend = MockLossyBackend(5, bundle, 0.0, 1.0)
        gateway = LmmGateway(backend)
        result = gateway.complete(prompt)
        events = backend.events_for(request_hash(prompt), 0)
        assert [e.kind for e in events] == ["noise"]
        assert events[0].fragment in result.text

    def test_occurrence_redraws_corruption_stream(self, bundle):
        _, prompt = prompt_for(bundle, seed=6)
        backend = MockLossyBackend(11, bundle, 0.5, 0.0)
        gateway = LmmGateway(backend)
        texts = [gateway.complete(prompt).text for _ in range(6)]
        assert len(set(texts)) > 1  # regeneration attempts are not frozen

    def test_deterministic_across_runs(self, bundle):
        _, prompt = prompt_for(bundle, seed=6)

        def run():
            backend = MockLossyBackend(11, bundle, 0.5, 0.5)
            gateway = LmmGateway(backend)
            return [gateway.complete(prompt).text for _ in range(4)]

        assert run() == run()

    def test_extraction_prompts_served_faithfully(self, bundle):
        backend = MockLossyBackend(9, bundle, 1.0, 1.0)
        gateway = LmmGateway(backend)
        result = gateway.complete(
            build_extraction_prompt("Start from the attic, turn right into the gym.")
        )
        assert result.text == "(attic, turn right)"
        assert backend.corruption_log == []


class TestJournalAndReplay:
    def test_length_prefixed_round_trip(self, tmp_path):
        path = tmp_path / "journal.log"
        records = [{"request_hash": "a", "response_text": "x" * n} for n in (1, 50, 300)]
        for r in records:
            append_journal(path, r)
        assert read_journal(path) == records

    def test_gateway_journals_every_exchange(self, bundle, tmp_path):
        _, prompt = prompt_for(bundle, seed=8)
        path = tmp_path / "journal.log"
        gateway = LmmGateway(MockFaithfulBackend(0, bundle), journal_path=path)
        first = gateway.complete(prompt)
        gateway.complete(prompt)
        records = read_journal(path)
        assert len(records) == 2
        assert records[0]["request_hash"] == request_hash(prompt)
        assert records[0]["response_text"] == first.text
        assert [r["occurrence"] for r in records] == [0, 1]

    def test_replay_reproduces_lossy_run(self, bundle, tmp_path):
        _, prompt = prompt_for(bundle, seed=9)
        path = tmp_path / "journal.log"
        gateway = LmmGateway(MockLossyBackend(3, bundle, 0.7, 0.7), journal_path=path)
        original = [gateway.complete(prompt).text for _ in range(3)]
        replay = LmmGateway(ReplayBackend.from_journal(path))
        assert [replay.complete(prompt).text for _ in range(3)] == original

    def test_replay_exhaustion_is_rejected(self, bundle, tmp_path):
        _, prompt = prompt_for(bundle, seed=9)
        path = tmp_path / "journal.log"
        gateway = LmmGateway(MockFaithfulBackend(0, bundle), journal_path=path)
        gateway.complete(prompt)
        replay = LmmGateway(ReplayBackend.from_journal(path), retry_limit=1)
        replay.complete(prompt)
        with pytest.raises(RetriesExhausted):
            replay.complete(prompt)


class TestRateLimiting:
    def test_peak_inflight_bounded(self, bundle):
        _, prompt = prompt_for(bundle, seed=10)
        gateway = LmmGateway(
            MockFaithfulBackend(0, bundle, latency_s=0.01), max_inflight=3
        )
        with ThreadPoolExecutor(max_workers=12) as pool:
            list(pool.map(lambda _: gateway.complete(prompt), range(36)))
        assert gateway.peak_inflight <= 3
        assert gateway.peak_inflight >= 2  # stress actually exercised concurrency
        assert gateway.total_calls == 36
        assert gateway.inflight == 0


class _Flaky:
    model_id = "flaky"

    def __init__(self, fail_times: int):
        self.remaining = fail_times

    def complete(self, prompt, *, request_hash, occurrence):
        if self.remaining > 0:
            self.remaining -= 1
            raise BackendRejected("transient")
        return "ok."


class TestRetries:
    def test_recovers_within_limit(self, bundle):
        _, prompt = prompt_for(bundle, seed=11)
        gateway = LmmGateway(_Flaky(2), retry_limit=3, sleep=lambda s: None)
        result = gateway.complete(prompt)
        assert result.text == "ok."
        assert result.usage.attempts == 3

    def test_exhaustion_carries_attempt_count(self, bundle):
        _, prompt = prompt_for(bundle, seed=11)
        gateway = LmmGateway(_Flaky(99), retry_limit=3, sleep=lambda s: None)
        with pytest.raises(RetriesExhausted) as excinfo:
            gateway.complete(prompt)
        assert excinfo.value.attempts == 3


class _RemoteHandler(BaseHTTPRequestHandler):
    status = 200
    seen: list[dict] = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append({"body": body, "auth": self.headers.get("Authorization")})
        if self.status != 200:
            self.send_response(self.status)
            self.end_headers()
            return
        payload = json.dumps({"text": "Remote says hi.", "usage": {}}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture()
def remote_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _RemoteHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _RemoteHandler.seen = []
    _RemoteHandler.status = 200
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/complete"
    server.shutdown()


def prompt_with_images(bundle, tmp_path, seed=12):
    from PIL import Image

    traj = random_grounded_trajectory(random.Random(seed), bundle, num_rooms=2)
    paths = {}
    for node in traj.nodes:
        path = tmp_path / f"{node.frame.frame_index}.png"
        Image.new("RGB", (4, 4), (10, 20, 30)).save(path)
        paths[node.frame.key] = path
    return build_generation_prompt(traj, Granularity.COARSE, image_paths=paths)


class TestRemoteBackend:
    def test_posts_documented_wire_format(self, bundle, remote_server, monkeypatch, tmp_path):
        monkeypatch.setenv("LMM_API_KEY", "secret-token")
        prompt = prompt_with_images(bundle, tmp_path)
        gateway = LmmGateway(RemoteBackend(remote_server, "some-model"))
        result = gateway.complete(prompt)
        assert result.text == "Remote says hi."
        seen = _RemoteHandler.seen[0]
        assert seen["auth"] == "Bearer secret-token"
        assert seen["body"]["model"] == "some-model"
        assert seen["body"]["temperature"] == 0.2
        roles = [m["role"] for m in seen["body"]["messages"]]
        assert roles == ["system", "user"]
        user_parts = seen["body"]["messages"][1]["parts"]
        assert user_parts[0]["type"] == "text"
        image_parts = [p for p in user_parts if p["type"] == "image"]
        assert len(image_parts) == len(prompt.images)
        assert all(p["data_b64"] for p in image_parts)

    def test_missing_credential_rejected(self, bundle, remote_server, monkeypatch, tmp_path):
        monkeypatch.delenv("LMM_API_KEY", raising=False)
        prompt = prompt_with_images(bundle, tmp_path)
        gateway = LmmGateway(RemoteBackend(remote_server, "m"), retry_limit=1)
        with pytest.raises(RetriesExhausted):
            gateway.complete(prompt)

    def test_http_error_surfaces_after_retries(self, bundle, remote_server, monkeypatch, tmp_path):
        monkeypatch.setenv("LMM_API_KEY", "t")
        _RemoteHandler.status = 500
        prompt = prompt_with_images(bundle, tmp_path)
        gateway = LmmGateway(
            RemoteBackend(remote_server, "m"), retry_limit=2, sleep=lambda s: None
        )
        with pytest.raises(RetriesExhausted) as excinfo:
            gateway.complete(prompt)
        assert excinfo.value.attempts == 2
