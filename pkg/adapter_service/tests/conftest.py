from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

SERVICE_ROOT = Path(__file__).resolve().parents[1]
REPO_ROOT = SERVICE_ROOT.parent
sys.path.insert(0, str(SERVICE_ROOT / "src"))

from adapter_service.app import create_app  # noqa: E402
from adapter_service.backends import StubBackend  # noqa: E402
from adapter_service.lexicon import (  # noqa: E402
    OBJECT_LEXICON_PATH,
    ROOM_LEXICON_PATH,
    file_sha256,
    load_terms,
)

CORPUS_PATH = REPO_ROOT / "fixtures" / "adapter" / "conformance.json"


@pytest.fixture(scope="session")
def corpus():
    return json.loads(CORPUS_PATH.read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def rooms():
    return load_terms(ROOM_LEXICON_PATH)


@pytest.fixture(scope="session")
def objects():
    return load_terms(OBJECT_LEXICON_PATH)


@pytest.fixture()
def client(corpus, rooms, objects):
    from fastapi.testclient import TestClient

    backend = StubBackend(rooms=rooms, objects=objects, seed=corpus["stub_seed"])
    app = create_app(backend, lexicon_version=file_sha256(ROOM_LEXICON_PATH))
    return TestClient(app)
