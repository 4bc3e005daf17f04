"""Run the service: python -m adapter_service [--backend stub|clip] [--port N]."""

from __future__ import annotations

import argparse

import uvicorn

from .app import create_app
from .backends import ClipBackend, StubBackend
from .lexicon import OBJECT_LEXICON_PATH, ROOM_LEXICON_PATH, file_sha256, load_terms


def main() -> None:
    parser = argparse.ArgumentParser(prog="adapter-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8800)
    parser.add_argument("--backend", choices=["stub", "clip"], default="stub")
    parser.add_argument("--stub-seed", type=int, default=0)
    parser.add_argument("--lexicon", default=str(ROOM_LEXICON_PATH))
    parser.add_argument("--objects", default=str(OBJECT_LEXICON_PATH))
    parser.add_argument("--clip-model", default="openai/clip-vit-base-patch32")
    args = parser.parse_args()

    rooms = load_terms(args.lexicon)
    objects = load_terms(args.objects)
    if args.backend == "stub":
        backend = StubBackend(rooms=rooms, objects=objects, seed=args.stub_seed)
    else:
        backend = ClipBackend(rooms=rooms, objects=objects, model_name=args.clip_model)
        backend.load()
    app = create_app(backend, lexicon_version=file_sha256(args.lexicon))
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
