"""Dataset persistence: line-delimited UTF-8 records plus JSON manifests.

Every dataset file starts with a header line naming the record kind and
schema version; each following line is one self-contained JSON object.
Manifests live next to the record file as ``<name>.manifest.json`` and are
recomputable from the records (readers self-check the counts).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from .errors import RejectedPairIncluded, SchemaMismatch
from .model import (
    Action,
    CleanupEdit,
    FrameRef,
    Granularity,
    Instruction,
    MismatchEntry,
    NodeActionPair,
    NodeKind,
    PairStatus,
    PathInstructionPair,
    RoomLabel,
    Trajectory,
    TrajectoryNode,
    VerificationRecord,
    Verdict,
    VerdictKind,
)
from .pretext import (
    MlmPayload,
    MvmPayload,
    MultimodalSequence,
    PijPayload,
    PrPayload,
    PretextExample,
    RegionFeature,
)

SCHEMA_VERSION = 1

PAIRS_KIND = "path_instruction_pairs"
TRAJECTORIES_KIND = "trajectories"
PRETEXT_KIND = "pretext_examples"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# --- domain <-> dict ---------------------------------------------------------


def frame_to_dict(frame: FrameRef) -> dict:
    return {
        "video_id": frame.video_id,
        "frame_index": frame.frame_index,
        "timestamp_s": frame.timestamp_s,
    }


def frame_from_dict(d: dict) -> FrameRef:
    return FrameRef(d["video_id"], d["frame_index"], d["timestamp_s"])


def label_to_dict(label: RoomLabel) -> dict:
    return {
        "room_type": label.room_type,
        "objects": list(label.objects),
        "room_confidence": label.room_confidence,
    }


def label_from_dict(d: dict) -> RoomLabel:
    return RoomLabel(d["room_type"], tuple(d["objects"]), d["room_confidence"])


def trajectory_to_dict(traj: Trajectory) -> dict:
    nodes = []
    for n in traj.nodes:
        node: dict = {"kind": n.kind.value, "frame": frame_to_dict(n.frame)}
        if n.label is not None:
            node["label"] = label_to_dict(n.label)
        if n.action is not None:
            node["action"] = n.action.value
        nodes.append(node)
    return {
        "trajectory_id": traj.trajectory_id,
        "video_id": traj.video_id,
        "seed": traj.seed,
        "nodes": nodes,
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    nodes = tuple(
        TrajectoryNode(
            kind=NodeKind(n["kind"]),
            frame=frame_from_dict(n["frame"]),
            label=label_from_dict(n["label"]) if "label" in n else None,
            action=Action(n["action"]) if "action" in n else None,
        )
        for n in d["nodes"]
    )
    return Trajectory(d["trajectory_id"], d["video_id"], nodes, d["seed"])


def _pair_nap_to_dict(p: Optional[NodeActionPair]) -> Optional[dict]:
    return None if p is None else {"room": p.room_type, "action": p.action.value}


def _pair_nap_from_dict(d: Optional[dict]) -> Optional[NodeActionPair]:
    return None if d is None else NodeActionPair(d["room"], Action(d["action"]))


def verdict_to_dict(v: Verdict) -> dict:
    out: dict = {"kind": v.kind.value}
    if v.mismatches:
        out["mismatches"] = [
            {
                "index": m.index,
                "expected": _pair_nap_to_dict(m.expected),
                "got": _pair_nap_to_dict(m.got),
            }
            for m in v.mismatches
        ]
    return out


def verdict_from_dict(d: dict) -> Verdict:
    kind = VerdictKind(d["kind"])
    mismatches = tuple(
        MismatchEntry(m["index"], _pair_nap_from_dict(m["expected"]), _pair_nap_from_dict(m["got"]))
        for m in d.get("mismatches", [])
    )
    return Verdict(kind, mismatches)


def pair_to_record(pair: PathInstructionPair) -> dict:
    record = {
        "record": "pair",
        "pair_id": pair.pair_id,
        "status": pair.status.value,
        "trajectory": trajectory_to_dict(pair.trajectory),
        "instruction": {
            "text": pair.instruction.text,
            "granularity": pair.instruction.granularity.value,
            "model_id": pair.instruction.model_id,
            "attempt": pair.instruction.attempt,
            "cleanup_edits": [
                [e.rule_id, e.before, e.after] for e in pair.instruction.cleanup_edits
            ],
        },
    }
    if pair.verification is not None:
        record["verification"] = {
            "extracted": [_pair_nap_to_dict(p) for p in pair.verification.extracted],
            "verdict": verdict_to_dict(pair.verification.verdict),
            "attempts_used": pair.verification.attempts_used,
            "extractor": pair.verification.extractor,
        }
    return record


def pair_from_record(record: dict) -> PathInstructionPair:
    inst = record["instruction"]
    verification = None
    if "verification" in record:
        v = record["verification"]
        verification = VerificationRecord(
            extracted=tuple(_pair_nap_from_dict(p) for p in v["extracted"]),
            verdict=verdict_from_dict(v["verdict"]),
            attempts_used=v["attempts_used"],
            extractor=v["extractor"],
        )
    return PathInstructionPair(
        pair_id=record["pair_id"],
        trajectory=trajectory_from_dict(record["trajectory"]),
        instruction=Instruction(
            text=inst["text"],
            granularity=Granularity(inst["granularity"]),
            model_id=inst["model_id"],
            attempt=inst["attempt"],
            cleanup_edits=tuple(CleanupEdit(*e) for e in inst["cleanup_edits"]),
        ),
        verification=verification,
        status=PairStatus(record["status"]),
    )


# --- manifests ---------------------------------------------------------------


@dataclass
class DatasetManifest:
    schema_version: int
    created_at: str
    counts: dict
    by_granularity: dict
    pass_rate: float
    attempts_histogram: dict
    videos: dict = field(default_factory=lambda: {"train": [], "val": []})
    template_hashes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(**d)


def stats(
    pairs: Sequence[PathInstructionPair],
    *,
    videos: Optional[dict] = None,
    template_hashes: Optional[dict] = None,
    created_at: Optional[str] = None,
) -> DatasetManifest:
    """Recompute all manifest counts from the pairs themselves."""
    counts = {status.value: 0 for status in PairStatus}
    by_granularity = {g.value: 0 for g in Granularity}
    histogram: dict[str, int] = {}
    for pair in pairs:
        counts[pair.status.value] += 1
        by_granularity[pair.instruction.granularity.value] += 1
        if pair.verification is not None:
            key = str(pair.verification.attempts_used)
            histogram[key] = histogram.get(key, 0) + 1
    counts["total"] = len(pairs)
    pass_rate = counts[PairStatus.VERIFIED.value] / len(pairs) if pairs else 0.0
    return DatasetManifest(
        schema_version=SCHEMA_VERSION,
        created_at=created_at or _utc_now(),
        counts=counts,
        by_granularity=by_granularity,
        pass_rate=pass_rate,
        attempts_histogram=dict(sorted(histogram.items())),
        videos=videos or {"train": [], "val": []},
        template_hashes=template_hashes or {},
    )


# --- line-delimited files ----------------------------------------------------


def manifest_path(records_path: Path) -> Path:
    return records_path.with_name(records_path.name + ".manifest.json")


def _write_lines(path: Path, kind: str, records: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"record": "header", "kind": kind, "schema_version": SCHEMA_VERSION}))
        fh.write("\n")
        for record in records:
            fh.write(_dumps(record))
            fh.write("\n")


def _read_lines(path: Path, kind: str) -> list[dict]:
    records: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaMismatch(
                    f"{path}:{line_number}: not a JSON record ({exc.msg})", line_number
                ) from exc
            if line_number == 1:
                if record.get("record") != "header" or record.get("kind") != kind:
                    raise SchemaMismatch(f"{path}:1: expected a {kind} header", 1)
                if record.get("schema_version") != SCHEMA_VERSION:
                    raise SchemaMismatch(
                        f"{path}:1: schema version {record.get('schema_version')} "
                        f"(this reader expects {SCHEMA_VERSION})",
                        1,
                    )
                continue
            records.append(record)
    return records


def write_pairs(
    pairs: Sequence[PathInstructionPair],
    path: Path,
    *,
    videos: Optional[dict] = None,
    template_hashes: Optional[dict] = None,
    created_at: Optional[str] = None,
) -> DatasetManifest:
    """Write pairs plus their manifest; round-trips exactly through read_pairs."""
    _write_lines(path, PAIRS_KIND, [pair_to_record(p) for p in pairs])
    manifest = stats(
        pairs, videos=videos, template_hashes=template_hashes, created_at=created_at
    )
    manifest_path(path).write_text(
        json.dumps(manifest.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return manifest


def read_pairs(path: Path) -> list[PathInstructionPair]:
    records = _read_lines(Path(path), PAIRS_KIND)
    pairs = []
    for i, record in enumerate(records, start=2):
        try:
            pairs.append(pair_from_record(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"{path}:{i}: malformed pair record ({exc})", i) from exc
    mp = manifest_path(Path(path))
    if mp.exists():
        manifest = DatasetManifest.from_dict(json.loads(mp.read_text(encoding="utf-8")))
        recomputed = stats(pairs).counts
        if manifest.counts != recomputed:
            raise SchemaMismatch(
                f"{mp}: manifest counts {manifest.counts} != recomputed {recomputed}"
            )
    return pairs


def write_trajectories(trajectories: Sequence[Trajectory], path: Path) -> None:
    records = [
        {"record": "trajectory", **trajectory_to_dict(t)} for t in trajectories
    ]
    _write_lines(path, TRAJECTORIES_KIND, records)


def read_trajectories(path: Path) -> list[Trajectory]:
    records = _read_lines(Path(path), TRAJECTORIES_KIND)
    out = []
    for i, record in enumerate(records, start=2):
        try:
            out.append(trajectory_from_dict(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"{path}:{i}: malformed trajectory record ({exc})", i) from exc
    return out


# --- R2R-style export --------------------------------------------------------


def export_r2r_style(pairs: Sequence[PathInstructionPair], path: Path) -> None:
    """One episode per verified pair, mirroring the R2R field layout:
    ``path`` holds the ordered room-node frame keys, ``heading`` defaults to
    0.0 (tour videos carry no pose)."""
    episodes = []
    for pair in pairs:
        if pair.status is not PairStatus.VERIFIED:
            raise RejectedPairIncluded(
                f"pair {pair.pair_id} has status {pair.status.value}"
            )
        episodes.append(
            {
                "path_id": pair.pair_id,
                "scan": pair.trajectory.video_id,
                "path": [n.frame.key for n in pair.trajectory.room_nodes],
                "heading": 0.0,
                "instructions": [pair.instruction.text],
                "granularity": pair.instruction.granularity.value,
            }
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(episodes, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def read_r2r_export(path: Path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# --- pretext examples --------------------------------------------------------


def _visual_token_to_obj(token) -> object:
    if isinstance(token, str):
        return token
    return {"region_index": token.region_index, "vector": list(token.vector)}


def _sequence_to_dict(seq: MultimodalSequence) -> dict:
    return {
        "visual_tokens": [_visual_token_to_obj(t) for t in seq.visual_tokens],
        "text_tokens": list(seq.text_tokens),
        "node_keys": list(seq.node_keys),
    }


def pretext_to_record(example: PretextExample) -> dict:
    payload = example.payload
    if isinstance(payload, MlmPayload):
        body = {
            "sequence": _sequence_to_dict(payload.sequence),
            "masked_positions": list(payload.masked_positions),
            "original_tokens": list(payload.original_tokens),
        }
    elif isinstance(payload, MvmPayload):
        body = {
            "sequence": _sequence_to_dict(payload.sequence),
            "masked_positions": list(payload.masked_positions),
            "original_features": [_visual_token_to_obj(f) for f in payload.original_features],
        }
    elif isinstance(payload, PijPayload):
        body = {"sequence": _sequence_to_dict(payload.sequence), "is_paired": payload.is_paired}
    elif isinstance(payload, PrPayload):
        body = {
            "candidates": [_sequence_to_dict(c) for c in payload.candidates],
            "gold_index": payload.gold_index,
            "perturbations": list(payload.perturbations),
        }
    else:  # pragma: no cover - exhaustive over payload types
        raise TypeError(f"unknown payload {type(payload).__name__}")
    return {
        "record": "pretext_example",
        "variant": example.variant,
        "source_pair_id": example.source_pair_id,
        "seed": example.seed,
        "payload": body,
    }


def write_pretext(
    examples: Sequence[PretextExample],
    path: Path,
    *,
    config_hash: str = "",
    created_at: Optional[str] = None,
) -> dict:
    _write_lines(path, PRETEXT_KIND, [pretext_to_record(e) for e in examples])
    counts: dict[str, int] = {}
    for e in examples:
        counts[e.variant] = counts.get(e.variant, 0) + 1
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "created_at": created_at or _utc_now(),
        "counts_by_variant": dict(sorted(counts.items())),
        "total": len(examples),
        "seeds": sorted({e.seed for e in examples}),
        "config_hash": config_hash,
    }
    manifest_path(path).write_text(
        json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return manifest


def read_pretext_records(path: Path) -> list[dict]:
    return _read_lines(Path(path), PRETEXT_KIND)
