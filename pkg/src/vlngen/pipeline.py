"""Stage orchestration: wiring videos, clients, gateway and datasets together."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import __version__
from .clients import (
    ActionClient,
    CachingLabelClient,
    HashStubActionClient,
    HashStubLabelClient,
    HttpActionClient,
    HttpLabelClient,
    LabelClient,
    ScriptedLabelClient,
    default_image_loader,
)
from .config import PipelineConfig, config_hash
from .dataset_io import (
    export_r2r_style,
    read_pairs,
    read_trajectories,
    stats,
    write_pairs,
    write_pretext,
    write_trajectories,
)
from .errors import ConfigError, DegenerateTrajectory, InsufficientDistractors
from .gateway import LmmGateway
from .grounding import ground_actions, label_nodes
from .lexicon import LexiconBundle, OBJECT_LEXICON_PATH, file_sha256
from .model import FrameRef, PairStatus, RoomLabel, Trajectory
from .pretext import HashFeatureProvider, make_mlm, make_mvm, make_pij, make_pr, assemble
from .prompts import template_hashes
from .sampler import annotate_frames, sample_many
from .verifier import generate_verified, load_cleanup_rules
from .videos import VideoDir, load_video_dir

EPOCH_TIMESTAMP = "1970-01-01T00:00:00Z"


@dataclass
class StagePaths:
    out: Path

    @property
    def trajectories(self) -> Path:
        return self.out / "trajectories.jsonl"

    @property
    def pairs(self) -> Path:
        return self.out / "pairs.jsonl"

    @property
    def quarantine(self) -> Path:
        return self.out / "quarantine.jsonl"

    @property
    def pretext(self) -> Path:
        return self.out / "pretext.jsonl"

    @property
    def export(self) -> Path:
        return self.out / "export_r2r.json"

    @property
    def run_record(self) -> Path:
        return self.out / "run_record.json"

    @property
    def journal(self) -> Path:
        return self.out / "journal.log"


def stage_paths(cfg: PipelineConfig) -> StagePaths:
    return StagePaths(cfg.output_dir)


def _created_at(cfg: PipelineConfig) -> Optional[str]:
    return EPOCH_TIMESTAMP if cfg.deterministic_timestamps else None


def load_videos(cfg: PipelineConfig) -> dict[str, VideoDir]:
    return {
        video_id: load_video_dir(cfg.videos_dir / video_id)
        for video_id in cfg.split.all_videos
    }


class _CompositeLabelClient:
    """Dispatches per video: sidecar labels where a segment map exists,
    otherwise the configured fallback client."""

    def __init__(self, per_video: dict[str, LabelClient], fallback: LabelClient):
        self._per_video = per_video
        self._fallback = fallback

    def label(self, frame: FrameRef) -> RoomLabel:
        return self._per_video.get(frame.video_id, self._fallback).label(frame)


def build_label_client(cfg: PipelineConfig, videos: dict[str, VideoDir]) -> CachingLabelClient:
    bundle = LexiconBundle.load_default()
    if cfg.adapters.backend == "http":
        loader = default_image_loader(
            {k: p for v in videos.values() for k, p in v.image_paths.items()}
        )
        fallback: LabelClient = HttpLabelClient(cfg.adapters.label_endpoint, loader)
    else:
        fallback = HashStubLabelClient(
            rooms=bundle.rooms.canonical, objects=bundle.objects, seed=cfg.adapters.stub_seed
        )
    per_video = {
        vid: ScriptedLabelClient(video.sidecar_labels, video_id=vid)
        for vid, video in videos.items()
        if video.sidecar_labels is not None
    }
    return CachingLabelClient(_CompositeLabelClient(per_video, fallback))


def build_action_client(cfg: PipelineConfig, videos: dict[str, VideoDir]) -> ActionClient:
    if cfg.adapters.backend == "http":
        loader = default_image_loader(
            {k: p for v in videos.values() for k, p in v.image_paths.items()}
        )
        return HttpActionClient(cfg.adapters.action_endpoint, loader)
    return HashStubActionClient(seed=cfg.adapters.stub_seed)


def write_run_record(cfg: PipelineConfig, stage: str) -> dict:
    """Config hash, seeds and template/lexicon hashes: enough to reproduce a
    mock-backend run bit-exactly."""
    bundle = LexiconBundle.load_default()
    record = {
        "stage": stage,
        "package_version": __version__,
        "config_hash": config_hash(cfg),
        "seeds": {
            "sampler": cfg.sampler.seed,
            "gateway": cfg.gateway.seed,
            "adapters": cfg.adapters.stub_seed,
            "pretext": cfg.pretext.seed,
        },
        "template_hashes": template_hashes(),
        "lexicon_hashes": {
            "rooms": bundle.rooms.source_hash,
            "actions": bundle.actions.source_hash,
            "objects": file_sha256(OBJECT_LEXICON_PATH),
        },
    }
    paths = stage_paths(cfg)
    paths.out.mkdir(parents=True, exist_ok=True)
    paths.run_record.write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return record


def run_sample(cfg: PipelineConfig) -> dict:
    """Annotate frames and sample trajectories for every video in the split."""
    videos = load_videos(cfg)
    label_client = build_label_client(cfg, videos)
    trajectories: list[Trajectory] = []
    for video_id in cfg.split.all_videos:
        annotated = annotate_frames(videos[video_id].frames, label_client, cfg.sampler)
        trajectories.extend(sample_many(annotated, cfg.sampler))
    paths = stage_paths(cfg)
    paths.out.mkdir(parents=True, exist_ok=True)
    write_trajectories(trajectories, paths.trajectories)
    write_run_record(cfg, "sample")
    return {
        "trajectories": len(trajectories),
        "videos": len(videos),
        "output": str(paths.trajectories),
    }


def run_generate(cfg: PipelineConfig) -> dict:
    """Ground trajectories, run the verified-generation loop, persist outcomes.

    All outcomes land in pairs.jsonl; rejected pairs are additionally copied
    to quarantine.jsonl for audit.
    """
    paths = stage_paths(cfg)
    if not paths.trajectories.exists():
        raise ConfigError(
            f"generate: missing stage output {paths.trajectories}; run the sample stage first"
        )
    trajectories = read_trajectories(paths.trajectories)
    videos = load_videos(cfg)
    label_client = build_label_client(cfg, videos)
    action_client = build_action_client(cfg, videos)
    bundle = LexiconBundle.load_default()
    rules = load_cleanup_rules()
    journal = Path(cfg.gateway.journal_path) if cfg.gateway.journal_path else paths.journal
    paths.out.mkdir(parents=True, exist_ok=True)
    journal.unlink(missing_ok=True)
    gateway = LmmGateway(
        cfg.gateway.build_backend(bundle),
        max_inflight=cfg.gateway.max_inflight,
        retry_limit=cfg.gateway.retry_limit,
        journal_path=journal,
    )
    image_paths = {k: p for v in videos.values() for k, p in v.image_paths.items()}

    grounded = [
        ground_actions(label_nodes(t, label_client), action_client) for t in trajectories
    ]
    tasks = [(traj, g) for traj in grounded for g in cfg.generation.granularities]

    def work(item):
        traj, granularity = item
        return generate_verified(
            traj,
            granularity,
            gateway,
            cfg.verify,
            bundle=bundle,
            rules=rules,
            image_paths=image_paths,
        )

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    created = _created_at(cfg)
    split_info = {"train": list(cfg.split.train_videos), "val": list(cfg.split.val_videos)}
    manifest = write_pairs(
        results,
        paths.pairs,
        videos=split_info,
        template_hashes=template_hashes(),
        created_at=created,
    )
    rejected = [p for p in results if p.status is PairStatus.REJECTED]
    write_pairs(
        rejected,
        paths.quarantine,
        videos=split_info,
        template_hashes=template_hashes(),
        created_at=created,
    )
    write_run_record(cfg, "generate")
    return {
        "pairs": len(results),
        "verified": manifest.counts[PairStatus.VERIFIED.value],
        "rejected": len(rejected),
        "pass_rate": manifest.pass_rate,
        "gateway_calls": gateway.total_calls,
        "output": str(paths.pairs),
    }


def run_verify(cfg: PipelineConfig) -> dict:
    """Re-verify existing instructions against their trajectories in place."""
    from .verifier import reverify

    paths = stage_paths(cfg)
    if not paths.pairs.exists():
        raise ConfigError(
            f"verify: missing stage output {paths.pairs}; run the generate stage first"
        )
    pairs = read_pairs(paths.pairs)
    bundle = LexiconBundle.load_default()
    gateway = None
    if "lmm" in cfg.verify.extractor_order:
        gateway = cfg.gateway.build_gateway(bundle)
    updated = [reverify(p, cfg.verify, bundle=bundle, gateway=gateway) for p in pairs]
    created = _created_at(cfg)
    split_info = {"train": list(cfg.split.train_videos), "val": list(cfg.split.val_videos)}
    manifest = write_pairs(
        updated, paths.pairs, videos=split_info, template_hashes=template_hashes(), created_at=created
    )
    write_pairs(
        [p for p in updated if p.status is PairStatus.REJECTED],
        paths.quarantine,
        videos=split_info,
        template_hashes=template_hashes(),
        created_at=created,
    )
    write_run_record(cfg, "verify")
    return {"pairs": len(updated), "pass_rate": manifest.pass_rate}


def _pretext_seed(base: int, pair_id: str) -> int:
    digest = hashlib.sha256(f"{base}:{pair_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def run_pretext(cfg: PipelineConfig) -> dict:
    """Build the four pretext-task example sets from the verified pairs."""
    paths = stage_paths(cfg)
    if not paths.pairs.exists():
        raise ConfigError(
            f"pretext: missing stage output {paths.pairs}; run the generate stage first"
        )
    pairs = [p for p in read_pairs(paths.pairs) if p.status is PairStatus.VERIFIED]
    provider = HashFeatureProvider(
        regions_per_node=cfg.pretext.regions_per_node,
        feature_dim=cfg.pretext.feature_dim,
        seed=cfg.pretext.seed,
    )
    examples = []
    skipped = {"pij": 0, "pr": 0}
    for pair in pairs:
        seed = _pretext_seed(cfg.pretext.seed, pair.pair_id)
        seq = assemble(pair, provider)
        examples.append(make_mlm(seq, cfg.pretext.mask_prob, seed, pair.pair_id))
        examples.append(make_mvm(seq, cfg.pretext.mask_prob, seed, pair.pair_id))
        try:
            positive, negative = make_pij(pair, provider, seed)
            examples.extend([positive, negative])
        except DegenerateTrajectory:
            skipped["pij"] += 1
        try:
            examples.append(
                make_pr(pair, cfg.pretext.pr_candidates, seed, provider=provider, batch=pairs)
            )
        except InsufficientDistractors:
            skipped["pr"] += 1
    manifest = write_pretext(
        examples, paths.pretext, config_hash=config_hash(cfg), created_at=_created_at(cfg)
    )
    write_run_record(cfg, "pretext")
    return {
        "examples": len(examples),
        "counts_by_variant": manifest["counts_by_variant"],
        "skipped": skipped,
        "output": str(paths.pretext),
    }


def run_export(cfg: PipelineConfig) -> dict:
    paths = stage_paths(cfg)
    if not paths.pairs.exists():
        raise ConfigError(
            f"export: missing stage output {paths.pairs}; run the generate stage first"
        )
    verified = [p for p in read_pairs(paths.pairs) if p.status is PairStatus.VERIFIED]
    export_r2r_style(verified, paths.export)
    write_run_record(cfg, "export")
    return {"episodes": len(verified), "output": str(paths.export)}


def run_stats(cfg: PipelineConfig) -> dict:
    paths = stage_paths(cfg)
    if not paths.pairs.exists():
        raise ConfigError(f"stats: no pairs dataset at {paths.pairs}")
    pairs = read_pairs(paths.pairs)
    manifest = stats(
        pairs,
        videos={"train": list(cfg.split.train_videos), "val": list(cfg.split.val_videos)},
        template_hashes=template_hashes(),
        created_at=_created_at(cfg),
    )
    return manifest.to_dict()


def run_e2e(cfg: PipelineConfig) -> dict:
    """Full pipeline: sample, generate with verification, pretext, export."""
    sample_summary = run_sample(cfg)
    generate_summary = run_generate(cfg)
    pretext_summary = run_pretext(cfg)
    export_summary = run_export(cfg)
    write_run_record(cfg, "e2e")
    return {
        "sample": sample_summary,
        "generate": generate_summary,
        "pretext": pretext_summary,
        "export": export_summary,
    }
