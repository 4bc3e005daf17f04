"""Pretext-task training examples built from verified path-instruction pairs.

A pair is laid out as one multimodal sequence: the visual side is, per room
node, an [IMG] marker followed by the node's n region features (transition
nodes contribute nothing); the text side is [CLS], the instruction's word
tokens, [SEP]. Four example builders operate on that layout: masked language
modeling, masked vision modeling, path-instruction judgment (order-shuffled
negatives) and path ranking (gold among perturbed candidates).
"""

from __future__ import annotations

import hashlib
import math
import random
import re
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence, Union

from .errors import (
    DegenerateTrajectory,
    FeatureProviderUnavailable,
    InsufficientDistractors,
    PreconditionViolated,
)
from .model import PairStatus, PathInstructionPair

IMG = "[IMG]"
CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def basic_tokenize(text: str) -> list[str]:
    """Lowercase word tokens; the layout cares about counts, not subwords."""
    return _TOKEN_RE.findall(text.lower())


Tokenizer = Callable[[str], list[str]]


@dataclass(frozen=True)
class RegionFeature:
    vector: tuple[float, ...]
    region_index: int

    def __post_init__(self):
        if any(not math.isfinite(v) for v in self.vector):
            raise ValueError("region features must be finite")
        if self.region_index < 0:
            raise ValueError("region_index must be non-negative")


class FeatureProvider(Protocol):
    regions_per_node: int
    feature_dim: int

    def regions(self, frame_key: str) -> tuple[RegionFeature, ...]: ...


@dataclass
class HashFeatureProvider:
    """Deterministic pseudo-features: each value is derived from a SHA-256
    of (seed, frame key, region, lane), uniform in [-1, 1). Stands in for a
    real detector so dataset construction is testable without ML runtimes."""

    regions_per_node: int = 36
    feature_dim: int = 2048
    seed: int = 0

    def regions(self, frame_key: str) -> tuple[RegionFeature, ...]:
        out = []
        lanes = (self.feature_dim + 3) // 4  # one SHA-256 digest yields 4 values
        for r in range(self.regions_per_node):
            values: list[float] = []
            for lane in range(lanes):
                digest = hashlib.sha256(
                    f"{self.seed}:{frame_key}:{r}:{lane}".encode("utf-8")
                ).digest()
                for (word,) in struct.iter_unpack(">Q", digest):
                    values.append((word / 2**63) - 1.0)
            out.append(RegionFeature(tuple(values[: self.feature_dim]), r))
        return tuple(out)


VisualToken = Union[str, RegionFeature]


@dataclass(frozen=True)
class MultimodalSequence:
    """Eq-style layout: |visual| = K*(n+1) with [IMG] at every (n+1)-multiple,
    |text| = T+2 bracketed by [CLS]/[SEP]. ``node_keys`` keeps the room-node
    frame keys in block order for permutation and comparison."""

    visual_tokens: tuple[VisualToken, ...]
    text_tokens: tuple[str, ...]
    node_keys: tuple[str, ...]

    def __post_init__(self):
        if len(self.node_keys) == 0:
            raise ValueError("a sequence needs at least one room node")
        if len(self.visual_tokens) % len(self.node_keys) != 0:
            raise ValueError("visual tokens must form equal per-node blocks")
        block = len(self.visual_tokens) // len(self.node_keys)
        for i, token in enumerate(self.visual_tokens):
            is_marker = isinstance(token, str)
            if (i % block == 0) != (is_marker and token == IMG):
                raise ValueError("[IMG] markers must sit exactly at block starts")
        if len(self.text_tokens) < 3 or self.text_tokens[0] != CLS or self.text_tokens[-1] != SEP:
            raise ValueError("text tokens must be [CLS], words..., [SEP]")

    @property
    def num_nodes(self) -> int:
        return len(self.node_keys)

    @property
    def regions_per_node(self) -> int:
        return len(self.visual_tokens) // len(self.node_keys) - 1

    @property
    def img_positions(self) -> tuple[int, ...]:
        block = self.regions_per_node + 1
        return tuple(i for i in range(0, len(self.visual_tokens), block))

    def visual_blocks(self) -> list[tuple[VisualToken, ...]]:
        block = self.regions_per_node + 1
        return [
            tuple(self.visual_tokens[i : i + block])
            for i in range(0, len(self.visual_tokens), block)
        ]

    def with_node_order(self, order: Sequence[int]) -> "MultimodalSequence":
        blocks = self.visual_blocks()
        reordered = [blocks[i] for i in order]
        return MultimodalSequence(
            visual_tokens=tuple(t for b in reordered for t in b),
            text_tokens=self.text_tokens,
            node_keys=tuple(self.node_keys[i] for i in order),
        )


def assemble(
    pair: PathInstructionPair,
    provider: FeatureProvider,
    tokenizer: Tokenizer = basic_tokenize,
) -> MultimodalSequence:
    """Lay out one verified pair as a multimodal sequence; only room nodes
    contribute visual blocks."""
    if pair.status is not PairStatus.VERIFIED:
        raise PreconditionViolated("pretext examples are built from verified pairs only")
    visual: list[VisualToken] = []
    keys: list[str] = []
    for node in pair.trajectory.room_nodes:
        try:
            regions = provider.regions(node.frame.key)
        except Exception as exc:
            raise FeatureProviderUnavailable(str(exc)) from exc
        if len(regions) != provider.regions_per_node:
            raise FeatureProviderUnavailable(
                f"provider yielded {len(regions)} regions, expected {provider.regions_per_node}"
            )
        visual.append(IMG)
        visual.extend(regions)
        keys.append(node.frame.key)
    words = tokenizer(pair.instruction.text)
    return MultimodalSequence(
        visual_tokens=tuple(visual),
        text_tokens=(CLS, *words, SEP),
        node_keys=tuple(keys),
    )


@dataclass(frozen=True)
class MlmPayload:
    sequence: MultimodalSequence  # word tokens replaced by [MASK] in place
    masked_positions: tuple[int, ...]  # indices into text_tokens
    original_tokens: tuple[str, ...]


@dataclass(frozen=True)
class MvmPayload:
    sequence: MultimodalSequence  # masked regions replaced by [MASK]
    masked_positions: tuple[int, ...]  # indices into visual_tokens
    original_features: tuple[RegionFeature, ...]


@dataclass(frozen=True)
class PijPayload:
    sequence: MultimodalSequence
    is_paired: bool


@dataclass(frozen=True)
class PrPayload:
    candidates: tuple[MultimodalSequence, ...]
    gold_index: int
    perturbations: tuple[str, ...]  # how each non-gold candidate was made


VARIANT_MLM = "mlm"
VARIANT_MVM = "mvm"
VARIANT_PIJ = "pij"
VARIANT_PR = "pr"


@dataclass(frozen=True)
class PretextExample:
    variant: str
    source_pair_id: str
    seed: int
    payload: Union[MlmPayload, MvmPayload, PijPayload, PrPayload]


def _draw_mask(positions: Sequence[int], mask_prob: float, rng: random.Random) -> tuple[int, ...]:
    if not 0.0 < mask_prob < 1.0:
        raise ValueError("mask_prob must lie strictly between 0 and 1")
    chosen = [p for p in positions if rng.random() < mask_prob]
    if not chosen:
        chosen = [positions[rng.randrange(len(positions))]]  # at least one masked
    return tuple(chosen)


def make_mlm(
    seq: MultimodalSequence, mask_prob: float, seed: int, source_pair_id: str = ""
) -> PretextExample:
    """Mask word tokens independently with ``mask_prob`` (never [CLS]/[SEP]);
    at least one position is always masked."""
    rng = random.Random(f"{seed}:mlm")
    word_positions = range(1, len(seq.text_tokens) - 1)
    masked = _draw_mask(list(word_positions), mask_prob, rng)
    originals = tuple(seq.text_tokens[p] for p in masked)
    tokens = list(seq.text_tokens)
    for p in masked:
        tokens[p] = MASK
    masked_seq = MultimodalSequence(seq.visual_tokens, tuple(tokens), seq.node_keys)
    return PretextExample(
        VARIANT_MLM, source_pair_id, seed, MlmPayload(masked_seq, masked, originals)
    )


def make_mvm(
    seq: MultimodalSequence, mask_prob: float, seed: int, source_pair_id: str = ""
) -> PretextExample:
    """Mask individual region features independently (never [IMG] markers)."""
    rng = random.Random(f"{seed}:mvm")
    region_positions = [
        i for i, t in enumerate(seq.visual_tokens) if isinstance(t, RegionFeature)
    ]
    masked = _draw_mask(region_positions, mask_prob, rng)
    originals = tuple(seq.visual_tokens[p] for p in masked)
    tokens = list(seq.visual_tokens)
    for p in masked:
        tokens[p] = MASK
    masked_seq = MultimodalSequence(tuple(tokens), seq.text_tokens, seq.node_keys)
    return PretextExample(
        VARIANT_MVM, source_pair_id, seed, MvmPayload(masked_seq, masked, originals)
    )


def _non_identity_order(keys: tuple[str, ...], rng: random.Random) -> list[int]:
    if len(set(keys)) < 2:
        raise DegenerateTrajectory("no permutation changes an all-identical block sequence")
    order = list(range(len(keys)))
    while True:
        rng.shuffle(order)
        if tuple(keys[i] for i in order) != keys:
            return order


def make_pij(
    pair: PathInstructionPair,
    provider: FeatureProvider,
    seed: int,
    tokenizer: Tokenizer = basic_tokenize,
) -> tuple[PretextExample, PretextExample]:
    """Positive example plus a negative whose room-node blocks are permuted
    by a seeded non-identity permutation; the text side is unchanged."""
    seq = assemble(pair, provider, tokenizer)
    if seq.num_nodes < 2:
        raise PreconditionViolated("path-instruction judgment needs at least two room nodes")
    rng = random.Random(f"{seed}:pij")
    order = _non_identity_order(seq.node_keys, rng)
    positive = PretextExample(VARIANT_PIJ, pair.pair_id, seed, PijPayload(seq, True))
    negative = PretextExample(
        VARIANT_PIJ, pair.pair_id, seed, PijPayload(seq.with_node_order(order), False)
    )
    return positive, negative


_PR_POOL = ("shuffle", "truncate", "substitute")


def make_pr(
    pair: PathInstructionPair,
    k: int,
    seed: int,
    *,
    provider: FeatureProvider,
    tokenizer: Tokenizer = basic_tokenize,
    batch: Sequence[PathInstructionPair] = (),
    pool: tuple[str, ...] = _PR_POOL,
) -> PretextExample:
    """Gold sequence among k candidates; distractors are node-order shuffles,
    one-node truncations, or single-node substitutions sourced from other
    trajectories in the batch."""
    if k < 2:
        raise ValueError("path ranking needs at least two candidates")
    unknown = set(pool) - set(_PR_POOL)
    if unknown:
        raise ValueError(f"unknown perturbations: {sorted(unknown)}")
    gold = assemble(pair, provider, tokenizer)
    rng = random.Random(f"{seed}:pr")

    substitute_keys = [
        node.frame.key
        for other in batch
        if other.pair_id != pair.pair_id
        for node in other.trajectory.room_nodes
        if node.frame.key not in gold.node_keys
    ]

    distractors: list[MultimodalSequence] = []
    perturbations: list[str] = []
    attempts = 0
    while len(distractors) < k - 1 and attempts < 50 * k:
        attempts += 1
        kind = rng.choice(pool)
        candidate: Optional[MultimodalSequence] = None
        if kind == "shuffle" and gold.num_nodes >= 2 and len(set(gold.node_keys)) >= 2:
            candidate = gold.with_node_order(_non_identity_order(gold.node_keys, rng))
        elif kind == "truncate" and gold.num_nodes >= 2:
            candidate = gold.with_node_order(range(gold.num_nodes - 1))
        elif kind == "substitute" and substitute_keys:
            position = rng.randrange(gold.num_nodes)
            new_key = rng.choice(substitute_keys)
            blocks = gold.visual_blocks()
            try:
                regions = provider.regions(new_key)
            except Exception as exc:
                raise FeatureProviderUnavailable(str(exc)) from exc
            blocks[position] = (IMG, *regions)
            keys = list(gold.node_keys)
            keys[position] = new_key
            candidate = MultimodalSequence(
                tuple(t for b in blocks for t in b), gold.text_tokens, tuple(keys)
            )
        if candidate is None:
            continue
        if candidate.node_keys == gold.node_keys:
            continue
        if any(candidate.node_keys == d.node_keys for d in distractors):
            continue
        distractors.append(candidate)
        perturbations.append(kind)

    if len(distractors) < k - 1:
        raise InsufficientDistractors(
            f"could only build {len(distractors)} of {k - 1} distinct distractors"
        )
    gold_index = rng.randrange(k)
    candidates = distractors[:]
    candidates.insert(gold_index, gold)
    return PretextExample(
        VARIANT_PR,
        pair.pair_id,
        seed,
        PrPayload(tuple(candidates), gold_index, tuple(perturbations)),
    )
