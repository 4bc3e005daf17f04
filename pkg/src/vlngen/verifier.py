"""Multi-stage instruction verification.

Stages, in order: regular-expression normalization (strip special-character
runs and leaked template fragments, fix casing and punctuation), (room,
action) pair extraction (LMM-prompted with a rule-based fallback, or
rule-based only), consistency comparison against the trajectory as ground
truth, and regeneration on failure up to a configured attempt bound.

The comparison sequence is the K-1 non-terminal (room, action) pairs; the
terminal stop pair is excluded, and the destination is instead checked by
requiring the final room type to appear in the instruction's last sentence
(configurable off).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .errors import (
    ExtractionFailure,
    NonConvergent,
    PipelineError,
    PreconditionViolated,
    RetriesExhausted,
)
from .extraction import parse_pair_lines, proximity_pairs, split_sentences, strip_terminal_stops
from .gateway import CompletionResult, LmmGateway
from .lexicon import LexiconBundle
from .model import (
    Action,
    CleanupEdit,
    EXTRACTOR_LMM,
    EXTRACTOR_RULE_BASED,
    Granularity,
    Instruction,
    MismatchEntry,
    NodeActionPair,
    PairStatus,
    PathInstructionPair,
    Trajectory,
    VerificationRecord,
    Verdict,
)
from .prompts import build_extraction_prompt, build_generation_prompt

CLEANUP_RULES_PATH = Path(__file__).parent / "data" / "cleanup_rules.json"

NORMALIZE_MAX_PASSES = 5

_SENTENCE_START_RE = re.compile(r"(^|[.!?]\s+)([a-z])")


@dataclass(frozen=True)
class CleanupRule:
    rule_id: str
    pattern: str
    replacement: str
    description: str = ""

    def compiled(self) -> re.Pattern:
        return re.compile(self.pattern)


def load_cleanup_rules(path: Path = CLEANUP_RULES_PATH) -> tuple[CleanupRule, ...]:
    records = json.loads(path.read_text(encoding="utf-8"))
    rules = tuple(
        CleanupRule(
            rule_id=r["rule_id"],
            pattern=r["pattern"],
            replacement=r["replacement"],
            description=r.get("description", ""),
        )
        for r in records
    )
    for rule in rules:
        rule.compiled()  # validate patterns at load
    return rules


@dataclass(frozen=True)
class NormalizeResult:
    text: str
    edits: tuple[CleanupEdit, ...]


def _apply_rule(text: str, rule_id: str, pattern: re.Pattern, replacement: str, edits: list[CleanupEdit]) -> str:
    def sub(match: re.Match) -> str:
        after = match.expand(replacement)
        if after != match.group(0):
            edits.append(CleanupEdit(rule_id, match.group(0), after))
        return after

    return pattern.sub(sub, text)


def normalize(text: str, rules: Sequence[CleanupRule]) -> NormalizeResult:
    """Apply the cleanup rules in order until a fixed point, then enforce
    trimming, sentence-initial capitalization and terminal punctuation.

    Raises NonConvergent when no fixed point is reached within
    ``NORMALIZE_MAX_PASSES`` full passes (a pathological rule).
    """
    compiled = [(r.rule_id, r.compiled(), r.replacement) for r in rules]
    edits: list[CleanupEdit] = []
    current = text
    for _ in range(NORMALIZE_MAX_PASSES):
        previous = current
        for rule_id, pattern, replacement in compiled:
            current = _apply_rule(current, rule_id, pattern, replacement, edits)
        stripped = current.strip()
        if stripped != current:
            removed = current[: len(current) - len(current.lstrip())] + current[len(current.rstrip()) :]
            edits.append(CleanupEdit("trim", removed, ""))
            current = stripped
        current = _apply_capitalize(current, edits)
        if current and current[-1] not in ".!?":
            edits.append(CleanupEdit("terminal_punctuation", "", "."))
            current = current + "."
        if current == previous:
            return NormalizeResult(current, tuple(edits))
    raise NonConvergent(f"no fixed point within {NORMALIZE_MAX_PASSES} passes")


def _apply_capitalize(text: str, edits: list[CleanupEdit]) -> str:
    def sub(match: re.Match) -> str:
        after = match.group(1) + match.group(2).upper()
        if after != match.group(0):
            edits.append(CleanupEdit("capitalize_sentence", match.group(0), after))
        return after

    return _SENTENCE_START_RE.sub(sub, text)


class Extractor(Protocol):
    name: str

    def extract(self, instruction_text: str) -> tuple[NodeActionPair, ...]: ...


class RuleBasedExtractor:
    """Lexicon scan with proximity pairing; no model in the loop."""

    name = EXTRACTOR_RULE_BASED

    def __init__(self, bundle: LexiconBundle):
        self.bundle = bundle

    def extract(self, instruction_text: str) -> tuple[NodeActionPair, ...]:
        pairs = proximity_pairs(instruction_text, self.bundle.rooms, self.bundle.actions)
        if not pairs:
            raise ExtractionFailure("no (room, action) pair found in instruction")
        return pairs


class LmmExtractor:
    """Extraction via the pair-extraction prompt; output lines are parsed
    through the canonicalizers."""

    name = EXTRACTOR_LMM

    def __init__(self, gateway: LmmGateway, bundle: LexiconBundle):
        self.gateway = gateway
        self.bundle = bundle

    def extract(self, instruction_text: str) -> tuple[NodeActionPair, ...]:
        result: CompletionResult = self.gateway.complete(build_extraction_prompt(instruction_text))
        pairs = parse_pair_lines(result.text, self.bundle)
        if not pairs:
            raise ExtractionFailure("extraction response contained no parsable pair")
        return pairs


def ground_truth_pairs(traj: Trajectory, include_terminal: bool = False) -> tuple[NodeActionPair, ...]:
    """The trajectory's (room, action) sequence used as verification ground
    truth: one pair per room node, terminal stop pair excluded by default."""
    if not traj.is_grounded:
        raise PreconditionViolated("ground truth requires a grounded trajectory")
    pairs = tuple(
        NodeActionPair(n.label.room_type, n.action) for n in traj.room_nodes
    )
    return pairs if include_terminal else pairs[:-1]


def check_consistency(
    extracted: Sequence[NodeActionPair], truth: Sequence[NodeActionPair]
) -> Verdict:
    """Element-wise comparison: pass iff lengths match and every pair matches
    (room type exact on canonical form, action exact)."""
    entries: list[MismatchEntry] = []
    for i in range(max(len(extracted), len(truth))):
        expected = truth[i] if i < len(truth) else None
        got = extracted[i] if i < len(extracted) else None
        if expected != got:
            entries.append(MismatchEntry(i, expected, got))
    return Verdict.mismatch(entries) if entries else Verdict.passed()


def final_room_mentioned(text: str, room_type: str, bundle: LexiconBundle) -> bool:
    sentences = split_sentences(text)
    if not sentences:
        return False
    return any(m.canonical == room_type for m in bundle.rooms.scan(sentences[-1]))


@dataclass
class VerifyConfig:
    enabled: bool = True
    max_attempts: int = 3
    extractor_order: tuple[str, ...] = (EXTRACTOR_RULE_BASED,)
    require_final_room_mention: bool = True
    label_match: str = "room_type_only"  # objects never participate in matching

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        for name in self.extractor_order:
            if name not in (EXTRACTOR_LMM, EXTRACTOR_RULE_BASED):
                raise ValueError(f"unknown extractor {name!r}")
        if not self.extractor_order:
            raise ValueError("extractor_order must not be empty")
        if self.label_match != "room_type_only":
            raise ValueError("only room_type_only matching is supported")


def _build_extractors(
    cfg: VerifyConfig, gateway: LmmGateway, bundle: LexiconBundle
) -> list[Extractor]:
    extractors: list[Extractor] = []
    for name in cfg.extractor_order:
        if name == EXTRACTOR_LMM:
            extractors.append(LmmExtractor(gateway, bundle))
        else:
            extractors.append(RuleBasedExtractor(bundle))
    return extractors


def _run_extractors(extractors: list[Extractor], text: str) -> tuple[tuple[NodeActionPair, ...], str]:
    last: Optional[ExtractionFailure] = None
    for extractor in extractors:
        try:
            return extractor.extract(text), extractor.name
        except ExtractionFailure as exc:
            last = exc
    raise last if last is not None else ExtractionFailure("no extractor configured")


def verify_instruction_text(
    text: str,
    traj: Trajectory,
    extractors: list[Extractor],
    cfg: VerifyConfig,
    bundle: LexiconBundle,
    attempt: int,
) -> VerificationRecord:
    """Extraction plus consistency check for one already-normalized text."""
    truth = ground_truth_pairs(traj)
    final_room = traj.room_nodes[-1].label.room_type
    try:
        extracted, extractor_name = _run_extractors(extractors, text)
    except ExtractionFailure:
        return VerificationRecord(
            extracted=(),
            verdict=Verdict.extraction_failure(),
            attempts_used=attempt,
            extractor=extractors[-1].name,
        )
    verdict = check_consistency(strip_terminal_stops(extracted), truth)
    if verdict.ok and cfg.require_final_room_mention and not final_room_mentioned(text, final_room, bundle):
        verdict = Verdict.mismatch(
            [MismatchEntry(len(truth), NodeActionPair(final_room, Action.STOP), None)]
        )
    return VerificationRecord(
        extracted=extracted,
        verdict=verdict,
        attempts_used=attempt,
        extractor=extractor_name,
    )


def generate_verified(
    traj: Trajectory,
    granularity: Granularity,
    gateway: LmmGateway,
    cfg: VerifyConfig,
    *,
    bundle: LexiconBundle,
    rules: Sequence[CleanupRule],
    pair_id: Optional[str] = None,
    image_paths: Optional[dict] = None,
) -> PathInstructionPair:
    """Generate, normalize, verify; regenerate on failure up to max_attempts.

    Returns a Verified pair on the first passing attempt, otherwise a
    Rejected pair carrying the final verification record. Gateway failures
    (RetriesExhausted) propagate as PipelineError — an operational failure,
    not a data outcome. With ``cfg.enabled`` false, a single generation is
    emitted as Unchecked, with the record computed for audit but not acted on.
    """
    if not traj.is_grounded:
        raise PreconditionViolated("generation requires a grounded trajectory")
    pid = pair_id or f"{traj.trajectory_id}/{granularity.value}"
    prompt = build_generation_prompt(traj, granularity, image_paths=image_paths)
    extractors = _build_extractors(cfg, gateway, bundle)
    max_attempts = cfg.max_attempts if cfg.enabled else 1

    last_instruction: Optional[Instruction] = None
    last_record: Optional[VerificationRecord] = None
    for attempt in range(1, max_attempts + 1):
        try:
            result = gateway.complete(prompt)
        except RetriesExhausted as exc:
            raise PipelineError(f"gateway gave up: {exc}", stage="generate") from exc
        normalized = normalize(result.text, rules)
        if not normalized.text:
            last_record = VerificationRecord((), Verdict.extraction_failure(), attempt, extractors[-1].name)
            continue
        instruction = Instruction(
            text=normalized.text,
            granularity=granularity,
            model_id=result.model_id,
            attempt=attempt,
            cleanup_edits=normalized.edits,
        )
        record = verify_instruction_text(
            normalized.text, traj, extractors, cfg, bundle, attempt
        )
        last_instruction, last_record = instruction, record
        if not cfg.enabled:
            return PathInstructionPair(pid, traj, instruction, record, PairStatus.UNCHECKED)
        if record.verdict.ok:
            return PathInstructionPair(pid, traj, instruction, record, PairStatus.VERIFIED)

    if last_instruction is None:
        raise PipelineError("backend produced no usable text in any attempt", stage="generate")
    return PathInstructionPair(pid, traj, last_instruction, last_record, PairStatus.REJECTED)


def reverify(
    pair: PathInstructionPair,
    cfg: VerifyConfig,
    *,
    bundle: LexiconBundle,
    gateway: Optional[LmmGateway] = None,
) -> PathInstructionPair:
    """Re-run extraction and consistency on an existing pair's instruction
    (no regeneration); used to re-check datasets after rule/lexicon changes."""
    extractors: list[Extractor] = []
    for name in cfg.extractor_order:
        if name == EXTRACTOR_LMM:
            if gateway is None:
                continue
            extractors.append(LmmExtractor(gateway, bundle))
        else:
            extractors.append(RuleBasedExtractor(bundle))
    if not extractors:
        raise PreconditionViolated("no usable extractor for re-verification")
    record = verify_instruction_text(
        pair.instruction.text, pair.trajectory, extractors, cfg, bundle, pair.instruction.attempt
    )
    status = PairStatus.VERIFIED if record.verdict.ok else PairStatus.REJECTED
    return PathInstructionPair(pair.pair_id, pair.trajectory, pair.instruction, record, status)
