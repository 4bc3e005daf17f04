#!/usr/bin/env python3
"""Desk-scale error-injection trend: emitted-pair quality with the
verification mechanism off vs on, against a lossy mock backend.

The corruption log is the judge: a pair "disagrees" with its trajectory when
the completion it kept was rendered from swapped labels/actions. Prints one
row per configuration, mirroring the shape of an ablation table.

Usage: python scripts/verification_trend.py [--trajectories N] [--swap-prob P]
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from vlngen.gateway import LmmGateway, MockLossyBackend, request_hash
from vlngen.lexicon import LexiconBundle
from vlngen.model import Granularity, PairStatus
from vlngen.prompts import build_generation_prompt
from vlngen.verifier import VerifyConfig, generate_verified, load_cleanup_rules

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from conftest import random_grounded_trajectory  # reuse the trajectory factory


def run(enabled: bool, trajectories, bundle, rules, swap_prob, noise_prob, seed):
    backend = MockLossyBackend(seed, bundle, swap_prob=swap_prob, noise_prob=noise_prob)
    gateway = LmmGateway(backend)
    cfg = VerifyConfig(enabled=enabled, max_attempts=3)
    pairs = [
        generate_verified(t, Granularity.COARSE, gateway, cfg, bundle=bundle, rules=rules)
        for t in trajectories
    ]
    emitted = [p for p in pairs if p.status is not PairStatus.REJECTED]

    def disagrees(pair) -> bool:
        prompt = build_generation_prompt(pair.trajectory, Granularity.COARSE)
        events = backend.events_for(request_hash(prompt), pair.verification.attempts_used - 1)
        return any(e.kind.startswith("swap") for e in events)

    bad = sum(disagrees(p) for p in emitted)
    return {
        "emitted": len(emitted),
        "rejected": len(pairs) - len(emitted),
        "disagreeing": bad,
        "disagree_rate": bad / len(emitted) if emitted else 0.0,
        "gateway_calls": gateway.total_calls,
    }


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--trajectories", type=int, default=200)
    parser.add_argument("--swap-prob", type=float, default=0.3)
    parser.add_argument("--noise-prob", type=float, default=0.3)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    bundle = LexiconBundle.load_default()
    rules = load_cleanup_rules()
    rng = random.Random(args.seed)
    trajectories = [
        random_grounded_trajectory(rng, bundle, video_id=f"trend{i}")
        for i in range(args.trajectories)
    ]

    rows = [
        ("verification off", run(False, trajectories, bundle, rules, args.swap_prob, args.noise_prob, args.seed)),
        ("verification on", run(True, trajectories, bundle, rules, args.swap_prob, args.noise_prob, args.seed)),
    ]
    header = f"{'configuration':<18} {'emitted':>8} {'rejected':>9} {'disagreeing':>12} {'rate':>7} {'calls':>6}"
    print(header)
    print("-" * len(header))
    for name, row in rows:
        print(
            f"{name:<18} {row['emitted']:>8} {row['rejected']:>9} "
            f"{row['disagreeing']:>12} {row['disagree_rate']:>7.3f} {row['gateway_calls']:>6}"
        )


if __name__ == "__main__":
    main()
