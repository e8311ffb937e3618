"""Denoising corruption: shuffle a temporal event sequence, then delete each
event independently, keeping the alignment to the original order."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .events import Event, EventSequence


@dataclass(frozen=True)
class CorruptionConfig:
    deletion_prob: float = 0.15
    permutations_per_sequence: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.deletion_prob <= 1.0:
            raise ValueError("deletion_prob must be in [0, 1]")
        if self.permutations_per_sequence < 1:
            raise ValueError("permutations_per_sequence must be >= 1")


@dataclass(frozen=True)
class TrainingExample:
    """Corrupted input paired with the clean target sequence.

    alignment maps input position -> target position."""

    input_events: tuple[Event, ...]
    target: EventSequence
    alignment: tuple[tuple[int, int], ...]

    def alignment_map(self) -> dict[int, int]:
        return dict(self.alignment)

    def target_to_input(self) -> dict[int, int]:
        return {t: i for i, t in self.alignment}

    def to_dict(self) -> dict:
        return {
            "input": [e.to_dict() for e in self.input_events],
            "target": [e.to_dict() for e in self.target.events],
            "alignment": [list(p) for p in self.alignment],
        }


def corrupt(seq: EventSequence, cfg: CorruptionConfig,
            rng: np.random.Generator) -> TrainingExample:
    """Uniform random permutation, then Bernoulli(p) deletion per event; the
    deletion mask is resampled until at least one event survives."""
    ex, _perm = _corrupt_with_perm(seq, cfg, rng)
    return ex


def _corrupt_with_perm(seq, cfg, rng):
    n = len(seq)
    if n < 2:
        raise ValueError("sequences shorter than 2 cannot be corrupted")
    perm = rng.permutation(n)
    for _ in range(1000):
        keep = rng.random(n) >= cfg.deletion_prob
        if keep.any():
            break
    else:
        # p at (or numerically near) 1: force one uniform survivor
        keep = np.zeros(n, dtype=bool)
        keep[rng.integers(n)] = True
    inputs = []
    alignment = []
    for pos_in_perm, tgt_pos in enumerate(perm):
        if keep[pos_in_perm]:
            alignment.append((len(inputs), int(tgt_pos)))
            inputs.append(seq.events[tgt_pos])
    ex = TrainingExample(tuple(inputs), seq, tuple(alignment))
    return ex, tuple(int(t) for t in perm)


def _sequence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def make_training_set(corpus: list[EventSequence],
                      cfg: CorruptionConfig) -> list[TrainingExample]:
    """k corrupted examples per sequence with pairwise-distinct permutations
    whenever the sequence admits that many. Deterministic given the seed."""
    out: list[TrainingExample] = []
    for idx, seq in enumerate(corpus):
        rng = _sequence_rng(cfg.seed, idx)
        n = len(seq)
        n_perms = 1
        for i in range(2, n + 1):
            n_perms *= i
            if n_perms >= cfg.permutations_per_sequence:
                break
        need_distinct = n_perms >= cfg.permutations_per_sequence
        seen: set[tuple[int, ...]] = set()
        for _ in range(cfg.permutations_per_sequence):
            for _attempt in range(10000):
                ex, perm = _corrupt_with_perm(seq, cfg, rng)
                if not need_distinct or perm not in seen:
                    break
            seen.add(perm)
            out.append(ex)
    return out


def dump_examples(examples: Iterable[TrainingExample], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_dict(), ensure_ascii=False) + "\n")
