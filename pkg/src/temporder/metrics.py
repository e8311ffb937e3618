"""Ordering, classification, and ranking metrics plus evaluation drivers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from .corruption import CorruptionConfig, make_training_set
from .events import Event, EventSequence


def pairwise_accuracy(gold_perm: Sequence[int], pred_perm: Sequence[int]) -> float:
    """Fraction of unordered index pairs whose relative order agrees.

    Permutations map element index -> rank."""
    if set(gold_perm) != set(range(len(gold_perm))) or len(gold_perm) < 2:
        raise ValueError("gold_perm must be a permutation of length >= 2")
    if sorted(pred_perm) != sorted(gold_perm) or len(pred_perm) != len(gold_perm):
        raise ValueError("pred_perm must range over the same index set")
    n = len(gold_perm)
    agree = 0
    pairs = 0
    for i, j in combinations(range(n), 2):
        pairs += 1
        if (gold_perm[i] < gold_perm[j]) == (pred_perm[i] < pred_perm[j]):
            agree += 1
    return agree / pairs


def ranking_em(gold_position: int, ranked_positions: Sequence[int],
               k: int = 2) -> tuple[int, int]:
    """(top-1 EM, top-k EM) hit indicators for the gold position."""
    if gold_position not in ranked_positions:
        raise ValueError("gold position missing from ranking")
    rank = list(ranked_positions).index(gold_position) + 1
    return int(rank == 1), int(rank <= k)


def before_after_eval(pred_perm: Sequence[int], q_index: int, a_index: int,
                      gold_relation: str) -> tuple[str, bool]:
    """Predicted relation of the answer event to the anchor event, read off
    the predicted ordering."""
    predicted = "before" if pred_perm[a_index] < pred_perm[q_index] else "after"
    return predicted, predicted == gold_relation


def f1_score(tp: int, fp: int, fn: int) -> float:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class MetricsReport:
    n_examples: int = 0
    n_errors: int = 0
    pairwise_accuracy: Optional[float] = None
    pairwise_accuracy_len3: Optional[float] = None
    n_len3: int = 0
    exact_match: Optional[float] = None
    top2_exact_match: Optional[float] = None
    accuracy: Optional[float] = None
    f1_before: Optional[float] = None
    f1_after: Optional[float] = None
    macro_f1: Optional[float] = None

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in (
            "n_examples", "n_errors", "pairwise_accuracy",
            "pairwise_accuracy_len3", "n_len3", "exact_match",
            "top2_exact_match", "accuracy", "f1_before", "f1_after",
            "macro_f1")}
        return json.dumps(d, sort_keys=False)


@dataclass(frozen=True)
class OrderingExample:
    """Scrambled input events with the gold rank of each input position."""

    input_events: tuple[Event, ...]
    gold_perm: tuple[int, ...]  # input index -> gold rank
    source_id: str = ""


def make_ordering_eval_set(sequences: list[EventSequence], seed: int = 0,
                           permutations_per_sequence: int = 2
                           ) -> list[OrderingExample]:
    """Scramble each sequence into the given number of distinct permutations
    (no deletion), mirroring the doubling used for ordering evaluation."""
    cfg = CorruptionConfig(deletion_prob=0.0,
                           permutations_per_sequence=permutations_per_sequence,
                           seed=seed)
    out = []
    for ex in make_training_set(sequences, cfg):
        gold = [0] * len(ex.input_events)
        for i, t in ex.alignment:
            gold[i] = t
        out.append(OrderingExample(ex.input_events, tuple(gold),
                                   source_id=ex.target.source_id))
    return out


def evaluate_ordering(order_fn: Callable[[list[Event]], Sequence[int]],
                      eval_set: list[OrderingExample]) -> MetricsReport:
    """Average pairwise accuracy of order_fn over the eval set, with a
    length >= 3 breakdown. Per-example failures are counted, not fatal."""
    report = MetricsReport()
    accs: list[float] = []
    accs3: list[float] = []
    ems: list[int] = []
    for ex in eval_set:
        report.n_examples += 1
        try:
            pred = order_fn(list(ex.input_events))
            acc = pairwise_accuracy(ex.gold_perm, pred)
        except Exception:
            report.n_errors += 1
            continue
        accs.append(acc)
        ems.append(int(tuple(pred) == ex.gold_perm))
        if len(ex.input_events) >= 3:
            accs3.append(acc)
    if accs:
        report.pairwise_accuracy = float(np.mean(accs))
        report.exact_match = float(np.mean(ems))
    if accs3:
        report.pairwise_accuracy_len3 = float(np.mean(accs3))
        report.n_len3 = len(accs3)
    return report


def evaluate_before_after(order_fn: Callable[[list[Event]], Sequence[int]],
                          examples, seed: int = 0) -> MetricsReport:
    """Before/after classification over MCTaco-style examples: shuffle the
    union of context and answer events, order them, then read off the
    predicted relation."""
    rng = np.random.default_rng(seed)
    report = MetricsReport()
    counts = {"before": {"tp": 0, "fp": 0, "fn": 0},
              "after": {"tp": 0, "fp": 0, "fn": 0}}
    n_correct = 0
    n_scored = 0
    for ex in examples:
        report.n_examples += 1
        events = list(ex.all_events)
        shuffled_idx = rng.permutation(len(events))
        shuffled = [events[i] for i in shuffled_idx]
        pos_of = {int(orig): i for i, orig in enumerate(shuffled_idx)}
        try:
            perm = order_fn(shuffled)
        except Exception:
            report.n_errors += 1
            continue
        a_index = pos_of[len(events) - 1]
        q_index = pos_of[ex.q_index]
        predicted, correct = before_after_eval(perm, q_index, a_index, ex.relation)
        n_scored += 1
        n_correct += int(correct)
        if correct:
            counts[ex.relation]["tp"] += 1
        else:
            counts[predicted]["fp"] += 1
            counts[ex.relation]["fn"] += 1
    if n_scored:
        report.accuracy = n_correct / n_scored
        report.f1_before = f1_score(**counts["before"])
        report.f1_after = f1_score(**counts["after"])
        report.macro_f1 = (report.f1_before + report.f1_after) / 2
    return report


def evaluate_insertion_ranking(rank_fn, cases) -> MetricsReport:
    """rank_fn(seed_events, new_event) -> ranked positions, best first."""
    report = MetricsReport()
    ems: list[int] = []
    top2s: list[int] = []
    for case in cases:
        report.n_examples += 1
        try:
            ranked = rank_fn(list(case.seed_events), case.new_event)
            em, top2 = ranking_em(case.gold_position, ranked, k=2)
        except Exception:
            report.n_errors += 1
            continue
        ems.append(em)
        top2s.append(top2)
    if ems:
        report.exact_match = float(np.mean(ems))
        report.top2_exact_match = float(np.mean(top2s))
    return report
