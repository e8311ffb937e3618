"""Decoding and scoring on top of the trained seq2seq model: beam search,
nucleus sampling, sequence scores over full text vs event tags only, event
ordering, insertion ranking, and constrained infilling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .events import (ARG_TAG, Event, ParsedSegment, TagScheme,
                     parse_generated, render_event, render_input,
                     render_target)
from .model import Seq2SeqModel
from .vocab import Vocab, tokenize


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 4
    nucleus_p: float = 0.8
    max_decode_len: int = 200
    banned_token_ids: frozenset[int] = frozenset()
    length_normalize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ValueError("nucleus_p must be in (0, 1]")


@dataclass(frozen=True)
class BeamHypothesis:
    ids: tuple[int, ...]
    score: float


@dataclass(frozen=True)
class OrderingPrediction:
    permutation: tuple[int, ...]  # input index -> output rank
    raw_generated: str
    alignment_flags: tuple[str, ...]  # per input event: tag|predicate|fallback


@dataclass(frozen=True)
class InfillQuery:
    seed_events: tuple[Event, ...]
    insert_position: int

    def __post_init__(self):
        if not 0 <= self.insert_position <= len(self.seed_events):
            raise ValueError("insert position out of range")


class NucleusEmptyError(RuntimeError):
    pass


class MalformedGenerationError(RuntimeError):
    pass


def _step_logits(model: Seq2SeqModel, memory, src_pad_mask,
                 prefix: torch.Tensor) -> torch.Tensor:
    logits = model.decode(prefix, memory, src_pad_mask)
    return logits[:, -1, :]


def beam_search(model: Seq2SeqModel, src_ids: Sequence[int], vocab: Vocab,
                cfg: DecodeConfig) -> list[BeamHypothesis]:
    """Sum-of-log-probs beam search (length normalization off by default),
    ties broken by lexicographic token ids. Returns hypotheses sorted by
    non-increasing score; hypotheses end at EOS or max_decode_len."""
    model.eval()
    src = torch.tensor([list(src_ids)], dtype=torch.long)
    with torch.no_grad():
        memory = model.encode(src)
        src_pad_mask = model.src_pad_mask(src)
        beams = [((vocab.bos_id,), 0.0)]
        finished: list[tuple[tuple[int, ...], float]] = []
        for _ in range(cfg.max_decode_len):
            if not beams:
                break
            prefixes = torch.tensor([list(b[0]) for b in beams], dtype=torch.long)
            mem = memory.expand(len(beams), -1, -1)
            mask = src_pad_mask.expand(len(beams), -1)
            logp = F.log_softmax(_step_logits(model, mem, mask, prefixes), -1)
            logp[:, vocab.pad_id] = float("-inf")
            k = min(cfg.beam_size, logp.shape[1])
            top = torch.topk(logp, k, dim=-1)
            candidates = []
            for b, (ids, score) in enumerate(beams):
                for val, tok in zip(top.values[b].tolist(),
                                    top.indices[b].tolist()):
                    candidates.append((ids + (tok,), score + val))
            candidates.sort(key=lambda c: (-c[1], c[0]))
            beams = []
            for ids, score in candidates:
                if len(beams) + len(finished) >= 2 * cfg.beam_size:
                    break
                if ids[-1] == vocab.eos_id:
                    finished.append((ids, score))
                else:
                    beams.append((ids, score))
                if len(beams) >= cfg.beam_size:
                    break
            if len(finished) >= cfg.beam_size:
                break
        finished.extend(beams)  # unterminated hypotheses at max length
    norm = (lambda ids, s: s / max(1, len(ids) - 1)) if cfg.length_normalize \
        else (lambda ids, s: s)
    hyps = [BeamHypothesis(ids[1:], norm(ids, score)) for ids, score in finished]
    hyps.sort(key=lambda h: (-h.score, h.ids))
    return hyps[:cfg.beam_size]


def nucleus_sample(model: Seq2SeqModel, src_ids: Sequence[int],
                   prefix_ids: Sequence[int], vocab: Vocab, cfg: DecodeConfig,
                   rng: Optional[np.random.Generator] = None,
                   stop_ids: Optional[set[int]] = None,
                   stop_active_from: int = 0,
                   allowed_fn=None) -> list[int]:
    """Top-p sampling continuation of prefix_ids. Banned tokens are zeroed
    before the nucleus is formed; deterministic given the seed. Stops at EOS,
    any stop id, or max_decode_len; the stopping token is not returned.

    allowed_fn, when given, maps the tokens generated so far to the set of
    ids permitted at the next step (None for unrestricted); bans still apply
    on top of it."""
    model.eval()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    stop_ids = stop_ids or set()
    src = torch.tensor([list(src_ids)], dtype=torch.long)
    out: list[int] = []
    with torch.no_grad():
        memory = model.encode(src)
        src_pad_mask = model.src_pad_mask(src)
        prefix = list(prefix_ids)
        for _ in range(cfg.max_decode_len):
            t = torch.tensor([prefix], dtype=torch.long)
            logits = _step_logits(model, memory, src_pad_mask, t)[0]
            logits[vocab.pad_id] = float("-inf")
            if allowed_fn is not None:
                allowed = allowed_fn(out)
                if allowed is not None:
                    mask = torch.full_like(logits, float("-inf"))
                    idx = list(allowed)
                    mask[idx] = logits[idx]
                    logits = mask
            for b in cfg.banned_token_ids:
                logits[b] = float("-inf")
            probs = torch.softmax(logits, -1).numpy().astype(np.float64)
            total = probs.sum()
            if not total > 0:
                raise NucleusEmptyError(
                    "no unbanned token has positive probability mass")
            probs /= total
            order = np.argsort(-probs, kind="stable")
            cum = np.cumsum(probs[order])
            cut = int(np.searchsorted(cum, cfg.nucleus_p)) + 1
            nucleus = order[:cut]
            np_probs = probs[nucleus] / probs[nucleus].sum()
            tok = int(rng.choice(nucleus, p=np_probs))
            if tok == vocab.eos_id or (len(out) >= stop_active_from
                                       and tok in stop_ids):
                break
            out.append(tok)
            prefix.append(tok)
    return out


def _candidate_input_map(src_events: Sequence[Event],
                         candidate_events: Sequence[Event]) -> dict[int, int]:
    """Align candidate events to input slots by identity, first unused wins."""
    used: set[int] = set()
    mapping: dict[int, int] = {}
    for j, e in enumerate(candidate_events):
        for i, s in enumerate(src_events):
            if i not in used and s == e:
                mapping[j] = i
                used.add(i)
                break
    return mapping


def _target_scores(model: Seq2SeqModel, vocab: Vocab, src_text: str,
                   tgt_text: str) -> tuple[list[float], list[int]]:
    """Per-position log-probs of the target tokens (EOS included), plus the
    target token ids."""
    src = torch.tensor([vocab.encode(src_text) + [vocab.eos_id]],
                       dtype=torch.long)
    tgt = vocab.encode(tgt_text) + [vocab.eos_id]
    tgt_in = torch.tensor([[vocab.bos_id] + tgt[:-1]], dtype=torch.long)
    model.eval()
    with torch.no_grad():
        logits = model(src, tgt_in)
        logp = F.log_softmax(logits[0], -1)
        scores = [float(logp[t, tok]) for t, tok in enumerate(tgt)]
    return scores, tgt


def score_gen(model: Seq2SeqModel, src_events: Sequence[Event],
              candidate_events: Sequence[Event], scheme: TagScheme,
              vocab: Vocab) -> float:
    """log probability of generating the candidate's full text rendering,
    BOS excluded, EOS included."""
    src_text = render_input(list(src_events), scheme).text
    tgt_text = render_target(list(candidate_events), scheme,
                             _candidate_input_map(src_events, candidate_events))
    scores, _ = _target_scores(model, vocab, src_text, tgt_text)
    return float(sum(scores))


def score_tag(model: Seq2SeqModel, src_events: Sequence[Event],
              candidate_events: Sequence[Event], scheme: TagScheme,
              vocab: Vocab) -> float:
    """log probability restricted to the indexed event-tag positions of the
    candidate rendering. Indexed scheme only."""
    if scheme.variant != "indexed":
        raise ValueError("tags-only scoring requires the indexed tag scheme")
    src_text = render_input(list(src_events), scheme).text
    tgt_text = render_target(list(candidate_events), scheme,
                             _candidate_input_map(src_events, candidate_events))
    scores, tgt_ids = _target_scores(model, vocab, src_text, tgt_text)
    tag_ids = set(vocab.indexed_tag_ids())
    picked = [s for s, tok in zip(scores, tgt_ids) if tok in tag_ids]
    return float(sum(picked))  # empty sum = 0 for the degenerate no-tag case


def _event_key(e: Event) -> tuple[str, tuple[str, ...]]:
    return e.predicate, tuple(e.argument_texts)


def _overlap_f1(a: str, b: str) -> float:
    ta, tb = a.lower().split(), b.lower().split()
    if not ta or not tb:
        return 0.0
    common = len(set(ta) & set(tb))
    if common == 0:
        return 0.0
    p, r = common / len(ta), common / len(tb)
    return 2 * p * r / (p + r)


def align_output(input_events: Sequence[Event],
                 parsed_segments: Sequence[ParsedSegment],
                 scheme: TagScheme) -> tuple[tuple[int, ...], tuple[str, ...]]:
    """Permutation (input index -> rank) from generated segments.

    Indexed scheme uses tag indices (first occurrence wins); the plain scheme
    matches by exact predicate with an argument-overlap tie-break. Unplaced
    input events are appended in input order."""
    n = len(input_events)
    placed: dict[int, int] = {}  # input index -> output slot order
    flags = ["fallback"] * n
    slot = 0
    unused = list(range(n))

    if scheme.variant == "indexed":
        for seg in parsed_segments:
            if seg.tag_index is not None and 1 <= seg.tag_index <= n:
                i = seg.tag_index - 1
                if i not in placed:
                    placed[i] = slot
                    flags[i] = "tag"
                    slot += 1
        unused = [i for i in range(n) if i not in placed]

    for seg in parsed_segments:
        if not unused:
            break
        if scheme.variant == "indexed" and seg.tag_index is not None:
            continue
        cands = [i for i in unused
                 if input_events[i].predicate == seg.predicate]
        if not cands:
            continue
        best = max(cands, key=lambda i: (
            _overlap_f1(" ".join(input_events[i].argument_texts), seg.body), -i))
        placed[best] = slot
        flags[best] = "predicate"
        slot += 1
        unused.remove(best)

    for i in unused:
        placed[i] = slot
        slot += 1

    ranks = sorted(range(n), key=lambda i: placed[i])
    perm = [0] * n
    for rank, i in enumerate(ranks):
        perm[i] = rank
    return tuple(perm), tuple(flags)


def order_events(model: Seq2SeqModel, input_events: Sequence[Event],
                 scheme: TagScheme, vocab: Vocab,
                 cfg: DecodeConfig) -> OrderingPrediction:
    """Render, beam-decode, parse, and align back to a permutation over
    input indices."""
    if len(input_events) < 2:
        raise ValueError("ordering needs at least 2 events")
    src_text = render_input(list(input_events), scheme).text
    src_ids = vocab.encode(src_text) + [vocab.eos_id]
    best = beam_search(model, src_ids, vocab, cfg)[0]
    raw = vocab.decode(best.ids)
    segments = parse_generated(raw, scheme)
    perm, flags = align_output(input_events, segments, scheme)
    return OrderingPrediction(perm, raw, flags)


def rank_insertions(model: Seq2SeqModel, seed_events: Sequence[Event],
                    new_event: Event, scheme: TagScheme, vocab: Vocab,
                    use_tag_score: bool = False
                    ) -> list[tuple[int, float]]:
    """Score the N+1 insertion candidates, highest first; ties broken by
    position index."""
    if len(seed_events) < 1:
        raise ValueError("need at least one seed event")
    scorer = score_tag if use_tag_score else score_gen
    scored = []
    for pos in range(len(seed_events) + 1):
        cand = list(seed_events[:pos]) + [new_event] + list(seed_events[pos:])
        scored.append((pos, scorer(model, seed_events, cand, scheme, vocab)))
    scored.sort(key=lambda x: (-x[1], x[0]))
    return scored


def predicate_ban_ids(events: Sequence[Event], vocab: Vocab) -> frozenset[int]:
    """Token ids of every seed-event predicate, excluding specials."""
    ids: set[int] = set()
    specials = {vocab.pad_id, vocab.bos_id, vocab.eos_id}
    for e in events:
        for t in tokenize(e.predicate):
            tid = vocab.stoi.get(t)
            if tid is not None and tid not in specials:
                ids.add(tid)
    return frozenset(ids)


@dataclass(frozen=True)
class InfillResult:
    event: Event
    predicate: str
    body: str
    raw_generated: str


def infill(model: Seq2SeqModel, query: InfillQuery, scheme: TagScheme,
           vocab: Vocab, cfg: DecodeConfig,
           rng: Optional[np.random.Generator] = None) -> InfillResult:
    """Generate one new event at the query position via nucleus sampling,
    with every seed predicate token banned at every step. Generation stops
    when the next event tag or EOS is emitted."""
    seeds = list(query.seed_events)
    src_ids = vocab.encode(render_input(seeds, scheme).text) + [vocab.eos_id]
    prefix_events = seeds[:query.insert_position]
    prefix_text = render_target(prefix_events, scheme,
                                {j: j for j in range(len(prefix_events))})
    prefix_ids = [vocab.bos_id] + vocab.encode(prefix_text)

    banned = predicate_ban_ids(seeds, vocab) | cfg.banned_token_ids
    step_cfg = DecodeConfig(beam_size=cfg.beam_size, nucleus_p=cfg.nucleus_p,
                            max_decode_len=cfg.max_decode_len,
                            banned_token_ids=frozenset(banned),
                            seed=cfg.seed)

    tag_ids = set(vocab.event_tag_ids())
    a_id = vocab.stoi[ARG_TAG]
    generatable = (frozenset(range(len(vocab.itos)))
                   - {vocab.pad_id, vocab.bos_id})

    def grammar(out: list[int]) -> Optional[set[int]]:
        """Shape generation as "<tag> predicate [A] body": open with a tag,
        force [A] after at most 4 predicate tokens, then free text."""
        if not out:
            return tag_ids
        if a_id in out:
            return None
        n_pred = len(out) - 1
        if n_pred >= 4:
            return {a_id}
        blocked = tag_ids | {vocab.eos_id}
        if n_pred == 0:
            blocked = blocked | {a_id}
        return generatable - blocked

    # the opening tag of the new event is kept; the next tag ends generation
    out = nucleus_sample(model, src_ids, prefix_ids, vocab, step_cfg, rng=rng,
                         stop_ids=tag_ids, stop_active_from=1,
                         allowed_fn=grammar)
    raw = vocab.decode(out)
    segments = [s for s in parse_generated(raw, scheme) if not s.malformed]
    if not segments or not segments[0].predicate:
        raise MalformedGenerationError(
            f"no parsable event in generated text: {raw!r}")
    seg = segments[0]
    return InfillResult(_event_from_segment(seg), seg.predicate, seg.body, raw)


def _event_from_segment(seg: ParsedSegment) -> Event:
    from .events import Constituent
    pred_tokens = seg.predicate.split()
    body_tokens = seg.body.split()
    # locate the predicate inside the surface form to split the arguments
    idx = -1
    for i in range(len(body_tokens) - len(pred_tokens) + 1):
        if body_tokens[i:i + len(pred_tokens)] == pred_tokens:
            idx = i
            break
    parts: list[Constituent] = []
    if idx >= 0:
        if idx > 0:
            parts.append(Constituent("argument", "ARG-PRE",
                                     " ".join(body_tokens[:idx])))
        parts.append(Constituent("predicate", "V", seg.predicate))
        rest = body_tokens[idx + len(pred_tokens):]
        if rest:
            parts.append(Constituent("argument", "ARG-POST", " ".join(rest)))
    else:
        parts.append(Constituent("predicate", "V", seg.predicate))
        if body_tokens:
            parts.append(Constituent("argument", "ARG-POST", seg.body))
    return Event(tuple(parts))
