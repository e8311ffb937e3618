"""Discriminative ordering baselines: a pairwise precedence scorer trained
with a structured hinge loss and decoded by exact permutation search, and a
pointer network. Both reuse the toy transformer encoder."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .events import Event, TagScheme, render_input
from .model import (MODEL_BUILDERS, ModelConfig, TrainConfig,
                    TransformerEncoder, lr_factor, pad_batch)
from .vocab import Vocab

MAX_EXACT_N = 8


@dataclass(frozen=True)
class SSVMConfig:
    """Margin = number of event pairs ordered differently from gold."""

    max_events: int = MAX_EXACT_N


def permutation_delta(perm_a: Sequence[int], perm_b: Sequence[int]) -> int:
    """Count of unordered index pairs the two permutations order
    differently. Permutations map element index -> rank."""
    n = len(perm_a)
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            if (perm_a[i] < perm_a[j]) != (perm_b[i] < perm_b[j]):
                count += 1
    return count


class _EncoderBase(nn.Module):
    def __init__(self, cfg: ModelConfig, pad_id: int = 0):
        super().__init__()
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.pad_id = pad_id
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.d_model,
                                      padding_idx=pad_id)
        self.encoder = TransformerEncoder(cfg, self.embedding)

    def event_vectors(self, input_events: Sequence[Event], scheme: TagScheme,
                      vocab: Vocab) -> torch.Tensor:
        """Encoder outputs at the event-tag positions, one row per event."""
        text = render_input(list(input_events), scheme).text
        ids = vocab.encode(text)
        tag_ids = vocab.event_tag_ids()
        positions = [i for i, t in enumerate(ids) if t in tag_ids]
        if len(positions) != len(input_events):
            raise ValueError("could not locate one tag position per event")
        src = torch.tensor([ids], dtype=torch.long)
        enc = self.encoder(src, src == self.pad_id)
        return enc[0, positions, :]


class PairwiseModel(_EncoderBase):
    """B[i][j] = g([U_i; U_j; U_i * U_j]): score that event i precedes
    event j."""

    def __init__(self, cfg: ModelConfig, hidden: int = 64, pad_id: int = 0):
        super().__init__(cfg, pad_id)
        self.hidden = hidden
        self.scorer = nn.Sequential(
            nn.Linear(3 * cfg.d_model, hidden), nn.ReLU(),
            nn.Linear(hidden, 1))


def pairwise_scores(model: PairwiseModel, input_events: Sequence[Event],
                    scheme: TagScheme, vocab: Vocab) -> torch.Tensor:
    """Full n x n precedence score matrix; the diagonal is zero and unused.
    B[i][j] and B[j][i] are computed independently."""
    n = len(input_events)
    if n < 2:
        raise ValueError("need at least 2 events")
    u = model.event_vectors(input_events, scheme, vocab)
    ui = u[:, None, :].expand(n, n, -1)
    uj = u[None, :, :].expand(n, n, -1)
    feats = torch.cat([ui, uj, ui * uj], dim=-1)
    scores = model.scorer(feats).squeeze(-1)
    mask = 1.0 - torch.eye(n, dtype=scores.dtype)
    return scores * mask


def permutation_score(B, order: Sequence[int]):
    """Sum of B[a][b] over pairs where a is ranked before b; order lists
    event indices in predicted temporal order."""
    total = 0.0
    for r, a in enumerate(order):
        for b in order[r + 1:]:
            total = total + B[a][b]
    return total


def _order_to_perm(order: Sequence[int]) -> tuple[int, ...]:
    perm = [0] * len(order)
    for rank, i in enumerate(order):
        perm[i] = rank
    return tuple(perm)


_PERM_CACHE: dict[int, tuple[list[tuple[int, ...]], np.ndarray]] = {}


def _perm_masks(n: int) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """All orderings of n items in lexicographic order, plus a boolean
    (n!, n, n) tensor marking pairs (a, b) with a ranked before b."""
    if n not in _PERM_CACHE:
        orders = list(permutations(range(n)))
        masks = np.zeros((len(orders), n, n), dtype=bool)
        for k, order in enumerate(orders):
            for r, a in enumerate(order):
                for b in order[r + 1:]:
                    masks[k, a, b] = True
        _PERM_CACHE[n] = (orders, masks)
    return _PERM_CACHE[n]


def global_decode(B) -> tuple[int, ...]:
    """Exact argmax permutation (input index -> rank) of the pairwise
    objective over all n! orderings; ties go to the lexicographically first
    ordering. n is capped at 8."""
    B = np.asarray(B.detach().numpy() if torch.is_tensor(B) else B,
                   dtype=np.float64)
    n = B.shape[0]
    if n > MAX_EXACT_N:
        raise ValueError(f"exact search is limited to n <= {MAX_EXACT_N}, got {n}")
    orders, masks = _perm_masks(n)
    scores = (masks * B[None]).sum(axis=(1, 2))
    return _order_to_perm(orders[int(np.argmax(scores))])


def ssvm_loss(B: torch.Tensor, gold_perm: Sequence[int],
              cfg: SSVMConfig = SSVMConfig()) -> torch.Tensor:
    """Structured hinge: max over permutations of margin-augmented score
    minus the gold score, clipped at zero. Loss-augmented argmax by
    enumeration (n <= 8)."""
    n = B.shape[0]
    if n > cfg.max_events:
        raise ValueError(f"ssvm enumeration limited to n <= {cfg.max_events}")
    orders, masks = _perm_masks(n)
    mask_t = torch.from_numpy(masks).to(B.dtype)
    scores = (mask_t * B[None]).sum(dim=(1, 2))
    gold_t = torch.tensor(list(gold_perm))
    # pair (a, b) is inverted when gold ranks a before b but the candidate
    # does not
    gold_before = (gold_t[:, None] < gold_t[None, :]).numpy()
    disagreements = np.logical_xor(masks, gold_before[None]).sum(axis=(1, 2)) // 2
    augmented = scores + torch.tensor(disagreements, dtype=B.dtype)
    gold_order = sorted(range(n), key=lambda i: gold_perm[i])
    gold_idx = orders.index(tuple(gold_order))
    return torch.clamp(augmented.max() - scores[gold_idx], min=0.0)


class PointerNet(_EncoderBase):
    """Recurrent decoder with dot-product attention over event vectors;
    emits a distribution over unselected input positions each step."""

    def __init__(self, cfg: ModelConfig, pad_id: int = 0):
        super().__init__(cfg, pad_id)
        self.cell = nn.GRUCell(cfg.d_model, cfg.d_model)
        self.start = nn.Parameter(torch.zeros(cfg.d_model))
        self.init_proj = nn.Linear(cfg.d_model, cfg.d_model)


@dataclass
class PointerState:
    event_vectors: torch.Tensor  # n x d
    hidden: torch.Tensor         # d
    selected_mask: torch.Tensor  # n bool


def pointer_init(model: PointerNet, input_events: Sequence[Event],
                 scheme: TagScheme, vocab: Vocab) -> PointerState:
    u = model.event_vectors(input_events, scheme, vocab)
    h = torch.tanh(model.init_proj(u.mean(dim=0)))
    h = model.cell(model.start, h)
    return PointerState(u, h, torch.zeros(u.shape[0], dtype=torch.bool))


def pointer_step(model: PointerNet, state: PointerState) -> torch.Tensor:
    """Distribution over unselected positions; sums to 1."""
    d = state.event_vectors.shape[1]
    scores = state.event_vectors @ state.hidden / (d ** 0.5)
    scores = scores.masked_fill(state.selected_mask, float("-inf"))
    return torch.softmax(scores, dim=-1)


def pointer_advance(model: PointerNet, state: PointerState,
                    choice: int) -> PointerState:
    mask = state.selected_mask.clone()
    mask[choice] = True
    h = model.cell(state.event_vectors[choice], state.hidden)
    return PointerState(state.event_vectors, h, mask)


def pointer_decode(model: PointerNet, input_events: Sequence[Event],
                   scheme: TagScheme, vocab: Vocab) -> tuple[int, ...]:
    """Greedy argmax with selected positions masked; always a permutation."""
    model.eval()
    with torch.no_grad():
        state = pointer_init(model, input_events, scheme, vocab)
        order = []
        for _ in range(len(input_events)):
            probs = pointer_step(model, state)
            choice = int(probs.argmax())
            order.append(choice)
            state = pointer_advance(model, state, choice)
    return _order_to_perm(order)


def pointer_nll(model: PointerNet, input_events: Sequence[Event],
                gold_perm: Sequence[int], scheme: TagScheme,
                vocab: Vocab) -> torch.Tensor:
    """Teacher-forced negative log likelihood of the gold ordering."""
    state = pointer_init(model, input_events, scheme, vocab)
    gold_order = sorted(range(len(input_events)), key=lambda i: gold_perm[i])
    nll = torch.zeros(())
    for choice in gold_order:
        probs = pointer_step(model, state)
        nll = nll - torch.log(probs[choice] + 1e-12)
        state = pointer_advance(model, state, choice)
    return nll / len(gold_order)


def _train_baseline(model, dataset, tcfg: TrainConfig, loss_of) -> list[float]:
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate)
    rng = np.random.default_rng(tcfg.seed)
    total = tcfg.resolved_total_steps()
    losses = []
    model.train()
    order: list[int] = []
    pos = 0
    for step in range(total):
        lr = tcfg.learning_rate * lr_factor(step, tcfg)
        for g in opt.param_groups:
            g["lr"] = lr
        batch = []
        while len(batch) < min(tcfg.batch_size, len(dataset)):
            if pos >= len(order):
                order = list(rng.permutation(len(dataset)))
                pos = 0
            batch.append(dataset[order[pos]])
            pos += 1
        loss = sum(loss_of(model, ex) for ex in batch) / len(batch)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite loss at step {step}")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip_norm)
        opt.step()
        losses.append(loss.item())
    model.eval()
    return losses


def train_pairwise(model: PairwiseModel, dataset, tcfg: TrainConfig,
                   scheme: TagScheme, vocab: Vocab,
                   ssvm_cfg: SSVMConfig = SSVMConfig()) -> list[float]:
    """dataset: list of (input_events, gold_perm)."""

    def loss_of(m, ex):
        events, gold = ex
        B = pairwise_scores(m, events, scheme, vocab)
        return ssvm_loss(B, gold, ssvm_cfg)

    return _train_baseline(model, dataset, tcfg, loss_of)


def train_pointer(model: PointerNet, dataset, tcfg: TrainConfig,
                  scheme: TagScheme, vocab: Vocab) -> list[float]:
    """dataset: list of (input_events, gold_perm)."""

    def loss_of(m, ex):
        events, gold = ex
        return pointer_nll(m, events, gold, scheme, vocab)

    return _train_baseline(model, dataset, tcfg, loss_of)


def _build_pairwise(config: dict) -> PairwiseModel:
    hidden = config.pop("scorer_hidden", 64)
    return PairwiseModel(ModelConfig(**config), hidden=hidden)


def _build_pointer(config: dict) -> PointerNet:
    return PointerNet(ModelConfig(**config))


MODEL_BUILDERS["pairwise"] = _build_pairwise
MODEL_BUILDERS["pointer"] = _build_pointer
