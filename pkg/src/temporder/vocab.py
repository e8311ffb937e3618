"""Deterministic word-level tokenizer and vocabulary.

Tag tokens ([E], [Ei], [A]) are atomic. Sentence punctuation and digits are
isolated as single-character tokens; digit isolation lets the model compose
numeric timexes (years, clock times) from a closed digit alphabet instead of
memorizing each surface form.
"""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"

_TOKEN_RE = re.compile(r"\[E\d*\]|\[A\]|[.,!?:]|\d|[^\s.,!?:\d]+")

_FORMAT_VERSION = 1


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


class Vocab:
    """Immutable token<->id maps; specials occupy the lowest ids in the order
    PAD, BOS, EOS, UNK, [A], [E], [E1]..[Emax]."""

    def __init__(self, corpus_tokens: list[str], max_index: int):
        self.max_index = max_index
        self.itos: list[str] = [PAD, BOS, EOS, UNK, "[A]", "[E]"]
        self.itos.extend(f"[E{i + 1}]" for i in range(max_index))
        self._n_special = len(self.itos)
        for t in corpus_tokens:
            if t not in (PAD, BOS, EOS, UNK) and not re.fullmatch(r"\[E\d*\]|\[A\]", t):
                self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def special_tokens(self) -> tuple[str, ...]:
        return tuple(self.itos[: self._n_special])

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def bos_id(self) -> int:
        return self.stoi[BOS]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK]

    @property
    def arg_tag_id(self) -> int:
        return self.stoi["[A]"]

    @property
    def event_tag_id(self) -> int:
        return self.stoi["[E]"]

    def indexed_tag_ids(self) -> range:
        first = self.stoi["[E1]"]
        return range(first, first + self.max_index)

    def event_tag_ids(self) -> set[int]:
        ids = set(self.indexed_tag_ids())
        ids.add(self.event_tag_id)
        return ids

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self.stoi.get(t, unk) for t in tokenize(text)]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> str:
        skip = {self.pad_id, self.bos_id, self.eos_id} if strip_special else set()
        return " ".join(self.itos[i] for i in ids if i not in skip)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"#temporder-vocab v{_FORMAT_VERSION} max_index={self.max_index}\n")
            for t in self.itos:
                f.write(t + "\n")

    @staticmethod
    def load(path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            m = re.fullmatch(r"#temporder-vocab v(\d+) max_index=(\d+)", header)
            if m is None:
                raise ValueError(f"bad vocab header: {header!r}")
            if int(m.group(1)) != _FORMAT_VERSION:
                raise ValueError(f"unsupported vocab format version {m.group(1)}")
            max_index = int(m.group(2))
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        n_special = 6 + max_index
        v = Vocab(tokens[n_special:], max_index)
        if v.itos != tokens:
            raise ValueError("vocab file does not match canonical special layout")
        return v


def build_vocab(corpus: Iterable[str], min_count: int = 1,
                max_index: int = 30) -> Vocab:
    """Count tokens over text lines; keep count >= min_count, ordered by
    (count desc, token asc). Deterministic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(tokenize(line))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocab(kept, max_index)
