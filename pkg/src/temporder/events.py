"""Event data model, surface-order rendering, parsing of generated text,
and entity-chain extraction from pre-parsed documents."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from typing import Iterable, Optional

PREDICATE = "predicate"
ARGUMENT = "argument"

EVENT_TAG = "[E]"
ARG_TAG = "[A]"

_TAG_RE = re.compile(r"^\[E(\d+)?\]$")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class Constituent:
    kind: str  # predicate | argument
    role: str
    text: str

    def __post_init__(self):
        if self.kind not in (PREDICATE, ARGUMENT):
            raise ValueError(f"bad constituent kind: {self.kind!r}")
        if not self.text.strip():
            raise ValueError("constituent text must be nonempty")
        object.__setattr__(self, "text", " ".join(self.text.split()))


@dataclass(frozen=True)
class Event:
    """One predicate plus role-labeled arguments, in surface order."""

    constituents: tuple[Constituent, ...]
    sentence_index: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "constituents", tuple(self.constituents))
        n_pred = sum(1 for c in self.constituents if c.kind == PREDICATE)
        if n_pred != 1:
            raise ValueError(f"event must have exactly one predicate, got {n_pred}")

    @property
    def predicate(self) -> str:
        return next(c.text for c in self.constituents if c.kind == PREDICATE)

    @property
    def argument_texts(self) -> list[str]:
        return [c.text for c in self.constituents if c.kind == ARGUMENT]

    def to_dict(self) -> dict:
        return {
            "constituents": [
                {"kind": c.kind, "role": c.role, "text": c.text}
                for c in self.constituents
            ]
        }

    @staticmethod
    def from_dict(d: dict, sentence_index: Optional[int] = None) -> "Event":
        cs = tuple(
            Constituent(c["kind"], c.get("role", ""), c["text"])
            for c in d["constituents"]
        )
        return Event(cs, sentence_index=sentence_index)


def make_event(*parts: tuple[str, str], predicate_role: str = "V",
               sentence_index: Optional[int] = None) -> Event:
    """Convenience builder: parts are (role, text); role == predicate_role
    marks the predicate."""
    cs = tuple(
        Constituent(PREDICATE if role == predicate_role else ARGUMENT, role, text)
        for role, text in parts
    )
    return Event(cs, sentence_index=sentence_index)


@dataclass(frozen=True)
class EventSequence:
    """Temporally ordered events from one scenario."""

    events: tuple[Event, ...]
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def __len__(self) -> int:
        return len(self.events)

    def to_dict(self) -> dict:
        return {"id": self.source_id, "events": [e.to_dict() for e in self.events]}

    @staticmethod
    def from_dict(d: dict) -> "EventSequence":
        return EventSequence(
            tuple(Event.from_dict(e) for e in d["events"]),
            source_id=d.get("id", ""),
        )


@dataclass(frozen=True)
class SRLDocument:
    """Pre-parsed document: per-sentence events, discourse order."""

    sentences: tuple[tuple[Event, ...], ...]
    source_id: str = ""

    @staticmethod
    def from_dict(d: dict) -> "SRLDocument":
        sents = []
        for i, sent in enumerate(d["sentences"]):
            sents.append(tuple(Event.from_dict(e, sentence_index=i) for e in sent))
        return SRLDocument(tuple(sents), source_id=d.get("id", ""))


@dataclass(frozen=True)
class TagScheme:
    """Event boundary tokens: a single [E] tag, or indexed [E1]..[Emax]."""

    variant: str  # plain | indexed
    max_index: int = 30

    def __post_init__(self):
        if self.variant not in ("plain", "indexed"):
            raise ValueError(f"bad tag scheme variant: {self.variant!r}")
        if self.max_index < 1:
            raise ValueError("max_index must be positive")

    def input_tag(self, i: int) -> str:
        """Tag for the i-th (0-based) input event."""
        if self.variant == "plain":
            return EVENT_TAG
        if i >= self.max_index:
            raise ValueError(f"event index {i} exceeds max_index {self.max_index}")
        return f"[E{i + 1}]"

    def tokens(self) -> list[str]:
        toks = [EVENT_TAG, ARG_TAG]
        toks.extend(f"[E{i + 1}]" for i in range(self.max_index))
        return toks


def tag_index(token: str) -> Optional[int]:
    """1-based index for [Ei] tokens, 0 for bare [E], None for non-tags."""
    m = _TAG_RE.match(token)
    if m is None:
        return None
    return int(m.group(1)) if m.group(1) else 0


def render_event(e: Event) -> str:
    """Surface form: constituent texts joined by spaces, no tags."""
    return " ".join(c.text for c in e.constituents)


@dataclass
class RenderedInput:
    text: str
    degenerate: bool = False


def render_input(events: list[Event], scheme: TagScheme) -> RenderedInput:
    """Encoder-side text: each event preceded by its boundary tag."""
    if not events:
        return RenderedInput("", degenerate=True)
    if scheme.variant == "indexed" and len(events) > scheme.max_index:
        raise ValueError(
            f"{len(events)} events exceed indexed tag capacity {scheme.max_index}"
        )
    parts = []
    for i, e in enumerate(events):
        parts.append(scheme.input_tag(i))
        parts.append(render_event(e))
    return RenderedInput(" ".join(parts))


def render_target(events: list[Event], scheme: TagScheme,
                  input_map: Optional[dict[int, int]] = None) -> str:
    """Decoder-side text: "<tag> predicate [A] surface-form" per event.

    input_map sends target positions to input indices; under the indexed
    scheme an aligned event gets that input slot's [Ei] tag, novel events
    keep the bare [E]."""
    input_map = input_map or {}
    parts = []
    for j, e in enumerate(events):
        tag = EVENT_TAG
        if scheme.variant == "indexed" and j in input_map:
            tag = scheme.input_tag(input_map[j])
        parts.append(f"{tag} {e.predicate} {ARG_TAG} {render_event(e)}")
    return " ".join(parts)


@dataclass(frozen=True)
class ParsedSegment:
    tag_index: Optional[int]  # 1-based [Ei] index, None for bare [E]
    predicate: str
    body: str
    malformed: bool = False


def parse_generated(text: str, scheme: TagScheme) -> list[ParsedSegment]:
    """Split generated text at event tags and recover (tag, predicate, body)
    per segment. Malformed segments are flagged, never dropped."""
    tokens = text.split()
    segments: list[ParsedSegment] = []
    current: Optional[list[str]] = None
    current_tag: Optional[int] = None

    def flush():
        if current is None:
            return
        if ARG_TAG in current:
            at = current.index(ARG_TAG)
            pred = " ".join(current[:at])
            body = " ".join(current[at + 1:])
            malformed = not pred
        else:
            pred = " ".join(current)
            body = ""
            malformed = True
        idx = current_tag if current_tag else None
        segments.append(ParsedSegment(idx, pred, body, malformed=malformed))

    for tok in tokens:
        ti = tag_index(tok)
        if ti is not None:
            flush()
            current = []
            current_tag = ti
        elif current is not None:
            current.append(tok)
        # tokens before the first tag are discarded
    flush()
    return segments


def _shared_tokens(a: Event, b: Event, stopwords: set[str]) -> bool:
    def arg_tokens(e: Event) -> set[str]:
        toks = set()
        for t in " ".join(e.argument_texts).lower().split():
            t = t.translate(_PUNCT_TABLE)
            if t and t not in stopwords:
                toks.add(t)
        return toks

    return bool(arg_tokens(a) & arg_tokens(b))


def extract_chains(doc: SRLDocument, stopwords: set[str]) -> list[EventSequence]:
    """Maximal discourse-ordered chains of cross-sentence events where each
    adjacent pair shares a non-stopword argument token."""
    nodes: list[Event] = [e for sent in doc.sentences for e in sent]
    n = len(nodes)
    succ: list[list[int]] = [[] for _ in range(n)]
    has_pred = [False] * n
    for i in range(n):
        for j in range(n):
            si, sj = nodes[i].sentence_index, nodes[j].sentence_index
            if si is None or sj is None or sj <= si:
                continue
            if _shared_tokens(nodes[i], nodes[j], stopwords):
                succ[i].append(j)
                has_pred[j] = True

    chains: list[tuple[int, ...]] = []

    def walk(path: list[int]):
        exts = succ[path[-1]]
        if not exts:
            if len(path) >= 2:
                chains.append(tuple(path))
            return
        for j in exts:
            walk(path + [j])

    for i in range(n):
        if not has_pred[i]:
            walk([i])

    # drop chains that are contiguous subsequences of longer returned chains
    kept: list[tuple[int, ...]] = []
    for c in sorted(set(chains), key=lambda c: (-len(c), c)):
        if not any(_is_infix(c, longer) for longer in kept):
            kept.append(c)
    kept.sort()
    return [
        EventSequence(tuple(nodes[i] for i in c), source_id=doc.source_id)
        for c in kept
    ]


def _is_infix(short: tuple, long: tuple) -> bool:
    if len(short) >= len(long):
        return False
    return any(
        long[i:i + len(short)] == short
        for i in range(len(long) - len(short) + 1)
    )


def load_jsonl(path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def load_sequences(path) -> list[EventSequence]:
    return [EventSequence.from_dict(d) for d in load_jsonl(path)]


def load_documents(path) -> list[SRLDocument]:
    return [SRLDocument.from_dict(d) for d in load_jsonl(path)]


def dump_sequences(seqs: Iterable[EventSequence], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in seqs:
            f.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def load_stopwords(path=None) -> set[str]:
    if path is None:
        from importlib.resources import files
        text = (files("temporder.data") / "stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    return {w.strip().lower() for w in text.splitlines() if w.strip()}
