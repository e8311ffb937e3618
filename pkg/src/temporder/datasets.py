"""Synthetic corpora (timex scenarios, narrative schemas), relation-DAG
sequence extraction, before/after question parsing, and ROUGE-L."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib.resources import files
from typing import Optional

import numpy as np

from .events import Constituent, Event, EventSequence, make_event, render_event

MONTHS = ["January", "February", "March", "April", "May", "June", "July",
          "August", "September", "October", "November", "December"]
WEEKDAYS = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday",
            "Saturday", "Sunday"]

TIMEX_KINDS = ("year", "month", "weekday", "clock24", "clock12")


@dataclass(frozen=True)
class TimexSpec:
    kind: str
    year_range: tuple[int, int] = (1000, 2100)
    year_values: Optional[tuple[int, ...]] = None  # overrides year_range

    def __post_init__(self):
        if self.kind not in TIMEX_KINDS:
            raise ValueError(f"unknown timex kind: {self.kind!r}")
        lo, hi = self.year_range
        if not (1000 <= lo <= hi <= 2100):
            raise ValueError("year_range must lie within [1000, 2100]")

    def preposition(self) -> str:
        return {"year": "in", "month": "in", "weekday": "on",
                "clock24": "at", "clock12": "at"}[self.kind]

    def n_values(self) -> int:
        if self.kind == "year":
            if self.year_values is not None:
                return len(self.year_values)
            return self.year_range[1] - self.year_range[0] + 1
        return {"month": 12, "weekday": 7,
                "clock24": 24 * 60, "clock12": 24 * 60}[self.kind]

    def sample(self, rng: np.random.Generator) -> "Timex":
        """One timex with its chronological sort key and surface text."""
        if self.kind == "year":
            if self.year_values is not None:
                y = int(self.year_values[rng.integers(len(self.year_values))])
            else:
                y = int(rng.integers(self.year_range[0], self.year_range[1] + 1))
            return Timex(y, f"{self.preposition()} {y}")
        if self.kind == "month":
            m = int(rng.integers(12))
            return Timex(m, f"{self.preposition()} {MONTHS[m]}")
        if self.kind == "weekday":
            d = int(rng.integers(7))
            return Timex(d, f"{self.preposition()} {WEEKDAYS[d]}")
        h = int(rng.integers(24))
        minute = int(rng.integers(60))
        key = h * 60 + minute
        if self.kind == "clock24":
            return Timex(key, f"{self.preposition()} {h}:{minute:02d}")
        half = "am" if h < 12 else "pm"
        h12 = h % 12
        if h12 == 0:
            h12 = 12
        return Timex(key, f"{self.preposition()} {h12}:{minute:02d} {half}")


@dataclass(frozen=True)
class Timex:
    sort_key: int
    text: str


# Template events the timexes get appended to. The "year" templates follow
# the obituary style; the rest are ordinary daily events.
_TIMEX_TEMPLATES = {
    "year": [Event((Constituent("argument", "ARG1", "the king"),
                    Constituent("predicate", "V", "die"))),
             Event((Constituent("argument", "ARG1", "the poet"),
                    Constituent("predicate", "V", "die"))),
             Event((Constituent("argument", "ARG1", "the painter"),
                    Constituent("predicate", "V", "die")))],
    "daily": [make_event(("ARG0", "he"), ("V", "work"), ("ARG1", "on the report")),
              make_event(("ARG0", "he"), ("V", "eat"), ("ARG1", "a sandwich")),
              make_event(("ARG0", "he"), ("V", "meet"), ("ARG1", "a friend"))],
}


def _append_timex(e: Event, timex: Timex) -> Event:
    return Event(e.constituents + (Constituent("argument", "ARGM-TMP", timex.text),))


def gen_timex_corpus(spec: TimexSpec, n_sequences: int, events_per_seq: int,
                     rng: np.random.Generator) -> list[EventSequence]:
    """Event sequences anchored with distinct sampled timexes; gold order is
    the chronological order of the timexes."""
    if spec.n_values() < events_per_seq:
        raise ValueError("timex value range too small for distinct sampling")
    templates = _TIMEX_TEMPLATES["year" if spec.kind == "year" else "daily"]
    out = []
    for i in range(n_sequences):
        timexes: list[Timex] = []
        seen = set()
        while len(timexes) < events_per_seq:
            t = spec.sample(rng)
            if t.sort_key not in seen:
                seen.add(t.sort_key)
                timexes.append(t)
        # assign timexes to (cycled) template events, then order by time
        anchored = [
            _append_timex(templates[j % len(templates)], t)
            for j, t in enumerate(timexes)
        ]
        order = sorted(range(len(anchored)), key=lambda j: timexes[j].sort_key)
        out.append(EventSequence(tuple(anchored[j] for j in order),
                                 source_id=f"timex-{spec.kind}-{i}"))
    return out


@dataclass(frozen=True)
class ScenarioSchema:
    """Ordered step templates with slot fillers; adjacent steps share the
    actor slot so generated chains have a common entity."""

    name: str
    slots: dict[str, tuple[str, ...]]
    steps: tuple[tuple[tuple[str, str], ...], ...]  # per step: (role, text-template)

    def __post_init__(self):
        if len(self.steps) < 3:
            raise ValueError(f"schema {self.name} needs >= 3 steps")

    def instantiate(self, fillers: dict[str, str]) -> list[Event]:
        events = []
        for step in self.steps:
            parts = []
            for role, tmpl in step:
                text = tmpl
                for slot, val in fillers.items():
                    text = text.replace("{" + slot + "}", val)
                parts.append((role, text))
            events.append(make_event(*parts))
        return events

    def step_predicates(self) -> tuple[str, ...]:
        return tuple(next(t for r, t in step if r == "V")
                     for step in self.steps)

    def split_fillers(self, slot: str, split: str) -> tuple[str, ...]:
        vals = self.slots[slot]
        cut = max(1, int(round(len(vals) * 0.75)))
        if split == "train":
            return vals[:cut]
        if split == "eval":
            return vals[cut:] if cut < len(vals) else vals[-1:]
        return vals


def load_schemas(path=None) -> list[ScenarioSchema]:
    if path is None:
        raw = json.loads((files("temporder.data") / "schemas.json").read_text("utf-8"))
    else:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    out = []
    for d in raw:
        out.append(ScenarioSchema(
            name=d["name"],
            slots={k: tuple(v) for k, v in d["slots"].items()},
            steps=tuple(tuple((r, t) for r, t in step["constituents"])
                        for step in d["steps"]),
        ))
    return out


def _fill_slots(schema: ScenarioSchema, rng: np.random.Generator,
                split: str) -> dict[str, str]:
    fillers = {}
    for slot in schema.slots:
        vals = schema.split_fillers(slot, split)
        fillers[slot] = vals[rng.integers(len(vals))]
    return fillers


def gen_schema_corpus(schemas: list[ScenarioSchema], n: int,
                      rng: np.random.Generator, drop_prob: float = 0.0,
                      min_events: int = 3,
                      split: str = "all") -> list[EventSequence]:
    """Sample sequences in schema step order; steps may be dropped at random
    as long as min_events survive."""
    if len(schemas) < 1:
        raise ValueError("need at least one schema")
    out = []
    for i in range(n):
        schema = schemas[rng.integers(len(schemas))]
        events = schema.instantiate(_fill_slots(schema, rng, split))
        if drop_prob > 0 and len(events) > min_events:
            keep = [j for j in range(len(events)) if rng.random() >= drop_prob]
            while len(keep) < min_events:
                missing = sorted(set(range(len(events))) - set(keep))
                keep.append(missing[int(rng.integers(len(missing)))])
                keep.sort()
            events = [events[j] for j in sorted(keep)]
        out.append(EventSequence(tuple(events),
                                 source_id=f"schema-{schema.name}-{i}"))
    return out


@dataclass(frozen=True)
class InfillCase:
    """One deleted-step recovery problem; the schema grammar is the oracle."""

    seed_events: tuple[Event, ...]
    new_event: Event
    gold_position: int
    schema_name: str


def make_infill_cases(schemas: list[ScenarioSchema], n: int,
                      rng: np.random.Generator,
                      split: str = "all") -> list[InfillCase]:
    cases = []
    for _ in range(n):
        schema = schemas[rng.integers(len(schemas))]
        events = schema.instantiate(_fill_slots(schema, rng, split))
        pos = int(rng.integers(len(events)))
        cases.append(InfillCase(
            seed_events=tuple(e for j, e in enumerate(events) if j != pos),
            new_event=events[pos],
            gold_position=pos,
            schema_name=schema.name,
        ))
    return cases


_EXCLUDED_RELATIONS = {"IDENTITY", "DURING", "CAUSE_TO_END"}


class CycleError(ValueError):
    def __init__(self, cycle: list[int]):
        super().__init__(f"relation graph contains a cycle: {cycle}")
        self.cycle = cycle


def dag_to_sequences(events: list[Event],
                     relations: list[tuple[int, int, str]]) -> list[EventSequence]:
    """Treat every relation label except the excluded three as BEFORE, then
    enumerate all source-to-sink paths of length >= 2."""
    n = len(events)
    succ: list[list[int]] = [[] for _ in range(n)]
    has_pred = [False] * n
    for i, j, label in relations:
        if label in _EXCLUDED_RELATIONS:
            continue
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"relation ({i}, {j}) out of range")
        if j not in succ[i]:
            succ[i].append(j)
            has_pred[j] = True

    _check_acyclic(n, succ)

    paths: list[tuple[int, ...]] = []

    def walk(path):
        exts = succ[path[-1]]
        if not exts:
            if len(path) >= 2:
                paths.append(tuple(path))
            return
        for j in exts:
            walk(path + [j])

    for i in range(n):
        if not has_pred[i] and succ[i]:
            walk([i])
    paths.sort()
    return [
        EventSequence(tuple(events[i] for i in p), source_id=f"path-{k}")
        for k, p in enumerate(paths)
    ]


def _check_acyclic(n, succ):
    state = [0] * n  # 0 unvisited, 1 on stack, 2 done
    stack: list[int] = []

    def visit(u):
        state[u] = 1
        stack.append(u)
        for v in succ[u]:
            if state[v] == 1:
                raise CycleError(stack[stack.index(v):] + [v])
            if state[v] == 0:
                visit(v)
        stack.pop()
        state[u] = 2

    for u in range(n):
        if state[u] == 0:
            visit(u)


@dataclass(frozen=True)
class QuestionTemplate:
    relation: str  # before | after
    pattern: re.Pattern


def load_question_templates(path=None) -> list[QuestionTemplate]:
    if path is None:
        text = (files("temporder.data") / "mctaco_templates.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    templates = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        relation, pattern = line.split("\t", 1)
        if relation not in ("before", "after"):
            raise ValueError(f"bad relation in template file: {relation!r}")
        templates.append(QuestionTemplate(relation, re.compile(pattern, re.I)))
    return templates


@dataclass(frozen=True)
class QuestionParse:
    relation: str
    event_text: str


def parse_mctaco_question(question: str,
                          templates: list[QuestionTemplate]) -> Optional[QuestionParse]:
    """First matching template wins; None when no temporal template applies."""
    q = " ".join(question.split())
    for t in templates:
        m = t.pattern.match(q)
        if m:
            return QuestionParse(t.relation, m.group("event").strip())
    return None


def lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate_tokens: list[str], reference_tokens: list[str]) -> float:
    """LCS-based F1 (beta = 1), case-insensitive."""
    cand = [t.lower() for t in candidate_tokens]
    ref = [t.lower() for t in reference_tokens]
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


@dataclass(frozen=True)
class EventMatch:
    index: int
    score: float
    low_confidence: bool


def match_question_event(eq_text: str, candidates: list[Event]) -> EventMatch:
    """Highest ROUGE-L F1 against each candidate's surface form; ties go to
    the lowest index."""
    if not candidates:
        raise ValueError("need at least one candidate event")
    eq_tokens = eq_text.split()
    best_i, best_s = 0, -1.0
    for i, c in enumerate(candidates):
        s = rouge_l(eq_tokens, render_event(c).split())
        if s > best_s:
            best_i, best_s = i, s
    return EventMatch(best_i, best_s, low_confidence=best_s <= 0.0)


@dataclass(frozen=True)
class McTacoExample:
    context_events: tuple[Event, ...]
    question: str
    answer_event: Event
    q_index: int          # derived by template parse + ROUGE-L match
    relation: str         # derived: before | after
    gold_q_index: Optional[int] = None   # hand label, when the file has one
    gold_relation: Optional[str] = None

    @property
    def all_events(self) -> tuple[Event, ...]:
        return self.context_events + (self.answer_event,)


def load_mctaco_fixture(path=None,
                        templates: Optional[list[QuestionTemplate]] = None
                        ) -> list[McTacoExample]:
    """Read {"context_events":..., "question":..., "answer_event":...} JSONL,
    deriving the anchor event and relation from the question. Records whose
    question matches no template are skipped."""
    if templates is None:
        templates = load_question_templates()
    if path is None:
        text = (files("temporder.data") / "mctaco_fixture.jsonl").read_text("utf-8")
        lines = text.splitlines()
    else:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    out = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        ctx = tuple(Event.from_dict(e) for e in d["context_events"])
        parse = parse_mctaco_question(d["question"], templates)
        if parse is None:
            continue
        match = match_question_event(parse.event_text, list(ctx))
        out.append(McTacoExample(
            context_events=ctx,
            question=d["question"],
            answer_event=Event.from_dict(d["answer_event"]),
            q_index=match.index,
            relation=parse.relation,
            gold_q_index=d.get("gold_q_index"),
            gold_relation=d.get("gold_relation"),
        ))
    return out
