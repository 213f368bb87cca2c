"""Bidirectional mapping between triplets and the generative model's text.

The source side lists candidate relations ahead of the sentence; the target
side renders each triplet as three "label: value" clauses in a configurable
order and style. Parsing is total: arbitrary generated text yields a
(possibly empty) triplet list plus diagnostics, never an exception.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .data import RelationTriplet


class TripletOrder(enum.Enum):
    HTR = "htr"
    THR = "thr"
    RHT = "rht"

    @property
    def slots(self) -> tuple[str, str, str]:
        return tuple({"h": "head", "t": "tail", "r": "relation"}[c] for c in self.value)


class TargetStyle(enum.Enum):
    PLAIN = "plain"
    PROTOTYPE = "prototype"


CLAUSE_LABELS = {
    TargetStyle.PLAIN: {"head": "Head Entity", "tail": "Tail Entity", "relation": "Relation"},
    TargetStyle.PROTOTYPE: {"head": "[HEAD]", "tail": "[TAIL]", "relation": "[REL]"},
}

SOURCE_RELATION_PREFIX = "Relation:"
SOURCE_CONTEXT_PREFIX = "Context:"


@dataclass(frozen=True)
class LayoutSpan:
    """Character range [start, end) of one annotated slot value."""

    slot: str
    start: int
    end: int


@dataclass(frozen=True)
class SourceText:
    text: str
    layout: tuple[LayoutSpan, ...]

    def slice(self, span: LayoutSpan) -> str:
        return self.text[span.start:span.end]


@dataclass(frozen=True)
class TargetText:
    text: str
    layout: tuple[LayoutSpan, ...]

    def slice(self, span: LayoutSpan) -> str:
        return self.text[span.start:span.end]


@dataclass
class ParseResult:
    triplets: list[tuple[str, str, str]] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def source_chunks(task_labels: tuple[str, ...] | list[str], sample_tokens: tuple[str, ...] | list[str]) -> list[str]:
    """Whitespace chunks of the source text, in order.

    Exposed so that token-level alignment can retokenize the exact chunks
    ``build_source`` joins with single spaces.
    """
    chunks = [SOURCE_RELATION_PREFIX]
    for i, label in enumerate(task_labels):
        words = label.split(" ")
        words[-1] += "," if i < len(task_labels) - 1 else "."
        chunks.extend(words)
    chunks.append(SOURCE_CONTEXT_PREFIX)
    chunks.extend(sample_tokens)
    return chunks


def build_source(task, sample_tokens) -> SourceText:
    """Render "Relation: <labels>. Context: <sentence>" with label layout."""
    labels = tuple(task.labels) if hasattr(task, "labels") else tuple(task)
    tokens = tuple(sample_tokens)
    if not labels:
        raise ValueError("task prompt must contain at least one relation label")
    if not tokens:
        raise ValueError("sentence must contain at least one token")
    text = SOURCE_RELATION_PREFIX + " "
    layout = []
    for i, label in enumerate(labels):
        start = len(text)
        text += label
        layout.append(LayoutSpan("label", start, len(text)))
        text += ", " if i < len(labels) - 1 else ". "
    text += SOURCE_CONTEXT_PREFIX + " " + " ".join(tokens)
    return SourceText(text, tuple(layout))


def serialize_triplets(triplets, order: TripletOrder, style: TargetStyle) -> TargetText:
    """Render triplets as "."-terminated clause groups joined by one space."""
    triplets = list(triplets)
    if not triplets:
        raise ValueError("cannot serialize an empty triplet list")
    names = CLAUSE_LABELS[style]
    text = ""
    layout = []
    for k, triplet in enumerate(triplets):
        values = _slot_values(triplet)
        if k:
            text += " "
        for j, slot in enumerate(order.slots):
            text += f"{names[slot]}: "
            start = len(text)
            text += values[slot]
            layout.append(LayoutSpan(slot, start, len(text)))
            text += ", " if j < 2 else "."
    return TargetText(text, tuple(layout))


def _slot_values(triplet) -> dict[str, str]:
    if isinstance(triplet, RelationTriplet):
        return {"head": triplet.head.surface, "tail": triplet.tail.surface, "relation": triplet.relation}
    head, tail, relation = triplet
    return {"head": head, "tail": tail, "relation": relation}


def _find_clauses(text: str, labels: dict[str, str]) -> list[tuple[str, str]]:
    """Locate every clause label occurrence and the raw value that follows it."""
    marks = []
    for slot, name in labels.items():
        needle = name + ":"
        pos = text.find(needle)
        while pos != -1:
            marks.append((pos, pos + len(needle), slot))
            pos = text.find(needle, pos + 1)
    marks.sort()
    clauses = []
    for i, (_, end, slot) in enumerate(marks):
        nxt = marks[i + 1][0] if i + 1 < len(marks) else len(text)
        value = text[end:nxt].strip()
        if value and value[-1] in ",.":
            value = value[:-1]
        clauses.append((slot, value))
    return clauses


def parse_triplets(text: str, order: TripletOrder, style: TargetStyle) -> ParseResult:
    """Greedy left-to-right recovery of (head, tail, relation) surface triples.

    Clause groups start at each occurrence of the order's first slot label; a
    group whose first three clauses are not exactly the declared order, or
    whose values are empty, is dropped with a diagnostic. Exact duplicates
    are deduplicated with a diagnostic.
    """
    result = ParseResult()
    clauses = _find_clauses(text, CLAUSE_LABELS[style])
    if not clauses:
        if text.strip():
            result.diagnostics.append("no clause labels found")
        return result

    first = order.slots[0]
    groups: list[list[tuple[str, str]]] = []
    for clause in clauses:
        if clause[0] == first or not groups:
            groups.append([clause])
        else:
            groups[-1].append(clause)

    seen = set()
    for group in groups:
        got = tuple(slot for slot, _ in group[:3])
        if got != order.slots:
            result.diagnostics.append(f"dropped malformed clause group with slots {list(s for s, _ in group)}")
            continue
        values = {slot: value for slot, value in group[:3]}
        if any(not v for v in values.values()):
            result.diagnostics.append("dropped clause group with an empty value")
            continue
        if len(group) > 3:
            result.diagnostics.append(f"ignored {len(group) - 3} extra clause(s) after a complete group")
        triple = (values["head"], values["tail"], values["relation"])
        if triple in seen:
            result.diagnostics.append(f"dropped duplicate triplet {triple}")
            continue
        seen.add(triple)
        result.triplets.append(triple)
    return result
