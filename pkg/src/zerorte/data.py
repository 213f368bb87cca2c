"""Domain types, JSONL ingestion, zero-shot splits, and dataset statistics."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path


class DataFormatError(ValueError):
    """Raised when an input file violates the dataset schema."""


@dataclass(frozen=True)
class Span:
    """A contiguous token span with its surface string.

    ``token_indices`` are 0-based positions into the owning sentence,
    strictly increasing with step 1; ``surface`` is the space-join of the
    sentence tokens at those positions.
    """

    token_indices: tuple[int, ...]
    surface: str

    def __post_init__(self) -> None:
        if not self.token_indices:
            raise ValueError("span must cover at least one token")
        for a, b in zip(self.token_indices, self.token_indices[1:]):
            if b != a + 1:
                raise ValueError(f"span indices must be contiguous, got {self.token_indices}")

    @classmethod
    def from_tokens(cls, tokens: list[str] | tuple[str, ...], indices: list[int] | tuple[int, ...]) -> "Span":
        idx = tuple(int(i) for i in indices)
        if idx and (idx[0] < 0 or idx[-1] >= len(tokens)):
            raise ValueError(f"span indices {idx} out of range for {len(tokens)} tokens")
        return cls(idx, " ".join(tokens[i] for i in idx))

    def check_against(self, tokens: tuple[str, ...]) -> None:
        """Verify index bounds and that the surface matches the sentence."""
        if self.token_indices[-1] >= len(tokens):
            raise ValueError(f"span index {self.token_indices[-1]} out of range for {len(tokens)} tokens")
        joined = " ".join(tokens[i] for i in self.token_indices)
        if joined != self.surface:
            raise ValueError(f"span surface {self.surface!r} does not match tokens {joined!r}")


@dataclass(frozen=True)
class RelationTriplet:
    head: Span
    tail: Span
    relation: str

    def __post_init__(self) -> None:
        if not self.relation:
            raise ValueError("relation label must be non-empty")

    def surfaces(self) -> tuple[str, str, str]:
        return (self.head.surface, self.tail.surface, self.relation)


@dataclass(frozen=True)
class AnnotatedSample:
    id: str
    tokens: tuple[str, ...]
    triplets: tuple[RelationTriplet, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError(f"sample {self.id}: empty token list")
        for t in self.triplets:
            t.head.check_against(self.tokens)
            t.tail.check_against(self.tokens)

    def relations(self) -> set[str]:
        return {t.relation for t in self.triplets}


@dataclass(frozen=True)
class Dataset:
    samples: tuple[AnnotatedSample, ...]
    relation_set: frozenset[str]

    def __post_init__(self) -> None:
        seen = frozenset(r for s in self.samples for r in s.relations())
        if seen != self.relation_set:
            raise ValueError("relation_set does not equal the union of sample relations")

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = tuple(samples)
        return cls(samples, frozenset(r for s in samples for r in s.relations()))

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class ZeroShotSplit:
    """Train/validation/test partitions with disjoint seen/unseen label sets."""

    train: Dataset
    validation_labels: frozenset[str]
    validation: Dataset
    unseen_labels: frozenset[str]
    test: Dataset
    seed: int

    def __post_init__(self) -> None:
        if self.seen_labels & self.unseen_labels:
            raise ValueError("seen and unseen relation sets overlap")
        ids = [s.id for part in (self.train, self.validation, self.test) for s in part.samples]
        if len(ids) != len(set(ids)):
            raise ValueError("a sample id appears in more than one partition")

    @property
    def seen_labels(self) -> frozenset[str]:
        return self.train.relation_set | self.validation_labels

    @property
    def m(self) -> int:
        return len(self.unseen_labels)


@dataclass(frozen=True)
class DatasetStats:
    sample_count: int
    relation_count: int
    entity_count: int
    mean_sentence_length: float


def _parse_span(raw, tokens: list[str], line_no: int, fld: str) -> Span:
    if not isinstance(raw, list) or not raw or not all(isinstance(i, int) for i in raw):
        raise DataFormatError(f"line {line_no}: field {fld!r} must be a non-empty list of ints")
    if raw[0] < 0 or raw[-1] >= len(tokens):
        raise DataFormatError(f"line {line_no}: field {fld!r} index out of range for {len(tokens)} tokens")
    try:
        return Span.from_tokens(tokens, raw)
    except ValueError as exc:
        raise DataFormatError(f"line {line_no}: field {fld!r}: {exc}") from exc


def _parse_record(raw: dict, line_no: int) -> AnnotatedSample:
    for fld in ("id", "tokens", "triplets"):
        if fld not in raw:
            raise DataFormatError(f"line {line_no}: missing field {fld!r}")
    tokens = raw["tokens"]
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise DataFormatError(f"line {line_no}: field 'tokens' must be a non-empty list of strings")
    triplets = []
    for k, t in enumerate(raw["triplets"]):
        where = f"triplets[{k}]"
        if not isinstance(t, dict):
            raise DataFormatError(f"line {line_no}: field {where!r} must be an object")
        for fld in ("head", "tail", "relation"):
            if fld not in t:
                raise DataFormatError(f"line {line_no}: field {where}.{fld!r} missing")
        if not isinstance(t["relation"], str) or not t["relation"]:
            raise DataFormatError(f"line {line_no}: field {where}.relation must be a non-empty string")
        triplets.append(
            RelationTriplet(
                head=_parse_span(t["head"], tokens, line_no, f"{where}.head"),
                tail=_parse_span(t["tail"], tokens, line_no, f"{where}.tail"),
                relation=t["relation"],
            )
        )
    return AnnotatedSample(id=str(raw["id"]), tokens=tuple(tokens), triplets=tuple(triplets))


def load_dataset(path: str | Path, format_id: str = "jsonl") -> Dataset:
    """Load a JSONL dataset; malformed lines raise with line numbers."""
    if format_id != "jsonl":
        raise ValueError(f"unsupported dataset format {format_id!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    samples = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            samples.append(_parse_record(raw, line_no))
    return Dataset.from_samples(samples)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset in the JSONL schema accepted by :func:`load_dataset`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in dataset.samples:
            record = {
                "id": s.id,
                "tokens": list(s.tokens),
                "triplets": [
                    {"head": list(t.head.token_indices), "tail": list(t.tail.token_indices), "relation": t.relation}
                    for t in s.triplets
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


N_VALIDATION_LABELS = 5


def _restrict(sample: AnnotatedSample, labels: frozenset[str]) -> AnnotatedSample:
    kept = tuple(t for t in sample.triplets if t.relation in labels)
    return AnnotatedSample(id=sample.id, tokens=sample.tokens, triplets=kept)


def make_zero_shot_split(dataset: Dataset, m: int, seed: int) -> ZeroShotSplit:
    """Draw ``m`` unseen labels plus 5 validation labels and route samples.

    Label-first: labels are drawn with the seeded generator, then each sample
    is routed to the partition of its labels. A sample touching any unseen
    label goes to test with seen-relation triplets dropped; among the rest, a
    sample touching a validation label is held out for validation.
    """
    if m < 1:
        raise ValueError("m must be positive")
    labels = sorted(dataset.relation_set)
    if len(labels) < m + N_VALIDATION_LABELS + 1:
        raise ValueError(
            f"need at least {m + N_VALIDATION_LABELS + 1} relation labels for m={m} "
            f"({m} unseen + {N_VALIDATION_LABELS} validation + 1 train), got {len(labels)}"
        )
    rng = random.Random(seed)
    unseen = frozenset(rng.sample(labels, m))
    remaining = [l for l in labels if l not in unseen]
    validation_labels = frozenset(rng.sample(remaining, N_VALIDATION_LABELS))

    train, val, test = [], [], []
    for s in dataset.samples:
        rels = s.relations()
        if rels & unseen:
            test.append(_restrict(s, unseen))
        elif rels & validation_labels:
            val.append(_restrict(s, validation_labels))
        else:
            train.append(s)
    return ZeroShotSplit(
        train=Dataset.from_samples(train),
        validation_labels=validation_labels,
        validation=Dataset.from_samples(val),
        unseen_labels=unseen,
        test=Dataset.from_samples(test),
        seed=seed,
    )


def dataset_stats(dataset: Dataset) -> DatasetStats:
    surfaces = {t.head.surface for s in dataset.samples for t in s.triplets}
    surfaces |= {t.tail.surface for s in dataset.samples for t in s.triplets}
    n = len(dataset.samples)
    mean_len = sum(len(s.tokens) for s in dataset.samples) / n if n else 0.0
    return DatasetStats(
        sample_count=n,
        relation_count=len(dataset.relation_set),
        entity_count=len(surfaces),
        mean_sentence_length=mean_len,
    )


def save_split(split: ZeroShotSplit, out_dir: str | Path) -> None:
    """Persist manifest + three JSONL partition files under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "seed": split.seed,
        "m": split.m,
        "unseen_labels": sorted(split.unseen_labels),
        "validation_labels": sorted(split.validation_labels),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    save_dataset(split.train, out / "train.jsonl")
    save_dataset(split.validation, out / "validation.jsonl")
    save_dataset(split.test, out / "test.jsonl")


def load_split(split_dir: str | Path) -> ZeroShotSplit:
    d = Path(split_dir)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    return ZeroShotSplit(
        train=load_dataset(d / "train.jsonl"),
        validation_labels=frozenset(manifest["validation_labels"]),
        validation=load_dataset(d / "validation.jsonl"),
        unseen_labels=frozenset(manifest["unseen_labels"]),
        test=load_dataset(d / "test.jsonl"),
        seed=int(manifest["seed"]),
    )
