"""Prediction over unseen relations and strict micro triplet scoring."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .codec import TripletOrder, TargetStyle, build_source, parse_triplets
from .data import Dataset
from .model import Seq2SeqModel
from .sampling import TaskPrompt

Triple = tuple[str, str, str]


@dataclass
class PredictionRecord:
    sample_id: str
    triplets: list[Triple]
    generated: str
    diagnostics: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RelationCounts:
    gold: int = 0
    predicted: int = 0
    correct: int = 0


@dataclass(frozen=True)
class ScoreReport:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_pred: int
    n_correct: int
    per_relation: dict[str, RelationCounts]


def test_task_prompt(unseen_labels, prompt_seed: int) -> TaskPrompt:
    """The full unseen-label candidate set in a fixed seeded shuffle."""
    labels = sorted(unseen_labels)
    random.Random(prompt_seed).shuffle(labels)
    return TaskPrompt(tuple(labels))


def predict_dataset(
    model: Seq2SeqModel,
    dataset: Dataset,
    unseen_labels,
    order: TripletOrder,
    style: TargetStyle,
    *,
    batch_size: int = 64,
    prompt_seed: int = 0,
    max_len: int | None = None,
    extra_memory: torch.Tensor | None = None,
) -> list[PredictionRecord]:
    """One greedy generation per sample, prompted with every unseen label.

    Gold triplets are never consulted; the triplet count per sample is
    whatever the parser recovers from the generated text.
    """
    task = test_task_prompt(unseen_labels, prompt_seed)
    vocab = model.vocab
    sources = [vocab.tokenize(build_source(task, s.tokens).text) for s in dataset.samples]
    model.eval()
    records: list[PredictionRecord] = []
    for lo in range(0, len(sources), batch_size):
        chunk = sources[lo : lo + batch_size]
        generated = model.generate_batch(chunk, extra_memory=extra_memory, max_len=max_len)
        for offset, ids in enumerate(generated):
            sample = dataset.samples[lo + offset]
            text = vocab.detokenize(ids)
            parsed = parse_triplets(text, order, style)
            records.append(
                PredictionRecord(
                    sample_id=sample.id,
                    triplets=parsed.triplets,
                    generated=text,
                    diagnostics=parsed.diagnostics,
                )
            )
    return records


def _normalize(triple: Triple, normalization: str) -> Triple:
    if normalization == "exact":
        return triple
    if normalization == "casefold_strip":
        return tuple(part.strip().casefold() for part in triple)  # type: ignore[return-value]
    raise ValueError(f"unknown normalization {normalization!r}")


def score(preds: list[PredictionRecord], golds: Dataset, normalization: str = "casefold_strip") -> ScoreReport:
    """Micro P/R/F1 under exact triple matching (after normalization).

    Matching is multiset-aware per sample: each gold triplet is creditable
    at most once, duplicated gold triplets with multiplicity.
    """
    gold_by_id = {s.id: s for s in golds.samples}
    pred_ids = [p.sample_id for p in preds]
    if len(pred_ids) != len(set(pred_ids)):
        raise ValueError("duplicate sample ids in predictions")
    if set(pred_ids) != set(gold_by_id):
        raise ValueError("prediction ids do not align with gold sample ids")

    n_gold = n_pred = n_correct = 0
    rel_gold: Counter = Counter()
    rel_pred: Counter = Counter()
    rel_correct: Counter = Counter()
    for pred in preds:
        gold_triples = [_normalize(t.surfaces(), normalization) for t in gold_by_id[pred.sample_id].triplets]
        pred_triples = [_normalize(t, normalization) for t in pred.triplets]
        gold_counter = Counter(gold_triples)
        pred_counter = Counter(pred_triples)
        n_gold += len(gold_triples)
        n_pred += len(pred_triples)
        rel_gold.update(t[2] for t in gold_triples)
        rel_pred.update(t[2] for t in pred_triples)
        matched = gold_counter & pred_counter
        n_correct += sum(matched.values())
        rel_correct.update({t[2]: c for t, c in matched.items()})

    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    per_relation = {
        rel: RelationCounts(gold=rel_gold[rel], predicted=rel_pred[rel], correct=rel_correct[rel])
        for rel in sorted(set(rel_gold) | set(rel_pred))
    }
    return ScoreReport(
        precision=precision, recall=recall, f1=f1,
        n_gold=n_gold, n_pred=n_pred, n_correct=n_correct,
        per_relation=per_relation,
    )


def frequency_span_baseline(dataset: Dataset, seed: int = 0) -> list[PredictionRecord]:
    """Trivial reference predictor: modal gold relation + one random span pair.

    Uses the gold relation frequencies of the scored dataset itself, which
    makes it an upper bound on any frequency-guessing strategy without span
    knowledge.
    """
    counts = Counter(t.relation for s in dataset.samples for t in s.triplets)
    modal = counts.most_common(1)[0][0] if counts else ""
    rng = random.Random(seed)
    records = []
    for s in dataset.samples:
        spans = []
        for _ in range(2):
            width = rng.randint(1, min(2, len(s.tokens)))
            start = rng.randrange(0, len(s.tokens) - width + 1)
            spans.append(" ".join(s.tokens[start : start + width]))
        records.append(
            PredictionRecord(sample_id=s.id, triplets=[(spans[0], spans[1], modal)], generated="", diagnostics=[])
        )
    return records


def save_predictions(records: list[PredictionRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {"id": rec.sample_id, "generated": rec.generated,
                     "triplets": [list(t) for t in rec.triplets], "diagnostics": rec.diagnostics},
                    ensure_ascii=False,
                )
                + "\n"
            )


def write_report_csv(path: str | Path, rows: list[tuple[str, float, float, float]]) -> None:
    """Rows of (setting, precision, recall, f1) with fixed float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["setting,precision,recall,f1"]
    lines += [f"{setting},{p:.6f},{r:.6f},{f1:.6f}" for setting, p, r, f1 in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
