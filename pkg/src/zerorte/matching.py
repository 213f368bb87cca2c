"""Prototype matching head and the metric-augmented training variant.

During training the decoder states at the [HEAD]/[TAIL]/[REL] positions act
as per-triplet prototypes; a small pairwise classifier is trained to tell
which source tokens each prototype matches. The head only shapes the shared
representations: it is dropped at inference and generation alone produces
triplets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .codec import TripletOrder, TargetStyle
from .data import ZeroShotSplit
from .model import Seq2SeqModel
from .sampling import SamplerConfig, TrainingInstance
from .training import Batch, TrainConfig, TrainLog, batch_nll, run_training
from .vocab import SourceAlignment, Vocabulary, align_source

logger = logging.getLogger(__name__)


class MatchHead(nn.Module):
    """Pairwise (source token, prototype) match classifier.

    Both sides are projected into a shared ``d_match`` space; a single linear
    layer scores the concatenated pair. ``alpha`` weighs the matching loss
    against the generation loss.
    """

    def __init__(self, d_model: int, d_match: int = 64, alpha: float = 0.5):
        super().__init__()
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.token_proj = nn.Linear(d_model, d_match)
        self.proto_proj = nn.Linear(d_model, d_match)
        self.classifier = nn.Linear(2 * d_match, 1)
        self.alpha = alpha

    def pair_logits(self, token_states: torch.Tensor, proto_states: torch.Tensor) -> torch.Tensor:
        """token_states: (S, d); proto_states: (P, d) -> logits (P, S)."""
        tok = self.token_proj(token_states)
        pro = self.proto_proj(proto_states)
        p, s = pro.shape[0], tok.shape[0]
        pairs = torch.cat([tok.unsqueeze(0).expand(p, -1, -1), pro.unsqueeze(1).expand(-1, s, -1)], dim=-1)
        return self.classifier(pairs).squeeze(-1)


@dataclass
class PrototypeSet:
    """Decoder states at one triplet's prototype token positions."""

    head_proto: torch.Tensor
    tail_proto: torch.Tensor
    rel_proto: torch.Tensor

    def stacked(self) -> torch.Tensor:
        return torch.stack([self.head_proto, self.tail_proto, self.rel_proto])


@dataclass
class MatchLabels:
    """Binary (prototype row, source token) targets, rows grouped
    [head, tail, rel] per gold triplet."""

    labels: torch.Tensor  # (3 * n_triplets, n_source_tokens)


def prototype_positions(target_ids: list[int] | tuple[int, ...], vocab: Vocabulary) -> list[tuple[int, int, int]]:
    """Decoder-state indices of each triplet's [HEAD]/[TAIL]/[REL] tokens.

    ``target_ids`` is the gold sequence the decoder predicts (eos included);
    state t consumed target token t-1, so the state carrying prototype token
    y[i] sits at index i + 1. The i-th occurrence of each special token
    belongs to the i-th serialized triplet, whatever the clause order.
    """
    heads, tails, rels = [], [], []
    for i, tok in enumerate(target_ids):
        if tok == vocab.head_id:
            heads.append(i + 1)
        elif tok == vocab.tail_id:
            tails.append(i + 1)
        elif tok == vocab.rel_id:
            rels.append(i + 1)
    if not len(heads) == len(tails) == len(rels):
        raise ValueError(
            f"unbalanced prototype tokens in target: {len(heads)} [HEAD], {len(tails)} [TAIL], {len(rels)} [REL]"
        )
    return list(zip(heads, tails, rels))


def extract_prototypes(dec_states: torch.Tensor, target_ids, vocab: Vocabulary) -> list[PrototypeSet]:
    """dec_states: (T, d) teacher-forcing states for one instance."""
    return [
        PrototypeSet(dec_states[h], dec_states[t], dec_states[r])
        for h, t, r in prototype_positions(target_ids, vocab)
    ]


def matching_labels(instance: TrainingInstance, alignment: SourceAlignment) -> MatchLabels:
    """Ground-truth match targets for one instance.

    Head/tail prototype rows mark the gold span tokens inside the context
    region; the relation prototype row marks the gold relation's name tokens
    inside the prompt region. Everything else is 0.
    """
    n = alignment.length
    rows = []
    label_index = {label: i for i, label in enumerate(instance.task.labels)}
    for triplet in instance.sample.triplets:
        head_row = torch.zeros(n)
        tail_row = torch.zeros(n)
        rel_row = torch.zeros(n)
        for idx in triplet.head.token_indices:
            lo, hi = alignment.context_ranges[idx]
            head_row[lo:hi] = 1.0
        for idx in triplet.tail.token_indices:
            lo, hi = alignment.context_ranges[idx]
            tail_row[lo:hi] = 1.0
        if triplet.relation in label_index:
            lo, hi = alignment.label_ranges[label_index[triplet.relation]]
            rel_row[lo:hi] = 1.0
        else:
            logger.warning(
                "gold relation %r absent from task prompt of sample %s; relation match row left empty",
                triplet.relation, instance.sample.id,
            )
        rows.extend([head_row, tail_row, rel_row])
    return MatchLabels(labels=torch.stack(rows))


def matching_loss(
    encoder_out: torch.Tensor,
    protos: list[PrototypeSet],
    labels: MatchLabels,
    head: MatchHead,
) -> torch.Tensor:
    """Mean binary cross-entropy over all (prototype, source token) pairs."""
    if not protos:
        raise ValueError("no prototypes to match")
    proto_states = torch.cat([p.stacked() for p in protos])
    target = labels.labels.to(encoder_out.dtype)
    if proto_states.shape[0] != target.shape[0] or encoder_out.shape[0] != target.shape[1]:
        raise ValueError(
            f"shape mismatch: {tuple(proto_states.shape)} prototypes vs {tuple(target.shape)} labels "
            f"vs {tuple(encoder_out.shape)} encoder states"
        )
    logits = head.pair_logits(encoder_out, proto_states)
    return F.binary_cross_entropy_with_logits(logits, target)


def combined_loss(gen_loss: torch.Tensor, match_loss: torch.Tensor, alpha: float) -> torch.Tensor:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return gen_loss + alpha * match_loss


def metric_batch_loss(model: Seq2SeqModel, head: MatchHead, batch: Batch) -> torch.Tensor:
    """Generation NLL plus alpha-weighted mean per-instance matching loss.

    With alpha == 0 the matching branch is skipped entirely, so the update
    trace degenerates to the plain trainer's exactly.
    """
    gen_loss, enc, dec = batch_nll(model, batch)
    if head.alpha == 0:
        return gen_loss
    vocab = model.vocab
    losses = []
    for i, inst in enumerate(batch.instances):
        alignment = align_source(inst.task.labels, inst.sample.tokens, vocab)
        target_len = int(batch.tgt_mask[i].sum().item())
        target_ids = batch.gold[i, :target_len].tolist()
        protos = extract_prototypes(dec[i], target_ids, vocab)
        labels = matching_labels(inst, alignment)
        losses.append(matching_loss(enc[i, : alignment.length], protos, labels, head))
    match = torch.stack(losses).mean()
    return combined_loss(gen_loss, match, head.alpha)


def train_tgm_metric(
    split: ZeroShotSplit,
    sampler_cfg: SamplerConfig,
    model: Seq2SeqModel,
    match_head: MatchHead,
    cfg: TrainConfig,
    order: TripletOrder = TripletOrder.HTR,
) -> tuple[Seq2SeqModel, MatchHead, TrainLog]:
    """Joint training with prototype-style targets and the matching objective."""
    log = run_training(
        model, split, sampler_cfg, cfg, order, TargetStyle.PROTOTYPE,
        loss_hook=lambda batch: metric_batch_loss(model, match_head, batch),
        heads={"match_head": match_head},
    )
    return model, match_head, log
